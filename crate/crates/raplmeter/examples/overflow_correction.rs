//! Why polling frequency matters: a counter with a small range wraps
//! quickly, and only a fast poller can reconstruct the true energy.
//!
//! The simulated host drives a powercap tree whose counter range is just
//! 1 J: at 50 W it wraps every 20 ms. Polling at 1000 Hz catches every
//! wrap; polling at 10 Hz silently loses most of the energy. Real RAPL
//! counters wrap in about a minute under load, so this failure mode hides
//! easily on an idle test machine.
//!
//! ```text
//! cargo run --example overflow_correction
//! ```

use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use raplmeter::backend::powercap::{discover_powercap, PowercapBackend};
use raplmeter::clock::VirtualClock;
use raplmeter::correction::EnergySample;
use raplmeter::domain::{DomainId, DomainKind, Topology, Vendor};
use raplmeter::polling::{run_polling, SampleSink};
use raplmeter::sim::fixtures::PowercapFixture;
use raplmeter::sim::PowerProfile;

struct Collect(Mutex<Vec<EnergySample>>);

impl SampleSink for Collect {
    fn offer(&self, sample: EnergySample) -> bool {
        self.0.lock().unwrap().push(sample);
        true
    }
}

fn reconstruct(frequency_hz: f64, ticks: u64) -> raplmeter::Result<(f64, u64)> {
    let dir = tempfile::tempdir().expect("tempdir");
    let clock = VirtualClock::new();
    let topology = Topology::synthetic(Vendor::Intel, 1, 1);
    let profile = Arc::new(PowerProfile::constant(50.0)?);

    let fixture = Arc::new(PowercapFixture::create(
        dir.path(),
        profile,
        &topology,
        &[DomainKind::Package],
        1_000_000, // 1 J range
    )?);
    fixture.attach(&clock);

    let discovery = discover_powercap(dir.path(), &topology)?;
    let mut backend = PowercapBackend::new(discovery.nodes);
    let sink = Collect(Mutex::new(Vec::new()));
    let summary = run_polling(
        &mut backend,
        frequency_hz,
        Some(ticks),
        &clock,
        &sink,
        &AtomicBool::new(false),
    )?;
    let joules: f64 = sink.0.lock().unwrap().iter().map(|s| s.joules).sum();
    Ok((joules, summary.overflows))
}

fn main() -> raplmeter::Result<()> {
    let truth = 500.0; // 50 W for 10 s
    let pkg = DomainId::socketed(DomainKind::Package, 0);
    println!("profile: constant 50 W, counter range 1 J (wraps every 20 ms)");
    println!("domain under test: {pkg}, ground truth over 10 s: {truth} J\n");

    let (fast, wraps) = reconstruct(1000.0, 10_000)?;
    println!("polled at 1000 Hz: {fast:.3} J reconstructed, {wraps} wraps corrected");

    let (slow, wraps) = reconstruct(10.0, 100)?;
    println!("polled at   10 Hz: {slow:.3} J reconstructed, {wraps} wraps corrected");
    println!(
        "\nthe slow poller lost {:.0}% of the energy without any error being raised",
        100.0 * (1.0 - slow / truth)
    );
    Ok(())
}
