//! Read RAPL counters as perf counting events.
//!
//! Lists the events from a sysfs-style directory (`energy-pkg` with its
//! `.scale` and `.unit` companions), opens each once per socket, and reads
//! the kernel-accumulated counters. The opener is a simulated one, so
//! this runs without `CAP_PERFMON`; on a real host the same backend uses
//! `perf_event_open`.
//!
//! ```text
//! cargo run --example perf_events
//! ```

use std::sync::Arc;

use raplmeter::backend::perf::{discover_perf_events, PerfBackend};
use raplmeter::backend::Backend;
use raplmeter::clock::{Clock, VirtualClock};
use raplmeter::domain::{DomainKind, Topology, Vendor};
use raplmeter::sim::fixtures::{write_perf_events_dir, SimPerfOpener};
use raplmeter::sim::PowerProfile;

fn main() -> raplmeter::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let clock = VirtualClock::new();
    let topology = Topology::synthetic(Vendor::Intel, 2, 2);
    let profile = Arc::new(PowerProfile::constant(90.0)?);

    write_perf_events_dir(
        dir.path(),
        &[DomainKind::Package, DomainKind::Dram, DomainKind::Psys],
        (2.0f64).powi(-32),
    )?;

    let discovery = discover_perf_events(dir.path())?;
    println!("events in {}:", dir.path().display());
    for spec in &discovery.specs {
        println!(
            "  {:<12} config={:#04x} scale={:e} J unit={}",
            spec.event_name, spec.config_code, spec.scale_joules, spec.unit_label
        );
    }

    let opener = SimPerfOpener::new(profile, Arc::new(clock.clone()), topology.clone());
    let mut backend = PerfBackend::new(topology);
    backend.open_all(&discovery.specs, &opener)?;
    println!(
        "\nopened {} counters (one per socket for socket-scoped events, one for psys)",
        backend.open_count()
    );

    clock.advance_to(2_000_000_000); // 2 s in
    let mut readings = Vec::new();
    backend.poll(clock.now_ns(), &mut readings)?;
    for reading in readings {
        let meta = &backend.counters()[reading.counter];
        let raw = reading.value?;
        println!(
            "  {:<10} raw {:>14}  = {:.3} J accumulated",
            meta.domain.to_string(),
            raw,
            raw as f64 * meta.unit_joules_per_lsb
        );
    }
    Ok(())
}
