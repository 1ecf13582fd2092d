//! Microbenchmark the cost of one counter read.
//!
//! Two runs: a deterministic one on a virtual clock where every read costs
//! exactly 1 us (the confidence interval collapses onto it), and a real
//! one timing a powercap-style file read through the OS.
//!
//! ```text
//! cargo run --release --example read_latency
//! ```

use std::sync::Arc;

use raplmeter::backend::powercap::{discover_powercap, read_powercap};
use raplmeter::clock::{SystemClock, VirtualClock};
use raplmeter::domain::{DomainKind, Topology, Vendor};
use raplmeter::sim::fixtures::PowercapFixture;
use raplmeter::sim::PowerProfile;
use raplmeter::stats::latency_microbench;

fn main() -> raplmeter::Result<()> {
    // deterministic: a virtual read that always takes 1 us
    let vclock = VirtualClock::new();
    let ticker = vclock.clone();
    let mut virtual_read = move || {
        ticker.advance_by(1000);
        Ok(42u64)
    };
    let report = latency_microbench(&mut virtual_read, 100, 10_000, &vclock)?;
    println!(
        "virtual 1 us read: [{:.4}, {:.4}] us (95% CI, {} batches)",
        report.ci_low_us, report.ci_high_us, report.batch_count
    );

    // real: time reads of a powercap fixture file through the filesystem
    let dir = tempfile::tempdir().expect("tempdir");
    let topology = Topology::synthetic(Vendor::Intel, 1, 1);
    let fixture = PowercapFixture::create(
        dir.path(),
        Arc::new(PowerProfile::constant(50.0)?),
        &topology,
        &[DomainKind::Package],
        262_143_328_850,
    )?;
    fixture.refresh_at(1_000_000_000)?;

    let node = discover_powercap(dir.path(), &topology)?
        .nodes
        .into_iter()
        .next()
        .expect("one node");
    let clock = SystemClock::new();
    let mut file_read = move || read_powercap(&node);
    let report = latency_microbench(&mut file_read, 1000, 20_000, &clock)?;
    println!(
        "file-backed read:  [{:.4}, {:.4}] us (95% CI, {} batches of {})",
        report.ci_low_us, report.ci_high_us, report.batch_count, report.iters_per_batch
    );
    Ok(())
}
