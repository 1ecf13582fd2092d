//! Poll a synthetic power profile at 100 Hz and write the samples to CSV.
//!
//! The run is driven by a virtual clock, so it completes instantly and
//! produces exactly the same file every time:
//!
//! ```text
//! cargo run --example measure_simulated
//! ```

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use raplmeter::clock::VirtualClock;
use raplmeter::domain::{DomainId, DomainKind};
use raplmeter::polling::{achieved_rate, measure_to_csv};
use raplmeter::sim::{PowerProfile, PowerShape, SimBackend};

fn main() -> raplmeter::Result<()> {
    let clock = VirtualClock::new();
    let profile = Arc::new(PowerProfile::new(PowerShape::Square {
        period_s: 0.5,
        low_w: 20.0,
        high_w: 80.0,
    })?);

    let domains = [
        DomainId::socketed(DomainKind::Package, 0),
        DomainId::socketed(DomainKind::Dram, 0),
    ];
    let mut backend = SimBackend::new(
        profile.clone(),
        Arc::new(clock.clone()),
        &domains,
        1e-6,
        u64::MAX,
    );

    let out = std::env::temp_dir().join("raplmeter-simulated.csv");
    // under a virtual clock the whole run is produced instantly, so the
    // flush interval is raised to size the loop-to-writer queue for it
    let outcome = measure_to_csv(
        &mut backend,
        100.0,     // Hz
        Some(500), // 5 seconds of deadlines
        Arc::new(clock.clone()),
        &out,
        10.0,
        &AtomicBool::new(false),
    )?;

    println!(
        "wrote {} rows to {}",
        outcome.writer.rows_written,
        out.display()
    );
    println!(
        "{} ticks, {} missed, {} dropped",
        outcome.run.ticks, outcome.run.missed_ticks, outcome.run.samples_dropped
    );

    // ground truth comparison for the package domain
    let pkg = DomainId::socketed(DomainKind::Package, 0);
    let truth = profile.ground_truth_energy(pkg, 0.01, 5.0)?;
    println!("package ground truth over the sampled window: {truth:.3} J");

    let text = std::fs::read_to_string(&out)?;
    let timestamps: Vec<u64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse::<u64>().unwrap() * 1_000_000)
        .collect();
    let (mean, std) = achieved_rate(&timestamps, true)?;
    println!("sample rate across the two domains: {mean:.1}/s (std {std:.2})");
    Ok(())
}
