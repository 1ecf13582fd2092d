//! The full overhead-analysis pipeline on synthetic benchmark results.
//!
//! Builds the factor matrix (workloads x mechanisms x frequencies),
//! schedules time-spread repetitions, then runs the analysis: IQR outlier
//! filtering, one-sided Wilcoxon rank-sum against the no-measurement
//! baseline, Holm-Bonferroni correction, Hodges-Lehmann shift.
//!
//! ```text
//! cargo run --example benchmark_stats
//! ```

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use raplmeter::domain::MechanismKind;
use raplmeter::stats::{
    analyze_runs, combination_matrix, emit_report, schedule_repetitions, ReportFormat, RunRecord,
};

fn main() -> raplmeter::Result<()> {
    let combinations = combination_matrix(
        &["ep.E", "cg.D"],
        &[MechanismKind::Msr, MechanismKind::PerfUser],
        &[0.0, 10.0, 1000.0],
        &["pkg"],
    );
    println!("{} combinations in the matrix", combinations.len());

    let order = schedule_repetitions(&combinations, 3, 4)?;
    println!(
        "campaign of {} runs, repetitions spread over {} passes\n",
        order.len(),
        4
    );

    // synthesize run results: msr at 1000 Hz slows ep.E down by ~2 s, one
    // pathological outlier included to show the IQR fence at work
    let mut rng = StdRng::seed_from_u64(42);
    let mut records = Vec::new();
    for (i, combo) in order.iter().enumerate() {
        let base = if combo.workload == "ep.E" {
            260.0
        } else {
            410.0
        };
        let noise: f64 = rng.gen_range(-1.5..1.5);
        let overhead = if combo.workload == "ep.E"
            && combo.mechanism == MechanismKind::Msr
            && combo.frequency_hz == 1000.0
        {
            2.0
        } else {
            0.0
        };
        let outlier = if i == 17 { 200.0 } else { 0.0 };
        records.push(RunRecord {
            workload: combo.workload.clone(),
            mechanism: if combo.frequency_hz == 0.0 {
                "none".to_string()
            } else {
                combo.mechanism.as_str().to_string()
            },
            frequency_hz: combo.frequency_hz,
            domain_set: combo.domain_set.clone(),
            run_id: format!("run{i}"),
            value: base + noise + overhead + outlier,
        });
    }

    let outcome = analyze_runs(&records)?;
    for note in &outcome.metadata {
        println!("note: {note}");
    }
    println!();
    print!("{}", emit_report(&outcome.rows, ReportFormat::Table));
    Ok(())
}
