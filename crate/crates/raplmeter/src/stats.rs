//! Benchmark scheduling and the statistical analysis pipeline.
//!
//! The overhead of a measurement mechanism is small relative to run-to-run
//! noise, so the analysis is deliberately conservative: spread repetitions
//! over time so transient disturbances cannot poison one combination,
//! discard extreme outliers with a wide interquartile fence, test with a
//! one-sided Wilcoxon rank-sum (the data does not meet ANOVA's
//! assumptions), correct the p-values with Holm-Bonferroni, and report the
//! effect size as the Hodges-Lehmann location shift.
//!
//! Conventions that the literature leaves open are pinned here so results
//! are reproducible: quartiles use type-7 linear interpolation, the exact
//! Wilcoxon path runs for tie-free samples of combined size <= 16 and the
//! normal approximation (average ranks, tie-corrected variance, continuity
//! correction) otherwise, and the significance level defaults to 5%.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::clock::Clock;
use crate::domain::MechanismKind;
use crate::error::{Error, Result};

/// Default significance level for the hypothesis tests.
pub const ALPHA: f64 = 0.05;

/// Combined sample size up to which the exact Wilcoxon distribution is
/// enumerated.
pub const WILCOXON_EXACT_MAX_N: usize = 16;

/// Bootstrap resamples behind the latency confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// One benchmark configuration: what ran, how it was measured, how fast.
#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub workload: String,
    pub mechanism: MechanismKind,
    /// 0 means "no measurement", the baseline arm.
    pub frequency_hz: f64,
    pub domain_set: String,
}

/// Builds the full factor product. Four workloads, four mechanisms and six
/// frequencies make 96 combinations per domain set.
pub fn combination_matrix(
    workloads: &[&str],
    mechanisms: &[MechanismKind],
    frequencies: &[f64],
    domain_sets: &[&str],
) -> Vec<Combination> {
    let mut out = Vec::new();
    for &domain_set in domain_sets {
        for &workload in workloads {
            for &mechanism in mechanisms {
                for &frequency_hz in frequencies {
                    out.push(Combination {
                        workload: workload.to_string(),
                        mechanism,
                        frequency_hz,
                        domain_set: domain_set.to_string(),
                    });
                }
            }
        }
    }
    out
}

/// Orders runs as round-robin blocks: `reps_per_pass` runs of the first
/// combination, then of the next, and over again for `passes` passes, so
/// repetitions of each combination are spread over the whole campaign
/// instead of clustered where a transient disturbance could hit them all.
pub fn schedule_repetitions(
    combinations: &[Combination],
    reps_per_pass: usize,
    passes: usize,
) -> Result<Vec<Combination>> {
    if combinations.is_empty() {
        return Err(Error::usage("no combinations to schedule"));
    }
    if reps_per_pass < 1 {
        return Err(Error::usage("reps_per_pass must be at least 1"));
    }
    let mut out = Vec::with_capacity(combinations.len() * reps_per_pass * passes);
    for _ in 0..passes {
        for combo in combinations {
            for _ in 0..reps_per_pass {
                out.push(combo.clone());
            }
        }
    }
    Ok(out)
}

/// Type-7 quantile (linear interpolation between order statistics), the
/// common default in statistical software.
fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

#[derive(Debug, Clone)]
pub struct IqrOutcome {
    pub kept: Vec<f64>,
    pub removed: Vec<f64>,
    /// False when there were fewer than 4 values and the data came back
    /// unfiltered.
    pub filtered: bool,
}

/// Removes values strictly outside `[q1 - 3*iqr, q3 + 3*iqr]`. The fence is
/// three interquartile ranges wide, so only genuinely pathological runs are
/// discarded. Inputs keep their original order in `kept` and `removed`.
pub fn iqr_filter(values: &[f64]) -> IqrOutcome {
    if values.len() < 4 {
        return IqrOutcome {
            kept: values.to_vec(),
            removed: Vec::new(),
            filtered: false,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_type7(&sorted, 0.25);
    let q3 = quantile_type7(&sorted, 0.75);
    let iqr = q3 - q1;
    let low = q1 - 3.0 * iqr;
    let high = q3 + 3.0 * iqr;

    let (kept, removed) = values.iter().partition(|&&v| v >= low && v <= high);
    IqrOutcome {
        kept,
        removed,
        filtered: true,
    }
}

/// The alternative hypothesis of the rank-sum test. Only "greater" is
/// needed here: the question is always whether measuring made things
/// bigger (slower, hungrier).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    Greater,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy)]
pub struct WilcoxonOutcome {
    pub pvalue: f64,
    pub method: WilcoxonMethod,
}

/// One-sided Wilcoxon rank-sum test of H1: "x is stochastically greater
/// than y".
///
/// For tie-free samples with combined size <= 16 the p-value is exact:
/// every rank assignment is enumerated. Ties or larger samples use the
/// normal approximation with average ranks, tie-corrected variance and
/// continuity correction. Which path ran is reported in the outcome.
pub fn wilcoxon_rank_sum_one_sided(
    x: &[f64],
    y: &[f64],
    _alternative: Alternative,
) -> Result<WilcoxonOutcome> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::usage(format!(
            "rank-sum test needs at least two observations per group (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n1 = x.len();
    let n2 = y.len();
    let n = n1 + n2;

    let mut combined: Vec<(f64, bool)> = x
        .iter()
        .map(|&v| (v, true))
        .chain(y.iter().map(|&v| (v, false)))
        .collect();
    if combined.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::usage("samples must not contain NaN"));
    }
    combined.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let has_ties = combined.windows(2).any(|w| w[0].0 == w[1].0);

    if !has_ties && n <= WILCOXON_EXACT_MAX_N {
        // W = sum of x's ranks; ranks are 1..=n, all distinct
        let w_obs: u64 = combined
            .iter()
            .enumerate()
            .filter(|(_, (_, is_x))| *is_x)
            .map(|(i, _)| i as u64 + 1)
            .sum();
        let (ge, total) = count_rank_subsets_ge(n as u64, n1 as u64, w_obs);
        return Ok(WilcoxonOutcome {
            pvalue: ge as f64 / total as f64,
            method: WilcoxonMethod::Exact,
        });
    }

    // average ranks with tie groups
    let mut ranks = vec![0.0f64; n];
    let mut tie_term = 0.0; // sum of t^3 - t over tie groups
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && combined[j].0 == combined[i].0 {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0; // ranks are 1-based
        for r in ranks.iter_mut().take(j).skip(i) {
            *r = avg_rank;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let w: f64 = combined
        .iter()
        .zip(&ranks)
        .filter(|((_, is_x), _)| *is_x)
        .map(|(_, r)| *r)
        .sum();

    let nf = n as f64;
    let mean = n1 as f64 * (nf + 1.0) / 2.0;
    let var = (n1 as f64 * n2 as f64 / 12.0) * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        // all observations identical: no evidence either way
        return Ok(WilcoxonOutcome {
            pvalue: 0.5,
            method: WilcoxonMethod::NormalApproximation,
        });
    }
    let z = (w - mean - 0.5) / var.sqrt();
    Ok(WilcoxonOutcome {
        pvalue: 1.0 - normal_cdf(z),
        method: WilcoxonMethod::NormalApproximation,
    })
}

/// Counts size-`k` subsets of ranks `{1..=n}` whose sum is >= `threshold`,
/// along with the total number of subsets.
fn count_rank_subsets_ge(n: u64, k: u64, threshold: u64) -> (u64, u64) {
    fn walk(next: u64, n: u64, left: u64, sum: u64, threshold: u64, ge: &mut u64, total: &mut u64) {
        if left == 0 {
            *total += 1;
            if sum >= threshold {
                *ge += 1;
            }
            return;
        }
        for rank in next..=(n - left + 1) {
            walk(rank + 1, n, left - 1, sum + rank, threshold, ge, total);
        }
    }
    let mut ge = 0;
    let mut total = 0;
    walk(1, n, k, 0, threshold, &mut ge, &mut total);
    (ge, total)
}

/// Standard normal CDF via a Chebyshev fit of erfc (absolute error below
/// 1.2e-7, far inside the tolerance of the approximate test path).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Holm-Bonferroni step-down adjustment. Sorted ascending, the i-th
/// smallest p-value is multiplied by the number of hypotheses not yet
/// rejected, capped at 1, and made monotone by a running maximum; results
/// map back to the input order.
pub fn holm_bonferroni(pvalues: &[f64]) -> Result<Vec<f64>> {
    if pvalues.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::usage("p-values must lie in [0, 1]"));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());

    let mut adjusted = vec![0.0; m];
    let mut running_max = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * pvalues[idx]).min(1.0);
        running_max = running_max.max(scaled);
        adjusted[idx] = running_max;
    }
    Ok(adjusted)
}

/// Hodges-Lehmann location shift: the median of all pairwise differences
/// `x_i - y_j`. This is the "shift" column of the report tables.
pub fn location_shift(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::usage("location shift needs non-empty samples"));
    }
    let mut diffs = Vec::with_capacity(x.len() * y.len());
    for &a in x {
        for &b in y {
            diffs.push(a - b);
        }
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = diffs.len();
    Ok(if n % 2 == 1 {
        diffs[n / 2]
    } else {
        (diffs[n / 2 - 1] + diffs[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone)]
pub struct LatencyReport {
    /// 95% bootstrap confidence interval for the mean time of one read.
    pub ci_low_us: f64,
    pub ci_high_us: f64,
    pub mean_us: f64,
    pub batch_count: usize,
    pub iters_per_batch: u64,
    /// Present when a read failed mid-benchmark and the report covers only
    /// the completed batches.
    pub aborted: Option<String>,
}

/// Times one counter-read operation: after a warmup, reads run in 100
/// timed batches and the per-read mean gets a 95% confidence interval by
/// bootstrap over the batch means (fixed-seed resampling, so two runs of
/// the same data report the same interval).
pub fn latency_microbench(
    read_fn: &mut dyn FnMut() -> Result<u64>,
    warmup_iters: u64,
    sample_iters: u64,
    clock: &dyn Clock,
) -> Result<LatencyReport> {
    if sample_iters < 100 {
        return Err(Error::usage(format!(
            "latency benchmark needs at least 100 sample iterations, got {sample_iters}"
        )));
    }
    for _ in 0..warmup_iters {
        read_fn()?;
    }

    let batch_count = 100usize;
    let iters_per_batch = (sample_iters / batch_count as u64).max(1);
    let mut batch_means_us: Vec<f64> = Vec::with_capacity(batch_count);
    let mut aborted = None;
    'batches: for _ in 0..batch_count {
        let start = clock.now_ns();
        for _ in 0..iters_per_batch {
            if let Err(e) = read_fn() {
                if batch_means_us.len() >= 2 {
                    aborted = Some(format!(
                        "read failed after {} batches: {e}",
                        batch_means_us.len()
                    ));
                    break 'batches;
                }
                return Err(e);
            }
        }
        let elapsed_ns = clock.now_ns().saturating_sub(start);
        batch_means_us.push(elapsed_ns as f64 / iters_per_batch as f64 / 1000.0);
    }

    let mean_us = batch_means_us.iter().sum::<f64>() / batch_means_us.len() as f64;
    let mut rng = StdRng::seed_from_u64(0x7261_706c); // fixed seed: reproducible reports
    let mut resampled = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut sum = 0.0;
        for _ in 0..batch_means_us.len() {
            sum += batch_means_us[rng.gen_range(0..batch_means_us.len())];
        }
        resampled.push(sum / batch_means_us.len() as f64);
    }
    resampled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(LatencyReport {
        ci_low_us: quantile_type7(&resampled, 0.025),
        ci_high_us: quantile_type7(&resampled, 0.975),
        mean_us,
        batch_count: batch_means_us.len(),
        iters_per_batch,
        aborted,
    })
}

/// One row of the analysis report.
#[derive(Debug, Clone, PartialEq)]
pub struct StatReport {
    pub workload: String,
    pub mechanism: String,
    pub frequency_hz: f64,
    pub pvalue: f64,
    pub adj_pvalue: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
}

/// Renders report rows. Table mode presents p-values below 0.01 as
/// `< 0.01` (tiny p-values carry no extra information at that point);
/// CSV mode keeps full precision for further processing.
pub fn emit_report(rows: &[StatReport], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Table => {
            out.push_str("workload & mechanism & freq & pvalue & adj.pvalue & shift\n");
            for row in rows {
                out.push_str(&format!(
                    "{} & {} & {:.2} & {} & {} & {:.2}\n",
                    row.workload,
                    row.mechanism,
                    row.frequency_hz,
                    table_pvalue(row.pvalue),
                    table_pvalue(row.adj_pvalue),
                    row.shift
                ));
            }
        }
        ReportFormat::Csv => {
            out.push_str("workload,mechanism,freq,pvalue,adj.pvalue,shift\n");
            for row in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.workload,
                    row.mechanism,
                    row.frequency_hz,
                    row.pvalue,
                    row.adj_pvalue,
                    row.shift
                ));
            }
        }
    }
    out
}

fn table_pvalue(p: f64) -> String {
    if p < 0.01 {
        "< 0.01".to_string()
    } else {
        format!("{p:.2}")
    }
}

/// One benchmark run as recorded by the harness: what ran and the measured
/// value (running time in seconds, or watts for idle-power analyses).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub workload: String,
    pub mechanism: String,
    pub frequency_hz: f64,
    pub domain_set: String,
    pub run_id: String,
    pub value: f64,
}

/// Parses the runs-metadata CSV
/// (`workload,mechanism,freq,domain_set,run_id,value`).
pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::usage("runs CSV is empty"));
    };
    if header.trim() != "workload,mechanism,freq,domain_set,run_id,value" {
        return Err(Error::usage(format!(
            "unexpected runs CSV header {header:?}; expected \
             workload,mechanism,freq,domain_set,run_id,value"
        )));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::usage(format!(
                "runs CSV line {}: expected 6 fields, got {}",
                idx + 1,
                fields.len()
            )));
        }
        let frequency_hz: f64 = fields[2].trim().parse().map_err(|_| {
            Error::usage(format!(
                "runs CSV line {}: bad frequency {:?}",
                idx + 1,
                fields[2]
            ))
        })?;
        let value: f64 = fields[5].trim().parse().map_err(|_| {
            Error::usage(format!(
                "runs CSV line {}: bad value {:?}",
                idx + 1,
                fields[5]
            ))
        })?;
        out.push(RunRecord {
            workload: fields[0].trim().to_string(),
            mechanism: fields[1].trim().to_string(),
            frequency_hz,
            domain_set: fields[3].trim().to_string(),
            run_id: fields[4].trim().to_string(),
            value,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub rows: Vec<StatReport>,
    /// Human-readable notes: which test path ran, outliers removed, cells
    /// skipped. Goes to stderr, not into the report itself.
    pub metadata: Vec<String>,
}

/// The full pipeline over recorded runs: per-combination IQR filtering,
/// one-sided rank-sum of every measured cell against the workload's
/// no-measurement baseline (frequency 0, pooled across mechanisms — with
/// no measurement running, the mechanism label carries no information),
/// Holm-Bonferroni over all cells, Hodges-Lehmann shift per cell.
pub fn analyze_runs(records: &[RunRecord]) -> Result<AnalyzeOutcome> {
    if records.is_empty() {
        return Err(Error::usage("no run records to analyze"));
    }
    // group into cells by (workload, mechanism, freq), pooling domain sets
    let mut cells: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (
            r.workload.clone(),
            r.mechanism.clone(),
            freq_key(r.frequency_hz),
        );
        cells.entry(key).or_default().push(r.value);
    }

    let mut metadata = Vec::new();
    let mut outliers_removed = 0usize;
    let mut filtered: BTreeMap<(String, String, u64), Vec<f64>> = BTreeMap::new();
    for (key, values) in cells {
        let outcome = iqr_filter(&values);
        if !outcome.filtered {
            metadata.push(format!(
                "{}/{}/{} Hz: only {} runs, outlier filter skipped",
                key.0,
                key.1,
                key.2 as f64 / 1000.0,
                values.len()
            ));
        }
        outliers_removed += outcome.removed.len();
        filtered.insert(key, outcome.kept);
    }
    if outliers_removed > 0 {
        metadata.push(format!("outliers removed: {outliers_removed}"));
    }

    // pooled per-workload baseline: every freq-0 run
    let mut baselines: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((workload, _, fkey), values) in &filtered {
        if *fkey == 0 {
            baselines
                .entry(workload.clone())
                .or_default()
                .extend(values.iter().copied());
        }
    }

    let mut rows = Vec::new();
    let mut pvalues = Vec::new();
    let mut exact = 0usize;
    let mut approx = 0usize;
    for ((workload, mechanism, fkey), values) in &filtered {
        if *fkey == 0 {
            continue;
        }
        let Some(baseline) = baselines.get(workload) else {
            return Err(Error::usage(format!(
                "workload {workload} has no frequency-0 baseline runs"
            )));
        };
        if values.len() < 2 || baseline.len() < 2 {
            metadata.push(format!(
                "{workload}/{mechanism}/{} Hz: too few runs to test, skipped",
                *fkey as f64 / 1000.0
            ));
            continue;
        }
        let test = wilcoxon_rank_sum_one_sided(values, baseline, Alternative::Greater)?;
        match test.method {
            WilcoxonMethod::Exact => exact += 1,
            WilcoxonMethod::NormalApproximation => approx += 1,
        }
        let shift = location_shift(values, baseline)?;
        pvalues.push(test.pvalue);
        rows.push(StatReport {
            workload: workload.clone(),
            mechanism: mechanism.clone(),
            frequency_hz: *fkey as f64 / 1000.0,
            pvalue: test.pvalue,
            adj_pvalue: 0.0, // filled below
            shift,
        });
    }

    let adjusted = holm_bonferroni(&pvalues)?;
    for (row, adj) in rows.iter_mut().zip(adjusted) {
        row.adj_pvalue = adj;
    }
    metadata.push(format!(
        "wilcoxon: exact path for {exact} cells, normal approximation for {approx}"
    ));
    Ok(AnalyzeOutcome { rows, metadata })
}

/// Frequencies keyed in millihertz so they can index a BTreeMap.
fn freq_key(freq: f64) -> u64 {
    (freq * 1000.0).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use proptest::prelude::*;

    fn combos(n: usize) -> Vec<Combination> {
        (0..n)
            .map(|i| Combination {
                workload: format!("w{i}"),
                mechanism: MechanismKind::Msr,
                frequency_hz: 1.0,
                domain_set: "pkg".to_string(),
            })
            .collect()
    }

    #[test]
    fn schedule_spreads_blocks_over_passes() {
        let order = schedule_repetitions(&combos(2), 3, 2).unwrap();
        let tags: String = order
            .iter()
            .map(|c| if c.workload == "w0" { 'A' } else { 'B' })
            .collect();
        assert_eq!(tags, "AAABBBAAABBB");
    }

    #[test]
    fn schedule_single_combination() {
        let order = schedule_repetitions(&combos(1), 1, 5).unwrap();
        assert_eq!(order.len(), 5);
    }

    #[test]
    fn schedule_block_round_robin() {
        let order = schedule_repetitions(&combos(3), 2, 1).unwrap();
        let tags: String = order
            .iter()
            .map(|c| match c.workload.as_str() {
                "w0" => 'A',
                "w1" => 'B',
                _ => 'C',
            })
            .collect();
        assert_eq!(tags, "AABBCC");
    }

    #[test]
    fn schedule_rejects_empty_input() {
        assert!(schedule_repetitions(&[], 3, 1).is_err());
        assert!(schedule_repetitions(&combos(1), 0, 1).is_err());
    }

    #[test]
    fn matrix_size_matches_the_factor_product() {
        let m = combination_matrix(
            &["bt.D", "cg.D", "ep.E", "sleep"],
            &[
                MechanismKind::Msr,
                MechanismKind::Powercap,
                MechanismKind::PerfUser,
                MechanismKind::PerfEbpf,
            ],
            &[0.0, 0.1, 1.0, 10.0, 100.0, 1000.0],
            &["pkg"],
        );
        assert_eq!(m.len(), 96);
    }

    #[test]
    fn iqr_hand_example_removes_the_outlier() {
        let mut values: Vec<f64> = (1..=11).map(f64::from).collect();
        values.push(30.0);
        let outcome = iqr_filter(&values);
        assert!(outcome.filtered);
        assert_eq!(outcome.removed, vec![30.0]);
        assert_eq!(outcome.kept.len(), 11);
    }

    #[test]
    fn iqr_degenerate_and_clean_inputs_remove_nothing() {
        let equal = vec![5.0; 8];
        let outcome = iqr_filter(&equal);
        assert!(outcome.removed.is_empty());
        assert_eq!(outcome.kept, equal);

        let symmetric = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(iqr_filter(&symmetric).removed.is_empty());
    }

    #[test]
    fn iqr_small_samples_come_back_unfiltered() {
        let outcome = iqr_filter(&[1.0, 2.0, 1000.0]);
        assert!(!outcome.filtered);
        assert_eq!(outcome.kept.len(), 3);
    }

    #[test]
    fn wilcoxon_exact_hand_example() {
        // x occupies the top ranks in exactly 1 of C(6,3) = 20 assignments
        let out =
            wilcoxon_rank_sum_one_sided(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0], Alternative::Greater)
                .unwrap();
        assert_eq!(out.method, WilcoxonMethod::Exact);
        assert!((out.pvalue - 0.05).abs() < 1e-15, "p = {}", out.pvalue);
    }

    #[test]
    fn wilcoxon_identical_samples_is_half_on_the_approx_path() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let out = wilcoxon_rank_sum_one_sided(&x, &x, Alternative::Greater).unwrap();
        assert_eq!(out.method, WilcoxonMethod::NormalApproximation);
        assert!((out.pvalue - 0.5).abs() < 0.06, "p = {}", out.pvalue);
    }

    #[test]
    fn wilcoxon_rejects_tiny_samples() {
        assert!(wilcoxon_rank_sum_one_sided(&[1.0], &[1.0, 2.0], Alternative::Greater).is_err());
        assert!(wilcoxon_rank_sum_one_sided(&[], &[1.0, 2.0], Alternative::Greater).is_err());
    }

    /// Brute-force oracle: enumerate group assignments by bitmask.
    fn brute_force_pvalue(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() + y.len();
        let mut combined: Vec<f64> = x.iter().chain(y.iter()).copied().collect();
        combined.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank_of = |v: f64| combined.iter().position(|&c| c == v).unwrap() as u64 + 1;
        let w_obs: u64 = x.iter().map(|&v| rank_of(v)).sum();

        let mut ge = 0u64;
        let mut total = 0u64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != x.len() {
                continue;
            }
            total += 1;
            let sum: u64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| i as u64 + 1)
                .sum();
            if sum >= w_obs {
                ge += 1;
            }
        }
        ge as f64 / total as f64
    }

    proptest! {
        /// The exact path agrees with independent brute-force enumeration
        /// for every tie-free instance with combined size <= 12.
        #[test]
        fn exact_path_matches_brute_force(
            pool in proptest::collection::btree_set(0u32..10_000, 4..=12),
            split in 2usize..=10,
        ) {
            let values: Vec<f64> = pool.iter().map(|&v| v as f64 * 0.25).collect();
            prop_assume!(values.len() >= 4);
            let split = split.min(values.len() - 2).max(2);
            let (x, y) = values.split_at(split);
            let expected = brute_force_pvalue(x, y);
            let got = wilcoxon_rank_sum_one_sided(x, y, Alternative::Greater).unwrap();
            prop_assert_eq!(got.method, WilcoxonMethod::Exact);
            prop_assert!((got.pvalue - expected).abs() < 1e-12);
        }

        /// Holm output is monotone over the sorted order, capped at 1 and
        /// never below the raw p-value.
        #[test]
        fn holm_properties(pvalues in proptest::collection::vec(0.0f64..=1.0, 1..20)) {
            let adjusted = holm_bonferroni(&pvalues).unwrap();
            let mut order: Vec<usize> = (0..pvalues.len()).collect();
            order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());
            let mut prev = 0.0;
            for &i in &order {
                prop_assert!(adjusted[i] >= prev);
                prev = adjusted[i];
            }
            for (p, adj) in pvalues.iter().zip(&adjusted) {
                prop_assert!(*adj >= *p - 1e-15);
                prop_assert!(*adj <= 1.0);
            }
        }

        /// Location shift is translation-equivariant.
        #[test]
        fn shift_translation_equivariance(
            x in proptest::collection::vec(-100.0f64..100.0, 1..12),
            y in proptest::collection::vec(-100.0f64..100.0, 1..12),
            c in -50.0f64..50.0,
        ) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let base = location_shift(&x, &y).unwrap();
            let moved = location_shift(&shifted, &y).unwrap();
            prop_assert!((moved - (base + c)).abs() < 1e-9);
        }

        /// The filter partitions its input: kept and removed are disjoint
        /// by construction and re-assemble to the input multiset.
        #[test]
        fn iqr_is_a_partition(values in proptest::collection::vec(-1e6f64..1e6, 0..40)) {
            let outcome = iqr_filter(&values);
            let mut reassembled = outcome.kept.clone();
            reassembled.extend(outcome.removed.iter().copied());
            reassembled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut input = values.clone();
            input.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assert_eq!(reassembled, input);
        }

        /// Scheduling emits combinations x reps x passes runs.
        #[test]
        fn schedule_length(n in 1usize..6, reps in 1usize..4, passes in 1usize..4) {
            let order = schedule_repetitions(&combos(n), reps, passes).unwrap();
            prop_assert_eq!(order.len(), n * reps * passes);
        }
    }

    #[test]
    fn holm_hand_examples() {
        assert_eq!(
            holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap(),
            vec![0.03, 0.06, 0.06]
        );
        assert_eq!(holm_bonferroni(&[1.0]).unwrap(), vec![1.0]);
        assert_eq!(
            holm_bonferroni(&[0.0, 0.0, 0.0]).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert!(holm_bonferroni(&[1.5]).is_err());
    }

    #[test]
    fn shift_hand_examples() {
        assert_eq!(location_shift(&[10.0, 20.0], &[1.0, 2.0]).unwrap(), 13.5);
        assert_eq!(location_shift(&[5.0], &[5.0]).unwrap(), 0.0);
        assert_eq!(location_shift(&[3.0], &[1.0, 2.0]).unwrap(), 1.5);
    }

    #[test]
    fn latency_bench_on_a_virtual_clock_is_exact() {
        let clock = VirtualClock::new();
        let tick = clock.clone();
        // every read costs exactly 1 us of virtual time
        let mut read_fn = move || -> Result<u64> {
            tick.advance_by(1000);
            Ok(42)
        };
        let report = latency_microbench(&mut read_fn, 10, 1000, &clock).unwrap();
        assert!(report.aborted.is_none());
        assert!(report.ci_low_us <= 1.0 && 1.0 <= report.ci_high_us);
        assert!(report.ci_high_us - report.ci_low_us < 0.1);
        assert!((report.mean_us - 1.0).abs() < 1e-9);
    }

    #[test]
    fn latency_bench_rejects_too_few_iters() {
        let clock = VirtualClock::new();
        let mut read_fn = || -> Result<u64> { Ok(0) };
        assert!(latency_microbench(&mut read_fn, 0, 99, &clock).is_err());
    }

    #[test]
    fn latency_bench_aborts_with_partial_report() {
        let clock = VirtualClock::new();
        let tick = clock.clone();
        let mut calls = 0u64;
        let mut read_fn = move || -> Result<u64> {
            calls += 1;
            tick.advance_by(1000);
            if calls > 500 {
                Err(Error::env("counter vanished".to_string()))
            } else {
                Ok(0)
            }
        };
        let report = latency_microbench(&mut read_fn, 0, 10_000, &clock).unwrap();
        assert!(report.aborted.is_some());
        assert!(report.batch_count >= 2);
        assert!(report.batch_count < 100);
    }

    #[test]
    fn report_table_renders_the_reference_row() {
        let rows = vec![StatReport {
            workload: "ep.E".to_string(),
            mechanism: "msr".to_string(),
            frequency_hz: 1000.0,
            pvalue: 0.0006,
            adj_pvalue: 0.004,
            shift: 1.94,
        }];
        let table = emit_report(&rows, ReportFormat::Table);
        assert!(table.contains("ep.E & msr & 1000.00 & < 0.01 & < 0.01 & 1.94"));

        let csv = emit_report(&rows, ReportFormat::Csv);
        assert!(csv.contains("ep.E,msr,1000,0.0006,0.004,1.94"));
    }

    #[test]
    fn report_empty_rows_is_header_only() {
        let table = emit_report(&[], ReportFormat::Table);
        assert_eq!(
            table,
            "workload & mechanism & freq & pvalue & adj.pvalue & shift\n"
        );
        let csv = emit_report(&[], ReportFormat::Csv);
        assert_eq!(csv, "workload,mechanism,freq,pvalue,adj.pvalue,shift\n");
    }

    #[test]
    fn runs_csv_roundtrip_and_analysis() {
        let mut text = String::from("workload,mechanism,freq,domain_set,run_id,value\n");
        // slowed-down measured cell vs a clean baseline
        for i in 0..6 {
            text.push_str(&format!("ep.E,msr,1000,pkg,m{i},{}\n", 103.0 + i as f64));
            text.push_str(&format!(
                "ep.E,none,0,pkg,b{i},{}\n",
                100.0 + i as f64 * 0.1
            ));
            text.push_str(&format!(
                "ep.E,perf,10,pkg,p{i},{}\n",
                100.0 + (i % 2) as f64 * 0.1
            ));
        }
        let records = parse_runs_csv(&text).unwrap();
        assert_eq!(records.len(), 18);

        let outcome = analyze_runs(&records).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        let slowed = outcome.rows.iter().find(|r| r.mechanism == "msr").unwrap();
        assert!(slowed.pvalue < ALPHA);
        assert!(slowed.shift > 2.0);
        assert!(slowed.adj_pvalue >= slowed.pvalue);
        let clean = outcome.rows.iter().find(|r| r.mechanism == "perf").unwrap();
        assert!(clean.pvalue > ALPHA);
    }

    #[test]
    fn analysis_requires_a_baseline() {
        let text = "workload,mechanism,freq,domain_set,run_id,value\n\
                    ep.E,msr,1000,pkg,a,1\nep.E,msr,1000,pkg,b,2\n";
        let records = parse_runs_csv(text).unwrap();
        assert!(matches!(analyze_runs(&records), Err(Error::Usage(_))));
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-7);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-3);
        assert!((normal_cdf(-1.6448536) - 0.05).abs() < 1e-4);
    }
}
