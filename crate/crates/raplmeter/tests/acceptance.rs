//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`). Tolerances are pinned in the
//! assertions, not tuned at runtime.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use raplmeter::backend::ebpf::SamplerConfig;
use raplmeter::backend::powercap::{discover_powercap, PowercapBackend};
use raplmeter::clock::{Clock, SystemClock, VirtualClock};
use raplmeter::correction::{CounterState, EnergySample};
use raplmeter::domain::{
    check_domain_consistency, DomainId, DomainKind, MechanismKind, Topology, Vendor,
};
use raplmeter::polling::{achieved_rate, measure_to_csv, run_polling, SampleSink};
use raplmeter::sim::fixtures::{write_host_info, write_perf_events_dir, PowercapFixture};
use raplmeter::sim::{start_simulated_sampler, PowerProfile, SimBackend};
use raplmeter::stats::{
    emit_report, holm_bonferroni, iqr_filter, location_shift, wilcoxon_rank_sum_one_sided,
    Alternative, ReportFormat, StatReport, WilcoxonMethod,
};

/// Criteria run one at a time: the frequency-accuracy criterion is
/// specified for an otherwise idle machine, and the oracle criteria are
/// CPU-heavy enough to starve it on small hosts.
fn serial() -> std::sync::MutexGuard<'static, ()> {
    static GATE: Mutex<()> = Mutex::new(());
    GATE.lock().unwrap_or_else(|poison| poison.into_inner())
}

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

fn pkg0() -> DomainId {
    DomainId::socketed(DomainKind::Package, 0)
}

struct CollectSink(Mutex<Vec<EnergySample>>);

impl CollectSink {
    fn new() -> CollectSink {
        CollectSink(Mutex::new(Vec::new()))
    }
    fn samples(&self) -> Vec<EnergySample> {
        self.0.lock().unwrap().clone()
    }
}

impl SampleSink for CollectSink {
    fn offer(&self, sample: EnergySample) -> bool {
        self.0.lock().unwrap().push(sample);
        true
    }
}

/// Wrap-forcing powercap surface: 50 W against a 1 J counter range wraps
/// every 0.02 s.
fn wrap_forcing_powercap(
    dir: &Path,
    clock: &VirtualClock,
) -> (Arc<PowercapFixture>, PowercapBackend, Arc<PowerProfile>) {
    let profile = Arc::new(PowerProfile::constant(50.0).unwrap());
    let topology = Topology::synthetic(Vendor::Intel, 1, 1);
    let fixture = Arc::new(
        PowercapFixture::create(
            dir,
            profile.clone(),
            &topology,
            &[DomainKind::Package],
            1_000_000,
        )
        .unwrap(),
    );
    fixture.attach(clock);
    let discovery = discover_powercap(dir, &topology).unwrap();
    assert_eq!(discovery.nodes.len(), 1);
    let backend = PowercapBackend::new(discovery.nodes);
    (fixture, backend, profile)
}

#[test]
fn criterion_overflow_reconstruction() {
    let _serial = serial();
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let clock = VirtualClock::new();
    let (_fixture, mut backend, profile) = wrap_forcing_powercap(tmp.path(), &clock);

    let sink = CollectSink::new();
    let stop = AtomicBool::new(false);
    let summary = run_polling(&mut backend, 1000.0, Some(10_000), &clock, &sink, &stop).unwrap();

    assert_eq!(summary.ticks, 10_000);
    let reconstructed: f64 = sink.samples().iter().map(|s| s.joules).sum();
    let truth = profile.ground_truth_energy(pkg0(), 0.0, 10.0).unwrap();
    assert_eq!(truth, 500.0);
    let error = (reconstructed - truth).abs() / truth;
    assert!(
        error < 0.001,
        "reconstructed {reconstructed} J vs {truth} J: {:.4}% off",
        error * 100.0
    );
    assert!(
        summary.overflows >= 400,
        "only {} wraps corrected",
        summary.overflows
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 15.0, "took {elapsed:?}");
    pass(&format!(
        "overflow_reconstruction ({reconstructed:.3} J of {truth} J, {} wraps, {elapsed:?})",
        summary.overflows
    ));
}

#[test]
fn criterion_negative_wrap_undercount() {
    let _serial = serial();
    let tmp = tempfile::tempdir().unwrap();
    let clock = VirtualClock::new();
    let (_fixture, mut backend, profile) = wrap_forcing_powercap(tmp.path(), &clock);

    // period 0.1 s is five times the 0.02 s wrap time: the counter laps the
    // range between polls and the lost laps are undetectable
    let sink = CollectSink::new();
    let stop = AtomicBool::new(false);
    run_polling(&mut backend, 10.0, Some(100), &clock, &sink, &stop).unwrap();

    let reconstructed: f64 = sink.samples().iter().map(|s| s.joules).sum();
    let truth = profile.ground_truth_energy(pkg0(), 0.0, 10.0).unwrap();
    assert!(
        reconstructed < 0.6 * truth,
        "reconstructed {reconstructed} J is not the expected undercount of {truth} J"
    );
    pass(&format!(
        "negative_wrap_undercount ({reconstructed:.1} J of {truth} J reconstructed at 10 Hz)"
    ));
}

#[test]
fn criterion_frequency_accuracy_realtime() {
    let _serial = serial();
    // a real-time run: 30 s at 1000 Hz against the in-memory simulated host
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let profile = Arc::new(PowerProfile::constant(50.0).unwrap());
    let mut backend = SimBackend::new(profile, clock.clone(), &[pkg0()], 1e-6, u64::MAX);

    let sink = CollectSink::new();
    let stop = AtomicBool::new(false);
    let summary = run_polling(
        &mut backend,
        1000.0,
        Some(30_000),
        clock.as_ref(),
        &sink,
        &stop,
    )
    .unwrap();

    let timestamps: Vec<u64> = sink.samples().iter().map(|s| s.timestamp_ns).collect();
    let (mean, std) = achieved_rate(&timestamps, true).unwrap();
    assert!(
        (990.0..=1010.0).contains(&mean),
        "achieved mean {mean} Hz outside [990, 1010] (missed {})",
        summary.missed_ticks
    );
    assert!(std <= 5.0, "per-second std {std} above 5");
    pass(&format!(
        "frequency_accuracy_realtime (mean {mean:.1} Hz, std {std:.2}, {} missed)",
        summary.missed_ticks
    ));
}

#[test]
fn criterion_correction_formula_oracle() {
    let _serial = serial();
    // 1e5 random (prev, cur) pairs per mechanism constant, checked against
    // wide signed arithmetic
    let powercap_fixture_max = 65_532_610_987u64;
    let constants: [(&str, u64); 4] = [
        ("msr", u32::MAX as u64),
        ("perf", u64::MAX),
        ("ebpf", u64::MAX),
        ("powercap", powercap_fixture_max),
    ];
    let mut rng = StdRng::seed_from_u64(20240930);
    for (label, c) in constants {
        for _ in 0..100_000 {
            let prev = rng.gen_range(0..=c);
            let cur = rng.gen_range(0..=c);
            let mut state = CounterState::new(c, 1.0);
            state.observe(prev).unwrap();
            let (delta, overflowed) = state.correct_delta(cur).unwrap();

            let mut expected = cur as i128 - prev as i128;
            if expected < 0 {
                expected += c as i128;
            }
            assert_eq!(
                delta as i128, expected,
                "{label}: prev={prev} cur={cur} C={c}"
            );
            assert_eq!(overflowed, cur < prev);
            assert!(delta <= c);
        }
    }
    pass("correction_formula_oracle (4 constants x 100000 triples, zero mismatches)");
}

/// Independent enumeration of the exact rank-sum tail by bitmask.
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

/// Exact tail probability P(W >= w) of the rank-sum of `k` out of `n`
/// ranks, by counting subsets per sum (dynamic programming; tractable far
/// beyond what enumeration can reach).
fn exact_tail_by_dp(n: usize, k: usize, w: u64) -> f64 {
    let max_sum: usize = (n - k + 1..=n).sum();
    // counts[j][s]: subsets of size j with rank-sum s
    let mut counts = vec![vec![0u128; max_sum + 1]; k + 1];
    counts[0][0] = 1;
    for rank in 1..=n {
        for j in (1..=k.min(rank)).rev() {
            for s in (rank..=max_sum).rev() {
                let add = counts[j - 1][s - rank];
                counts[j][s] += add;
            }
        }
    }
    let total: u128 = counts[k].iter().sum();
    let ge: u128 = counts[k][(w as usize).min(max_sum)..].iter().sum();
    ge as f64 / total as f64
}

#[test]
fn criterion_wilcoxon_oracle_equivalence() {
    let _serial = serial();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..1000 {
        let n1 = rng.gen_range(2..=6);
        let n2 = rng.gen_range(2..=6);
        // distinct values: sample integers without replacement
        let mut pool: Vec<u32> = (0..10_000).collect();
        let mut values = Vec::with_capacity(n1 + n2);
        for _ in 0..n1 + n2 {
            let idx = rng.gen_range(0..pool.len());
            values.push(pool.swap_remove(idx) as f64 * 0.5);
        }
        let (x, y) = values.split_at(n1);
        let got = wilcoxon_rank_sum_one_sided(x, y, Alternative::Greater).unwrap();
        assert_eq!(got.method, WilcoxonMethod::Exact);
        let expected = brute_force_pvalue(x, y);
        assert!(
            (got.pvalue - expected).abs() < 1e-12,
            "exact {} vs oracle {expected} for x={x:?} y={y:?}",
            got.pvalue
        );
    }

    // at 20 vs 20 the implementation switches to the normal approximation;
    // the DP oracle provides the exact reference
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let mut pool: Vec<u32> = (0..100_000).collect();
        let mut values = Vec::with_capacity(40);
        for _ in 0..40 {
            let idx = rng.gen_range(0..pool.len());
            values.push(pool.swap_remove(idx) as f64 * 0.001);
        }
        let (x, y) = values.split_at(20);
        let got = wilcoxon_rank_sum_one_sided(x, y, Alternative::Greater).unwrap();
        assert_eq!(got.method, WilcoxonMethod::NormalApproximation);

        let mut combined: Vec<f64> = values.clone();
        combined.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w_obs: u64 = x
            .iter()
            .map(|&v| combined.iter().position(|&c| c == v).unwrap() as u64 + 1)
            .sum();
        let exact = exact_tail_by_dp(40, 20, w_obs);
        let diff = (got.pvalue - exact).abs();
        worst = worst.max(diff);
        assert!(
            diff <= 0.01,
            "approx {} vs exact {exact}: off by {diff}",
            got.pvalue
        );
    }
    pass(&format!(
        "wilcoxon_oracle_equivalence (1000 exact instances; 20v20 approx within {worst:.5})"
    ));
}

#[test]
fn criterion_holm_bonferroni() {
    let _serial = serial();
    assert_eq!(
        holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap(),
        vec![0.03, 0.06, 0.06]
    );

    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..10_000 {
        let m = rng.gen_range(1..=12);
        let pvalues: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let adjusted = holm_bonferroni(&pvalues).unwrap();

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());
        let mut prev = 0.0;
        for &i in &order {
            assert!(
                adjusted[i] >= prev,
                "not monotone: {pvalues:?} -> {adjusted:?}"
            );
            prev = adjusted[i];
        }
        for (p, adj) in pvalues.iter().zip(&adjusted) {
            assert!(*adj <= 1.0);
            assert!(*adj >= *p - 1e-15);
        }
    }
    pass("holm_bonferroni (hand example exact; 10000 random vectors monotone and capped)");
}

#[test]
fn criterion_location_shift() {
    let _serial = serial();
    assert_eq!(location_shift(&[10.0, 20.0], &[1.0, 2.0]).unwrap(), 13.5);

    let mut rng = StdRng::seed_from_u64(13);
    for _ in 0..1000 {
        let n1 = rng.gen_range(1..=10);
        let n2 = rng.gen_range(1..=10);
        let x: Vec<f64> = (0..n1).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let y: Vec<f64> = (0..n2).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let c: f64 = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let base = location_shift(&x, &y).unwrap();
        let moved = location_shift(&shifted, &y).unwrap();
        assert!(
            (moved - (base + c)).abs() < 1e-9,
            "equivariance broke: {base} + {c} vs {moved}"
        );
    }
    pass("location_shift (hand example 13.5 exact; 1000 translation instances)");
}

#[test]
fn criterion_iqr_rule() {
    let _serial = serial();
    let mut values: Vec<f64> = (1..=11).map(f64::from).collect();
    values.push(30.0);
    let outcome = iqr_filter(&values);
    assert_eq!(outcome.removed, vec![30.0], "should remove exactly {{30}}");
    assert_eq!(outcome.kept.len(), 11);

    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..1000 {
        let n = rng.gen_range(0..40);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1e6..1e6)).collect();
        let outcome = iqr_filter(&values);
        let mut reassembled = outcome.kept.clone();
        reassembled.extend(outcome.removed.iter().copied());
        reassembled.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut input = values.clone();
        input.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            reassembled, input,
            "kept + removed must partition the input"
        );
    }
    pass("iqr_rule (12-value example removes {30}; 1000 partition checks)");
}

#[test]
fn criterion_powercap_discovery() {
    let _serial = serial();
    // hand-built two-socket tree: socket 0 carries core and dram children
    // (dram physically nested, as powercap lays it out), socket 1 is bare
    let tmp = tempfile::tempdir().unwrap();
    let write_node = |dir: &Path, name: &str| {
        fs::create_dir_all(dir).unwrap();
        fs::write(dir.join("name"), format!("{name}\n")).unwrap();
        fs::write(dir.join("energy_uj"), "0\n").unwrap();
        fs::write(dir.join("max_energy_range_uj"), "262143328850\n").unwrap();
    };
    let top0 = tmp.path().join("intel-rapl:0");
    write_node(&top0, "package-0");
    write_node(&top0.join("intel-rapl:0:0"), "core");
    write_node(&top0.join("intel-rapl:0:1"), "dram");
    write_node(&tmp.path().join("intel-rapl:1"), "package-1");

    let topology = Topology::synthetic(Vendor::Intel, 2, 2);
    let discovery = discover_powercap(tmp.path(), &topology).unwrap();
    assert!(discovery.warnings.is_empty(), "{:?}", discovery.warnings);

    let domains: Vec<DomainId> = discovery.nodes.iter().map(|n| n.domain).collect();
    assert_eq!(
        domains,
        vec![
            DomainId::socketed(DomainKind::Package, 0),
            DomainId::socketed(DomainKind::Core, 0),
            DomainId::socketed(DomainKind::Dram, 0),
            DomainId::socketed(DomainKind::Package, 1),
        ],
        "discovered {domains:?}"
    );
    let dram = discovery
        .nodes
        .iter()
        .find(|n| n.domain.kind == DomainKind::Dram)
        .unwrap();
    assert!(dram.nested_under_package, "nesting metadata lost");
    assert_eq!(
        dram.domain.socket,
        Some(0),
        "dram not re-parented to its socket"
    );
    pass("powercap_discovery (2-socket fixture, dram re-parented with nesting metadata)");
}

#[test]
fn criterion_consistency_check_scenario() {
    let _serial = serial();
    // powercap sees {package, core}; perf-events sees all five
    let core0 = DomainId::socketed(DomainKind::Core, 0);
    let mut lists = BTreeMap::new();
    lists.insert(
        MechanismKind::Powercap,
        [pkg0(), core0].into_iter().collect(),
    );
    lists.insert(
        MechanismKind::PerfUser,
        [
            pkg0(),
            core0,
            DomainId::socketed(DomainKind::Uncore, 0),
            DomainId::socketed(DomainKind::Dram, 0),
            DomainId::psys(),
        ]
        .into_iter()
        .collect(),
    );
    let discrepancies = check_domain_consistency(&lists).unwrap();
    assert_eq!(discrepancies.len(), 3, "{discrepancies:?}");

    // the same scenario through the CLI exits 1
    let tmp = tempfile::tempdir().unwrap();
    let host_root = tmp.path().join("host");
    write_host_info(&host_root, Vendor::Intel, 6, 79, 1, 2).unwrap();
    let powercap_root = tmp.path().join("powercap");
    let profile = Arc::new(PowerProfile::constant(10.0).unwrap());
    let topology = Topology::synthetic(Vendor::Intel, 1, 2);
    PowercapFixture::create(
        &powercap_root,
        profile,
        &topology,
        &[DomainKind::Package, DomainKind::Core],
        262_143_328_850,
    )
    .unwrap();
    let perf_dir = tmp.path().join("perf-events");
    write_perf_events_dir(&perf_dir, &DomainKind::ALL, (2.0f64).powi(-32)).unwrap();

    let exit = raplmeter::cli::main_with_args([
        "raplmeter",
        "check-consistency",
        "--host-root",
        host_root.to_str().unwrap(),
        "--sysfs-root",
        powercap_root.to_str().unwrap(),
        "--perf-events-dir",
        perf_dir.to_str().unwrap(),
        "--msr-root",
        tmp.path().join("no-msr").to_str().unwrap(),
    ]);
    assert_eq!(exit, 1, "consistency discrepancies must exit 1");
    pass("consistency_check (3 discrepancies flagged, CLI exit code 1)");
}

#[test]
fn criterion_msr_unit_decode() {
    let _serial = serial();
    let mut rng = StdRng::seed_from_u64(23);
    for esu in 0u64..=31 {
        for _ in 0..100 {
            let noise: u64 = rng.gen();
            let register = (noise & !0x1F00) | (esu << 8);
            let unit = raplmeter::backend::msr::decode_energy_unit(register);
            assert_eq!(
                unit,
                (2.0f64).powi(-(esu as i32)),
                "esu {esu} in register {register:#x}"
            );
        }
    }
    pass("msr_unit_decode (all 32 ESU values under random register noise)");
}

#[test]
fn criterion_ebpf_buffer_protocol() {
    let _serial = serial();
    let clock = VirtualClock::new();
    let profile = Arc::new(PowerProfile::constant(50.0).unwrap());
    let unit = (2.0f64).powi(-32);

    // 10 s at kernel rate 1000 Hz, drained at 10 Hz, capacity 400
    let mut config = SamplerConfig::new(vec![pkg0()], 1000, 10.0);
    config.buffer_capacity = Some(400);
    let mut session = start_simulated_sampler(profile.clone(), config, 0, unit, u64::MAX).unwrap();

    let mut state = CounterState::new(u64::MAX, unit);
    let mut reconstructed = 0.0f64;
    let mut first_ts = None;
    let mut last_ts = 0u64;
    let mut prev_record_ts = 0u64;
    let mut records_seen = 0u64;
    for cycle in 1..=100u64 {
        clock.advance_to(cycle * 100_000_000);
        let records = session.drain(clock.now_ns()).unwrap();
        for record in records {
            assert!(
                record.timestamp_ns > prev_record_ts,
                "timestamps must strictly increase"
            );
            prev_record_ts = record.timestamp_ns;
            first_ts.get_or_insert(record.timestamp_ns);
            last_ts = record.timestamp_ns;
            records_seen += 1;
            if let Some((delta, _)) = state.observe(record.values[0]).unwrap() {
                reconstructed += delta as f64 * unit;
            }
        }
    }
    assert_eq!(
        session.dropped(),
        0,
        "capacity 400 at 10 Hz drains must not drop"
    );
    assert_eq!(records_seen, 10_000);
    let truth = profile
        .ground_truth_energy(pkg0(), first_ts.unwrap() as f64 / 1e9, last_ts as f64 / 1e9)
        .unwrap();
    // one sampling quantum: the energy of one kernel-rate period
    let quantum = 50.0 / 1000.0;
    assert!(
        (reconstructed - truth).abs() <= quantum,
        "reconstructed {reconstructed} J vs {truth} J (quantum {quantum} J)"
    );

    // stress: capacity 10 with 100 records per drain cycle loses exactly
    // appended - capacity each cycle
    let clock2 = VirtualClock::new();
    let mut config2 = SamplerConfig::new(vec![pkg0()], 1000, 10.0);
    config2.buffer_capacity = Some(10);
    let mut session2 = start_simulated_sampler(profile, config2, 0, unit, u64::MAX).unwrap();
    for cycle in 1..=10u64 {
        clock2.advance_to(cycle * 100_000_000);
        let records = session2.drain(clock2.now_ns()).unwrap();
        assert_eq!(records.len(), 10, "cycle {cycle} kept more than capacity");
        assert_eq!(
            session2.dropped(),
            cycle * 90,
            "drops must be appended - capacity per cycle"
        );
    }
    pass(&format!(
        "ebpf_buffer_protocol (10000 records, 0 drops, energy within {quantum} J; stress drops 90/cycle)"
    ));
}

#[test]
fn criterion_csv_format_golden() {
    let _serial = serial();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("golden.csv");
    let clock = VirtualClock::new();
    let profile = Arc::new(PowerProfile::constant(50.0).unwrap());
    let mut backend = SimBackend::new(profile, Arc::new(clock.clone()), &[pkg0()], 1e-6, u64::MAX);
    // 4 deadlines at 1 Hz: the first initializes, three samples follow
    measure_to_csv(
        &mut backend,
        1.0,
        Some(4),
        Arc::new(clock),
        &path,
        1.0,
        &AtomicBool::new(false),
    )
    .unwrap();

    let bytes = fs::read(&path).unwrap();
    let expected = b"timestamp_ms,mechanism,domain,socket,joules,overflowed\n\
                     2000,sim,package,0,50.000000000,0\n\
                     3000,sim,package,0,50.000000000,0\n\
                     4000,sim,package,0,50.000000000,0\n";
    assert_eq!(
        bytes,
        expected,
        "golden mismatch:\n{}",
        String::from_utf8_lossy(&bytes)
    );
    pass("csv_format_golden (byte-exact three-sample file)");
}

#[test]
fn criterion_report_format() {
    let _serial = serial();
    let rows = vec![StatReport {
        workload: "ep.E".to_string(),
        mechanism: "msr".to_string(),
        frequency_hz: 1000.0,
        pvalue: 0.0006,
        adj_pvalue: 0.004,
        shift: 1.94,
    }];
    let table = emit_report(&rows, ReportFormat::Table);
    assert!(
        table.contains("< 0.01 & < 0.01 & 1.94"),
        "reference row rendered as:\n{table}"
    );
    pass("report_format (reference row renders '< 0.01 & < 0.01 & 1.94')");
}
