//! Command-line front end.
//!
//! Subcommands: `measure` runs the polling loop into a CSV file,
//! `list-domains` shows what each mechanism can see, `check-consistency`
//! compares those lists (disagreement usually means a kernel bug),
//! `bench-latency` times one counter read, `analyze` runs the statistics
//! pipeline over recorded benchmark results.
//!
//! Exit codes are stable: 0 success, 1 failure (including consistency
//! discrepancies), 2 missing privileges, 3 environment problems, 64 usage
//! errors.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::ebpf::SamplerConfig;
use crate::backend::msr::{self, MsrBackend, DEFAULT_MSR_ROOT};
use crate::backend::perf::{self, PerfBackend, DEFAULT_PERF_EVENTS_DIR};
use crate::backend::powercap::{self, PowercapBackend, DEFAULT_POWERCAP_ROOT};
use crate::backend::{ebpf, Backend};
use crate::clock::{Clock, SystemClock};
use crate::correction::wrap_constant_for;
use crate::domain::{
    check_domain_consistency, expected_domains, DomainId, DomainKind, MechanismKind, Topology,
    Vendor,
};
use crate::error::{Error, Result};
use crate::polling::{
    achieved_rate, measure_to_csv, wrap_advisories, PollingConfig, CSV_HEADER, MAX_FREQUENCY_HZ,
};
use crate::sim::{PowerProfile, SimBackend};
use crate::stats::{analyze_runs, emit_report, latency_microbench, parse_runs_csv, ReportFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PRIVILEGE: i32 = 2;
pub const EXIT_ENVIRONMENT: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "raplmeter",
    version,
    about = "CPU energy measurement through RAPL counters",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Poll energy counters at a fixed frequency into a CSV file
    Measure(MeasureArgs),
    /// List the domains each mechanism exposes on this host
    ListDomains(HostArgs),
    /// Compare the domain lists across mechanisms; disagreement exits 1
    CheckConsistency(HostArgs),
    /// Time a single counter read (95% bootstrap confidence interval)
    BenchLatency(BenchLatencyArgs),
    /// Run the overhead statistics pipeline over recorded benchmark runs
    Analyze(AnalyzeArgs),
}

/// Filesystem roots, overridable so fixtures can stand in for the host.
#[derive(Args, Debug, Clone)]
pub struct HostArgs {
    /// Root of the powercap tree
    #[arg(long, default_value = DEFAULT_POWERCAP_ROOT)]
    pub sysfs_root: PathBuf,
    /// Directory containing the per-cpu msr device files
    #[arg(long, default_value = DEFAULT_MSR_ROOT)]
    pub msr_root: PathBuf,
    /// Directory of the perf energy event descriptions
    #[arg(long, default_value = DEFAULT_PERF_EVENTS_DIR)]
    pub perf_events_dir: PathBuf,
    /// Root for topology detection (contains proc/cpuinfo and
    /// sys/devices/system/cpu)
    #[arg(long, default_value = "/")]
    pub host_root: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MechanismArg {
    Msr,
    Powercap,
    Perf,
    Ebpf,
    Sim,
}

impl From<MechanismArg> for MechanismKind {
    fn from(arg: MechanismArg) -> MechanismKind {
        match arg {
            MechanismArg::Msr => MechanismKind::Msr,
            MechanismArg::Powercap => MechanismKind::Powercap,
            MechanismArg::Perf => MechanismKind::PerfUser,
            MechanismArg::Ebpf => MechanismKind::PerfEbpf,
            MechanismArg::Sim => MechanismKind::Simulated,
        }
    }
}

#[derive(Args, Debug)]
pub struct MeasureArgs {
    #[arg(long)]
    pub mechanism: MechanismArg,
    /// Comma-separated domains (pkg,core,uncore,dram,psys) or "all"
    #[arg(long, default_value = "pkg")]
    pub domains: String,
    /// Acquisition frequency in Hz, 0.1 to 1000; 0 means no measurement
    #[arg(long)]
    pub frequency: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Stop after this many seconds (default: run until interrupted)
    #[arg(long)]
    pub duration: Option<f64>,
    /// Seconds between flushes of the output file
    #[arg(long, default_value_t = 1.0)]
    pub flush_interval: f64,
    /// Power profile file driving simulated counters (sim and ebpf)
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Wrap constant of simulated counters (default: no wrapping in
    /// practice)
    #[arg(long)]
    pub sim_wrap: Option<u64>,
    #[command(flatten)]
    pub host: HostArgs,
}

#[derive(Args, Debug)]
pub struct BenchLatencyArgs {
    #[arg(long)]
    pub mechanism: MechanismArg,
    /// Domain kind to read
    #[arg(long, default_value = "pkg")]
    pub domain: String,
    #[arg(long, default_value_t = 0)]
    pub socket: u32,
    #[arg(long, default_value_t = 1000)]
    pub warmup_iters: u64,
    #[arg(long, default_value_t = 10_000)]
    pub sample_iters: u64,
    /// Power profile for the simulated mechanism
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[command(flatten)]
    pub host: HostArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Runs-metadata CSV: workload,mechanism,freq,domain_set,run_id,value
    #[arg(long)]
    pub runs: PathBuf,
    /// A measurement CSV from `measure`, for achieved-rate accounting
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    pub format: FormatArg,
    /// Write the report here instead of standard output
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FormatArg {
    Csv,
    Table,
}

/// Result of argument parsing: a run request, or help/version text that
/// should print and exit 0.
#[derive(Debug)]
pub enum Parsed {
    Run(Box<Cli>),
    Help(String),
}

/// Total: every argv is either a parsed invocation, help text, or a usage
/// error. Never panics.
pub fn parse_args<I, T>(argv: I) -> Result<Parsed>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => Ok(Parsed::Run(Box::new(cli))),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            Ok(Parsed::Help(e.to_string()))
        }
        Err(e) => Err(Error::usage(e.to_string())),
    }
}

/// Entry point used by the binary: parse, run, map errors to exit codes.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(argv) {
        Ok(Parsed::Help(text)) => {
            println!("{text}");
            EXIT_OK
        }
        Ok(Parsed::Run(cli)) => match run_cli(*cli) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Measure(args) => run_measure(args),
        Command::ListDomains(host) => run_list_domains(&host),
        Command::CheckConsistency(host) => run_check_consistency(&host),
        Command::BenchLatency(args) => run_bench_latency(args),
        Command::Analyze(args) => run_analyze(args),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum DomainSelection {
    All,
    Kinds(Vec<DomainKind>),
}

fn parse_domain_selection(s: &str) -> Result<DomainSelection> {
    if s.trim() == "all" {
        return Ok(DomainSelection::All);
    }
    let mut kinds = Vec::new();
    for token in s.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let kind: DomainKind = token.parse()?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(Error::usage(
            "no domains selected; use pkg,core,uncore,dram,psys or 'all'",
        ));
    }
    Ok(DomainSelection::Kinds(kinds))
}

/// `simulated` marks runs that need no real hardware (the sim mechanism,
/// or the sampler protocol fed by a profile-driven producer); those fall
/// back to a one-socket synthetic topology when the host is undetectable.
fn detect_topology(args_host_root: &Path, simulated: bool) -> Result<Topology> {
    match Topology::detect(args_host_root) {
        Ok(t) => Ok(t),
        Err(_) if simulated => Ok(Topology::synthetic(Vendor::Intel, 1, 1)),
        Err(e) => Err(e),
    }
}

fn load_profile(path: &Option<PathBuf>) -> Result<Arc<PowerProfile>> {
    Ok(Arc::new(match path {
        Some(p) => PowerProfile::from_file(p)?,
        // a steady mid-range draw, documented default
        None => PowerProfile::constant(50.0)?,
    }))
}

/// Expands a selection to concrete kinds for one mechanism: `all` means
/// "expected for this CPU and actually discovered", an explicit list is
/// validated against what was discovered.
fn resolve_kinds(
    selection: &DomainSelection,
    topology: &Topology,
    discovered: &BTreeSet<DomainKind>,
) -> Result<Vec<DomainKind>> {
    match selection {
        DomainSelection::All => {
            let expected = expected_domains(topology);
            Ok(expected.intersection(discovered).copied().collect())
        }
        DomainSelection::Kinds(kinds) => {
            for kind in kinds {
                if !discovered.contains(kind) {
                    let available: Vec<&str> = discovered.iter().map(|k| k.as_str()).collect();
                    return Err(Error::env(format!(
                        "domain {kind} is not exposed here (available: {})",
                        available.join(", ")
                    )));
                }
            }
            Ok(kinds.clone())
        }
    }
}

fn kinds_to_domains(kinds: &[DomainKind], topology: &Topology) -> Vec<DomainId> {
    let mut out = Vec::new();
    for &kind in kinds {
        if kind.is_per_socket() {
            for socket in 0..topology.socket_count {
                out.push(DomainId::socketed(kind, socket));
            }
        } else {
            out.push(DomainId::psys());
        }
    }
    out
}

fn run_measure(args: MeasureArgs) -> Result<i32> {
    if !args.frequency.is_finite() || args.frequency < 0.0 || args.frequency > MAX_FREQUENCY_HZ {
        return Err(Error::usage(format!(
            "frequency {} Hz is outside the supported range (0.1 to {MAX_FREQUENCY_HZ} Hz, \
             or 0 for no measurement)",
            args.frequency
        )));
    }
    if args.frequency == 0.0 {
        // "no measurement" arm of a benchmark campaign: header-only file
        fs::write(&args.output, format!("{CSV_HEADER}\n"))?;
        if let Some(seconds) = args.duration {
            std::thread::sleep(std::time::Duration::from_secs_f64(seconds));
        }
        return Ok(EXIT_OK);
    }
    let selection = parse_domain_selection(&args.domains)?;
    let mechanism: MechanismKind = args.mechanism.into();
    let simulated = mechanism == MechanismKind::Simulated
        || (mechanism == MechanismKind::PerfEbpf && args.profile.is_some());
    let topology = detect_topology(&args.host.host_root, simulated)?;

    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let mut backend = build_backend(&args, mechanism, &topology, &selection, &clock)?;

    let config = PollingConfig {
        frequency_hz: args.frequency,
        domains: backend.counters().iter().map(|m| m.domain).collect(),
        mechanism,
        output: args.output.clone(),
        flush_interval_s: args.flush_interval,
        duration_s: args.duration,
    };
    config.validate()?;
    for warning in wrap_advisories(backend.counters(), config.frequency_hz) {
        eprintln!("warning: {warning}");
    }

    let max_ticks = config.max_ticks();
    let stop = stop_signal(max_ticks.is_none())?;

    let outcome = measure_to_csv(
        backend.as_mut(),
        config.frequency_hz,
        max_ticks,
        clock,
        &config.output,
        config.flush_interval_s,
        stop,
    )?;

    let run = &outcome.run;
    eprintln!(
        "done: {} ticks ({} missed), {} samples written, {} dropped, {} invalid, {} overflows, {:.3} s",
        run.ticks,
        run.missed_ticks,
        outcome.writer.rows_written,
        run.samples_dropped,
        run.invalid_reads,
        run.overflows,
        run.duration_ns as f64 / 1e9,
    );
    Ok(EXIT_OK)
}

fn build_backend(
    args: &MeasureArgs,
    mechanism: MechanismKind,
    topology: &Topology,
    selection: &DomainSelection,
    clock: &Arc<dyn Clock>,
) -> Result<Box<dyn Backend>> {
    match mechanism {
        MechanismKind::Powercap => {
            let discovery = powercap::discover_powercap(&args.host.sysfs_root, topology)?;
            for w in &discovery.warnings {
                eprintln!("warning: {w}");
            }
            let discovered: BTreeSet<DomainKind> =
                discovery.nodes.iter().map(|n| n.domain.kind).collect();
            let kinds = resolve_kinds(selection, topology, &discovered)?;
            let nodes: Vec<_> = discovery
                .nodes
                .into_iter()
                .filter(|n| kinds.contains(&n.domain.kind))
                .collect();
            Ok(Box::new(PowercapBackend::new(nodes)))
        }
        MechanismKind::Msr => {
            let layout = msr::msr_layout_for(topology)?;
            let discovered: BTreeSet<DomainKind> =
                layout.counter_addresses.keys().copied().collect();
            let kinds = resolve_kinds(selection, topology, &discovered)?;
            Ok(Box::new(MsrBackend::open(
                &args.host.msr_root,
                topology,
                &kinds,
            )?))
        }
        MechanismKind::PerfUser => {
            let discovery = perf::discover_perf_events(&args.host.perf_events_dir)?;
            for w in &discovery.warnings {
                eprintln!("warning: {w}");
            }
            let discovered: BTreeSet<DomainKind> = discovery.specs.iter().map(|s| s.kind).collect();
            let kinds = resolve_kinds(selection, topology, &discovered)?;
            let specs: Vec<_> = discovery
                .specs
                .into_iter()
                .filter(|s| kinds.contains(&s.kind))
                .collect();
            let opener = kernel_perf_opener(&args.host.perf_events_dir)?;
            let mut backend = PerfBackend::new(topology.clone());
            backend.open_all(&specs, opener.as_ref())?;
            Ok(Box::new(backend))
        }
        MechanismKind::PerfEbpf => {
            let Some(_) = args.profile else {
                // the in-kernel producer is platform-gated out of this build
                return ebpf::SamplerSession::start(
                    SamplerConfig::new(vec![], 1000, args.frequency),
                    ebpf::ProducerKind::Kernel,
                )
                .map(|_| unreachable!("kernel sampler cannot start here"));
            };
            let profile = load_profile(&args.profile)?;
            let kinds = match selection {
                DomainSelection::All => expected_domains(topology).into_iter().collect::<Vec<_>>(),
                DomainSelection::Kinds(kinds) => kinds.clone(),
            };
            let domains = kinds_to_domains(&kinds, topology);
            let unit = (2.0f64).powi(-32);
            let wrap = wrap_constant_for(MechanismKind::PerfEbpf, None)?;
            let config = SamplerConfig::new(domains.clone(), 1000, args.frequency);
            let session =
                crate::sim::start_simulated_sampler(profile, config, clock.now_ns(), unit, wrap)?;
            eprintln!("note: ebpf session backed by the simulated producer (profile-driven)");
            let units = vec![unit; domains.len()];
            let wraps = vec![wrap; domains.len()];
            Ok(Box::new(ebpf::EbpfBackend::new(session, &units, &wraps)))
        }
        MechanismKind::Simulated => {
            let profile = load_profile(&args.profile)?;
            let kinds = match selection {
                DomainSelection::All => expected_domains(topology).into_iter().collect::<Vec<_>>(),
                DomainSelection::Kinds(kinds) => kinds.clone(),
            };
            let domains = kinds_to_domains(&kinds, topology);
            let wrap = wrap_constant_for(MechanismKind::Simulated, args.sim_wrap)?;
            Ok(Box::new(SimBackend::new(
                profile,
                clock.clone(),
                &domains,
                1e-6,
                wrap,
            )))
        }
    }
}

#[cfg(target_os = "linux")]
fn kernel_perf_opener(events_dir: &Path) -> Result<Box<dyn perf::PerfEventOpener>> {
    Ok(Box::new(perf::KernelPerfOpener::from_events_dir(
        events_dir,
    )?))
}

#[cfg(not(target_os = "linux"))]
fn kernel_perf_opener(_events_dir: &Path) -> Result<Box<dyn perf::PerfEventOpener>> {
    Err(Error::UnsupportedMechanism(
        "perf-events requires a Linux kernel".to_string(),
    ))
}

#[cfg(target_os = "linux")]
fn stop_signal(install_sigint: bool) -> Result<&'static AtomicBool> {
    static STOP: AtomicBool = AtomicBool::new(false);
    if install_sigint {
        extern "C" fn on_sigint(_signal: libc::c_int) {
            STOP.store(true, std::sync::atomic::Ordering::SeqCst);
        }
        unsafe {
            let handler: extern "C" fn(libc::c_int) = on_sigint;
            libc::signal(libc::SIGINT, handler as usize as libc::sighandler_t);
        }
        eprintln!("measuring until Ctrl-C...");
    }
    Ok(&STOP)
}

#[cfg(not(target_os = "linux"))]
fn stop_signal(install_sigint: bool) -> Result<&'static AtomicBool> {
    static STOP: AtomicBool = AtomicBool::new(false);
    if install_sigint {
        return Err(Error::usage(
            "open-ended runs need --duration on this platform",
        ));
    }
    Ok(&STOP)
}

type DomainSets = BTreeMap<MechanismKind, BTreeSet<DomainId>>;

/// Domain lists per mechanism, as far as each can tell without privileges:
/// powercap and perf from their discovery surfaces, msr from the vendor's
/// address table (present only when the device files exist).
fn discover_domain_sets(host: &HostArgs) -> Result<(DomainSets, Vec<String>)> {
    let topology = Topology::detect(&host.host_root)?;
    let mut sets = BTreeMap::new();
    let mut notes = Vec::new();

    match powercap::discover_powercap(&host.sysfs_root, &topology) {
        Ok(d) => {
            notes.extend(d.warnings);
            sets.insert(
                MechanismKind::Powercap,
                d.nodes.iter().map(|n| n.domain).collect(),
            );
        }
        Err(e) => notes.push(format!("powercap unavailable: {e}")),
    }

    match perf::discover_perf_events(&host.perf_events_dir) {
        Ok(d) => {
            notes.extend(d.warnings);
            let kinds: Vec<DomainKind> = d.specs.iter().map(|s| s.kind).collect();
            sets.insert(
                MechanismKind::PerfUser,
                kinds_to_domains(&kinds, &topology).into_iter().collect(),
            );
        }
        Err(e) => notes.push(format!("perf-events unavailable: {e}")),
    }

    let msr_device_present = topology
        .first_cpu_of(0)
        .map(|cpu| host.msr_root.join(cpu.to_string()).join("msr").exists())
        .unwrap_or(false);
    if msr_device_present {
        match msr::msr_layout_for(&topology) {
            Ok(layout) => {
                let kinds: Vec<DomainKind> = layout.counter_addresses.keys().copied().collect();
                sets.insert(
                    MechanismKind::Msr,
                    kinds_to_domains(&kinds, &topology).into_iter().collect(),
                );
            }
            Err(e) => notes.push(format!("msr unavailable: {e}")),
        }
    } else {
        notes.push(format!(
            "msr unavailable: no device under {}",
            host.msr_root.display()
        ));
    }

    Ok((sets, notes))
}

fn run_list_domains(host: &HostArgs) -> Result<i32> {
    let (sets, notes) = discover_domain_sets(host)?;
    for note in &notes {
        eprintln!("note: {note}");
    }
    if sets.is_empty() {
        return Err(Error::env(
            "no mechanism could list any domains on this host".to_string(),
        ));
    }
    for (mechanism, domains) in &sets {
        let names: Vec<String> = domains.iter().map(|d| d.to_string()).collect();
        println!("{mechanism}: {}", names.join(" "));
    }
    Ok(EXIT_OK)
}

fn run_check_consistency(host: &HostArgs) -> Result<i32> {
    let (sets, notes) = discover_domain_sets(host)?;
    for note in &notes {
        eprintln!("note: {note}");
    }
    let discrepancies = check_domain_consistency(&sets)?;
    if discrepancies.is_empty() {
        println!("mechanisms agree on {} domain(s)", union_size(&sets));
        return Ok(EXIT_OK);
    }
    for d in &discrepancies {
        println!("discrepancy: {d}");
    }
    eprintln!(
        "{} discrepancies; a mechanism (or the kernel behind it) is lying",
        discrepancies.len()
    );
    Ok(EXIT_FAILURE)
}

fn union_size(sets: &DomainSets) -> usize {
    let mut union = BTreeSet::new();
    for set in sets.values() {
        union.extend(set.iter().copied());
    }
    union.len()
}

fn run_bench_latency(args: BenchLatencyArgs) -> Result<i32> {
    let mechanism: MechanismKind = args.mechanism.into();
    let kind: DomainKind = args.domain.parse()?;
    let clock = SystemClock::new();
    let topology = detect_topology(&args.host.host_root, mechanism == MechanismKind::Simulated)?;

    let mut read_fn = build_read_fn(&args, mechanism, kind, &topology)?;
    let report = latency_microbench(
        read_fn.as_mut(),
        args.warmup_iters,
        args.sample_iters,
        &clock,
    )?;
    if let Some(note) = &report.aborted {
        eprintln!("warning: {note}");
    }
    println!(
        "{mechanism} {kind}: [{:.4}, {:.4}] us per read (95% CI, {} batches of {})",
        report.ci_low_us, report.ci_high_us, report.batch_count, report.iters_per_batch
    );
    Ok(EXIT_OK)
}

type ReadFn = Box<dyn FnMut() -> Result<u64>>;

fn build_read_fn(
    args: &BenchLatencyArgs,
    mechanism: MechanismKind,
    kind: DomainKind,
    topology: &Topology,
) -> Result<ReadFn> {
    match mechanism {
        MechanismKind::Powercap => {
            let discovery = powercap::discover_powercap(&args.host.sysfs_root, topology)?;
            let node = discovery
                .nodes
                .into_iter()
                .find(|n| n.domain.kind == kind && n.domain.socket == Some(args.socket))
                .ok_or_else(|| {
                    Error::env(format!("powercap does not expose {kind}{}", args.socket))
                })?;
            Ok(Box::new(move || powercap::read_powercap(&node)))
        }
        MechanismKind::Msr => {
            let layout = msr::msr_layout_for(topology)?;
            let address = *layout
                .counter_addresses
                .get(&kind)
                .ok_or_else(|| Error::usage(format!("{kind} has no MSR on this vendor")))?;
            let cpu = topology
                .first_cpu_of(args.socket)
                .ok_or_else(|| Error::usage(format!("no socket {}", args.socket)))?;
            let path = args.host.msr_root.join(cpu.to_string()).join("msr");
            let device = fs::File::open(&path)
                .map_err(|e| Error::env(format!("cannot open {}: {e}", path.display())))?;
            Ok(Box::new(move || msr::read_msr_counter(&device, address)))
        }
        MechanismKind::PerfUser => {
            let discovery = perf::discover_perf_events(&args.host.perf_events_dir)?;
            let spec = discovery
                .specs
                .into_iter()
                .find(|s| s.kind == kind)
                .ok_or_else(|| Error::env(format!("perf does not expose {kind}")))?;
            let opener = kernel_perf_opener(&args.host.perf_events_dir)?;
            let cpu = topology
                .first_cpu_of(args.socket)
                .ok_or_else(|| Error::usage(format!("no socket {}", args.socket)))?;
            let mut handle = opener.open(&spec, cpu)?;
            Ok(Box::new(move || handle.read_raw()))
        }
        MechanismKind::PerfEbpf => Err(Error::UnsupportedMechanism(
            "the sampler reads counters in the kernel; its per-read cost is not \
             observable from user space"
                .to_string(),
        )),
        MechanismKind::Simulated => {
            let profile = load_profile(&args.profile)?;
            let clock = SystemClock::new();
            let origin_ns = clock.now_ns();
            let domain = if kind.is_per_socket() {
                DomainId::socketed(kind, args.socket)
            } else {
                DomainId::psys()
            };
            Ok(Box::new(move || {
                let t_s = clock.now_ns().saturating_sub(origin_ns) as f64 / 1e9;
                Ok(profile.counter_value(domain, t_s, 1e-6, 1u128 << 64))
            }))
        }
    }
}

fn run_analyze(args: AnalyzeArgs) -> Result<i32> {
    let text = fs::read_to_string(&args.runs)
        .map_err(|e| Error::env(format!("cannot read {}: {e}", args.runs.display())))?;
    let records = parse_runs_csv(&text)?;
    let outcome = analyze_runs(&records)?;
    for line in &outcome.metadata {
        eprintln!("note: {line}");
    }

    if let Some(measurements) = &args.measurements {
        match measurement_timestamps(measurements) {
            Ok(timestamps) => match achieved_rate(&timestamps, true) {
                Ok((mean, std)) => {
                    eprintln!("note: achieved rate {mean:.1} Hz (per-second std {std:.2})")
                }
                Err(e) => eprintln!("note: achieved-rate accounting skipped: {e}"),
            },
            Err(e) => eprintln!("note: measurements CSV unusable: {e}"),
        }
    }

    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Table => ReportFormat::Table,
    };
    let report = emit_report(&outcome.rows, format);
    match &args.report {
        Some(path) => fs::write(path, report)?,
        None => print!("{report}"),
    }
    Ok(EXIT_OK)
}

/// Pulls the timestamp column out of a measurement CSV.
fn measurement_timestamps(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::env(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => {
            return Err(Error::usage(format!(
                "not a measurement CSV (header {other:?})"
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let ms: u64 = line
            .split(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::usage(format!("bad measurement row {line:?}")))?;
        out.push(ms * 1_000_000);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Parsed> {
        parse_args(std::iter::once("raplmeter").chain(args.iter().copied()))
    }

    #[test]
    fn valid_measure_invocation_parses() {
        let parsed = parse(&[
            "measure",
            "--mechanism",
            "powercap",
            "--domains",
            "pkg",
            "--frequency",
            "10",
            "--output",
            "out.csv",
        ])
        .unwrap();
        let Parsed::Run(cli) = parsed else {
            panic!("expected a run");
        };
        let Command::Measure(args) = cli.command else {
            panic!("expected measure");
        };
        assert_eq!(args.frequency, 10.0);
        assert_eq!(args.flush_interval, 1.0);
    }

    #[test]
    fn unknown_mechanism_is_a_usage_error() {
        let err = parse(&[
            "measure",
            "--mechanism",
            "foo",
            "--frequency",
            "10",
            "--output",
            "o",
        ])
        .unwrap_err();
        match err {
            Error::Usage(msg) => assert!(msg.contains("possible values"), "{msg}"),
            other => panic!("expected usage error, got {other:?}"),
        }
    }

    #[test]
    fn help_is_not_an_error() {
        assert!(matches!(parse(&["--help"]), Ok(Parsed::Help(_))));
        assert!(matches!(parse(&["measure", "--help"]), Ok(Parsed::Help(_))));
    }

    #[test]
    fn domain_tokens() {
        assert_eq!(
            parse_domain_selection("pkg,dram").unwrap(),
            DomainSelection::Kinds(vec![DomainKind::Package, DomainKind::Dram])
        );
        assert_eq!(parse_domain_selection("all").unwrap(), DomainSelection::All);
        assert!(parse_domain_selection("pkg,bogus").is_err());
        assert!(parse_domain_selection("").is_err());
    }

    #[test]
    fn arbitrary_argv_never_panics() {
        for argv in [
            vec![],
            vec!["--frequency"],
            vec!["measure"],
            vec!["measure", "--frequency", "NaN"],
            vec!["bench-latency", "--mechanism"],
            vec!["analyze"],
            vec!["no-such-command", "--x"],
            vec!["measure", "--mechanism", "sim", "--frequency"],
        ] {
            let _ = parse(&argv);
        }
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(Error::usage("x").exit_code(), EXIT_USAGE);
        assert_eq!(
            Error::privilege("CAP_X", "read").exit_code(),
            EXIT_PRIVILEGE
        );
        assert_eq!(Error::env("x").exit_code(), EXIT_ENVIRONMENT);
        assert_eq!(
            Error::UnsupportedMechanism("x".to_string()).exit_code(),
            EXIT_ENVIRONMENT
        );
        assert_eq!(
            Error::CorruptedCounter("x".to_string()).exit_code(),
            EXIT_FAILURE
        );
    }
}
