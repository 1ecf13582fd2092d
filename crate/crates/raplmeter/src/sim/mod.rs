//! Simulated measurement host.
//!
//! A [`PowerProfile`] describes a synthetic power draw P(t); its exact
//! integral is the ground-truth energy every simulated surface derives its
//! counter values from, and the oracle end-to-end tests compare against.
//! The profile can be materialized as each mechanism's native surface: a
//! powercap file tree, an MSR device image, perf-style counters, or a
//! sampler producer — all returning `floor(energy(t)/unit) mod modulus` at
//! query time `t`, so wraps happen exactly like on real counters (just as
//! fast or as slow as the profile makes them).
//!
//! Driven by a [`VirtualClock`](crate::clock::VirtualClock), everything is
//! deterministic and instant; with the system clock the simulated backend
//! doubles as a wall-clock load generator for soak and timing tests.

pub mod fixtures;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::backend::ebpf::{
    dispatch_fill, RecordProducer, RingBuffer, SampleRecord, SamplerConfig, SamplerSession,
};
use crate::backend::{Backend, CounterMeta, RawReading};
use crate::clock::Clock;
use crate::domain::{DomainId, DomainKind, MechanismKind, Topology};
use crate::error::{Error, Result};

/// The shape of the synthetic power draw, before per-domain weighting.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerShape {
    /// Constant draw in watts.
    Constant(f64),
    /// Alternates `low` then `high`, each for half the period.
    Square {
        period_s: f64,
        low_w: f64,
        high_w: f64,
    },
    /// Linear from `start` to `end` over `duration_s`, then holds `end`.
    Ramp {
        start_w: f64,
        end_w: f64,
        duration_s: f64,
    },
    /// Piecewise-constant segments `(duration_s, watts)`; holds the last
    /// segment's level beyond the end.
    Segments(Vec<(f64, f64)>),
}

impl PowerShape {
    /// Exact integral of the shape over [0, t], in joules.
    fn energy_j(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        match self {
            PowerShape::Constant(w) => w * t,
            PowerShape::Square {
                period_s,
                low_w,
                high_w,
            } => {
                let half = period_s / 2.0;
                let per_period = (low_w + high_w) * half;
                let full = (t / period_s).floor();
                let rem = t - full * period_s;
                let partial = if rem <= half {
                    low_w * rem
                } else {
                    low_w * half + high_w * (rem - half)
                };
                full * per_period + partial
            }
            PowerShape::Ramp {
                start_w,
                end_w,
                duration_s,
            } => {
                if t <= *duration_s {
                    start_w * t + (end_w - start_w) * t * t / (2.0 * duration_s)
                } else {
                    (start_w + end_w) * duration_s / 2.0 + end_w * (t - duration_s)
                }
            }
            PowerShape::Segments(segments) => {
                let mut energy = 0.0;
                let mut elapsed = 0.0;
                let mut last_w = 0.0;
                for &(duration, watts) in segments {
                    last_w = watts;
                    if t <= elapsed + duration {
                        return energy + watts * (t - elapsed);
                    }
                    energy += watts * duration;
                    elapsed += duration;
                }
                energy + last_w * (t - elapsed)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::usage(format!("invalid power shape: {msg}")));
        match self {
            PowerShape::Constant(w) if *w < 0.0 => bad("negative watts"),
            PowerShape::Square {
                period_s,
                low_w,
                high_w,
            } if *period_s <= 0.0 || *low_w < 0.0 || *high_w < 0.0 => {
                bad("square wave needs a positive period and non-negative levels")
            }
            PowerShape::Ramp {
                start_w,
                end_w,
                duration_s,
            } if *duration_s <= 0.0 || *start_w < 0.0 || *end_w < 0.0 => {
                bad("ramp needs a positive duration and non-negative levels")
            }
            PowerShape::Segments(segments) => {
                if segments.is_empty() {
                    return bad("no segments");
                }
                if segments.iter().any(|(d, w)| *d <= 0.0 || *w < 0.0) {
                    return bad("segments need positive durations and non-negative watts");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A synthetic host power draw with per-domain weighting.
///
/// Each domain sees `weight(kind) * E(t)` where E is the shape's integral.
/// Per-socket domains of the same kind see the same energy. The core and
/// uncore weights must not sum above 1, since both are subsets of the
/// package.
#[derive(Debug, Clone)]
pub struct PowerProfile {
    shape: PowerShape,
    weights: BTreeMap<DomainKind, f64>,
}

fn default_weights() -> BTreeMap<DomainKind, f64> {
    [
        (DomainKind::Package, 1.0),
        (DomainKind::Core, 0.4),
        (DomainKind::Uncore, 0.2),
        (DomainKind::Dram, 0.3),
        (DomainKind::Psys, 1.5),
    ]
    .into_iter()
    .collect()
}

impl PowerProfile {
    pub fn new(shape: PowerShape) -> Result<PowerProfile> {
        shape.validate()?;
        Ok(PowerProfile {
            shape,
            weights: default_weights(),
        })
    }

    /// Constant draw with package weight 1, the most common test profile.
    pub fn constant(watts: f64) -> Result<PowerProfile> {
        PowerProfile::new(PowerShape::Constant(watts))
    }

    pub fn with_weight(mut self, kind: DomainKind, weight: f64) -> Result<PowerProfile> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::usage(format!("weight for {kind} must be >= 0")));
        }
        self.weights.insert(kind, weight);
        let core = self.weights.get(&DomainKind::Core).copied().unwrap_or(0.0);
        let uncore = self
            .weights
            .get(&DomainKind::Uncore)
            .copied()
            .unwrap_or(0.0);
        if core + uncore > 1.0 + 1e-9 {
            return Err(Error::usage(format!(
                "core ({core}) + uncore ({uncore}) weights exceed 1: both are subsets of the package"
            )));
        }
        Ok(self)
    }

    pub fn weight(&self, kind: DomainKind) -> f64 {
        self.weights.get(&kind).copied().unwrap_or(0.0)
    }

    /// Exact energy consumed by `domain` over `[t0_s, t1_s]`, in joules.
    pub fn ground_truth_energy(&self, domain: DomainId, t0_s: f64, t1_s: f64) -> Result<f64> {
        if t1_s < t0_s || t0_s < 0.0 {
            return Err(Error::usage(format!("invalid interval [{t0_s}, {t1_s}]")));
        }
        let w = self.weight(domain.kind);
        Ok(w * (self.shape.energy_j(t1_s) - self.shape.energy_j(t0_s)))
    }

    /// The raw counter value a simulated surface publishes for `domain` at
    /// time `t_s`: `floor(energy/unit) mod modulus`. The modulus is one
    /// past the wrap constant, so it can be `2^64` (hence `u128`).
    pub fn counter_value(&self, domain: DomainId, t_s: f64, unit: f64, modulus: u128) -> u64 {
        assert!(modulus >= 2, "modulus must be at least 2");
        assert!(unit > 0.0, "unit must be positive");
        let energy = self.weight(domain.kind) * self.shape.energy_j(t_s);
        let ticks = (energy / unit).floor() as u128;
        (ticks % modulus) as u64
    }

    /// Parses the profile descriptor format: one directive per line.
    ///
    /// ```text
    /// # comment
    /// waveform constant 100
    /// waveform square <period_s> <low_w> <high_w>
    /// waveform ramp <start_w> <end_w> <duration_s>
    /// weight package 1.0
    /// <duration_s> <watts>      (segment line)
    /// ```
    ///
    /// A profile uses either one `waveform` line or segment lines, not both.
    pub fn parse(text: &str) -> Result<PowerProfile> {
        let mut waveform: Option<PowerShape> = None;
        let mut segments: Vec<(f64, f64)> = Vec::new();
        let mut weights: Vec<(DomainKind, f64)> = Vec::new();

        for (idx, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| Error::usage(format!("profile line {}: {msg}", idx + 1));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "waveform" => {
                    if waveform.is_some() {
                        return Err(at("more than one waveform line".into()));
                    }
                    let nums: Vec<f64> = tokens[2..]
                        .iter()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| at(format!("bad number in {line:?}")))?;
                    let shape = match (tokens.get(1).copied(), nums.as_slice()) {
                        (Some("constant"), [w]) => PowerShape::Constant(*w),
                        (Some("square"), [p, lo, hi]) => PowerShape::Square {
                            period_s: *p,
                            low_w: *lo,
                            high_w: *hi,
                        },
                        (Some("ramp"), [s, e, d]) => PowerShape::Ramp {
                            start_w: *s,
                            end_w: *e,
                            duration_s: *d,
                        },
                        _ => {
                            return Err(at(format!(
                                "expected 'constant <w>', 'square <period> <low> <high>' \
                                 or 'ramp <start> <end> <duration>', got {line:?}"
                            )))
                        }
                    };
                    waveform = Some(shape);
                }
                "weight" => {
                    let (Some(kind), Some(value)) = (tokens.get(1), tokens.get(2)) else {
                        return Err(at("expected 'weight <domain> <fraction>'".into()));
                    };
                    let kind: DomainKind = kind.parse()?;
                    let value: f64 = value
                        .parse()
                        .map_err(|_| at(format!("bad weight {value:?}")))?;
                    weights.push((kind, value));
                }
                _ => {
                    // segment line: <duration_s> <watts>
                    let parsed: Option<(f64, f64)> = match tokens.as_slice() {
                        [d, w] => d.parse().ok().zip(w.parse().ok()),
                        _ => None,
                    };
                    let Some(segment) = parsed else {
                        return Err(at(format!(
                            "expected '<duration_s> <watts>' or a directive, got {line:?}"
                        )));
                    };
                    segments.push(segment);
                }
            }
        }

        let shape = match (waveform, segments.is_empty()) {
            (Some(_), false) => {
                return Err(Error::usage(
                    "profile mixes a waveform line with segment lines; use one or the other",
                ))
            }
            (Some(shape), true) => shape,
            (None, false) => PowerShape::Segments(segments),
            (None, true) => return Err(Error::usage("profile describes no power shape")),
        };
        let mut profile = PowerProfile::new(shape)?;
        for (kind, value) in weights {
            profile = profile.with_weight(kind, value)?;
        }
        Ok(profile)
    }

    pub fn from_file(path: &Path) -> Result<PowerProfile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::env(format!("cannot read profile {}: {e}", path.display())))?;
        PowerProfile::parse(&text)
    }
}

/// In-memory simulated backend: counters computed straight from the
/// profile at poll time. No files involved, so it works with the system
/// clock as well as a virtual one.
///
/// The profile's t = 0 is the moment the backend is created; a monotonic
/// clock's zero point is arbitrary (machine boot, usually) and must not
/// leak into the profile timeline.
pub struct SimBackend {
    profile: Arc<PowerProfile>,
    origin_ns: u64,
    meta: Vec<CounterMeta>,
    modulus: u128,
}

impl SimBackend {
    /// `wrap_constant` is the simulation's configured wrap constant; the
    /// published values live in `[0, wrap_constant]`.
    pub fn new(
        profile: Arc<PowerProfile>,
        clock: Arc<dyn Clock>,
        domains: &[DomainId],
        unit_joules_per_lsb: f64,
        wrap_constant: u64,
    ) -> SimBackend {
        let meta = domains
            .iter()
            .map(|&domain| CounterMeta {
                domain,
                mechanism: MechanismKind::Simulated,
                unit_joules_per_lsb,
                wrap_constant,
            })
            .collect();
        SimBackend {
            profile,
            origin_ns: clock.now_ns(),
            meta,
            modulus: wrap_constant as u128 + 1,
        }
    }
}

impl Backend for SimBackend {
    fn mechanism(&self) -> MechanismKind {
        MechanismKind::Simulated
    }

    fn counters(&self) -> &[CounterMeta] {
        &self.meta
    }

    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()> {
        let t_s = now_ns.saturating_sub(self.origin_ns) as f64 / 1e9;
        for (i, meta) in self.meta.iter().enumerate() {
            let raw = self.profile.counter_value(
                meta.domain,
                t_s,
                meta.unit_joules_per_lsb,
                self.modulus,
            );
            out.push(RawReading::ok(i, now_ns, raw));
        }
        Ok(())
    }
}

/// Simulated sampler producer: appends one record per kernel-rate tick,
/// with counter values computed from the profile at the tick's timestamp.
/// Implements the same dispatch-by-domain-count record layout as the
/// kernel-side program.
pub struct SimulatedRaplProducer {
    profile: Arc<PowerProfile>,
    domains: Vec<DomainId>,
    unit: f64,
    modulus: u128,
    origin_ns: u64,
    period_ns: u64,
    next_tick: u64,
}

impl SimulatedRaplProducer {
    pub fn new(
        profile: Arc<PowerProfile>,
        domains: Vec<DomainId>,
        kernel_rate_hz: u32,
        origin_ns: u64,
        unit: f64,
        wrap_constant: u64,
    ) -> SimulatedRaplProducer {
        SimulatedRaplProducer {
            profile,
            domains,
            unit,
            modulus: wrap_constant as u128 + 1,
            origin_ns,
            period_ns: 1_000_000_000 / kernel_rate_hz as u64,
            next_tick: 1,
        }
    }
}

impl RecordProducer for SimulatedRaplProducer {
    fn pump(&mut self, now_ns: u64, ring: &RingBuffer) -> Result<()> {
        loop {
            let ts = self.origin_ns + self.next_tick * self.period_ns;
            if ts > now_ns {
                return Ok(());
            }
            // record timestamps are on the clock's timeline; the profile's
            // timeline starts at the producer's origin
            let t_s = (self.next_tick * self.period_ns) as f64 / 1e9;
            let values = dispatch_fill(self.domains.len(), |i| {
                self.profile
                    .counter_value(self.domains[i], t_s, self.unit, self.modulus)
            });
            ring.push_overwrite(SampleRecord {
                timestamp_ns: ts,
                values,
            });
            self.next_tick += 1;
        }
    }
}

/// Starts a sampler session fed by a [`SimulatedRaplProducer`].
pub fn start_simulated_sampler(
    profile: Arc<PowerProfile>,
    config: SamplerConfig,
    origin_ns: u64,
    unit: f64,
    wrap_constant: u64,
) -> Result<SamplerSession> {
    let producer = SimulatedRaplProducer::new(
        profile,
        config.domains.clone(),
        config.kernel_rate_hz,
        origin_ns,
        unit,
        wrap_constant,
    );
    SamplerSession::start_with_producer(config, Box::new(producer))
}

/// Which fake measurement surface to materialize from a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    PowercapTree,
    MsrImage,
    PerfSim,
    EbpfSim,
}

/// Knobs for [`materialize`]; the defaults mirror common real hardware.
pub struct MaterializeOptions {
    pub topology: Topology,
    pub clock: Arc<dyn Clock>,
    pub kinds: Vec<DomainKind>,
    /// Wrap constant of powercap nodes (`max_energy_range_uj`).
    pub powercap_max_uj: u64,
    /// Energy status unit exponent encoded into MSR images.
    pub esu: u8,
    /// Scale of simulated perf events.
    pub perf_scale: f64,
    pub kernel_rate_hz: u32,
    pub drain_rate_hz: f64,
}

impl MaterializeOptions {
    pub fn new(topology: Topology, clock: Arc<dyn Clock>) -> MaterializeOptions {
        MaterializeOptions {
            topology,
            clock,
            kinds: vec![DomainKind::Package],
            powercap_max_uj: 262_143_328_850,
            esu: 16,
            perf_scale: (2.0f64).powi(-32),
            kernel_rate_hz: 1000,
            drain_rate_hz: 10.0,
        }
    }

    fn domains(&self) -> Vec<DomainId> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            if kind.is_per_socket() {
                for socket in 0..self.topology.socket_count {
                    out.push(DomainId::socketed(kind, socket));
                }
            } else {
                out.push(DomainId::psys());
            }
        }
        out
    }
}

/// A materialized surface, ready to be read by its backend.
pub enum Materialized {
    Powercap(Arc<fixtures::PowercapFixture>),
    Msr(Arc<fixtures::MsrFixture>),
    Perf {
        events_dir: std::path::PathBuf,
        opener: fixtures::SimPerfOpener,
    },
    Ebpf(SamplerSession),
}

/// Creates a fake measurement surface under `dir` (ignored for the sampler,
/// which has no file representation). File surfaces return fixture handles
/// whose `refresh_at` rewrites counters for a given time; attach them to a
/// virtual clock to keep them current automatically.
pub fn materialize(
    profile: &Arc<PowerProfile>,
    surface: Surface,
    dir: &Path,
    opts: &MaterializeOptions,
) -> Result<Materialized> {
    match surface {
        Surface::PowercapTree => {
            let fixture = fixtures::PowercapFixture::create(
                dir,
                profile.clone(),
                &opts.topology,
                &opts.kinds,
                opts.powercap_max_uj,
            )?;
            Ok(Materialized::Powercap(Arc::new(fixture)))
        }
        Surface::MsrImage => {
            let fixture = fixtures::MsrFixture::create(
                dir,
                profile.clone(),
                opts.topology.clone(),
                &opts.kinds,
                opts.esu,
            )?;
            Ok(Materialized::Msr(Arc::new(fixture)))
        }
        Surface::PerfSim => {
            fixtures::write_perf_events_dir(dir, &opts.kinds, opts.perf_scale)?;
            let opener = fixtures::SimPerfOpener::new(
                profile.clone(),
                opts.clock.clone(),
                opts.topology.clone(),
            );
            Ok(Materialized::Perf {
                events_dir: dir.to_path_buf(),
                opener,
            })
        }
        Surface::EbpfSim => {
            let config =
                SamplerConfig::new(opts.domains(), opts.kernel_rate_hz, opts.drain_rate_hz);
            let session = start_simulated_sampler(
                profile.clone(),
                config,
                opts.clock.now_ns(),
                opts.perf_scale,
                u64::MAX,
            )?;
            Ok(Materialized::Ebpf(session))
        }
    }
}
