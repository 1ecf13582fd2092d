//! RAPL domain taxonomy, CPU topology and mechanism identifiers.
//!
//! A *domain* is a hardware scope with its own energy counter. The five
//! known kinds form a small hierarchy: `core` and `uncore` are subsets of
//! `package`, `dram` sits next to the package of its socket, and `psys`
//! covers the whole platform (on machines that expose it, it matches an
//! external wattmeter). All kinds except `psys` exist once per socket.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One of the five RAPL domain kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainKind {
    Package,
    Core,
    Uncore,
    Dram,
    Psys,
}

impl DomainKind {
    pub const ALL: [DomainKind; 5] = [
        DomainKind::Package,
        DomainKind::Core,
        DomainKind::Uncore,
        DomainKind::Dram,
        DomainKind::Psys,
    ];

    /// Parent in the domain hierarchy: core and uncore are subsets of the
    /// package, package and dram roll up into psys, psys is the root.
    pub fn parent(self) -> Option<DomainKind> {
        match self {
            DomainKind::Core | DomainKind::Uncore => Some(DomainKind::Package),
            DomainKind::Package | DomainKind::Dram => Some(DomainKind::Psys),
            DomainKind::Psys => None,
        }
    }

    /// True for kinds that are tied to a CPU socket (all but psys).
    pub fn is_per_socket(self) -> bool {
        !matches!(self, DomainKind::Psys)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::Package => "package",
            DomainKind::Core => "core",
            DomainKind::Uncore => "uncore",
            DomainKind::Dram => "dram",
            DomainKind::Psys => "psys",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "package" | "pkg" => Ok(DomainKind::Package),
            "core" | "cores" => Ok(DomainKind::Core),
            "uncore" | "gpu" => Ok(DomainKind::Uncore),
            "dram" | "ram" => Ok(DomainKind::Dram),
            "psys" | "platform" => Ok(DomainKind::Psys),
            other => Err(Error::usage(format!(
                "unknown domain '{other}', expected one of: pkg, core, uncore, dram, psys"
            ))),
        }
    }
}

/// One concrete domain instance: a kind plus the socket that hosts it.
/// `socket` is `None` exactly for psys, which is unique system-wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DomainId {
    pub kind: DomainKind,
    pub socket: Option<u32>,
}

impl DomainId {
    /// A per-socket domain. Panics if `kind` is psys, which has no socket.
    pub fn socketed(kind: DomainKind, socket: u32) -> DomainId {
        assert!(kind.is_per_socket(), "psys has no socket");
        DomainId {
            kind,
            socket: Some(socket),
        }
    }

    pub fn psys() -> DomainId {
        DomainId {
            kind: DomainKind::Psys,
            socket: None,
        }
    }

    /// Checks the socket-presence rule and the socket bound against a topology.
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        match (self.kind.is_per_socket(), self.socket) {
            (true, Some(s)) if s < topology.socket_count => Ok(()),
            (true, Some(s)) => Err(Error::usage(format!(
                "socket {s} out of range, host has {} socket(s)",
                topology.socket_count
            ))),
            (true, None) => Err(Error::usage(format!(
                "domain {} requires a socket",
                self.kind
            ))),
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::usage("psys does not take a socket")),
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.socket {
            Some(s) => write!(f, "{}{}", self.kind, s),
            None => write!(f, "{}", self.kind),
        }
    }
}

/// CPU vendor, as far as RAPL support is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Vendor {
    Intel,
    Amd,
    Other,
}

/// How the counters are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MechanismKind {
    /// Raw model-specific registers through `/dev/cpu/N/msr`.
    Msr,
    /// The powercap sysfs tree (`intel-rapl`).
    Powercap,
    /// perf-events counting events read from user space.
    PerfUser,
    /// perf-events read by a kernel-side clock-triggered sampler and
    /// drained from a shared buffer.
    PerfEbpf,
    /// Synthetic counters driven by a power profile. Never reported under
    /// a hardware mechanism's name.
    Simulated,
}

impl MechanismKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MechanismKind::Msr => "msr",
            MechanismKind::Powercap => "powercap",
            MechanismKind::PerfUser => "perf",
            MechanismKind::PerfEbpf => "ebpf",
            MechanismKind::Simulated => "sim",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msr" => Ok(MechanismKind::Msr),
            "powercap" => Ok(MechanismKind::Powercap),
            "perf" => Ok(MechanismKind::PerfUser),
            "ebpf" => Ok(MechanismKind::PerfEbpf),
            "sim" => Ok(MechanismKind::Simulated),
            other => Err(Error::usage(format!(
                "unknown mechanism '{other}', expected one of: msr, powercap, perf, ebpf, sim"
            ))),
        }
    }
}

/// Immutable description of the host CPUs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub socket_count: u32,
    pub vendor: Vendor,
    /// Vendor family/model identifier, e.g. `06_4F` for a Broadwell-EP Xeon.
    pub model_id: String,
    /// Logical CPU ids grouped by socket. Every CPU appears in exactly one
    /// socket's list.
    pub cpus_per_socket: BTreeMap<u32, Vec<u32>>,
}

impl Topology {
    pub fn new(
        vendor: Vendor,
        model_id: impl Into<String>,
        cpus_per_socket: BTreeMap<u32, Vec<u32>>,
    ) -> Result<Topology> {
        if cpus_per_socket.is_empty() {
            return Err(Error::env("topology has no sockets".to_string()));
        }
        let mut seen = BTreeSet::new();
        for cpus in cpus_per_socket.values() {
            for cpu in cpus {
                if !seen.insert(*cpu) {
                    return Err(Error::env(format!(
                        "cpu {cpu} belongs to more than one socket"
                    )));
                }
            }
        }
        Ok(Topology {
            socket_count: cpus_per_socket.len() as u32,
            vendor,
            model_id: model_id.into(),
            cpus_per_socket,
        })
    }

    /// Convenience for tests and simulations: `socket_count` sockets with
    /// `cpus_per_socket` consecutive CPU ids each.
    pub fn synthetic(vendor: Vendor, socket_count: u32, cpus_per_socket: u32) -> Topology {
        let mut map = BTreeMap::new();
        for s in 0..socket_count {
            let base = s * cpus_per_socket;
            map.insert(s, (base..base + cpus_per_socket).collect());
        }
        Topology::new(vendor, "synthetic", map).expect("synthetic topology is valid")
    }

    /// Lowest-numbered CPU of a socket, the one used for per-socket reads.
    pub fn first_cpu_of(&self, socket: u32) -> Option<u32> {
        self.cpus_per_socket
            .get(&socket)
            .and_then(|cpus| cpus.iter().min().copied())
    }

    /// Reads the host description from a directory that mirrors the Linux
    /// layout: `proc/cpuinfo` for vendor/family/model and
    /// `sys/devices/system/cpu/cpuN/topology/physical_package_id` for the
    /// socket of each CPU. Pass `/` to read the real host.
    pub fn detect(root: &Path) -> Result<Topology> {
        let cpuinfo_path = root.join("proc/cpuinfo");
        let cpuinfo = fs::read_to_string(&cpuinfo_path)
            .map_err(|e| Error::env(format!("cannot read {}: {e}", cpuinfo_path.display())))?;
        let (vendor, model_id) = parse_cpuinfo(&cpuinfo);

        let cpu_dir = root.join("sys/devices/system/cpu");
        let mut cpus_per_socket: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        let entries = fs::read_dir(&cpu_dir)
            .map_err(|e| Error::env(format!("cannot read {}: {e}", cpu_dir.display())))?;
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(cpu_id) = name.strip_prefix("cpu").and_then(|n| n.parse::<u32>().ok()) else {
                continue;
            };
            let pkg_file = entry.path().join("topology/physical_package_id");
            let Ok(text) = fs::read_to_string(&pkg_file) else {
                continue; // offline CPU or non-CPU entry
            };
            let socket: u32 = text.trim().parse().map_err(|_| {
                Error::env(format!("unparseable socket id in {}", pkg_file.display()))
            })?;
            cpus_per_socket.entry(socket).or_default().push(cpu_id);
        }
        for cpus in cpus_per_socket.values_mut() {
            cpus.sort_unstable();
        }
        if cpus_per_socket.is_empty() {
            return Err(Error::env(format!(
                "no CPUs found under {}",
                cpu_dir.display()
            )));
        }
        // Normalize socket ids to 0..n so DomainId sockets are dense.
        let dense: BTreeMap<u32, Vec<u32>> = cpus_per_socket
            .into_values()
            .enumerate()
            .map(|(i, cpus)| (i as u32, cpus))
            .collect();
        Topology::new(vendor, model_id, dense)
    }
}

fn parse_cpuinfo(text: &str) -> (Vendor, String) {
    let mut vendor = Vendor::Other;
    let mut family: Option<u32> = None;
    let mut model: Option<u32> = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "vendor_id" => {
                vendor = match value {
                    "GenuineIntel" => Vendor::Intel,
                    "AuthenticAMD" => Vendor::Amd,
                    _ => Vendor::Other,
                }
            }
            "cpu family" => family = family.or_else(|| value.parse().ok()),
            "model" => model = model.or_else(|| value.parse().ok()),
            _ => {}
        }
        if vendor != Vendor::Other && family.is_some() && model.is_some() {
            break;
        }
    }
    let model_id = match (family, model) {
        (Some(f), Some(m)) => format!("{f:02X}_{m:02X}"),
        _ => String::from("unknown"),
    };
    (vendor, model_id)
}

/// Candidate domain kinds for a vendor. This is the *maximal* set; what is
/// actually available must come from per-mechanism discovery, and the two
/// can disagree (kernel bugs have made powercap and perf-events list
/// different domains on the same machine).
pub fn expected_domains(topology: &Topology) -> BTreeSet<DomainKind> {
    match topology.vendor {
        Vendor::Amd => [DomainKind::Package, DomainKind::Core]
            .into_iter()
            .collect(),
        Vendor::Intel => DomainKind::ALL.into_iter().collect(),
        Vendor::Other => BTreeSet::new(),
    }
}

/// A domain listed by some mechanisms but not all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discrepancy {
    pub domain: DomainId,
    pub listed_by: Vec<MechanismKind>,
    pub missing_from: Vec<MechanismKind>,
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let listed: Vec<&str> = self.listed_by.iter().map(|m| m.as_str()).collect();
        let missing: Vec<&str> = self.missing_from.iter().map(|m| m.as_str()).collect();
        write!(
            f,
            "{}: listed by {}, missing from {}",
            self.domain,
            listed.join("+"),
            missing.join("+")
        )
    }
}

/// Compares the domain sets listed by several mechanisms and reports every
/// domain that is not present in all of them. An empty result means the
/// mechanisms agree. Disagreement usually points at a kernel bug or a
/// misconfigured interface, so it is worth surfacing before trusting any
/// single mechanism.
pub fn check_domain_consistency(
    lists: &BTreeMap<MechanismKind, BTreeSet<DomainId>>,
) -> Result<Vec<Discrepancy>> {
    if lists.len() < 2 {
        return Err(Error::usage(
            "consistency check needs at least two mechanisms".to_string(),
        ));
    }
    let mut union: BTreeSet<DomainId> = BTreeSet::new();
    for set in lists.values() {
        union.extend(set.iter().copied());
    }
    let mut out = Vec::new();
    for domain in union {
        let listed_by: Vec<MechanismKind> = lists
            .iter()
            .filter(|(_, set)| set.contains(&domain))
            .map(|(m, _)| *m)
            .collect();
        if listed_by.len() < lists.len() {
            let missing_from = lists
                .keys()
                .filter(|m| !listed_by.contains(m))
                .copied()
                .collect();
            out.push(Discrepancy {
                domain,
                listed_by,
                missing_from,
            });
        }
    }
    Ok(out)
}
