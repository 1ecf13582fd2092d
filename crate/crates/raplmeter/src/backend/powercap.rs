//! RAPL through the powercap sysfs tree.
//!
//! The kernel exposes one directory per domain under
//! `/sys/devices/virtual/powercap/intel-rapl`: `intel-rapl:<s>` for the
//! package of socket `s`, with nested `intel-rapl:<s>:<d>` children for the
//! sub-domains. Readings are decimal microjoules in `energy_uj`, and each
//! node publishes its wrap constant in `max_energy_range_uj`. Only read
//! access to the tree is needed.
//!
//! One quirk to be aware of: powercap nests `dram` *inside* the package
//! directory, although the dram counter is not included in the package
//! counter. Discovery re-parents dram to its socket (the hierarchy the
//! other mechanisms use) and keeps the physical nesting as metadata.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backend::{Backend, CounterMeta, RawReading};
use crate::domain::{DomainId, DomainKind, MechanismKind, Topology};
use crate::error::{Error, Result};

/// Joules per LSB of every powercap reading (the files are microjoules).
pub const POWERCAP_UNIT: f64 = 1e-6;

/// Default location of the tree on a real host.
pub const DEFAULT_POWERCAP_ROOT: &str = "/sys/devices/virtual/powercap/intel-rapl";

/// One discovered powercap node.
#[derive(Debug, Clone)]
pub struct PowercapNode {
    pub dir_path: PathBuf,
    /// Contents of the `name` file, e.g. `package-0` or `dram`.
    pub name: String,
    pub energy_file: PathBuf,
    /// Wrap constant, from `max_energy_range_uj` (microjoules).
    pub max_energy_range: u64,
    pub domain: DomainId,
    /// True when this node was physically nested under a package directory
    /// (powercap's dram placement) and re-parented to its socket.
    pub nested_under_package: bool,
}

/// Discovery result: the nodes plus warnings about entries that were
/// skipped rather than failing the whole walk.
#[derive(Debug, Default)]
pub struct PowercapDiscovery {
    pub nodes: Vec<PowercapNode>,
    pub warnings: Vec<String>,
}

/// Walks a powercap tree and returns the domains it exposes, sorted by
/// socket then kind (psys last). `intel-rapl-mmio` trees are ignored.
pub fn discover_powercap(root: &Path, topology: &Topology) -> Result<PowercapDiscovery> {
    let entries = fs::read_dir(root)
        .map_err(|e| Error::env(format!("cannot read powercap root {}: {e}", root.display())))?;

    let mut out = PowercapDiscovery::default();
    for entry in entries {
        let entry = entry?;
        let dir_name = entry.file_name().to_string_lossy().into_owned();
        let Some(rest) = dir_name.strip_prefix("intel-rapl:") else {
            continue;
        };
        if rest.contains(':') || rest.parse::<u32>().is_err() {
            continue; // children are walked from their parent
        }
        let top_index: u32 = rest.parse().unwrap();
        walk_top_node(&entry.path(), top_index, topology, &mut out)?;
    }

    out.nodes.sort_by_key(|n| {
        (
            n.domain.socket.map(i64::from).unwrap_or(i64::MAX),
            n.domain.kind,
        )
    });
    Ok(out)
}

fn walk_top_node(
    dir: &Path,
    top_index: u32,
    topology: &Topology,
    out: &mut PowercapDiscovery,
) -> Result<()> {
    let Some(name) = read_name(dir, out) else {
        return Ok(());
    };

    // Top-level entries are packages ("package-N") or psys on hosts that
    // expose it as its own zone.
    let (domain, socket) = match kind_for_name(&name) {
        Some((DomainKind::Package, Some(n))) => (DomainId::socketed(DomainKind::Package, n), n),
        Some((DomainKind::Psys, _)) => (DomainId::psys(), 0),
        Some((kind, _)) if kind.is_per_socket() => (DomainId::socketed(kind, top_index), top_index),
        _ => {
            out.warnings.push(format!(
                "{}: unrecognized node name '{name}'",
                dir.display()
            ));
            return Ok(());
        }
    };
    if let Some(s) = domain.socket {
        if s >= topology.socket_count {
            out.warnings.push(format!(
                "{}: socket {s} not in the detected topology ({} sockets)",
                dir.display(),
                topology.socket_count
            ));
        }
    }
    push_node(dir, name, domain, false, out);

    // Children: intel-rapl:<s>:<d>
    let mut children: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| {
                    n.to_string_lossy()
                        .starts_with(&format!("intel-rapl:{top_index}:"))
                })
                .unwrap_or(false)
        })
        .collect();
    children.sort();

    for child in children {
        let Some(child_name) = read_name(&child, out) else {
            continue;
        };
        match kind_for_name(&child_name) {
            Some((DomainKind::Psys, _)) => {
                push_node(&child, child_name, DomainId::psys(), false, out)
            }
            Some((DomainKind::Dram, _)) => {
                // physically nested under the package, semantically a
                // sibling of it on the same socket
                push_node(
                    &child,
                    child_name,
                    DomainId::socketed(DomainKind::Dram, socket),
                    true,
                    out,
                );
            }
            Some((kind, _)) if kind.is_per_socket() => push_node(
                &child,
                child_name,
                DomainId::socketed(kind, socket),
                false,
                out,
            ),
            _ => out.warnings.push(format!(
                "{}: unrecognized node name '{child_name}'",
                child.display()
            )),
        }
    }
    Ok(())
}

fn read_name(dir: &Path, out: &mut PowercapDiscovery) -> Option<String> {
    match fs::read_to_string(dir.join("name")) {
        Ok(s) => Some(s.trim().to_string()),
        Err(e) => {
            out.warnings
                .push(format!("{}: cannot read name file: {e}", dir.display()));
            None
        }
    }
}

/// Maps a powercap `name` file to a domain kind. `package-N` carries its
/// socket number in the name.
fn kind_for_name(name: &str) -> Option<(DomainKind, Option<u32>)> {
    if let Some(n) = name.strip_prefix("package-") {
        return n
            .parse::<u32>()
            .ok()
            .map(|n| (DomainKind::Package, Some(n)));
    }
    match name {
        "core" => Some((DomainKind::Core, None)),
        "uncore" => Some((DomainKind::Uncore, None)),
        "dram" => Some((DomainKind::Dram, None)),
        "psys" => Some((DomainKind::Psys, None)),
        _ => None,
    }
}

fn push_node(
    dir: &Path,
    name: String,
    domain: DomainId,
    nested: bool,
    out: &mut PowercapDiscovery,
) {
    let max_path = dir.join("max_energy_range_uj");
    let max_energy_range = match fs::read_to_string(&max_path)
        .ok()
        .and_then(|s| s.trim().parse::<u64>().ok())
    {
        Some(v) => v,
        None => {
            out.warnings.push(format!(
                "{}: missing or unparseable max_energy_range_uj, node skipped",
                dir.display()
            ));
            return;
        }
    };
    out.nodes.push(PowercapNode {
        dir_path: dir.to_path_buf(),
        name,
        energy_file: dir.join("energy_uj"),
        max_energy_range,
        domain,
        nested_under_package: nested,
    });
}

/// Reads one node's counter: the decimal integer in `energy_uj`,
/// microjoules, bounded by the node's `max_energy_range`.
pub fn read_powercap(node: &PowercapNode) -> Result<u64> {
    let text = fs::read_to_string(&node.energy_file)?;
    let value: u64 = text.trim().parse().map_err(|_| {
        Error::CorruptedCounter(format!(
            "{}: not a decimal counter value: {:?}",
            node.energy_file.display(),
            text.trim()
        ))
    })?;
    if value > node.max_energy_range {
        return Err(Error::CorruptedCounter(format!(
            "{}: value {value} exceeds max_energy_range_uj {}",
            node.energy_file.display(),
            node.max_energy_range
        )));
    }
    Ok(value)
}

/// Polls a set of discovered powercap nodes.
pub struct PowercapBackend {
    nodes: Vec<PowercapNode>,
    meta: Vec<CounterMeta>,
}

impl PowercapBackend {
    pub fn new(nodes: Vec<PowercapNode>) -> PowercapBackend {
        let meta = nodes
            .iter()
            .map(|n| CounterMeta {
                domain: n.domain,
                mechanism: MechanismKind::Powercap,
                unit_joules_per_lsb: POWERCAP_UNIT,
                wrap_constant: n.max_energy_range,
            })
            .collect();
        PowercapBackend { nodes, meta }
    }

    pub fn nodes(&self) -> &[PowercapNode] {
        &self.nodes
    }
}

impl Backend for PowercapBackend {
    fn mechanism(&self) -> MechanismKind {
        MechanismKind::Powercap
    }

    fn counters(&self) -> &[CounterMeta] {
        &self.meta
    }

    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            out.push(RawReading {
                counter: i,
                timestamp_ns: now_ns,
                value: read_powercap(node),
            });
        }
        Ok(())
    }
}
