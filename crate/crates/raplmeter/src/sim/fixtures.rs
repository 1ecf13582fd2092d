//! File-system fixtures that stand in for the real measurement surfaces.
//!
//! Each fixture writes the exact layout its backend expects (a powercap
//! tree, msr device files, a perf events directory), with counter contents
//! derived from a power profile at a given time. `refresh_at(t)` brings the
//! files up to date; attaching a fixture to a virtual clock keeps them
//! current automatically while a polling loop runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::backend::msr::encode_register_image;
use crate::backend::perf::{PerfCounterHandle, PerfEventOpener, PerfEventSpec};
use crate::clock::{Clock, VirtualClock};
use crate::domain::{DomainId, DomainKind, Topology, Vendor};
use crate::error::{Error, Result};
use crate::sim::PowerProfile;

/// A powercap tree under a fixture root: `intel-rapl:<s>` per socket with
/// nested children, dram placed inside the package directory like the real
/// kernel does, psys as its own top-level zone.
pub struct PowercapFixture {
    profile: Arc<PowerProfile>,
    /// (energy_uj path, domain) for every node.
    nodes: Vec<(PathBuf, DomainId)>,
    modulus: u128,
}

impl PowercapFixture {
    pub fn create(
        root: &Path,
        profile: Arc<PowerProfile>,
        topology: &Topology,
        kinds: &[DomainKind],
        max_energy_range_uj: u64,
    ) -> Result<PowercapFixture> {
        let mut nodes = Vec::new();
        let write_node = |dir: &Path, name: &str| -> Result<PathBuf> {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("name"), format!("{name}\n"))?;
            fs::write(
                dir.join("max_energy_range_uj"),
                format!("{max_energy_range_uj}\n"),
            )?;
            let energy = dir.join("energy_uj");
            fs::write(&energy, "0\n")?;
            Ok(energy)
        };

        for socket in 0..topology.socket_count {
            // the package zone always exists in a real tree; it is only a
            // refresh target when package was asked for
            let top = root.join(format!("intel-rapl:{socket}"));
            let energy = write_node(&top, &format!("package-{socket}"))?;
            if kinds.contains(&DomainKind::Package) {
                nodes.push((energy, DomainId::socketed(DomainKind::Package, socket)));
            }
            // children in the kernel's order; dram nested in the package
            let mut child = 0u32;
            for kind in [DomainKind::Core, DomainKind::Uncore, DomainKind::Dram] {
                if !kinds.contains(&kind) {
                    continue;
                }
                let dir = top.join(format!("intel-rapl:{socket}:{child}"));
                let energy = write_node(&dir, kind.as_str())?;
                nodes.push((energy, DomainId::socketed(kind, socket)));
                child += 1;
            }
        }
        if kinds.contains(&DomainKind::Psys) {
            let dir = root.join(format!("intel-rapl:{}", topology.socket_count));
            let energy = write_node(&dir, "psys")?;
            nodes.push((energy, DomainId::psys()));
        }

        let fixture = PowercapFixture {
            profile,
            nodes,
            modulus: max_energy_range_uj as u128 + 1,
        };
        fixture.refresh_at(0)?;
        Ok(fixture)
    }

    /// Rewrites every `energy_uj` file with the counter value at `t_ns`.
    pub fn refresh_at(&self, t_ns: u64) -> Result<()> {
        let t_s = t_ns as f64 / 1e9;
        for (energy_file, domain) in &self.nodes {
            let value = self.profile.counter_value(*domain, t_s, 1e-6, self.modulus);
            fs::write(energy_file, format!("{value}\n"))?;
        }
        Ok(())
    }

    /// Keeps the files current whenever the virtual clock advances.
    pub fn attach(self: &Arc<Self>, clock: &VirtualClock) {
        let me = self.clone();
        clock.on_advance(move |t| {
            me.refresh_at(t).expect("powercap fixture refresh failed");
        });
    }
}

/// Per-cpu msr device images under `<root>/<cpu>/msr`, Intel or AMD layout
/// depending on the topology's vendor.
pub struct MsrFixture {
    profile: Arc<PowerProfile>,
    topology: Topology,
    kinds: Vec<DomainKind>,
    /// (device path, socket) per cpu.
    devices: Vec<(PathBuf, u32)>,
    addresses: Vec<(DomainKind, u64)>,
    units: Vec<(DomainKind, f64)>,
}

impl MsrFixture {
    pub fn create(
        root: &Path,
        profile: Arc<PowerProfile>,
        topology: Topology,
        kinds: &[DomainKind],
        esu: u8,
    ) -> Result<MsrFixture> {
        assert!(esu < 32, "ESU is a 5-bit field");
        let layout = crate::backend::msr::msr_layout_for(&topology)?;
        let decoded_unit = (2.0f64).powi(-(esu as i32));

        let mut addresses = Vec::new();
        let mut units = Vec::new();
        for &kind in kinds {
            let addr = *layout
                .counter_addresses
                .get(&kind)
                .ok_or_else(|| Error::usage(format!("domain {kind} has no MSR on this vendor")))?;
            addresses.push((kind, addr));
            units.push((
                kind,
                crate::backend::msr::unit_for_domain(&layout, &topology, kind, decoded_unit),
            ));
        }

        let mut devices = Vec::new();
        for (&socket, cpus) in &topology.cpus_per_socket {
            for &cpu in cpus {
                let dir = root.join(cpu.to_string());
                fs::create_dir_all(&dir)?;
                let path = dir.join("msr");
                // seed with the unit register only; refresh fills counters
                let mut regs = std::collections::BTreeMap::new();
                regs.insert(layout.unit_register, (esu as u64) << 8);
                for &(_, addr) in &addresses {
                    regs.insert(addr, 0);
                }
                fs::write(&path, encode_register_image(&regs))?;
                devices.push((path, socket));
            }
        }

        let fixture = MsrFixture {
            profile,
            topology,
            kinds: kinds.to_vec(),
            devices,
            addresses,
            units,
        };
        fixture.refresh_at(0)?;
        Ok(fixture)
    }

    pub fn refresh_at(&self, t_ns: u64) -> Result<()> {
        #[cfg(unix)]
        {
            use std::os::unix::fs::FileExt;
            let t_s = t_ns as f64 / 1e9;
            for (path, socket) in &self.devices {
                let file = fs::OpenOptions::new().write(true).open(path)?;
                for ((kind, addr), (_, unit)) in self.addresses.iter().zip(&self.units) {
                    let domain = if kind.is_per_socket() {
                        DomainId::socketed(*kind, *socket)
                    } else {
                        DomainId::psys()
                    };
                    let raw = self.profile.counter_value(domain, t_s, *unit, 1u128 << 32);
                    file.write_all_at(&raw.to_le_bytes(), *addr)?;
                }
            }
            Ok(())
        }
        #[cfg(not(unix))]
        {
            let _ = t_ns;
            Err(Error::env("msr fixtures need a unix host".to_string()))
        }
    }

    pub fn attach(self: &Arc<Self>, clock: &VirtualClock) {
        let me = self.clone();
        clock.on_advance(move |t| {
            me.refresh_at(t).expect("msr fixture refresh failed");
        });
    }

    pub fn kinds(&self) -> &[DomainKind] {
        &self.kinds
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }
}

/// Kernel-convention config codes for the energy events.
fn event_file_for(kind: DomainKind) -> (&'static str, &'static str) {
    match kind {
        DomainKind::Core => ("energy-cores", "event=0x01"),
        DomainKind::Package => ("energy-pkg", "event=0x02"),
        DomainKind::Dram => ("energy-ram", "event=0x03"),
        DomainKind::Uncore => ("energy-gpu", "event=0x04"),
        DomainKind::Psys => ("energy-psys", "event=0x05"),
    }
}

/// Writes a perf events directory (`energy-*`, `.scale`, `.unit`) readable
/// by the discovery code.
pub fn write_perf_events_dir(dir: &Path, kinds: &[DomainKind], scale: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let scale_text = if scale == (2.0f64).powi(-32) {
        // the string the kernel publishes for 2^-32
        "2.3283064365386962890625e-10".to_string()
    } else {
        format!("{scale:e}")
    };
    for &kind in kinds {
        let (name, config) = event_file_for(kind);
        fs::write(dir.join(name), config)?;
        fs::write(dir.join(format!("{name}.scale")), &scale_text)?;
        fs::write(dir.join(format!("{name}.unit")), "Joules")?;
    }
    Ok(())
}

/// The injectable event-open capability backed by a profile: opened
/// counters report `floor(energy(now)/scale) mod 2^64` like the kernel's
/// accumulated perf counters would.
pub struct SimPerfOpener {
    profile: Arc<PowerProfile>,
    clock: Arc<dyn Clock>,
    /// Profile time zero; the opener's creation is "boot" for its counters.
    origin_ns: u64,
    topology: Topology,
}

impl SimPerfOpener {
    pub fn new(
        profile: Arc<PowerProfile>,
        clock: Arc<dyn Clock>,
        topology: Topology,
    ) -> SimPerfOpener {
        SimPerfOpener {
            profile,
            origin_ns: clock.now_ns(),
            clock,
            topology,
        }
    }

    fn socket_of(&self, cpu: u32) -> Result<u32> {
        self.topology
            .cpus_per_socket
            .iter()
            .find(|(_, cpus)| cpus.contains(&cpu))
            .map(|(s, _)| *s)
            .ok_or_else(|| Error::usage(format!("cpu {cpu} is not in the topology")))
    }
}

impl PerfEventOpener for SimPerfOpener {
    fn open(&self, spec: &PerfEventSpec, cpu: u32) -> Result<Box<dyn PerfCounterHandle>> {
        let domain = if spec.kind.is_per_socket() {
            DomainId::socketed(spec.kind, self.socket_of(cpu)?)
        } else {
            DomainId::psys()
        };
        Ok(Box::new(SimPerfHandle {
            profile: self.profile.clone(),
            clock: self.clock.clone(),
            origin_ns: self.origin_ns,
            domain,
            scale: spec.scale_joules,
        }))
    }
}

struct SimPerfHandle {
    profile: Arc<PowerProfile>,
    clock: Arc<dyn Clock>,
    origin_ns: u64,
    domain: DomainId,
    scale: f64,
}

impl PerfCounterHandle for SimPerfHandle {
    fn read_raw(&mut self) -> Result<u64> {
        let t_s = self.clock.now_ns().saturating_sub(self.origin_ns) as f64 / 1e9;
        Ok(self
            .profile
            .counter_value(self.domain, t_s, self.scale, 1u128 << 64))
    }
}

/// Writes a host-info root (`proc/cpuinfo` + cpu topology files) that
/// `Topology::detect` can read, for CLI and discovery tests.
pub fn write_host_info(
    root: &Path,
    vendor: Vendor,
    family: u32,
    model: u32,
    sockets: u32,
    cpus_per_socket: u32,
) -> Result<()> {
    let vendor_id = match vendor {
        Vendor::Intel => "GenuineIntel",
        Vendor::Amd => "AuthenticAMD",
        Vendor::Other => "UnknownVendor",
    };
    let proc_dir = root.join("proc");
    fs::create_dir_all(&proc_dir)?;
    let mut cpuinfo = String::new();
    for cpu in 0..sockets * cpus_per_socket {
        cpuinfo.push_str(&format!(
            "processor\t: {cpu}\nvendor_id\t: {vendor_id}\ncpu family\t: {family}\nmodel\t\t: {model}\n\n"
        ));
    }
    fs::write(proc_dir.join("cpuinfo"), cpuinfo)?;

    for socket in 0..sockets {
        for i in 0..cpus_per_socket {
            let cpu = socket * cpus_per_socket + i;
            let topo_dir = root.join(format!("sys/devices/system/cpu/cpu{cpu}/topology"));
            fs::create_dir_all(&topo_dir)?;
            fs::write(topo_dir.join("physical_package_id"), format!("{socket}\n"))?;
        }
    }
    Ok(())
}
