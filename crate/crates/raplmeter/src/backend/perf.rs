//! RAPL as perf-events counting events, read from user space.
//!
//! The kernel advertises the available energy events as sysfs files:
//! `energy-pkg`, `energy-ram`, ... under `/sys/devices/power/events/`, each
//! with a `.scale` companion (joules per count) and a `.unit` companion
//! (always "Joules"). An event must be opened exactly once per socket; the
//! kernel then maintains a 64-bit accumulated counter per descriptor, which
//! makes overflows a theoretical concern only (the wrap constant is
//! `u64::MAX`).
//!
//! Opening a counter is an injectable capability so that simulations can
//! provide counters without kernel support; the real `perf_event_open`
//! opener lives behind `cfg(target_os = "linux")` and needs `CAP_PERFMON`
//! or `perf_event_paranoid <= 0`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::backend::{Backend, CounterMeta, RawReading};
use crate::domain::{DomainId, DomainKind, MechanismKind, Topology};
use crate::error::{Error, Result};

/// Default events directory on a real host.
pub const DEFAULT_PERF_EVENTS_DIR: &str = "/sys/devices/power/events";

/// One energy event advertised by the power PMU.
#[derive(Debug, Clone, PartialEq)]
pub struct PerfEventSpec {
    /// File name, e.g. `energy-pkg`.
    pub event_name: String,
    /// Parsed from the event file's `event=0xNN` content.
    pub config_code: u64,
    /// Joules per count, from the `.scale` file.
    pub scale_joules: f64,
    /// From the `.unit` file; always `Joules` for energy events.
    pub unit_label: String,
    pub kind: DomainKind,
}

#[derive(Debug, Default)]
pub struct PerfDiscovery {
    pub specs: Vec<PerfEventSpec>,
    pub warnings: Vec<String>,
}

fn kind_for_event(name: &str) -> Option<DomainKind> {
    match name {
        "energy-pkg" => Some(DomainKind::Package),
        "energy-cores" => Some(DomainKind::Core),
        "energy-gpu" => Some(DomainKind::Uncore),
        "energy-ram" => Some(DomainKind::Dram),
        "energy-psys" => Some(DomainKind::Psys),
        _ => None,
    }
}

/// Lists the energy events in a sysfs events directory. Events with a
/// missing or malformed companion file are skipped with a warning.
pub fn discover_perf_events(events_dir: &Path) -> Result<PerfDiscovery> {
    let entries = fs::read_dir(events_dir).map_err(|e| {
        Error::env(format!(
            "cannot read perf events dir {}: {e}",
            events_dir.display()
        ))
    })?;

    let mut out = PerfDiscovery::default();
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("energy-") && !n.contains('.'))
        .collect();
    names.sort();

    for name in names {
        let Some(kind) = kind_for_event(&name) else {
            out.warnings
                .push(format!("{name}: unknown energy event, skipped"));
            continue;
        };
        let event_text = match fs::read_to_string(events_dir.join(&name)) {
            Ok(t) => t,
            Err(e) => {
                out.warnings
                    .push(format!("{name}: unreadable event file: {e}"));
                continue;
            }
        };
        let Some(config_code) = parse_event_config(&event_text) else {
            out.warnings.push(format!(
                "{name}: cannot parse config from {:?}",
                event_text.trim()
            ));
            continue;
        };
        let scale_text = match fs::read_to_string(events_dir.join(format!("{name}.scale"))) {
            Ok(t) => t,
            Err(_) => {
                out.warnings
                    .push(format!("{name}: missing .scale file, event skipped"));
                continue;
            }
        };
        let Ok(scale_joules) = scale_text.trim().parse::<f64>() else {
            out.warnings
                .push(format!("{name}: unparseable scale {:?}", scale_text.trim()));
            continue;
        };
        if !scale_joules.is_finite() || scale_joules <= 0.0 {
            out.warnings
                .push(format!("{name}: non-positive scale {scale_joules}"));
            continue;
        }
        let unit_label = match fs::read_to_string(events_dir.join(format!("{name}.unit"))) {
            Ok(t) => t.trim().to_string(),
            Err(_) => {
                out.warnings
                    .push(format!("{name}: missing .unit file, event skipped"));
                continue;
            }
        };
        if unit_label != "Joules" {
            out.warnings.push(format!(
                "{name}: unexpected unit {unit_label:?}, event skipped"
            ));
            continue;
        }
        out.specs.push(PerfEventSpec {
            event_name: name,
            config_code,
            scale_joules,
            unit_label,
            kind,
        });
    }
    out.specs.sort_by_key(|s| s.kind);
    Ok(out)
}

/// Parses `event=0xNN` (the kernel's format for these events).
fn parse_event_config(text: &str) -> Option<u64> {
    let value = text.trim().strip_prefix("event=")?;
    let hex = value
        .strip_prefix("0x")
        .or_else(|| value.strip_prefix("0X"))?;
    u64::from_str_radix(hex, 16).ok()
}

/// An open counter that can be read. Real handles read a perf fd; simulated
/// handles compute the value from a profile.
pub trait PerfCounterHandle: Send {
    /// Current accumulated raw count (monotone except across a 64-bit wrap).
    fn read_raw(&mut self) -> Result<u64>;
}

/// The event-open capability. Injectable so the simulated host can supply
/// counters without kernel support.
pub trait PerfEventOpener {
    fn open(&self, spec: &PerfEventSpec, cpu: u32) -> Result<Box<dyn PerfCounterHandle>>;
}

struct OpenCounter {
    handle: Box<dyn PerfCounterHandle>,
}

/// Holds the open counters and enforces the open rules: each (event,
/// socket) pair exactly once, psys only once (on socket 0).
pub struct PerfBackend {
    topology: Topology,
    counters: Vec<OpenCounter>,
    meta: Vec<CounterMeta>,
    opened: BTreeSet<(DomainKind, u32)>,
}

impl PerfBackend {
    pub fn new(topology: Topology) -> PerfBackend {
        PerfBackend {
            topology,
            counters: Vec::new(),
            meta: Vec::new(),
            opened: BTreeSet::new(),
        }
    }

    /// Opens `spec` for one socket. Duplicate opens are usage errors, psys
    /// is hosted by socket 0 only.
    pub fn open(
        &mut self,
        spec: &PerfEventSpec,
        socket: u32,
        opener: &dyn PerfEventOpener,
    ) -> Result<()> {
        if socket >= self.topology.socket_count {
            return Err(Error::usage(format!(
                "socket {socket} out of range, host has {} socket(s)",
                self.topology.socket_count
            )));
        }
        if spec.kind == DomainKind::Psys && socket != 0 {
            return Err(Error::usage(
                "psys is system-wide and is opened only once, on socket 0".to_string(),
            ));
        }
        if !self.opened.insert((spec.kind, socket)) {
            return Err(Error::usage(format!(
                "{} already opened for socket {socket}",
                spec.event_name
            )));
        }
        let cpu = self
            .topology
            .first_cpu_of(socket)
            .ok_or_else(|| Error::env(format!("socket {socket} has no CPUs")))?;
        let handle = opener.open(spec, cpu)?;
        let domain = if spec.kind.is_per_socket() {
            DomainId::socketed(spec.kind, socket)
        } else {
            DomainId::psys()
        };
        self.counters.push(OpenCounter { handle });
        self.meta.push(CounterMeta {
            domain,
            mechanism: MechanismKind::PerfUser,
            unit_joules_per_lsb: spec.scale_joules,
            wrap_constant: u64::MAX,
        });
        Ok(())
    }

    /// Opens every spec on every socket it applies to.
    pub fn open_all(
        &mut self,
        specs: &[PerfEventSpec],
        opener: &dyn PerfEventOpener,
    ) -> Result<()> {
        for spec in specs {
            if spec.kind.is_per_socket() {
                for socket in 0..self.topology.socket_count {
                    self.open(spec, socket, opener)?;
                }
            } else {
                self.open(spec, 0, opener)?;
            }
        }
        Ok(())
    }

    pub fn open_count(&self) -> usize {
        self.counters.len()
    }
}

impl Backend for PerfBackend {
    fn mechanism(&self) -> MechanismKind {
        MechanismKind::PerfUser
    }

    fn counters(&self) -> &[CounterMeta] {
        &self.meta
    }

    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()> {
        for (i, c) in self.counters.iter_mut().enumerate() {
            out.push(RawReading {
                counter: i,
                timestamp_ns: now_ns,
                value: c.handle.read_raw(),
            });
        }
        Ok(())
    }
}

/// The real opener: `perf_event_open` pinned to one CPU, any pid.
#[cfg(target_os = "linux")]
pub struct KernelPerfOpener {
    pmu_type: u32,
}

#[cfg(target_os = "linux")]
impl KernelPerfOpener {
    /// Reads the power PMU's type id from the `type` file next to the
    /// events directory.
    pub fn from_events_dir(events_dir: &Path) -> Result<KernelPerfOpener> {
        let type_path = events_dir
            .parent()
            .unwrap_or_else(|| Path::new("/"))
            .join("type");
        let text = fs::read_to_string(&type_path).map_err(|e| {
            Error::env(format!("cannot read PMU type {}: {e}", type_path.display()))
        })?;
        let pmu_type = text
            .trim()
            .parse()
            .map_err(|_| Error::env(format!("unparseable PMU type in {}", type_path.display())))?;
        Ok(KernelPerfOpener { pmu_type })
    }
}

/// The leading fields of the kernel's `perf_event_attr` (ABI-stable; this
/// is `PERF_ATTR_SIZE_VER1`). Counting an energy event needs nothing past
/// `config`, the rest stays zero.
#[cfg(target_os = "linux")]
#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period_or_freq: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events_or_watermark: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
}

#[cfg(target_os = "linux")]
const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 1 << 3;

#[cfg(target_os = "linux")]
impl PerfEventOpener for KernelPerfOpener {
    fn open(&self, spec: &PerfEventSpec, cpu: u32) -> Result<Box<dyn PerfCounterHandle>> {
        let attr = PerfEventAttr {
            type_: self.pmu_type,
            size: std::mem::size_of::<PerfEventAttr>() as u32,
            config: spec.config_code,
            ..PerfEventAttr::default()
        };

        let fd = unsafe {
            libc::syscall(
                libc::SYS_perf_event_open,
                &attr as *const PerfEventAttr,
                -1 as libc::pid_t,
                cpu as libc::c_int,
                -1 as libc::c_int,
                PERF_FLAG_FD_CLOEXEC,
            )
        };
        if fd < 0 {
            let err = std::io::Error::last_os_error();
            return Err(match err.raw_os_error() {
                Some(libc::EACCES) | Some(libc::EPERM) => Error::privilege(
                    "CAP_PERFMON or perf_event_paranoid <= 0",
                    format!("open the {} event", spec.event_name),
                ),
                _ => Error::env(format!(
                    "perf_event_open({}) failed: {err}",
                    spec.event_name
                )),
            });
        }
        Ok(Box::new(FdCounter { fd: fd as i32 }))
    }
}

#[cfg(target_os = "linux")]
struct FdCounter {
    fd: i32,
}

#[cfg(target_os = "linux")]
impl PerfCounterHandle for FdCounter {
    fn read_raw(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        let n = unsafe { libc::read(self.fd, buf.as_mut_ptr() as *mut libc::c_void, buf.len()) };
        if n != 8 {
            return Err(Error::Io(std::io::Error::last_os_error()));
        }
        Ok(u64::from_le_bytes(buf))
    }
}

#[cfg(target_os = "linux")]
impl Drop for FdCounter {
    fn drop(&mut self) {
        unsafe { libc::close(self.fd) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Vendor;
    use std::sync::atomic::{AtomicU64, Ordering};
    use std::sync::Arc;

    pub(crate) fn write_event(dir: &Path, name: &str, config: &str, scale: &str, unit: &str) {
        fs::write(dir.join(name), config).unwrap();
        fs::write(dir.join(format!("{name}.scale")), scale).unwrap();
        fs::write(dir.join(format!("{name}.unit")), unit).unwrap();
    }

    /// Opener whose counters all report a shared monotone value.
    struct FixedOpener {
        value: Arc<AtomicU64>,
    }

    struct FixedHandle {
        value: Arc<AtomicU64>,
    }

    impl PerfCounterHandle for FixedHandle {
        fn read_raw(&mut self) -> Result<u64> {
            Ok(self.value.load(Ordering::SeqCst))
        }
    }

    impl PerfEventOpener for FixedOpener {
        fn open(&self, _spec: &PerfEventSpec, _cpu: u32) -> Result<Box<dyn PerfCounterHandle>> {
            Ok(Box::new(FixedHandle {
                value: self.value.clone(),
            }))
        }
    }

    fn pkg_spec() -> PerfEventSpec {
        PerfEventSpec {
            event_name: "energy-pkg".into(),
            config_code: 0x02,
            scale_joules: (2.0f64).powi(-32),
            unit_label: "Joules".into(),
            kind: DomainKind::Package,
        }
    }

    #[test]
    fn discovery_parses_the_kernel_convention() {
        let tmp = tempfile::tempdir().unwrap();
        write_event(
            tmp.path(),
            "energy-pkg",
            "event=0x02",
            "2.3283064365386962890625e-10",
            "Joules",
        );
        let d = discover_perf_events(tmp.path()).unwrap();
        assert!(d.warnings.is_empty(), "{:?}", d.warnings);
        assert_eq!(d.specs.len(), 1);
        let spec = &d.specs[0];
        assert_eq!(spec.kind, DomainKind::Package);
        assert_eq!(spec.config_code, 0x02);
        // the kernel's scale string is exactly 2^-32
        assert_eq!(spec.scale_joules, (2.0f64).powi(-32));
        assert_eq!(spec.unit_label, "Joules");
    }

    #[test]
    fn discovery_of_empty_dir_is_empty() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(discover_perf_events(tmp.path()).unwrap().specs.is_empty());
    }

    #[test]
    fn discovery_finds_all_five_kinds() {
        let tmp = tempfile::tempdir().unwrap();
        for (name, code) in [
            ("energy-cores", "event=0x01"),
            ("energy-pkg", "event=0x02"),
            ("energy-ram", "event=0x03"),
            ("energy-gpu", "event=0x04"),
            ("energy-psys", "event=0x05"),
        ] {
            write_event(
                tmp.path(),
                name,
                code,
                "2.3283064365386962890625e-10",
                "Joules",
            );
        }
        let d = discover_perf_events(tmp.path()).unwrap();
        let kinds: BTreeSet<DomainKind> = d.specs.iter().map(|s| s.kind).collect();
        assert_eq!(kinds.len(), 5);
    }

    #[test]
    fn missing_scale_skips_with_warning() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(tmp.path().join("energy-pkg"), "event=0x02").unwrap();
        fs::write(tmp.path().join("energy-pkg.unit"), "Joules").unwrap();
        let d = discover_perf_events(tmp.path()).unwrap();
        assert!(d.specs.is_empty());
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn open_once_per_socket_and_reject_duplicates() {
        let topo = Topology::synthetic(Vendor::Intel, 2, 2);
        let opener = FixedOpener {
            value: Arc::new(AtomicU64::new(0)),
        };
        let mut backend = PerfBackend::new(topo);
        backend.open(&pkg_spec(), 0, &opener).unwrap();
        backend.open(&pkg_spec(), 1, &opener).unwrap();
        assert_eq!(backend.open_count(), 2);

        let err = backend.open(&pkg_spec(), 0, &opener).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn psys_is_socket_zero_only() {
        let topo = Topology::synthetic(Vendor::Intel, 2, 2);
        let opener = FixedOpener {
            value: Arc::new(AtomicU64::new(0)),
        };
        let psys_spec = PerfEventSpec {
            event_name: "energy-psys".into(),
            config_code: 0x05,
            scale_joules: (2.0f64).powi(-32),
            unit_label: "Joules".into(),
            kind: DomainKind::Psys,
        };
        let mut backend = PerfBackend::new(topo);
        assert!(matches!(
            backend.open(&psys_spec, 1, &opener),
            Err(Error::Usage(_))
        ));
        backend.open(&psys_spec, 0, &opener).unwrap();
        assert_eq!(backend.counters()[0].domain, DomainId::psys());
    }

    #[test]
    fn open_all_covers_specs_times_sockets() {
        let topo = Topology::synthetic(Vendor::Intel, 2, 2);
        let opener = FixedOpener {
            value: Arc::new(AtomicU64::new(0)),
        };
        let mut specs = vec![pkg_spec()];
        specs.push(PerfEventSpec {
            event_name: "energy-ram".into(),
            config_code: 0x03,
            scale_joules: (2.0f64).powi(-32),
            unit_label: "Joules".into(),
            kind: DomainKind::Dram,
        });
        let mut backend = PerfBackend::new(topo);
        backend.open_all(&specs, &opener).unwrap();
        // 2 socket-scoped kinds x 2 sockets
        assert_eq!(backend.open_count(), 4);
    }

    #[test]
    fn reads_are_deltas_over_the_kernel_accumulator() {
        let topo = Topology::synthetic(Vendor::Intel, 1, 1);
        let value = Arc::new(AtomicU64::new(1000));
        let opener = FixedOpener {
            value: value.clone(),
        };
        let mut backend = PerfBackend::new(topo);
        backend.open(&pkg_spec(), 0, &opener).unwrap();

        let mut out = Vec::new();
        backend.poll(1, &mut out).unwrap();
        assert_eq!(out[0].value.as_ref().unwrap(), &1000);

        value.store(1500, Ordering::SeqCst);
        out.clear();
        backend.poll(2, &mut out).unwrap();
        assert_eq!(out[0].value.as_ref().unwrap(), &1500);
        // delta energy = 500 * 2^-32 J, applied by the correction layer
    }
}
