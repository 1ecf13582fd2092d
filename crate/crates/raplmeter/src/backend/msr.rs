//! RAPL through raw model-specific registers.
//!
//! Each CPU core exposes its package's registers through `/dev/cpu/N/msr`;
//! a read of 8 bytes at the register's address returns its value. Reading
//! any core of a socket is equivalent, so one handle is opened per socket
//! (its lowest-numbered CPU) and kept open: the msr kernel module does
//! inode-related work on every read, and reopening per read would pile file
//! table churn on top of that.
//!
//! Energy-status fields are 32 bits wide, hence the `u32::MAX` wrap
//! constant, and tick in units of `2^-ESU` joules where ESU is decoded from
//! the vendor's power-unit register at runtime. Real hosts require
//! `CAP_SYS_RAWIO` (or root, or an allowlisting module such as msr-safe);
//! fixtures only need a directory of fake device files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::path::Path;

use crate::backend::{msr_tables, Backend, CounterMeta, RawReading};
use crate::domain::{DomainId, DomainKind, MechanismKind, Topology, Vendor};
use crate::error::{Error, Result};

/// Default root of the per-core device files; `<root>/<N>/msr`.
pub const DEFAULT_MSR_ROOT: &str = "/dev/cpu";

/// The registers of one vendor, plus the unit quirk table.
#[derive(Debug, Clone)]
pub struct MsrLayout {
    pub vendor: Vendor,
    pub unit_register: u64,
    pub counter_addresses: BTreeMap<DomainKind, u64>,
}

/// Selects the register layout for the host's vendor.
pub fn msr_layout_for(topology: &Topology) -> Result<MsrLayout> {
    let (unit_register, table) = match topology.vendor {
        Vendor::Intel => (msr_tables::INTEL_UNIT_REGISTER, msr_tables::INTEL_COUNTERS),
        Vendor::Amd => (msr_tables::AMD_UNIT_REGISTER, msr_tables::AMD_COUNTERS),
        Vendor::Other => {
            return Err(Error::UnsupportedMechanism(
                "the MSR mechanism requires an Intel or AMD processor".to_string(),
            ))
        }
    };
    Ok(MsrLayout {
        vendor: topology.vendor,
        unit_register,
        counter_addresses: table.iter().copied().collect(),
    })
}

/// Extracts the Energy Status Unit field (bits 12:8) from the power-unit
/// register and returns the counter granularity, `2^-ESU` joules.
pub fn decode_energy_unit(unit_register_value: u64) -> f64 {
    let esu = (unit_register_value >> 8) & 0x1F;
    (2.0f64).powi(-(esu as i32))
}

/// The energy unit that applies to one domain: the decoded unit, unless the
/// (model, domain) pair is a documented exception.
pub fn unit_for_domain(
    layout: &MsrLayout,
    topology: &Topology,
    kind: DomainKind,
    decoded_unit: f64,
) -> f64 {
    if layout.vendor == Vendor::Intel && kind == DomainKind::Dram {
        if let Some(unit) = msr_tables::dram_unit_override(&topology.model_id) {
            return unit;
        }
    }
    decoded_unit
}

/// Reads 8 bytes at `address` and returns the low 32 bits, the width of the
/// energy status field.
pub fn read_msr_counter(device: &File, address: u64) -> Result<u64> {
    Ok(read_msr_register(device, address)? & 0xFFFF_FFFF)
}

/// Reads a full 64-bit register (used for the power-unit register).
pub fn read_msr_register(device: &File, address: u64) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact_at(device, &mut buf, address).map_err(map_msr_io_error)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(unix)]
fn read_exact_at(device: &File, buf: &mut [u8; 8], offset: u64) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    let n = device.read_at(buf, offset)?;
    if n != buf.len() {
        return Err(io::Error::new(
            io::ErrorKind::UnexpectedEof,
            format!("short read: got {n} of 8 bytes at offset {offset:#x}"),
        ));
    }
    Ok(())
}

#[cfg(not(unix))]
fn read_exact_at(_device: &File, _buf: &mut [u8; 8], _offset: u64) -> io::Result<()> {
    Err(io::Error::new(
        io::ErrorKind::Unsupported,
        "MSR device files are only readable on unix hosts",
    ))
}

fn map_msr_io_error(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::PermissionDenied {
        Error::privilege("CAP_SYS_RAWIO (or root)", "read the msr device files")
    } else {
        Error::Io(e)
    }
}

fn open_msr_device(root: &Path, cpu: u32) -> Result<File> {
    let path = root.join(cpu.to_string()).join("msr");
    File::open(&path).map_err(|e| match e.kind() {
        io::ErrorKind::PermissionDenied => Error::privilege(
            "CAP_SYS_RAWIO (or root)",
            format!("open {}", path.display()),
        ),
        io::ErrorKind::NotFound => Error::env(format!(
            "{} does not exist; is the msr module loaded?",
            path.display()
        )),
        _ => Error::Io(e),
    })
}

struct MsrCounter {
    socket_handle: usize,
    address: u64,
}

/// Reads a set of domains through per-socket msr device handles.
pub struct MsrBackend {
    handles: Vec<File>,
    counters: Vec<MsrCounter>,
    meta: Vec<CounterMeta>,
}

impl MsrBackend {
    /// Opens one device per socket and resolves units. `kinds` selects the
    /// domains; kinds absent from the vendor's layout are rejected.
    pub fn open(root: &Path, topology: &Topology, kinds: &[DomainKind]) -> Result<MsrBackend> {
        let layout = msr_layout_for(topology)?;

        let mut handles = Vec::new();
        let mut socket_handle_index = BTreeMap::new();
        for &socket in topology.cpus_per_socket.keys() {
            let cpu = topology
                .first_cpu_of(socket)
                .ok_or_else(|| Error::env(format!("socket {socket} has no CPUs")))?;
            socket_handle_index.insert(socket, handles.len());
            handles.push(open_msr_device(root, cpu)?);
        }

        let mut counters = Vec::new();
        let mut meta = Vec::new();
        for &kind in kinds {
            let address = *layout.counter_addresses.get(&kind).ok_or_else(|| {
                Error::usage(format!(
                    "domain {kind} is not available via MSR on this vendor"
                ))
            })?;
            let sockets: Vec<u32> = if kind.is_per_socket() {
                topology.cpus_per_socket.keys().copied().collect()
            } else {
                vec![0] // psys is system-wide, read through socket 0
            };
            for socket in sockets {
                let handle = socket_handle_index[&socket];
                let decoded =
                    decode_energy_unit(read_msr_register(&handles[handle], layout.unit_register)?);
                let unit = unit_for_domain(&layout, topology, kind, decoded);
                let domain = if kind.is_per_socket() {
                    DomainId::socketed(kind, socket)
                } else {
                    DomainId::psys()
                };
                counters.push(MsrCounter {
                    socket_handle: handle,
                    address,
                });
                meta.push(CounterMeta {
                    domain,
                    mechanism: MechanismKind::Msr,
                    unit_joules_per_lsb: unit,
                    wrap_constant: u32::MAX as u64,
                });
            }
        }
        Ok(MsrBackend {
            handles,
            counters,
            meta,
        })
    }

    /// Number of open device handles (one per socket).
    pub fn handle_count(&self) -> usize {
        self.handles.len()
    }
}

impl Backend for MsrBackend {
    fn mechanism(&self) -> MechanismKind {
        MechanismKind::Msr
    }

    fn counters(&self) -> &[CounterMeta] {
        &self.meta
    }

    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()> {
        for (i, c) in self.counters.iter().enumerate() {
            out.push(RawReading {
                counter: i,
                timestamp_ns: now_ns,
                value: read_msr_counter(&self.handles[c.socket_handle], c.address),
            });
        }
        Ok(())
    }
}

/// Writes an msr device image: a flat file where each register sits at its
/// own address. Used by fixtures; see the sim module for profile-driven
/// images.
pub fn encode_register_image(registers: &BTreeMap<u64, u64>) -> Vec<u8> {
    let size = registers
        .keys()
        .max()
        .map(|a| (a + 8) as usize)
        .unwrap_or(0);
    let mut image = vec![0u8; size];
    for (&addr, &value) in registers {
        image[addr as usize..addr as usize + 8].copy_from_slice(&value.to_le_bytes());
    }
    image
}
