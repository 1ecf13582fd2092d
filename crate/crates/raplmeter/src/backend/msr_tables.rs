//! Register addresses and unit quirks for the MSR mechanism, in one place.
//!
//! Addresses are transcribed from the vendor manuals (Intel SDM vol. 4 and
//! AMD PPR) and cross-checked against the Linux RAPL driver. Keep this the
//! only file to touch when a new model needs an entry.

use crate::domain::DomainKind;

/// Intel RAPL power-unit register (ESU field in bits 12:8).
pub const INTEL_UNIT_REGISTER: u64 = 0x606;

/// Intel energy-status counters.
pub const INTEL_COUNTERS: &[(DomainKind, u64)] = &[
    (DomainKind::Package, 0x611),
    (DomainKind::Dram, 0x619),
    (DomainKind::Core, 0x639),   // PP0
    (DomainKind::Uncore, 0x641), // PP1
    (DomainKind::Psys, 0x64D),
];

/// AMD RAPL power-unit register. The ESU field is assumed to sit in bits
/// 12:8 like Intel's; the AMD documentation does not contradict this and
/// the Linux driver decodes it the same way.
pub const AMD_UNIT_REGISTER: u64 = 0xC001_0299;

/// AMD energy-status counters (Zen 1 to Zen 4 expose only these two).
pub const AMD_COUNTERS: &[(DomainKind, u64)] = &[
    (DomainKind::Core, 0xC001_029A),
    (DomainKind::Package, 0xC001_029B),
];

/// Fixed dram energy unit on E5-2600-class Xeon servers, in joules.
///
/// On these models the unit decoded from the power-unit register applies to
/// every domain except dram, whose counter ticks in 15.3 microjoule steps.
pub const XEON_E5_2600_DRAM_UNIT: f64 = 15.3e-6;

/// Intel family/model identifiers whose dram domain uses
/// [`XEON_E5_2600_DRAM_UNIT`] instead of the decoded unit. These are the
/// server parts the Linux driver special-cases: Haswell-EP, Broadwell-EP,
/// Broadwell-DE and the Xeon Phi line.
pub const DRAM_UNIT_OVERRIDE_MODELS: &[&str] = &["06_3F", "06_4F", "06_56", "06_57", "06_85"];

pub fn dram_unit_override(model_id: &str) -> Option<f64> {
    DRAM_UNIT_OVERRIDE_MODELS
        .contains(&model_id)
        .then_some(XEON_E5_2600_DRAM_UNIT)
}
