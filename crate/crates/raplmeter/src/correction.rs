//! Overflow-corrected deltas and raw-to-joule conversion.
//!
//! RAPL counters are free-running accumulators with a limited range: they
//! wrap after roughly a minute under heavy load, silently. The CPU does not
//! signal the wrap, so the reader must poll faster than the wrap period and
//! apply a correction when the value goes backwards:
//!
//! ```text
//! delta = current - prev + C   if current < prev   (wrapped)
//! delta = current - prev       otherwise
//! ```
//!
//! `C` depends on the mechanism, see [`wrap_constant_for`]. One detail worth
//! knowing: if a counter occupies the full range `[0, C]`, the exact modular
//! reconstruction of a wrap would add `C + 1`, not `C`. The correction keeps
//! the documented constant and exposes [`CounterState::overflow_count`], so
//! the worst-case understatement is bounded by one LSB per recorded wrap.

use crate::domain::{DomainId, MechanismKind};
use crate::error::{Error, Result};

/// Per-(domain, mechanism) correction state. Owned by exactly one polling
/// loop; the first reading only initializes the state and yields no delta,
/// because a delta needs two successive readings.
#[derive(Debug, Clone)]
pub struct CounterState {
    prev_raw: u64,
    wrap_constant: u64,
    unit_joules_per_lsb: f64,
    initialized: bool,
    overflow_count: u64,
}

impl CounterState {
    pub fn new(wrap_constant: u64, unit_joules_per_lsb: f64) -> CounterState {
        assert!(
            unit_joules_per_lsb > 0.0,
            "energy unit must be positive, got {unit_joules_per_lsb}"
        );
        CounterState {
            prev_raw: 0,
            wrap_constant,
            unit_joules_per_lsb,
            initialized: false,
            overflow_count: 0,
        }
    }

    pub fn wrap_constant(&self) -> u64 {
        self.wrap_constant
    }

    pub fn unit_joules_per_lsb(&self) -> f64 {
        self.unit_joules_per_lsb
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    /// Number of wrap branches taken since creation.
    pub fn overflow_count(&self) -> u64 {
        self.overflow_count
    }

    /// Feeds one raw reading. Returns `None` on the first reading (it only
    /// initializes the state), then `Some((delta_raw, overflowed))`.
    pub fn observe(&mut self, current_raw: u64) -> Result<Option<(u64, bool)>> {
        if current_raw > self.wrap_constant {
            return Err(Error::CorruptedCounter(format!(
                "raw value {current_raw} exceeds wrap constant {}; the wrap \
                 constant is misconfigured or the counter is corrupted",
                self.wrap_constant
            )));
        }
        if !self.initialized {
            self.prev_raw = current_raw;
            self.initialized = true;
            return Ok(None);
        }
        self.correct_delta(current_raw).map(Some)
    }

    /// Applies the overflow correction to one raw reading and advances the
    /// state. Requires an initialized state.
    pub fn correct_delta(&mut self, current_raw: u64) -> Result<(u64, bool)> {
        if !self.initialized {
            return Err(Error::usage(
                "correct_delta called before the first reading initialized the state",
            ));
        }
        if current_raw > self.wrap_constant {
            return Err(Error::CorruptedCounter(format!(
                "raw value {current_raw} exceeds wrap constant {}",
                self.wrap_constant
            )));
        }
        let (delta, overflowed) = if current_raw < self.prev_raw {
            // Ordered so the intermediate never wraps: prev <= C, so
            // C - prev + current < C + 1 fits in u64 even for C = u64::MAX.
            let delta = (self.wrap_constant - self.prev_raw) + current_raw;
            self.overflow_count += 1;
            (delta, true)
        } else {
            (current_raw - self.prev_raw, false)
        };
        self.prev_raw = current_raw;
        Ok((delta, overflowed))
    }
}

/// The overflow correction constant of each mechanism.
///
/// * MSR energy-status fields are 32 bits wide, so `u32::MAX`.
/// * perf-events accumulates into a kernel-side 64-bit value (both when read
///   from user space and when read by the kernel sampler), so `u64::MAX`.
/// * powercap wraps at the per-node value of `max_energy_range_uj`, which
///   must be passed in.
/// * Simulated counters wrap wherever they were configured to; pass the
///   configured value, or leave `None` for the `u64::MAX` default.
pub fn wrap_constant_for(mechanism: MechanismKind, configured_max: Option<u64>) -> Result<u64> {
    match (mechanism, configured_max) {
        (MechanismKind::Msr, None) => Ok(u32::MAX as u64),
        (MechanismKind::PerfUser, None) | (MechanismKind::PerfEbpf, None) => Ok(u64::MAX),
        (MechanismKind::Powercap, Some(max)) => Ok(max),
        (MechanismKind::Powercap, None) => Err(Error::usage(
            "powercap needs the node's max_energy_range_uj as its wrap constant",
        )),
        (MechanismKind::Simulated, configured) => Ok(configured.unwrap_or(u64::MAX)),
        (mechanism, Some(_)) => Err(Error::usage(format!(
            "{mechanism} has a fixed wrap constant, do not pass one"
        ))),
    }
}

/// Converts a corrected raw delta to joules.
pub fn raw_to_joules(delta_raw: u64, unit_joules_per_lsb: f64) -> f64 {
    debug_assert!(unit_joules_per_lsb > 0.0);
    delta_raw as f64 * unit_joules_per_lsb
}

/// One timestamped, corrected energy reading.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySample {
    /// Monotonic-clock timestamp of the reading, in nanoseconds.
    pub timestamp_ns: u64,
    pub domain: DomainId,
    pub mechanism: MechanismKind,
    pub joules: f64,
    /// True iff the wrap branch of the correction was taken for this delta.
    pub overflowed: bool,
    /// False when the underlying read failed and this sample carries no
    /// energy information. Invalid samples are forwarded (not silently
    /// dropped) so downstream consumers can account for the gap.
    pub valid: bool,
}
