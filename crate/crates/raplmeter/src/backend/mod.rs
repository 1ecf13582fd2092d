//! The four counter-reading mechanisms behind one interface.
//!
//! Every mechanism ends up producing the same thing: raw counter values for
//! a set of domains, each with a unit and a wrap constant. The polling
//! engine owns the correction state and drives any [`Backend`]
//! implementation the same way.

pub mod ebpf;
pub mod msr;
pub mod msr_tables;
pub mod perf;
pub mod powercap;

use crate::domain::{DomainId, MechanismKind};
use crate::error::Result;

/// Static description of one registered counter.
#[derive(Debug, Clone)]
pub struct CounterMeta {
    pub domain: DomainId,
    pub mechanism: MechanismKind,
    pub unit_joules_per_lsb: f64,
    pub wrap_constant: u64,
}

/// One raw reading produced by a poll. `counter` indexes into
/// [`Backend::counters`]. A failed read is carried as `Err` so the engine
/// can mark the sample invalid instead of losing track of it.
#[derive(Debug)]
pub struct RawReading {
    pub counter: usize,
    pub timestamp_ns: u64,
    pub value: Result<u64>,
}

impl RawReading {
    pub fn ok(counter: usize, timestamp_ns: u64, raw: u64) -> RawReading {
        RawReading {
            counter,
            timestamp_ns,
            value: Ok(raw),
        }
    }
}

/// A source of raw counter values.
pub trait Backend: Send {
    fn mechanism(&self) -> MechanismKind;

    fn counters(&self) -> &[CounterMeta];

    /// Collects the readings for one tick into `out`.
    ///
    /// Pull-style mechanisms (msr, powercap, perf, sim) append exactly one
    /// reading per counter, stamped `now_ns`. Drain-style mechanisms (the
    /// kernel sampler) append everything accumulated since the last poll,
    /// with the producer's own timestamps. A returned error is fatal for
    /// the run; per-counter failures go into `RawReading::value` instead.
    fn poll(&mut self, now_ns: u64, out: &mut Vec<RawReading>) -> Result<()>;

    /// Expected samples per second when polled at `poll_hz`, used to size
    /// the loop-to-writer queue. Pull-style backends emit one sample per
    /// counter per tick; drain-style backends produce at their own rate
    /// independent of the polling frequency and must override this.
    fn sample_rate_hint(&self, poll_hz: f64) -> f64 {
        poll_hz * self.counters().len() as f64
    }
}
