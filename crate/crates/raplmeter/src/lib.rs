//! Measurement of CPU energy consumption through the RAPL counters.
//!
//! RAPL energy counters can be read through several OS mechanisms: raw
//! model-specific registers, the powercap sysfs tree, the perf-events
//! subsystem from user space, and a kernel-side clock-triggered sampler
//! draining into user space. All of them expose the same counters, but each
//! comes with its own wrap constant, unit conversion and privilege
//! requirements. This crate implements the four mechanisms behind one
//! interface, plus:
//!
//! - overflow-corrected delta computation ([`correction`]),
//! - a drift-free high-frequency polling loop with a dedicated writer
//!   thread ([`polling`]),
//! - a simulated host that materializes fake sysfs trees, MSR device
//!   images and counter producers from a synthetic power profile, with
//!   exact ground-truth energy as an oracle ([`sim`]),
//! - the statistics toolkit used to analyze measurement overhead
//!   benchmarks: IQR outlier filtering, one-sided Wilcoxon rank-sum,
//!   Holm-Bonferroni adjustment and Hodges-Lehmann shift ([`stats`]).
//!
//! Every mechanism can run against fixtures instead of real hardware, so
//! the whole crate is testable on a machine without RAPL and without
//! elevated privileges. Start with the `examples/` directory: each example
//! is a small runnable program exercising one capability.

pub mod backend;
pub mod cli;
pub mod clock;
pub mod correction;
pub mod domain;
pub mod error;
pub mod polling;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
