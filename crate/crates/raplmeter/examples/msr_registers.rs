//! Read RAPL energy counters straight from model-specific registers.
//!
//! Uses an MSR device image instead of `/dev/cpu/N/msr`, so no privileges
//! are needed: the image encodes the power-unit register (ESU field) and
//! the per-domain energy counters at the vendor's documented addresses.
//!
//! ```text
//! cargo run --example msr_registers
//! ```

use std::sync::Arc;

use raplmeter::backend::msr::{decode_energy_unit, msr_layout_for, MsrBackend};
use raplmeter::backend::Backend;
use raplmeter::clock::{Clock, VirtualClock};
use raplmeter::correction::CounterState;
use raplmeter::domain::{DomainKind, Topology, Vendor};
use raplmeter::sim::fixtures::MsrFixture;
use raplmeter::sim::PowerProfile;

fn main() -> raplmeter::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let clock = VirtualClock::new();
    let topology = Topology::synthetic(Vendor::Intel, 1, 4);
    let profile = Arc::new(PowerProfile::constant(65.0)?);

    let layout = msr_layout_for(&topology)?;
    println!("vendor register layout:");
    println!("  power unit register: {:#x}", layout.unit_register);
    for (kind, addr) in &layout.counter_addresses {
        println!("  {kind:<8} energy status at {addr:#x}");
    }

    let fixture = Arc::new(MsrFixture::create(
        dir.path(),
        profile,
        topology.clone(),
        &[DomainKind::Package],
        16, // ESU: counter ticks are 2^-16 J
    )?);
    fixture.attach(&clock);
    println!(
        "\nESU 16 decodes to {} J per LSB",
        decode_energy_unit(16 << 8)
    );

    let mut backend = MsrBackend::open(dir.path(), &topology, &[DomainKind::Package])?;
    let meta = backend.counters()[0].clone();
    let mut state = CounterState::new(meta.wrap_constant, meta.unit_joules_per_lsb);

    // two reads one second apart give one corrected delta
    let mut readings = Vec::new();
    clock.advance_to(1_000_000_000);
    backend.poll(clock.now_ns(), &mut readings)?;
    clock.advance_to(2_000_000_000);
    backend.poll(clock.now_ns(), &mut readings)?;

    for reading in readings {
        let raw = reading.value?;
        match state.observe(raw)? {
            None => println!("first read: raw {raw:#x} (initializes the correction state)"),
            Some((delta, overflowed)) => println!(
                "second read: raw {raw:#x}, delta {delta} LSB = {:.3} J (overflowed: {overflowed})",
                delta as f64 * meta.unit_joules_per_lsb
            ),
        }
    }
    Ok(())
}
