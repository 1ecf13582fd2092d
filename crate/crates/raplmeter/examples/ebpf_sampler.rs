//! The kernel-sampler protocol: a clock-triggered producer fills a shared
//! buffer at 1000 Hz, user space drains it in batches.
//!
//! The producer here is the simulated one (the in-kernel program needs
//! CAP_BPF and a built kernel object), but the buffer, the overwrite
//! accounting and the drain path are the same code the real mechanism
//! uses.
//!
//! ```text
//! cargo run --example ebpf_sampler
//! ```

use std::sync::Arc;

use raplmeter::backend::ebpf::SamplerConfig;
use raplmeter::clock::{Clock, VirtualClock};
use raplmeter::correction::CounterState;
use raplmeter::domain::{DomainId, DomainKind};
use raplmeter::sim::{start_simulated_sampler, PowerProfile};

fn main() -> raplmeter::Result<()> {
    let clock = VirtualClock::new();
    let profile = Arc::new(PowerProfile::constant(50.0)?);
    let unit = (2.0f64).powi(-32);
    let domains = vec![
        DomainId::socketed(DomainKind::Package, 0),
        DomainId::socketed(DomainKind::Dram, 0),
    ];

    // drained at 10 Hz: default capacity 4 * 1000/10 = 400 records
    let config = SamplerConfig::new(domains, 1000, 10.0);
    let mut session = start_simulated_sampler(profile, config, 0, unit, u64::MAX)?;
    println!(
        "sampler running at {} Hz, buffer capacity {}",
        session.kernel_rate_hz(),
        session.buffer_capacity()
    );

    let mut pkg_state = CounterState::new(u64::MAX, unit);
    let mut energy = 0.0f64;
    let mut records = 0usize;
    for cycle in 1..=30u64 {
        clock.advance_to(cycle * 100_000_000); // 100 ms per drain
        let batch = session.drain(clock.now_ns())?;
        records += batch.len();
        for record in &batch {
            if let Some((delta, _)) = pkg_state.observe(record.values[0])? {
                energy += delta as f64 * unit;
            }
        }
        if cycle % 10 == 0 {
            println!(
                "after {:>4} ms: {records} records drained, {} dropped, package energy {energy:.3} J",
                cycle * 100,
                session.dropped()
            );
        }
    }

    // a buffer too small for the drain rate loses the oldest records
    let clock2 = VirtualClock::new();
    let mut starved_config =
        SamplerConfig::new(vec![DomainId::socketed(DomainKind::Package, 0)], 1000, 10.0);
    starved_config.buffer_capacity = Some(10);
    let mut starved = start_simulated_sampler(
        Arc::new(PowerProfile::constant(50.0)?),
        starved_config,
        0,
        unit,
        u64::MAX,
    )?;
    clock2.advance_to(100_000_000);
    let kept = starved.drain(clock2.now_ns())?;
    println!(
        "\nstarved buffer (capacity 10, 100 records/cycle): kept {}, dropped {}",
        kept.len(),
        starved.dropped()
    );
    Ok(())
}
