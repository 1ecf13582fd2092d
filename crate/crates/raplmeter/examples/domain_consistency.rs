//! Cross-checking mechanisms against each other catches kernel bugs.
//!
//! A real AMD server once listed {package, core} through powercap while
//! perf-events listed all five domains; only package actually made sense
//! for that CPU. A tool that supports several mechanisms can flag such
//! disagreements automatically instead of silently trusting one source.
//!
//! ```text
//! cargo run --example domain_consistency
//! ```

use std::collections::{BTreeMap, BTreeSet};

use raplmeter::domain::{check_domain_consistency, DomainId, DomainKind, MechanismKind};

fn main() -> raplmeter::Result<()> {
    let pkg0 = DomainId::socketed(DomainKind::Package, 0);
    let core0 = DomainId::socketed(DomainKind::Core, 0);

    let powercap: BTreeSet<DomainId> = [pkg0, core0].into_iter().collect();
    let perf: BTreeSet<DomainId> = [
        pkg0,
        core0,
        DomainId::socketed(DomainKind::Uncore, 0),
        DomainId::socketed(DomainKind::Dram, 0),
        DomainId::psys(),
    ]
    .into_iter()
    .collect();

    println!("powercap lists: {}", names(&powercap));
    println!("perf     lists: {}", names(&perf));

    let mut lists = BTreeMap::new();
    lists.insert(MechanismKind::Powercap, powercap);
    lists.insert(MechanismKind::PerfUser, perf);

    let discrepancies = check_domain_consistency(&lists)?;
    println!("\n{} discrepancies:", discrepancies.len());
    for d in &discrepancies {
        println!("  {d}");
    }
    println!("\none of the mechanisms (or the kernel behind it) is wrong; trust neither yet");
    Ok(())
}

fn names(set: &BTreeSet<DomainId>) -> String {
    set.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}
