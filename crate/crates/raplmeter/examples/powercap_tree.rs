//! Discover and read a powercap tree.
//!
//! Materializes a fake `intel-rapl` hierarchy for a two-socket machine
//! (with the dram quirk: the kernel nests dram inside the package zone),
//! discovers it like the real tree, and reads each counter.
//!
//! ```text
//! cargo run --example powercap_tree
//! ```

use std::sync::Arc;

use raplmeter::backend::powercap::{discover_powercap, read_powercap};
use raplmeter::clock::VirtualClock;
use raplmeter::domain::{DomainKind, Topology, Vendor};
use raplmeter::sim::fixtures::PowercapFixture;
use raplmeter::sim::PowerProfile;

fn main() -> raplmeter::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let clock = VirtualClock::new();
    let topology = Topology::synthetic(Vendor::Intel, 2, 4);
    let profile = Arc::new(
        PowerProfile::constant(120.0)?
            .with_weight(DomainKind::Core, 0.55)?
            .with_weight(DomainKind::Dram, 0.2)?,
    );

    let fixture = Arc::new(PowercapFixture::create(
        dir.path(),
        profile,
        &topology,
        &[DomainKind::Package, DomainKind::Core, DomainKind::Dram],
        262_143_328_850,
    )?);
    fixture.attach(&clock);
    clock.advance_to(3_000_000_000); // 3 s in

    let discovery = discover_powercap(dir.path(), &topology)?;
    println!(
        "discovered {} nodes under {}:",
        discovery.nodes.len(),
        dir.path().display()
    );
    for node in &discovery.nodes {
        let uj = read_powercap(node)?;
        println!(
            "  {:<10} name={:<10} energy={:>12} uJ  max={} uJ{}",
            node.domain.to_string(),
            node.name,
            uj,
            node.max_energy_range,
            if node.nested_under_package {
                "  (physically nested under the package zone)"
            } else {
                ""
            }
        );
    }
    Ok(())
}
