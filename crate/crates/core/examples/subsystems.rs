//! The lattice of subsystems of the Bering model: variable sets closed under
//! taking causes, each with its own state space and update map.

use dsem_sheaf::io::load_model;
use dsem_sheaf::subsystems::{in_closed_sets, subsystem_sheaf, DsemDag, SubsystemLattice};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(concat!(env!("CARGO_MANIFEST_DIR"), "/data/bering.json"))?;
    let dag = DsemDag::from_spec(&model.spec)?;
    let sets = in_closed_sets(&dag)?;
    println!("{} subsystems", sets.len());
    for &s in &sets {
        println!("  {}", dag.set_label(s));
    }
    let lattice = SubsystemLattice::new(&dag, &sets);
    println!("{} covering relations", lattice.hasse.len());
    let sheaf = subsystem_sheaf(&model.spec)?;
    println!(
        "update maps commute with projections up to {:.2e}",
        sheaf.commuting_residual(&model.spec, 20, 0)?
    );
    println!("{}", lattice.to_dot());
    Ok(())
}
