//! Invariant sets of a finite dynamical system, a subsystem given by a
//! quotient map, and gluing invariant sets from a cover.

use dsem_sheaf::subsystems::{
    check_subsystem, cosheaf_of_invariants, invariant_sets, set_members, FiniteDyn, SubsystemCheck,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two 3-cycles and a fixed point.
    let f = FiniteDyn::new(vec![1, 2, 0, 4, 5, 3, 6])?;
    let sets = invariant_sets(&f, 12)?;
    println!(
        "{} invariant sets, e.g. {:?}",
        sets.len(),
        set_members(sets[1])
    );

    // Position within a cycle, with the fixed point kept apart.
    let p = [0, 1, 2, 0, 1, 2, 3];
    match check_subsystem(&f, &p, 4)? {
        SubsystemCheck::Subsystem { g } => {
            println!("quotient by position is a subsystem with g = {g:?}")
        }
        SubsystemCheck::Witness { x, y } => println!("not a subsystem: {x} and {y}"),
    }
    match check_subsystem(&f, &[0, 0, 1, 1, 1, 1, 1], 2)? {
        SubsystemCheck::Subsystem { g } => println!("unexpected subsystem {g:?}"),
        SubsystemCheck::Witness { x, y } => {
            println!("second quotient fails: states {x} and {y} agree but their images do not")
        }
    }

    let cosheaf = cosheaf_of_invariants(&f, 12)?;
    let report = cosheaf.check_gluing(8, 50, 1);
    println!(
        "{} covers glued, {} failures",
        report.covers_checked,
        report.failures.len()
    );
    Ok(())
}
