//! A two-part feedback loop `y = 1 - x`, `x = y`. Over the reals its only
//! section is `(1/2, 1/2)`; on an integer grid there is none.

use dsem_sheaf::inference::{minimize, SolveRequest};
use dsem_sheaf::maps::Map;
use dsem_sheaf::sheaf_builder::{feedback_sheaf, FeedbackSpace};
use dsem_sheaf::topology::Assignment;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = Map::affine(
        DMatrix::from_element(1, 1, -1.0),
        DVector::from_element(1, 1.0),
    )?;
    let real = feedback_sheaf(FeedbackSpace::Real, f.clone(), Map::identity(1))?;
    for (x, y) in [(0.0, 0.0), (0.5, 0.5), (3.0, -1.0)] {
        let r = dsem_sheaf::topology::consistency_radius(&real.sheaf, &real.assignment(x, y))?;
        println!("radius at ({x}, {y}) = {r:.4}");
    }
    let res = minimize(
        &SolveRequest::new(&real.sheaf, Assignment::empty(&real.sheaf)).ties(real.ties.clone()),
    )?;
    println!(
        "minimizer ({:.6}, {:.6}) with radius {:.2e}",
        res.assignment.get(real.x).unwrap()[0],
        res.assignment.get(real.y).unwrap()[0],
        res.radius
    );
    let grid = feedback_sheaf(
        FeedbackSpace::IntegerGrid { lo: -5, hi: 5 },
        f,
        Map::identity(1),
    )?;
    println!("integer sections on -5..=5: {:?}", grid.grid_sections());
    Ok(())
}
