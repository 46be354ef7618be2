//! Estimating AR(2) coefficients of a series from its AR sheaf.

use dsem_sheaf::inference::{minimize, SolveRequest};
use dsem_sheaf::sheaf_builder::ar_sheaf;
use dsem_sheaf::topology::{consistency_radius, Assignment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (a1, a2) = (1.5, -0.7);
    let mut x = vec![1.0, 0.5];
    for t in 2..30 {
        let wobble = if t % 3 == 0 { 0.05 } else { -0.02 };
        x.push(a1 * x[t - 1] + a2 * x[t - 2] + wobble);
    }
    let s = ar_sheaf(2, x.len())?;
    let exact = s.assignment(&[a1, a2], &x);
    println!(
        "radius at the generating coefficients: {:.4}",
        consistency_radius(&s.sheaf, &exact)?
    );

    let mut obs = Assignment::empty(&s.sheaf);
    obs.set(s.x, x.clone())?;
    let res = minimize(&SolveRequest::new(&s.sheaf, obs).ties(s.ties.clone()))?;
    let a = res.assignment.get(s.coefficients).unwrap();
    println!(
        "estimated a = [{:.4}, {:.4}], radius {:.4}",
        a[0], a[1], res.radius
    );
    Ok(())
}
