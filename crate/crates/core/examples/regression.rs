//! Line fitting as radius minimization: with the line's copies of `x` and `y`
//! tied to the data the optimum is ordinary least squares; untied, it is
//! orthogonal (total least squares) regression.

use dsem_sheaf::inference::{minimize, SolveRequest};
use dsem_sheaf::sheaf_builder::regression_sheaf;
use dsem_sheaf::topology::Assignment;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [0.1, 1.3, 1.8, 3.4, 3.9, 5.2];
    let r = regression_sheaf(x.len());
    let mut obs = Assignment::empty(&r.sheaf);
    obs.set(r.x, x.to_vec())?;
    obs.set(r.y, y.to_vec())?;

    let ols = minimize(&SolveRequest::new(&r.sheaf, obs.clone()).ties(r.ties.clone()))?;
    println!(
        "tied:   m = {:.6}, b = {:.6}, radius = {:.6}",
        ols.assignment.get(r.m).unwrap()[0],
        ols.assignment.get(r.b).unwrap()[0],
        ols.radius
    );

    let tls = minimize(
        &SolveRequest::new(&r.sheaf, obs)
            .ties(r.ties.clone())
            .ties_active(false),
    )?;
    let part = tls.assignment.get(r.part).unwrap();
    println!(
        "untied: m = {:.6}, b = {:.6}, radius = {:.6}",
        part[0], part[1], tls.radius
    );
    Ok(())
}
