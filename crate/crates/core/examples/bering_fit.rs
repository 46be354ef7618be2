//! Simulate the Bering Sea model, hide some observations, then estimate the
//! path coefficients and fill the gaps.

use dsem_sheaf::dsem::{simulate, DsemSpec};
use dsem_sheaf::inference::{dsem_residual_report, fit, FitOptions};
use dsem_sheaf::io::load_model;
use dsem_sheaf::sheaf_builder::{ArChoice, DsemSheaf, DsemSheafOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = load_model(concat!(env!("CARGO_MANIFEST_DIR"), "/data/bering.json"))?;
    let truth: DsemSpec = model.spec;
    let n = 25;
    let mut data = simulate(&truth, n, 0.05, 1, &[])?;
    let hidden = [(2, 10), (3, 11), (6, 4)];
    for &(v, t) in &hidden {
        data.remove(v, t);
    }

    let d = DsemSheaf::build(
        &truth.clone().with_free_paths(),
        &DsemSheafOptions::new(n).ar(ArChoice::Uniform(1)),
    )?;
    let r = fit(&d, &data, &FitOptions::default())?;
    println!(
        "radius {:.4} ({:?})",
        r.solve.radius, r.solve.diagnostics.status
    );
    for (est, e) in r.coefficients.iter().zip(truth.path_edges()) {
        println!(
            "{:>12} -> {:<12} {:>8.4}  (simulated with {:.2})",
            est.from,
            est.to,
            est.value,
            e.1.coefficient.value().unwrap()
        );
    }
    let clean = simulate(&truth, n, 0.05, 1, &[])?;
    for &(v, t) in &hidden {
        println!(
            "{}[{t}]: imputed {:.4}, hidden value {:.4}",
            truth.variables()[v],
            r.series.get(v, t).unwrap(),
            clean.get(v, t).unwrap()
        );
    }
    let report = dsem_residual_report(&d, &r.solve.assignment, data.times(), 3)?;
    for e in &report.top {
        println!(
            "misfit {:.1}% between {} and {} at {:?}",
            100.0 * e.share,
            e.lower,
            e.upper,
            e.time
        );
    }
    Ok(())
}
