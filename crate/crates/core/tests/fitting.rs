mod common;

use common::*;
use dsem_sheaf::dsem::{fit_dsem_ml, simulate, Coefficient, DsemSpec, TimeseriesTable};
use dsem_sheaf::inference::{
    dsem_residual_report, fit, fit_from, minimize, summarize, FitOptions, MisfitPattern,
    SolveRequest,
};
use dsem_sheaf::sheaf_builder::{ArChoice, DsemSheaf, DsemSheafOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// ColdPool drives Krill one step later, so the two diet series are not
/// proportional and every path is identified from a single noiseless run.
const LAGGED: [usize; 8] = [0, 0, 1, 0, 0, 0, 0, 0];

#[test]
fn noiseless_bering_coefficients_are_recovered() {
    let truth = bering(LAGGED, fixed(BERING_COEFS), None);
    let n = 30;
    let (data, _) = plain_series(&truth, n, 0.0, 7);
    let spec = bering(LAGGED, free(), None);
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Uniform(0))).unwrap();
    let r = fit(&d, &data, &FitOptions::default()).unwrap();
    assert!(r.solve.radius < 1e-6, "radius {}", r.solve.radius);
    for (est, want) in r.coefficients.iter().zip(BERING_COEFS) {
        assert!(
            (est.value - want).abs() <= 1e-4,
            "{}->{}: {} vs {want}",
            est.from,
            est.to,
            est.value
        );
    }
}

/// The plain Bering equations driven by given exogenous series and noise.
fn drive(spec: &DsemSpec, exo: &[Vec<f64>], noise: &[Vec<f64>]) -> TimeseriesTable {
    let (j, n) = (spec.num_variables(), exo[0].len());
    let mut x = vec![vec![0.0; n]; j];
    for t in 0..n {
        for &v in &spec.lag0_order().unwrap() {
            let inbound: Vec<_> = spec.inbound(v).collect();
            x[v][t] = if inbound.is_empty() {
                exo[v][t]
            } else {
                inbound
                    .iter()
                    .filter(|e| t >= e.lag)
                    .map(|e| e.coefficient.value().unwrap() * x[e.source][t - e.lag])
                    .sum::<f64>()
                    + noise[v][t]
            };
        }
    }
    TimeseriesTable::from_columns((0..n as i64).collect(), spec.variables().to_vec(), x).unwrap()
}

fn imputed(d: &DsemSheaf, data: &TimeseriesTable, holes: &[(usize, usize)]) -> Vec<f64> {
    let mut gappy = data.clone();
    for &(v, t) in holes {
        gappy.remove(v, t);
    }
    let r = fit(d, &gappy, &FitOptions::default()).unwrap();
    holes
        .iter()
        .map(|&(v, t)| r.series.get(v, t).unwrap())
        .collect()
}

/// With fixed coefficients the imputation error is linear in the equation
/// noise, so its standard deviation per entry follows from the responses to
/// unit noise at each endogenous entry.
#[test]
fn imputation_error_within_three_sigma() {
    let spec = bering([0; 8], fixed(BERING_COEFS), None);
    let (j, n, sd) = (8, 16, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let exo: Vec<Vec<f64>> = (0..j)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise: Vec<Vec<f64>> = (0..j)
        .map(|_| (0..n).map(|_| sd * rng.random_range(-1.7..1.7)).collect())
        .collect();
    let data = drive(&spec, &exo, &noise);
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Uniform(0))).unwrap();
    // A draw that hides an equation's target together with one of its
    // exogenous drivers leaves that pair undetermined; redraw until the
    // noiseless series is imputed exactly.
    let clean = drive(&spec, &exo, &vec![vec![0.0; n]; j]);
    let holes = loop {
        let holes: Vec<(usize, usize)> = (0..j)
            .flat_map(|v| (0..n).map(move |t| (v, t)))
            .filter(|_| rng.random_bool(0.2))
            .collect();
        let exact = imputed(&d, &clean, &holes)
            .iter()
            .zip(&holes)
            .all(|(x, &(v, t))| (x - clean.get(v, t).unwrap()).abs() < 1e-9);
        if exact {
            break holes;
        }
    };
    assert!(holes.len() >= 15);
    let got = imputed(&d, &data, &holes);
    let zero = vec![vec![0.0; n]; j];
    let endogenous: Vec<usize> = (0..j)
        .filter(|&v| spec.inbound(v).next().is_some())
        .collect();
    let mut var = vec![0.0; holes.len()];
    for &v in &endogenous {
        for t in 0..n {
            let mut unit = zero.clone();
            unit[v][t] = 1.0;
            let response = drive(&spec, &zero, &unit);
            for (k, e) in imputed(&d, &response, &holes).iter().enumerate() {
                let (hv, ht) = holes[k];
                let err = e - response.get(hv, ht).unwrap();
                var[k] += (sd * err).powi(2);
            }
        }
    }
    for (k, &(v, t)) in holes.iter().enumerate() {
        let err = (got[k] - data.get(v, t).unwrap()).abs();
        let sigma = var[k].sqrt();
        assert!(
            err <= 3.0 * sigma + 1e-9,
            "{}[{t}]: error {err:.3e}, sigma {sigma:.3e}",
            BERING[v]
        );
    }
}

#[test]
fn free_paths_never_fit_worse_than_reference_values() {
    let rho = [0.8, 0.7, 0.6, 0.9, 0.5, 0.85, 0.2, -0.7];
    let truth = bering([0; 8], fixed(BERING_COEFS), Some(rho));
    let n = 20;
    let data = simulate(&truth, n, 0.2, 4, &[1.0; 8]).unwrap();
    let opts = DsemSheafOptions::new(n).ar(ArChoice::Uniform(1));
    let hard = DsemSheaf::build(&bering([0; 8], fixed(BERING_COEFS), None), &opts).unwrap();
    let free = DsemSheaf::build(&bering([0; 8], free(), None), &opts).unwrap();
    let h = fit(&hard, &data, &FitOptions::default()).unwrap();
    let start = free.transfer(&hard, &h.solve.assignment).unwrap();
    let f = fit_from(&free, &data, start, &FitOptions::default()).unwrap();
    assert!(
        f.solve.radius <= h.solve.radius + 1e-9,
        "{} > {}",
        f.solve.radius,
        h.solve.radius
    );
    assert!(h.solve.radius > 0.0);
}

#[test]
fn complete_data_fit_matches_maximum_likelihood() {
    use Coefficient::{Fixed, Free};
    let spec = DsemSpec::builder(["a", "b", "c"])
        .edge("a", "a", 1, Fixed(0.5))
        .edge("b", "b", 1, Fixed(0.3))
        .edge("c", "c", 1, Fixed(0.4))
        .edge("c", "c", 2, Fixed(-0.2))
        .edge("a", "b", 0, Free)
        .edge("b", "c", 1, Free)
        .edge("a", "c", 0, Free)
        .build()
        .unwrap();
    let truth = spec.clone().with_path_values(&[0.7, -0.4, 0.25]);
    let n = 40;
    let data = simulate(&truth, n, 0.3, 9, &[1.0, 0.0, -1.0]).unwrap();
    let ml = fit_dsem_ml(&spec, &data, &[]).unwrap();
    // The likelihood conditions on the observed series, so the series cells
    // join the frozen support.
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Dynamics)).unwrap();
    let mut obs = d.observation_assignment(&data).unwrap();
    for (v, &c) in d.variable_cells.iter().enumerate() {
        obs.set(c, data.column(v).to_vec()).unwrap();
    }
    let req = SolveRequest::new(&d.sheaf, obs)
        .ties(d.ties.clone())
        .initial(d.initial_assignment(&data).unwrap());
    let r = summarize(&d, &data, minimize(&req).unwrap());
    assert_eq!(r.coefficients.len(), 3);
    for s in &r.coefficients {
        let m = ml.estimates.iter().find(|m| m.edge == s.edge).unwrap();
        assert!(
            (s.value - m.value).abs() <= 1e-3,
            "{}->{}: {} vs {}",
            s.from,
            s.to,
            s.value,
            m.value
        );
    }
}

fn noiseless_bering(n: usize) -> (DsemSpec, TimeseriesTable) {
    let rho = [0.8, 0.7, 0.6, 0.9, 0.5, 0.85, 0.2, -0.7];
    let spec = bering([0; 8], fixed(BERING_COEFS), Some(rho));
    let data = simulate(
        &spec,
        n,
        0.0,
        0,
        &[2.0, -2.0, 2.0, -3.0, 1.0, 3.0, -1.0, 2.0],
    )
    .unwrap();
    (spec, data)
}

#[test]
fn section_has_empty_residual_report() {
    let n = 12;
    let (spec, data) = noiseless_bering(n);
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Dynamics)).unwrap();
    let a = d.induced_assignment(&data, &spec).unwrap();
    let report = dsem_residual_report(&d, &a, data.times(), 10).unwrap();
    assert!(report.top.is_empty());
    assert!(report
        .variables
        .iter()
        .all(|v| v.pattern == MisfitPattern::None));
}

#[test]
fn corrupted_observation_ranks_first() {
    let n = 12;
    let (spec, mut data) = noiseless_bering(n);
    let krill = 3;
    data.set(krill, 6, data.get(krill, 6).unwrap() + 5.0);
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Dynamics)).unwrap();
    let r = fit(&d, &data, &FitOptions::default()).unwrap();
    let report = dsem_residual_report(&d, &r.solve.assignment, data.times(), 5).unwrap();
    let first = &report.top[0];
    assert_eq!(first.variable.as_deref(), Some("Krill"));
    assert_eq!(first.time, Some(6));
    let misfit = &report.variables[krill];
    assert_eq!(misfit.pattern, MisfitPattern::Outlier);
    assert_eq!(misfit.worst_time, Some(6));
}

#[test]
fn wrong_dynamics_spread_misfit_evenly() {
    use Coefficient::Fixed;
    let spec = DsemSpec::builder(["x", "y"])
        .edge("x", "x", 1, Fixed(0.9))
        .edge("x", "y", 0, Fixed(1.0))
        .edge("y", "y", 1, Fixed(0.0))
        .build()
        .unwrap();
    let n = 16;
    let alternating: Vec<f64> = (0..n)
        .map(|t| if t % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let data = TimeseriesTable::from_columns(
        (0..n as i64).collect(),
        vec!["x".into(), "y".into()],
        vec![alternating.clone(), alternating],
    )
    .unwrap();
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Dynamics)).unwrap();
    let r = fit(&d, &data, &FitOptions::default()).unwrap();
    let report = dsem_residual_report(&d, &r.solve.assignment, data.times(), 5).unwrap();
    assert!(report.radius > 0.1);
    assert_eq!(report.variables[0].pattern, MisfitPattern::Uniform);
}

#[test]
fn frozen_observations_and_ties_are_exact() {
    let n = 10;
    let (_, mut data) = noiseless_bering(n);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in 0..8 {
        for t in 0..n {
            let x = data.get(v, t).unwrap();
            data.set(v, t, x + rng.random_range(-0.1..0.1));
        }
    }
    data.remove(2, 5);
    let spec = bering([0; 8], free(), None);
    let d = DsemSheaf::build(&spec, &DsemSheafOptions::new(n).ar(ArChoice::Uniform(1))).unwrap();
    let r = fit(&d, &data, &FitOptions::default()).unwrap();
    let a = &r.solve.assignment;
    for v in 0..8 {
        for t in 0..n {
            if let Some(x) = data.get(v, t) {
                assert_eq!(
                    a.get(d.observation_cells[v][t]).unwrap()[0].to_bits(),
                    x.to_bits()
                );
            }
        }
    }
    for g in &d.ties {
        let first = g.slots[0];
        let reference = &a.get(first.cell).unwrap()[first.start..first.start + first.len];
        for s in &g.slots[1..] {
            assert_eq!(&a.get(s.cell).unwrap()[s.start..s.start + s.len], reference);
        }
    }
}

/// Freeing more coefficients can only lower the optimal radius when each
/// fit starts from the previous optimum.
#[test]
fn radius_is_monotone_over_nested_problems() {
    let rho = [0.8, 0.7, 0.6, 0.9, 0.5, 0.85, 0.2, -0.7];
    let truth = bering([0; 8], fixed(BERING_COEFS), Some(rho));
    let n = 14;
    let data = simulate(&truth, n, 0.2, 5, &[1.0; 8]).unwrap();
    let opts = DsemSheafOptions::new(n).ar(ArChoice::Uniform(1));
    let mut previous: Option<(DsemSheaf, f64, dsem_sheaf::topology::Assignment)> = None;
    for k in 0..=8 {
        let coefs: [Coefficient; 8] = std::array::from_fn(|i| {
            if i < k {
                Coefficient::Free
            } else {
                Coefficient::Fixed(BERING_COEFS[i])
            }
        });
        let d = DsemSheaf::build(&bering([0; 8], coefs, None), &opts).unwrap();
        let r = match &previous {
            None => fit(&d, &data, &FitOptions::default()).unwrap(),
            Some((p, _, a)) => {
                fit_from(&d, &data, d.transfer(p, a).unwrap(), &FitOptions::default()).unwrap()
            }
        };
        if let Some((_, rp, _)) = &previous {
            assert!(
                r.solve.radius <= rp + 1e-9,
                "{k} free: {} > {rp}",
                r.solve.radius
            );
        }
        previous = Some((d, r.solve.radius, r.solve.assignment));
    }
}

#[test]
fn solve_request_respects_frozen_cells() {
    let n = 8;
    let (spec, data) = noiseless_bering(n);
    let d = DsemSheaf::build(
        &spec.clone().with_free_paths(),
        &DsemSheafOptions::new(n).ar(ArChoice::Dynamics),
    )
    .unwrap();
    let mut obs = d.observation_assignment(&data).unwrap();
    let cell = d.coefficient_cells[0].unwrap();
    obs.set(cell, vec![0.25]).unwrap();
    let req = SolveRequest::new(&d.sheaf, obs)
        .ties(d.ties.clone())
        .freeze_cells(&[cell]);
    let res = minimize(&req).unwrap();
    assert_eq!(res.assignment.get(cell).unwrap(), &[0.25]);
}
