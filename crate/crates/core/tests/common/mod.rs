#![allow(dead_code)]

use dsem_sheaf::dsem::{Coefficient, DsemSpec, TimeseriesTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const BERING: [&str; 8] = [
    "SeaIce",
    "ColdPool",
    "Copepods",
    "Krill",
    "DietCopepods",
    "DietKrill",
    "Survival",
    "Spawners",
];

pub const BERING_EDGES: [(&str, &str); 8] = [
    ("SeaIce", "ColdPool"),
    ("ColdPool", "Copepods"),
    ("ColdPool", "Krill"),
    ("Copepods", "DietCopepods"),
    ("Krill", "DietKrill"),
    ("DietCopepods", "Survival"),
    ("DietKrill", "Survival"),
    ("Spawners", "Survival"),
];

/// Reference Bering path coefficients, in edge order.
pub const BERING_COEFS: [f64; 8] = [0.6, 1.79, 0.18, 0.29, 0.06, 0.15, 0.13, -0.59];

/// The Bering edge structure with the given lags and coefficients, plus
/// optional self-edges (lag 1) per variable.
pub fn bering(lags: [usize; 8], coefs: [Coefficient; 8], rho: Option<[f64; 8]>) -> DsemSpec {
    let mut b = DsemSpec::builder(BERING);
    for (i, (from, to)) in BERING_EDGES.iter().enumerate() {
        b = b.edge(from, to, lags[i], coefs[i]);
    }
    if let Some(rho) = rho {
        for (v, r) in BERING.iter().zip(rho) {
            b = b.edge(v, v, 1, Coefficient::Fixed(r));
        }
    }
    b.build().unwrap()
}

pub fn fixed(values: [f64; 8]) -> [Coefficient; 8] {
    values.map(Coefficient::Fixed)
}

pub fn free() -> [Coefficient; 8] {
    [Coefficient::Free; 8]
}

/// Series satisfying the plain (AR-free) netlist equations
/// `x_v[t] = h * sum gamma x_src[t - lag] + noise`, terms before the start
/// dropped. Variables without inbound edges get standard-normal values.
pub fn plain_series(
    spec: &DsemSpec,
    n: usize,
    noise_sd: f64,
    seed: u64,
) -> (TimeseriesTable, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = spec.num_variables();
    let mut x = vec![vec![0.0; n]; j];
    let mut noise = vec![vec![0.0; n]; j];
    let order = spec.lag0_order().unwrap();
    for t in 0..n {
        for &v in &order {
            let inbound: Vec<_> = spec.inbound(v).collect();
            if inbound.is_empty() {
                x[v][t] = StandardNormal.sample(&mut rng);
                continue;
            }
            let mut s = 0.0;
            for e in inbound {
                if t >= e.lag {
                    s += spec.h() * e.coefficient.value().unwrap() * x[e.source][t - e.lag];
                }
            }
            let eps: f64 = StandardNormal.sample(&mut rng);
            noise[v][t] = noise_sd * eps;
            x[v][t] = s + noise[v][t];
        }
    }
    let table =
        TimeseriesTable::from_columns((0..n as i64).collect(), spec.variables().to_vec(), x)
            .unwrap();
    (table, noise)
}

/// A random acyclic-at-lag-0 DSEM on 2..=4 variables where every variable
/// touches at least one edge. Self-edges, lagged feedback and free
/// coefficients appear at random.
pub fn random_spec(rng: &mut ChaCha8Rng, allow_free: bool) -> DsemSpec {
    let j = rng.random_range(2..=4);
    let names: Vec<String> = (0..j).map(|i| format!("v{i}")).collect();
    let mut b = DsemSpec::builder(&names).h(if rng.random_bool(0.5) { 1.0 } else { 0.5 });
    let mut touched = vec![false; j];
    let coef = |rng: &mut ChaCha8Rng| {
        if allow_free && rng.random_bool(0.3) {
            Coefficient::Free
        } else {
            Coefficient::Fixed(rng.random_range(-0.9..0.9))
        }
    };
    for a in 0..j {
        for c in a + 1..j {
            if rng.random_bool(0.5) {
                b = b.edge(&names[a], &names[c], rng.random_range(0..=2), coef(rng));
                touched[a] = true;
                touched[c] = true;
            }
            if rng.random_bool(0.2) {
                b = b.edge(&names[c], &names[a], rng.random_range(1..=2), coef(rng));
                touched[a] = true;
                touched[c] = true;
            }
        }
    }
    for v in 0..j {
        if !touched[v] {
            let u = if v == 0 { 1 } else { v - 1 };
            let (from, to) = if u < v { (u, v) } else { (v, u) };
            b = b.edge(&names[from], &names[to], 1, coef(rng));
            touched[u] = true;
        }
        if rng.random_bool(0.3) {
            for lag in 1..=rng.random_range(1..=2) {
                b = b.edge(
                    &names[v],
                    &names[v],
                    lag,
                    Coefficient::Fixed(rng.random_range(-0.6..0.6)),
                );
            }
        }
    }
    b.build().unwrap()
}

/// Copy of `spec` with every free coefficient replaced by a random value.
pub fn realize(spec: &DsemSpec, rng: &mut ChaCha8Rng) -> DsemSpec {
    let values: Vec<f64> = spec
        .path_edges()
        .map(|(_, e)| {
            e.coefficient
                .value()
                .unwrap_or_else(|| rng.random_range(-0.9..0.9))
        })
        .collect();
    spec.clone().with_path_values(&values)
}
