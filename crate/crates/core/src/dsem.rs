//! Dynamic structural equation models: specification, Euler discretization,
//! path and precision matrices, simulation and a maximum-likelihood baseline.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use petgraph::algo::toposort;
use petgraph::graph::DiGraph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maps::SparseRows;
use crate::optim::{self, LeastSquares, LmReport};

#[derive(Debug, Error, Clone)]
pub enum DsemError {
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("lag {0} is not in the lag list")]
    LagNotDeclared(usize),
    #[error("lag list must be strictly increasing and start at 0")]
    InvalidLagList,
    #[error("step h must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("lag-0 edges form a cycle through `{0}`")]
    CausalityViolation(String),
    #[error("edge {0} -> {1} at lag {2} declared twice")]
    DuplicateEdge(String, String, usize),
    #[error("a free coefficient is present on edge {0} -> {1}; numeric coefficients are required")]
    FreeCoefficientPresent(String, String),
    #[error("no free coefficients to estimate")]
    NothingToEstimate,
    #[error("link matrix entry {0} is zero")]
    SingularLink(usize),
    #[error("link vector has {got} entries for {expected} variables")]
    LinkLength { expected: usize, got: usize },
    #[error("precision matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing value for `{variable}` at time {time}")]
    MissingData { variable: String, time: i64 },
    #[error("series of length {got} is too short; need at least {needed}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("optimizer did not converge after {} iterations (gradient {:.3e})", .0.iterations, .0.gradient_norm)]
    NonConvergence(Box<LmReport>),
}

/// A path coefficient: a number or a value to be estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Fixed(f64),
    Free,
}

impl Coefficient {
    pub fn value(&self) -> Option<f64> {
        match self {
            Coefficient::Fixed(v) => Some(*v),
            Coefficient::Free => None,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, Coefficient::Free)
    }
}

impl Serialize for Coefficient {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Coefficient::Fixed(v) => s.serialize_f64(*v),
            Coefficient::Free => s.serialize_str("free"),
        }
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Coefficient::Fixed(v)),
            Raw::Text(t) if t.eq_ignore_ascii_case("free") => Ok(Coefficient::Free),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"free\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
    #[serde(rename = "?")]
    Unknown,
}

impl Sign {
    /// Whether `value` agrees with the hypothesized sign.
    pub fn admits(&self, value: f64) -> bool {
        match self {
            Sign::Positive => value > 0.0,
            Sign::Negative => value < 0.0,
            Sign::Unknown => true,
        }
    }
}

/// A directed edge `source -> target` at `lag` sample steps. An edge from a
/// variable to itself is an autoregressive coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub coefficient: Coefficient,
    pub sign: Option<Sign>,
}

impl Edge {
    pub fn is_autoregressive(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsemSpec {
    variables: Vec<String>,
    lags: Vec<usize>,
    edges: Vec<Edge>,
    ar_orders: Vec<usize>,
    h: f64,
}

#[derive(Clone, Debug)]
pub struct DsemSpecBuilder {
    variables: Vec<String>,
    edges: Vec<(String, String, usize, Coefficient, Option<Sign>)>,
    ar_orders: Vec<(String, usize)>,
    lags: Option<Vec<usize>>,
    h: f64,
}

impl DsemSpecBuilder {
    pub fn edge(mut self, from: &str, to: &str, lag: usize, coefficient: Coefficient) -> Self {
        self.edges
            .push((from.into(), to.into(), lag, coefficient, None));
        self
    }

    pub fn signed_edge(
        mut self,
        from: &str,
        to: &str,
        lag: usize,
        coefficient: Coefficient,
        sign: Sign,
    ) -> Self {
        self.edges
            .push((from.into(), to.into(), lag, coefficient, Some(sign)));
        self
    }

    pub fn ar_order(mut self, variable: &str, k: usize) -> Self {
        self.ar_orders.push((variable.into(), k));
        self
    }

    pub fn lags(mut self, lags: Vec<usize>) -> Self {
        self.lags = Some(lags);
        self
    }

    pub fn h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    pub fn build(self) -> Result<DsemSpec, DsemError> {
        let mut index = HashMap::new();
        for (i, v) in self.variables.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(DsemError::DuplicateVariable(v.clone()));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| DsemError::UnknownVariable(name.to_string()))
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for (from, to, lag, coefficient, sign) in self.edges {
            edges.push(Edge {
                source: lookup(&from)?,
                target: lookup(&to)?,
                lag,
                coefficient,
                sign,
            });
        }
        let mut ar_orders = vec![0; self.variables.len()];
        for (v, k) in self.ar_orders {
            ar_orders[lookup(&v)?] = k;
        }
        let max_lag = edges
            .iter()
            .map(|e| e.lag)
            .chain(ar_orders.iter().copied())
            .max()
            .unwrap_or(0)
            .max(1);
        let lags = self.lags.unwrap_or_else(|| (0..=max_lag).collect());
        DsemSpec::new(self.variables, lags, edges, ar_orders, self.h)
    }
}

impl DsemSpec {
    pub fn builder<S: AsRef<str>>(variables: impl IntoIterator<Item = S>) -> DsemSpecBuilder {
        DsemSpecBuilder {
            variables: variables
                .into_iter()
                .map(|s| s.as_ref().to_string())
                .collect(),
            edges: Vec::new(),
            ar_orders: Vec::new(),
            lags: None,
            h: 1.0,
        }
    }

    pub fn new(
        variables: Vec<String>,
        lags: Vec<usize>,
        edges: Vec<Edge>,
        ar_orders: Vec<usize>,
        h: f64,
    ) -> Result<Self, DsemError> {
        let mut seen = std::collections::HashSet::new();
        for v in &variables {
            if !seen.insert(v) {
                return Err(DsemError::DuplicateVariable(v.clone()));
            }
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(DsemError::NonPositiveStep(h));
        }
        if lags.first() != Some(&0) || lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DsemError::InvalidLagList);
        }
        let j = variables.len();
        if ar_orders.len() != j {
            return Err(DsemError::DimensionMismatch {
                expected: j,
                got: ar_orders.len(),
            });
        }
        let mut keys = std::collections::HashSet::new();
        for e in &edges {
            if e.source >= j || e.target >= j {
                return Err(DsemError::UnknownVariable(format!(
                    "index {}",
                    e.source.max(e.target)
                )));
            }
            if !lags.contains(&e.lag) {
                return Err(DsemError::LagNotDeclared(e.lag));
            }
            if e.is_autoregressive() && e.lag == 0 {
                return Err(DsemError::CausalityViolation(variables[e.source].clone()));
            }
            if !keys.insert((e.source, e.target, e.lag)) {
                return Err(DsemError::DuplicateEdge(
                    variables[e.source].clone(),
                    variables[e.target].clone(),
                    e.lag,
                ));
            }
        }
        let spec = DsemSpec {
            variables,
            lags,
            edges,
            ar_orders,
            h,
        };
        spec.lag0_order()?;
        Ok(spec)
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn variable_index(&self, name: &str) -> Result<usize, DsemError> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| DsemError::UnknownVariable(name.to_string()))
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Declared AR order per variable (0 = none).
    pub fn ar_orders(&self) -> &[usize] {
        &self.ar_orders
    }

    pub fn with_ar_orders(mut self, orders: Vec<usize>) -> Result<Self, DsemError> {
        if orders.len() != self.num_variables() {
            return Err(DsemError::DimensionMismatch {
                expected: self.num_variables(),
                got: orders.len(),
            });
        }
        self.ar_orders = orders;
        Ok(self)
    }

    /// Replaces every path coefficient (not AR self-edges) by `Free`.
    pub fn with_free_paths(mut self) -> Self {
        for e in self.edges.iter_mut().filter(|e| !e.is_autoregressive()) {
            e.coefficient = Coefficient::Free;
        }
        self
    }

    /// Sets path coefficients (non-self edges, in edge order).
    pub fn with_path_values(mut self, values: &[f64]) -> Self {
        let mut it = values.iter();
        for e in self.edges.iter_mut().filter(|e| !e.is_autoregressive()) {
            e.coefficient = Coefficient::Fixed(*it.next().expect("one value per path"));
        }
        self
    }

    pub fn path_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.is_autoregressive())
    }

    /// Inbound non-self edges of `target`.
    pub fn inbound(&self, target: usize) -> impl Iterator<Item = &Edge> {
        self.edges
            .iter()
            .filter(move |e| e.target == target && !e.is_autoregressive())
    }

    /// Self-edges of `v` as `(lag, coefficient)`, sorted by lag.
    pub fn self_edges(&self, v: usize) -> Vec<(usize, Coefficient)> {
        let mut out: Vec<(usize, Coefficient)> = self
            .edges
            .iter()
            .filter(|e| e.is_autoregressive() && e.source == v)
            .map(|e| (e.lag, e.coefficient))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }

    /// Order of the own-history term in the update of `v`: the largest self
    /// lag, or 1 for the implicit unit shift.
    pub fn own_lag(&self, v: usize) -> usize {
        self.self_edges(v).last().map_or(1, |e| e.0)
    }

    /// Number of initial samples of `v` held at their initial values.
    pub fn burn_in(&self, v: usize) -> usize {
        self.inbound(v)
            .map(|e| e.lag)
            .fold(self.own_lag(v), usize::max)
    }

    pub fn max_lag(&self) -> usize {
        self.edges.iter().map(|e| e.lag).max().unwrap_or(0)
    }

    pub fn has_free(&self) -> bool {
        self.edges.iter().any(|e| e.coefficient.is_free())
    }

    pub(crate) fn require_numeric(&self) -> Result<(), DsemError> {
        match self.edges.iter().find(|e| e.coefficient.is_free()) {
            Some(e) => Err(DsemError::FreeCoefficientPresent(
                self.variables[e.source].clone(),
                self.variables[e.target].clone(),
            )),
            None => Ok(()),
        }
    }

    /// Variables ordered so every lag-0 edge points forward.
    pub fn lag0_order(&self) -> Result<Vec<usize>, DsemError> {
        let mut g: DiGraph<usize, ()> = DiGraph::new();
        let nodes: Vec<_> = (0..self.num_variables()).map(|v| g.add_node(v)).collect();
        for e in self
            .edges
            .iter()
            .filter(|e| e.lag == 0 && !e.is_autoregressive())
        {
            g.add_edge(nodes[e.source], nodes[e.target], ());
        }
        toposort(&g, None)
            .map(|order| order.into_iter().map(|n| g[n]).collect())
            .map_err(|cycle| {
                DsemError::CausalityViolation(self.variables[g[cycle.node_id()]].clone())
            })
    }
}

/// Observed multivariate series on a shared integer time index.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeseriesTable {
    times: Vec<i64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    observed: Vec<Vec<bool>>,
}

impl TimeseriesTable {
    /// A table with every entry missing.
    pub fn missing(times: Vec<i64>, names: Vec<String>) -> Self {
        let n = times.len();
        let j = names.len();
        TimeseriesTable {
            times,
            names,
            columns: vec![vec![f64::NAN; n]; j],
            observed: vec![vec![false; n]; j],
        }
    }

    pub fn from_columns(
        times: Vec<i64>,
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, DsemError> {
        if columns.len() != names.len() {
            return Err(DsemError::DimensionMismatch {
                expected: names.len(),
                got: columns.len(),
            });
        }
        if let Some(c) = columns.iter().find(|c| c.len() != times.len()) {
            return Err(DsemError::DimensionMismatch {
                expected: times.len(),
                got: c.len(),
            });
        }
        let observed = columns
            .iter()
            .map(|c| c.iter().map(|v| !v.is_nan()).collect())
            .collect();
        Ok(TimeseriesTable {
            times,
            names,
            columns,
            observed,
        })
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_variables(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Column values; missing entries are NaN.
    pub fn column(&self, var: usize) -> &[f64] {
        &self.columns[var]
    }

    pub fn mask(&self, var: usize) -> &[bool] {
        &self.observed[var]
    }

    pub fn get(&self, var: usize, row: usize) -> Option<f64> {
        self.observed[var][row].then(|| self.columns[var][row])
    }

    pub fn set(&mut self, var: usize, row: usize, value: f64) {
        self.columns[var][row] = value;
        self.observed[var][row] = !value.is_nan();
    }

    pub fn remove(&mut self, var: usize, row: usize) {
        self.columns[var][row] = f64::NAN;
        self.observed[var][row] = false;
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().flatten().all(|&o| o)
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().flatten().filter(|o| !**o).count()
    }

    /// Rows `start..` only.
    pub fn skip_rows(&self, start: usize) -> Self {
        TimeseriesTable {
            times: self.times[start..].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..].to_vec()).collect(),
            observed: self.observed.iter().map(|c| c[start..].to_vec()).collect(),
        }
    }

    /// Columns reordered to `names`.
    pub fn select(&self, names: &[String]) -> Result<Self, DsemError> {
        let mut columns = Vec::with_capacity(names.len());
        let mut observed = Vec::with_capacity(names.len());
        for n in names {
            let i = self
                .column_index(n)
                .ok_or_else(|| DsemError::UnknownVariable(n.clone()))?;
            columns.push(self.columns[i].clone());
            observed.push(self.observed[i].clone());
        }
        Ok(TimeseriesTable {
            times: self.times.clone(),
            names: names.to_vec(),
            columns,
            observed,
        })
    }
}

impl fmt::Display for TimeseriesTable {
    /// CSV with a `time` column; missing entries are empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "time")?;
        for n in &self.names {
            write!(f, ",{n}")?;
        }
        writeln!(f)?;
        for (r, t) in self.times.iter().enumerate() {
            write!(f, "{t}")?;
            for v in 0..self.names.len() {
                match self.get(v, r) {
                    Some(x) => write!(f, ",{x}")?,
                    None => write!(f, ",")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Iterates the Euler update
/// `x_k(t) = own_k(t) + h * sum gamma * x_i(t - lag) + h * eps`, where `own_k`
/// is `x_k(t-1)` unless self-edges declare AR coefficients. Samples before
/// [`DsemSpec::burn_in`] keep their initial values. An empty `init` means zeros.
pub fn simulate(
    spec: &DsemSpec,
    steps: usize,
    noise_sd: f64,
    seed: u64,
    init: &[f64],
) -> Result<TimeseriesTable, DsemError> {
    spec.require_numeric()?;
    let j = spec.num_variables();
    if !init.is_empty() && init.len() != j {
        return Err(DsemError::DimensionMismatch {
            expected: j,
            got: init.len(),
        });
    }
    let burn: Vec<usize> = (0..j).map(|v| spec.burn_in(v)).collect();
    let needed = burn.iter().copied().max().unwrap_or(0) + 1;
    if steps < needed {
        return Err(DsemError::TooShort { needed, got: steps });
    }
    let order = spec.lag0_order()?;
    let own: Vec<Vec<(usize, f64)>> = (0..j)
        .map(|v| {
            let selfs = spec.self_edges(v);
            if selfs.is_empty() {
                vec![(1, 1.0)]
            } else {
                selfs
                    .into_iter()
                    .map(|(l, c)| (l, c.value().unwrap()))
                    .collect()
            }
        })
        .collect();
    let inbound: Vec<Vec<(usize, usize, f64)>> = (0..j)
        .map(|v| {
            spec.inbound(v)
                .map(|e| (e.source, e.lag, e.coefficient.value().unwrap()))
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![vec![0.0; steps]; j];
    for t in 0..steps {
        for &v in &order {
            if t < burn[v] {
                x[v][t] = init.get(v).copied().unwrap_or(0.0);
                continue;
            }
            let own_term: f64 = own[v].iter().map(|&(l, a)| a * x[v][t - l]).sum();
            let drive: f64 = inbound[v].iter().map(|&(s, l, g)| g * x[s][t - l]).sum();
            let eps: f64 = StandardNormal.sample(&mut rng);
            x[v][t] = own_term + spec.h() * (drive + noise_sd * eps);
        }
    }
    TimeseriesTable::from_columns((0..steps as i64).collect(), spec.variables().to_vec(), x)
}

/// The matrix `P` of `X ~ P X + E` for the stacked vector `X` of
/// `x_k(tau - t_l)`, indexed by `l * J + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathMatrix {
    pub matrix: DMatrix<f64>,
    num_variables: usize,
    lags: Vec<usize>,
}

impl PathMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_variables(&self) -> usize {
        self.num_variables
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    /// Row/column of variable `var` at lag position `lag_pos`.
    pub fn index(&self, var: usize, lag_pos: usize) -> usize {
        lag_pos * self.num_variables + var
    }

    /// Inverse of [`index`](Self::index).
    pub fn slot(&self, index: usize) -> (usize, usize) {
        (index % self.num_variables, index / self.num_variables)
    }

    fn lag_pos(&self, lag: usize) -> Option<usize> {
        self.lags.iter().position(|&l| l == lag)
    }

    /// Coefficients read back from the first lag row, in edge order.
    pub fn edge_coefficients(&self, spec: &DsemSpec) -> Vec<f64> {
        spec.edges()
            .iter()
            .map(|e| {
                let col = self.index(e.source, self.lag_pos(e.lag).expect("validated lag"));
                let v = self.matrix[(self.index(e.target, 0), col)];
                if e.is_autoregressive() {
                    v
                } else {
                    v / spec.h()
                }
            })
            .collect()
    }
}

pub fn build_path_matrix(spec: &DsemSpec) -> Result<PathMatrix, DsemError> {
    spec.require_numeric()?;
    let j = spec.num_variables();
    let lags = spec.lags().to_vec();
    let m = j * lags.len();
    let pm = PathMatrix {
        matrix: DMatrix::zeros(m, m),
        num_variables: j,
        lags: lags.clone(),
    };
    let mut p = pm.matrix.clone();
    let pos: HashMap<usize, usize> = lags.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let shift_pos = |l: usize| {
        let target = l as f64 + spec.h();
        lags.iter().position(|&x| x as f64 == target)
    };
    for (li, &tl) in lags.iter().enumerate() {
        for k in 0..j {
            let row = pm.index(k, li);
            let selfs = spec.self_edges(k);
            if selfs.is_empty() {
                if let Some(sp) = shift_pos(tl) {
                    p[(row, pm.index(k, sp))] += 1.0;
                }
            } else {
                for (l, c) in selfs {
                    if let Some(&cp) = pos.get(&(tl + l)) {
                        p[(row, pm.index(k, cp))] += c.value().unwrap();
                    }
                }
            }
            for e in spec.inbound(k) {
                if let Some(&cp) = pos.get(&(tl + e.lag)) {
                    p[(row, pm.index(e.source, cp))] += spec.h() * e.coefficient.value().unwrap();
                }
            }
        }
    }
    Ok(PathMatrix { matrix: p, ..pm })
}

/// Gaussian Markov random field `X ~ N(0, Q^-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmrfModel {
    pub precision: DMatrix<f64>,
    pub variance: DMatrix<f64>,
    pub link: Vec<f64>,
}

/// `Q = (I - P)^T V^-1 (I - P)` with `V = I_T (x) G G^T` for diagonal `G`.
pub fn assemble_precision(p: &PathMatrix, link: &[f64]) -> Result<GmrfModel, DsemError> {
    let j = p.num_variables();
    if link.len() != j {
        return Err(DsemError::LinkLength {
            expected: j,
            got: link.len(),
        });
    }
    if let Some(i) = link.iter().position(|&g| g == 0.0) {
        return Err(DsemError::SingularLink(i));
    }
    let m = p.dim();
    let var_diag: Vec<f64> = (0..m).map(|i| link[i % j] * link[i % j]).collect();
    let variance = DMatrix::from_diagonal(&DVector::from_vec(var_diag.clone()));
    let a = DMatrix::identity(m, m) - &p.matrix;
    let mut scaled = a.clone();
    for r in 0..m {
        for c in 0..m {
            scaled[(r, c)] /= var_diag[r];
        }
    }
    let q = a.transpose() * scaled;
    let precision = (&q + q.transpose()) * 0.5;
    Ok(GmrfModel {
        precision,
        variance,
        link: link.to_vec(),
    })
}

/// `log N(x; 0, Q^-1)`.
pub fn log_density(model: &GmrfModel, x: &[f64]) -> Result<f64, DsemError> {
    let m = model.precision.nrows();
    if x.len() != m {
        return Err(DsemError::DimensionMismatch {
            expected: m,
            got: x.len(),
        });
    }
    let chol = model
        .precision
        .clone()
        .cholesky()
        .ok_or(DsemError::NotPositiveDefinite)?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let v = DVector::from_column_slice(x);
    let quad = v.dot(&(&model.precision * &v));
    Ok(0.5 * logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * quad)
}

/// Estimated coefficient of one edge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeEstimate {
    pub edge: usize,
    pub from: String,
    pub to: String,
    pub lag: usize,
    pub value: f64,
    pub free: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DsemFit {
    pub estimates: Vec<EdgeEstimate>,
    /// Conditional Gaussian log-likelihood of the innovations at the estimate.
    pub log_likelihood: f64,
    pub innovations: usize,
    pub report: LmReport,
}

/// Residuals `(x_k(t) - own_k(t) - h sum gamma x_i(t - lag)) / (h g_k)` of every
/// complete update equation, affine in the free coefficients.
struct InnovationProblem<'a> {
    spec: &'a DsemSpec,
    data: Vec<&'a [f64]>,
    link: Vec<f64>,
    free: Vec<usize>,
    rows: Vec<(usize, usize)>,
}

impl InnovationProblem<'_> {
    fn coefficient(&self, theta: &[f64], edge: usize) -> f64 {
        match self.spec.edges()[edge].coefficient {
            Coefficient::Fixed(v) => v,
            Coefficient::Free => theta[self.free.iter().position(|&f| f == edge).unwrap()],
        }
    }

    fn equation(
        &self,
        theta: &[f64],
        v: usize,
        t: usize,
        jac: Option<&mut Vec<(usize, f64)>>,
    ) -> f64 {
        let h = self.spec.h();
        let scale = h * self.link[v];
        let mut r = self.data[v][t];
        let mut entries = Vec::new();
        let selfs: Vec<usize> = (0..self.spec.edges().len())
            .filter(|&i| {
                let e = &self.spec.edges()[i];
                e.is_autoregressive() && e.source == v
            })
            .collect();
        if selfs.is_empty() {
            r -= self.data[v][t - 1];
        }
        for (i, e) in self.spec.edges().iter().enumerate() {
            if e.target != v {
                continue;
            }
            let x = self.data[e.source][t - e.lag];
            let w = if e.is_autoregressive() { x } else { h * x };
            r -= self.coefficient(theta, i) * w;
            if let Some(p) = self.free.iter().position(|&f| f == i) {
                entries.push((p, -w / scale));
            }
        }
        if let Some(j) = jac {
            *j = entries;
        }
        r / scale
    }
}

impl LeastSquares for InnovationProblem<'_> {
    fn num_params(&self) -> usize {
        self.free.len()
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|&(v, t)| self.equation(theta, v, t, None))
            .collect()
    }

    fn linearize(&self, theta: &[f64]) -> (Vec<f64>, SparseRows) {
        let mut r = Vec::with_capacity(self.rows.len());
        let mut j = Vec::with_capacity(self.rows.len());
        for &(v, t) in &self.rows {
            let mut row = Vec::new();
            r.push(self.equation(theta, v, t, Some(&mut row)));
            j.push(row);
        }
        (r, j)
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// Maximizes the Gaussian log-likelihood of the update equations, conditional
/// on the first [`DsemSpec::burn_in`] samples of each variable, over the free
/// coefficients. `link` is the diagonal of `G` (empty = identity).
pub fn fit_dsem_ml(
    spec: &DsemSpec,
    data: &TimeseriesTable,
    link: &[f64],
) -> Result<DsemFit, DsemError> {
    let j = spec.num_variables();
    let link = if link.is_empty() {
        vec![1.0; j]
    } else {
        link.to_vec()
    };
    if link.len() != j {
        return Err(DsemError::LinkLength {
            expected: j,
            got: link.len(),
        });
    }
    if let Some(i) = link.iter().position(|&g| g == 0.0) {
        return Err(DsemError::SingularLink(i));
    }
    let free: Vec<usize> = (0..spec.edges().len())
        .filter(|&i| spec.edges()[i].coefficient.is_free())
        .collect();
    if free.is_empty() {
        return Err(DsemError::NothingToEstimate);
    }
    let data = data.select(spec.variables())?;
    for v in 0..j {
        if let Some(r) = data.mask(v).iter().position(|o| !o) {
            return Err(DsemError::MissingData {
                variable: spec.variables()[v].clone(),
                time: data.times()[r],
            });
        }
    }
    let needed = spec.max_lag() + 2;
    if data.len() < needed {
        return Err(DsemError::TooShort {
            needed,
            got: data.len(),
        });
    }
    let constant = (0..j).all(|v| data.column(v).iter().all(|&x| x == data.column(v)[0]));
    if constant {
        return Err(DsemError::Degenerate("every series is constant".into()));
    }
    let targets: std::collections::HashSet<usize> =
        free.iter().map(|&i| spec.edges()[i].target).collect();
    let mut rows = Vec::new();
    for v in 0..j {
        if !targets.contains(&v) {
            continue;
        }
        for t in spec.burn_in(v)..data.len() {
            rows.push((v, t));
        }
    }
    let columns: Vec<&[f64]> = (0..j).map(|v| data.column(v)).collect();
    let problem = InnovationProblem {
        spec,
        data: columns,
        link: link.clone(),
        free: free.clone(),
        rows,
    };
    let report = optim::solve_affine(&problem, &vec![0.0; free.len()]);
    if report.rank_deficient {
        return Err(DsemError::Degenerate(
            "free coefficients are not identifiable from the data".into(),
        ));
    }
    if !report.theta.iter().all(|v| v.is_finite()) {
        return Err(DsemError::NonConvergence(Box::new(report)));
    }
    let n_eq = problem.rows.len();
    let log_norm: f64 = problem
        .rows
        .iter()
        .map(|&(v, _)| (spec.h() * link[v]).abs().ln())
        .sum();
    let log_likelihood =
        -report.cost - log_norm - 0.5 * n_eq as f64 * (2.0 * std::f64::consts::PI).ln();
    let estimates = spec
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| EdgeEstimate {
            edge: i,
            from: spec.variables()[e.source].clone(),
            to: spec.variables()[e.target].clone(),
            lag: e.lag,
            value: problem.coefficient(&report.theta, i),
            free: e.coefficient.is_free(),
        })
        .collect();
    Ok(DsemFit {
        estimates,
        log_likelihood,
        innovations: n_eq,
        report,
    })
}
