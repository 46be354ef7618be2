//! Consistency-radius minimization over the free coordinates of a partial
//! assignment, with tie groups, frozen slots and multi-start
//! Levenberg-Marquardt.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dsem::TimeseriesTable;
use crate::maps::{Map, MapKind, SparseRows};
use crate::optim::{
    levenberg_marquardt, solve_affine, LeastSquares, LmOptions, LmReport, Termination,
};
use crate::sheaf_builder::{propagate, BuildError, CellKind, DsemSheaf, Slot, TieGroup};
use crate::topology::{
    consistency_radius, residual_breakdown, Assignment, CellId, PairResidual, SheafDiagram,
    TopologyError,
};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("only the 2-norm radius can be minimized, the sheaf uses p = {0}")]
    UnsupportedNorm(f64),
    #[error("frozen slot on `{0}` has no value in the partial assignment")]
    FrozenWithoutValue(String),
    #[error(
        "tied slots disagree: `{0}`[{1}] and `{2}`[{3}] are both frozen with different values"
    )]
    ConflictingFrozen(String, usize, String, usize),
    #[error("tie group slots have different lengths")]
    TieShape,
    #[error("slot {start}..{} is outside cell `{cell}`", .start + .len)]
    SlotOutOfRange {
        cell: String,
        start: usize,
        len: usize,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub lm: LmOptions,
    pub seed: u64,
    /// Perturbed starts run in addition to the given initial point.
    pub restarts: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            lm: LmOptions::default(),
            seed: 0,
            restarts: 4,
        }
    }
}

/// A radius minimization problem: the sheaf, the known values, which slots
/// may not move, and how to start.
#[derive(Clone, Debug)]
pub struct SolveRequest<'a> {
    pub sheaf: &'a SheafDiagram,
    pub observations: Assignment,
    pub ties: Vec<TieGroup>,
    pub ties_active: bool,
    /// Slots held at their observed values; `None` freezes the whole support.
    pub frozen: Option<Vec<Slot>>,
    /// Starting values for free slots; cells outside its support start from
    /// the observations pushed through the restrictions, or 0.
    pub initial: Option<Assignment>,
    pub options: SolveOptions,
}

impl<'a> SolveRequest<'a> {
    pub fn new(sheaf: &'a SheafDiagram, observations: Assignment) -> Self {
        SolveRequest {
            sheaf,
            observations,
            ties: Vec::new(),
            ties_active: true,
            frozen: None,
            initial: None,
            options: SolveOptions::default(),
        }
    }

    pub fn ties(mut self, ties: Vec<TieGroup>) -> Self {
        self.ties = ties;
        self
    }

    pub fn ties_active(mut self, active: bool) -> Self {
        self.ties_active = active;
        self
    }

    pub fn frozen(mut self, slots: Vec<Slot>) -> Self {
        self.frozen = Some(slots);
        self
    }

    pub fn freeze_cells(self, cells: &[CellId]) -> Self {
        let slots = cells
            .iter()
            .map(|&c| Slot {
                cell: c,
                start: 0,
                len: self.sheaf.dim(c),
            })
            .collect();
        self.frozen(slots)
    }

    pub fn initial(mut self, initial: Assignment) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn options(mut self, options: SolveOptions) -> Self {
        self.options = options;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The minimizer set is not a single point; the returned one is the
    /// minimum-norm move from the start.
    NonUnique,
    /// The optimizer stopped without meeting its tolerances.
    NonConvergence,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    pub status: SolveStatus,
    pub termination: Termination,
    pub free_parameters: usize,
    pub affine: bool,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub assignment: Assignment,
    pub radius: f64,
    pub residuals: Vec<PairResidual>,
    pub diagnostics: SolveDiagnostics,
}

/// The squared radius as a least-squares problem in the free parameters.
/// Each coordinate of the flattened assignment is either frozen or bound to
/// one parameter; tied coordinates share a parameter.
pub struct Objective<'a> {
    sheaf: &'a SheafDiagram,
    base: Vec<f64>,
    param_of: Vec<Option<usize>>,
    start: Vec<f64>,
    affine: bool,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = i;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

impl<'a> Objective<'a> {
    pub fn new(request: &SolveRequest<'a>) -> Result<Self, InferenceError> {
        let sheaf = request.sheaf;
        if sheaf.p() != 2.0 {
            return Err(InferenceError::UnsupportedNorm(sheaf.p()));
        }
        let total = sheaf.total_dim();
        let coord = |c: CellId, i: usize| sheaf.offset(c) + i;
        let check = |s: &Slot| {
            if s.cell >= sheaf.len() || s.start + s.len > sheaf.dim(s.cell) {
                let cell = if s.cell < sheaf.len() {
                    sheaf.label(s.cell).to_string()
                } else {
                    format!("#{}", s.cell)
                };
                return Err(InferenceError::SlotOutOfRange {
                    cell,
                    start: s.start,
                    len: s.len,
                });
            }
            Ok(())
        };

        let mut uf = UnionFind((0..total).collect());
        if request.ties_active {
            for g in &request.ties {
                let len = g.slots.first().map_or(0, |s| s.len);
                for s in &g.slots {
                    check(s)?;
                    if s.len != len {
                        return Err(InferenceError::TieShape);
                    }
                }
                for s in &g.slots[1..] {
                    for i in 0..len {
                        uf.union(
                            coord(g.slots[0].cell, g.slots[0].start + i),
                            coord(s.cell, s.start + i),
                        );
                    }
                }
            }
        }

        let frozen_slots: Vec<Slot> = match &request.frozen {
            Some(s) => s.clone(),
            None => request
                .observations
                .support()
                .into_iter()
                .map(|c| Slot {
                    cell: c,
                    start: 0,
                    len: sheaf.dim(c),
                })
                .collect(),
        };
        // Frozen value of each class root, with the coordinate that set it.
        let mut fixed: Vec<Option<(f64, CellId, usize)>> = vec![None; total];
        for s in &frozen_slots {
            check(s)?;
            let values = request.observations.get(s.cell).ok_or_else(|| {
                InferenceError::FrozenWithoutValue(sheaf.label(s.cell).to_string())
            })?;
            for i in s.start..s.start + s.len {
                let root = uf.find(coord(s.cell, i));
                match fixed[root] {
                    Some((v, c, j)) if v.to_bits() != values[i].to_bits() => {
                        return Err(InferenceError::ConflictingFrozen(
                            sheaf.label(c).to_string(),
                            j,
                            sheaf.label(s.cell).to_string(),
                            i,
                        ))
                    }
                    Some(_) => {}
                    None => fixed[root] = Some((values[i], s.cell, i)),
                }
            }
        }

        let mut hint = match &request.initial {
            Some(a) => a.clone(),
            None => Assignment::empty(sheaf),
        };
        let pushed = propagate(sheaf, &request.ties, &request.observations);
        for c in 0..sheaf.len() {
            if !hint.in_support(c) {
                if let Some(v) = pushed.get(c) {
                    hint.set(c, v.to_vec())?;
                }
            }
        }

        let mut base = vec![0.0; total];
        let mut param_of = vec![None; total];
        let mut root_param: Vec<Option<usize>> = vec![None; total];
        let mut start = Vec::new();
        for c in 0..sheaf.len() {
            for i in 0..sheaf.dim(c) {
                let k = coord(c, i);
                let root = uf.find(k);
                if let Some((v, _, _)) = fixed[root] {
                    base[k] = v;
                    continue;
                }
                let p = *root_param[root].get_or_insert_with(|| {
                    start.push(f64::NAN);
                    start.len() - 1
                });
                param_of[k] = Some(p);
                if start[p].is_nan() {
                    if let Some(v) = hint.get(c) {
                        start[p] = v[i];
                    }
                }
            }
        }
        for v in &mut start {
            if v.is_nan() {
                *v = 0.0;
            }
        }

        let mut objective = Objective {
            sheaf,
            base,
            param_of,
            start,
            affine: false,
        };
        objective.affine = objective.detect_affine();
        Ok(objective)
    }

    /// A residual is affine in the parameters when every hop after the first
    /// is affine and the first hop has no product of two free coordinates.
    fn detect_affine(&self) -> bool {
        self.sheaf.pairs().into_iter().all(|(x, y)| {
            let hops = self.sheaf.route(x, y).expect("pair is comparable");
            hops.iter()
                .skip(1)
                .all(|h| h.map.kind() != MapKind::General)
                && match &hops[0].map {
                    Map::Bilinear { rows, .. } => rows.iter().flatten().all(|t| match t.right {
                        None => true,
                        Some(r) => self.frozen_at(x, t.left) || self.frozen_at(x, r),
                    }),
                    m => m.kind() != MapKind::General,
                }
        })
    }

    fn frozen_at(&self, cell: CellId, i: usize) -> bool {
        self.param_of[self.sheaf.offset(cell) + i].is_none()
    }

    pub fn is_affine_problem(&self) -> bool {
        self.affine
    }

    pub fn initial_parameters(&self) -> &[f64] {
        &self.start
    }

    /// The flattened assignment for parameters `theta`.
    pub fn flat(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = self.base.clone();
        for (k, p) in self.param_of.iter().enumerate() {
            if let Some(p) = p {
                out[k] = theta[*p];
            }
        }
        out
    }

    pub fn assignment(&self, theta: &[f64]) -> Assignment {
        Assignment::from_flat(self.sheaf, &self.flat(theta))
    }

    /// Parameters read off a global assignment (first coordinate of each
    /// class wins).
    pub fn parameters_of(&self, a: &Assignment) -> Option<Vec<f64>> {
        let flat = a.flatten()?;
        let mut theta = vec![f64::NAN; self.start.len()];
        for (k, p) in self.param_of.iter().enumerate() {
            if let Some(p) = p {
                if theta[*p].is_nan() {
                    theta[*p] = flat[k];
                }
            }
        }
        Some(theta)
    }

    pub fn squared_radius(&self, theta: &[f64]) -> f64 {
        self.residuals(theta).iter().map(|r| r * r).sum()
    }

    /// Gradient of the squared radius, `2 J^T r`.
    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let (r, rows) = self.linearize(theta);
        let mut g = vec![0.0; theta.len()];
        for (row, ri) in rows.iter().zip(&r) {
            for &(j, v) in row {
                g[j] += 2.0 * v * ri;
            }
        }
        g
    }

    fn cell_slice<'f>(&self, flat: &'f [f64], c: CellId) -> &'f [f64] {
        &flat[self.sheaf.offset(c)..self.sheaf.offset(c) + self.sheaf.dim(c)]
    }
}

impl LeastSquares for Objective<'_> {
    fn num_params(&self) -> usize {
        self.start.len()
    }

    fn residuals(&self, theta: &[f64]) -> Vec<f64> {
        let flat = self.flat(theta);
        (0..self.sheaf.len())
            .into_par_iter()
            .map(|x| {
                let mut out = Vec::new();
                for (y, img) in self.sheaf.images_from(x, self.cell_slice(&flat, x)) {
                    let alpha = self.sheaf.weight(y);
                    out.extend(
                        self.cell_slice(&flat, y)
                            .iter()
                            .zip(&img)
                            .map(|(t, i)| alpha * (t - i)),
                    );
                }
                out
            })
            .flatten()
            .collect()
    }

    fn linearize(&self, theta: &[f64]) -> (Vec<f64>, SparseRows) {
        let flat = self.flat(theta);
        let parts: Vec<(Vec<f64>, SparseRows)> = (0..self.sheaf.len())
            .into_par_iter()
            .map(|x| {
                let mut r = Vec::new();
                let mut rows = Vec::new();
                let ox = self.sheaf.offset(x);
                for (y, img, jac) in self
                    .sheaf
                    .images_with_jacobians(x, self.cell_slice(&flat, x))
                {
                    let alpha = self.sheaf.weight(y);
                    let oy = self.sheaf.offset(y);
                    for (i, jrow) in jac.iter().enumerate() {
                        r.push(alpha * (flat[oy + i] - img[i]));
                        let mut row: Vec<(usize, f64)> = Vec::with_capacity(jrow.len() + 1);
                        if let Some(p) = self.param_of[oy + i] {
                            row.push((p, alpha));
                        }
                        for &(c, v) in jrow {
                            if let Some(p) = self.param_of[ox + c] {
                                row.push((p, -alpha * v));
                            }
                        }
                        rows.push(merge_columns(row));
                    }
                }
                (r, rows)
            })
            .collect();
        let mut r = Vec::new();
        let mut rows = Vec::new();
        for (pr, prows) in parts {
            r.extend(pr);
            rows.extend(prows);
        }
        (r, rows)
    }

    fn is_affine(&self) -> bool {
        self.affine
    }
}

fn merge_columns(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (j, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += v,
            _ => out.push((j, v)),
        }
    }
    out
}

/// Minimizes the 2-norm consistency radius over the free slots.
///
/// Affine problems take one minimum-norm Gauss-Newton solve. Otherwise
/// Levenberg-Marquardt runs from the initial point and from `restarts`
/// Gaussian perturbations of it (scale `0.1 max(1, |v|)`), in parallel; the
/// lowest-cost run wins.
pub fn minimize(request: &SolveRequest) -> Result<SolveResult, InferenceError> {
    let objective = Objective::new(request)?;
    let start = objective.initial_parameters().to_vec();
    let (report, restarts_used) = if objective.is_affine_problem() {
        (solve_affine(&objective, &start), 1)
    } else {
        let mut starts = vec![start.clone()];
        let mut rng = ChaCha8Rng::seed_from_u64(request.options.seed);
        for _ in 0..request.options.restarts {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            starts.push(
                start
                    .iter()
                    .map(|v| v + 0.1 * v.abs().max(1.0) * normal.sample(&mut rng))
                    .collect(),
            );
        }
        let reports: Vec<LmReport> = starts
            .par_iter()
            .map(|s| levenberg_marquardt(&objective, s, &request.options.lm))
            .collect();
        let used = reports.len();
        let best = reports
            .into_iter()
            .min_by(|a, b| a.cost.total_cmp(&b.cost))
            .expect("at least one start");
        (best, used)
    };
    let assignment = objective.assignment(&report.theta);
    let radius = consistency_radius(request.sheaf, &assignment)?;
    let residuals = residual_breakdown(request.sheaf, &assignment)?;
    let status = if !report.converged() {
        SolveStatus::NonConvergence
    } else if report.rank_deficient {
        SolveStatus::NonUnique
    } else {
        SolveStatus::Converged
    };
    Ok(SolveResult {
        assignment,
        radius,
        residuals,
        diagnostics: SolveDiagnostics {
            iterations: report.iterations,
            evaluations: report.evaluations,
            converged: report.converged(),
            restarts_used,
            status,
            termination: report.termination,
            free_parameters: objective.num_params(),
            affine: objective.is_affine_problem(),
            gradient_norm: report.gradient_norm,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub solve: SolveOptions,
    pub ties: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            solve: SolveOptions::default(),
            ties: true,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PathEstimate {
    pub edge: usize,
    pub from: String,
    pub to: String,
    pub lag: usize,
    pub value: f64,
    pub free: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ArEstimate {
    pub variable: String,
    pub coefficients: Vec<f64>,
    pub free: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub solve: SolveResult,
    pub coefficients: Vec<PathEstimate>,
    pub ar_coefficients: Vec<ArEstimate>,
    /// Every variable's series with missing entries filled in.
    pub series: TimeseriesTable,
}

/// Fits a DSEM sheaf to data: observed entries are frozen on their
/// observation cells; missing entries, free path coefficients and free AR
/// coefficients are inferred. Starts from
/// [`DsemSheaf::initial_assignment`].
pub fn fit(
    dsem: &DsemSheaf,
    data: &TimeseriesTable,
    options: &FitOptions,
) -> Result<FitResult, InferenceError> {
    fit_from(dsem, data, dsem.initial_assignment(data)?, options)
}

/// [`fit`] from a given global starting point, e.g. the optimum of a nested
/// problem carried over with [`DsemSheaf::transfer`].
pub fn fit_from(
    dsem: &DsemSheaf,
    data: &TimeseriesTable,
    initial: Assignment,
    options: &FitOptions,
) -> Result<FitResult, InferenceError> {
    let observations = dsem.observation_assignment(data)?;
    let request = SolveRequest::new(&dsem.sheaf, observations)
        .ties(dsem.ties.clone())
        .ties_active(options.ties)
        .initial(initial)
        .options(options.solve);
    let solve = minimize(&request)?;
    Ok(summarize(dsem, data, solve))
}

/// Coefficients and completed series of a solved DSEM sheaf.
pub fn summarize(dsem: &DsemSheaf, data: &TimeseriesTable, solve: SolveResult) -> FitResult {
    let spec = &dsem.spec;
    let names = spec.variables();
    let coefficients = dsem
        .path_coefficients(&solve.assignment)
        .into_iter()
        .map(|(i, value)| {
            let e = &spec.edges()[i];
            PathEstimate {
                edge: i,
                from: names[e.source].clone(),
                to: names[e.target].clone(),
                lag: e.lag,
                value,
                free: e.coefficient.is_free(),
            }
        })
        .collect();
    let ar_coefficients = dsem
        .ar_coefficients(&solve.assignment)
        .into_iter()
        .map(|(v, coefficients)| ArEstimate {
            variable: names[v].clone(),
            free: dsem.ar[v]
                .as_ref()
                .expect("has AR")
                .coefficients
                .iter()
                .map(|c| c.is_free())
                .collect(),
            coefficients,
        })
        .collect();
    let series = dsem.series(&solve.assignment, data.times());
    FitResult {
        solve,
        coefficients,
        ar_coefficients,
        series,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualEntry {
    pub lower: String,
    pub upper: String,
    pub contribution: f64,
    /// Fraction of the squared radius.
    pub share: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub radius: f64,
    pub top: Vec<ResidualEntry>,
}

/// The `top_k` largest pair contributions of a global assignment; pairs
/// contributing nothing are left out.
pub fn residual_report(
    sheaf: &SheafDiagram,
    a: &Assignment,
    top_k: usize,
) -> Result<ResidualReport, InferenceError> {
    let radius = consistency_radius(sheaf, a)?;
    let total: f64 = radius.powf(sheaf.p());
    let top = residual_breakdown(sheaf, a)?
        .into_iter()
        .filter(|r| r.contribution > 1e-20)
        .take(top_k)
        .map(|r| ResidualEntry {
            lower: sheaf.label(r.lower).to_string(),
            upper: sheaf.label(r.upper).to_string(),
            contribution: r.contribution,
            share: if total > 0.0 {
                r.contribution / total
            } else {
                0.0
            },
        })
        .collect();
    Ok(ResidualReport { radius, top })
}

/// How the observation misfit of one variable is spread over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MisfitPattern {
    None,
    /// One time point carries most of the misfit.
    Outlier,
    /// Misfit is spread evenly, pointing at the dynamics rather than the data.
    Uniform,
    Mixed,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariableMisfit {
    pub variable: String,
    pub total: f64,
    pub share: f64,
    pub worst_time: Option<i64>,
    pub pattern: MisfitPattern,
}

#[derive(Clone, Debug, Serialize)]
pub struct DsemEntry {
    pub lower: String,
    pub upper: String,
    pub kind: CellKind,
    pub variable: Option<String>,
    pub time: Option<i64>,
    pub contribution: f64,
    pub share: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DsemResidualReport {
    pub radius: f64,
    pub top: Vec<DsemEntry>,
    pub variables: Vec<VariableMisfit>,
}

/// Residual report keyed by variable and time. Entries on series-shaped
/// cells carry the time of their largest coordinate term. Contributions
/// landing on an observation cell are attributed to that variable and time;
/// per-variable totals are classified as an outlier when one time point holds more than
/// half, and as uniform when no time point exceeds three times the mean.
pub fn dsem_residual_report(
    dsem: &DsemSheaf,
    a: &Assignment,
    times: &[i64],
    top_k: usize,
) -> Result<DsemResidualReport, InferenceError> {
    let sheaf = &dsem.sheaf;
    let names = dsem.spec.variables();
    let radius = consistency_radius(sheaf, a)?;
    let total = radius.powf(sheaf.p());
    let share = |c: f64| if total > 0.0 { c / total } else { 0.0 };
    let breakdown = residual_breakdown(sheaf, a)?;
    let mut per_obs = vec![vec![0.0; dsem.series_len]; names.len()];
    for r in &breakdown {
        if let Some((v, t)) = dsem.observation_of(r.upper) {
            per_obs[v][t] += r.contribution;
        }
    }
    let top = breakdown
        .iter()
        .filter(|r| r.contribution > 1e-20)
        .take(top_k)
        .map(|r| {
            let kind = dsem.cell_kind(r.upper);
            let variable = match kind {
                CellKind::Observation { variable, .. } => Some(variable),
                CellKind::Variable(v) | CellKind::ArCoefficient(v) | CellKind::ArWindow(v) => {
                    Some(v)
                }
                _ => None,
            };
            let worst = r
                .coordinates
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map_or(0, |(i, _)| i);
            let time = dsem
                .row_of(r.upper, worst)
                .and_then(|row| times.get(row).copied());
            DsemEntry {
                lower: sheaf.label(r.lower).to_string(),
                upper: sheaf.label(r.upper).to_string(),
                kind,
                variable: variable.map(|v| names[v].clone()),
                time,
                contribution: r.contribution,
                share: share(r.contribution),
            }
        })
        .collect();
    let variables = per_obs
        .iter()
        .enumerate()
        .map(|(v, c)| {
            let sum: f64 = c.iter().sum();
            let (worst, max) =
                c.iter()
                    .copied()
                    .enumerate()
                    .fold((0, 0.0), |m, (t, x)| if x > m.1 { (t, x) } else { m });
            let pattern = classify(sum, max, c.len());
            VariableMisfit {
                variable: names[v].clone(),
                total: sum,
                share: share(sum),
                worst_time: (sum > 1e-20).then(|| times.get(worst).copied()).flatten(),
                pattern,
            }
        })
        .collect();
    Ok(DsemResidualReport {
        radius,
        top,
        variables,
    })
}

fn classify(sum: f64, max: f64, n: usize) -> MisfitPattern {
    if sum <= 1e-20 || n == 0 {
        MisfitPattern::None
    } else if max > 0.5 * sum {
        MisfitPattern::Outlier
    } else if max <= 3.0 * sum / n as f64 {
        MisfitPattern::Uniform
    } else {
        MisfitPattern::Mixed
    }
}
