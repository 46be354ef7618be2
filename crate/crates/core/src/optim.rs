//! Levenberg-Marquardt for sparse-Jacobian least-squares problems, plus a
//! minimum-norm Gauss-Newton step for problems affine in their parameters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::maps::SparseRows;

/// A least-squares objective `0.5 * ||r(theta)||^2`.
pub trait LeastSquares: Sync {
    fn num_params(&self) -> usize;

    fn residuals(&self, theta: &[f64]) -> Vec<f64>;

    /// Residuals and their Jacobian rows. Each row lists distinct columns.
    fn linearize(&self, theta: &[f64]) -> (Vec<f64>, SparseRows);

    /// True when every residual is affine in `theta`.
    fn is_affine(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when `||J^T r||_inf` falls to this value.
    pub gradient_tol: f64,
    /// Stop when the relative step length falls to this value.
    pub step_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 10_000,
            gradient_tol: 1e-8,
            step_tol: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    ZeroResidual,
    Direct,
    MaxIterations,
    Stalled,
}

#[derive(Clone, Debug, Serialize)]
pub struct LmReport {
    pub theta: Vec<f64>,
    /// `0.5 * ||r||^2` at `theta`.
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
    /// The normal matrix was singular at the returned point.
    pub rank_deficient: bool,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        !matches!(
            self.termination,
            Termination::MaxIterations | Termination::Stalled
        )
    }
}

/// Accumulates `J^T J` and `J^T r`.
pub fn normal_equations(n: usize, r: &[f64], rows: &SparseRows) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for (row, &ri) in rows.iter().zip(r) {
        for &(i, vi) in row {
            g[i] += vi * ri;
            for &(j, vj) in row {
                a[(i, j)] += vi * vj;
            }
        }
    }
    (a, g)
}

fn half_norm2(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimum-norm solution of the symmetric system `a x = b` by eigen-decomposition.
/// Returns the solution and whether `a` was rank deficient.
pub fn pseudo_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = top * 1e-12 * (a.nrows().max(1) as f64);
    let mut deficient = false;
    let projected = eig.eigenvectors.transpose() * b;
    let mut scaled = DVector::zeros(a.nrows());
    for i in 0..a.nrows() {
        let l = eig.eigenvalues[i];
        if l.abs() > cutoff && l.abs() > 0.0 {
            scaled[i] = projected[i] / l;
        } else {
            deficient = true;
        }
    }
    (&eig.eigenvectors * scaled, deficient)
}

/// Gauss-Newton with minimum-norm steps for affine problems: exact in one
/// step up to rounding, refined twice.
pub fn solve_affine<P: LeastSquares + ?Sized>(problem: &P, theta0: &[f64]) -> LmReport {
    let n = problem.num_params();
    let mut theta = theta0.to_vec();
    let (mut r, mut rows) = problem.linearize(&theta);
    let mut cost = half_norm2(&r);
    let mut evaluations = 1;
    let mut deficient = false;
    let mut gnorm = 0.0;
    for pass in 0..3 {
        let (a, g) = normal_equations(n, &r, &rows);
        gnorm = inf_norm(&g);
        if n == 0 {
            break;
        }
        let (delta, d) = pseudo_solve(&a, &(-&g));
        if pass == 0 {
            deficient = d;
        }
        if gnorm == 0.0 {
            break;
        }
        let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
        let (r2, rows2) = problem.linearize(&trial);
        evaluations += 1;
        let c2 = half_norm2(&r2);
        if c2 <= cost || pass == 0 {
            theta = trial;
            r = r2;
            rows = rows2;
            cost = c2;
        } else {
            break;
        }
    }
    if n > 0 {
        gnorm = inf_norm(&normal_equations(n, &r, &rows).1);
    }
    LmReport {
        theta,
        cost,
        iterations: 1,
        evaluations,
        termination: Termination::Direct,
        gradient_norm: gnorm,
        rank_deficient: deficient,
    }
}

/// Levenberg-Marquardt with Marquardt diagonal scaling and Nielsen's damping
/// update.
pub fn levenberg_marquardt<P: LeastSquares + ?Sized>(
    problem: &P,
    theta0: &[f64],
    options: &LmOptions,
) -> LmReport {
    let n = problem.num_params();
    let mut theta = theta0.to_vec();
    let (r, rows) = problem.linearize(&theta);
    let mut cost = half_norm2(&r);
    let mut evaluations = 1;
    let (mut a, mut g) = normal_equations(n, &r, &rows);
    let mut gnorm = inf_norm(&g);
    let report =
        |theta: Vec<f64>, cost, iterations, evaluations, termination, gnorm, a: &DMatrix<f64>| {
            LmReport {
                theta,
                cost,
                iterations,
                evaluations,
                termination,
                gradient_norm: gnorm,
                rank_deficient: a.nrows() > 0 && a.clone().cholesky().is_none(),
            }
        };
    if n == 0 || gnorm <= options.gradient_tol {
        let t = if cost == 0.0 {
            Termination::ZeroResidual
        } else {
            Termination::Gradient
        };
        return report(theta, cost, 0, evaluations, t, gnorm, &a);
    }
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let mut lambda = 1e-3 * max_diag.max(1e-12);
    let mut nu = 2.0;
    let mut rejections = 0usize;
    for iter in 1..=options.max_iterations {
        let floor = 1e-12 * max_diag.max(1.0);
        let mut damped = a.clone();
        for i in 0..n {
            damped[(i, i)] += lambda * a[(i, i)].max(floor);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };
        let delta = chol.solve(&(-&g));
        let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if delta.norm() <= options.step_tol * (theta_norm + options.step_tol) {
            return report(theta, cost, iter, evaluations, Termination::Step, gnorm, &a);
        }
        let trial: Vec<f64> = theta.iter().zip(delta.iter()).map(|(t, d)| t + d).collect();
        let r_trial = problem.residuals(&trial);
        evaluations += 1;
        let c_trial = half_norm2(&r_trial);
        // Predicted reduction of the linear model.
        let predicted = -(delta.dot(&g) + 0.5 * delta.dot(&(&a * &delta)));
        let rho = if predicted > 0.0 {
            (cost - c_trial) / predicted
        } else {
            -1.0
        };
        if rho > 0.0 && c_trial.is_finite() {
            theta = trial;
            let (r, rows) = problem.linearize(&theta);
            evaluations += 1;
            cost = half_norm2(&r);
            let ne = normal_equations(n, &r, &rows);
            a = ne.0;
            g = ne.1;
            gnorm = inf_norm(&g);
            lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            rejections = 0;
            if cost == 0.0 {
                return report(
                    theta,
                    cost,
                    iter,
                    evaluations,
                    Termination::ZeroResidual,
                    gnorm,
                    &a,
                );
            }
            if gnorm <= options.gradient_tol {
                return report(
                    theta,
                    cost,
                    iter,
                    evaluations,
                    Termination::Gradient,
                    gnorm,
                    &a,
                );
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            rejections += 1;
            if rejections > 60 || !lambda.is_finite() {
                return report(
                    theta,
                    cost,
                    iter,
                    evaluations,
                    Termination::Stalled,
                    gnorm,
                    &a,
                );
            }
        }
    }
    report(
        theta,
        cost,
        options.max_iterations,
        evaluations,
        Termination::MaxIterations,
        gnorm,
        &a,
    )
}
