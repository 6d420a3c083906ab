//! Proportional-intensity (Cox) fits per transition: Newton–Raphson on the
//! delayed-entry partial likelihood (Breslow ties) and the Breslow cumulative
//! baseline hazard.

mod likelihood;
mod linalg;
mod step;

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Transition, TransitionRow};
use likelihood::RiskSets;
pub use likelihood::{partial_likelihood, LikelihoodEval};
pub use step::StepFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoxError {
    #[error("no events among the rows")]
    NoEvents,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("row of subject {subject} has a non-finite value or an empty (entry, exit] interval")]
    InvalidRow { subject: usize },
    #[error("Newton-Raphson did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("singular information matrix at column {column}")]
    SingularInformation { column: usize },
    #[error("monotone likelihood: coefficient {column} reached {value:.3} with the log-likelihood still increasing")]
    MonotoneLikelihood { column: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoxOptions {
    /// Convergence when `|Δ loglik| / (|loglik| + 1) < tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Bound on `|β_j|` used to detect monotone likelihood.
    pub beta_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { tol: 1e-9, max_iter: 50, max_halvings: 10, beta_bound: 15.0 }
    }
}

/// A fitted proportional-intensity model for one transition.
#[derive(Debug, Clone, Serialize)]
pub struct CoxFit {
    pub transition: Transition,
    pub beta: Vec<f64>,
    /// Inverse observed information, row-major `p × p`. Rows and columns of
    /// aliased coefficients are zero.
    pub covariance: Vec<f64>,
    pub loglik: f64,
    pub loglik_init: f64,
    pub baseline: StepFunction,
    pub n_events: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Columns that are identically zero in the data; their coefficient is
    /// held at 0.
    pub aliased: Vec<bool>,
}

impl CoxFit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let p = self.p();
        (0..p).map(|j| self.covariance[j * p + j].max(0.0).sqrt()).collect()
    }

    pub fn linear_predictor(&self, z: &[f64]) -> Result<f64, CoxError> {
        if z.len() != self.p() {
            return Err(CoxError::DimensionMismatch { expected: self.p(), found: z.len() });
        }
        Ok(self.beta.iter().zip(z).map(|(b, v)| b * v).sum())
    }

    /// `Λ(t | z) = Λ⁰(t) exp(βᵀz)`.
    pub fn cumulative_hazard(&self, z: &[f64], t: f64) -> Result<f64, CoxError> {
        Ok(self.baseline.eval(t) * self.linear_predictor(z)?.exp())
    }

    /// `Λ(to | z) − Λ(from | z)`: baseline mass on `(from, to]` times
    /// `exp(βᵀz)`. Used for the 1→2 transition with `from` the entry time.
    pub fn cumulative_hazard_between(&self, z: &[f64], from: f64, to: f64) -> Result<f64, CoxError> {
        Ok(self.baseline.increment(from, to) * self.linear_predictor(z)?.exp())
    }

    /// Writes coefficients, covariance and baseline jumps as CSV sections.
    pub fn write_debug_csv<W: Write>(&self, mut w: W, names: &[String]) -> std::io::Result<()> {
        let p = self.p();
        writeln!(
            w,
            "# transition={} loglik={} converged={} iterations={}",
            self.transition, self.loglik, self.converged, self.iterations
        )?;
        writeln!(w, "section,row,col,value")?;
        for j in 0..p {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("z{}", j + 1));
            writeln!(w, "beta,{name},,{}", self.beta[j])?;
        }
        for i in 0..p {
            for j in 0..p {
                writeln!(w, "covariance,{i},{j},{}", self.covariance[i * p + j])?;
            }
        }
        for (t, v) in self.baseline.jump_times().iter().zip(self.baseline.cum_values()) {
            writeln!(w, "baseline,{t},,{v}")?;
        }
        Ok(())
    }
}

/// Maximizes the delayed-entry partial likelihood by Newton–Raphson with
/// step halving, starting from `init`.
pub fn fit_partial_likelihood(rows: &[TransitionRow], init: &[f64], opts: &CoxOptions) -> Result<CoxFit, CoxError> {
    let rs = RiskSets::new(rows)?;
    let p = rs.p();
    if init.len() != p {
        return Err(CoxError::DimensionMismatch { expected: p, found: init.len() });
    }
    if rs.n_events() == 0 {
        return Err(CoxError::NoEvents);
    }
    let transition = rows[0].transition;

    let aliased: Vec<bool> = (0..p).map(|j| rows.iter().all(|r| r.z[j] == 0.0)).collect();
    let free: Vec<usize> = (0..p).filter(|&j| !aliased[j]).collect();
    let q = free.len();

    let mut beta = init.to_vec();
    for j in 0..p {
        if aliased[j] {
            beta[j] = 0.0;
        }
    }
    let mut current = rs.evaluate(&beta);
    let loglik_init = current.loglik;
    let mut iterations = 0;
    let mut converged = q == 0;

    while !converged {
        if iterations == opts.max_iter {
            return Err(CoxError::NonConvergence { iterations });
        }
        iterations += 1;
        let (grad, info) = restrict(&current, &free, p);
        let l = linalg::cholesky(&info, q).map_err(|k| CoxError::SingularInformation { column: free[k] })?;
        let step = linalg::cholesky_solve(&l, q, &grad);

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let mut cand = beta.clone();
            for (k, &j) in free.iter().enumerate() {
                cand[j] += scale * step[k];
            }
            let eval = rs.evaluate(&cand);
            if eval.loglik.is_finite() && eval.loglik >= current.loglik {
                accepted = Some((cand, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, eval)) = accepted else {
            // no ascent direction left: already at the maximum up to rounding
            converged = true;
            break;
        };
        let change = (eval.loglik - current.loglik).abs() / (current.loglik.abs() + 1.0);
        beta = cand;
        current = eval;
        if change < opts.tol {
            converged = true;
        } else if let Some(column) = (0..p).find(|&j| beta[j].abs() > opts.beta_bound) {
            return Err(CoxError::MonotoneLikelihood { column, value: beta[column] });
        }
    }

    let mut covariance = vec![0.0; p * p];
    if q > 0 {
        let (_, info) = restrict(&current, &free, p);
        let l = linalg::cholesky(&info, q).map_err(|k| CoxError::SingularInformation { column: free[k] })?;
        let inv = linalg::cholesky_inverse(&l, q);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                covariance[i * p + j] = inv[a * q + b];
            }
        }
    }

    Ok(CoxFit {
        transition,
        baseline: rs.breslow(&beta),
        beta,
        covariance,
        loglik: current.loglik,
        loglik_init,
        n_events: rs.n_events(),
        converged,
        iterations,
        aliased,
    })
}

fn restrict(eval: &LikelihoodEval, free: &[usize], p: usize) -> (Vec<f64>, Vec<f64>) {
    let q = free.len();
    let grad = free.iter().map(|&j| eval.gradient[j]).collect();
    let mut info = vec![0.0; q * q];
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            info[a * q + b] = eval.information[i * p + j];
        }
    }
    (grad, info)
}

/// Breslow estimator `Λ⁰(t) = Σ_{t_j ≤ t} d_j / Σ_{k ∈ R(t_j)} exp(βᵀz_k)`
/// for the coefficients of `fit` on `rows`.
pub fn breslow_baseline(fit: &CoxFit, rows: &[TransitionRow]) -> Result<StepFunction, CoxError> {
    breslow_at(rows, &fit.beta)
}

/// Breslow estimator at arbitrary coefficients.
pub fn breslow_at(rows: &[TransitionRow], beta: &[f64]) -> Result<StepFunction, CoxError> {
    let rs = RiskSets::new(rows)?;
    if beta.len() != rs.p() {
        return Err(CoxError::DimensionMismatch { expected: rs.p(), found: beta.len() });
    }
    Ok(rs.breslow(beta))
}
