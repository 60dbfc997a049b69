//! Regularized ERM solver and the two private training algorithms.
//!
//! The objective is
//! `J(θ) = (1/n) Σ [f(y_i θᵀx_i) + c‖θ‖²] + (1/n) βᵀθ`,
//! which is 2c-strongly convex, so the minimizer is unique.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{margin, LossModel};
use crate::mechanisms::{sample_gaussian_iso, sample_spherical_laplace, NoiseSource};
use crate::types::{Dataset, Mechanism, ParamVector, PrivacyBudget, PrivacyKind, PrivateFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Solver {
    Newton,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L2 regularization coefficient.
    pub c: f64,
    /// Stopping threshold on the gradient norm.
    pub tol: f64,
    pub max_iter: usize,
    pub solver: Solver,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 0.001,
            tol: 1e-8,
            max_iter: 200,
            solver: Solver::Newton,
        }
    }
}

impl TrainConfig {
    pub fn with_c(c: f64) -> Self {
        Self {
            c,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(invalid("c", format!("must be positive, got {}", self.c)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(invalid("tol", format!("must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

fn check_dims(d: &Dataset, theta: &DVector<f64>, beta: Option<&DVector<f64>>) -> Result<()> {
    if theta.len() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            found: theta.len(),
        });
    }
    if let Some(b) = beta {
        if b.len() != d.dim() {
            return Err(Error::DimensionMismatch {
                expected: d.dim(),
                found: b.len(),
            });
        }
    }
    Ok(())
}

fn value_at(d: &Dataset, m: &LossModel, c: f64, theta: &DVector<f64>, beta: Option<&DVector<f64>>) -> f64 {
    let n = d.len() as f64;
    let loss: f64 = d
        .records()
        .iter()
        .map(|r| m.value(margin(&r.features, r.label_f64(), theta)))
        .sum();
    let linear = beta.map_or(0.0, |b| b.dot(theta));
    loss / n + c * theta.norm_squared() + linear / n
}

fn gradient_at(
    d: &Dataset,
    m: &LossModel,
    c: f64,
    theta: &DVector<f64>,
    beta: Option<&DVector<f64>>,
) -> DVector<f64> {
    let n = d.len() as f64;
    let mut g = DVector::zeros(theta.len());
    for r in d.records() {
        let y = r.label_f64();
        let w = y * m.derivative(margin(&r.features, y, theta));
        g.axpy(w, &r.features, 1.0);
    }
    g /= n;
    g.axpy(2.0 * c, theta, 1.0);
    if let Some(b) = beta {
        g.axpy(1.0 / n, b, 1.0);
    }
    g
}

/// `(1/n) Σ H[f(y_i θᵀx_i)] + 2cI`; the linear term does not contribute.
pub(crate) fn hessian_at(d: &Dataset, m: &LossModel, c: f64, theta: &DVector<f64>) -> DMatrix<f64> {
    let dim = theta.len();
    let mut h = DMatrix::zeros(dim, dim);
    for r in d.records() {
        let w = m.second_derivative(margin(&r.features, r.label_f64(), theta));
        if w != 0.0 {
            h.ger(w, &r.features, &r.features, 1.0);
        }
    }
    h /= d.len() as f64;
    for i in 0..dim {
        h[(i, i)] += 2.0 * c;
    }
    h
}

/// Value of the (optionally perturbed) regularized empirical risk.
pub fn objective_value(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    theta: &ParamVector,
    beta: Option<&DVector<f64>>,
) -> Result<f64> {
    check_dims(d, theta.as_vector(), beta)?;
    Ok(value_at(d, m, cfg.c, theta.as_vector(), beta))
}

/// Gradient of [`objective_value`] with respect to θ.
pub fn objective_gradient(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    theta: &ParamVector,
    beta: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    check_dims(d, theta.as_vector(), beta)?;
    Ok(gradient_at(d, m, cfg.c, theta.as_vector(), beta))
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimizes the regularized (optionally perturbed) empirical risk.
///
/// Returns θ with gradient norm at most `cfg.tol`.
pub fn solve_erm(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    beta: Option<&DVector<f64>>,
) -> Result<ParamVector> {
    cfg.validate()?;
    let dim = d.dim();
    let mut theta = DVector::zeros(dim);
    check_dims(d, &theta, beta)?;
    // gradient Lipschitz constant, ‖x‖ ≤ 1
    let lipschitz = m.curvature_bound() + 2.0 * cfg.c;

    for _ in 0..cfg.max_iter {
        let g = gradient_at(d, m, cfg.c, &theta, beta);
        let gnorm = g.norm();
        if gnorm <= cfg.tol {
            return ParamVector::new(theta);
        }
        let f = value_at(d, m, cfg.c, &theta, beta);
        let newton_dir = match cfg.solver {
            Solver::Newton => hessian_at(d, m, cfg.c, &theta)
                .cholesky()
                .map(|ch| -ch.solve(&g)),
            Solver::GradientDescent => None,
        };
        let stepped = match newton_dir {
            Some(dir) => line_search(d, m, cfg.c, beta, &theta, f, &g, &dir, 1.0),
            None => None,
        };
        theta = match stepped {
            Some(t) => t,
            // gradient step of length 1/L always decreases a smooth objective
            None => {
                let dir = -&g;
                line_search(d, m, cfg.c, beta, &theta, f, &g, &dir, 1.0 / lipschitz)
                    .unwrap_or_else(|| &theta + dir / lipschitz)
            }
        };
    }
    let g = gradient_at(d, m, cfg.c, &theta, beta);
    if g.norm() <= cfg.tol {
        return ParamVector::new(theta);
    }
    Err(Error::NoConvergence(cfg.max_iter))
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    d: &Dataset,
    m: &LossModel,
    c: f64,
    beta: Option<&DVector<f64>>,
    theta: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    dir: &DVector<f64>,
    initial: f64,
) -> Option<DVector<f64>> {
    let slope = g.dot(dir);
    if !(slope < 0.0) {
        return None;
    }
    // Below this predicted decrease, objective differences are round-off
    // and only the directional derivative is trustworthy.
    let floor = 1e3 * f64::EPSILON * f.abs().max(1.0);
    if -slope * initial > floor {
        let mut step = initial;
        for _ in 0..MAX_HALVINGS {
            let cand = theta + dir * step;
            let fc = value_at(d, m, c, &cand, beta);
            if fc <= f + ARMIJO * step * slope {
                return Some(cand);
            }
            step *= 0.5;
        }
    }
    derivative_search(d, m, c, beta, theta, slope, dir, initial)
}

/// Finds a step `s` with `φ'(s) <= |slope|/2` for `φ(s) = J(θ + s·dir)`,
/// preferring `s = initial`. Bisection keeps `φ'(s) >= slope/2`, so the
/// step removes at least half of the directional slope.
#[allow(clippy::too_many_arguments)]
fn derivative_search(
    d: &Dataset,
    m: &LossModel,
    c: f64,
    beta: Option<&DVector<f64>>,
    theta: &DVector<f64>,
    slope: f64,
    dir: &DVector<f64>,
    initial: f64,
) -> Option<DVector<f64>> {
    let dphi = |s: f64| gradient_at(d, m, c, &(theta + dir * s), beta).dot(dir);
    let bound = 0.5 * slope.abs();
    if dphi(initial) <= bound {
        return Some(theta + dir * initial);
    }
    let (mut lo, mut hi) = (0.0, initial);
    for _ in 0..MAX_HALVINGS {
        let mid = 0.5 * (lo + hi);
        let dm = dphi(mid);
        if dm > bound {
            hi = mid;
        } else if dm < -bound {
            lo = mid;
        } else {
            return Some(theta + dir * mid);
        }
    }
    (lo > 0.0).then(|| theta + dir * lo)
}

/// Smallest regularization coefficient for which objective perturbation is
/// defined: `t / (2n(e^ε − 1))`.
pub fn min_regularization(epsilon: f64, t: f64, n: usize) -> f64 {
    t / (2.0 * n as f64 * epsilon.exp_m1())
}

/// Budget left for the noise term: `ε′ = ε − ln(1 + t/(2nc))`.
pub fn epsilon_prime(epsilon: f64, t: f64, n: usize, c: f64) -> f64 {
    epsilon - (t / (2.0 * n as f64 * c)).ln_1p()
}

/// Objective perturbation: minimize the risk plus a random linear term
/// `(1/n)βᵀθ` with β spherical-Laplace at rate ε′/2.
///
/// The result satisfies ε-DP, and so (ε²/2)-zCDP.
pub fn train_objective_perturbation(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    eps: PrivacyBudget,
    noise: &mut impl NoiseSource,
) -> Result<PrivateFit> {
    cfg.validate()?;
    if eps.kind() != PrivacyKind::PureDP {
        return Err(Error::MechanismMismatch(
            "objective perturbation takes a pure-DP budget".into(),
        ));
    }
    let n = d.len();
    let t = m.curvature_bound();
    let min_c = min_regularization(eps.value(), t, n);
    let eps_prime = epsilon_prime(eps.value(), t, n, cfg.c);
    if cfg.c < min_c || !(eps_prime > 0.0) {
        return Err(Error::BudgetTooSmall { c: cfg.c, min_c });
    }
    let gamma = eps_prime / 2.0;
    let beta = sample_spherical_laplace(d.dim(), gamma, noise)?;
    let theta_tilde = solve_erm(d, m, cfg, Some(&beta))?;
    Ok(PrivateFit {
        theta_tilde,
        mechanism: Mechanism::ObjectivePerturb,
        gamma: Some(gamma),
        sigma2: None,
        eps_prime: Some(eps_prime),
        n,
        c: cfg.c,
    })
}

/// Output perturbation: fit exactly, then add noise calibrated to the
/// minimizer's L2 sensitivity `1/(nc)`.
pub fn train_output_perturbation(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    phi: PrivacyBudget,
    noise: &mut impl NoiseSource,
) -> Result<PrivateFit> {
    cfg.validate()?;
    let n = d.len();
    let nc = n as f64 * cfg.c;
    let theta_hat = solve_erm(d, m, cfg, None)?.into_vector();
    let (theta, mechanism, gamma, sigma2) = match phi.kind() {
        PrivacyKind::PureDP => {
            let gamma = nc * phi.value();
            let beta = sample_spherical_laplace(d.dim(), gamma, noise)?;
            (theta_hat + beta, Mechanism::OutputPerturbDP, Some(gamma), None)
        }
        PrivacyKind::ZCDP => {
            let sigma2 = 1.0 / (2.0 * phi.value() * nc * nc);
            let beta = sample_gaussian_iso(d.dim(), sigma2, noise)?;
            (theta_hat + beta, Mechanism::OutputPerturbZCDP, None, Some(sigma2))
        }
    };
    Ok(PrivateFit {
        theta_tilde: ParamVector::new(theta)?,
        mechanism,
        gamma,
        sigma2,
        eps_prime: None,
        n,
        c: cfg.c,
    })
}
