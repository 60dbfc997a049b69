//! Private confidence intervals for the population minimizer θ₀.
//!
//! Both constructions linearize the estimating equation around the released
//! θ̃, so θ₀ − θ̃ is approximately a linear image of a Gaussian score term
//! plus the privacy noise. The Hessian and score covariance entering that
//! approximation are themselves released through [`priv_spd_mat`], after
//! which everything here is post-processing.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::erm::{hessian_at, train_objective_perturbation, train_output_perturbation, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::losses::{margin, LossModel};
use crate::mechanisms::{priv_spd_mat, NoiseSource, SpdMatrix};
use crate::types::{
    check_alpha, epsilon_for_zcdp, BudgetSplit, Dataset, IntervalMethod, IntervalSet, Mechanism,
    ParamVector, PrivacyBudget, PrivacyKind, PrivateFit,
};

/// Minimum Monte-Carlo sample count accepted by [`CiSpec`].
pub const MIN_MC_SAMPLES: usize = 100;

/// Private Hessian and score covariance, both with eigenvalues ≥ 2c.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticPieces {
    h_tilde: SpdMatrix,
    sigma_tilde: SpdMatrix,
    n: usize,
}

impl AsymptoticPieces {
    pub fn new(h_tilde: SpdMatrix, sigma_tilde: SpdMatrix, n: usize) -> Result<Self> {
        if h_tilde.dim() != sigma_tilde.dim() {
            return Err(Error::DimensionMismatch {
                expected: h_tilde.dim(),
                found: sigma_tilde.dim(),
            });
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            h_tilde,
            sigma_tilde,
            n,
        })
    }

    pub fn hessian(&self) -> &SpdMatrix {
        &self.h_tilde
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.sigma_tilde
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.h_tilde.dim()
    }

    /// `H̃⁻¹ Σ̃ H̃⁻¹ / n`, the asymptotic covariance of the estimator.
    pub fn sandwich(&self) -> DMatrix<f64> {
        let left = self.h_tilde.solve_matrix(self.sigma_tilde.entries());
        let both = self.h_tilde.solve_matrix(&left.transpose());
        let s = (&both + both.transpose()) * 0.5;
        s / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub alpha: f64,
    /// Monte-Carlo sample count; ignored by the closed form.
    pub m: usize,
    pub method: IntervalMethod,
}

impl CiSpec {
    pub fn new(alpha: f64, m: usize, method: IntervalMethod) -> Result<Self> {
        check_alpha(alpha)?;
        if method == IntervalMethod::MonteCarloDP && m < MIN_MC_SAMPLES {
            return Err(invalid("m", format!("need at least {MIN_MC_SAMPLES} samples, got {m}")));
        }
        Ok(Self { alpha, m, method })
    }
}

fn check_theta(d: &Dataset, theta: &ParamVector) -> Result<()> {
    if theta.len() != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            found: theta.len(),
        });
    }
    Ok(())
}

/// `(1/n) Σ H[f(x_i, y_i, θ)] + 2cI`.
pub fn empirical_hessian(d: &Dataset, m: &LossModel, theta: &ParamVector, c: f64) -> Result<DMatrix<f64>> {
    check_theta(d, theta)?;
    Ok(hessian_at(d, m, c, theta.as_vector()))
}

/// `(1/n) Σ ∇f ∇fᵀ − 4c² θθᵀ`, evaluated at `theta`. May be indefinite.
pub fn empirical_covariance(d: &Dataset, m: &LossModel, theta: &ParamVector, c: f64) -> Result<DMatrix<f64>> {
    check_theta(d, theta)?;
    let t = theta.as_vector();
    let dim = t.len();
    let mut s = DMatrix::zeros(dim, dim);
    for r in d.records() {
        let y = r.label_f64();
        let w = m.derivative(margin(&r.features, y, t));
        // ∇f = y f'(z) x, so ∇f ∇fᵀ = f'(z)² x xᵀ
        s.ger(w * w, &r.features, &r.features, 1.0);
    }
    s /= d.len() as f64;
    s.ger(-4.0 * c * c, t, t, 1.0);
    Ok(s)
}

/// Releases the Hessian (budget φ₂) and score covariance (budget φ₃),
/// both evaluated at the released θ̃.
pub fn estimate_pieces(
    d: &Dataset,
    m: &LossModel,
    fit: &PrivateFit,
    phi2: PrivacyBudget,
    phi3: PrivacyBudget,
    noise: &mut impl NoiseSource,
) -> Result<AsymptoticPieces> {
    if phi2.kind() != phi3.kind() {
        return Err(Error::MixedBudgetKinds);
    }
    let n = d.len();
    let theta = &fit.theta_tilde;
    let hessian = empirical_hessian(d, m, theta, fit.c)?;
    let h_tilde = priv_spd_mat(&hessian, m.hessian_sensitivity(n), phi2, fit.c, noise)?;
    let covariance = empirical_covariance(d, m, theta, fit.c)?;
    let sigma_tilde = priv_spd_mat(
        &covariance,
        m.covariance_sensitivity(n, theta),
        phi3,
        fit.c,
        noise,
    )?;
    AsymptoticPieces::new(h_tilde, sigma_tilde, n)
}

/// The (1 − p) point of the standard normal, i.e. `Φ⁻¹(p)`.
pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Order-statistic interval: after sorting ascending, the endpoints are the
/// values at 1-based ranks `ceil(α/2 · m)` and `ceil((1 − α/2) · m)`.
pub fn empirical_quantile_interval(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_alpha(alpha)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        order_statistic(&sorted, alpha / 2.0),
        order_statistic(&sorted, 1.0 - alpha / 2.0),
    ))
}

fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    // absorb round-off in q·m so exact products keep their rank
    let rank = ((q * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    sorted[rank - 1]
}

fn quantile_intervals(
    columns: Vec<Vec<f64>>,
    alpha: f64,
    method: IntervalMethod,
) -> Result<IntervalSet> {
    let mut lo = Vec::with_capacity(columns.len());
    let mut hi = Vec::with_capacity(columns.len());
    for col in &columns {
        let (l, h) = empirical_quantile_interval(col, alpha)?;
        lo.push(l);
        hi.push(h);
    }
    IntervalSet::new(lo, hi, alpha, method)
}

fn check_pieces(fit: &PrivateFit, pieces: &AsymptoticPieces) -> Result<()> {
    fit.check()?;
    if pieces.dim() != fit.theta_tilde.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.theta_tilde.len(),
            found: pieces.dim(),
        });
    }
    Ok(())
}

/// Draws `m` samples of `θ̃ + draw()` and returns their per-coordinate
/// quantile intervals.
fn monte_carlo<F>(theta: &DVector<f64>, spec_m: usize, alpha: f64, mut draw: F) -> Result<IntervalSet>
where
    F: FnMut() -> DVector<f64>,
{
    let dim = theta.len();
    let mut columns = vec![Vec::with_capacity(spec_m); dim];
    for _ in 0..spec_m {
        let sample = theta + draw();
        for (col, v) in columns.iter_mut().zip(sample.iter()) {
            col.push(*v);
        }
    }
    quantile_intervals(columns, alpha, IntervalMethod::MonteCarloDP)
}

/// Intervals for a model trained by objective perturbation:
/// `θ⁽ⁱ⁾ = θ̃ + H̃⁻¹(G_i + β_i/√n)/√n` with `G_i ~ N(0, Σ̃)` and β_i drawn
/// with the same rate ε′/2 used in training.
pub fn ci_objective(
    fit: &PrivateFit,
    pieces: &AsymptoticPieces,
    spec: &CiSpec,
    noise: &mut impl NoiseSource,
) -> Result<IntervalSet> {
    check_pieces(fit, pieces)?;
    if fit.mechanism != Mechanism::ObjectivePerturb {
        return Err(Error::MechanismMismatch(format!(
            "objective intervals need an ObjectivePerturb fit, got {:?}",
            fit.mechanism
        )));
    }
    if spec.method != IntervalMethod::MonteCarloDP {
        return Err(Error::MechanismMismatch(
            "objective perturbation intervals are Monte-Carlo only".into(),
        ));
    }
    let eps_prime = fit
        .eps_prime
        .ok_or_else(|| Error::MechanismMismatch("fit carries no eps_prime".into()))?;
    let gamma = eps_prime / 2.0;
    let dim = pieces.dim();
    let root_n = (pieces.n as f64).sqrt();
    let sigma_root = pieces.sigma_tilde.sqrt();
    let h = &pieces.h_tilde;
    monte_carlo(fit.theta_tilde.as_vector(), spec.m, spec.alpha, || {
        let g = &sigma_root * noise.gaussian(dim, 1.0);
        let beta = noise.spherical_laplace(dim, gamma);
        h.solve(&(g + beta / root_n)) / root_n
    })
}

/// Intervals for a model trained by output perturbation.
///
/// Pure DP: Monte-Carlo over `θ̃ − β_i + H̃⁻¹G_i/√n` with β_i spherical
/// Laplace at the training rate. zCDP: the privacy and sampling terms are
/// both Gaussian, so the interval is `θ̃[j] ± z_{α/2} √U_jj` with
/// `U = σ²I + H̃⁻¹Σ̃H̃⁻¹/n`.
pub fn ci_output(
    fit: &PrivateFit,
    pieces: &AsymptoticPieces,
    spec: &CiSpec,
    noise: &mut impl NoiseSource,
) -> Result<IntervalSet> {
    check_pieces(fit, pieces)?;
    match (fit.mechanism, spec.method) {
        (Mechanism::OutputPerturbDP, IntervalMethod::MonteCarloDP) => {
            let gamma = fit.gamma.expect("checked by PrivateFit::check");
            let dim = pieces.dim();
            let root_n = (pieces.n as f64).sqrt();
            let sigma_root = pieces.sigma_tilde.sqrt();
            let h = &pieces.h_tilde;
            monte_carlo(fit.theta_tilde.as_vector(), spec.m, spec.alpha, || {
                let g = &sigma_root * noise.gaussian(dim, 1.0);
                h.solve(&g) / root_n - noise.spherical_laplace(dim, gamma)
            })
        }
        (Mechanism::OutputPerturbZCDP, IntervalMethod::ClosedFormZCDP) => {
            let sigma2 = fit.sigma2.expect("checked by PrivateFit::check");
            let u = pieces.sandwich() + DMatrix::identity(pieces.dim(), pieces.dim()) * sigma2;
            let z = standard_normal_quantile(1.0 - spec.alpha / 2.0);
            let theta = &fit.theta_tilde;
            let half: Vec<f64> = (0..theta.len()).map(|j| z * u[(j, j)].sqrt()).collect();
            IntervalSet::new(
                (0..theta.len()).map(|j| theta[j] - half[j]).collect(),
                (0..theta.len()).map(|j| theta[j] + half[j]).collect(),
                spec.alpha,
                IntervalMethod::ClosedFormZCDP,
            )
        }
        (mech, method) => Err(Error::MechanismMismatch(format!(
            "{method:?} intervals do not apply to a {mech:?} fit"
        ))),
    }
}

/// Monte-Carlo counterpart of the zCDP closed form: samples
/// `θ̃ − β_i + H̃⁻¹G_i/√n` with Gaussian β_i. Used to cross-check the
/// closed-form interval.
pub fn ci_output_zcdp_monte_carlo(
    fit: &PrivateFit,
    pieces: &AsymptoticPieces,
    alpha: f64,
    m: usize,
    noise: &mut impl NoiseSource,
) -> Result<IntervalSet> {
    check_pieces(fit, pieces)?;
    if fit.mechanism != Mechanism::OutputPerturbZCDP {
        return Err(Error::MechanismMismatch(format!(
            "expected an OutputPerturbZCDP fit, got {:?}",
            fit.mechanism
        )));
    }
    CiSpec::new(alpha, m, IntervalMethod::MonteCarloDP)?;
    let sigma2 = fit.sigma2.expect("checked by PrivateFit::check");
    let dim = pieces.dim();
    let root_n = (pieces.n as f64).sqrt();
    let sigma_root = pieces.sigma_tilde.sqrt();
    let h = &pieces.h_tilde;
    monte_carlo(fit.theta_tilde.as_vector(), m, alpha, || {
        let g = &sigma_root * noise.gaussian(dim, 1.0);
        h.solve(&g) / root_n - noise.gaussian(dim, sigma2)
    })
}

/// Which private trainer produces θ̃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Perturbation {
    Objective,
    Output,
}

/// Trains with budget φ₁. Under zCDP, objective perturbation runs at the ε
/// with ε²/2 = ρ₁, since its ε-DP guarantee implies (ε²/2)-zCDP.
pub fn train_private(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    perturbation: Perturbation,
    phi1: PrivacyBudget,
    noise: &mut impl NoiseSource,
) -> Result<PrivateFit> {
    match perturbation {
        Perturbation::Objective => {
            let eps = match phi1.kind() {
                PrivacyKind::PureDP => phi1,
                PrivacyKind::ZCDP => PrivacyBudget::pure_dp(epsilon_for_zcdp(phi1.value()))?,
            };
            train_objective_perturbation(d, m, cfg, eps, noise)
        }
        Perturbation::Output => train_output_perturbation(d, m, cfg, phi1, noise),
    }
}

/// The interval method that pairs with a fit.
pub fn default_method(mechanism: Mechanism) -> IntervalMethod {
    match mechanism {
        Mechanism::OutputPerturbZCDP => IntervalMethod::ClosedFormZCDP,
        _ => IntervalMethod::MonteCarloDP,
    }
}

/// Builds intervals for an existing fit: releases the pieces with φ₂, φ₃ and
/// dispatches on the fit's mechanism.
pub fn intervals_for_fit(
    d: &Dataset,
    m: &LossModel,
    fit: &PrivateFit,
    phi2: PrivacyBudget,
    phi3: PrivacyBudget,
    spec: &CiSpec,
    noise: &mut impl NoiseSource,
) -> Result<IntervalSet> {
    // reject a bad pairing before spending φ₂ and φ₃
    let pairing_ok = match fit.mechanism {
        Mechanism::ObjectivePerturb | Mechanism::OutputPerturbDP => spec.method == IntervalMethod::MonteCarloDP,
        Mechanism::OutputPerturbZCDP => spec.method == IntervalMethod::ClosedFormZCDP,
    };
    if !pairing_ok {
        return Err(Error::MechanismMismatch(format!(
            "{:?} intervals do not apply to a {:?} fit",
            spec.method, fit.mechanism
        )));
    }
    let pieces = estimate_pieces(d, m, fit, phi2, phi3, noise)?;
    match fit.mechanism {
        Mechanism::ObjectivePerturb => ci_objective(fit, &pieces, spec, noise),
        _ => ci_output(fit, &pieces, spec, noise),
    }
}

/// Full pipeline: train with φ₁, then release intervals with φ₂ and φ₃.
/// Total cost is φ₁+φ₂+φ₃ (pure DP) or the zCDP composition of the parts.
#[allow(clippy::too_many_arguments)]
pub fn fit_with_intervals(
    d: &Dataset,
    m: &LossModel,
    cfg: &TrainConfig,
    perturbation: Perturbation,
    split: &BudgetSplit,
    alpha: f64,
    mc_samples: usize,
    noise: &mut impl NoiseSource,
) -> Result<(PrivateFit, IntervalSet)> {
    let fit = train_private(d, m, cfg, perturbation, split.phi1, noise)?;
    let spec = CiSpec::new(alpha, mc_samples, default_method(fit.mechanism))?;
    let ci = intervals_for_fit(d, m, &fit, split.phi2, split.phi3, &spec, noise)?;
    Ok((fit, ci))
}
