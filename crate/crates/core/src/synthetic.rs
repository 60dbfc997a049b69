//! Synthetic binary classification data with features in the unit ball.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::sigmoid;
use crate::mechanisms::RngStream;
use crate::preprocess::append_constant_and_renormalize;
use crate::types::{Dataset, ParamVector, Record};

/// Probability that a [`LabelModel::MarginGen`] label is flipped.
pub const MARGIN_FLIP_RATE: f64 = 0.05;

/// Stream id of the generator, kept apart from the ids used for training
/// and replicate noise under the same seed.
pub const GENERATOR_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelModel {
    /// `P(y = +1 | x) = S(θ*ᵀx)`.
    LogisticGen,
    /// `y = sign(θ*ᵀx)`, then flipped with probability [`MARGIN_FLIP_RATE`].
    MarginGen,
}

/// Generator description. `d` counts the raw features; `theta_star` acts on
/// the final records, so it has `d + 1` entries with the last one weighting
/// the constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub theta_star: ParamVector,
    pub model: LabelModel,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(invalid("d", "must be at least 1"));
        }
        if self.theta_star.len() != self.d + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.d + 1,
                found: self.theta_star.len(),
            });
        }
        if self.theta_star.as_vector().norm() <= 0.0 {
            return Err(invalid("theta_star", "must be nonzero"));
        }
        Ok(())
    }
}

/// A point drawn uniformly from the unit ball in `d` dimensions.
pub fn uniform_ball<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z
            })
            .collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let u: f64 = rng.random();
            let r = u.powf(1.0 / d as f64);
            return g.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed, GENERATOR_STREAM);
    let raw: Vec<Vec<f64>> = (0..spec.n).map(|_| uniform_ball(spec.d, &mut rng)).collect();
    let theta = spec.theta_star.as_vector();
    let records = append_constant_and_renormalize(&raw)
        .into_iter()
        .map(|x| {
            let x = DVector::from_vec(x);
            let score = theta.dot(&x);
            let label = match spec.model {
                LabelModel::LogisticGen => {
                    if rng.random::<f64>() < sigmoid(score) {
                        1
                    } else {
                        -1
                    }
                }
                LabelModel::MarginGen => {
                    let y = if score >= 0.0 { 1 } else { -1 };
                    if rng.random::<f64>() < MARGIN_FLIP_RATE {
                        -y
                    } else {
                        y
                    }
                }
            };
            Record { features: x, label }
        })
        .collect();
    Dataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erm::{solve_erm, TrainConfig};
    use crate::losses::LossModel;
    use crate::types::validate_dataset;
    use nalgebra::DMatrix;

    fn spec(n: usize, theta: &[f64], model: LabelModel) -> SynthSpec {
        SynthSpec {
            n,
            d: theta.len() - 1,
            theta_star: ParamVector::from_slice(theta).unwrap(),
            model,
            seed: 17,
        }
    }

    #[test]
    fn small_dataset_is_valid() {
        for model in [LabelModel::LogisticGen, LabelModel::MarginGen] {
            let d = generate(&spec(10, &[1.0, -1.0, 0.5], model)).unwrap();
            assert_eq!(d.len(), 10);
            assert_eq!(d.dim(), 3);
            validate_dataset(d).unwrap();
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate(&spec(10, &[0.0, 0.0, 0.0], LabelModel::LogisticGen)).is_err());
        assert!(generate(&spec(0, &[1.0, 0.0], LabelModel::LogisticGen)).is_err());
        let mut s = spec(10, &[1.0, 0.0, 0.0], LabelModel::MarginGen);
        s.d = 3;
        assert!(matches!(generate(&s), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(50, &[1.0, 2.0, 0.0], LabelModel::LogisticGen);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let mut t = s.clone();
        t.seed = 18;
        assert_ne!(generate(&s).unwrap(), generate(&t).unwrap());
    }

    #[test]
    fn ball_samples_have_uniform_radius_law() {
        // P(‖x‖ ≤ 1/2) = 2^{-d} for the uniform ball
        let mut rng = RngStream::new(3, 0);
        let n = 40_000;
        for d in [1usize, 2, 5] {
            let inside = (0..n)
                .filter(|_| {
                    let x = uniform_ball(d, &mut rng);
                    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    assert!(r <= 1.0);
                    r <= 0.5
                })
                .count() as f64
                / n as f64;
            let p = 0.5f64.powi(d as i32);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((inside - p).abs() < 4.0 * se, "d={d}: {inside} vs {p}");
        }
    }

    #[test]
    fn symmetric_generators_are_balanced() {
        for model in [LabelModel::LogisticGen, LabelModel::MarginGen] {
            let d = generate(&spec(100_000, &[1.0, -2.0, 0.0], model)).unwrap();
            let pos = d.records().iter().filter(|r| r.label == 1).count() as f64 / d.len() as f64;
            assert!((pos - 0.5).abs() <= 0.01, "{model:?}: {pos}");
        }
    }

    #[test]
    fn margin_labels_flip_at_the_stated_rate() {
        let s = spec(100_000, &[2.0, 1.0, -0.3], LabelModel::MarginGen);
        let theta = s.theta_star.as_vector().clone();
        let d = generate(&s).unwrap();
        let flipped = d
            .records()
            .iter()
            .filter(|r| (theta.dot(&r.features) >= 0.0) != (r.label == 1))
            .count() as f64
            / d.len() as f64;
        let se = (MARGIN_FLIP_RATE * (1.0 - MARGIN_FLIP_RATE) / d.len() as f64).sqrt();
        assert!((flipped - MARGIN_FLIP_RATE).abs() < 4.0 * se, "{flipped}");
    }

    /// Population minimizer of E[f(yθᵀx)] + c‖θ‖² for the d = 2 logistic
    /// generator, by midpoint quadrature over the disk and Newton's method.
    fn population_minimizer(theta_star: &[f64], c: f64) -> DVector<f64> {
        let (nr, na) = (600usize, 600usize);
        let mut nodes = Vec::with_capacity(nr * na);
        for i in 0..nr {
            let r = (i as f64 + 0.5) / nr as f64;
            // radial density 2r dr on [0,1], angle uniform
            let w = 2.0 * r / (nr * na) as f64;
            for k in 0..na {
                let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / na as f64;
                let s = (1.0 + r * r).sqrt();
                let x = DVector::from_vec(vec![r * a.cos() / s, r * a.sin() / s, 1.0 / s]);
                nodes.push((x, w));
            }
        }
        let ts = DVector::from_column_slice(theta_star);
        let l = LossModel::Logistic;
        let mut theta = DVector::zeros(3);
        for _ in 0..50 {
            let mut g = &theta * (2.0 * c);
            let mut h = DMatrix::identity(3, 3) * (2.0 * c);
            for (x, w) in &nodes {
                let p = sigmoid(ts.dot(x));
                let z = theta.dot(x);
                // E_y[y f'(yz)] and E_y[f''(yz)]; f'' is even
                let d1 = p * l.derivative(z) - (1.0 - p) * l.derivative(-z);
                g += x * (w * d1);
                h += x * x.transpose() * (w * l.second_derivative(z));
            }
            let step = h.cholesky().unwrap().solve(&g);
            theta -= &step;
            if step.norm() < 1e-13 {
                break;
            }
        }
        theta
    }

    #[test]
    fn erm_recovers_population_direction() {
        let ts = [2.0, -1.0, 0.5];
        let d = generate(&spec(100_000, &ts, LabelModel::LogisticGen)).unwrap();
        let cfg = TrainConfig::with_c(0.001);
        let fit = solve_erm(&d, &LossModel::Logistic, &cfg, None).unwrap();
        let pop = population_minimizer(&ts, 0.001);
        let est = fit.as_vector();
        let cos = est.dot(&pop) / (est.norm() * pop.norm());
        assert!(cos >= 0.98, "cosine {cos}, est {est}, pop {pop}");
    }
}
