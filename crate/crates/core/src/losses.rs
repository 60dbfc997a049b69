//! Margin-based losses `f(z)` with `z = y θᵀx`, their per-record gradients and
//! Hessians, and the L2 sensitivity bounds of the Hessian and score
//! covariance used when releasing those matrices privately.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::types::ParamVector;

pub const DEFAULT_HUBER_H: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum LossModel {
    Logistic,
    #[serde(rename = "HuberSVM")]
    HuberSvm { h: f64 },
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl LossModel {
    pub fn huber(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(invalid("h", format!("must be positive, got {h}")));
        }
        Ok(Self::HuberSvm { h })
    }

    /// Upper bound on |f''|.
    pub fn curvature_bound(&self) -> f64 {
        match *self {
            Self::Logistic => 0.25,
            Self::HuberSvm { h } => 1.0 / (2.0 * h),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match *self {
            // ln(1 + e^{-z})
            Self::Logistic => {
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
            Self::HuberSvm { h } => {
                if z > 1.0 + h {
                    0.0
                } else if z < 1.0 - h {
                    1.0 - z
                } else {
                    let u = 1.0 + h - z;
                    u * u / (4.0 * h)
                }
            }
        }
    }

    /// f'(z).
    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Self::Logistic => -sigmoid(-z),
            Self::HuberSvm { h } => {
                if z > 1.0 + h {
                    0.0
                } else if z < 1.0 - h {
                    -1.0
                } else {
                    (z - 1.0 - h) / (2.0 * h)
                }
            }
        }
    }

    /// f''(z); the Huber kinks at |1 − z| = h take the middle-branch value.
    pub fn second_derivative(&self, z: f64) -> f64 {
        match *self {
            Self::Logistic => sigmoid(z) * sigmoid(-z),
            Self::HuberSvm { h } => {
                if (1.0 - z).abs() <= h {
                    1.0 / (2.0 * h)
                } else {
                    0.0
                }
            }
        }
    }

    /// Sensitivity of the averaged Hessian `(1/n) Σ H[f] + 2cI`.
    pub fn hessian_sensitivity(&self, n: usize) -> f64 {
        let n = n as f64;
        match *self {
            Self::Logistic => 1.0 / (2.0 * n),
            Self::HuberSvm { h } => 1.0 / (n * h),
        }
    }

    /// Sensitivity of the score covariance estimate. For logistic regression
    /// the bound depends on the parameter norm and is evaluated at `theta`.
    pub fn covariance_sensitivity(&self, n: usize, theta: &ParamVector) -> f64 {
        let n = n as f64;
        match *self {
            Self::Logistic => {
                let s = sigmoid(theta.as_vector().norm());
                2.0 * s * s / n
            }
            Self::HuberSvm { .. } => 2.0 / n,
        }
    }
}

/// Free-function form of [`LossModel::value`].
pub fn loss_value(m: &LossModel, z: f64) -> f64 {
    m.value(z)
}

pub(crate) fn margin(x: &DVector<f64>, y: f64, theta: &DVector<f64>) -> f64 {
    y * theta.dot(x)
}

fn check_dims(x: &DVector<f64>, theta: &ParamVector) -> Result<()> {
    if x.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: x.len(),
        });
    }
    Ok(())
}

/// ∇θ f(y θᵀx) = y f'(z) x.
pub fn per_record_gradient(
    m: &LossModel,
    x: &DVector<f64>,
    y: f64,
    theta: &ParamVector,
) -> Result<DVector<f64>> {
    check_dims(x, theta)?;
    let z = margin(x, y, theta.as_vector());
    Ok(x * (y * m.derivative(z)))
}

/// Hθ f(y θᵀx) = y² f''(z) x xᵀ.
pub fn per_record_hessian(
    m: &LossModel,
    x: &DVector<f64>,
    y: f64,
    theta: &ParamVector,
) -> Result<DMatrix<f64>> {
    check_dims(x, theta)?;
    let z = margin(x, y, theta.as_vector());
    Ok(x * x.transpose() * (y * y * m.second_derivative(z)))
}
