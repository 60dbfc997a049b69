//! Shared data model: records, datasets, privacy budgets, parameter vectors
//! and interval results.
//!
//! All types are immutable once constructed; constructors enforce the
//! invariants so downstream code can rely on them without re-checking.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack allowed on the unit-norm bound for feature vectors.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A labeled example with an L2-bounded feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: DVector<f64>,
    pub label: i8,
}

impl Record {
    pub fn new(features: impl Into<Vec<f64>>, label: i8) -> Self {
        Self {
            features: DVector::from_vec(features.into()),
            label,
        }
    }

    pub fn label_f64(&self) -> f64 {
        f64::from(self.label)
    }
}

/// A non-empty collection of records sharing one dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset, enforcing every record invariant.
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let dim = records.first().ok_or(Error::EmptyDataset)?.features.len();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.features.len(),
                });
            }
            if r.label != 1 && r.label != -1 {
                return Err(Error::BadLabel(i));
            }
            let norm = r.features.norm();
            if !norm.is_finite() || norm > 1.0 + NORM_TOLERANCE {
                return Err(Error::NormViolation(i));
            }
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Feature dimensionality, including any appended constant column.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }
}

/// Re-checks every dataset invariant and returns the dataset unchanged.
pub fn validate_dataset(d: Dataset) -> Result<Dataset> {
    Dataset::new(d.records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrivacyKind {
    PureDP,
    ZCDP,
}

/// A privacy parameter tagged with the definition it is measured under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBudget")]
pub struct PrivacyBudget {
    kind: PrivacyKind,
    value: f64,
}

#[derive(Deserialize)]
struct RawBudget {
    kind: PrivacyKind,
    value: f64,
}

impl TryFrom<RawBudget> for PrivacyBudget {
    type Error = Error;

    fn try_from(raw: RawBudget) -> Result<Self> {
        Self::new(raw.kind, raw.value)
    }
}

impl PrivacyBudget {
    pub fn new(kind: PrivacyKind, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(invalid("budget", format!("must be positive and finite, got {value}")));
        }
        Ok(Self { kind, value })
    }

    pub fn pure_dp(epsilon: f64) -> Result<Self> {
        Self::new(PrivacyKind::PureDP, epsilon)
    }

    pub fn zcdp(rho: f64) -> Result<Self> {
        Self::new(PrivacyKind::ZCDP, rho)
    }

    pub fn kind(&self) -> PrivacyKind {
        self.kind
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Conversion targets for [`convert_budget`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionTarget {
    ZCDP,
    ApproxDP,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvertedBudget {
    Budget(PrivacyBudget),
    ApproxDP { epsilon: f64, delta: f64 },
}

/// Converts between privacy definitions.
///
/// Pure ε-DP implies (ε²/2)-zCDP; ρ-zCDP implies
/// (ρ + 2√(ρ ln(1/δ)), δ)-DP for any δ in (0, 1).
pub fn convert_budget(
    b: PrivacyBudget,
    target: ConversionTarget,
    delta: Option<f64>,
) -> Result<ConvertedBudget> {
    match (b.kind, target) {
        (PrivacyKind::PureDP, ConversionTarget::ZCDP) => Ok(ConvertedBudget::Budget(
            PrivacyBudget::zcdp(b.value * b.value / 2.0)?,
        )),
        (PrivacyKind::ZCDP, ConversionTarget::ZCDP) => Ok(ConvertedBudget::Budget(b)),
        (kind, ConversionTarget::ApproxDP) => {
            let delta = delta
                .filter(|d| *d > 0.0 && *d < 1.0)
                .ok_or(Error::MissingDelta)?;
            let epsilon = match kind {
                PrivacyKind::PureDP => b.value,
                PrivacyKind::ZCDP => b.value + 2.0 * (b.value * (1.0 / delta).ln()).sqrt(),
            };
            Ok(ConvertedBudget::ApproxDP { epsilon, delta })
        }
    }
}

/// Inverse of the pure-DP to zCDP conversion: the ε whose ε²/2 equals ρ.
pub fn epsilon_for_zcdp(rho: f64) -> f64 {
    (2.0 * rho).sqrt()
}

/// Allocation of the total budget across parameter fit, Hessian and
/// covariance release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub phi1: PrivacyBudget,
    pub phi2: PrivacyBudget,
    pub phi3: PrivacyBudget,
}

impl BudgetSplit {
    pub fn new(phi1: PrivacyBudget, phi2: PrivacyBudget, phi3: PrivacyBudget) -> Result<Self> {
        if phi1.kind != phi2.kind || phi1.kind != phi3.kind {
            return Err(Error::MixedBudgetKinds);
        }
        Ok(Self { phi1, phi2, phi3 })
    }

    pub fn kind(&self) -> PrivacyKind {
        self.phi1.kind
    }

    /// Total cost under sequential composition.
    pub fn total(&self) -> PrivacyBudget {
        PrivacyBudget {
            kind: self.phi1.kind,
            value: self.phi1.value + self.phi2.value + self.phi3.value,
        }
    }
}

/// A model parameter vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<f64>", try_from = "Vec<f64>")]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if let Some(j) = coords.iter().position(|v| !v.is_finite()) {
            return Err(invalid("theta", format!("coordinate {j} is not finite")));
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0.iter().copied().collect()
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    ObjectivePerturb,
    OutputPerturbDP,
    OutputPerturbZCDP,
}

/// Released parameters plus the noise metadata that interval construction
/// needs to model the privacy noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFit")]
pub struct PrivateFit {
    pub theta_tilde: ParamVector,
    pub mechanism: Mechanism,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_prime: Option<f64>,
    pub n: usize,
    pub c: f64,
}

#[derive(Deserialize)]
struct RawFit {
    theta_tilde: ParamVector,
    mechanism: Mechanism,
    gamma: Option<f64>,
    sigma2: Option<f64>,
    eps_prime: Option<f64>,
    n: usize,
    c: f64,
}

impl TryFrom<RawFit> for PrivateFit {
    type Error = Error;

    fn try_from(r: RawFit) -> Result<Self> {
        let fit = PrivateFit {
            theta_tilde: r.theta_tilde,
            mechanism: r.mechanism,
            gamma: r.gamma,
            sigma2: r.sigma2,
            eps_prime: r.eps_prime,
            n: r.n,
            c: r.c,
        };
        fit.check()?;
        Ok(fit)
    }
}

impl PrivateFit {
    /// Checks that the noise metadata matches the mechanism tag.
    pub fn check(&self) -> Result<()> {
        let positive = |v: Option<f64>| v.is_some_and(|x| x.is_finite() && x > 0.0);
        let ok = match self.mechanism {
            Mechanism::ObjectivePerturb => {
                positive(self.gamma) && self.sigma2.is_none() && positive(self.eps_prime)
            }
            Mechanism::OutputPerturbDP => {
                positive(self.gamma) && self.sigma2.is_none() && self.eps_prime.is_none()
            }
            Mechanism::OutputPerturbZCDP => {
                self.gamma.is_none() && positive(self.sigma2) && self.eps_prime.is_none()
            }
        };
        if !ok {
            return Err(Error::MechanismMismatch(format!(
                "noise metadata inconsistent with {:?}",
                self.mechanism
            )));
        }
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalMethod {
    MonteCarloDP,
    ClosedFormZCDP,
}

/// Per-coordinate (1 − α) intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntervals")]
pub struct IntervalSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
    alpha: f64,
    method: IntervalMethod,
}

#[derive(Deserialize)]
struct RawIntervals {
    lo: Vec<f64>,
    hi: Vec<f64>,
    alpha: f64,
    method: IntervalMethod,
}

impl TryFrom<RawIntervals> for IntervalSet {
    type Error = Error;

    fn try_from(r: RawIntervals) -> Result<Self> {
        Self::new(r.lo, r.hi, r.alpha, r.method)
    }
}

impl IntervalSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, alpha: f64, method: IntervalMethod) -> Result<Self> {
        check_alpha(alpha)?;
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if let Some(j) = lo.iter().zip(&hi).position(|(l, h)| !(l <= h)) {
            return Err(Error::InvertedInterval(j));
        }
        Ok(Self { lo, hi, alpha, method })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn method(&self) -> IntervalMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn lengths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l)
    }

    pub fn contains(&self, j: usize, value: f64) -> bool {
        self.lo[j] <= value && value <= self.hi[j]
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid("alpha", format!("must lie in (0, 1), got {alpha}")))
    }
}
