//! Noise primitives: the spherical Laplace sampler, the isotropic Gaussian
//! mechanism, and private release of symmetric positive definite matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::types::{PrivacyBudget, PrivacyKind};

/// Per-entry tolerance for symmetry of an [`SpdMatrix`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Slack allowed below the eigenvalue floor of an [`SpdMatrix`].
pub const EIGEN_TOLERANCE: f64 = 1e-9;

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are independent ChaCha20
/// streams, which is how concurrent workers and replicates get their noise.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A fresh stream sharing this stream's seed.
    pub fn substream(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Source of the two noise shapes used by the mechanisms.
///
/// Callers validate parameters before calling; implementations may assume
/// `dim >= 1`, `gamma > 0` and `sigma2 >= 0`.
pub trait NoiseSource {
    /// A draw with density proportional to `exp(-gamma * ||b||_2)`.
    fn spherical_laplace(&mut self, dim: usize, gamma: f64) -> DVector<f64>;

    /// A draw from `N(0, sigma2 * I_dim)`.
    fn gaussian(&mut self, dim: usize, sigma2: f64) -> DVector<f64>;
}

impl NoiseSource for RngStream {
    fn spherical_laplace(&mut self, dim: usize, gamma: f64) -> DVector<f64> {
        // radius ~ Gamma(dim, rate gamma); direction uniform on the sphere
        let radius: f64 = Gamma::new(dim as f64, 1.0 / gamma)
            .expect("gamma validated by caller")
            .sample(self);
        loop {
            let dir: DVector<f64> = DVector::from_fn(dim, |_, _| {
                let z: f64 = StandardNormal.sample(self);
                z
            });
            let norm = dir.norm();
            if norm > 0.0 {
                return dir * (radius / norm);
            }
        }
    }

    fn gaussian(&mut self, dim: usize, sigma2: f64) -> DVector<f64> {
        let sd = sigma2.sqrt();
        DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(self);
            sd * z
        })
    }
}

/// Noise source that always returns the zero vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn spherical_laplace(&mut self, dim: usize, _gamma: f64) -> DVector<f64> {
        DVector::zeros(dim)
    }

    fn gaussian(&mut self, dim: usize, _sigma2: f64) -> DVector<f64> {
        DVector::zeros(dim)
    }
}

impl<N: NoiseSource + ?Sized> NoiseSource for &mut N {
    fn spherical_laplace(&mut self, dim: usize, gamma: f64) -> DVector<f64> {
        (**self).spherical_laplace(dim, gamma)
    }

    fn gaussian(&mut self, dim: usize, sigma2: f64) -> DVector<f64> {
        (**self).gaussian(dim, sigma2)
    }
}

/// Samples β with density ∝ exp(−γ‖β‖₂) in `dim` dimensions.
pub fn sample_spherical_laplace(
    dim: usize,
    gamma: f64,
    noise: &mut impl NoiseSource,
) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(noise.spherical_laplace(dim, gamma))
}

/// Samples `N(0, sigma2 I_dim)`.
pub fn sample_gaussian_iso(
    dim: usize,
    sigma2: f64,
    noise: &mut impl NoiseSource,
) -> Result<DVector<f64>> {
    if dim == 0 {
        return Err(invalid("dim", "must be at least 1"));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(invalid("sigma2", format!("must be positive, got {sigma2}")));
    }
    Ok(noise.gaussian(dim, sigma2))
}

/// A symmetric matrix whose eigenvalues are bounded below by `floor`,
/// stored together with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    floor: f64,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let max_iter = 1000 * m.nrows().max(1);
    SymmetricEigen::try_new(m, f64::EPSILON, max_iter).ok_or(Error::EigenFailure)
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix", "entries must be finite"));
    }
    Ok(())
}

impl SpdMatrix {
    /// Wraps an existing matrix after checking symmetry and the eigenvalue
    /// floor.
    pub fn new(entries: DMatrix<f64>, floor: f64) -> Result<Self> {
        check_square_finite(&entries)?;
        if !(floor > 0.0) {
            return Err(invalid("floor", "must be positive"));
        }
        let d = entries.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                    return Err(Error::NotPositiveDefinite {
                        floor,
                        reason: format!("entry ({i}, {j}) is not symmetric"),
                    });
                }
            }
        }
        let eig = symmetric_eigen(entries.clone())?;
        let min = eig.eigenvalues.min();
        if min < floor - EIGEN_TOLERANCE {
            return Err(Error::NotPositiveDefinite {
                floor,
                reason: format!("minimum eigenvalue {min}"),
            });
        }
        Ok(Self {
            entries,
            floor,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn condition_number(&self) -> f64 {
        self.eigenvalues.max() / self.eigenvalues.min()
    }

    /// Solves `A x = b` through the stored eigendecomposition.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let v = &self.eigenvectors;
        let mut coeffs = v.tr_mul(b);
        coeffs.component_div_assign(&self.eigenvalues);
        v * coeffs
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut coeffs = v.tr_mul(b);
        for (mut row, lambda) in coeffs.row_iter_mut().zip(self.eigenvalues.iter()) {
            row /= *lambda;
        }
        v * coeffs
    }

    /// The symmetric square root `V diag(sqrt(λ)) Vᵀ`.
    pub fn sqrt(&self) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
            v[(i, j)] * self.eigenvalues[j].sqrt()
        });
        let s = scaled * v.transpose();
        (&s + s.transpose()) * 0.5
    }
}

/// Symmetrizes `m`, clamps its eigenvalues at `floor`, and rebuilds
/// `V diag(λ) Vᵀ`.
pub fn project_spd(m: &DMatrix<f64>, floor: f64) -> Result<SpdMatrix> {
    check_square_finite(m)?;
    if !(floor.is_finite() && floor > 0.0) {
        return Err(invalid("floor", format!("must be positive, got {floor}")));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = symmetric_eigen(sym)?;
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * clamped[j]);
    let rebuilt = scaled * v.transpose();
    let entries = (&rebuilt + rebuilt.transpose()) * 0.5;
    Ok(SpdMatrix {
        entries,
        floor,
        eigenvalues: clamped,
        eigenvectors: eig.eigenvectors,
    })
}

/// Noise calibration used by [`priv_spd_mat`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatrixNoise {
    /// Spherical Laplace over the d² entries with rate `gamma`.
    Laplace { gamma: f64 },
    /// Independent Gaussian noise with this variance on each entry.
    Gaussian { sigma2: f64 },
}

impl MatrixNoise {
    pub fn calibrate(sens: f64, phi: PrivacyBudget) -> Result<Self> {
        if !(sens.is_finite() && sens > 0.0) {
            return Err(invalid("sens", format!("must be positive, got {sens}")));
        }
        Ok(match phi.kind() {
            PrivacyKind::PureDP => Self::Laplace {
                gamma: phi.value() / sens,
            },
            PrivacyKind::ZCDP => Self::Gaussian {
                sigma2: sens * sens / (2.0 * phi.value()),
            },
        })
    }
}

/// Releases `m` under `phi` given its L2 sensitivity, then projects the
/// noisy matrix onto symmetric matrices with eigenvalues at least `2c`.
pub fn priv_spd_mat(
    m: &DMatrix<f64>,
    sens: f64,
    phi: PrivacyBudget,
    c: f64,
    noise: &mut impl NoiseSource,
) -> Result<SpdMatrix> {
    check_square_finite(m)?;
    if !(c.is_finite() && c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    let d = m.nrows();
    let eta = match MatrixNoise::calibrate(sens, phi)? {
        MatrixNoise::Laplace { gamma } => sample_spherical_laplace(d * d, gamma, noise)?,
        MatrixNoise::Gaussian { sigma2 } => sample_gaussian_iso(d * d, sigma2, noise)?,
    };
    // rows of the matrix are stacked in the noise vector
    let noisy = m + DMatrix::from_row_slice(d, d, eta.as_slice());
    project_spd(&noisy, 2.0 * c)
}
