//! Differentially private empirical risk minimization with private
//! confidence intervals for the model parameters.
//!
//! Models (logistic regression and a Huberized SVM) are trained by objective
//! or output perturbation under pure ε-DP or ρ-zCDP. Intervals combine a
//! privately released Hessian and score covariance with the known privacy
//! noise distribution; the [`evaluation`] module measures their coverage and
//! length with a bootstrap harness.

pub mod error;
pub mod erm;
pub mod evaluation;
pub mod intervals;
pub mod losses;
pub mod mechanisms;
pub mod preprocess;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
pub use erm::{solve_erm, train_objective_perturbation, train_output_perturbation, Solver, TrainConfig};
pub use evaluation::{evaluate, EvalConfig, EvalReport};
pub use intervals::{fit_with_intervals, AsymptoticPieces, CiSpec, Perturbation};
pub use losses::LossModel;
pub use mechanisms::{NoiseSource, RngStream, SpdMatrix, ZeroNoise};
pub use preprocess::{ColumnSchema, Schema};
pub use synthetic::{LabelModel, SynthSpec};
pub use types::{
    BudgetSplit, Dataset, IntervalMethod, IntervalSet, Mechanism, ParamVector, PrivacyBudget,
    PrivacyKind, PrivateFit, Record,
};
