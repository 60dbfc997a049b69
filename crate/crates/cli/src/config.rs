//! Run configuration: a flat TOML key = value file overlaid by command-line
//! flags, resolved into a fully specified [`RunConfig`].

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use dperm::{
    BudgetSplit, EvalConfig, IntervalMethod, LabelModel, LossModel, ParamVector, Perturbation, PrivacyBudget,
    Solver, SynthSpec, TrainConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Train,
    Ci,
    Evaluate,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Logistic,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MechanismName {
    Obj,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyName {
    Dp,
    Zcdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    McDp,
    ZcdpClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Logistic,
    Margin,
}

/// Every setting, all optional. Deserialized from the config file and
/// parsed from flags; flags take precedence.
#[derive(Debug, Clone, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Subcommand recorded in an echoed config; the invoked subcommand wins.
    #[arg(skip)]
    pub command: Option<Command>,
    /// Dataset CSV: the processed format, or raw data when --schema is set.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// JSON column schema for a raw input CSV.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Output path; JSON artifacts go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit JSON written by `train` (for `ci`).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossName>,
    /// Huber bandwidth.
    #[arg(long)]
    pub h: Option<f64>,
    /// Regularization coefficient.
    #[arg(long)]
    pub c: Option<f64>,
    /// Solver tolerance on the gradient norm.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismName>,
    #[arg(long, value_enum)]
    pub privacy: Option<PrivacyName>,
    /// Budget for the parameter estimate.
    #[arg(long)]
    pub phi1: Option<f64>,
    /// Budget for the Hessian.
    #[arg(long)]
    pub phi2: Option<f64>,
    /// Budget for the score covariance.
    #[arg(long)]
    pub phi3: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Monte Carlo samples per interval.
    #[arg(long)]
    pub m: Option<usize>,
    /// Coverage replicates.
    #[arg(long)]
    pub k: Option<usize>,
    /// Variability replicates.
    #[arg(long)]
    pub mvi: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Interval method; defaults to the one matching the fit's mechanism.
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    /// Synthetic record count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic feature count, before the constant feature.
    #[arg(long)]
    pub d: Option<usize>,
    /// Synthetic ground truth, d + 1 comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta_star: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    /// Also write a plot-data CSV row for this evaluation.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// x value for the plot-data row; defaults to phi1.
    #[arg(long)]
    pub plot_x: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        Settings { $($field: $top.$field.or($base.$field)),* }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        let base = self;
        overlay!(
            base, top, command, input, schema, out, fit, loss, h, c, tol, max_iter, mechanism, privacy, phi1,
            phi2, phi3, alpha, m, k, mvi, seed, workers, method, n, d, theta_star, model, plot_data, plot_x
        )
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<PathBuf>,
    pub loss: LossName,
    pub h: f64,
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub mechanism: MechanismName,
    pub privacy: PrivacyName,
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub alpha: f64,
    pub m: usize,
    pub k: usize,
    pub mvi: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodName>,
    pub n: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_star: Option<Vec<f64>>,
    pub model: ModelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_x: Option<f64>,
}

fn bad(field: &str, reason: &str) -> CliError {
    CliError::Config(format!("`{field}` {reason}"))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(field, &format!("must be positive, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(field, &format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    /// Fills defaults and validates. Returns the config and whether the seed
    /// came from `entropy`.
    pub fn resolve(command: Command, s: Settings, entropy: impl FnOnce() -> u64) -> Result<(Self, bool), CliError> {
        let privacy = s.privacy.unwrap_or(PrivacyName::Dp);
        // zCDP defaults are the pure-DP ones under ρ = ε²/2
        let (d1, d23) = match privacy {
            PrivacyName::Dp => (0.5, 0.25),
            PrivacyName::Zcdp => (0.125, 0.03125),
        };
        let drew_seed = s.seed.is_none();
        let cfg = Self {
            command,
            input: s.input,
            schema: s.schema,
            out: s.out,
            fit: s.fit,
            loss: s.loss.unwrap_or(LossName::Logistic),
            h: s.h.unwrap_or(dperm::losses::DEFAULT_HUBER_H),
            c: s.c.unwrap_or(0.001),
            tol: s.tol.unwrap_or(1e-8),
            max_iter: s.max_iter.unwrap_or(200),
            mechanism: s.mechanism.unwrap_or(MechanismName::Output),
            privacy,
            phi1: s.phi1.unwrap_or(d1),
            phi2: s.phi2.unwrap_or(d23),
            phi3: s.phi3.unwrap_or(d23),
            alpha: s.alpha.unwrap_or(0.05),
            m: s.m.unwrap_or(2000),
            k: s.k.unwrap_or(200),
            mvi: s.mvi.unwrap_or(1000),
            seed: s.seed.unwrap_or_else(entropy),
            workers: s.workers.unwrap_or(1),
            method: s.method,
            n: s.n.unwrap_or(1000),
            d: s.d.unwrap_or(5),
            theta_star: s.theta_star,
            model: s.model.unwrap_or(ModelName::Logistic),
            plot_data: s.plot_data,
            plot_x: s.plot_x,
        };
        cfg.validate()?;
        Ok((cfg, drew_seed))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let need = |field: &str, p: &Option<PathBuf>| match p {
            Some(p) if !p.as_os_str().is_empty() => Ok(()),
            _ => Err(bad(field, &format!("is required for {:?}", self.command).to_lowercase())),
        };
        match self.command {
            Command::Train | Command::Evaluate => need("input", &self.input)?,
            Command::Ci => {
                need("input", &self.input)?;
                need("fit", &self.fit)?;
            }
            Command::Synth => need("out", &self.out)?,
        }
        positive("phi1", self.phi1)?;
        positive("phi2", self.phi2)?;
        positive("phi3", self.phi3)?;
        positive("h", self.h)?;
        positive("c", self.c)?;
        positive("tol", self.tol)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", &format!("must lie in (0, 1), got {}", self.alpha)));
        }
        at_least("max_iter", self.max_iter, 1)?;
        at_least("m", self.m, dperm::intervals::MIN_MC_SAMPLES)?;
        at_least("k", self.k, 1)?;
        at_least("mvi", self.mvi, 1)?;
        at_least("workers", self.workers, 1)?;
        at_least("n", self.n, 1)?;
        at_least("d", self.d, 1)?;
        // config files store integers as signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(bad("seed", &format!("must be at most {}", i64::MAX)));
        }
        if let Some(t) = &self.theta_star {
            if t.len() != self.d + 1 {
                return Err(bad("theta_star", &format!("must have d + 1 = {} entries, got {}", self.d + 1, t.len())));
            }
            if t.iter().all(|v| *v == 0.0) || t.iter().any(|v| !v.is_finite()) {
                return Err(bad("theta_star", "must be finite and nonzero"));
            }
        }
        Ok(())
    }

    pub fn loss_model(&self) -> LossModel {
        match self.loss {
            LossName::Logistic => LossModel::Logistic,
            LossName::Huber => LossModel::HuberSvm { h: self.h },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            c: self.c,
            tol: self.tol,
            max_iter: self.max_iter,
            solver: Solver::Newton,
        }
    }

    pub fn perturbation(&self) -> Perturbation {
        match self.mechanism {
            MechanismName::Obj => Perturbation::Objective,
            MechanismName::Output => Perturbation::Output,
        }
    }

    fn budget(&self, field: &str, v: f64) -> Result<PrivacyBudget, CliError> {
        match self.privacy {
            PrivacyName::Dp => PrivacyBudget::pure_dp(v),
            PrivacyName::Zcdp => PrivacyBudget::zcdp(v),
        }
        .map_err(|e| bad(field, &e.to_string()))
    }

    pub fn budget_split(&self) -> Result<BudgetSplit, CliError> {
        Ok(BudgetSplit::new(
            self.budget("phi1", self.phi1)?,
            self.budget("phi2", self.phi2)?,
            self.budget("phi3", self.phi3)?,
        )?)
    }

    pub fn interval_method(&self) -> Option<IntervalMethod> {
        self.method.map(|m| match m {
            MethodName::McDp => IntervalMethod::MonteCarloDP,
            MethodName::ZcdpClosed => IntervalMethod::ClosedFormZCDP,
        })
    }

    pub fn eval_config(&self) -> Result<EvalConfig, CliError> {
        Ok(EvalConfig {
            k: self.k,
            m_vi: self.mvi,
            alpha: self.alpha,
            seed: self.seed,
            budget_split: self.budget_split()?,
            perturbation: self.perturbation(),
            loss: self.loss_model(),
            train: self.train_config(),
            mc_samples: self.m,
            workers: self.workers,
        })
    }

    pub fn synth_spec(&self) -> Result<SynthSpec, CliError> {
        let theta = self.theta_star.clone().unwrap_or_else(|| vec![1.0; self.d + 1]);
        Ok(SynthSpec {
            n: self.n,
            d: self.d,
            theta_star: ParamVector::from_slice(&theta)?,
            model: match self.model {
                ModelName::Logistic => LabelModel::LogisticGen,
                ModelName::Margin => LabelModel::MarginGen,
            },
            seed: self.seed,
        })
    }
}
