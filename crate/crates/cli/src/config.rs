//! The JSON run configuration.
//!
//! ```json
//! {
//!   "model":   { "r": 0, "row_standardize": true, "symmetric": false, "fixed_effects": "both" },
//!   "priors":  { "family": "sparsity", "m": 7 },
//!   "sampler": { "draws": 5000, "burnin": 2500, "grid": 200, "seed": 1 },
//!   "io":      { "panel": "panel.csv", "out_dir": "results" }
//! }
//! ```
//!
//! Every block and field is optional. `dgp` and `mc` blocks configure
//! `simulate` and `mc-study`.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use sarw::dgp::DgpConfig;
use sarw::model::ModelSpec;
use sarw::montecarlo::McConfig;
use sarw::priors::{anchor_sparsity, OmegaPrior, OmegaPriorFamily, ParamPriors, Priors};
use sarw::sampler::{OmegaInit, SamplerConfig};
use sarw::{Error, Result};

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub priors: PriorsBlock,
    pub sampler: SamplerBlock,
    pub io: IoBlock,
    pub dgp: DgpConfig,
    pub mc: McConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixedEffects {
    #[default]
    Both,
    Unit,
    Time,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    /// Lag offset of the spatial term, 0 for contemporaneous.
    pub r: i64,
    pub row_standardize: bool,
    pub symmetric: bool,
    pub fixed_effects: FixedEffects,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            r: 0,
            row_standardize: true,
            symmetric: false,
            fixed_effects: FixedEffects::Both,
        }
    }
}

impl ModelBlock {
    pub fn spec(&self) -> Result<ModelSpec> {
        if self.r < 0 {
            return Err(invalid("model.r", "must be nonnegative"));
        }
        let fe = self.fixed_effects;
        Ok(ModelSpec {
            lag_offset: self.r as usize,
            row_standardize: self.row_standardize,
            symmetric_omega: self.symmetric,
            unit_fixed_effects: matches!(fe, FixedEffects::Both | FixedEffects::Unit),
            time_fixed_effects: matches!(fe, FixedEffects::Both | FixedEffects::Time),
        })
    }
}

/// A prior inclusion probability for every entry, or one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inclusion {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorsBlock {
    pub family: OmegaPriorFamily,
    /// Fixed family: inclusion probabilities. Either family: entries equal
    /// to 0 or 1 are pinned.
    pub p: Option<Inclusion>,
    /// Sparsity family: prior expected neighbours per row. Overrides
    /// `a_omega` and `b_omega`.
    pub m: Option<f64>,
    pub a_omega: f64,
    pub b_omega: f64,
    pub beta_variance: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub rho_shape1: f64,
    pub rho_shape2: f64,
}

impl Default for PriorsBlock {
    fn default() -> Self {
        let vague = ParamPriors::vague(0);
        PriorsBlock {
            family: OmegaPriorFamily::Sparsity,
            p: None,
            m: None,
            a_omega: 1.0,
            b_omega: 1.0,
            beta_variance: 100.0,
            sigma2_shape: vague.sigma2_shape,
            sigma2_rate: vague.sigma2_rate,
            rho_shape1: vague.rho_shape1,
            rho_shape2: vague.rho_shape2,
        }
    }
}

fn inclusion_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(invalid("priors.p", format!("must be a {n} x {n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl PriorsBlock {
    pub fn build(&self, n: usize, q: usize) -> Result<Priors> {
        let omega = match self.family {
            OmegaPriorFamily::Fixed => match &self.p {
                None => OmegaPrior::fixed(n, 0.5)?,
                Some(Inclusion::Scalar(p)) => OmegaPrior::fixed(n, *p)?,
                Some(Inclusion::Matrix(rows)) => OmegaPrior::fixed_matrix(inclusion_matrix(rows, n)?)?,
            },
            OmegaPriorFamily::Sparsity => {
                let prior = match self.m {
                    Some(m) => anchor_sparsity(m, n)?,
                    None => OmegaPrior::sparsity(n, self.a_omega, self.b_omega)?,
                };
                match &self.p {
                    None => prior,
                    Some(Inclusion::Scalar(_)) => {
                        return Err(invalid("priors.p", "the sparsity family takes a mask matrix only"))
                    }
                    Some(Inclusion::Matrix(rows)) => prior.with_inclusion(inclusion_matrix(rows, n)?)?,
                }
            }
        };
        let mut params = ParamPriors::vague(q);
        params.beta_variance.fill(self.beta_variance);
        params.sigma2_shape = self.sigma2_shape;
        params.sigma2_rate = self.sigma2_rate;
        params.rho_shape1 = self.rho_shape1;
        params.rho_shape2 = self.rho_shape2;
        Priors::new(omega, params)
    }
}

/// Counts are signed so that negative values reach validation instead of
/// failing to parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerBlock {
    pub draws: i64,
    pub burnin: i64,
    pub grid: i64,
    pub seed: u64,
    pub refresh_interval: i64,
    pub thin: i64,
    pub residual_half_factor: bool,
    pub omega_init: OmegaInit,
    pub shift_moves: bool,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerBlock {
            draws: d.n_draws as i64,
            burnin: d.n_burnin as i64,
            grid: d.rho_grid_size as i64,
            seed: d.seed,
            refresh_interval: d.refresh_interval as i64,
            thin: d.thin as i64,
            residual_half_factor: d.residual_half_factor,
            omega_init: d.omega_init,
            shift_moves: d.shift_moves,
        }
    }
}

fn count(field: &str, v: i64) -> Result<usize> {
    usize::try_from(v).map_err(|_| invalid(field, format!("must be nonnegative, got {v}")))
}

impl SamplerBlock {
    pub fn config(&self) -> Result<SamplerConfig> {
        let config = SamplerConfig {
            n_draws: count("sampler.draws", self.draws)?,
            n_burnin: count("sampler.burnin", self.burnin)?,
            rho_grid_size: count("sampler.grid", self.grid)?,
            seed: self.seed,
            refresh_interval: count("sampler.refresh_interval", self.refresh_interval)?,
            thin: count("sampler.thin", self.thin)?,
            residual_half_factor: self.residual_half_factor,
            omega_init: self.omega_init,
            shift_moves: self.shift_moves,
            ..SamplerConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    pub panel: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub inclusion: Option<PathBuf>,
    /// One unit label per line; reorders heatmap rows and columns.
    pub ordering: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks the blocks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.model.spec()?;
        self.sampler.config()?;
        Ok(())
    }
}
