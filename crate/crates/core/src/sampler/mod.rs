//! Gibbs sampler for `(beta, sigma2, rho, Omega)`.
//!
//! Each iteration draws `beta`, `sigma2` and `rho` from their full
//! conditionals and then sweeps over every free adjacency indicator in random
//! order. Flips that would make `det(I - rho W)` non-positive, or that leave
//! `diag(W^2)` proportional to ones, are rejected and counted. A second pass
//! of Metropolis-Hastings moves then proposes each flip together with a
//! matching shift of the unit effects, which lets the chain drop links that
//! the unit effects had absorbed.

mod gibbs;
mod identification;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use gibbs::{
    ChainState, EntryConditional, EntryOutcome, GaussianConditional, Gibbs, Rejection, RhoGrid,
    ShiftStats, SweepStats,
};
pub use identification::{diag_w_squared, identification_check};

use crate::error::{Error, Result};
use crate::linalg::DEFAULT_REFRESH_INTERVAL;
use crate::model::{AdjacencyMatrix, ModelSpec, PanelData};
use crate::priors::{OmegaPriorFamily, Priors};

/// Starting point for `Omega`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaInit {
    /// No links apart from hard inclusions, so `det(A) = 1`.
    #[default]
    Empty,
    /// A draw from the adjacency prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_draws: usize,
    pub n_burnin: usize,
    pub rho_grid_size: usize,
    pub seed: u64,
    pub refresh_interval: usize,
    pub thin: usize,
    /// Use `b + e'e / 2` as the inverse-gamma rate of `sigma2`; `false` gives
    /// `b + e'e`.
    pub residual_half_factor: bool,
    pub omega_init: OmegaInit,
    /// `false` drops the likelihood from every conditional, so the chain
    /// samples the prior.
    pub likelihood: bool,
    pub identification: bool,
    /// Keep every retained `Omega`, not just the inclusion counts.
    pub keep_omega_draws: bool,
    /// Follow each sweep with a pass of joint link and unit-effect moves
    /// (see [`Gibbs::shift_move`]). Skipped when the design has no unit
    /// dummies or the likelihood is off.
    pub shift_moves: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_draws: 5000,
            n_burnin: 2500,
            rho_grid_size: 200,
            seed: 0,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
            thin: 1,
            residual_half_factor: true,
            omega_init: OmegaInit::Empty,
            likelihood: true,
            identification: true,
            keep_omega_draws: false,
            shift_moves: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho_grid_size < 10 {
            return Err(Error::config("sampler.grid", "needs at least 10 points"));
        }
        if self.refresh_interval == 0 {
            return Err(Error::config("sampler.refresh_interval", "must be positive"));
        }
        if self.thin == 0 {
            return Err(Error::config("sampler.thin", "must be positive"));
        }
        Ok(())
    }
}

/// Rejections and flips accumulated over the whole chain, burn-in included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub sweeps: usize,
    pub visits: usize,
    pub flips: usize,
    pub determinant_rejections: usize,
    pub identification_rejections: usize,
    pub shift_proposals: usize,
    pub shifts_accepted: usize,
}

impl ChainDiagnostics {
    fn add(&mut self, s: &SweepStats) {
        self.sweeps += 1;
        self.visits += s.visits;
        self.flips += s.flips;
        self.determinant_rejections += s.determinant_rejections;
        self.identification_rejections += s.identification_rejections;
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub beta_draws: Vec<DVector<f64>>,
    pub sigma2_draws: Vec<f64>,
    pub rho_draws: Vec<f64>,
    /// Number of retained draws with `omega_ij = 1`.
    pub inclusion_counts: DMatrix<u64>,
    pub omega_last: AdjacencyMatrix,
    pub draw_count: usize,
    /// Filled only with [`SamplerConfig::keep_omega_draws`].
    pub omega_draws: Vec<AdjacencyMatrix>,
    pub diagnostics: ChainDiagnostics,
}

impl ChainOutput {
    pub fn n(&self) -> usize {
        self.omega_last.n()
    }

    /// Posterior inclusion probabilities `count / draws`.
    pub fn inclusion_probabilities(&self) -> Result<DMatrix<f64>> {
        if self.draw_count == 0 {
            return Err(Error::EmptyChain);
        }
        let d = self.draw_count as f64;
        Ok(self.inclusion_counts.map(|c| c as f64 / d))
    }

    pub fn beta_mean(&self) -> Result<DVector<f64>> {
        let first = self.beta_draws.first().ok_or(Error::EmptyChain)?;
        let sum = self
            .beta_draws
            .iter()
            .fold(DVector::zeros(first.len()), |acc, b| acc + b);
        Ok(sum / self.beta_draws.len() as f64)
    }

    pub fn rho_mean(&self) -> Result<f64> {
        mean(&self.rho_draws)
    }

    pub fn sigma2_mean(&self) -> Result<f64> {
        mean(&self.sigma2_draws)
    }
}

fn mean(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyChain);
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Mixes a master seed with stream indices (replication, cell, variant) into
/// an independent 64-bit seed.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for (k, &s) in stream.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(s.wrapping_add((k as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F))));
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Prior draws of `sigma2` can over- or underflow under vague shapes.
const SIGMA2_INIT_RANGE: (f64, f64) = (1e-4, 1e4);

fn prior_beta<R: Rng + ?Sized>(priors: &Priors, rng: &mut R) -> DVector<f64> {
    let v = &priors.params.beta_variance;
    DVector::from_iterator(
        v.len(),
        v.iter().map(|&var| {
            Normal::new(0.0, var.sqrt())
                .expect("prior variance validated")
                .sample(rng)
        }),
    )
}

fn prior_sigma2<R: Rng + ?Sized>(priors: &Priors, rng: &mut R) -> Result<f64> {
    let p = &priors.params;
    let s2 = gibbs::inverse_gamma(p.sigma2_shape, p.sigma2_rate, rng)?;
    let s2 = if s2.is_nan() { 1.0 } else { s2 };
    Ok(s2.clamp(SIGMA2_INIT_RANGE.0, SIGMA2_INIT_RANGE.1))
}

fn prior_rho<R: Rng + ?Sized>(priors: &Priors, rng: &mut R) -> Result<f64> {
    let p = &priors.params;
    let beta = Beta::new(p.rho_shape1, p.rho_shape2)
        .map_err(|e| Error::NumericalFailure(format!("rho prior: {e}")))?;
    // Keep the draw strictly inside (0, 1).
    Ok(beta.sample(rng).clamp(1e-12, 1.0 - 1e-12))
}

fn hard_includes(priors: &Priors, symmetric: bool) -> AdjacencyMatrix {
    let n = priors.omega.n();
    let mut omega = AdjacencyMatrix::empty(n, symmetric);
    for i in 0..n {
        for j in 0..n {
            if priors.omega.mask(i, j) == Some(true) {
                omega.set(i, j, true);
            }
        }
    }
    omega
}

fn prior_omega<R: Rng + ?Sized>(priors: &Priors, symmetric: bool, rng: &mut R) -> AdjacencyMatrix {
    let prior = &priors.omega;
    let n = prior.n();
    let mut omega = hard_includes(priors, symmetric);
    for i in 0..n {
        let row_p = match prior.family() {
            OmegaPriorFamily::Sparsity => Some(
                Beta::new(prior.a_omega(), prior.b_omega())
                    .expect("sparsity hyperparameters validated")
                    .sample(rng),
            ),
            OmegaPriorFamily::Fixed => None,
        };
        for j in 0..n {
            if i == j || (symmetric && j < i) || prior.mask(i, j).is_some() {
                continue;
            }
            let p = row_p.unwrap_or_else(|| prior.inclusion_probabilities()[(i, j)]);
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                omega.set(i, j, true);
            }
        }
    }
    omega
}

/// Runs one chain: `n_burnin` discarded iterations, then `n_draws` retained
/// draws, each `thin` iterations apart.
pub fn run_chain(
    data: &PanelData,
    spec: &ModelSpec,
    priors: &Priors,
    config: &SamplerConfig,
) -> Result<ChainOutput> {
    let gibbs = Gibbs::new(data, spec, priors, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = data.n();

    let beta = prior_beta(priors, &mut rng);
    let sigma2 = prior_sigma2(priors, &mut rng)?;
    let rho = prior_rho(priors, &mut rng)?;
    let empty = hard_includes(priors, spec.symmetric_omega);
    let mut st = match config.omega_init {
        OmegaInit::Empty => gibbs.state(beta, sigma2, rho, empty)?,
        OmegaInit::Prior => {
            let omega = prior_omega(priors, spec.symmetric_omega, &mut rng);
            let admissible = !config.identification
                || identification_check(&omega, spec.row_standardize, true);
            match admissible
                .then(|| gibbs.state(beta.clone(), sigma2, rho, omega))
                .and_then(|r| r.ok())
            {
                Some(st) => st,
                None => gibbs.state(beta, sigma2, rho, empty)?,
            }
        }
    };

    let mut out = ChainOutput {
        beta_draws: Vec::with_capacity(config.n_draws),
        sigma2_draws: Vec::with_capacity(config.n_draws),
        rho_draws: Vec::with_capacity(config.n_draws),
        inclusion_counts: DMatrix::zeros(n, n),
        omega_last: st.omega().clone(),
        draw_count: 0,
        omega_draws: Vec::new(),
        diagnostics: ChainDiagnostics::default(),
    };

    let shifts = config.shift_moves && config.likelihood && gibbs.has_unit_effects();
    let total = config.n_burnin + config.n_draws * config.thin;
    for iter in 0..total {
        if config.likelihood {
            gibbs.sample_beta(&mut st, &mut rng)?;
            gibbs.sample_sigma2(&mut st, &mut rng)?;
            gibbs.sample_rho(&mut st, &mut rng)?;
        } else {
            let beta = prior_beta(priors, &mut rng);
            gibbs.set_beta(&mut st, beta);
            let s2 = prior_sigma2(priors, &mut rng)?;
            gibbs.set_sigma2(&mut st, s2)?;
            gibbs.sample_rho(&mut st, &mut rng)?;
        }
        let stats = gibbs.sweep_omega(&mut st, &mut rng)?;
        out.diagnostics.add(&stats);
        if shifts {
            let s = gibbs.sweep_shifts(&mut st, &mut rng)?;
            out.diagnostics.shift_proposals += s.proposals;
            out.diagnostics.shifts_accepted += s.accepted;
        }

        let kept = iter + 1 - config.n_burnin.min(iter + 1);
        if iter >= config.n_burnin && kept % config.thin == 0 {
            out.beta_draws.push(st.beta().clone());
            out.sigma2_draws.push(st.sigma2());
            out.rho_draws.push(st.rho());
            let omega = st.omega();
            for i in 0..n {
                for (j, &v) in omega.row(i).iter().enumerate() {
                    out.inclusion_counts[(i, j)] += v as u64;
                }
            }
            if config.keep_omega_draws {
                out.omega_draws.push(omega.clone());
            }
            out.draw_count += 1;
        }
    }
    out.omega_last = st.omega().clone();
    Ok(out)
}
