//! Monte Carlo study: simulate panels for a grid of `(N, T, rho)` cells,
//! estimate each with several adjacency priors and summarize recovery.
//!
//! Every replication of a cell draws one panel that all variants share.
//! Exogenous baselines estimate the model with a perturbed copy of the true
//! adjacency held fixed, so their accuracy is the overlap with the truth.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{
    dgp_model_spec, generate_knn_adjacency, generate_panel, overlap, perturb_adjacency, DgpConfig,
    SimulatedPanel, Symmetrize,
};
use crate::error::{Error, Result};
use crate::metrics::{chain_accuracy, rmse, FreeMask, McResult, ReplicationRecord};
use crate::priors::{anchor_sparsity, OmegaPrior, ParamPriors, Priors};
use crate::sampler::{derive_seed, run_chain, SamplerConfig};

/// Share of failed replications above which a cell is reported as missing.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub n: usize,
    pub t: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PriorVariant {
    /// Bernoulli(`p`) on every entry.
    Fixed { p: f64, symmetric: bool },
    /// Sparsity prior with `a = b = 1`: uniform row counts.
    Uniform { symmetric: bool },
    /// Sparsity prior anchored at `m = fraction * N` expected neighbours.
    Anchored { fraction: f64, symmetric: bool },
}

impl PriorVariant {
    pub fn symmetric(&self) -> bool {
        match *self {
            PriorVariant::Fixed { symmetric, .. }
            | PriorVariant::Uniform { symmetric }
            | PriorVariant::Anchored { symmetric, .. } => symmetric,
        }
    }

    pub fn label(&self) -> String {
        let side = if self.symmetric() { "sym" } else { "nonsym" };
        match *self {
            PriorVariant::Fixed { p, .. } => format!("{side}_fixed_p{p}"),
            PriorVariant::Uniform { .. } => format!("{side}_sparsity_uniform"),
            PriorVariant::Anchored { fraction, .. } => format!("{side}_sparsity_m{fraction}n"),
        }
    }

    pub fn prior(&self, n: usize) -> Result<OmegaPrior> {
        match *self {
            PriorVariant::Fixed { p, .. } => OmegaPrior::fixed(n, p),
            PriorVariant::Uniform { .. } => OmegaPrior::sparsity(n, 1.0, 1.0),
            PriorVariant::Anchored { fraction, .. } => anchor_sparsity(fraction * n as f64, n),
        }
    }
}

/// A column of the study table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Column {
    Prior(PriorVariant),
    /// Truth with this fraction of elements flipped, held fixed.
    Exogenous(f64),
}

impl Column {
    pub fn label(&self) -> String {
        match self {
            Column::Prior(v) => v.label(),
            Column::Exogenous(f) => format!("exogenous_{}", 1.0 - f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub cells: Vec<McCell>,
    pub replications: usize,
    pub variants: Vec<PriorVariant>,
    pub perturb_fractions: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub sigma2_true: f64,
    pub k_neighbours: Option<usize>,
    pub symmetrize: Symmetrize,
    /// Chain settings; the seed is replaced per replication.
    pub sampler: SamplerConfig,
    pub seed: u64,
    /// Worker count, `None` for all cores.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        let mut variants = Vec::new();
        for symmetric in [false, true] {
            variants.push(PriorVariant::Fixed { p: 0.5, symmetric });
            variants.push(PriorVariant::Uniform { symmetric });
            variants.push(PriorVariant::Anchored {
                fraction: 0.1,
                symmetric,
            });
        }
        McConfig {
            cells: vec![McCell {
                n: 20,
                t: 40,
                rho: 0.8,
            }],
            replications: 10,
            variants,
            perturb_fractions: vec![0.01, 0.05],
            beta_true: vec![-1.0, 1.0],
            sigma2_true: 0.5,
            k_neighbours: None,
            symmetrize: Symmetrize::Union,
            sampler: SamplerConfig {
                n_draws: 500,
                n_burnin: 500,
                ..SamplerConfig::default()
            },
            seed: 0,
            threads: None,
        }
    }
}

impl McConfig {
    pub fn columns(&self) -> Vec<Column> {
        let mut cols: Vec<Column> = self.variants.iter().copied().map(Column::Prior).collect();
        cols.extend(self.perturb_fractions.iter().copied().map(Column::Exogenous));
        cols
    }

    fn dgp(&self, cell: &McCell) -> DgpConfig {
        DgpConfig {
            n: cell.n,
            t: cell.t,
            rho_true: cell.rho,
            beta_true: self.beta_true.clone(),
            sigma2_true: self.sigma2_true,
            k_neighbours: self.k_neighbours,
            symmetrize: self.symmetrize,
            perturb_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::config("mc.cells", "needs at least one cell"));
        }
        if self.replications == 0 {
            return Err(Error::config("mc.replications", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("mc.threads", "must be positive"));
        }
        for cell in &self.cells {
            self.dgp(cell).validate()?;
            for v in &self.variants {
                v.prior(cell.n)?;
            }
        }
        for &f in &self.perturb_fractions {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config("mc.perturb_fractions", "must lie in [0, 1)"));
            }
        }
        self.sampler.validate()
    }
}

/// Result of one cell and column; `None` when too many replications failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnResult {
    pub label: String,
    pub result: Option<McResult>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: McCell,
    pub columns: Vec<ColumnResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McStudy {
    pub cells: Vec<CellResult>,
}

/// Panel of replication `rep` in cell `cell`, shared by every column.
pub fn replication_panel(config: &McConfig, cell: usize, rep: usize) -> Result<SimulatedPanel> {
    let dgp = config.dgp(&config.cells[cell]);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[cell as u64, rep as u64, 0]));
    let omega = generate_knn_adjacency(&dgp, &mut rng)?;
    generate_panel(&dgp, &omega, &mut rng)
}

fn run_replication(config: &McConfig, cell: usize, rep: usize, col: usize, column: &Column) -> Result<ReplicationRecord> {
    let sim = replication_panel(config, cell, rep)?;
    let n = sim.data.n();
    let stream = [cell as u64, rep as u64, col as u64 + 1];
    let (prior, symmetric, exogenous) = match *column {
        Column::Prior(v) => (v.prior(n)?, v.symmetric(), None),
        Column::Exogenous(f) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[stream[0], stream[1], stream[2], 1]));
            let w = perturb_adjacency(&sim.omega_true, f, &mut rng)?;
            (OmegaPrior::fixed_matrix(w.to_f64())?, w.is_symmetric(), Some(w))
        }
    };
    let spec = dgp_model_spec(symmetric);
    let priors = Priors::new(prior, ParamPriors::vague(sim.data.q()))?;
    let sampler = SamplerConfig {
        seed: derive_seed(config.seed, &stream),
        ..config.sampler.clone()
    };
    let chain = run_chain(&sim.data, &spec, &priors, &sampler)?;
    let beta_hat: DVector<f64> = chain.beta_mean()?;
    let accuracy = match &exogenous {
        Some(w) => overlap(w, &sim.omega_true)?,
        None => chain_accuracy(&chain, &sim.omega_true, &FreeMask::from_prior(&priors.omega))?,
    };
    Ok(ReplicationRecord {
        replication: rep,
        rmse_beta: rmse(beta_hat.as_slice(), sim.beta_true.as_slice())?,
        rmse_rho: (chain.rho_mean()? - sim.rho_true).abs(),
        accuracy,
    })
}

/// Runs every cell, column and replication on a worker pool. Results do not
/// depend on the number of workers.
pub fn run_study(config: &McConfig) -> Result<McStudy> {
    config.validate()?;
    let columns = config.columns();
    let tasks: Vec<(usize, usize, usize)> = (0..config.cells.len())
        .flat_map(|c| (0..columns.len()).flat_map(move |k| (0..config.replications).map(move |r| (c, k, r))))
        .collect();
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .min(tasks.len())
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::NumericalFailure(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<ReplicationRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, k, r)| run_replication(config, c, r, k, &columns[k]))
            .collect()
    });

    let mut outcomes = outcomes.into_iter();
    let mut cells = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        let mut results = Vec::with_capacity(columns.len());
        for column in &columns {
            let mut records = Vec::new();
            let mut failures = 0;
            for _ in 0..config.replications {
                match outcomes.next().expect("one outcome per task") {
                    Ok(rec) => records.push(rec),
                    Err(_) => failures += 1,
                }
            }
            let aborted = failures as f64 > MAX_FAILURE_SHARE * config.replications as f64;
            let result = if aborted { None } else { McResult::from_records(records).ok() };
            results.push(ColumnResult {
                label: column.label(),
                result,
                failures,
            });
        }
        cells.push(CellResult {
            cell: *cell,
            columns: results,
        });
    }
    Ok(McStudy { cells })
}

impl McStudy {
    /// One row per cell: `n,t,rho`, then the blocks `rmse_beta`, `rmse_rho`,
    /// `accuracy` and `failures`, each with one column per variant. Missing
    /// cells read `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,t,rho");
        let labels: Vec<&str> = self
            .cells
            .first()
            .map(|c| c.columns.iter().map(|col| col.label.as_str()).collect())
            .unwrap_or_default();
        for block in ["rmse_beta", "rmse_rho", "accuracy", "failures"] {
            for l in &labels {
                let _ = write!(out, ",{block}.{l}");
            }
        }
        out.push('\n');
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for cell in &self.cells {
            let _ = write!(out, "{},{},{}", cell.cell.n, cell.cell.t, cell.cell.rho);
            for pick in [
                (|r: &McResult| r.rmse_beta) as fn(&McResult) -> f64,
                |r| r.rmse_rho,
                |r| r.accuracy_omega,
            ] {
                for col in &cell.columns {
                    let _ = write!(out, ",{}", na(col.result.as_ref().map(pick)));
                }
            }
            for col in &cell.columns {
                let _ = write!(out, ",{}", col.failures);
            }
            out.push('\n');
        }
        out
    }
}
