//! Command-line frontend for `sarw`.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
//! failure, 4 I/O error. Errors are printed to stderr as one JSON object.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use sarw::dgp::{generate_knn_adjacency, generate_panel};
use sarw::io::{
    read_matrix, read_panel, render_heatmap, write_adjacency, write_outputs, write_panel, HEATMAP_FILE,
};
use sarw::montecarlo::run_study;
use sarw::sampler::run_chain;
use sarw::{Error, Result};

use config::RunConfig;

pub const PANEL_FILE: &str = "panel.csv";
pub const OMEGA_TRUE_FILE: &str = "omega_true.csv";
pub const MC_TABLE_FILE: &str = "mc_table.csv";
pub const MC_REPLICATIONS_FILE: &str = "mc_replications.csv";

#[derive(Debug, Parser)]
#[command(name = "sarw", version, about = "Bayesian estimation of binary spatial weight matrices")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the configuration's, else `.`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `mc-study`.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler on a panel CSV and write the chain summaries.
    Estimate {
        /// Panel CSV (default: `io.panel`).
        panel: Option<PathBuf>,
    },
    /// Write a synthetic panel and its true adjacency matrix.
    Simulate,
    /// Run the Monte Carlo study of the `mc` block.
    McStudy,
    /// Render an inclusion matrix CSV as an SVG heatmap.
    Heatmap {
        /// Inclusion CSV (default: `io.inclusion`).
        inclusion: Option<PathBuf>,
        /// Unit labels one per line, in display order.
        #[arg(long)]
        ordering: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 4,
        Error::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => 4,
        Error::InvalidConfig { .. }
        | Error::InvalidAnchor { .. }
        | Error::OutOfSupport(_)
        | Error::InvalidAdjacency(_)
        | Error::DimensionMismatch { .. }
        | Error::RankDeficient { .. }
        | Error::UnbalancedPanel(_)
        | Error::MissingLag(_)
        | Error::Parse { .. }
        | Error::Csv(_)
        | Error::Json(_) => 2,
        _ => 3,
    }
}

/// Machine-readable form of `e` for stderr.
pub fn error_json(e: &Error) -> serde_json::Value {
    let mut v = json!({
        "error": {
            "code": exit_code(e),
            "message": e.to_string(),
        }
    });
    let extra = match e {
        Error::InvalidConfig { field, .. } => Some(("field", json!(field))),
        Error::Parse { line, column, .. } => {
            v["error"]["line"] = json!(line);
            Some(("column", json!(column)))
        }
        Error::Io { path, .. } => Some(("path", json!(path))),
        _ => None,
    };
    if let Some((k, val)) = extra {
        v["error"][k] = val;
    }
    v
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn missing(field: &str) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        message: "no path given on the command line or in the configuration".to_string(),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.sampler.seed = seed;
        config.dgp.seed = seed;
        config.mc.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.mc.threads = Some(threads);
    }
    config.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.io.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Estimate { panel } => {
            let panel = panel.clone().or_else(|| config.io.panel.clone()).ok_or_else(|| missing("io.panel"))?;
            estimate(&config, &panel, &out)
        }
        Command::Simulate => simulate(&config, &out),
        Command::McStudy => mc_study(&config, &out),
        Command::Heatmap { inclusion, ordering } => {
            let inclusion = inclusion
                .clone()
                .or_else(|| config.io.inclusion.clone())
                .ok_or_else(|| missing("io.inclusion"))?;
            let ordering = ordering.clone().or_else(|| config.io.ordering.clone());
            heatmap(&inclusion, ordering.as_deref(), &out)
        }
    }
}

pub fn estimate(config: &RunConfig, panel: &Path, out: &Path) -> Result<()> {
    let spec = config.model.spec()?;
    let sampler = config.sampler.config()?;
    let data = read_panel(panel, &spec)?;
    let priors = config.priors.build(data.n(), data.q())?;
    let chain = run_chain(&data, &spec, &priors, &sampler)?;
    let echo = serde_json::to_value(config)?;
    write_outputs(&chain, &data, echo, sampler.seed, out)?;
    if let Ok(p) = chain.inclusion_probabilities() {
        render_heatmap(&p, data.unit_labels(), out.join(HEATMAP_FILE))?;
    }
    Ok(())
}

pub fn simulate(config: &RunConfig, out: &Path) -> Result<()> {
    let dgp = &config.dgp;
    let mut rng = ChaCha8Rng::seed_from_u64(dgp.seed);
    let omega = generate_knn_adjacency(dgp, &mut rng)?;
    let sim = generate_panel(dgp, &omega, &mut rng)?;
    create_dir(out)?;
    write_panel(out.join(PANEL_FILE), &sim.data, dgp.beta_true.len())?;
    write_adjacency(out.join(OMEGA_TRUE_FILE), &sim.omega_true, sim.data.unit_labels())
}

pub fn mc_study(config: &RunConfig, out: &Path) -> Result<()> {
    let study = run_study(&config.mc)?;
    create_dir(out)?;
    write_file(&out.join(MC_TABLE_FILE), &study.to_csv())?;
    let mut records = String::from("n,t,rho,column,replication,rmse_beta,rmse_rho,accuracy\n");
    for cell in &study.cells {
        for col in &cell.columns {
            for r in col.result.iter().flat_map(|res| &res.records) {
                let _ = writeln!(
                    records,
                    "{},{},{},{},{},{},{},{}",
                    cell.cell.n, cell.cell.t, cell.cell.rho, col.label, r.replication, r.rmse_beta, r.rmse_rho, r.accuracy
                );
            }
        }
    }
    write_file(&out.join(MC_REPLICATIONS_FILE), &records)
}

pub fn heatmap(inclusion: &Path, ordering: Option<&Path>, out: &Path) -> Result<()> {
    let (labels, m) = read_matrix(inclusion)?;
    let (labels, m) = match ordering {
        None => (labels, m),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            let order: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            reorder(&labels, &m, &order)?
        }
    };
    create_dir(out)?;
    render_heatmap(&m, &labels, out.join(HEATMAP_FILE))
}

/// Permutes rows and columns of `m` into the order of `order`, which must
/// list every label once.
pub fn reorder(labels: &[String], m: &DMatrix<f64>, order: &[String]) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut idx = Vec::with_capacity(order.len());
    for l in order {
        let k = labels.iter().position(|x| x == l).ok_or_else(|| Error::InvalidConfig {
            field: "ordering".to_string(),
            message: format!("unknown unit `{l}`"),
        })?;
        if idx.contains(&k) {
            return Err(Error::InvalidConfig {
                field: "ordering".to_string(),
                message: format!("unit `{l}` listed twice"),
            });
        }
        idx.push(k);
    }
    if idx.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "ordering length",
            expected: labels.len(),
            found: idx.len(),
        });
    }
    let n = idx.len();
    Ok((order.to_vec(), DMatrix::from_fn(n, n, |i, j| m[(idx[i], idx[j])])))
}
