//! Files in and out: long-format panel CSVs, chain outputs and the inclusion
//! heatmap.
//!
//! A panel CSV has one row per unit and period with the columns `unit_id`,
//! `time_id` (integer) and `y`; every other column is a covariate, in file
//! order.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{avg_neighbours, component, geweke_z, mean_sd};
use crate::model::{design_column_names, AdjacencyMatrix, ModelSpec, PanelData};
use crate::sampler::{ChainDiagnostics, ChainOutput};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const INCLUSION_FILE: &str = "inclusion.csv";
pub const OMEGA_LAST_FILE: &str = "omega_last.csv";
pub const HEATMAP_FILE: &str = "heatmap.svg";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: String::new(),
        message: e.to_string(),
    }
}

pub fn read_panel(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<PanelData> {
    parse_panel(open(path.as_ref())?, spec)
}

/// Builds a [`PanelData`] from panel CSV text.
///
/// Units keep their order of first appearance and periods are sorted. With
/// a lag offset `r > 0` the first `r` periods only supply lagged values, and
/// every later period `s` needs period `s - r` in the file.
pub fn parse_panel<R: Read>(reader: R, spec: &ModelSpec) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            column: name.to_string(),
            message: "required column is missing".to_string(),
        })
    };
    let (unit_col, time_col, y_col) = (find("unit_id")?, find("time_id")?, find("y")?);
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|k| ![unit_col, time_col, y_col].contains(k))
        .collect();
    let cov_names: Vec<String> = cov_cols.iter().map(|&k| headers[k].to_string()).collect();

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut times = BTreeSet::new();
    // (unit, time) -> [y, covariates...]
    let mut cells: HashMap<(usize, i64), Vec<f64>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| record.get(k).unwrap_or("");
        let unit = field(unit_col).to_string();
        let time: i64 = field(time_col).parse().map_err(|_| Error::Parse {
            line,
            column: "time_id".to_string(),
            message: format!("`{}` is not an integer", field(time_col)),
        })?;
        let mut values = Vec::with_capacity(1 + cov_cols.len());
        for &k in std::iter::once(&y_col).chain(&cov_cols) {
            let v: f64 = field(k).parse().map_err(|_| Error::Parse {
                line,
                column: headers[k].to_string(),
                message: format!("`{}` is not a number", field(k)),
            })?;
            values.push(v);
        }
        let next = units.len();
        let u = *unit_index.entry(unit.clone()).or_insert_with(|| {
            units.push(unit.clone());
            next
        });
        times.insert(time);
        if cells.insert((u, time), values).is_some() {
            return Err(Error::UnbalancedPanel(format!(
                "duplicate row for unit `{unit}` at time {time} (line {line})"
            )));
        }
    }
    let times: Vec<i64> = times.into_iter().collect();
    let n = units.len();
    if n == 0 {
        return Err(Error::UnbalancedPanel("no data rows".to_string()));
    }
    if cells.len() != n * times.len() {
        let (u, t) = units
            .iter()
            .enumerate()
            .flat_map(|(u, _)| times.iter().map(move |&t| (u, t)))
            .find(|key| !cells.contains_key(key))
            .expect("some cell is missing");
        return Err(Error::UnbalancedPanel(format!("unit `{}` has no row at time {t}", units[u])));
    }

    let r = spec.lag_offset as i64;
    let first = times[0];
    let periods: Vec<i64> = times.iter().copied().filter(|&s| s >= first + r).collect();
    if periods.is_empty() {
        return Err(Error::MissingLag(format!(
            "lag offset {r} leaves no period to estimate among {} periods",
            times.len()
        )));
    }
    let t = periods.len();
    let q0 = cov_cols.len();
    let mut y = DVector::zeros(n * t);
    let mut y_lag = (r > 0).then(|| DVector::zeros(n * t));
    let mut cov = DMatrix::zeros(n * t, q0);
    for (p, &s) in periods.iter().enumerate() {
        for u in 0..n {
            let row = p * n + u;
            let v = &cells[&(u, s)];
            y[row] = v[0];
            for k in 0..q0 {
                cov[(row, k)] = v[1 + k];
            }
            if let Some(lag) = y_lag.as_mut() {
                let source = cells.get(&(u, s - r)).ok_or_else(|| {
                    Error::MissingLag(format!("time {s} needs time {} which is absent", s - r))
                })?;
                lag[row] = source[0];
            }
        }
    }
    let time_labels: Vec<String> = periods.iter().map(|s| s.to_string()).collect();
    let names = design_column_names(&cov_names, &units, &time_labels, spec);
    PanelData::from_covariates(n, t, y, y_lag, &cov, spec)?.with_labels(names, units, time_labels)
}

/// Writes `data` as a panel CSV with its first `q0` design columns as the
/// covariates. Time labels must be integers.
pub fn write_panel(path: impl AsRef<Path>, data: &PanelData, q0: usize) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["unit_id".to_string(), "time_id".to_string(), "y".to_string()];
    header.extend(data.column_names()[..q0].iter().cloned());
    w.write_record(&header)?;
    let n = data.n();
    for p in 0..data.t() {
        for i in 0..n {
            let row = p * n + i;
            let mut rec = vec![
                data.unit_labels()[i].clone(),
                data.time_labels()[p].clone(),
                data.y()[row].to_string(),
            ];
            rec.extend((0..q0).map(|k| data.x()[(row, k)].to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_labelled(
    path: &Path,
    labels: &[String],
    rows: usize,
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["unit".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for i in 0..rows {
        let mut rec = vec![labels[i].clone()];
        rec.extend((0..labels.len()).map(|j| cell(i, j)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_labels(n: usize, labels: &[String]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            context: "unit labels",
            expected: n,
            found: labels.len(),
        });
    }
    Ok(())
}

/// Square matrix with unit labels as the first column and the header.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    check_labels(m.nrows(), labels)?;
    write_labelled(path.as_ref(), labels, m.nrows(), |i, j| m[(i, j)].to_string())
}

pub fn write_adjacency(path: impl AsRef<Path>, omega: &AdjacencyMatrix, labels: &[String]) -> Result<()> {
    check_labels(omega.n(), labels)?;
    write_labelled(path.as_ref(), labels, omega.n(), |i, j| u8::from(omega.get(i, j)).to_string())
}

/// Reads a file written by [`write_matrix`] or [`write_adjacency`].
pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::Reader::from_reader(open(path.as_ref())?);
    let labels: Vec<String> = rdr.headers().map_err(csv_error)?.iter().skip(1).map(String::from).collect();
    let n = labels.len();
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (k, f) in record.iter().enumerate().skip(1) {
            values.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: labels[k - 1].clone(),
                message: format!("`{f}` is not a number"),
            })?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            context: "matrix rows",
            expected: n,
            found: rows,
        });
    }
    Ok((labels, DMatrix::from_row_slice(n, n, &values)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// `None` with fewer than 20 draws.
    pub geweke_z: Option<f64>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub draw_count: usize,
    pub n: usize,
    pub t: usize,
    pub parameters: Vec<ParameterSummary>,
    pub avg_neighbours: Option<f64>,
    pub diagnostics: ChainDiagnostics,
    pub config: serde_json::Value,
}

fn summarize(name: String, draws: &[f64]) -> ParameterSummary {
    let (mean, sd) = match mean_sd(draws) {
        Ok((m, s)) => (Some(m), Some(s)),
        Err(_) => (None, None),
    };
    ParameterSummary {
        name,
        mean,
        sd,
        geweke_z: geweke_z(draws, 0.1, 0.5).ok(),
    }
}

pub fn chain_summary(chain: &ChainOutput, data: &PanelData, config: serde_json::Value, seed: u64) -> Summary {
    let mut parameters: Vec<ParameterSummary> = data
        .column_names()
        .iter()
        .enumerate()
        .map(|(k, name)| summarize(name.clone(), &component(&chain.beta_draws, k)))
        .collect();
    parameters.push(summarize("sigma2".to_string(), &chain.sigma2_draws));
    parameters.push(summarize("rho".to_string(), &chain.rho_draws));
    Summary {
        seed,
        draw_count: chain.draw_count,
        n: data.n(),
        t: data.t(),
        parameters,
        avg_neighbours: chain.inclusion_probabilities().ok().map(|p| avg_neighbours(&p)),
        diagnostics: chain.diagnostics,
        config,
    }
}

/// Writes `summary.json`, `trace.csv`, `inclusion.csv` and `omega_last.csv`
/// into `out_dir`, creating it if needed.
pub fn write_outputs(
    chain: &ChainOutput,
    data: &PanelData,
    config: serde_json::Value,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Summary> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels = data.unit_labels();

    let summary = chain_summary(chain, data, config, seed);
    let path = dir.join(SUMMARY_FILE);
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(TRACE_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["draw".to_string()];
    header.extend(data.column_names().iter().cloned());
    header.extend(["sigma2".to_string(), "rho".to_string()]);
    w.write_record(&header)?;
    for d in 0..chain.draw_count {
        let mut rec = vec![d.to_string()];
        rec.extend(chain.beta_draws[d].iter().map(f64::to_string));
        rec.push(chain.sigma2_draws[d].to_string());
        rec.push(chain.rho_draws[d].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(INCLUSION_FILE);
    match chain.inclusion_probabilities() {
        Ok(p) => write_matrix(&path, &p, labels)?,
        Err(_) => write_labelled(&path, labels, 0, |_, _| String::new())?,
    }
    write_adjacency(dir.join(OMEGA_LAST_FILE), &chain.omega_last, labels)?;
    Ok(summary)
}

/// Fill colour of a heatmap cell: white below 0.5, grey up to 0.75
/// inclusive, black above.
pub fn heatmap_colour(p: f64) -> &'static str {
    if p > 0.75 {
        "#000000"
    } else if p >= 0.5 {
        "#808080"
    } else {
        "#ffffff"
    }
}

const CELL: usize = 14;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG heatmap of an inclusion matrix. Row `i` is the unit being predicted,
/// column `j` the predictor.
pub fn heatmap_svg(inclusion: &DMatrix<f64>, labels: &[String]) -> Result<String> {
    let n = inclusion.nrows();
    if inclusion.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "heatmap matrix columns",
            expected: n,
            found: inclusion.ncols(),
        });
    }
    check_labels(n, labels)?;
    let margin = 10 + 7 * labels.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    let size = margin + n * CELL + 1;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{size}" height="{size}" fill="#ffffff"/>"##);
    for (i, label) in labels.iter().enumerate() {
        let y = margin + i * CELL + CELL / 2 + 4;
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, margin - 4, escape(label));
        let x = margin + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-90)" text-anchor="start">{}</text>"#,
            margin - 4,
            escape(label)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}" stroke="#c0c0c0" stroke-width="0.5"/>"##,
                margin + j * CELL,
                margin + i * CELL,
                heatmap_colour(inclusion[(i, j)])
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_heatmap(inclusion: &DMatrix<f64>, labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    let svg = heatmap_svg(inclusion, labels)?;
    let path = path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
