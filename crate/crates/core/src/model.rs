//! Panel SAR model: data containers, the binary adjacency matrix, row
//! standardization, design assembly and the Gaussian log-likelihood.
//!
//! Observations are stacked period by period: entry `t * n + i` of `y` is
//! unit `i` at period `t`, so the spatial filter for the whole panel is
//! `S = I_T ⊗ (I_N - rho W)` and `|S| = |I_N - rho W|^T`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{SpatialSystemState, SquareMatrix};

/// Binary `N x N` neighbour indicator matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<u8>,
    symmetric: bool,
}

impl AdjacencyMatrix {
    pub fn empty(n: usize, symmetric: bool) -> Self {
        AdjacencyMatrix {
            n,
            entries: vec![0; n * n],
            symmetric,
        }
    }

    /// Builds from row-major 0/1 entries, validating the diagonal and (when
    /// requested) symmetry.
    pub fn from_entries(n: usize, entries: Vec<u8>, symmetric: bool) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "adjacency entries",
                expected: n * n,
                found: entries.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let v = entries[i * n + j];
                if v > 1 {
                    return Err(Error::InvalidAdjacency(format!(
                        "entry ({i},{j}) is {v}, expected 0 or 1"
                    )));
                }
                if i == j && v != 0 {
                    return Err(Error::InvalidAdjacency(format!("diagonal entry {i} is set")));
                }
                if symmetric && v != entries[j * n + i] {
                    return Err(Error::InvalidAdjacency(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(AdjacencyMatrix {
            n,
            entries,
            symmetric,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>], symmetric: bool) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                context: "adjacency row",
                expected: n,
                found: bad.len(),
            });
        }
        Self::from_entries(n, rows.concat(), symmetric)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Same links, different symmetry flag. Fails if the flag would be violated.
    pub fn with_symmetry(self, symmetric: bool) -> Result<Self> {
        Self::from_entries(self.n, self.entries, symmetric)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j] == 1
    }

    /// Sets `omega_ij` (and `omega_ji` for symmetric matrices). Diagonal
    /// writes are ignored.
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        if i == j {
            return;
        }
        self.entries[i * self.n + j] = value as u8;
        if self.symmetric {
            self.entries[j * self.n + i] = value as u8;
        }
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.row(i).iter().map(|&v| v as usize).sum()
    }

    pub fn link_count(&self) -> usize {
        self.entries.iter().map(|&v| v as usize).sum()
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.entries[i * self.n + j] as f64)
    }
}

/// Nonnegative spatial weights with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    row_standardized: bool,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    /// `I - rho W`.
    pub fn spatial_filter(&self, rho: f64) -> SquareMatrix {
        let n = self.n();
        let a = DMatrix::identity(n, n) - &self.w * rho;
        SquareMatrix::from_matrix(a).expect("weight matrix is square")
    }
}

/// Divides each row of `omega` by its row sum; empty rows stay zero.
pub fn row_standardize(omega: &AdjacencyMatrix) -> WeightMatrix {
    let n = omega.n();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = omega.row_sum(i);
        if s == 0 {
            continue;
        }
        let inv = 1.0 / s as f64;
        for (j, &v) in omega.row(i).iter().enumerate() {
            if v == 1 {
                w[(i, j)] = inv;
            }
        }
    }
    WeightMatrix {
        w,
        row_standardized: true,
    }
}

/// `W = f(Omega)`: row-standardized, or the binary matrix itself.
pub fn weights(omega: &AdjacencyMatrix, standardize: bool) -> WeightMatrix {
    if standardize {
        row_standardize(omega)
    } else {
        WeightMatrix {
            w: omega.to_f64(),
            row_standardized: false,
        }
    }
}

/// Weight of `omega_ij` within a row with `row_sum` links.
#[inline]
pub(crate) fn link_weight(row_sum: usize, standardize: bool) -> f64 {
    if !standardize {
        1.0
    } else if row_sum == 0 {
        0.0
    } else {
        1.0 / row_sum as f64
    }
}

/// Structural choices of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// 0 for the contemporaneous lag `W y_t`, `r > 0` for `W y_{t-r}`.
    pub lag_offset: usize,
    pub row_standardize: bool,
    pub symmetric_omega: bool,
    pub unit_fixed_effects: bool,
    pub time_fixed_effects: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            lag_offset: 0,
            row_standardize: true,
            symmetric_omega: false,
            unit_fixed_effects: true,
            time_fixed_effects: true,
        }
    }
}

impl ModelSpec {
    pub fn is_contemporaneous(&self) -> bool {
        self.lag_offset == 0
    }
}

/// Appends fixed-effect dummies to the raw covariates.
///
/// Column order: the covariates as given, then `N` unit dummies, then `T - 1`
/// time dummies for periods `2..=T` (period 1 is the reference). There is no
/// separate intercept: the unit effects absorb it. If unit effects are
/// disabled an intercept column is inserted after the covariates instead.
/// The result must have full column rank.
pub fn build_design(
    covariates: &DMatrix<f64>,
    n: usize,
    t: usize,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let rows = n * t;
    if covariates.nrows() != rows {
        return Err(Error::DimensionMismatch {
            context: "covariate rows",
            expected: rows,
            found: covariates.nrows(),
        });
    }
    let q0 = covariates.ncols();
    let unit_cols = if spec.unit_fixed_effects { n } else { 1 };
    let time_cols = if spec.time_fixed_effects { t.saturating_sub(1) } else { 0 };
    let q = q0 + unit_cols + time_cols;
    let mut x = DMatrix::zeros(rows, q);
    x.columns_mut(0, q0).copy_from(covariates);
    for period in 0..t {
        for unit in 0..n {
            let r = period * n + unit;
            if spec.unit_fixed_effects {
                x[(r, q0 + unit)] = 1.0;
            } else {
                x[(r, q0)] = 1.0;
            }
            if spec.time_fixed_effects && period > 0 {
                x[(r, q0 + unit_cols + period - 1)] = 1.0;
            }
        }
    }
    check_full_rank(&x)?;
    Ok(x)
}

/// Names matching [`build_design`]'s column order.
pub fn design_column_names(
    covariate_names: &[String],
    unit_labels: &[String],
    time_labels: &[String],
    spec: &ModelSpec,
) -> Vec<String> {
    let mut names = covariate_names.to_vec();
    if spec.unit_fixed_effects {
        names.extend(unit_labels.iter().map(|u| format!("unit[{u}]")));
    } else {
        names.push("intercept".to_string());
    }
    if spec.time_fixed_effects {
        names.extend(time_labels.iter().skip(1).map(|t| format!("time[{t}]")));
    }
    names
}

fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let columns = x.ncols();
    if columns == 0 {
        return Ok(());
    }
    if x.nrows() < columns {
        return Err(Error::RankDeficient {
            rank: x.nrows(),
            columns,
        });
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let tol = max * x.nrows().max(columns) as f64 * f64::EPSILON * 10.0;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < columns {
        return Err(Error::RankDeficient { rank, columns });
    }
    Ok(())
}

/// Stacked balanced panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n: usize,
    t: usize,
    y: DVector<f64>,
    y_lag: Option<DVector<f64>>,
    x: DMatrix<f64>,
    column_names: Vec<String>,
    unit_labels: Vec<String>,
    time_labels: Vec<String>,
}

impl PanelData {
    /// Validates dimensions and the column rank of `x`.
    pub fn new(
        n: usize,
        t: usize,
        y: DVector<f64>,
        y_lag: Option<DVector<f64>>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let rows = n * t;
        if y.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "dependent variable length",
                expected: rows,
                found: y.len(),
            });
        }
        if let Some(l) = &y_lag {
            if l.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "lagged dependent variable length",
                    expected: rows,
                    found: l.len(),
                });
            }
        }
        if x.nrows() != rows {
            return Err(Error::DimensionMismatch {
                context: "design rows",
                expected: rows,
                found: x.nrows(),
            });
        }
        check_full_rank(&x)?;
        let q = x.ncols();
        Ok(PanelData {
            n,
            t,
            y,
            y_lag,
            x,
            column_names: (0..q).map(|k| format!("x{k}")).collect(),
            unit_labels: (0..n).map(|i| i.to_string()).collect(),
            time_labels: (0..t).map(|p| p.to_string()).collect(),
        })
    }

    /// Assembles the design from raw covariates via [`build_design`].
    pub fn from_covariates(
        n: usize,
        t: usize,
        y: DVector<f64>,
        y_lag: Option<DVector<f64>>,
        covariates: &DMatrix<f64>,
        spec: &ModelSpec,
    ) -> Result<Self> {
        let x = build_design(covariates, n, t, spec)?;
        let mut data = Self::new(n, t, y, y_lag, x)?;
        let cov_names: Vec<String> = (0..covariates.ncols()).map(|k| format!("z{k}")).collect();
        data.column_names =
            design_column_names(&cov_names, &data.unit_labels, &data.time_labels, spec);
        Ok(data)
    }

    pub fn with_labels(
        mut self,
        column_names: Vec<String>,
        unit_labels: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        for (context, expected, found) in [
            ("column names", self.q(), column_names.len()),
            ("unit labels", self.n, unit_labels.len()),
            ("time labels", self.t, time_labels.len()),
        ] {
            if expected != found {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    found,
                });
            }
        }
        self.column_names = column_names;
        self.unit_labels = unit_labels;
        self.time_labels = time_labels;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_lag(&self) -> Option<&DVector<f64>> {
        self.y_lag.as_ref()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// The vector the spatial lag acts on: `y` itself for `r = 0`, `y_{t-r}`
    /// otherwise.
    pub fn spatial_source(&self, spec: &ModelSpec) -> Result<&DVector<f64>> {
        if spec.is_contemporaneous() {
            Ok(&self.y)
        } else {
            self.y_lag.as_ref().ok_or_else(|| {
                Error::MissingLag(format!(
                    "lag offset {} requires a lagged dependent variable",
                    spec.lag_offset
                ))
            })
        }
    }
}

/// One full parameter configuration.
#[derive(Debug, Clone)]
pub struct ParameterState {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub omega: AdjacencyMatrix,
    /// Cached `I - rho W`; present for the contemporaneous model only.
    pub system: Option<SpatialSystemState>,
}

impl ParameterState {
    /// Builds the state and, for `r = 0`, the exact spatial system cache.
    pub fn new(
        beta: DVector<f64>,
        sigma2: f64,
        rho: f64,
        omega: AdjacencyMatrix,
        spec: &ModelSpec,
        refresh_interval: usize,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::OutOfSupport("sigma2"));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::OutOfSupport("rho"));
        }
        let system = if spec.is_contemporaneous() {
            let a = weights(&omega, spec.row_standardize).spatial_filter(rho);
            Some(SpatialSystemState::new(a, refresh_interval)?)
        } else {
            None
        };
        Ok(ParameterState {
            beta,
            sigma2,
            rho,
            omega,
            system,
        })
    }
}

/// `e = Y - rho (I_T ⊗ W) Y_src - X beta`.
pub fn residuals(
    w: &WeightMatrix,
    rho: f64,
    beta: &DVector<f64>,
    data: &PanelData,
    spec: &ModelSpec,
) -> Result<DVector<f64>> {
    let n = data.n();
    let src = data.spatial_source(spec)?;
    let mut e = data.y() - data.x() * beta;
    for period in 0..data.t() {
        let lag = w.matrix() * src.rows(period * n, n);
        let mut block = e.rows_mut(period * n, n);
        block.axpy(-rho, &lag, 1.0);
    }
    Ok(e)
}

/// Gaussian log-likelihood of the panel.
///
/// `-(NT/2) log(2 pi sigma2) + T log|A| - e'e / (2 sigma2)`; the determinant
/// term is absent for `r > 0`.
pub fn log_likelihood(params: &ParameterState, data: &PanelData, spec: &ModelSpec) -> Result<f64> {
    if params.beta.len() != data.q() {
        return Err(Error::DimensionMismatch {
            context: "beta length",
            expected: data.q(),
            found: params.beta.len(),
        });
    }
    if params.omega.n() != data.n() {
        return Err(Error::DimensionMismatch {
            context: "adjacency dimension",
            expected: data.n(),
            found: params.omega.n(),
        });
    }
    let w = weights(&params.omega, spec.row_standardize);
    let nt = (data.n() * data.t()) as f64;
    let mut ll = -0.5 * nt * (2.0 * PI * params.sigma2).ln();
    if spec.is_contemporaneous() {
        let system = params
            .system
            .as_ref()
            .ok_or_else(|| Error::InconsistentState("no spatial system cache".into()))?;
        let expected = w.spatial_filter(params.rho);
        let gap = (system.a() - expected.as_matrix()).amax();
        if gap > 1e-9 {
            return Err(Error::InconsistentState(format!(
                "cached A differs from I - rho W by {gap:e}"
            )));
        }
        ll += data.t() as f64 * system.log_det();
    }
    let e = residuals(&w, params.rho, &params.beta, data, spec)?;
    ll -= e.norm_squared() / (2.0 * params.sigma2);
    Ok(ll)
}
