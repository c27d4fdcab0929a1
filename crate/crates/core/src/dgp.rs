//! Synthetic panels from a spatial lag model on a k-nearest-neighbour graph.
//!
//! Locations are 2-D standard normal draws. The true adjacency links every
//! unit to its `k` nearest neighbours, symmetrized, and the panel follows
//!
//! `y_t = rho W y_t + mu + tau_t + Z_t beta + eps_t`
//!
//! with row-standardized `W`, so `y_t = (I - rho W)^{-1} (...)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{row_standardize, AdjacencyMatrix, ModelSpec, PanelData};

/// How the directed k-NN relation becomes a symmetric adjacency matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrize {
    /// Linked if either unit is among the other's nearest neighbours.
    #[default]
    Union,
    /// Linked only if both are.
    Intersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    pub rho_true: f64,
    /// Slopes on the covariates `z_1, z_2, ...`.
    pub beta_true: Vec<f64>,
    pub sigma2_true: f64,
    /// Defaults to `max(1, round(N / 20))`.
    pub k_neighbours: Option<usize>,
    pub symmetrize: Symmetrize,
    pub perturb_fraction: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 20,
            t: 10,
            rho_true: 0.8,
            beta_true: vec![-1.0, 1.0],
            sigma2_true: 0.5,
            k_neighbours: None,
            symmetrize: Symmetrize::Union,
            perturb_fraction: 0.0,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn k(&self) -> usize {
        self.k_neighbours
            .unwrap_or_else(|| ((self.n as f64 / 20.0).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("dgp.n", "needs at least two units"));
        }
        if self.t == 0 {
            return Err(Error::config("dgp.t", "must be positive"));
        }
        if !(self.rho_true >= 0.0 && self.rho_true < 1.0) {
            return Err(Error::config("dgp.rho_true", "must lie in [0, 1)"));
        }
        if !(self.sigma2_true >= 0.0 && self.sigma2_true.is_finite()) {
            return Err(Error::config("dgp.sigma2_true", "must be nonnegative"));
        }
        let k = self.k();
        if k == 0 || k >= self.n {
            return Err(Error::config("dgp.k_neighbours", format!("must lie in 1..{}", self.n)));
        }
        if !(0.0..1.0).contains(&self.perturb_fraction) {
            return Err(Error::config("dgp.perturb_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Directed k-NN by Euclidean distance (ties to the lower index), then
/// symmetrized.
pub fn knn_adjacency(points: &[[f64; 2]], k: usize, symmetrize: Symmetrize) -> Result<AdjacencyMatrix> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::config("dgp.k_neighbours", format!("must lie in 1..{n}")));
    }
    let mut directed = vec![false; n * n];
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &others[..k] {
            directed[i * n + j] = true;
        }
    }
    let mut omega = AdjacencyMatrix::empty(n, true);
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (directed[i * n + j], directed[j * n + i]);
            let linked = match symmetrize {
                Symmetrize::Union => a || b,
                Symmetrize::Intersection => a && b,
            };
            omega.set(i, j, linked);
        }
    }
    Ok(omega)
}

pub fn generate_knn_adjacency<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<AdjacencyMatrix> {
    config.validate()?;
    let points: Vec<[f64; 2]> = (0..config.n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    knn_adjacency(&points, config.k(), config.symmetrize)
}

/// Structural shocks of one simulated panel, stacked as `t * n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelComponents {
    /// `NT x q0` covariates.
    pub z: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub tau: DVector<f64>,
    pub epsilon: DVector<f64>,
}

impl PanelComponents {
    pub fn draw<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Self {
        let (n, t) = (config.n, config.t);
        let q0 = config.beta_true.len();
        let mut normal = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
        let z = DMatrix::from_row_slice(n * t, q0, &normal(n * t * q0));
        let mu = DVector::from_vec(normal(n));
        let tau = DVector::from_vec(normal(t));
        let sd = config.sigma2_true.sqrt();
        let epsilon = DVector::from_vec(normal(n * t)) * sd;
        PanelComponents { z, mu, tau, epsilon }
    }
}

/// Simulated panel with the parameters that generated it.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub data: PanelData,
    pub omega_true: AdjacencyMatrix,
    pub rho_true: f64,
    pub sigma2_true: f64,
    /// True coefficients in the column order of `data.x()`: slopes, unit
    /// effects `mu_i + tau_1`, time effects `tau_t - tau_1` for `t >= 2`.
    pub beta_true: DVector<f64>,
    pub components: PanelComponents,
}

/// The model every simulated panel is meant to be estimated with.
pub fn dgp_model_spec(symmetric: bool) -> ModelSpec {
    ModelSpec {
        symmetric_omega: symmetric,
        ..ModelSpec::default()
    }
}

/// Solves `(I - rho W) y_t = mu + tau_t + Z_t beta + eps_t` for each period.
pub fn assemble_panel(
    config: &DgpConfig,
    omega_true: &AdjacencyMatrix,
    components: PanelComponents,
) -> Result<SimulatedPanel> {
    config.validate()?;
    let (n, t) = (config.n, config.t);
    if omega_true.n() != n {
        return Err(Error::DimensionMismatch {
            context: "true adjacency dimension",
            expected: n,
            found: omega_true.n(),
        });
    }
    let slopes = DVector::from_column_slice(&config.beta_true);
    let w = row_standardize(omega_true);
    let lu = w.spatial_filter(config.rho_true).into_matrix().lu();
    let signal = &components.z * &slopes;
    let mut y = DVector::zeros(n * t);
    for p in 0..t {
        let rhs = DVector::from_fn(n, |i, _| {
            let idx = p * n + i;
            components.mu[i] + components.tau[p] + signal[idx] + components.epsilon[idx]
        });
        let yt = lu.solve(&rhs).ok_or(Error::SingularMatrix)?;
        y.rows_mut(p * n, n).copy_from(&yt);
    }
    let spec = dgp_model_spec(omega_true.is_symmetric());
    let data = PanelData::from_covariates(n, t, y, None, &components.z, &spec)?;
    let q0 = slopes.len();
    let mut beta = DVector::zeros(data.q());
    beta.rows_mut(0, q0).copy_from(&slopes);
    for i in 0..n {
        beta[q0 + i] = components.mu[i] + components.tau[0];
    }
    for p in 1..t {
        beta[q0 + n + p - 1] = components.tau[p] - components.tau[0];
    }
    Ok(SimulatedPanel {
        data,
        omega_true: omega_true.clone(),
        rho_true: config.rho_true,
        sigma2_true: config.sigma2_true,
        beta_true: beta,
        components,
    })
}

pub fn generate_panel<R: Rng + ?Sized>(
    config: &DgpConfig,
    omega_true: &AdjacencyMatrix,
    rng: &mut R,
) -> Result<SimulatedPanel> {
    config.validate()?;
    let components = PanelComponents::draw(config, rng);
    assemble_panel(config, omega_true, components)
}

/// Flips `round(fraction * N^2)` elements of `omega` (whole pairs when it is
/// symmetric), half of them links removed and half added, so the number of
/// links is kept and [`overlap`] with the input is exactly
/// `1 - flipped / N^2`.
pub fn perturb_adjacency<R: Rng + ?Sized>(
    omega: &AdjacencyMatrix,
    fraction: f64,
    rng: &mut R,
) -> Result<AdjacencyMatrix> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config("perturb_fraction", "must lie in [0, 1)"));
    }
    let n = omega.n();
    let symmetric = omega.is_symmetric();
    let budget = (fraction * (n * n) as f64).round() as usize;
    let flips = if symmetric {
        ((budget as f64) / 2.0).round() as usize
    } else {
        budget
    };
    let (mut ones, mut zeros) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            if i == j || (symmetric && j < i) {
                continue;
            }
            if omega.get(i, j) {
                ones.push((i, j));
            } else {
                zeros.push((i, j));
            }
        }
    }
    let remove = flips / 2;
    let add = flips - remove;
    if remove > ones.len() || add > zeros.len() {
        return Err(Error::config(
            "perturb_fraction",
            format!("{flips} flips do not fit a matrix with {} links", ones.len()),
        ));
    }
    ones.shuffle(rng);
    zeros.shuffle(rng);
    let mut out = omega.clone();
    for &(i, j) in ones[..remove].iter() {
        out.set(i, j, false);
    }
    for &(i, j) in zeros[..add].iter() {
        out.set(i, j, true);
    }
    Ok(out)
}

fn check_same_n(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            context: "adjacency dimension",
            expected: a.n(),
            found: b.n(),
        });
    }
    Ok(())
}

/// Share of all `N^2` elements on which the two matrices agree.
pub fn overlap(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> Result<f64> {
    check_same_n(a, b)?;
    let n = a.n();
    if n == 0 {
        return Ok(1.0);
    }
    let same = a.entries().iter().zip(b.entries()).filter(|(x, y)| x == y).count();
    Ok(same as f64 / (n * n) as f64)
}

/// Share of unordered pairs `i < j` on which both directions agree.
pub fn pair_overlap(a: &AdjacencyMatrix, b: &AdjacencyMatrix) -> Result<f64> {
    check_same_n(a, b)?;
    let n = a.n();
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs == 0 {
        return Ok(1.0);
    }
    let mut same = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            same += (a.get(i, j) == b.get(i, j) && a.get(j, i) == b.get(j, i)) as usize;
        }
    }
    Ok(same as f64 / pairs as f64)
}
