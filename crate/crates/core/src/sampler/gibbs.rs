use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::identification::{diag_w_squared, proportional_to_ones};
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::linalg::{lu_log_det, FilterSpectrum, SpatialSystemState};
use crate::model::{link_weight, weights, AdjacencyMatrix, ModelSpec, PanelData, ParameterState};
use crate::priors::Priors;

/// Sampler state plus the running quantities that make a flip cheap.
///
/// With `L[t, i] = sum_k omega_ik src_{t,k}` the spatial lag of unit `i` is
/// `c(s_i) L[t, i]`, `c` the link weight for row sum `s_i`. Flipping
/// `omega_ij` touches `L[., i]` and the residuals of unit `i` only, so a
/// proposal costs `O(N + T)`.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: ParameterState,
    row_sums: Vec<usize>,
    lag_sums: Vec<f64>,
    fitted: Vec<f64>,
    resid: Vec<f64>,
    rss: f64,
    diag_w2: Vec<f64>,
}

impl ChainState {
    pub fn params(&self) -> &ParameterState {
        &self.params
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.params.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.params.sigma2
    }

    pub fn rho(&self) -> f64 {
        self.params.rho
    }

    pub fn omega(&self) -> &AdjacencyMatrix {
        &self.params.omega
    }

    pub fn system(&self) -> Option<&SpatialSystemState> {
        self.params.system.as_ref()
    }

    /// Stacked residuals `e = Y - rho (I ⊗ W) Y_src - X beta`.
    pub fn residuals(&self) -> &[f64] {
        &self.resid
    }

    /// `e'e`.
    pub fn rss(&self) -> f64 {
        self.rss
    }

    pub fn into_params(self) -> ParameterState {
        self.params
    }
}

/// Why a proposed flip was turned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// `det(I - rho W)` would not be positive.
    Determinant,
    /// `diag(W^2)` would be proportional to ones.
    Identification,
}

/// Full conditional of one adjacency indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntryConditional {
    /// Hard-masked by the prior.
    Pinned(bool),
    /// The flip is inadmissible; the entry keeps its value.
    Rejected(Rejection),
    /// `P(omega_ij = 1 | rest)`.
    Bernoulli(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryOutcome {
    Pinned,
    Kept,
    Flipped,
    Rejected(Rejection),
}

/// Counters for one adjacency sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub visits: usize,
    pub flips: usize,
    pub determinant_proposals: usize,
    pub determinant_rejections: usize,
    pub identification_rejections: usize,
}

/// Counters for one pass of shift moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ShiftStats {
    pub proposals: usize,
    pub accepted: usize,
}

/// `N(mean, precision^{-1})`.
#[derive(Debug, Clone)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    precision: Cholesky<f64, Dyn>,
}

impl GaussianConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let q = self.mean.len();
        let z = DVector::from_iterator(q, (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // precision = L L', so L'^{-1} z has covariance precision^{-1}.
        let lt = self.precision.l().transpose();
        let shift = lt
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + shift
    }
}

/// Griddy-Gibbs evaluation of the `rho` conditional.
#[derive(Debug, Clone)]
pub struct RhoGrid {
    pub points: Vec<f64>,
    pub log_density: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl RhoGrid {
    /// Inverse-CDF cell choice, then a uniform position inside the cell.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let g = self.points.len();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut cell = g - 1;
        for (k, &p) in self.probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                cell = k;
                break;
            }
        }
        // A zero-probability cell can only be hit through rounding at the end.
        while self.probabilities[cell] == 0.0 && cell > 0 {
            cell -= 1;
        }
        let jitter: f64 = rng.sample(Open01);
        (cell, (cell as f64 + jitter) / g as f64)
    }
}

/// One changed row of `Omega` in a proposed flip.
struct RowEdit {
    row: usize,
    col: usize,
    new_sum: usize,
    new_w: Vec<f64>,
    delta: Option<DVector<f64>>,
    new_resid: Vec<f64>,
}

/// A flip plus the unit-effect shifts `(row, column, shift)` that go with it.
struct Shift {
    flip: Flip,
    shifts: Vec<(usize, usize, f64)>,
    log_ratio: f64,
}

struct Flip {
    value: bool,
    edits: Vec<RowEdit>,
    rss: f64,
    log_det: Option<f64>,
    diag_w2: Option<Vec<f64>>,
}

/// Full conditionals of the SAR panel model with an unknown adjacency matrix.
#[derive(Debug, Clone)]
pub struct Gibbs<'a> {
    data: &'a PanelData,
    spec: ModelSpec,
    priors: &'a Priors,
    config: &'a SamplerConfig,
    src: &'a DVector<f64>,
    xtx: DMatrix<f64>,
    free: Vec<(usize, usize)>,
    unit_columns: Option<Vec<usize>>,
}

impl<'a> Gibbs<'a> {
    pub fn new(
        data: &'a PanelData,
        spec: &ModelSpec,
        priors: &'a Priors,
        config: &'a SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        priors.params.validate()?;
        let n = data.n();
        if priors.omega.n() != n {
            return Err(Error::DimensionMismatch {
                context: "adjacency prior dimension",
                expected: n,
                found: priors.omega.n(),
            });
        }
        if priors.params.beta_variance.len() != data.q() {
            return Err(Error::DimensionMismatch {
                context: "beta prior length",
                expected: data.q(),
                found: priors.params.beta_variance.len(),
            });
        }
        let src = data.spatial_source(spec)?;
        let mut free = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || (spec.symmetric_omega && j < i) {
                    continue;
                }
                let mask = priors.omega.mask(i, j);
                if spec.symmetric_omega && mask != priors.omega.mask(j, i) {
                    return Err(Error::config(
                        "priors.omega.p",
                        "hard masks must be symmetric for a symmetric adjacency matrix",
                    ));
                }
                if mask.is_none() {
                    free.push((i, j));
                }
            }
        }
        Ok(Gibbs {
            data,
            spec: *spec,
            priors,
            config,
            src,
            xtx: data.x().tr_mul(data.x()),
            free,
            unit_columns: unit_dummy_columns(data.x(), n),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Free indicators in visiting order before shuffling; `(i, j)` with
    /// `i < j` stands for the pair in the symmetric case.
    pub fn free_entries(&self) -> &[(usize, usize)] {
        &self.free
    }

    /// Builds a state with all caches computed from scratch.
    pub fn state(
        &self,
        beta: DVector<f64>,
        sigma2: f64,
        rho: f64,
        omega: AdjacencyMatrix,
    ) -> Result<ChainState> {
        if beta.len() != self.data.q() {
            return Err(Error::DimensionMismatch {
                context: "beta length",
                expected: self.data.q(),
                found: beta.len(),
            });
        }
        if omega.n() != self.data.n() {
            return Err(Error::DimensionMismatch {
                context: "adjacency dimension",
                expected: self.data.n(),
                found: omega.n(),
            });
        }
        let omega = omega.with_symmetry(self.spec.symmetric_omega)?;
        let params = ParameterState::new(
            beta,
            sigma2,
            rho,
            omega,
            &self.spec,
            self.config.refresh_interval,
        )?;
        let nt = self.data.n() * self.data.t();
        let mut st = ChainState {
            params,
            row_sums: Vec::new(),
            lag_sums: vec![0.0; nt],
            fitted: vec![0.0; nt],
            resid: vec![0.0; nt],
            rss: 0.0,
            diag_w2: Vec::new(),
        };
        self.rebuild(&mut st);
        Ok(st)
    }

    /// Recomputes every cache except the spatial system.
    fn rebuild(&self, st: &mut ChainState) {
        let (n, t) = (self.data.n(), self.data.t());
        let omega = &st.params.omega;
        st.row_sums = (0..n).map(|i| omega.row_sum(i)).collect();
        for p in 0..t {
            for i in 0..n {
                st.lag_sums[p * n + i] = omega
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| v == 1)
                    .map(|(k, _)| self.src[p * n + k])
                    .sum();
            }
        }
        let fitted = self.data.x() * &st.params.beta;
        st.fitted.copy_from_slice(fitted.as_slice());
        st.diag_w2 = diag_w_squared(omega, self.spec.row_standardize);
        self.refresh_residuals(st);
    }

    fn refresh_residuals(&self, st: &mut ChainState) {
        let n = self.data.n();
        let y = self.data.y();
        let rho = st.params.rho;
        let mut rss = 0.0;
        for (idx, e) in st.resid.iter_mut().enumerate() {
            let c = link_weight(st.row_sums[idx % n], self.spec.row_standardize);
            *e = y[idx] - rho * c * st.lag_sums[idx] - st.fitted[idx];
            rss += *e * *e;
        }
        st.rss = rss;
    }

    fn lagged(&self, st: &ChainState) -> Vec<f64> {
        let n = self.data.n();
        st.lag_sums
            .iter()
            .enumerate()
            .map(|(idx, &l)| link_weight(st.row_sums[idx % n], self.spec.row_standardize) * l)
            .collect()
    }

    /// `beta | rest ~ N(V (X'(SY) / sigma2), V)` with
    /// `V = (X'X / sigma2 + V0^{-1})^{-1}`.
    pub fn beta_conditional(&self, st: &ChainState) -> Result<GaussianConditional> {
        let s2 = st.params.sigma2;
        let mut precision = &self.xtx / s2;
        for (k, v) in self.priors.params.beta_variance.iter().enumerate() {
            precision[(k, k)] += 1.0 / v;
        }
        let lagged = self.lagged(st);
        let rho = st.params.rho;
        let sy = DVector::from_iterator(
            lagged.len(),
            self.data.y().iter().zip(&lagged).map(|(y, l)| y - rho * l),
        );
        let rhs = self.data.x().tr_mul(&sy) / s2;
        let chol = Cholesky::new(precision).ok_or_else(|| {
            Error::NumericalFailure("beta posterior precision is not positive definite".into())
        })?;
        let mean = chol.solve(&rhs);
        Ok(GaussianConditional {
            mean,
            precision: chol,
        })
    }

    pub fn sample_beta<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        let beta = self.beta_conditional(st)?.sample(rng);
        self.set_beta(st, beta);
        Ok(())
    }

    pub(crate) fn set_beta(&self, st: &mut ChainState, beta: DVector<f64>) {
        let fitted = self.data.x() * &beta;
        st.fitted.copy_from_slice(fitted.as_slice());
        st.params.beta = beta;
        self.refresh_residuals(st);
    }

    /// Shape and rate of the inverse-gamma conditional of `sigma2`.
    pub fn sigma2_conditional(&self, st: &ChainState) -> (f64, f64) {
        let nt = (self.data.n() * self.data.t()) as f64;
        let factor = if self.config.residual_half_factor { 0.5 } else { 1.0 };
        (
            self.priors.params.sigma2_shape + 0.5 * nt,
            self.priors.params.sigma2_rate + factor * st.rss,
        )
    }

    pub fn sample_sigma2<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        let (shape, rate) = self.sigma2_conditional(st);
        let s2 = inverse_gamma(shape, rate, rng)?;
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "sigma2 draw {s2} from IG({shape}, {rate})"
            )));
        }
        st.params.sigma2 = s2;
        Ok(())
    }

    /// Log conditional density of `rho` at the open grid `(k - 1/2) / G`.
    pub fn rho_grid(&self, st: &ChainState) -> Result<RhoGrid> {
        let g = self.config.rho_grid_size;
        let points: Vec<f64> = (1..=g).map(|k| (k as f64 - 0.5) / g as f64).collect();
        let pp = &self.priors.params;
        let mut log_density: Vec<f64> = points.iter().map(|&r| pp.log_prior_rho_unchecked(r)).collect();
        if self.config.likelihood {
            let lagged = self.lagged(st);
            // e(rho) = u - rho v
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for idx in 0..lagged.len() {
                let u = self.data.y()[idx] - st.fitted[idx];
                let v = lagged[idx];
                a += u * u;
                b += u * v;
                c += v * v;
            }
            let s2 = st.params.sigma2;
            let log_dets = if self.spec.is_contemporaneous() {
                Some(self.log_dets(&st.params.omega, &points))
            } else {
                None
            };
            let t = self.data.t() as f64;
            for (k, &r) in points.iter().enumerate() {
                let rss = (a - 2.0 * r * b + r * r * c).max(0.0);
                let mut ld = -0.5 * rss / s2;
                if let Some(dets) = &log_dets {
                    ld += match dets[k] {
                        Some(v) => t * v,
                        None => f64::NEG_INFINITY,
                    };
                }
                log_density[k] += ld;
            }
        }
        let max = log_density.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::DegeneratePosterior);
        }
        let weights: Vec<f64> = log_density.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let probabilities = weights.iter().map(|w| w / total).collect();
        Ok(RhoGrid {
            points,
            log_density,
            probabilities,
        })
    }

    fn log_dets(&self, omega: &AdjacencyMatrix, points: &[f64]) -> Vec<Option<f64>> {
        let w = weights(omega, self.spec.row_standardize);
        match FilterSpectrum::new(w.matrix()) {
            Some(spectrum) => points.iter().map(|&r| spectrum.log_det(r)).collect(),
            None => points
                .iter()
                .map(|&r| match lu_log_det(w.spatial_filter(r).as_matrix()) {
                    Some((sign, l)) if sign > 0.0 => Some(l),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn sample_rho<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> Result<()> {
        let grid = self.rho_grid(st)?;
        let (cell, rho) = grid.draw(rng);
        if self.set_rho(st, rho).is_err() {
            // The jittered point can leave the admissible region of an
            // unstandardized W; the cell centre is admissible.
            self.set_rho(st, grid.points[cell])
                .map_err(|e| Error::NumericalFailure(format!("rho = {}: {e}", grid.points[cell])))?;
        }
        Ok(())
    }

    /// Sets `rho` and refactorizes the spatial system exactly.
    pub fn set_rho(&self, st: &mut ChainState, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::OutOfSupport("rho"));
        }
        if self.spec.is_contemporaneous() {
            let a = weights(&st.params.omega, self.spec.row_standardize).spatial_filter(rho);
            st.params.system = Some(SpatialSystemState::new(a, self.config.refresh_interval)?);
        }
        st.params.rho = rho;
        self.refresh_residuals(st);
        Ok(())
    }

    pub(crate) fn set_sigma2(&self, st: &mut ChainState, sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::OutOfSupport("sigma2"));
        }
        st.params.sigma2 = sigma2;
        Ok(())
    }

    fn check_entry(&self, i: usize, j: usize) -> Result<()> {
        let n = self.data.n();
        if i >= n || j >= n || i == j {
            return Err(Error::config(
                "entry",
                format!("({i}, {j}) is not an off-diagonal entry of an {n} x {n} matrix"),
            ));
        }
        Ok(())
    }

    /// Weight row `row` would have with `omega_row,col = value`.
    fn proposed_row(&self, st: &ChainState, row: usize, col: usize, value: bool) -> (usize, Vec<f64>) {
        let omega = &st.params.omega;
        let cur = omega.get(row, col);
        let new_sum = match (cur, value) {
            (false, true) => st.row_sums[row] + 1,
            (true, false) => st.row_sums[row] - 1,
            _ => st.row_sums[row],
        };
        let c = link_weight(new_sum, self.spec.row_standardize);
        let new_w = omega
            .row(row)
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let linked = if k == col { value } else { v == 1 };
                if linked {
                    c
                } else {
                    0.0
                }
            })
            .collect();
        (new_sum, new_w)
    }

    fn weight(&self, st: &ChainState, i: usize, j: usize) -> f64 {
        if st.params.omega.get(i, j) {
            link_weight(st.row_sums[i], self.spec.row_standardize)
        } else {
            0.0
        }
    }

    /// Quantities of the state with `omega_ij` flipped (and `omega_ji` when
    /// symmetric), or the reason the flip is inadmissible.
    fn evaluate_flip(&self, st: &ChainState, i: usize, j: usize) -> std::result::Result<Flip, Rejection> {
        let (n, t) = (self.data.n(), self.data.t());
        let value = !st.params.omega.get(i, j);
        let rows: &[(usize, usize)] = if self.spec.symmetric_omega {
            &[(i, j), (j, i)]
        } else {
            &[(i, j)]
        };
        let y = self.data.y();
        let rho = st.params.rho;
        let sign = if value { 1.0 } else { -1.0 };
        let mut rss = st.rss;
        let mut edits = Vec::with_capacity(rows.len());
        for &(row, col) in rows {
            let (new_sum, new_w) = self.proposed_row(st, row, col, value);
            let c = link_weight(new_sum, self.spec.row_standardize);
            let mut new_resid = Vec::with_capacity(t);
            for p in 0..t {
                let idx = p * n + row;
                let lag = st.lag_sums[idx] + sign * self.src[p * n + col];
                let e = y[idx] - rho * c * lag - st.fitted[idx];
                rss += e * e - st.resid[idx] * st.resid[idx];
                new_resid.push(e);
            }
            let delta = st.params.system.as_ref().map(|_| {
                DVector::from_fn(n, |k, _| -rho * (new_w[k] - self.weight(st, row, k)))
            });
            edits.push(RowEdit {
                row,
                col,
                new_sum,
                new_w,
                delta,
                new_resid,
            });
        }

        let log_det = match &st.params.system {
            Some(system) => {
                let res = match edits.as_slice() {
                    [a] => system.rank_one_determinant(a.row, a.delta.as_ref().unwrap()),
                    [a, b] => system.rank_two_determinant(
                        (a.row, a.delta.as_ref().unwrap()),
                        (b.row, b.delta.as_ref().unwrap()),
                    ),
                    _ => unreachable!(),
                };
                Some(res.map_err(|_| Rejection::Determinant)?)
            }
            None => None,
        };

        let diag_w2 = if self.config.identification {
            let d = self.proposed_diag(st, &edits);
            if proportional_to_ones(&d) {
                return Err(Rejection::Identification);
            }
            Some(d)
        } else {
            None
        };

        Ok(Flip {
            value,
            edits,
            rss: rss.max(0.0),
            log_det,
            diag_w2,
        })
    }

    /// `diag(W'^2)` after the row edits, from the cached `diag(W^2)`.
    fn proposed_diag(&self, st: &ChainState, edits: &[RowEdit]) -> Vec<f64> {
        let n = self.data.n();
        let changed = |m: usize| edits.iter().find(|e| e.row == m);
        let new_weight = |m: usize, k: usize| match changed(m) {
            Some(e) => e.new_w[k],
            None => self.weight(st, m, k),
        };
        let mut d = st.diag_w2.clone();
        for (k, dk) in d.iter_mut().enumerate() {
            if changed(k).is_some() {
                *dk = (0..n).map(|m| new_weight(k, m) * new_weight(m, k)).sum();
            } else {
                for e in edits {
                    let w_kc = self.weight(st, k, e.row);
                    if w_kc != 0.0 {
                        *dk += w_kc * (e.new_w[k] - self.weight(st, e.row, k));
                    }
                }
            }
        }
        d
    }

    /// Log prior odds of the flip, from row `i` alone.
    fn prior_log_ratio(&self, st: &ChainState, i: usize, j: usize, value: bool) -> f64 {
        let row = st.params.omega.row(i);
        let prior = &self.priors.omega;
        prior.omega_log_prior(i, row, j, value) - prior.omega_log_prior(i, row, j, !value)
    }

    fn flip_log_ratio(&self, st: &ChainState, i: usize, j: usize, flip: &Flip) -> f64 {
        let mut lr = self.prior_log_ratio(st, i, j, flip.value);
        if self.config.likelihood {
            if let (Some(new), Some(system)) = (flip.log_det, &st.params.system) {
                lr += self.data.t() as f64 * (new - system.log_det());
            }
            lr -= (flip.rss - st.rss) / (2.0 * st.params.sigma2);
        }
        lr
    }

    /// `P(omega_ij = 1 | everything else)`.
    pub fn omega_conditional(&self, st: &ChainState, i: usize, j: usize) -> Result<EntryConditional> {
        self.check_entry(i, j)?;
        if let Some(pinned) = self.priors.omega.mask(i, j) {
            return Ok(EntryConditional::Pinned(pinned));
        }
        let (a, b) = self.visit_order(i, j);
        Ok(match self.evaluate_flip(st, a, b) {
            Err(r) => EntryConditional::Rejected(r),
            Ok(flip) => {
                let lr = self.flip_log_ratio(st, a, b, &flip);
                let log_odds = if flip.value { lr } else { -lr };
                EntryConditional::Bernoulli(logistic(log_odds))
            }
        })
    }

    /// The symmetric pair is always handled through its upper entry.
    fn visit_order(&self, i: usize, j: usize) -> (usize, usize) {
        if self.spec.symmetric_omega && j < i {
            (j, i)
        } else {
            (i, j)
        }
    }

    /// Gibbs update of one indicator (one pair when symmetric).
    pub fn sample_omega_entry<R: Rng + ?Sized>(
        &self,
        st: &mut ChainState,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<EntryOutcome> {
        self.check_entry(i, j)?;
        if self.priors.omega.mask(i, j).is_some() {
            return Ok(EntryOutcome::Pinned);
        }
        let (i, j) = self.visit_order(i, j);
        let flip = match self.evaluate_flip(st, i, j) {
            Ok(f) => f,
            Err(r) => return Ok(EntryOutcome::Rejected(r)),
        };
        let lr = self.flip_log_ratio(st, i, j, &flip);
        let p_flip = logistic(lr);
        let u: f64 = rng.random();
        if u < p_flip {
            self.apply_flip(st, flip)?;
            Ok(EntryOutcome::Flipped)
        } else {
            Ok(EntryOutcome::Kept)
        }
    }

    fn apply_flip(&self, st: &mut ChainState, flip: Flip) -> Result<()> {
        let n = self.data.n();
        if let Some(system) = st.params.system.as_mut() {
            match flip.edits.as_slice() {
                [a] => system.rank_one_apply(a.row, a.delta.as_ref().unwrap())?,
                [a, b] => system.rank_two_apply(
                    (a.row, a.delta.as_ref().unwrap()),
                    (b.row, b.delta.as_ref().unwrap()),
                )?,
                _ => unreachable!(),
            }
        }
        let sign = if flip.value { 1.0 } else { -1.0 };
        for e in &flip.edits {
            st.params.omega.set(e.row, e.col, flip.value);
            st.row_sums[e.row] = e.new_sum;
            for (p, &r) in e.new_resid.iter().enumerate() {
                st.lag_sums[p * n + e.row] += sign * self.src[p * n + e.col];
                st.resid[p * n + e.row] = r;
            }
        }
        st.rss = flip.rss;
        st.diag_w2 = match flip.diag_w2 {
            Some(d) => d,
            None => self.proposed_diag_exact(st),
        };
        Ok(())
    }

    fn proposed_diag_exact(&self, st: &ChainState) -> Vec<f64> {
        if self.config.identification {
            diag_w_squared(&st.params.omega, self.spec.row_standardize)
        } else {
            // Not consulted without the identification check.
            Vec::new()
        }
    }

    /// One pass over every free indicator in a fresh random order.
    ///
    /// Caches are recomputed exactly at the start of the sweep.
    pub fn sweep_omega<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> Result<SweepStats> {
        self.rebuild(st);
        let mut order = self.free.clone();
        order.shuffle(rng);
        let mut stats = SweepStats::default();
        let tracks_det = st.params.system.is_some();
        for (i, j) in order {
            let outcome = self.sample_omega_entry(st, i, j, rng)?;
            stats.visits += 1;
            if tracks_det {
                stats.determinant_proposals += 1;
            }
            match outcome {
                EntryOutcome::Flipped => stats.flips += 1,
                EntryOutcome::Rejected(Rejection::Determinant) => stats.determinant_rejections += 1,
                EntryOutcome::Rejected(Rejection::Identification) => {
                    stats.identification_rejections += 1
                }
                EntryOutcome::Kept | EntryOutcome::Pinned => {}
            }
        }
        if 2 * stats.determinant_rejections > stats.determinant_proposals {
            return Err(Error::PathologicalRejection {
                failed: stats.determinant_rejections,
                proposed: stats.determinant_proposals,
            });
        }
        Ok(stats)
    }

    /// Whether the design carries a dummy column for every unit.
    pub fn has_unit_effects(&self) -> bool {
        self.unit_columns.is_some()
    }

    /// Proposal of [`Gibbs::shift_move`] at `(i, j)`: the log acceptance
    /// ratio and the proposed `beta`. `None` when the entry is pinned or the
    /// flip is inadmissible.
    pub fn shift_proposal(&self, st: &ChainState, i: usize, j: usize) -> Result<Option<(f64, DVector<f64>)>> {
        Ok(match self.propose_shift(st, i, j)? {
            Ok(p) => {
                let mut beta = st.params.beta.clone();
                for &(_, k, shift) in &p.shifts {
                    beta[k] += shift;
                }
                Some((p.log_ratio, beta))
            }
            Err(_) => None,
        })
    }

    fn propose_shift(&self, st: &ChainState, i: usize, j: usize) -> Result<std::result::Result<Shift, EntryOutcome>> {
        self.check_entry(i, j)?;
        let Some(columns) = &self.unit_columns else {
            return Err(Error::config("sampler.shift_moves", "the design has no unit effects"));
        };
        if self.priors.omega.mask(i, j).is_some() {
            return Ok(Err(EntryOutcome::Pinned));
        }
        let (i, j) = self.visit_order(i, j);
        let mut flip = match self.evaluate_flip(st, i, j) {
            Ok(f) => f,
            Err(r) => return Ok(Err(EntryOutcome::Rejected(r))),
        };
        let (n, t) = (self.data.n(), self.data.t());
        let mut lr = self.prior_log_ratio(st, i, j, flip.value);
        if let (Some(new), Some(system)) = (flip.log_det, &st.params.system) {
            lr += t as f64 * (new - system.log_det());
        }
        let mut rss = st.rss;
        let mut shifts = Vec::with_capacity(flip.edits.len());
        for e in &mut flip.edits {
            let old = |p: usize| st.resid[p * n + e.row];
            let shift = (0..t).map(|p| e.new_resid[p] - old(p)).sum::<f64>() / t as f64;
            for (p, r) in e.new_resid.iter_mut().enumerate() {
                *r -= shift;
                rss += *r * *r - old(p) * old(p);
            }
            let k = columns[e.row];
            let b = st.params.beta[k];
            lr -= 0.5 * ((b + shift).powi(2) - b * b) / self.priors.params.beta_variance[k];
            shifts.push((e.row, k, shift));
        }
        flip.rss = rss.max(0.0);
        lr -= (flip.rss - st.rss) / (2.0 * st.params.sigma2);
        Ok(Ok(Shift {
            flip,
            shifts,
            log_ratio: lr,
        }))
    }

    /// Metropolis-Hastings move that flips `omega_ij` (and `omega_ji` when
    /// symmetric) and moves the effect of every edited unit by the mean
    /// change of its residuals, so the unit's average fit is kept.
    ///
    /// Single-site updates conditional on `beta` rarely undo a link whose
    /// level the unit effect has absorbed; this move proposes both together.
    /// The shift depends on the data, `rho` and the two adjacency states
    /// only, so the reverse move undoes it and the proposal is symmetric.
    pub fn shift_move<R: Rng + ?Sized>(
        &self,
        st: &mut ChainState,
        i: usize,
        j: usize,
        rng: &mut R,
    ) -> Result<EntryOutcome> {
        let proposal = match self.propose_shift(st, i, j)? {
            Ok(p) => p,
            Err(outcome) => return Ok(outcome),
        };
        let u: f64 = rng.random();
        if u.ln() >= proposal.log_ratio {
            return Ok(EntryOutcome::Kept);
        }
        let n = self.data.n();
        self.apply_flip(st, proposal.flip)?;
        for (row, k, shift) in proposal.shifts {
            st.params.beta[k] += shift;
            for p in 0..self.data.t() {
                st.fitted[p * n + row] += shift;
            }
        }
        Ok(EntryOutcome::Flipped)
    }

    /// One pass of [`Gibbs::shift_move`] over every free indicator in a
    /// fresh random order.
    pub fn sweep_shifts<R: Rng + ?Sized>(&self, st: &mut ChainState, rng: &mut R) -> Result<ShiftStats> {
        self.rebuild(st);
        let mut order = self.free.clone();
        order.shuffle(rng);
        let mut stats = ShiftStats::default();
        for (i, j) in order {
            stats.proposals += 1;
            if self.shift_move(st, i, j, rng)? == EntryOutcome::Flipped {
                stats.accepted += 1;
            }
        }
        Ok(stats)
    }
}

/// Column of `x` that is the indicator of unit `i`'s rows, for every unit.
fn unit_dummy_columns(x: &DMatrix<f64>, n: usize) -> Option<Vec<usize>> {
    (0..n)
        .map(|i| {
            (0..x.ncols()).find(|&k| {
                x.column(k)
                    .iter()
                    .enumerate()
                    .all(|(r, &v)| v == if r % n == i { 1.0 } else { 0.0 })
            })
        })
        .collect()
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `1 / Gamma(shape, scale = 1 / rate)`.
pub(crate) fn inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::NumericalFailure(format!("IG({shape}, {rate}): {e}")))?;
    Ok(1.0 / gamma.sample(rng))
}
