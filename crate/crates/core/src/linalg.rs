//! Dense kernel for `A = I - rho * W`.
//!
//! Every adjacency flip changes one row of `A` (two rows when the adjacency
//! matrix is symmetric). [`SpatialSystemState`] keeps `A^{-1}` and `log|A|`
//! current under such edits:
//!
//! * the matrix determinant lemma gives
//!   `|A + e_i d'| = (1 + d' A^{-1} e_i) |A|`, an `O(N)` query;
//! * Sherman-Morrison gives
//!   `(A + e_i d')^{-1} = A^{-1} - A^{-1} e_i d' A^{-1} / (1 + d' A^{-1} e_i)`,
//!   an `O(N^2)` update.
//!
//! After `refresh_interval` accepted edits the state is refactorized exactly to
//! bound floating-point drift.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

pub const DEFAULT_REFRESH_INTERVAL: usize = 64;

/// Relative pivot size below which a matrix is treated as singular.
const PIVOT_TOLERANCE: f64 = 1e-12;

/// Square dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn identity(n: usize) -> Self {
        SquareMatrix(DMatrix::identity(n, n))
    }

    /// Builds an `n x n` matrix from `n*n` entries in row-major order.
    pub fn from_row_slice(n: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                context: "square matrix entries",
                expected: n * n,
                found: entries.len(),
            });
        }
        Ok(SquareMatrix(DMatrix::from_row_slice(n, n, entries)))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "square matrix columns",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(SquareMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.0.row(i).transpose()
    }
}

/// Signed log-determinant and inverse by in-place Gauss-Jordan elimination
/// with partial pivoting.
///
/// The pivots are those of the partially pivoted LU factorization, so the
/// singularity rule matches [`lu_log_det`]. Returns `None` when a pivot is
/// (relatively) zero.
fn lu_log_det_inverse(a: &DMatrix<f64>) -> Option<(f64, f64, DMatrix<f64>)> {
    let n = a.nrows();
    // Row-major working copy: rows are contiguous for the elimination loops.
    let mut m: Vec<f64> = a.transpose().as_slice().to_vec();
    let mut swaps = Vec::new();
    let mut pivots = Vec::with_capacity(n);
    let mut pivot_row = vec![0.0; n];
    for k in 0..n {
        let p = (k..n)
            .max_by(|&x, &y| m[x * n + k].abs().total_cmp(&m[y * n + k].abs()))
            .expect("non-empty range");
        if p != k {
            for j in 0..n {
                m.swap(k * n + j, p * n + j);
            }
            swaps.push((k, p));
        }
        let piv = m[k * n + k];
        if !piv.is_finite() || piv == 0.0 {
            return None;
        }
        pivots.push(piv);
        m[k * n + k] = 1.0;
        let inv = 1.0 / piv;
        for x in &mut m[k * n..(k + 1) * n] {
            *x *= inv;
        }
        pivot_row.copy_from_slice(&m[k * n..(k + 1) * n]);
        for r in 0..n {
            if r == k {
                continue;
            }
            let f = m[r * n + k];
            if f != 0.0 {
                m[r * n + k] = 0.0;
                for (x, &pk) in m[r * n..(r + 1) * n].iter_mut().zip(&pivot_row) {
                    *x -= f * pk;
                }
            }
        }
    }
    // Row swaps of A are column swaps of A^{-1}, undone in reverse.
    for &(k, p) in swaps.iter().rev() {
        for r in 0..n {
            m.swap(r * n + k, r * n + p);
        }
    }
    let scale = pivots.iter().fold(0.0f64, |acc, p| acc.max(p.abs())).max(1.0);
    if pivots.iter().any(|p| p.abs() < PIVOT_TOLERANCE * scale) {
        return None;
    }
    let mut sign = if swaps.len() % 2 == 0 { 1.0 } else { -1.0 };
    let mut log_abs = 0.0;
    for p in &pivots {
        sign *= p.signum();
        log_abs += p.abs().ln();
    }
    Some((sign, log_abs, DMatrix::from_row_slice(n, n, &m)))
}

/// Sign and `log|det|` of a square matrix, `None` if singular.
pub fn lu_log_det(a: &DMatrix<f64>) -> Option<(f64, f64)> {
    if a.nrows() == 0 {
        return Some((1.0, 0.0));
    }
    lu_sign_log_abs(&a.clone().lu())
}

fn lu_sign_log_abs(lu: &LU<f64, Dyn, Dyn>) -> Option<(f64, f64)> {
    let u = lu.u();
    let n = u.nrows();
    let max_pivot = (0..n).map(|k| u[(k, k)].abs()).fold(0.0f64, f64::max);
    let scale = max_pivot.max(1.0);
    let mut sign = lu.p().determinant::<f64>();
    let mut log_abs = 0.0;
    for k in 0..n {
        let p = u[(k, k)];
        if !p.is_finite() || p.abs() < PIVOT_TOLERANCE * scale {
            return None;
        }
        sign *= p.signum();
        log_abs += p.abs().ln();
    }
    Some((sign, log_abs))
}

/// Cached `(A, A^{-1}, log|A|)` for the current spatial filter.
///
/// States with `det(A) <= 0` cannot be constructed.
#[derive(Debug, Clone)]
pub struct SpatialSystemState {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    log_det: f64,
    update_count: usize,
    refresh_interval: usize,
}

/// Exact factorization with the default refresh interval.
pub fn exact_factorize(a: SquareMatrix) -> Result<SpatialSystemState> {
    SpatialSystemState::new(a, DEFAULT_REFRESH_INTERVAL)
}

impl SpatialSystemState {
    pub fn new(a: SquareMatrix, refresh_interval: usize) -> Result<Self> {
        let a = a.into_matrix();
        let (sign, log_det, a_inv) = lu_log_det_inverse(&a).ok_or(Error::SingularMatrix)?;
        if sign <= 0.0 {
            return Err(Error::SingularMatrix);
        }
        Ok(SpatialSystemState {
            a,
            a_inv,
            log_det,
            update_count: 0,
            refresh_interval: refresh_interval.max(1),
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn refresh_interval(&self) -> usize {
        self.refresh_interval
    }

    fn check_row(&self, i: usize, delta: &DVector<f64>) -> Result<()> {
        let n = self.n();
        if i >= n {
            return Err(Error::DimensionMismatch {
                context: "row index",
                expected: n,
                found: i,
            });
        }
        if delta.len() != n {
            return Err(Error::DimensionMismatch {
                context: "row delta",
                expected: n,
                found: delta.len(),
            });
        }
        Ok(())
    }

    /// `1 + delta' A^{-1} e_i`.
    fn lemma_factor(&self, i: usize, delta: &DVector<f64>) -> f64 {
        1.0 + self.a_inv.column(i).dot(delta)
    }

    /// `log|A_z|` for `A_z` equal to `A` with `delta` added to row `i`.
    ///
    /// Pure query; the state is not modified.
    pub fn rank_one_determinant(&self, i: usize, delta: &DVector<f64>) -> Result<f64> {
        self.check_row(i, delta)?;
        let factor = self.lemma_factor(i, delta);
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveDeterminant { factor });
        }
        Ok(self.log_det + factor.ln())
    }

    /// `log|A_z|` after adding `delta_i` to row `i` and `delta_j` to row `j`.
    ///
    /// Equals two iterated applications of the determinant lemma, evaluated
    /// through the 2x2 capacitance matrix so that it needs no intermediate
    /// inverse and stays defined when the intermediate factor vanishes.
    pub fn rank_two_determinant(
        &self,
        (i, delta_i): (usize, &DVector<f64>),
        (j, delta_j): (usize, &DVector<f64>),
    ) -> Result<f64> {
        self.check_row(i, delta_i)?;
        self.check_row(j, delta_j)?;
        if i == j {
            let sum = delta_i + delta_j;
            return self.rank_one_determinant(i, &sum);
        }
        let c_ii = 1.0 + self.a_inv.column(i).dot(delta_i);
        let c_ij = self.a_inv.column(j).dot(delta_i);
        let c_ji = self.a_inv.column(i).dot(delta_j);
        let c_jj = 1.0 + self.a_inv.column(j).dot(delta_j);
        let factor = c_ii * c_jj - c_ij * c_ji;
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveDeterminant { factor });
        }
        Ok(self.log_det + factor.ln())
    }

    /// Adds `delta` to row `i`, updating the inverse by Sherman-Morrison and
    /// the log-determinant by the determinant lemma.
    ///
    /// On error the state is left untouched.
    pub fn rank_one_apply(&mut self, i: usize, delta: &DVector<f64>) -> Result<()> {
        self.check_row(i, delta)?;
        let factor = self.lemma_factor(i, delta);
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::NonPositiveDeterminant { factor });
        }
        let nonzero: Vec<(usize, f64)> = delta
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != 0.0)
            .map(|(k, &d)| (k, d))
            .collect();
        if nonzero.is_empty() {
            return Ok(());
        }
        for &(k, d) in &nonzero {
            self.a[(i, k)] += d;
        }
        self.update_count += 1;
        if self.update_count >= self.refresh_interval {
            return self.refactorize();
        }
        // A^{-1} -= u v' / factor with u = A^{-1} e_i and v' = delta' A^{-1};
        // v_k only reads column k, so each column is updated in one pass.
        let n = self.n();
        let u: Vec<f64> = self.a_inv.column(i).iter().copied().collect();
        let scale = -1.0 / factor;
        for col in self.a_inv.as_mut_slice().chunks_exact_mut(n) {
            let v: f64 = nonzero.iter().map(|&(m, d)| d * col[m]).sum();
            if v != 0.0 {
                let c = scale * v;
                for (x, &ui) in col.iter_mut().zip(&u) {
                    *x += c * ui;
                }
            }
        }
        self.log_det += factor.ln();
        Ok(())
    }

    /// Applies the row edits one after the other (each through
    /// [`rank_one_apply`](Self::rank_one_apply)). If an intermediate factor is
    /// numerically unusable the final matrix is factorized exactly instead.
    pub fn rank_two_apply(
        &mut self,
        (i, delta_i): (usize, &DVector<f64>),
        (j, delta_j): (usize, &DVector<f64>),
    ) -> Result<()> {
        // Validates the combined edit first so failure leaves the state intact.
        self.rank_two_determinant((i, delta_i), (j, delta_j))?;
        let first = self.lemma_factor(i, delta_i);
        if first > 1e-8 {
            self.rank_one_apply(i, delta_i)?;
            self.rank_one_apply(j, delta_j)
        } else {
            let mut a = self.a.clone();
            {
                let mut row = a.row_mut(i);
                row += delta_i.transpose();
            }
            {
                let mut row = a.row_mut(j);
                row += delta_j.transpose();
            }
            self.a = a;
            self.refactorize()
        }
    }

    /// Consuming convenience form of [`rank_one_apply`](Self::rank_one_apply).
    pub fn with_row_update(mut self, i: usize, delta: &DVector<f64>) -> Result<Self> {
        self.rank_one_apply(i, delta)?;
        Ok(self)
    }

    /// Recomputes the inverse and log-determinant of the current `A` exactly.
    pub fn refactorize(&mut self) -> Result<()> {
        let (sign, log_det, a_inv) =
            lu_log_det_inverse(&self.a).ok_or(Error::SingularMatrix)?;
        if sign <= 0.0 {
            return Err(Error::SingularMatrix);
        }
        self.a_inv = a_inv;
        self.log_det = log_det;
        self.update_count = 0;
        Ok(())
    }

    /// `max |A A^{-1} - I|`.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.n();
        let prod = &self.a * &self.a_inv;
        (prod - DMatrix::<f64>::identity(n, n)).amax()
    }
}

/// Eigenvalues of `W`, giving `log|I - rho W|` for many `rho` at `O(N)` each.
///
/// `|I - rho W| = prod_k (1 - rho lambda_k)`; complex eigenvalues come in
/// conjugate pairs whose product is positive, so the sign is carried by the
/// real eigenvalues alone.
#[derive(Debug, Clone)]
pub struct FilterSpectrum {
    real: Vec<f64>,
    complex: Vec<(f64, f64)>,
}

impl FilterSpectrum {
    /// `None` if the Schur iteration does not converge.
    pub fn new(w: &DMatrix<f64>) -> Option<Self> {
        let n = w.nrows();
        if n == 0 {
            return Some(FilterSpectrum {
                real: Vec::new(),
                complex: Vec::new(),
            });
        }
        let schur = w.clone().try_schur(f64::EPSILON, 10_000)?;
        let eig = schur.complex_eigenvalues();
        let scale = w.amax().max(1.0);
        let mut real = Vec::new();
        let mut complex = Vec::new();
        for z in eig.iter() {
            if z.im.abs() <= 1e-13 * scale {
                real.push(z.re);
            } else if z.im > 0.0 {
                complex.push((z.re, z.im));
            }
        }
        // Each conjugate pair contributes once with im > 0.
        if real.len() + 2 * complex.len() != n {
            return None;
        }
        Some(FilterSpectrum { real, complex })
    }

    /// `log|I - rho W|`, or `None` when the determinant is not positive.
    pub fn log_det(&self, rho: f64) -> Option<f64> {
        let mut log_abs = 0.0;
        let mut negative = false;
        for &l in &self.real {
            let f = 1.0 - rho * l;
            if f == 0.0 {
                return None;
            }
            negative ^= f < 0.0;
            log_abs += f.abs().ln();
        }
        for &(re, im) in &self.complex {
            let a = 1.0 - rho * re;
            let b = rho * im;
            log_abs += (a * a + b * b).ln();
        }
        (!negative).then_some(log_abs)
    }
}
