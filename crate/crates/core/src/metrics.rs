//! Recovery and convergence measures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AdjacencyMatrix;
use crate::priors::OmegaPrior;
use crate::sampler::ChainOutput;

/// Row-major `N x N` flags of the indicators that are estimated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeMask {
    n: usize,
    free: Vec<bool>,
}

impl FreeMask {
    /// Every off-diagonal entry.
    pub fn off_diagonal(n: usize) -> Self {
        FreeMask {
            n,
            free: (0..n * n).map(|k| k / n != k % n).collect(),
        }
    }

    /// Entries the prior leaves unpinned.
    pub fn from_prior(prior: &OmegaPrior) -> Self {
        let n = prior.n();
        FreeMask {
            n,
            free: (0..n * n).map(|k| prior.mask(k / n, k % n).is_none()).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.free[i * self.n + j]
    }

    pub fn count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }
}

fn check_n(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Mean over draws of the share of free entries that match the truth.
pub fn accuracy(draws: &[AdjacencyMatrix], truth: &AdjacencyMatrix, mask: &FreeMask) -> Result<f64> {
    check_n("accuracy mask", truth.n(), mask.n())?;
    if draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    let free = mask.count();
    if free == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for d in draws {
        check_n("accuracy draw", truth.n(), d.n())?;
        let hits = d
            .entries()
            .iter()
            .zip(truth.entries())
            .zip(&mask.free)
            .filter(|((a, b), &f)| f && a == b)
            .count();
        total += hits as f64 / free as f64;
    }
    Ok(total / draws.len() as f64)
}

/// [`accuracy`] from inclusion counts: a free entry is right in `count`
/// draws when the truth is 1 and in `draws - count` when it is 0.
pub fn accuracy_from_counts(
    counts: &DMatrix<u64>,
    draw_count: usize,
    truth: &AdjacencyMatrix,
    mask: &FreeMask,
) -> Result<f64> {
    let n = truth.n();
    check_n("accuracy counts", n, counts.nrows())?;
    check_n("accuracy mask", n, mask.n())?;
    if draw_count == 0 {
        return Err(Error::EmptyChain);
    }
    let free = mask.count();
    if free == 0 {
        return Ok(1.0);
    }
    let mut hits = 0u64;
    for i in 0..n {
        for j in 0..n {
            if mask.is_free(i, j) {
                let c = counts[(i, j)];
                hits += if truth.get(i, j) { c } else { draw_count as u64 - c };
            }
        }
    }
    Ok(hits as f64 / (free as f64 * draw_count as f64))
}

pub fn chain_accuracy(chain: &ChainOutput, truth: &AdjacencyMatrix, mask: &FreeMask) -> Result<f64> {
    accuracy_from_counts(&chain.inclusion_counts, chain.draw_count, truth, mask)
}

/// Root mean squared difference across components.
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_n("rmse", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Average of per-replication RMSEs.
///
/// Computed about the first value, so identical inputs average to exactly
/// that value.
pub fn mean_rmse(per_replication: &[f64]) -> Result<f64> {
    let &first = per_replication.first().ok_or(Error::EmptyChain)?;
    let shift: f64 = per_replication.iter().map(|x| x - first).sum();
    Ok(first + shift / per_replication.len() as f64)
}

/// One Monte Carlo replication of one prior variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub rmse_beta: f64,
    pub rmse_rho: f64,
    pub accuracy: f64,
}

/// Averages over the successful replications of one cell and variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub rmse_beta: f64,
    pub rmse_rho: f64,
    pub accuracy_omega: f64,
    pub records: Vec<ReplicationRecord>,
}

impl McResult {
    pub fn from_records(records: Vec<ReplicationRecord>) -> Result<Self> {
        let pick = |f: fn(&ReplicationRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let rmse_beta = mean_rmse(&pick(|r| r.rmse_beta))?;
        let rmse_rho = mean_rmse(&pick(|r| r.rmse_rho))?;
        let accuracy_omega = mean_rmse(&pick(|r| r.accuracy))?;
        Ok(McResult {
            rmse_beta,
            rmse_rho,
            accuracy_omega,
            records,
        })
    }
}

/// Posterior inclusion probabilities.
pub fn inclusion_matrix(chain: &ChainOutput) -> Result<DMatrix<f64>> {
    chain.inclusion_probabilities()
}

/// Mean row sum of the inclusion matrix: the posterior expected number of
/// neighbours per unit.
pub fn avg_neighbours(inclusion: &DMatrix<f64>) -> f64 {
    let n = inclusion.nrows();
    if n == 0 {
        return 0.0;
    }
    inclusion.sum() / n as f64
}

/// Geweke's convergence score comparing the first `first_frac` and the last
/// `last_frac` of a chain.
///
/// The variance of each window mean is estimated by batch means:
/// `floor(sqrt(L))` batches of equal length, `var(batch means) / batches`.
pub fn geweke_z(draws: &[f64], first_frac: f64, last_frac: f64) -> Result<f64> {
    const MIN_DRAWS: usize = 20;
    if draws.len() < MIN_DRAWS {
        return Err(Error::TooFewDraws {
            needed: MIN_DRAWS,
            found: draws.len(),
        });
    }
    if !(first_frac > 0.0 && last_frac > 0.0 && first_frac + last_frac <= 1.0) {
        return Err(Error::config(
            "geweke fractions",
            "must be positive and sum to at most 1",
        ));
    }
    let len = draws.len();
    let na = ((first_frac * len as f64).floor() as usize).max(2);
    let nb = ((last_frac * len as f64).floor() as usize).max(2);
    let (ma, va) = window_mean_variance(&draws[..na]);
    let (mb, vb) = window_mean_variance(&draws[len - nb..]);
    let diff = ma - mb;
    let var = va + vb;
    if var > 0.0 {
        Ok(diff / var.sqrt())
    } else if diff == 0.0 {
        Ok(0.0)
    } else {
        Ok(diff.signum() * f64::INFINITY)
    }
}

fn window_mean_variance(x: &[f64]) -> (f64, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let batches = ((x.len() as f64).sqrt().floor() as usize).max(2);
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mm = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mm) * (m - mm)).sum::<f64>() / (batches - 1) as f64;
    (mean, var / batches as f64)
}

/// Posterior mean and standard deviation of a scalar chain.
pub fn mean_sd(draws: &[f64]) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = if draws.len() > 1 {
        draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Column `k` of a sequence of vectors.
pub fn component(draws: &[DVector<f64>], k: usize) -> Vec<f64> {
    draws.iter().map(|d| d[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sym5(pairs: &[(usize, usize)]) -> AdjacencyMatrix {
        let mut m = AdjacencyMatrix::empty(5, true);
        for &(i, j) in pairs {
            m.set(i, j, true);
        }
        m
    }

    #[test]
    fn perfect_draws_score_one() {
        let truth = sym5(&[(0, 1), (2, 4)]);
        let mask = FreeMask::off_diagonal(5);
        assert_eq!(accuracy(&[truth.clone(), truth.clone()], &truth, &mask).unwrap(), 1.0);
    }

    #[test]
    fn one_wrong_pair_in_ten() {
        let truth = sym5(&[(0, 1), (2, 4)]);
        let mask = FreeMask::off_diagonal(5);
        let draws = [sym5(&[(0, 1)]), sym5(&[(0, 1), (2, 4), (1, 3)]), sym5(&[(2, 4)])];
        assert!((accuracy(&draws, &truth, &mask).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_draw_is_an_entry_count() {
        let truth = sym5(&[(0, 1), (2, 4), (3, 4)]);
        let draw = sym5(&[(0, 1), (1, 2)]);
        let mask = FreeMask::off_diagonal(5);
        let mut hits = 0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j && truth.get(i, j) == draw.get(i, j) {
                    hits += 1;
                }
            }
        }
        assert_eq!(accuracy(&[draw], &truth, &mask).unwrap(), hits as f64 / 20.0);
    }

    #[test]
    fn counts_agree_with_draws() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let truth = sym5(&[(0, 1), (2, 4)]);
        let mask = FreeMask::off_diagonal(5);
        let draws: Vec<AdjacencyMatrix> = (0..30)
            .map(|_| {
                let mut m = AdjacencyMatrix::empty(5, false);
                for i in 0..5 {
                    for j in 0..5 {
                        if i != j && r.random_bool(0.3) {
                            m.set(i, j, true);
                        }
                    }
                }
                m
            })
            .collect();
        let mut counts = DMatrix::<u64>::zeros(5, 5);
        for d in &draws {
            for i in 0..5 {
                for j in 0..5 {
                    counts[(i, j)] += d.get(i, j) as u64;
                }
            }
        }
        let a = accuracy(&draws, &truth, &mask).unwrap();
        let b = accuracy_from_counts(&counts, 30, &truth, &mask).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.5], &[0.8]).unwrap() - 0.3).abs() < 1e-15);
        assert!((mean_rmse(&[0.1, 0.3]).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn replication_averages() {
        let rec = |k, b, r, a| ReplicationRecord {
            replication: k,
            rmse_beta: b,
            rmse_rho: r,
            accuracy: a,
        };
        let res = McResult::from_records(vec![rec(0, 0.1, 0.2, 0.9), rec(1, 0.3, 0.4, 1.0)]).unwrap();
        assert!((res.rmse_beta - 0.2).abs() < 1e-15);
        assert!((res.rmse_rho - 0.3).abs() < 1e-15);
        assert!((res.accuracy_omega - 0.95).abs() < 1e-15);
        assert!(McResult::from_records(Vec::new()).is_err());
        let same = McResult::from_records(vec![rec(0, 0.1, 0.1, 0.99); 3]).unwrap();
        assert_eq!(same.accuracy_omega, 0.99);
    }

    #[test]
    fn avg_neighbours_of_regular_inclusion() {
        let n = 6;
        let incl = DMatrix::from_fn(n, n, |i, j| if (j + n - i) % n <= 3 && i != j { 1.0 } else { 0.0 });
        assert_eq!(avg_neighbours(&incl), 3.0);
    }

    #[test]
    fn geweke_equal_windows_is_zero() {
        // First 10% and last 50% both average 1.
        let mut x = vec![1.0; 100];
        for k in (10..50).step_by(2) {
            x[k] = 0.0;
            x[k + 1] = 2.0;
        }
        for k in (50..100).step_by(2) {
            x[k] = 3.0;
            x[k + 1] = -1.0;
        }
        assert_eq!(geweke_z(&x, 0.1, 0.5).unwrap(), 0.0);
        assert!(matches!(geweke_z(&x[..19], 0.1, 0.5), Err(Error::TooFewDraws { .. })));
    }

    #[test]
    fn geweke_flags_drift() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..10_000)
            .map(|k| k as f64 / 10_000.0 + r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        assert!(geweke_z(&x, 0.1, 0.5).unwrap().abs() > 3.0);
    }

    proptest! {
        #[test]
        fn rmse_of_self_is_zero(v in prop::collection::vec(-1e6f64..1e6, 0..20)) {
            prop_assert_eq!(rmse(&v, &v).unwrap(), 0.0);
        }

        #[test]
        fn accuracy_ignores_draw_order(bits in prop::collection::vec(prop::collection::vec(0u8..2, 12), 1..6)) {
            let to_m = |b: &Vec<u8>| {
                let mut e = vec![0u8; 16];
                let mut k = 0;
                for i in 0..4 {
                    for j in 0..4 {
                        if i != j {
                            e[i * 4 + j] = b[k];
                            k += 1;
                        }
                    }
                }
                AdjacencyMatrix::from_entries(4, e, false).unwrap()
            };
            let draws: Vec<_> = bits.iter().map(to_m).collect();
            let truth = to_m(&bits[0]);
            let mask = FreeMask::off_diagonal(4);
            let mut rev = draws.clone();
            rev.reverse();
            let a = accuracy(&draws, &truth, &mask).unwrap();
            let b = accuracy(&rev, &truth, &mask).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a == 1.0, draws.iter().all(|d| d == &truth));
        }
    }
}
