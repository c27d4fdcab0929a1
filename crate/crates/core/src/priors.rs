//! Priors for `beta`, `sigma2`, `rho` and the adjacency indicators.
//!
//! Two families are available for `Omega`:
//!
//! * **Fixed**: independent Bernoulli(`p_ij`) indicators. The row count is
//!   then Binomial(`N-1`, `p`), which for `p = 1/2` favours dense rows.
//! * **Sparsity**: a Beta(`a`, `b`) hyperprior on the inclusion probability,
//!   integrated out per row. The row count becomes beta-binomial and the
//!   prior of a single indicator is proportional to
//!   `Gamma(a + s) Gamma(b + (N-1) - s)`, `s` the row sum. With `a = b = 1`
//!   every count `0..=N-1` is equally likely.
//!
//! In both families `p_ij = 0` or `1` pins the entry (hard exclusion or
//! inclusion).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaPriorFamily {
    Fixed,
    Sparsity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmegaPrior {
    family: OmegaPriorFamily,
    p_under: DMatrix<f64>,
    a_omega: f64,
    b_omega: f64,
}

fn uniform_inclusion(n: usize, p: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p })
}

impl OmegaPrior {
    /// Independent Bernoulli(`p`) on every off-diagonal entry.
    pub fn fixed(n: usize, p: f64) -> Result<Self> {
        Self::fixed_matrix(uniform_inclusion(n, p))
    }

    /// Independent Bernoulli priors with entry-specific inclusion
    /// probabilities. The diagonal is forced to zero.
    pub fn fixed_matrix(p_under: DMatrix<f64>) -> Result<Self> {
        let p_under = validate_inclusion(p_under)?;
        Ok(OmegaPrior {
            family: OmegaPriorFamily::Fixed,
            p_under,
            a_omega: 1.0,
            b_omega: 1.0,
        })
    }

    /// Beta-binomial prior on each row count.
    pub fn sparsity(n: usize, a_omega: f64, b_omega: f64) -> Result<Self> {
        if !(a_omega > 0.0 && a_omega.is_finite()) {
            return Err(Error::config("priors.omega.a", "must be positive"));
        }
        if !(b_omega > 0.0 && b_omega.is_finite()) {
            return Err(Error::config("priors.omega.b", "must be positive"));
        }
        Ok(OmegaPrior {
            family: OmegaPriorFamily::Sparsity,
            p_under: uniform_inclusion(n, 0.5),
            a_omega,
            b_omega,
        })
    }

    /// Pins entries: `1` forces inclusion, `0` exclusion, anything strictly
    /// between leaves the entry free (for the fixed family it is also the
    /// inclusion probability).
    pub fn with_inclusion(mut self, p_under: DMatrix<f64>) -> Result<Self> {
        if p_under.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "inclusion probability matrix",
                expected: self.n(),
                found: p_under.nrows(),
            });
        }
        self.p_under = validate_inclusion(p_under)?;
        Ok(self)
    }

    pub fn family(&self) -> OmegaPriorFamily {
        self.family
    }

    pub fn n(&self) -> usize {
        self.p_under.nrows()
    }

    pub fn a_omega(&self) -> f64 {
        self.a_omega
    }

    pub fn b_omega(&self) -> f64 {
        self.b_omega
    }

    pub fn inclusion_probabilities(&self) -> &DMatrix<f64> {
        &self.p_under
    }

    /// `Some(value)` when the entry is pinned, `None` when it is estimated.
    pub fn mask(&self, i: usize, j: usize) -> Option<bool> {
        if i == j {
            return Some(false);
        }
        let p = self.p_under[(i, j)];
        if p <= 0.0 {
            Some(false)
        } else if p >= 1.0 {
            Some(true)
        } else {
            None
        }
    }

    /// Unnormalized log prior of `omega_ij = proposed`, the rest of row `i`
    /// as in `row`.
    ///
    /// Masked-out proposals get `-inf`; only differences between the two
    /// proposals are meaningful.
    pub fn omega_log_prior(&self, i: usize, row: &[u8], j: usize, proposed: bool) -> f64 {
        if let Some(pinned) = self.mask(i, j) {
            return if pinned == proposed { 0.0 } else { f64::NEG_INFINITY };
        }
        match self.family {
            OmegaPriorFamily::Fixed => {
                let p = self.p_under[(i, j)];
                if proposed {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                }
            }
            OmegaPriorFamily::Sparsity => {
                let others: usize = row
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != j && k != i)
                    .map(|(_, &v)| v as usize)
                    .sum();
                let s = (others + proposed as usize) as f64;
                let free = (row.len() - 1) as f64;
                ln_gamma(self.a_omega + s) + ln_gamma(self.b_omega + free - s)
            }
        }
    }

    /// `log p(omega_ij = 1) - log p(omega_ij = 0)` for a free entry.
    pub fn log_odds(&self, i: usize, row: &[u8], j: usize) -> f64 {
        self.omega_log_prior(i, row, j, true) - self.omega_log_prior(i, row, j, false)
    }
}

fn validate_inclusion(mut p: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p.nrows() != p.ncols() {
        return Err(Error::DimensionMismatch {
            context: "inclusion probability matrix",
            expected: p.nrows(),
            found: p.ncols(),
        });
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config(
            "priors.omega.p",
            "inclusion probabilities must lie in [0, 1]",
        ));
    }
    p.fill_diagonal(0.0);
    Ok(p)
}

/// Sparsity prior with `a = 1` and `b` chosen so that the prior expected
/// number of neighbours per row is `m`: `b = ((N - 1) - m) / m`.
pub fn anchor_sparsity(m: f64, n: usize) -> Result<OmegaPrior> {
    let free = n.saturating_sub(1) as f64;
    if !(m > 0.0 && m < free) {
        return Err(Error::InvalidAnchor {
            m,
            max: n.saturating_sub(1),
        });
    }
    OmegaPrior::sparsity(n, 1.0, (free - m) / m)
}

/// Hyperparameters for `beta ~ N(0, V)`, `sigma2 ~ IG(a, b)` and
/// `rho ~ Beta(c, d)` on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPriors {
    /// Diagonal of `V`.
    pub beta_variance: DVector<f64>,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub rho_shape1: f64,
    pub rho_shape2: f64,
}

impl ParamPriors {
    /// Vague defaults: `V = 100 I`, `IG(0.01, 0.01)`, `Beta(1.01, 1.01)`.
    pub fn vague(q: usize) -> Self {
        ParamPriors {
            beta_variance: DVector::from_element(q, 100.0),
            sigma2_shape: 0.01,
            sigma2_rate: 0.01,
            rho_shape1: 1.01,
            rho_shape2: 1.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_variance.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::config("priors.beta_variance", "must be positive"));
        }
        for (field, v) in [
            ("priors.sigma2_shape", self.sigma2_shape),
            ("priors.sigma2_rate", self.sigma2_rate),
            ("priors.rho_shape1", self.rho_shape1),
            ("priors.rho_shape2", self.rho_shape2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn log_prior_rho(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::OutOfSupport("rho"));
        }
        Ok(self.log_prior_rho_unchecked(rho))
    }

    pub(crate) fn log_prior_rho_unchecked(&self, rho: f64) -> f64 {
        (self.rho_shape1 - 1.0) * rho.ln() + (self.rho_shape2 - 1.0) * (1.0 - rho).ln()
            - ln_beta(self.rho_shape1, self.rho_shape2)
    }

    pub fn log_prior_beta(&self, beta: &DVector<f64>) -> Result<f64> {
        if beta.len() != self.beta_variance.len() {
            return Err(Error::DimensionMismatch {
                context: "beta length",
                expected: self.beta_variance.len(),
                found: beta.len(),
            });
        }
        Ok(beta
            .iter()
            .zip(self.beta_variance.iter())
            .map(|(&b, &v)| -0.5 * (2.0 * PI * v).ln() - 0.5 * b * b / v)
            .sum())
    }

    /// Inverse-gamma log density, shape `a`, rate `b`:
    /// `a ln b - ln Gamma(a) - (a + 1) ln s - b / s`.
    pub fn log_prior_sigma2(&self, sigma2: f64) -> Result<f64> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::OutOfSupport("sigma2"));
        }
        let (a, b) = (self.sigma2_shape, self.sigma2_rate);
        Ok(a * b.ln() - ln_gamma(a) - (a + 1.0) * sigma2.ln() - b / sigma2)
    }
}

/// Complete prior configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub omega: OmegaPrior,
    pub params: ParamPriors,
}

impl Priors {
    pub fn new(omega: OmegaPrior, params: ParamPriors) -> Result<Self> {
        params.validate()?;
        Ok(Priors { omega, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn fixed_half_has_even_odds() {
        let prior = OmegaPrior::fixed(4, 0.5).unwrap();
        let row = [0, 1, 0, 1];
        assert_eq!(prior.omega_log_prior(0, &row, 2, true), -LN2);
        assert_eq!(prior.omega_log_prior(0, &row, 2, false), -LN2);
        assert_eq!(prior.log_odds(0, &row, 2), 0.0);
    }

    #[test]
    fn uniform_sparsity_odds_against_first_link() {
        let prior = OmegaPrior::sparsity(4, 1.0, 1.0).unwrap();
        let row = [0, 0, 0, 0];
        let one = prior.omega_log_prior(0, &row, 1, true);
        let zero = prior.omega_log_prior(0, &row, 1, false);
        assert!((one - 2f64.ln()).abs() < 1e-12);
        assert!((zero - 6f64.ln()).abs() < 1e-12);
        assert!(((one - zero).exp() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn current_value_of_entry_does_not_matter() {
        let prior = OmegaPrior::sparsity(5, 1.0, 2.0).unwrap();
        let with = [0, 1, 1, 0, 1];
        let without = [0, 1, 0, 0, 1];
        assert_eq!(prior.log_odds(0, &with, 2), prior.log_odds(0, &without, 2));
    }

    /// Enumerates every row of a free `N = 5` row and sums the unnormalized
    /// prior weight per count: with `a = b = 1` all counts get equal mass.
    #[test]
    fn uniform_sparsity_is_uniform_over_counts_by_enumeration() {
        let n = 5;
        let prior = OmegaPrior::sparsity(n, 1.0, 1.0).unwrap();
        let mut mass = vec![0.0; n];
        for bits in 0u32..(1 << (n - 1)) {
            let mut row = vec![0u8; n];
            for k in 0..n - 1 {
                row[k + 1] = ((bits >> k) & 1) as u8;
            }
            let s = row.iter().map(|&v| v as usize).sum::<usize>();
            // Full-row weight: Gamma(a + s) Gamma(b + N-1-s).
            let w = prior.omega_log_prior(0, &row, 1, row[1] == 1).exp();
            mass[s] += w;
        }
        let total: f64 = mass.iter().sum();
        for m in mass {
            assert!((m / total - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn hard_masks_pin_entries() {
        let mut p = DMatrix::from_element(3, 3, 0.5);
        p[(0, 1)] = 1.0;
        p[(0, 2)] = 0.0;
        for prior in [
            OmegaPrior::fixed_matrix(p.clone()).unwrap(),
            OmegaPrior::sparsity(3, 1.0, 1.0).unwrap().with_inclusion(p.clone()).unwrap(),
        ] {
            let row = [0, 1, 0];
            assert_eq!(prior.omega_log_prior(0, &row, 1, false), f64::NEG_INFINITY);
            assert_eq!(prior.omega_log_prior(0, &row, 2, true), f64::NEG_INFINITY);
            assert_eq!(prior.mask(0, 1), Some(true));
            assert_eq!(prior.mask(1, 0), None);
            assert_eq!(prior.mask(1, 1), Some(false));
        }
    }

    #[test]
    fn anchored_hyperparameters() {
        assert_eq!(anchor_sparsity(10.0, 21).unwrap().b_omega(), 1.0);
        assert_eq!(anchor_sparsity(10.0, 101).unwrap().b_omega(), 9.0);
        let p = anchor_sparsity(7.0, 27).unwrap();
        assert!((p.b_omega() - 19.0 / 7.0).abs() < 1e-15);
        assert_eq!(p.a_omega(), 1.0);
        assert!(matches!(anchor_sparsity(0.0, 10), Err(Error::InvalidAnchor { .. })));
        assert!(matches!(anchor_sparsity(9.0, 10), Err(Error::InvalidAnchor { .. })));
    }

    #[test]
    fn anchored_prior_has_requested_mean_count() {
        // Beta-binomial mean (N-1) a / (a + b).
        let n = 27;
        let p = anchor_sparsity(7.0, n).unwrap();
        let mean = (n - 1) as f64 * p.a_omega() / (p.a_omega() + p.b_omega());
        assert!((mean - 7.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_log_densities() {
        let mut pp = ParamPriors::vague(2);
        pp.rho_shape1 = 1.0;
        pp.rho_shape2 = 1.0;
        assert!(pp.log_prior_rho(0.3).unwrap().abs() < 1e-14);
        assert!(pp.log_prior_rho(1.0).is_err());

        let beta0 = pp.log_prior_beta(&DVector::zeros(2)).unwrap();
        let expected = -0.5 * ((2.0 * PI * 100.0) * (2.0 * PI * 100.0)).ln();
        assert!((beta0 - expected).abs() < 1e-12);

        assert!(matches!(pp.log_prior_sigma2(0.0), Err(Error::OutOfSupport(_))));
        assert!(matches!(pp.log_prior_sigma2(-1.0), Err(Error::OutOfSupport(_))));
    }

    #[test]
    fn inverse_gamma_density_integrates_to_one() {
        let pp = ParamPriors {
            sigma2_shape: 3.0,
            sigma2_rate: 2.0,
            ..ParamPriors::vague(1)
        };
        let h = 1e-4;
        let total: f64 = (1..2_000_000)
            .map(|k| pp.log_prior_sigma2(k as f64 * h).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }
}
