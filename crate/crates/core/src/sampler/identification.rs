use std::collections::VecDeque;

use crate::model::{weights, AdjacencyMatrix};

/// Relative spread below which `diag(W^2)` counts as constant.
pub(crate) const PROPORTIONALITY_TOLERANCE: f64 = 1e-12;

/// `diag(W^2)_k = sum_m w_km w_mk`.
pub fn diag_w_squared(omega: &AdjacencyMatrix, standardize: bool) -> Vec<f64> {
    let w = weights(omega, standardize);
    let w = w.matrix();
    let n = omega.n();
    (0..n)
        .map(|k| (0..n).map(|m| w[(k, m)] * w[(m, k)]).sum())
        .collect()
}

/// True when `d` is a nonzero multiple of the ones vector.
pub(crate) fn proportional_to_ones(d: &[f64]) -> bool {
    let max = d.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = d.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let scale = d.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if d.is_empty() || scale == 0.0 {
        return false;
    }
    max - min <= PROPORTIONALITY_TOLERANCE * scale
}

/// Whether `W = f(omega)` identifies `rho` and `W` separately.
///
/// Fails when `diag(W^2)` is proportional to the ones vector; the zero vector
/// (no reciprocal links at all) passes. Without the restriction of `rho` to
/// positive values the sign of `rho` is only identified for strongly connected
/// `W`, so `rho_positive_support = false` additionally requires that.
pub fn identification_check(
    omega: &AdjacencyMatrix,
    standardize: bool,
    rho_positive_support: bool,
) -> bool {
    if proportional_to_ones(&diag_w_squared(omega, standardize)) {
        return false;
    }
    rho_positive_support || strongly_connected(omega)
}

fn strongly_connected(omega: &AdjacencyMatrix) -> bool {
    let n = omega.n();
    if n <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for m in 0..n {
                let linked = if forward { omega.get(k, m) } else { omega.get(m, k) };
                if linked && !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full(n: usize) -> AdjacencyMatrix {
        let rows: Vec<Vec<u8>> = (0..n)
            .map(|i| (0..n).map(|j| (i != j) as u8).collect())
            .collect();
        AdjacencyMatrix::from_rows(&rows, true).unwrap()
    }

    #[test]
    fn fully_connected_fails() {
        assert!(!identification_check(&full(4), true, true));
        assert!(!identification_check(&full(4), false, true));
    }

    #[test]
    fn empty_passes() {
        let omega = AdjacencyMatrix::empty(4, false);
        assert_eq!(diag_w_squared(&omega, true), vec![0.0; 4]);
        assert!(identification_check(&omega, true, true));
    }

    #[test]
    fn ring_fails_and_path_passes() {
        // Every node of a symmetric ring has diag(W^2) = 1/2.
        let mut ring = AdjacencyMatrix::empty(5, true);
        for i in 0..5 {
            ring.set(i, (i + 1) % 5, true);
        }
        assert!(!identification_check(&ring, true, true));
        ring.set(0, 4, false);
        assert!(identification_check(&ring, true, true));
    }

    #[test]
    fn generic_random_matrix_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut passes = 0;
        for _ in 0..20 {
            let mut omega = AdjacencyMatrix::empty(5, false);
            for i in 0..5 {
                for j in 0..5 {
                    if i != j && rng.random_bool(0.5) {
                        omega.set(i, j, true);
                    }
                }
            }
            let d = diag_w_squared(&omega, true);
            let expected = !proportional_to_ones(&d);
            assert_eq!(identification_check(&omega, true, true), expected);
            passes += expected as usize;
        }
        assert!(passes >= 15);
    }

    #[test]
    fn connectivity_required_without_sign_restriction() {
        // Two disjoint reciprocal pairs plus a pendant: identified in diag but
        // not strongly connected.
        let mut omega = AdjacencyMatrix::empty(5, true);
        omega.set(0, 1, true);
        omega.set(2, 3, true);
        omega.set(3, 4, true);
        assert!(identification_check(&omega, true, true));
        assert!(!identification_check(&omega, true, false));
        omega.set(1, 2, true);
        assert!(identification_check(&omega, true, false));
    }
}
