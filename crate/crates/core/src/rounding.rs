//! Caratheodory sparsification of allocations and integer pull counts.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Allocation, FeedbackKind};

/// Result of [`sparsify`]; `degraded` is set when a numerical rank decision
/// failed and the input was returned unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Sparsified {
    pub allocation: Allocation,
    pub degraded: bool,
}

/// Moment features preserved by sparsification: `[1; x; x∘x]` (the last block
/// only for non-binary arms) for semi-bandit feedback, `[1; x; upper(x x^T)]`
/// for bandit feedback.
pub fn moment_features(x: &[f64], kind: FeedbackKind, binary: bool) -> Vec<f64> {
    let mut f = Vec::with_capacity(1 + x.len() * (x.len() + 3) / 2);
    f.push(1.0);
    f.extend_from_slice(x);
    match kind {
        FeedbackKind::Semi => {
            if !binary {
                f.extend(x.iter().map(|v| v * v));
            }
        }
        FeedbackKind::Bandit => {
            for i in 0..x.len() {
                for j in i..x.len() {
                    f.push(x[i] * x[j]);
                }
            }
        }
    }
    f
}

/// Sparsity target: `d + 1` (binary semi), `2d + 1` (non-binary semi) or
/// `1 + d + d(d+1)/2 <= d^2 + d + 1` (bandit).
pub fn sparsity_budget(dim: usize, kind: FeedbackKind, binary: bool) -> usize {
    moment_features(&vec![0.0; dim], kind, binary).len()
}

/// Reduces the support of `tau` to at most [`sparsity_budget`] arms while
/// preserving total mass, the mean arm `sum tau_x x` and the design matrix.
/// Each step takes `p + 1` supported arms (`p` features), finds a null vector
/// of their feature matrix by SVD, and walks along it until a weight hits zero.
pub fn sparsify(tau: &Allocation, kind: FeedbackKind, arms: &[Vec<f64>]) -> Result<Sparsified> {
    if let Some(i) = tau.max_index() {
        if i >= arms.len() {
            return Err(Error::InvalidInput(format!("allocation index {i} out of range")));
        }
    }
    if tau.entries().iter().any(|(_, w)| !w.is_finite()) {
        return Err(Error::InvalidInput("allocation weights must be finite".into()));
    }
    let binary = tau.entries().iter().all(|(i, _)| crate::model::is_binary(&arms[*i]));
    let dim = arms.first().map(|a| a.len()).unwrap_or(0);
    let p = sparsity_budget(dim, kind, binary);
    let mut idx: Vec<usize> = tau.entries().iter().map(|(i, _)| *i).collect();
    let mut w: Vec<f64> = tau.entries().iter().map(|(_, w)| *w).collect();
    let feats: Vec<Vec<f64>> = idx.iter().map(|&i| moment_features(&arms[i], kind, binary)).collect();
    let mut feats = feats;
    while idx.len() > p {
        let n = p + 1;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for c in 0..n {
            for r in 0..p {
                m[(r, c)] = feats[c][r];
            }
        }
        let svd = m.svd(false, true);
        let Some(vt) = svd.v_t else {
            return Ok(Sparsified { allocation: tau.clone(), degraded: true });
        };
        let sv = &svd.singular_values;
        let (kmin, smin) =
            sv.iter().enumerate().fold((0, f64::INFINITY), |a, (k, s)| if *s < a.1 { (k, *s) } else { a });
        let smax = sv.max();
        if smin > 1e-10 * smax {
            return Ok(Sparsified { allocation: tau.clone(), degraded: true });
        }
        let v: Vec<f64> = vt.row(kmin).iter().copied().collect();
        // Walk tau - t v until the first weight with v > 0 reaches zero.
        let mut best: Option<(usize, f64)> = None;
        for c in 0..n {
            if v[c] > 1e-14 {
                let t = w[c] / v[c];
                if best.is_none_or(|(_, bt)| t < bt) {
                    best = Some((c, t));
                }
            }
        }
        let Some((hit, t)) = best else {
            return Ok(Sparsified { allocation: tau.clone(), degraded: true });
        };
        for c in 0..n {
            w[c] = (w[c] - t * v[c]).max(0.0);
        }
        w[hit] = 0.0;
        let mut c = 0;
        while c < idx.len() {
            if w[c] == 0.0 {
                idx.remove(c);
                w.remove(c);
                feats.remove(c);
            } else {
                c += 1;
            }
        }
    }
    let allocation = Allocation::new(idx.into_iter().zip(w))?;
    Ok(Sparsified { allocation, degraded: false })
}

/// `ceil(alpha_x)` pulls for every supported arm, in allocation order.
pub fn to_pull_counts(alpha: &Allocation) -> Vec<(usize, u64)> {
    alpha.entries().iter().filter(|(_, w)| *w > 0.0).map(|(i, w)| (*i, w.ceil() as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{design_matrix, stream_rng};
    use rand::Rng;

    fn mean_arm(arms: &[Vec<f64>], a: &Allocation) -> Vec<f64> {
        let mut m = vec![0.0; arms[0].len()];
        for (i, w) in a.entries() {
            for (k, v) in arms[*i].iter().enumerate() {
                m[k] += w * v;
            }
        }
        m
    }

    fn check_preserved(arms: &[Vec<f64>], kind: FeedbackKind, tau: &Allocation, out: &Allocation) {
        let a = design_matrix(arms, tau, kind).unwrap().to_dense();
        let b = design_matrix(arms, out, kind).unwrap().to_dense();
        assert!((a - b).abs().max() <= 1e-9);
        let (ma, mb) = (mean_arm(arms, tau), mean_arm(arms, out));
        assert!(ma.iter().zip(&mb).all(|(x, y)| (x - y).abs() <= 1e-9));
        assert!((tau.total() - out.total()).abs() <= 1e-9);
    }

    #[test]
    fn semi_twenty_arms_to_five() {
        let mut rng = stream_rng(1, "round", 0);
        let arms: Vec<Vec<f64>> =
            (0..20).map(|_| (0..4).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).collect();
        let tau = Allocation::new((0..20).map(|i| (i, rng.random_range(0.1..3.0)))).unwrap();
        let out = sparsify(&tau, FeedbackKind::Semi, &arms).unwrap();
        assert!(!out.degraded);
        assert!(out.allocation.support_len() <= 5);
        check_preserved(&arms, FeedbackKind::Semi, &tau, &out.allocation);
    }

    #[test]
    fn band_thirty_arms_to_thirteen() {
        let mut rng = stream_rng(2, "round", 0);
        let arms: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let tau = Allocation::new((0..30).map(|i| (i, rng.random_range(0.1..3.0)))).unwrap();
        let out = sparsify(&tau, FeedbackKind::Bandit, &arms).unwrap();
        assert!(!out.degraded);
        assert!(out.allocation.support_len() <= 13);
        check_preserved(&arms, FeedbackKind::Bandit, &tau, &out.allocation);
    }

    #[test]
    fn already_sparse_is_unchanged() {
        let arms = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let tau = Allocation::new([(0, 1.0), (2, 2.0)]).unwrap();
        let out = sparsify(&tau, FeedbackKind::Semi, &arms).unwrap();
        assert_eq!(out.allocation, tau);
        let again = sparsify(&out.allocation, FeedbackKind::Semi, &arms).unwrap();
        assert_eq!(again.allocation, out.allocation);
    }

    #[test]
    fn pull_counts_round_up() {
        let a = Allocation::new([(0, 2.0), (1, 2.1), (3, 0.0)]).unwrap();
        assert_eq!(to_pull_counts(&a), vec![(0, 2), (1, 3)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn moments_and_sparsity(
                bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 3), 4..16),
                weights in proptest::collection::vec(0.01f64..5.0, 16),
            ) {
                let arms: Vec<Vec<f64>> = bits.iter().map(|b| b.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect()).collect();
                let tau = Allocation::new(weights.iter().take(arms.len()).copied().enumerate()).unwrap();
                let out = sparsify(&tau, FeedbackKind::Semi, &arms).unwrap();
                prop_assert!(out.allocation.support_len() <= 4);
                check_preserved(&arms, FeedbackKind::Semi, &tau, &out.allocation);
                let counts = to_pull_counts(&out.allocation);
                let total: u64 = counts.iter().map(|c| c.1).sum();
                prop_assert!(total as f64 <= out.allocation.total() + out.allocation.support_len() as f64 + 1e-9);
            }
        }
    }
}
