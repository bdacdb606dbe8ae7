//! Independent brute-force references used by the test suites: exhaustive
//! ROC counting, leave-one-out retraining, and the analytic two-Gaussian
//! channel. Deliberately shares no code with the modules it checks.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::eval::RocCurve;
use crate::trainer::{train_head, TrainConfig};

/// O(n^2) ROC: for every distinct threshold, re-count TP/FP over the whole
/// score list. Shares the tie rule with the fast sweep: tied scores form one
/// vertex.
pub fn brute_force_roc(pairs: &[(f64, bool)]) -> Result<RocCurve> {
    let members = pairs.iter().filter(|(_, m)| *m).count();
    let non_members = pairs.len() - members;
    if members == 0 || non_members == 0 {
        return Err(Error::Config("ROC needs at least one member and one non-member".into()));
    }
    let mut thresholds: Vec<f64> = pairs.iter().map(|&(s, _)| s).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = pairs.iter().filter(|&&(s, m)| m && s >= t).count();
        let fp = pairs.iter().filter(|&&(s, m)| !m && s >= t).count();
        points.push((fp as f64 / non_members as f64, tp as f64 / members as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(RocCurve { points })
}

/// Retrain without each probe (same config, seed, and schedule) and report
/// loss_without(probe) - loss_with(probe). O(n) full retrainings; capped at
/// n <= 256.
pub fn loo_retrain_oracle(
    pool: &FeatureDataset,
    train_ids: &[usize],
    config: &TrainConfig,
    seed: u64,
    probe_ids: &[usize],
) -> Result<Vec<f64>> {
    if train_ids.len() > 256 {
        return Err(Error::Capacity(format!(
            "LOO oracle limited to 256 training records, got {}",
            train_ids.len()
        )));
    }
    let full = train_head(pool, train_ids, config, seed)?;
    let mut deltas = Vec::with_capacity(probe_ids.len());
    for &probe in probe_ids {
        if !train_ids.contains(&probe) {
            return Err(Error::Domain(format!("probe {probe} is not in the training set")));
        }
        let without_ids: Vec<usize> = train_ids.iter().copied().filter(|&i| i != probe).collect();
        let without = train_head(pool, &without_ids, config, seed)?;
        let x = pool.row(probe);
        let y = pool.label(probe);
        let loss_with = crate::signals::sample_loss(&full, x, y);
        let loss_without = crate::signals::sample_loss(&without, x, y);
        deltas.push(loss_without - loss_with);
    }
    Ok(deltas)
}

/// Closed-form TPR of the equal-variance two-Gaussian score channel at a
/// given FPR: Phi((mu_in - mu_out)/sigma + Phi^{-1}(fpr)).
pub fn gaussian_analytic_tpr(mu_in: f64, mu_out: f64, sigma: f64, fpr_target: f64) -> f64 {
    assert!(sigma > 0.0);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    std_normal.cdf((mu_in - mu_out) / sigma + std_normal.inverse_cdf(fpr_target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian;
    use rand::Rng;

    #[test]
    fn trivial_single_pair_curve() {
        let curve = brute_force_roc(&[(1.0, true), (0.0, false)]).unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn agrees_with_fast_roc_on_random_sets() {
        let mut rng = crate::seed::rng_for(19, "roc-fuzz", 0);
        for _ in 0..1000 {
            let n = rng.gen_range(2..120);
            let mut pairs: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    // Coarse grid injects plenty of ties.
                    let s = (rng.gen_range(-10i32..10) as f64) / 4.0;
                    (s, rng.gen_bool(0.5))
                })
                .collect();
            if !pairs.iter().any(|p| p.1) {
                pairs[0].1 = true;
            }
            if pairs.iter().all(|p| p.1) {
                pairs[0].1 = false;
            }
            let brute = brute_force_roc(&pairs).unwrap();
            let fast = crate::eval::roc_points(&pairs).unwrap();
            assert_eq!(brute.points, fast.points);
        }
    }

    #[test]
    fn loo_is_deterministic_and_duplicates_are_cheap() {
        let ds = synth_gaussian(2, 3, 40, 2.0, 6);
        let cfg = TrainConfig { epochs: 60, batch_size: 10, learning_rate: 1e-2, l2: 1e-3 };
        let train: Vec<usize> = (0..20).collect();
        let a = loo_retrain_oracle(&ds, &train, &cfg, 3, &[5, 6]).unwrap();
        let b = loo_retrain_oracle(&ds, &train, &cfg, 3, &[5, 6]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_outside_train_set_rejected() {
        let ds = synth_gaussian(2, 3, 20, 1.0, 6);
        let cfg = TrainConfig { epochs: 10, batch_size: 10, learning_rate: 1e-2, l2: 0.0 };
        let train: Vec<usize> = (0..10).collect();
        assert!(matches!(
            loo_retrain_oracle(&ds, &train, &cfg, 3, &[15]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn removing_a_point_cannot_reduce_its_loss() {
        // Convex training to (near) convergence: all deltas >= -1e-6.
        let ds = synth_gaussian(2, 3, 40, 1.5, 6);
        let cfg = TrainConfig { epochs: 200, batch_size: 10, learning_rate: 1e-2, l2: 1e-3 };
        let train: Vec<usize> = (0..30).collect();
        let probes: Vec<usize> = (0..30).step_by(5).collect();
        let deltas = loo_retrain_oracle(&ds, &train, &cfg, 3, &probes).unwrap();
        for d in deltas {
            assert!(d >= -1e-6, "delta {d} below tolerance");
        }
    }

    #[test]
    fn analytic_tpr_reference_points() {
        assert!((gaussian_analytic_tpr(0.0, 0.0, 1.0, 0.1) - 0.1).abs() < 1e-9);
        let t = gaussian_analytic_tpr(1.0, -1.0, 1.0, 0.1);
        assert!((t - 0.7637).abs() < 5e-4, "tpr {t}");
        // Monotone in the mean gap.
        let mut prev = 0.0;
        for gap in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let t = gaussian_analytic_tpr(gap, 0.0, 1.0, 0.05);
            assert!(t >= prev);
            prev = t;
        }
    }
}
