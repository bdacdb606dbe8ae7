//! ROC construction, TPR at fixed low FPR, IQR aggregation across repeats,
//! and shot-scaling trend statistics.

use crate::attacks::AttackScoreSet;
use crate::error::{Error, Result};

/// Threshold-sweep ROC: (fpr, tpr) vertices from (0,0) to (1,1), both
/// coordinates nondecreasing. Tied scores share one threshold and therefore
/// one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Build the ROC over raw (score, is_member) pairs, classifying
/// score >= threshold as member and sweeping all distinct thresholds
/// descending.
pub fn roc_points(pairs: &[(f64, bool)]) -> Result<RocCurve> {
    let members = pairs.iter().filter(|(_, m)| *m).count();
    let non_members = pairs.len() - members;
    if members == 0 || non_members == 0 {
        return Err(Error::Config("ROC needs at least one member and one non-member".into()));
    }
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / non_members as f64, tp as f64 / members as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    Ok(RocCurve { points })
}

pub fn roc_curve(scores: &AttackScoreSet) -> Result<RocCurve> {
    roc_points(&scores.pairs())
}

/// Trapezoidal area under the curve. Equals the Mann-Whitney U statistic
/// with half credit for ties.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct TprAtFpr {
    pub tpr: f64,
    /// Set when the non-member count is too small to resolve the target FPR.
    pub resolution_warning: bool,
}

/// Maximum TPR over thresholds whose empirical FPR does not exceed the
/// target (step rule, no interpolation).
pub fn tpr_at_fpr(scores: &AttackScoreSet, fpr_target: f64) -> Result<TprAtFpr> {
    assert!(fpr_target > 0.0 && fpr_target < 1.0, "fpr target must be in (0,1)");
    let curve = roc_curve(scores)?;
    let non_members = scores.rows.iter().filter(|r| !r.is_member).count();
    let tpr = curve
        .points
        .iter()
        .filter(|(fpr, _)| *fpr <= fpr_target)
        .map(|&(_, tpr)| tpr)
        .fold(0.0, f64::max);
    Ok(TprAtFpr { tpr, resolution_warning: (non_members as f64) < 1.0 / fpr_target })
}

/// Linear-interpolation percentile: index h = (n-1) * q over the sorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// p75 - p25 with linear-interpolation percentiles.
pub fn iqr(values: &[f64]) -> f64 {
    percentile(values, 0.75) - percentile(values, 0.25)
}

/// Median and IQR of per-repeat TPR values at each configured FPR target.
#[derive(Debug, Clone)]
pub struct RepeatSummary {
    pub fpr_targets: Vec<f64>,
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub n_repeats: usize,
}

/// `per_repeat_tprs[r][f]` is repeat r's TPR at `fpr_targets[f]`.
pub fn aggregate_repeats(per_repeat_tprs: &[Vec<f64>], fpr_targets: &[f64]) -> RepeatSummary {
    assert!(!per_repeat_tprs.is_empty());
    let mut medians = Vec::with_capacity(fpr_targets.len());
    let mut iqrs = Vec::with_capacity(fpr_targets.len());
    for f in 0..fpr_targets.len() {
        let column: Vec<f64> = per_repeat_tprs.iter().map(|r| r[f]).collect();
        medians.push(median(&column));
        iqrs.push(iqr(&column));
    }
    RepeatSummary {
        fpr_targets: fpr_targets.to_vec(),
        medians,
        iqrs,
        n_repeats: per_repeat_tprs.len(),
    }
}

/// Monotonicity report for efficacy across shot levels.
#[derive(Debug, Clone, Copy)]
pub struct TrendReport {
    /// Spearman rank correlation between S and median TPR (mid-ranks on ties).
    pub spearman: f64,
    /// Adjacent shot levels where the median TPR increased.
    pub adjacent_inversions: usize,
}

fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// `levels` are the shot counts S (ascending), `medians` the per-level median TPRs.
pub fn shot_trend(levels: &[usize], medians: &[f64]) -> TrendReport {
    assert!(levels.len() >= 3, "trend needs at least 3 shot levels");
    assert_eq!(levels.len(), medians.len());
    let s_vals: Vec<f64> = levels.iter().map(|&s| s as f64).collect();
    let rx = mid_ranks(&s_vals);
    let ry = mid_ranks(medians);
    let n = levels.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean) * (a - mean);
        var_y += (b - mean) * (b - mean);
    }
    let spearman = if var_x == 0.0 || var_y == 0.0 { 0.0 } else { cov / (var_x * var_y).sqrt() };
    let adjacent_inversions = medians.windows(2).filter(|w| w[1] > w[0]).count();
    TrendReport { spearman, adjacent_inversions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackScoreSet;

    fn score_set(pairs: &[(f64, bool)]) -> AttackScoreSet {
        let mut s = AttackScoreSet::new("test", "");
        for (i, &(score, member)) in pairs.iter().enumerate() {
            s.push(i, score, member);
        }
        s
    }

    #[test]
    fn perfect_separation_hits_corner() {
        let s = score_set(&[(2.0, true), (3.0, true), (0.0, false), (1.0, false)]);
        let curve = roc_curve(&s).unwrap();
        assert!(curve.points.contains(&(0.0, 1.0)));
        assert_eq!(auc(&curve), 1.0);
    }

    #[test]
    fn all_ties_collapse_to_diagonal() {
        let s = score_set(&[(1.0, true), (1.0, false), (1.0, true), (1.0, false)]);
        let curve = roc_curve(&s).unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&curve), 0.5);
    }

    #[test]
    fn hand_enumerated_vertices() {
        let s = score_set(&[(2.0, true), (3.0, true), (0.0, false), (1.0, false)]);
        let curve = roc_curve(&s).unwrap();
        assert_eq!(
            curve.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn single_class_rejected() {
        let s = score_set(&[(1.0, true), (2.0, true)]);
        assert!(roc_curve(&s).is_err());
    }

    #[test]
    fn tpr_at_fpr_hand_cases() {
        let s = score_set(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)]);
        assert_eq!(tpr_at_fpr(&s, 0.5).unwrap().tpr, 1.0);
        let s2 = score_set(&[(0.1, true), (0.2, true), (0.8, false), (0.9, false)]);
        assert_eq!(tpr_at_fpr(&s2, 0.001).unwrap().tpr, 0.0);
        assert!(tpr_at_fpr(&s2, 0.001).unwrap().resolution_warning);
    }

    #[test]
    fn iqr_hand_values() {
        assert_eq!(iqr(&[5.0, 5.0, 5.0]), 0.0);
        assert!((iqr(&[1.0, 2.0, 3.0, 4.0]) - 1.5).abs() < 1e-12);
        let a = iqr(&[3.0, 1.0, 4.0, 2.0]);
        let b = iqr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_single_and_odd_repeats() {
        let summary = aggregate_repeats(&[vec![0.4]], &[0.1]);
        assert_eq!(summary.medians, vec![0.4]);
        assert_eq!(summary.iqrs, vec![0.0]);
        let summary = aggregate_repeats(&[vec![0.1], vec![0.2], vec![0.3]], &[0.1]);
        assert!((summary.medians[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn trend_extremes() {
        let r = shot_trend(&[4, 16, 64], &[0.9, 0.5, 0.1]);
        assert_eq!(r.spearman, -1.0);
        assert_eq!(r.adjacent_inversions, 0);
        let r = shot_trend(&[4, 16, 64], &[0.5, 0.5, 0.5]);
        assert_eq!(r.spearman, 0.0);
        let r = shot_trend(&[4, 16, 64, 256], &[0.9, 0.5, 0.6, 0.1]);
        assert_eq!(r.adjacent_inversions, 1);
    }
}
