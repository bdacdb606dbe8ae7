//! ML-Leaks (adversary 1): a binary classifier over the sorted top-k
//! posterior probabilities of a single shadow model.

use super::mlp::{BinaryMlp, AUX_HIDDEN};
use super::{AttackContext, AttackScoreSet};
use crate::error::{Error, Result};
use crate::trainer::LinearHead;

/// Sorted descending top-k posterior vector.
pub fn top_k_posteriors(head: &LinearHead, x: &[f32], k: usize) -> Vec<f64> {
    let mut p = head.posteriors(x);
    p.sort_by(|a, b| b.partial_cmp(a).unwrap());
    p.truncate(k);
    p
}

/// Uses the first shadow model only (single-shadow usage). Default k is 3,
/// or 2 for binary-class datasets, capped at C.
pub fn ml_leaks(ctx: &AttackContext, sample_ids: &[usize], k_top: Option<usize>) -> Result<AttackScoreSet> {
    let shadow = ctx
        .shadows
        .first()
        .ok_or_else(|| Error::Config("ML-Leaks needs one designated shadow model".into()))?;
    let c = ctx.dataset.classes();
    let default_k = if c == 2 { 2 } else { 3 };
    let k = k_top.unwrap_or(default_k).min(c);

    // Attack-classifier training data: the shadow's members vs the rest of
    // the scored pool plus population samples it never saw.
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let candidates: Vec<usize> =
        sample_ids.iter().chain(&ctx.population_ids).copied().collect();
    for &id in &candidates {
        inputs.push(top_k_posteriors(&shadow.head, ctx.dataset.row(id), k));
        labels.push(shadow.is_member(id));
    }
    let members = labels.iter().filter(|&&m| m).count();
    if members == 0 || members == labels.len() {
        return Err(Error::Config(
            "ML-Leaks shadow training data lacks members or non-members".into(),
        ));
    }

    let mut clf = BinaryMlp::new(k, AUX_HIDDEN, crate::seed::derive_seed(ctx.seed, "ml-leaks", 0));
    clf.train(&inputs, &labels, crate::seed::derive_seed(ctx.seed, "ml-leaks-train", 0))?;

    let mut out = AttackScoreSet::new("ml-leaks", format!("k_top={k}"));
    for &id in sample_ids {
        let features = top_k_posteriors(ctx.target, ctx.dataset.row(id), k);
        out.push(id, clf.predict(&features), ctx.is_target_member(id));
    }
    Ok(out)
}
