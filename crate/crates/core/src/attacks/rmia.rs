//! Robust MIA: pairwise likelihood ratios against population samples,
//! thresholded at gamma. The Pr(theta|x)/Pr(theta|z) ratio is realized in its
//! Bayes-equivalent posterior form, with shadow-model averages standing in
//! for the marginal.

use super::{AttackContext, AttackScoreSet};
use crate::error::Result;
use crate::trainer::LinearHead;

const MARGINAL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    Single,
    MajorityOverViews,
}

#[derive(Debug, Clone, Copy)]
pub struct RmiaConfig {
    pub gamma: f64,
    pub vote_mode: VoteMode,
}

impl Default for RmiaConfig {
    fn default() -> Self {
        Self { gamma: 2.0, vote_mode: VoteMode::Single }
    }
}

/// True-class posterior of `head` on the given feature row of a sample.
fn confidence(head: &LinearHead, ctx: &AttackContext, id: usize, view: Option<usize>) -> f64 {
    let y = ctx.dataset.label(id);
    let x = match view {
        None => ctx.dataset.row(id),
        Some(v) => ctx.dataset.view(id, v),
    };
    head.posteriors(x)[y]
}

/// p(u | target) / mean_shadows p(u | shadow), clamped below at MARGINAL_EPS.
/// Returns the ratio and whether the clamp fired.
fn ratio(ctx: &AttackContext, id: usize, view: Option<usize>) -> (f64, bool) {
    let target_p = confidence(ctx.target, ctx, id, view);
    let mut marginal = 0.0;
    for shadow in &ctx.shadows {
        marginal += confidence(&shadow.head, ctx, id, view);
    }
    marginal /= ctx.shadows.len() as f64;
    let clamped = marginal < MARGINAL_EPS;
    (target_p / marginal.max(MARGINAL_EPS), clamped)
}

pub fn rmia(ctx: &AttackContext, sample_ids: &[usize], config: &RmiaConfig) -> Result<AttackScoreSet> {
    ctx.require_population()?;
    assert!(config.gamma >= 1.0, "gamma must be >= 1");
    assert!(!ctx.shadows.is_empty(), "RMIA needs at least one shadow model");

    let views: Vec<Option<usize>> = match config.vote_mode {
        VoteMode::Single => vec![None],
        VoteMode::MajorityOverViews => {
            let k = ctx.dataset.views_per_sample();
            std::iter::once(None).chain((0..k).map(Some)).collect()
        }
    };

    // Population ratios per view, fixed across scored samples.
    let mut clamp_count = 0usize;
    let pop_ratios: Vec<Vec<f64>> = views
        .iter()
        .map(|&v| {
            ctx.population_ids
                .iter()
                .map(|&z| {
                    let (r, clamped) = ratio(ctx, z, v);
                    clamp_count += usize::from(clamped);
                    r
                })
                .collect()
        })
        .collect();

    let n_pop = ctx.population_ids.len() as f64;
    let mut out = AttackScoreSet::new(
        "rmia",
        format!(
            "gamma={} vote_mode={:?} marginal_clamps={clamp_count}",
            config.gamma, config.vote_mode
        ),
    );
    for &id in sample_ids {
        let score = if views.len() == 1 {
            let (rx, _) = ratio(ctx, id, None);
            pop_ratios[0].iter().filter(|&&rz| rx / rz >= config.gamma).count() as f64 / n_pop
        } else {
            // Majority vote: per population sample, the indicator is the
            // majority over views; the score averages those majorities.
            let per_view_rx: Vec<f64> = views.iter().map(|&v| ratio(ctx, id, v).0).collect();
            let mut passed = 0usize;
            for zi in 0..ctx.population_ids.len() {
                let votes = views
                    .iter()
                    .enumerate()
                    .filter(|&(vi, _)| per_view_rx[vi] / pop_ratios[vi][zi] >= config.gamma)
                    .count();
                if 2 * votes > views.len() {
                    passed += 1;
                }
            }
            passed as f64 / n_pop
        };
        out.push(id, score, ctx.is_target_member(id));
    }
    Ok(out)
}
