//! Shadow-model-free baselines: the LOSS attack and Attack-P (population
//! loss-rank calibration).

use super::{AttackContext, AttackScoreSet};
use crate::error::Result;
use crate::signals::sample_loss;

/// Score = negative loss under the target model; no shadows consulted.
pub fn loss_attack(ctx: &AttackContext, sample_ids: &[usize]) -> Result<AttackScoreSet> {
    let mut out = AttackScoreSet::new("loss", "");
    for &id in sample_ids {
        let loss = sample_loss(ctx.target, ctx.dataset.row(id), ctx.dataset.label(id));
        out.push(id, -loss, ctx.is_target_member(id));
    }
    Ok(out)
}

/// Score = rank of the sample's loss within the population loss CDF: the
/// fraction of population losses strictly greater, plus half the ties
/// (mid-rank rule). Scores lie in [0, 1].
pub fn attack_p(ctx: &AttackContext, sample_ids: &[usize]) -> Result<AttackScoreSet> {
    ctx.require_population()?;
    let warn = ctx.population_ids.len() < 30;
    let pop_losses: Vec<f64> = ctx
        .population_ids
        .iter()
        .map(|&z| sample_loss(ctx.target, ctx.dataset.row(z), ctx.dataset.label(z)))
        .collect();
    let n = pop_losses.len() as f64;
    let config = if warn { "population below 30 samples" } else { "" };
    let mut out = AttackScoreSet::new("attack-p", config);
    for &id in sample_ids {
        let loss = sample_loss(ctx.target, ctx.dataset.row(id), ctx.dataset.label(id));
        let above = pop_losses.iter().filter(|&&l| l > loss).count() as f64;
        let ties = pop_losses.iter().filter(|&&l| l == loss).count() as f64;
        out.push(id, (above + 0.5 * ties) / n, ctx.is_target_member(id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::ShadowModel;
    use crate::data::{synth_gaussian, FeatureDataset};
    use crate::trainer::LinearHead;

    fn ctx<'a>(
        ds: &'a FeatureDataset,
        target: &'a LinearHead,
        members: Vec<usize>,
        population: Vec<usize>,
    ) -> AttackContext<'a> {
        AttackContext {
            dataset: ds,
            target,
            target_train_ids: members,
            shadows: Vec::<ShadowModel>::new(),
            population_ids: population,
            seed: 0,
        }
    }

    #[test]
    fn equal_losses_give_equal_scores() {
        let ds = synth_gaussian(2, 3, 10, 1.0, 1);
        let head = LinearHead::zeros(3, 2); // uniform: every loss is ln 2
        let c = ctx(&ds, &head, vec![0], vec![15, 16, 17]);
        let set = loss_attack(&c, &[0, 1, 2, 3]).unwrap();
        for w in set.rows.windows(2) {
            assert_eq!(w[0].score, w[1].score);
        }
    }

    #[test]
    fn members_with_lower_loss_score_higher() {
        let mut head = LinearHead::zeros(1, 2);
        head.w = vec![5.0, -5.0];
        let labels = vec![0u16, 1];
        let features = vec![1.0f32, 1.0];
        let ds = FeatureDataset::new(1, 2, 0, labels, features).unwrap();
        let c = ctx(&ds, &head, vec![0], vec![1]);
        let set = loss_attack(&c, &[0, 1]).unwrap();
        assert!(set.rows[0].score > set.rows[1].score);
    }

    #[test]
    fn attack_p_extremes_and_midrank() {
        // One population sample; a scored sample with identical loss gets 0.5.
        let ds = synth_gaussian(2, 3, 10, 1.0, 1);
        let head = LinearHead::zeros(3, 2);
        let c = ctx(&ds, &head, vec![0], vec![15]);
        let set = attack_p(&c, &[0]).unwrap();
        assert_eq!(set.rows[0].score, 0.5);
    }

    #[test]
    fn attack_p_dominating_sample_scores_one() {
        let mut head = LinearHead::zeros(1, 2);
        head.w = vec![8.0, -8.0];
        // Sample 0: class 0 at x=1 (tiny loss); population samples misclassified.
        let labels = vec![0u16, 1, 1];
        let features = vec![1.0f32, 1.0, 1.0];
        let ds = FeatureDataset::new(1, 2, 0, labels, features).unwrap();
        let c = ctx(&ds, &head, vec![0], vec![1, 2]);
        let set = attack_p(&c, &[0]).unwrap();
        assert_eq!(set.rows[0].score, 1.0);
    }

    #[test]
    fn attack_p_requires_population() {
        let ds = synth_gaussian(2, 3, 10, 1.0, 1);
        let head = LinearHead::zeros(3, 2);
        let c = ctx(&ds, &head, vec![0], vec![]);
        assert!(attack_p(&c, &[0]).is_err());
    }
}
