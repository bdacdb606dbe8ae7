//! Quantile-MIA: a feature-conditioned quantile regressor trained with
//! pinball loss on population logit-confidences; the score is the margin of
//! the sample's logit-confidence over its predicted threshold.

use super::mlp::QuantileNet;
use super::{AttackContext, AttackScoreSet};
use crate::error::{Error, Result};
use crate::signals::logit_scale;

#[derive(Debug, Clone)]
pub struct QmiaConfig {
    /// Quantile levels fitted jointly, ascending.
    pub quantile_levels: Vec<f64>,
    /// Level whose prediction is used as the per-sample threshold.
    pub reference_level: f64,
    /// Hidden width of the regressor; 0 collapses to marginal quantiles.
    pub hidden_width: usize,
}

impl Default for QmiaConfig {
    fn default() -> Self {
        Self { quantile_levels: vec![0.9, 0.95, 0.99], reference_level: 0.95, hidden_width: 16 }
    }
}

pub fn qmia(ctx: &AttackContext, sample_ids: &[usize], config: &QmiaConfig) -> Result<AttackScoreSet> {
    ctx.require_population()?;
    let levels = config.quantile_levels.clone();
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("quantile levels must be strictly ascending".into()));
    }
    let ref_pos = levels
        .iter()
        .position(|&l| (l - config.reference_level).abs() < 1e-12)
        .ok_or_else(|| Error::Config("reference level not among quantile levels".into()))?;

    // Train on population (known non-member) logit-confidences, conditioned
    // on the raw feature rows.
    let inputs: Vec<Vec<f64>> = ctx
        .population_ids
        .iter()
        .map(|&z| ctx.dataset.row(z).iter().map(|&v| f64::from(v)).collect())
        .collect();
    let targets: Vec<f64> = ctx
        .population_ids
        .iter()
        .map(|&z| logit_scale(ctx.target.posteriors(ctx.dataset.row(z))[ctx.dataset.label(z)]))
        .collect();

    let mut net = QuantileNet::new(
        ctx.dataset.dim(),
        config.hidden_width,
        levels,
        crate::seed::derive_seed(ctx.seed, "qmia-init", 0),
    );
    net.train(&inputs, &targets, crate::seed::derive_seed(ctx.seed, "qmia-train", 0))?;

    let mut out = AttackScoreSet::new(
        "qmia",
        format!("reference_level={} hidden_width={}", config.reference_level, config.hidden_width),
    );
    for &id in sample_ids {
        let x: Vec<f64> = ctx.dataset.row(id).iter().map(|&v| f64::from(v)).collect();
        let phi = logit_scale(ctx.target.posteriors(ctx.dataset.row(id))[ctx.dataset.label(id)]);
        let q = net.predict(&x);
        out.push(id, phi - q[ref_pos], ctx.is_target_member(id));
    }
    Ok(out)
}
