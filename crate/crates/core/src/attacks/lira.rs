//! Online likelihood-ratio attack: per-sample IN and OUT Gaussians over
//! logit-scaled confidences from the shadow models.

use super::{AttackContext, AttackScoreSet};
use crate::error::{Error, Result};
use crate::signals::logit_scale;
use crate::trainer::LinearHead;

/// Variance floor guarding degenerate shadow agreement.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Separate IN/OUT variances per sample.
    PerSample,
    /// IN/OUT variances pooled over all scored samples.
    Global,
}

#[derive(Debug, Clone, Copy)]
pub struct LiraConfig {
    pub variance_mode: VarianceMode,
    /// Number of augmented views averaged into each query (0 = original only).
    pub query_views: usize,
}

impl Default for LiraConfig {
    fn default() -> Self {
        Self { variance_mode: VarianceMode::PerSample, query_views: 0 }
    }
}

/// Gaussian log-density difference: ln N(phi; mu_in, s_in) - ln N(phi; mu_out, s_out),
/// with the variance floor already expected to be folded into s_in/s_out.
pub fn lira_log_lr(phi: f64, mu_in: f64, var_in: f64, mu_out: f64, var_out: f64) -> f64 {
    let log_pdf = |x: f64, mu: f64, var: f64| {
        -0.5 * ((x - mu) * (x - mu) / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
    };
    log_pdf(phi, mu_in, var_in) - log_pdf(phi, mu_out, var_out)
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Logit-scaled true-class confidence, averaged over the original row plus
/// the first `views` augmented views.
fn query_confidence(
    head: &LinearHead,
    ctx: &AttackContext,
    id: usize,
    views: usize,
) -> f64 {
    let y = ctx.dataset.label(id);
    let mut total = logit_scale(head.posteriors(ctx.dataset.row(id))[y]);
    let k = views.min(ctx.dataset.views_per_sample());
    for v in 0..k {
        total += logit_scale(head.posteriors(ctx.dataset.view(id, v))[y]);
    }
    total / (1 + k) as f64
}

pub fn lira(ctx: &AttackContext, sample_ids: &[usize], config: &LiraConfig) -> Result<AttackScoreSet> {
    // Gather per-sample shadow statistics first; coverage is checked for the
    // whole batch so the error lists every offending id.
    let mut stats = Vec::with_capacity(sample_ids.len());
    let mut uncovered = Vec::new();
    for &id in sample_ids {
        let mut ins = Vec::new();
        let mut outs = Vec::new();
        for shadow in &ctx.shadows {
            let phi = query_confidence(&shadow.head, ctx, id, config.query_views);
            if shadow.is_member(id) {
                ins.push(phi);
            } else {
                outs.push(phi);
            }
        }
        if ins.len() < 2 || outs.len() < 2 {
            uncovered.push(id);
        }
        stats.push((id, ins, outs));
    }
    if !uncovered.is_empty() {
        return Err(Error::Coverage(uncovered));
    }

    let pooled = match config.variance_mode {
        VarianceMode::PerSample => None,
        VarianceMode::Global => {
            let mut in_var = 0.0;
            let mut out_var = 0.0;
            for (_, ins, outs) in &stats {
                in_var += mean_and_var(ins).1;
                out_var += mean_and_var(outs).1;
            }
            Some((in_var / stats.len() as f64, out_var / stats.len() as f64))
        }
    };

    let mut out = AttackScoreSet::new(
        "lira",
        format!("variance_mode={:?} query_views={}", config.variance_mode, config.query_views),
    );
    let floor = SIGMA_FLOOR * SIGMA_FLOOR;
    for (id, ins, outs) in &stats {
        let phi = query_confidence(ctx.target, ctx, *id, config.query_views);
        let (mu_in, var_in_local) = mean_and_var(ins);
        let (mu_out, var_out_local) = mean_and_var(outs);
        let (var_in, var_out) = match pooled {
            Some((vi, vo)) => (vi, vo),
            None => (var_in_local, var_out_local),
        };
        let score = lira_log_lr(phi, mu_in, var_in + floor, mu_out, var_out + floor);
        out.push(*id, score, ctx.is_target_member(*id));
    }
    Ok(out)
}
