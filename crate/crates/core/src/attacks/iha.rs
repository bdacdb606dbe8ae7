//! Inverse Hessian Attack: white-box scoring from the target parameters and
//! knowledge of all but the scored record in the training set.
//!
//! Under the local-similarity assumption, removing a record moves the optimum
//! by one Newton step, delta = H^{-1} g / n. Expanding the quadratic gap
//! between the with/without optima around the observed parameters gives
//!
//!   score(x) = -g^T H^{-1} grad L_rest(theta) - g^T H^{-1} g / (2n)
//!
//! where g is the gradient of the scored sample's loss at theta, L_rest is
//! the mean loss over the known n-1 records, and H is the damped exact
//! Hessian over those records. Positive for member-like samples, negative
//! for non-members; when g = 0 the score is the gradient-free constant 0,
//! independent of the damping.

use super::{AttackContext, AttackScoreSet};
use crate::error::{Error, Result};
use crate::signals::{empirical_hessian, ihvp, loss_gradient, param_count};

pub fn iha(ctx: &AttackContext, sample_ids: &[usize], lambda: f64) -> Result<AttackScoreSet> {
    if ctx.target_train_ids.is_empty() {
        return Err(Error::ThreatModel(
            "IHA requires the target training set (minus the scored sample) in the context".into(),
        ));
    }
    let n = ctx.target_train_ids.len();
    let p_dim = param_count(ctx.target);
    let mut out = AttackScoreSet::new("iha", format!("lambda={lambda}"));

    for &id in sample_ids {
        let rest: Vec<usize> =
            ctx.target_train_ids.iter().copied().filter(|&t| t != id).collect();
        if rest.is_empty() {
            return Err(Error::ThreatModel(
                "IHA has no remaining training records after excluding the scored sample".into(),
            ));
        }
        let g = loss_gradient(ctx.target, ctx.dataset.row(id), ctx.dataset.label(id), 0.0);
        let score = if g.iter().all(|&v| v == 0.0) {
            0.0
        } else {
            let hessian = empirical_hessian(ctx.target, ctx.dataset, &rest, lambda)?;
            let mut grad_rest = vec![0.0; p_dim];
            for &r in &rest {
                let gr = loss_gradient(ctx.target, ctx.dataset.row(r), ctx.dataset.label(r), 0.0);
                for (a, b) in grad_rest.iter_mut().zip(&gr) {
                    *a += b;
                }
            }
            for v in grad_rest.iter_mut() {
                *v /= rest.len() as f64;
            }
            let hig = ihvp(&hessian, &g)?;
            let first: f64 = hig.iter().zip(&grad_rest).map(|(a, b)| a * b).sum();
            let quad: f64 = hig.iter().zip(&g).map(|(a, b)| a * b).sum();
            -first - quad / (2.0 * n as f64)
        };
        out.push(id, score, ctx.is_target_member(id));
    }
    Ok(out)
}
