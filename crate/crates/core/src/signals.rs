//! Per-sample signals consumed by the attacks: losses, confidences, logit
//! scaling, analytic gradients, and exact dense Hessians with damped solves.
//!
//! Parameter vectors are flattened as [W row-major (C*d) ; b (C)].

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::trainer::LinearHead;

/// Clamp used by `logit_scale` against saturated confidences.
pub const LOGIT_EPS: f64 = 1e-7;

/// Hard cap on the flattened parameter count for dense Hessian assembly.
pub const MAX_HESSIAN_DIM: usize = 20_000;

#[derive(Debug, Clone)]
pub struct SignalRecord {
    pub sample_id: usize,
    pub loss: f64,
    pub confidence: f64,
    pub logit_confidence: f64,
    pub posterior: Vec<f64>,
}

pub fn signal_record(head: &LinearHead, pool: &FeatureDataset, id: usize) -> SignalRecord {
    let posterior = head.posteriors(pool.row(id));
    let confidence = posterior[pool.label(id)];
    SignalRecord {
        sample_id: id,
        loss: -confidence.max(f64::MIN_POSITIVE).ln(),
        confidence,
        logit_confidence: logit_scale(confidence),
        posterior,
    }
}

/// Cross-entropy of the head on (x, y): -ln softmax(Wx + b)[y].
pub fn sample_loss(head: &LinearHead, x: &[f32], y: usize) -> f64 {
    assert!(y < head.c, "label out of range");
    -head.posteriors(x)[y].max(f64::MIN_POSITIVE).ln()
}

/// ln(p / (1 - p)) with p clamped to [eps, 1 - eps].
pub fn logit_scale(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

/// Flattened parameter count of a head.
pub fn param_count(head: &LinearHead) -> usize {
    head.c * (head.d + 1)
}

/// Analytic gradient of the per-sample loss, flattened as [W ; b]:
/// [(p - e_y) (x) x ; (p - e_y)], plus l2 * W when l2 > 0.
pub fn loss_gradient(head: &LinearHead, x: &[f32], y: usize, l2: f64) -> Vec<f64> {
    let (d, c) = (head.d, head.c);
    let p = head.posteriors(x);
    let mut grad = vec![0.0; c * (d + 1)];
    for class in 0..c {
        let delta = p[class] - if class == y { 1.0 } else { 0.0 };
        for j in 0..d {
            grad[class * d + j] = delta * f64::from(x[j]);
        }
        grad[c * d + class] = delta;
    }
    if l2 > 0.0 {
        for (g, &w) in grad.iter_mut().zip(&head.w) {
            *g += l2 * w;
        }
    }
    grad
}

/// Dense symmetric Hessian of the mean cross-entropy, plus lambda * I.
#[derive(Debug, Clone)]
pub struct HeadHessian {
    pub matrix: DMatrix<f64>,
    pub damping: f64,
    pub mean_loss: f64,
    pub fingerprint: u64,
}

/// Assemble (1/n) sum_i (diag(p_i) - p_i p_i^T) (x) [x_i;1][x_i;1]^T + lambda I
/// in the [W ; b] flattening.
pub fn empirical_hessian(
    head: &LinearHead,
    pool: &FeatureDataset,
    ids: &[usize],
    lambda: f64,
) -> Result<HeadHessian> {
    if ids.is_empty() {
        return Err(Error::Config("empty dataset for Hessian assembly".into()));
    }
    assert!(lambda >= 0.0);
    let (d, c) = (head.d, head.c);
    let p_dim = c * (d + 1);
    if p_dim > MAX_HESSIAN_DIM {
        return Err(Error::Capacity(format!(
            "flattened parameter count {p_dim} exceeds {MAX_HESSIAN_DIM}; reduce d or C"
        )));
    }
    let mut h = DMatrix::<f64>::zeros(p_dim, p_dim);
    let mut loss_total = 0.0;
    // Index map: (class, j) with j < d -> class*d + j; bias j = d -> c*d + class.
    let idx = |class: usize, j: usize| if j < d { class * d + j } else { c * d + class };
    let mut xt = vec![0.0f64; d + 1];
    for &id in ids {
        let x = pool.row(id);
        let y = pool.label(id);
        let p = head.posteriors(x);
        loss_total += -p[y].max(f64::MIN_POSITIVE).ln();
        for j in 0..d {
            xt[j] = f64::from(x[j]);
        }
        xt[d] = 1.0;
        for c1 in 0..c {
            for c2 in c1..c {
                let a = if c1 == c2 { p[c1] * (1.0 - p[c1]) } else { -p[c1] * p[c2] };
                for j1 in 0..=d {
                    for j2 in 0..=d {
                        let v = a * xt[j1] * xt[j2];
                        h[(idx(c1, j1), idx(c2, j2))] += v;
                        if c1 != c2 {
                            h[(idx(c2, j1), idx(c1, j2))] += v;
                        }
                    }
                }
            }
        }
    }
    let inv = 1.0 / ids.len() as f64;
    h *= inv;
    for i in 0..p_dim {
        h[(i, i)] += lambda;
    }
    let mut fp = crate::seed::derive_seed(ids.len() as u64, "hessian", lambda.to_bits());
    for &id in ids {
        fp = crate::seed::derive_seed(fp, "id", id as u64);
    }
    Ok(HeadHessian { matrix: h, damping: lambda, mean_loss: loss_total * inv, fingerprint: fp })
}

/// Solve H u = v by dense Cholesky; the residual must satisfy
/// ||Hu - v|| / ||v|| < 1e-8.
pub fn ihvp(h: &HeadHessian, v: &[f64]) -> Result<Vec<f64>> {
    let n = h.matrix.nrows();
    assert_eq!(v.len(), n, "vector dimension mismatch");
    let rhs = DVector::from_column_slice(v);
    let chol = Cholesky::new(h.matrix.clone()).ok_or_else(|| {
        Error::Singular(format!(
            "Hessian factorization failed at damping {}; increase lambda",
            h.damping
        ))
    })?;
    let u = chol.solve(&rhs);
    let v_norm = rhs.norm();
    if v_norm > 0.0 {
        let residual = (&h.matrix * &u - &rhs).norm() / v_norm;
        if residual >= 1e-8 {
            return Err(Error::Singular(format!(
                "iHVP residual {residual:.3e} above 1e-8; increase lambda"
            )));
        }
    }
    Ok(u.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian;
    use crate::trainer::{train_head, TrainConfig};
    use rand::Rng;

    #[test]
    fn uniform_loss_is_ln_c() {
        let head = LinearHead::zeros(3, 10);
        let loss = sample_loss(&head, &[0.0, 0.0, 0.0], 4);
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_binary_loss() {
        let mut head = LinearHead::zeros(1, 2);
        head.b = vec![3f64.ln(), 0.0];
        let loss = sample_loss(&head, &[0.0], 0);
        assert!((loss - (-0.75f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn saturated_loss_is_tiny() {
        let mut head = LinearHead::zeros(1, 2);
        head.b = vec![60.0, 0.0];
        assert!(sample_loss(&head, &[0.0], 0) <= 1e-6);
    }

    #[test]
    fn logit_scale_fixed_points() {
        assert_eq!(logit_scale(0.5), 0.0);
        let top = logit_scale(1.0);
        let expected = ((1.0 - 1e-7) / 1e-7f64).ln();
        assert!((top - expected).abs() < 1e-9);
        assert!((top - 16.1181).abs() < 1e-3);
        for t in [-10.0, -3.0, 0.0, 2.5, 10.0] {
            let sigma = 1.0 / (1.0 + (-t as f64).exp());
            assert!((logit_scale(sigma) - t).abs() < 1e-5);
        }
    }

    #[test]
    fn gradient_zero_when_posterior_is_onehot() {
        let mut head = LinearHead::zeros(2, 2);
        head.b = vec![500.0, -500.0];
        let g = loss_gradient(&head, &[1.0, 1.0], 0, 0.0);
        for v in g {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_at_uniform_binary() {
        let head = LinearHead::zeros(1, 2);
        let g = loss_gradient(&head, &[1.0], 0, 0.0);
        assert_eq!(g.len(), 4);
        assert!((g[0] + 0.5).abs() < 1e-12); // W class 0
        assert!((g[1] - 0.5).abs() < 1e-12); // W class 1
        assert!((g[2] + 0.5).abs() < 1e-12); // b class 0
        assert!((g[3] - 0.5).abs() < 1e-12); // b class 1
    }

    fn perturbed(head: &LinearHead, k: usize, eps: f64) -> LinearHead {
        let mut out = head.clone();
        let wd = head.c * head.d;
        if k < wd {
            out.w[k] += eps;
        } else {
            out.b[k - wd] += eps;
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = synth_gaussian(3, 4, 20, 1.5, 2);
        let cfg = TrainConfig { epochs: 20, batch_size: 10, learning_rate: 1e-2, l2: 0.0 };
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg, 1).unwrap();
        let mut rng = crate::seed::rng_for(3, "fd-check", 0);
        let p_dim = param_count(&head);
        for _ in 0..20 {
            let id = rng.gen_range(0..ds.len());
            let x = ds.row(id);
            let y = ds.label(id);
            let g = loss_gradient(&head, x, y, 0.0);
            let eps = 1e-5;
            for _ in 0..6 {
                let k = rng.gen_range(0..p_dim);
                let up = sample_loss(&perturbed(&head, k, eps), x, y);
                let dn = sample_loss(&perturbed(&head, k, -eps), x, y);
                let fd = (up - dn) / (2.0 * eps);
                let denom = fd.abs().max(g[k].abs()).max(1e-4);
                assert!(
                    ((fd - g[k]) / denom).abs() < 1e-5,
                    "entry {k}: analytic {} vs fd {fd}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn hessian_hand_example() {
        // Single sample, C=2, d=1, x=[1], zero head: A = [[.25,-.25],[-.25,.25]]
        // spread over every (class, class) block since all of x-tilde is 1.
        let labels = vec![0u16, 1];
        let features = vec![1.0f32, 1.0];
        let ds = crate::data::FeatureDataset::new(1, 2, 0, labels, features).unwrap();
        let head = LinearHead::zeros(1, 2);
        let h = empirical_hessian(&head, &ds, &[0], 0.0).unwrap();
        let a = [[0.25, -0.25], [-0.25, 0.25]];
        // Layout: [W0, W1, b0, b1]; entry = A[c1][c2].
        let class_of = [0usize, 1, 0, 1];
        for i in 0..4 {
            for j in 0..4 {
                let expected = a[class_of[i]][class_of[j]];
                assert!(
                    (h.matrix[(i, j)] - expected).abs() < 1e-12,
                    "H[{i}][{j}] = {} expected {expected}",
                    h.matrix[(i, j)]
                );
            }
        }
    }

    #[test]
    fn hessian_symmetric_and_damping_linear() {
        let ds = synth_gaussian(3, 4, 20, 1.0, 5);
        let cfg = TrainConfig { epochs: 10, batch_size: 10, learning_rate: 1e-2, l2: 0.0 };
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg, 1).unwrap();
        let h0 = empirical_hessian(&head, &ds, &ids, 0.0).unwrap();
        let h1 = empirical_hessian(&head, &ds, &ids, 1.0).unwrap();
        let n = h0.matrix.nrows();
        let mut rng = crate::seed::rng_for(8, "damping", 0);
        for i in 0..n {
            for j in 0..n {
                assert!((h0.matrix[(i, j)] - h0.matrix[(j, i)]).abs() < 1e-12);
            }
        }
        // H1 v = v + H0 v for any v.
        let v = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let lhs = &h1.matrix * &v;
        let rhs = &v + &h0.matrix * &v;
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn hessian_matches_gradient_finite_differences() {
        let ds = synth_gaussian(2, 3, 16, 1.0, 9);
        let cfg = TrainConfig { epochs: 10, batch_size: 10, learning_rate: 1e-2, l2: 0.0 };
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg, 1).unwrap();
        let h = empirical_hessian(&head, &ds, &ids, 0.0).unwrap();
        let p_dim = param_count(&head);
        let eps = 1e-5;
        let mean_grad = |hd: &LinearHead| -> Vec<f64> {
            let mut acc = vec![0.0; p_dim];
            for &id in &ids {
                let g = loss_gradient(hd, ds.row(id), ds.label(id), 0.0);
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            acc.iter().map(|v| v / ids.len() as f64).collect()
        };
        let mut max_rel = 0.0f64;
        for k in 0..p_dim {
            let up = mean_grad(&perturbed(&head, k, eps));
            let dn = mean_grad(&perturbed(&head, k, -eps));
            for i in 0..p_dim {
                let fd = (up[i] - dn[i]) / (2.0 * eps);
                let denom = fd.abs().max(h.matrix[(i, k)].abs()).max(1e-3);
                max_rel = max_rel.max(((fd - h.matrix[(i, k)]) / denom).abs());
            }
        }
        assert!(max_rel < 1e-4, "max relative Hessian error {max_rel}");
    }

    #[test]
    fn hessian_quadratic_form_lower_bound() {
        let ds = synth_gaussian(3, 4, 20, 1.0, 5);
        let head = LinearHead::zeros(4, 3);
        let lambda = 1e-2;
        let ids: Vec<usize> = (0..ds.len()).collect();
        let h = empirical_hessian(&head, &ds, &ids, lambda).unwrap();
        let n = h.matrix.nrows();
        let mut rng = crate::seed::rng_for(4, "quadform", 0);
        for _ in 0..100 {
            let v = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let q = (v.transpose() * &h.matrix * &v)[(0, 0)];
            assert!(q >= lambda * v.norm_squared() - 1e-10);
        }
    }

    #[test]
    fn ihvp_identity_and_zero() {
        let h = HeadHessian {
            matrix: DMatrix::identity(6, 6),
            damping: 0.0,
            mean_loss: 0.0,
            fingerprint: 0,
        };
        let v: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(ihvp(&h, &v).unwrap(), v);
        let zero = vec![0.0; 6];
        assert_eq!(ihvp(&h, &zero).unwrap(), zero);
    }

    #[test]
    fn ihvp_matches_explicit_inverse() {
        let p = 16;
        let mut rng = crate::seed::rng_for(7, "spd", 0);
        let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(p, p) * 0.5;
        let h = HeadHessian { matrix: spd.clone(), damping: 0.5, mean_loss: 0.0, fingerprint: 0 };
        let v: Vec<f64> = (0..p).map(|i| (i as f64).sin()).collect();
        let u = ihvp(&h, &v).unwrap();
        let inv = spd.try_inverse().unwrap();
        let expected = inv * DVector::from_column_slice(&v);
        for (a, b) in u.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_equals_neg_ln_posterior() {
        let ds = synth_gaussian(3, 4, 20, 1.0, 5);
        let cfg = TrainConfig { epochs: 15, batch_size: 10, learning_rate: 1e-2, l2: 0.0 };
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg, 1).unwrap();
        for &id in &ids {
            let rec = signal_record(&head, &ds, id);
            assert!((rec.loss + rec.posterior[ds.label(id)].ln()).abs() < 1e-9);
        }
    }
}
