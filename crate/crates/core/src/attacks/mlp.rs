//! Small auxiliary networks shared by ML-Leaks, Trajectory-MIA, and QMIA:
//! a one-hidden-layer binary classifier and a one-hidden-layer quantile
//! regressor trained with pinball loss. Fixed constants: hidden width 64,
//! 100 epochs, lr 1e-2 SGD, single-threaded for determinism.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const AUX_HIDDEN: usize = 64;
pub const AUX_EPOCHS: u32 = 100;
pub const AUX_LR: f64 = 1e-2;
const AUX_BATCH: usize = 32;

/// One-hidden-layer tanh network with a sigmoid output head.
#[derive(Debug, Clone)]
pub struct BinaryMlp {
    input: usize,
    hidden: usize,
    w1: Vec<f64>, // hidden x input
    b1: Vec<f64>,
    w2: Vec<f64>, // hidden
    b2: f64,
}

impl BinaryMlp {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "mlp-init", 0);
        let scale = 1.0 / (input as f64).sqrt();
        let w1 = (0..hidden * input).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { input, hidden, w1, b1: vec![0.0; hidden], w2: vec![0.0; hidden], b2: 0.0 }
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let mut act = vec![0.0; self.hidden];
        for (i, a) in act.iter_mut().enumerate() {
            let row = &self.w1[i * self.input..(i + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[i];
            *a = z.tanh();
        }
        let logit = act.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        (act, logit)
    }

    /// Member probability.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let (_, logit) = self.forward(x);
        1.0 / (1.0 + (-logit).exp())
    }

    /// Mini-batch SGD on binary cross-entropy.
    pub fn train(&mut self, inputs: &[Vec<f64>], labels: &[bool], seed: u64) -> Result<()> {
        assert_eq!(inputs.len(), labels.len());
        if inputs.is_empty() {
            return Err(Error::Config("empty training set for auxiliary classifier".into()));
        }
        let mut rng = rng_for(seed, "mlp-train", 0);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        for _ in 0..AUX_EPOCHS {
            order.shuffle(&mut rng);
            for chunk in order.chunks(AUX_BATCH) {
                let mut gw1 = vec![0.0; self.w1.len()];
                let mut gb1 = vec![0.0; self.hidden];
                let mut gw2 = vec![0.0; self.hidden];
                let mut gb2 = 0.0;
                for &idx in chunk {
                    let x = &inputs[idx];
                    let y = if labels[idx] { 1.0 } else { 0.0 };
                    let (act, logit) = self.forward(x);
                    let p = 1.0 / (1.0 + (-logit).exp());
                    let dlogit = p - y;
                    gb2 += dlogit;
                    for i in 0..self.hidden {
                        gw2[i] += dlogit * act[i];
                        let dact = dlogit * self.w2[i] * (1.0 - act[i] * act[i]);
                        gb1[i] += dact;
                        let row = &mut gw1[i * self.input..(i + 1) * self.input];
                        for (g, &v) in row.iter_mut().zip(x) {
                            *g += dact * v;
                        }
                    }
                }
                let inv = AUX_LR / chunk.len() as f64;
                for (w, g) in self.w1.iter_mut().zip(&gw1) {
                    *w -= inv * g;
                }
                for (b, g) in self.b1.iter_mut().zip(&gb1) {
                    *b -= inv * g;
                }
                for (w, g) in self.w2.iter_mut().zip(&gw2) {
                    *w -= inv * g;
                }
                self.b2 -= inv * gb2;
            }
        }
        Ok(())
    }
}

/// Pinball (quantile) loss on residual r = y - prediction at level tau.
pub fn pinball_loss(tau: f64, residual: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

/// One-hidden-layer quantile regressor emitting one output per level.
/// With hidden width 0 the model is bias-only: a constant per level, which
/// collapses QMIA to a marginal-quantile threshold.
#[derive(Debug, Clone)]
pub struct QuantileNet {
    input: usize,
    hidden: usize,
    levels: Vec<f64>,
    w1: Vec<f64>, // hidden x input
    b1: Vec<f64>,
    w2: Vec<f64>, // levels x hidden
    b2: Vec<f64>, // levels
}

impl QuantileNet {
    pub fn new(input: usize, hidden: usize, levels: Vec<f64>, seed: u64) -> Self {
        let mut rng = rng_for(seed, "qnet-init", 0);
        let scale = if input > 0 { 1.0 / (input as f64).sqrt() } else { 0.0 };
        let w1 = (0..hidden * input).map(|_| rng.gen_range(-scale..scale)).collect();
        let n_levels = levels.len();
        Self {
            input,
            hidden,
            levels,
            w1,
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_levels * hidden],
            b2: vec![0.0; n_levels],
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut act = vec![0.0; self.hidden];
        for (i, a) in act.iter_mut().enumerate() {
            let row = &self.w1[i * self.input..(i + 1) * self.input];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[i];
            *a = z.tanh();
        }
        let mut out = self.b2.clone();
        for (l, o) in out.iter_mut().enumerate() {
            let row = &self.w2[l * self.hidden..(l + 1) * self.hidden];
            *o += row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
        }
        (act, out)
    }

    /// Predicted quantiles after monotone rearrangement (ascending sort
    /// across levels, assuming levels are sorted ascending).
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let (_, mut out) = self.forward(x);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Mini-batch SGD on the summed pinball loss across levels.
    pub fn train(&mut self, inputs: &[Vec<f64>], targets: &[f64], seed: u64) -> Result<()> {
        assert_eq!(inputs.len(), targets.len());
        if inputs.is_empty() {
            return Err(Error::Config("empty training set for quantile regressor".into()));
        }
        let mut rng = rng_for(seed, "qnet-train", 0);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        for _ in 0..AUX_EPOCHS {
            order.shuffle(&mut rng);
            for chunk in order.chunks(AUX_BATCH) {
                let mut gw1 = vec![0.0; self.w1.len()];
                let mut gb1 = vec![0.0; self.hidden];
                let mut gw2 = vec![0.0; self.w2.len()];
                let mut gb2 = vec![0.0; self.b2.len()];
                let mut total = 0.0;
                for &idx in chunk {
                    let x = &inputs[idx];
                    let y = targets[idx];
                    let (act, out) = self.forward(x);
                    let mut dact = vec![0.0; self.hidden];
                    for (l, &tau) in self.levels.iter().enumerate() {
                        let r = y - out[l];
                        total += pinball_loss(tau, r);
                        // d pinball / d prediction
                        let dout = if r >= 0.0 { -tau } else { 1.0 - tau };
                        gb2[l] += dout;
                        let row = &self.w2[l * self.hidden..(l + 1) * self.hidden];
                        let grow = &mut gw2[l * self.hidden..(l + 1) * self.hidden];
                        for i in 0..self.hidden {
                            grow[i] += dout * act[i];
                            dact[i] += dout * row[i];
                        }
                    }
                    for i in 0..self.hidden {
                        let dz = dact[i] * (1.0 - act[i] * act[i]);
                        gb1[i] += dz;
                        let row = &mut gw1[i * self.input..(i + 1) * self.input];
                        for (g, &v) in row.iter_mut().zip(x) {
                            *g += dz * v;
                        }
                    }
                }
                if !total.is_finite() {
                    return Err(Error::Divergence { step: 0 });
                }
                let inv = AUX_LR / chunk.len() as f64;
                for (w, g) in self.w1.iter_mut().zip(&gw1) {
                    *w -= inv * g;
                }
                for (b, g) in self.b1.iter_mut().zip(&gb1) {
                    *b -= inv * g;
                }
                for (w, g) in self.w2.iter_mut().zip(&gw2) {
                    *w -= inv * g;
                }
                for (b, g) in self.b2.iter_mut().zip(&gb2) {
                    *b -= inv * g;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinball_definition() {
        assert_eq!(pinball_loss(0.5, -2.0), 1.0);
        assert_eq!(pinball_loss(0.9, 1.0), 0.9);
        assert_eq!(pinball_loss(0.1, -1.0), 0.9);
        assert_eq!(pinball_loss(0.3, 0.0), 0.0);
    }

    #[test]
    fn fresh_mlp_outputs_half() {
        let mlp = BinaryMlp::new(3, 8, 0);
        assert!((mlp.predict(&[1.0, -1.0, 0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mlp_learns_a_separable_rule() {
        let inputs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![if i < 50 { 1.0 } else { -1.0 }, (i % 7) as f64 / 7.0])
            .collect();
        let labels: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let mut mlp = BinaryMlp::new(2, 8, 1);
        mlp.train(&inputs, &labels, 2).unwrap();
        let correct = inputs
            .iter()
            .zip(&labels)
            .filter(|(x, &y)| (mlp.predict(x) > 0.5) == y)
            .count();
        assert!(correct >= 95, "only {correct}/100 correct");
    }

    #[test]
    fn bias_only_quantile_net_learns_marginal_quantiles() {
        // Targets uniform on [0, 1); the 0.5 and 0.9 marginal quantiles are
        // ~0.5 and ~0.9.
        let inputs: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 3) as f64]).collect();
        let targets: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let mut net = QuantileNet::new(1, 0, vec![0.5, 0.9], 3);
        net.train(&inputs, &targets, 4).unwrap();
        let q = net.predict(&[0.0]);
        assert!((q[0] - 0.5).abs() < 0.1, "q50 = {}", q[0]);
        assert!((q[1] - 0.9).abs() < 0.1, "q90 = {}", q[1]);
        assert!(q[0] <= q[1]);
    }
}
