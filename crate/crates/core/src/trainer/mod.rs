//! Softmax linear-head training (the head-only parameterization), knowledge
//! distillation with per-sample loss trajectories, and hyperparameter search.

pub mod hpo;

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use hpo::{hpo_search, HpoRanges, HpoStrategy};

const HEAD_MAGIC: &[u8; 4] = b"MIAH";
const HEAD_VERSION: u32 = 1;

/// Softmax-regression parameters theta = (W, b). W is C x d row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub d: usize,
    pub c: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub config_hash: u64,
}

impl LinearHead {
    /// Fresh head: all weights zero, so posteriors start uniform.
    pub fn zeros(d: usize, c: usize) -> Self {
        Self { d, c, w: vec![0.0; c * d], b: vec![0.0; c], config_hash: 0 }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        assert_eq!(x.len(), self.d, "feature dimension mismatch");
        let mut z = self.b.clone();
        for (class, zc) in z.iter_mut().enumerate() {
            let row = &self.w[class * self.d..(class + 1) * self.d];
            let mut acc = 0.0;
            for (wj, &xj) in row.iter().zip(x) {
                acc += wj * f64::from(xj);
            }
            *zc += acc;
        }
        z
    }

    /// softmax(Wx + b), computed with the max-shift for stability.
    pub fn posteriors(&self, x: &[f32]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(HEAD_MAGIC)?;
        w.write_u32::<LittleEndian>(HEAD_VERSION)?;
        w.write_u32::<LittleEndian>(self.d as u32)?;
        w.write_u32::<LittleEndian>(self.c as u32)?;
        for &v in &self.w {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &v in &self.b {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u64::<LittleEndian>(self.config_hash)?;
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HEAD_MAGIC {
            return Err(Error::Format(format!("bad head magic {magic:?}, expected \"MIAH\"")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != HEAD_VERSION {
            return Err(Error::Format(format!("unsupported head version {version}")));
        }
        let d = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let mut w = vec![0.0; c * d];
        r.read_f64_into::<LittleEndian>(&mut w)?;
        let mut b = vec![0.0; c];
        r.read_f64_into::<LittleEndian>(&mut b)?;
        let config_hash = r.read_u64::<LittleEndian>()?;
        Ok(Self { d, c, w, b, config_hash })
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mini-batch SGD hyperparameters. Ranges follow the head-only search space.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    #[serde(default)]
    pub l2: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=200).contains(&self.epochs) {
            return Err(Error::Config(format!("epochs {} outside [1, 200]", self.epochs)));
        }
        if !(10..=1000).contains(&self.batch_size) {
            return Err(Error::Config(format!("batch_size {} outside [10, 1000]", self.batch_size)));
        }
        if !(1e-7..=1e-2).contains(&self.learning_rate) {
            return Err(Error::Config(format!(
                "learning_rate {} outside [1e-7, 1e-2]",
                self.learning_rate
            )));
        }
        if self.l2 < 0.0 {
            return Err(Error::Config("l2 must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        let mut h = crate::seed::derive_seed(self.epochs as u64, "config", self.batch_size as u64);
        h = crate::seed::derive_seed(h, "lr", self.learning_rate.to_bits());
        crate::seed::derive_seed(h, "l2", self.l2.to_bits())
    }
}

/// Train a zero-initialized head with plain mini-batch SGD on cross-entropy
/// plus (l2/2)||W||^2. Data is reshuffled each epoch from the seed; the final
/// short batch is kept with the gradient averaged over its actual size.
pub fn train_head(
    pool: &FeatureDataset,
    train_ids: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<LinearHead> {
    if train_ids.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    config.validate()?;
    let d = pool.dim();
    let c = pool.classes();
    let mut head = LinearHead::zeros(d, c);
    head.config_hash = config.hash();

    let mut rng = rng_for(seed, "train-head", 0);
    let mut order = train_ids.to_vec();
    let batch = config.batch_size as usize;
    let lr = config.learning_rate;
    let mut grad_w = vec![0.0; c * d];
    let mut grad_b = vec![0.0; c];
    let mut step = 0usize;

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &id in chunk {
                let x = pool.row(id);
                let y = pool.label(id);
                let p = head.posteriors(x);
                batch_loss += -p[y].max(f64::MIN_POSITIVE).ln();
                for class in 0..c {
                    let delta = p[class] - if class == y { 1.0 } else { 0.0 };
                    let row = &mut grad_w[class * d..(class + 1) * d];
                    for (g, &xj) in row.iter_mut().zip(x) {
                        *g += delta * f64::from(xj);
                    }
                    grad_b[class] += delta;
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            for (w, &g) in head.w.iter_mut().zip(&grad_w) {
                *w -= lr * (g * inv + config.l2 * *w);
            }
            for (b, &g) in head.b.iter_mut().zip(&grad_b) {
                *b -= lr * g * inv;
            }
            step += 1;
        }
    }
    Ok(head)
}

pub fn predict_posteriors(head: &LinearHead, x: &[f32]) -> Vec<f64> {
    head.posteriors(x)
}

/// Mean cross-entropy of a head over a set of ids.
pub fn mean_loss(pool: &FeatureDataset, head: &LinearHead, ids: &[usize]) -> f64 {
    let total: f64 = ids
        .iter()
        .map(|&id| -head.posteriors(pool.row(id))[pool.label(id)].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / ids.len() as f64
}

/// Classification accuracy of a head over a set of ids.
pub fn accuracy(pool: &FeatureDataset, head: &LinearHead, ids: &[usize]) -> f64 {
    let correct = ids
        .iter()
        .filter(|&&id| {
            let p = head.posteriors(pool.row(id));
            let argmax = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            argmax == pool.label(id)
        })
        .count();
    correct as f64 / ids.len() as f64
}

/// Distillation output: the student head, one loss trajectory per probe
/// (hard-label cross-entropy after each epoch, teacher loss appended last),
/// and the mean student KL training loss measured at the end of each epoch.
#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: LinearHead,
    pub probe_ids: Vec<usize>,
    pub trajectories: Vec<Vec<f64>>,
    pub epoch_kl: Vec<f64>,
}

/// Distill `teacher` into a zero-initialized student by minimizing
/// KL(teacher || student) on the distillation set, recording every probe's
/// hard-label loss after each epoch.
pub fn distill(
    pool: &FeatureDataset,
    teacher: &LinearHead,
    distill_ids: &[usize],
    probe_ids: &[usize],
    distill_epochs: u32,
    config: &TrainConfig,
    seed: u64,
) -> Result<DistillOutcome> {
    if distill_ids.is_empty() {
        return Err(Error::Config("empty distillation set".into()));
    }
    assert!(distill_epochs >= 1);
    let d = pool.dim();
    let c = pool.classes();
    let mut student = LinearHead::zeros(d, c);
    student.config_hash = config.hash();

    // Teacher posteriors are fixed for the whole run.
    let targets: Vec<Vec<f64>> =
        distill_ids.iter().map(|&id| teacher.posteriors(pool.row(id))).collect();

    let mut rng = rng_for(seed, "distill", 0);
    let mut order: Vec<usize> = (0..distill_ids.len()).collect();
    let batch = config.batch_size as usize;
    let lr = config.learning_rate;
    let mut grad_w = vec![0.0; c * d];
    let mut grad_b = vec![0.0; c];
    let mut trajectories: Vec<Vec<f64>> = vec![Vec::with_capacity(distill_epochs as usize + 1); probe_ids.len()];
    let mut epoch_kl = Vec::with_capacity(distill_epochs as usize);
    let mut step = 0usize;

    for _epoch in 0..distill_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &pos in chunk {
                let x = pool.row(distill_ids[pos]);
                let t = &targets[pos];
                let s = student.posteriors(x);
                for (ti, si) in t.iter().zip(&s) {
                    if *ti > 0.0 {
                        batch_loss += ti * (ti.ln() - si.max(f64::MIN_POSITIVE).ln());
                    }
                }
                // d KL(t || softmax(z)) / dz = s - t
                for class in 0..c {
                    let delta = s[class] - t[class];
                    let row = &mut grad_w[class * d..(class + 1) * d];
                    for (g, &xj) in row.iter_mut().zip(x) {
                        *g += delta * f64::from(xj);
                    }
                    grad_b[class] += delta;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            let inv = 1.0 / chunk.len() as f64;
            for (w, &g) in student.w.iter_mut().zip(&grad_w) {
                *w -= lr * (g * inv + config.l2 * *w);
            }
            for (b, &g) in student.b.iter_mut().zip(&grad_b) {
                *b -= lr * g * inv;
            }
            step += 1;
        }
        // End-of-epoch bookkeeping: probe losses and mean KL.
        for (traj, &probe) in trajectories.iter_mut().zip(probe_ids) {
            let p = student.posteriors(pool.row(probe));
            traj.push(-p[pool.label(probe)].max(f64::MIN_POSITIVE).ln());
        }
        let mut kl_total = 0.0;
        for (pos, &id) in distill_ids.iter().enumerate() {
            let s = student.posteriors(pool.row(id));
            for (ti, si) in targets[pos].iter().zip(&s) {
                if *ti > 0.0 {
                    kl_total += ti * (ti.ln() - si.max(f64::MIN_POSITIVE).ln());
                }
            }
        }
        epoch_kl.push(kl_total / distill_ids.len() as f64);
    }

    // Teacher loss is the final trajectory feature.
    for (traj, &probe) in trajectories.iter_mut().zip(probe_ids) {
        let p = teacher.posteriors(pool.row(probe));
        traj.push(-p[pool.label(probe)].max(f64::MIN_POSITIVE).ln());
    }

    Ok(DistillOutcome { student, probe_ids: probe_ids.to_vec(), trajectories, epoch_kl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian;

    fn cfg(epochs: u32, lr: f64) -> TrainConfig {
        TrainConfig { epochs, batch_size: 10, learning_rate: lr, l2: 0.0 }
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = LinearHead::zeros(4, 5);
        let p = head.posteriors(&[1.0, -2.0, 0.5, 3.0]);
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[11.0, 12.0, 13.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn near_zero_lr_keeps_head_near_zero() {
        let ds = synth_gaussian(2, 3, 10, 1.0, 5);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg(1, 1e-7), 0).unwrap();
        // One epoch at lr 1e-7: max |delta| bounded by lr * steps * grad bound.
        let bound = 1e-7 * 2.0 * 10.0;
        for &w in head.w.iter().chain(&head.b) {
            assert!(w.abs() < bound, "weight {w} exceeds bound {bound}");
        }
        let p = head.posteriors(ds.row(0));
        for v in p {
            assert!((v - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn separable_pair_is_memorized() {
        // 2 linearly separable points, trainer as its own oracle.
        let labels = vec![0u16, 1];
        let features = vec![1.0f32, 0.0, -1.0, 0.0];
        let ds = crate::data::FeatureDataset::new(2, 2, 0, labels, features).unwrap();
        let head = train_head(&ds, &[0, 1], &cfg(200, 1e-2), 7).unwrap();
        assert_eq!(accuracy(&ds, &head, &[0, 1]), 1.0);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = synth_gaussian(3, 4, 30, 1.0, 5);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let a = train_head(&ds, &ids, &cfg(20, 1e-2), 13).unwrap();
        let b = train_head(&ds, &ids, &cfg(20, 1e-2), 13).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
        let c = train_head(&ds, &ids, &cfg(20, 1e-2), 14).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn separable_synth_reaches_high_accuracy() {
        let ds = synth_gaussian(2, 2, 200, 8.0, 21);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let (train, test): (Vec<usize>, Vec<usize>) = ids.iter().partition(|&&i| i % 2 == 0);
        let head = train_head(&ds, &train, &cfg(100, 1e-2), 3).unwrap();
        assert!(accuracy(&ds, &head, &test) >= 0.99);
    }

    #[test]
    fn head_roundtrip() {
        let ds = synth_gaussian(3, 4, 20, 1.0, 5);
        let ids: Vec<usize> = (0..ds.len()).collect();
        let head = train_head(&ds, &ids, &cfg(5, 1e-3), 2).unwrap();
        let mut bytes = Vec::new();
        head.save(&mut bytes).unwrap();
        let back = LinearHead::load(bytes.as_slice()).unwrap();
        assert_eq!(head, back);
    }

    #[test]
    fn uniform_teacher_gives_flat_trajectories() {
        let ds = synth_gaussian(4, 3, 20, 1.0, 5);
        let teacher = LinearHead::zeros(3, 4);
        let distill_ids: Vec<usize> = (0..40).collect();
        let probes: Vec<usize> = (40..50).collect();
        let out =
            distill(&ds, &teacher, &distill_ids, &probes, 3, &cfg(1, 1e-7), 9).unwrap();
        let ln_c = 4f64.ln();
        for traj in &out.trajectories {
            assert_eq!(traj.len(), 4);
            for &loss in traj {
                assert!((loss - ln_c).abs() < 1e-3, "loss {loss} far from ln C {ln_c}");
            }
        }
        // KL against a uniform teacher starts near zero for a zero student.
        assert!(out.epoch_kl[0] < 1e-6);
    }

    #[test]
    fn distill_kl_nonincreasing_within_slack() {
        let ds = synth_gaussian(3, 4, 60, 2.0, 8);
        let train: Vec<usize> = (0..60).collect();
        let teacher = train_head(&ds, &train, &cfg(100, 1e-2), 4).unwrap();
        let distill_ids: Vec<usize> = (60..150).collect();
        let probes: Vec<usize> = (150..170).collect();
        let out = distill(&ds, &teacher, &distill_ids, &probes, 10, &cfg(1, 1e-2), 6).unwrap();
        for w in out.epoch_kl.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "KL rose beyond slack: {} -> {}", w[0], w[1]);
        }
    }
}
