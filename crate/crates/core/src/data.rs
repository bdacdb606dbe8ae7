//! Feature-store ingestion, synthetic embeddings, shot sampling, and
//! target/shadow membership split construction.
//!
//! Samples are identified by their row index in the store. Augmented views,
//! when present, are precomputed upstream (the backbone is frozen) and shipped
//! inside the store; this module never synthesizes pixel transforms.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seed::rng_for;

const MAGIC: &[u8; 4] = b"MIAF";
const VERSION: u32 = 1;

/// Labeled feature vectors acting as the sample pool of the data
/// distribution. Features are stored as f32 (the wire format) and widened to
/// f64 inside the numerics.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    n: usize,
    d: usize,
    c: usize,
    k: usize,
    labels: Vec<u16>,
    /// n * (1 + k) * d, row-major; per sample: original row, then k views.
    features: Vec<f32>,
}

impl FeatureDataset {
    pub fn new(d: usize, c: usize, k: usize, labels: Vec<u16>, features: Vec<f32>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Format("empty dataset (n = 0)".into()));
        }
        if features.len() != n * (1 + k) * d {
            return Err(Error::Format(format!(
                "feature buffer length {} does not match n*(1+K)*d = {}",
                features.len(),
                n * (1 + k) * d
            )));
        }
        let mut seen = vec![false; c];
        for (row, &y) in labels.iter().enumerate() {
            if usize::from(y) >= c {
                return Err(Error::Validation {
                    row,
                    message: format!("label {y} out of range (C = {c})"),
                });
            }
            seen[usize::from(y)] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("class {missing} has no samples")));
        }
        for (i, &v) in features.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: i / ((1 + k) * d),
                    message: "non-finite feature value".into(),
                });
            }
        }
        Ok(Self { n, d, c, k, labels, features })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    /// Augmented views per sample (0 when the store carries none).
    pub fn views_per_sample(&self) -> usize {
        self.k
    }

    pub fn label(&self, id: usize) -> usize {
        usize::from(self.labels[id])
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Original feature row of a sample.
    pub fn row(&self, id: usize) -> &[f32] {
        let base = id * (1 + self.k) * self.d;
        &self.features[base..base + self.d]
    }

    /// Augmented view `v` of a sample (v < K).
    pub fn view(&self, id: usize, v: usize) -> &[f32] {
        assert!(v < self.k, "view index out of range");
        let base = id * (1 + self.k) * self.d + (1 + v) * self.d;
        &self.features[base..base + self.d]
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.n as u64)?;
        w.write_u32::<LittleEndian>(self.d as u32)?;
        w.write_u32::<LittleEndian>(self.c as u32)?;
        w.write_u32::<LittleEndian>(self.k as u32)?;
        for &y in &self.labels {
            w.write_u16::<LittleEndian>(y)?;
        }
        for &f in &self.features {
            w.write_f32::<LittleEndian>(f)?;
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"MIAF\"")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let d = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let k = r.read_u32::<LittleEndian>()? as usize;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(r.read_u16::<LittleEndian>()?);
        }
        let total = n * (1 + k) * d;
        let mut features = vec![0f32; total];
        r.read_f32_into::<LittleEndian>(&mut features)?;
        Self::new(d, c, k, labels, features)
    }

    pub fn load_from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }
}

/// Isotropic Gaussian mixture: class c is centered at separation * e_{c mod d}.
/// A desk-scale stand-in for frozen-backbone embeddings.
pub fn synth_gaussian(
    c: usize,
    d: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> FeatureDataset {
    assert!(c >= 2 && d >= 1 && per_class >= 1 && separation >= 0.0);
    let mut rng = rng_for(seed, "synth-gaussian", 0);
    let n = c * per_class;
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d);
    for class in 0..c {
        for _ in 0..per_class {
            labels.push(class as u16);
            for j in 0..d {
                let mut v: f64 = StandardNormal.sample(&mut rng);
                if j == class % d {
                    v += separation;
                }
                features.push(v as f32);
            }
        }
    }
    FeatureDataset::new(d, c, 0, labels, features).expect("synthetic dataset is always valid")
}

/// Shot specification: S examples per class.
#[derive(Debug, Clone, Copy)]
pub struct ShotSpec {
    pub shots: usize,
    pub classes: usize,
}

/// Sample exactly S ids per class, without replacement, deterministic in seed.
/// Output is sorted.
pub fn sample_shots(pool: &FeatureDataset, spec: ShotSpec, seed: u64) -> Result<Vec<usize>> {
    sample_shots_from(pool, &(0..pool.len()).collect::<Vec<_>>(), spec, seed)
}

/// As `sample_shots`, but restricted to a candidate id subset.
pub fn sample_shots_from(
    pool: &FeatureDataset,
    candidates: &[usize],
    spec: ShotSpec,
    seed: u64,
) -> Result<Vec<usize>> {
    assert!(spec.shots >= 1);
    let mut rng = rng_for(seed, "sample-shots", 0);
    let mut out = Vec::with_capacity(spec.classes * spec.shots);
    for class in 0..spec.classes {
        let mut ids: Vec<usize> =
            candidates.iter().copied().filter(|&i| pool.label(i) == class).collect();
        if ids.len() < spec.shots {
            return Err(Error::Capacity(format!(
                "class {class} has {} samples, need S = {}",
                ids.len(),
                spec.shots
            )));
        }
        ids.shuffle(&mut rng);
        out.extend_from_slice(&ids[..spec.shots]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitProtocol {
    /// Each pool sample is IN for exactly M/2 shadow models; a single
    /// class-balanced target training set is assigned separately.
    BalancedSingleTarget,
    /// Every row, target included, draws membership i.i.d. Bernoulli(0.5).
    EfficientBernoulli,
}

/// Membership design matrix over a sample pool: one target row and M shadow rows.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub pool_ids: Vec<usize>,
    pub target_members: Vec<bool>,
    /// M rows, each over pool positions.
    pub shadow_members: Vec<Vec<bool>>,
    pub protocol: SplitProtocol,
}

impl SplitPlan {
    pub fn shadow_count(&self) -> usize {
        self.shadow_members.len()
    }

    fn pool_position(&self, id: usize) -> Option<usize> {
        self.pool_ids.iter().position(|&p| p == id)
    }

    /// Ids the target model trains on.
    pub fn target_train_ids(&self) -> Vec<usize> {
        self.pool_ids
            .iter()
            .zip(&self.target_members)
            .filter_map(|(&id, &m)| m.then_some(id))
            .collect()
    }

    /// Ids shadow `m` trains on.
    pub fn shadow_train_ids(&self, m: usize) -> Vec<usize> {
        self.pool_ids
            .iter()
            .zip(&self.shadow_members[m])
            .filter_map(|(&id, &is_in)| is_in.then_some(id))
            .collect()
    }

    pub fn is_target_member(&self, id: usize) -> bool {
        self.pool_position(id).map(|p| self.target_members[p]).unwrap_or(false)
    }

    pub fn is_shadow_member(&self, m: usize, id: usize) -> bool {
        self.pool_position(id).map(|p| self.shadow_members[m][p]).unwrap_or(false)
    }

    /// Set the target training membership from an explicit id list
    /// (balanced protocol; the id list comes from `sample_shots`).
    pub fn assign_target(&mut self, member_ids: &[usize]) -> Result<()> {
        let mut members = vec![false; self.pool_ids.len()];
        for &id in member_ids {
            let pos = self
                .pool_position(id)
                .ok_or_else(|| Error::Config(format!("target member id {id} not in pool")))?;
            members[pos] = true;
        }
        self.target_members = members;
        Ok(())
    }
}

/// Build the shadow membership matrix over `pool_ids`.
///
/// Balanced protocol: per sample, a seeded permutation of [0, M) picks the
/// first M/2 shadows as IN, so every sample is IN for exactly M/2 shadows.
/// Efficient protocol: every row (target included) is Bernoulli(0.5).
pub fn make_shadow_splits(
    pool_ids: &[usize],
    m: usize,
    protocol: SplitProtocol,
    seed: u64,
) -> Result<SplitPlan> {
    let n = pool_ids.len();
    let mut shadow_members = vec![vec![false; n]; m];
    let mut target_members = vec![false; n];
    match protocol {
        SplitProtocol::BalancedSingleTarget => {
            if m % 2 != 0 {
                return Err(Error::Config(format!(
                    "balanced protocol requires even shadow count, got M = {m}"
                )));
            }
            let mut rng = rng_for(seed, "balanced-split", 0);
            let mut order: Vec<usize> = (0..m).collect();
            for pos in 0..n {
                order.shuffle(&mut rng);
                for &shadow in order.iter().take(m / 2) {
                    shadow_members[shadow][pos] = true;
                }
            }
        }
        SplitProtocol::EfficientBernoulli => {
            let mut rng = rng_for(seed, "bernoulli-split", 0);
            for pos in 0..n {
                target_members[pos] = rng.gen_bool(0.5);
                for row in shadow_members.iter_mut() {
                    row[pos] = rng.gen_bool(0.5);
                }
            }
        }
    }
    Ok(SplitPlan { pool_ids: pool_ids.to_vec(), target_members, shadow_members, protocol })
}

/// Result of the HPO data split: half of the training ids, split 70/30.
#[derive(Debug, Clone)]
pub struct HpoSplit {
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    /// True when class stratification was infeasible and the split fell back
    /// to an unstratified 70/30.
    pub unstratified_fallback: bool,
}

/// Sample half of `train_ids`, then split that half 70/30 (train/val),
/// stratified by class where feasible. Validation size is floored, with a
/// minimum of 1.
pub fn hpo_split(pool: &FeatureDataset, train_ids: &[usize], seed: u64) -> Result<HpoSplit> {
    if train_ids.len() < 10 {
        return Err(Error::Config(format!(
            "HPO split needs at least 10 training ids, got {}",
            train_ids.len()
        )));
    }
    let mut rng = rng_for(seed, "hpo-split", 0);
    let mut ids = train_ids.to_vec();
    ids.shuffle(&mut rng);
    ids.truncate(train_ids.len() / 2);
    ids.sort_unstable();

    let n_sel = ids.len();
    let val_total = ((n_sel as f64 * 0.3).floor() as usize).max(1);

    let mut classes: Vec<usize> = ids.iter().map(|&i| pool.label(i)).collect();
    classes.sort_unstable();
    classes.dedup();

    if val_total >= classes.len() {
        // Stratified: largest-remainder allocation of val_total across classes.
        let mut by_class: Vec<Vec<usize>> = Vec::new();
        for &class in &classes {
            let mut members: Vec<usize> =
                ids.iter().copied().filter(|&i| pool.label(i) == class).collect();
            members.shuffle(&mut rng);
            by_class.push(members);
        }
        let mut quota: Vec<(usize, f64)> = by_class
            .iter()
            .enumerate()
            .map(|(ci, members)| (ci, members.len() as f64 * val_total as f64 / n_sel as f64))
            .collect();
        let mut alloc: Vec<usize> = quota.iter().map(|&(_, q)| q.floor() as usize).collect();
        let mut remaining = val_total - alloc.iter().sum::<usize>();
        quota.sort_by(|a, b| {
            (b.1 - b.1.floor()).partial_cmp(&(a.1 - a.1.floor())).unwrap().then(a.0.cmp(&b.0))
        });
        for &(ci, _) in quota.iter() {
            if remaining == 0 {
                break;
            }
            if alloc[ci] < by_class[ci].len() {
                alloc[ci] += 1;
                remaining -= 1;
            }
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (ci, members) in by_class.into_iter().enumerate() {
            let take = alloc[ci].min(members.len());
            val.extend_from_slice(&members[..take]);
            train.extend_from_slice(&members[take..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok(HpoSplit { train_ids: train, val_ids: val, unstratified_fallback: false })
    } else {
        ids.shuffle(&mut rng);
        let val = ids.split_off(n_sel - val_total);
        let mut train = ids;
        train.sort_unstable();
        let mut val = val;
        val.sort_unstable();
        Ok(HpoSplit { train_ids: train, val_ids: val, unstratified_fallback: true })
    }
}
