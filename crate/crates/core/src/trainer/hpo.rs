//! Hyperparameter search over the head-only SGD space: random sampling and a
//! tree-structured Parzen estimator with a good/bad density-ratio split.

use rand::Rng;

use crate::data::{hpo_split, FeatureDataset};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::trainer::{accuracy, train_head, TrainConfig};

/// Search ranges; defaults are the head-only bounds.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct HpoRanges {
    pub epochs: (u32, u32),
    pub batch_size: (u32, u32),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
}

impl Default for HpoRanges {
    fn default() -> Self {
        Self { epochs: (1, 200), batch_size: (10, 1000), learning_rate: (1e-7, 1e-2) }
    }
}

impl HpoRanges {
    pub fn validate(&self) -> Result<()> {
        let full = Self::default();
        if self.epochs.0 < full.epochs.0
            || self.epochs.1 > full.epochs.1
            || self.epochs.0 > self.epochs.1
            || self.batch_size.0 < full.batch_size.0
            || self.batch_size.1 > full.batch_size.1
            || self.batch_size.0 > self.batch_size.1
            || self.learning_rate.0 < full.learning_rate.0
            || self.learning_rate.1 > full.learning_rate.1
            || self.learning_rate.0 > self.learning_rate.1
        {
            return Err(Error::Config("HPO ranges outside the head-only search space".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HpoStrategy {
    Random,
    Tpe,
}

/// Fraction of observations treated as "good" by the TPE split.
const TPE_GAMMA: f64 = 0.25;
const TPE_CANDIDATES: usize = 24;

/// Internal continuous encoding of a config: (epochs, batch, ln lr).
#[derive(Clone, Copy)]
struct Point([f64; 3]);

fn sample_uniform(ranges: &HpoRanges, rng: &mut impl Rng) -> Point {
    let e = rng.gen_range(ranges.epochs.0 as f64..=ranges.epochs.1 as f64);
    let b = rng.gen_range(ranges.batch_size.0 as f64..=ranges.batch_size.1 as f64);
    let l = rng.gen_range(ranges.learning_rate.0.ln()..=ranges.learning_rate.1.ln());
    Point([e, b, l])
}

fn to_config(p: &Point, ranges: &HpoRanges) -> TrainConfig {
    TrainConfig {
        epochs: p.0[0].round() as u32,
        batch_size: p.0[1].round() as u32,
        // exp(ln(lo)) can round just below lo; clamp back into range.
        learning_rate: p.0[2].exp().clamp(ranges.learning_rate.0, ranges.learning_rate.1),
        l2: 0.0,
    }
}

fn dim_bounds(ranges: &HpoRanges, dim: usize) -> (f64, f64) {
    match dim {
        0 => (ranges.epochs.0 as f64, ranges.epochs.1 as f64),
        1 => (ranges.batch_size.0 as f64, ranges.batch_size.1 as f64),
        _ => (ranges.learning_rate.0.ln(), ranges.learning_rate.1.ln()),
    }
}

/// Parzen mixture density over one dimension with a Silverman-style bandwidth,
/// floored at 1/20 of the range so the mixture never collapses.
fn kde_density(points: &[f64], bounds: (f64, f64), x: f64) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let bw = (1.06 * var.sqrt() * n.powf(-0.2)).max((bounds.1 - bounds.0) / 20.0);
    let norm = 1.0 / (bw * (2.0 * std::f64::consts::PI).sqrt());
    points
        .iter()
        .map(|&p| norm * (-0.5 * ((x - p) / bw).powi(2)).exp())
        .sum::<f64>()
        / n
}

fn kde_sample(points: &[f64], bounds: (f64, f64), rng: &mut impl Rng) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().sum::<f64>() / n;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    let bw = (1.06 * var.sqrt() * n.powf(-0.2)).max((bounds.1 - bounds.0) / 20.0);
    let center = points[rng.gen_range(0..points.len())];
    let draw: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * bw + center;
    draw.clamp(bounds.0, bounds.1)
}

/// Search for the config maximizing validation accuracy on the HPO split.
///
/// TPE runs ceil(trials/4) random warmup trials, then splits observations
/// into good/bad at the top TPE_GAMMA fraction and proposes the candidate
/// maximizing the good/bad density ratio. Ties keep the earliest trial.
pub fn hpo_search(
    pool: &FeatureDataset,
    train_ids: &[usize],
    ranges: &HpoRanges,
    trials: u32,
    strategy: HpoStrategy,
    seed: u64,
) -> Result<TrainConfig> {
    assert!(trials >= 1);
    ranges.validate()?;
    let split = hpo_split(pool, train_ids, crate::seed::derive_seed(seed, "hpo-data", 0))?;
    let mut rng = rng_for(seed, "hpo-search", 0);

    let warmup = match strategy {
        HpoStrategy::Random => trials,
        HpoStrategy::Tpe => (trials as usize).div_ceil(4) as u32,
    };

    let mut observed: Vec<(Point, f64)> = Vec::with_capacity(trials as usize);
    let mut best: Option<(TrainConfig, f64)> = None;

    for trial in 0..trials {
        let point = if trial < warmup {
            sample_uniform(ranges, &mut rng)
        } else {
            propose_tpe(&observed, ranges, &mut rng)
        };
        let config = to_config(&point, ranges);
        let head = train_head(
            pool,
            &split.train_ids,
            &config,
            crate::seed::derive_seed(seed, "hpo-trial", trial as u64),
        )?;
        let score = accuracy(pool, &head, &split.val_ids);
        observed.push((point, score));
        let better = match &best {
            None => true,
            Some((_, best_score)) => score > *best_score,
        };
        if better {
            best = Some((config, score));
        }
    }
    Ok(best.expect("trials >= 1").0)
}

fn propose_tpe(observed: &[(Point, f64)], ranges: &HpoRanges, rng: &mut impl Rng) -> Point {
    let mut order: Vec<usize> = (0..observed.len()).collect();
    // Stable on ties so the good set is deterministic.
    order.sort_by(|&a, &b| {
        observed[b].1.partial_cmp(&observed[a].1).unwrap().then(a.cmp(&b))
    });
    let n_good = ((observed.len() as f64 * TPE_GAMMA).ceil() as usize).max(1);
    let good: Vec<usize> = order[..n_good].to_vec();
    let bad: Vec<usize> = order[n_good..].to_vec();
    if bad.is_empty() {
        return sample_uniform(ranges, rng);
    }

    let mut best_point = None;
    let mut best_ratio = f64::NEG_INFINITY;
    for _ in 0..TPE_CANDIDATES {
        let mut coords = [0.0; 3];
        let mut log_ratio = 0.0;
        for dim in 0..3 {
            let bounds = dim_bounds(ranges, dim);
            let good_pts: Vec<f64> = good.iter().map(|&i| observed[i].0 .0[dim]).collect();
            let bad_pts: Vec<f64> = bad.iter().map(|&i| observed[i].0 .0[dim]).collect();
            let x = kde_sample(&good_pts, bounds, rng);
            let lg = kde_density(&good_pts, bounds, x).max(1e-300);
            let lb = kde_density(&bad_pts, bounds, x).max(1e-300);
            coords[dim] = x;
            log_ratio += lg.ln() - lb.ln();
        }
        if log_ratio > best_ratio {
            best_ratio = log_ratio;
            best_point = Some(Point(coords));
        }
    }
    best_point.unwrap()
}
