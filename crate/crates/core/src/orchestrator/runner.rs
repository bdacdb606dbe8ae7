//! Executes an audit manifest: per repeat and shot level, build splits, run
//! HPO, train the target and shadow heads, evaluate every listed attack, and
//! aggregate TPR-at-FPR into a summary with median/IQR across repeats.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::attacks::{self, AttackContext, AttackScoreSet, ShadowModel};
use crate::data::{
    make_shadow_splits, sample_shots, sample_shots_from, synth_gaussian, FeatureDataset, ShotSpec,
    SplitPlan, SplitProtocol,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::seed::derive_seed;
use crate::trainer::{hpo_search, train_head, HpoRanges, LinearHead, TrainConfig};

use super::{CellError, ExperimentManifest, Summary, SummaryRow};

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Summary,
    pub summary_path: PathBuf,
}

struct TrainCell {
    /// Model index within the cell; 0 is the target (balanced) or row 0
    /// (efficient).
    index: usize,
    role: &'static str,
    ids: Vec<usize>,
    seed: u64,
}

fn model_path(dir: &Path, repeat: usize, shots: usize, cell: &TrainCell) -> PathBuf {
    dir.join(format!(
        "r{repeat}_S{shots}_m{:03}_{}_seed{:016x}.miah",
        cell.index, cell.role, cell.seed
    ))
}

fn train_cells(
    ds: &FeatureDataset,
    cells: &[TrainCell],
    config: &TrainConfig,
    workers: usize,
    model_dir: &Path,
    repeat: usize,
    shots: usize,
    resume: bool,
) -> Result<Vec<LinearHead>> {
    let results: Mutex<Vec<Option<Result<LinearHead>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = workers.min(cells.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let path = model_path(model_dir, repeat, shots, cell);
                let head = if resume && path.exists() {
                    match LinearHead::load_from_path(&path) {
                        Ok(h) if h.config_hash == config.hash() => Ok(h),
                        // Stale or corrupt file: retrain and overwrite.
                        _ => train_head(ds, &cell.ids, config, cell.seed),
                    }
                } else {
                    train_head(ds, &cell.ids, config, cell.seed)
                };
                let head = head.and_then(|h| {
                    h.save_to_path(&path)?;
                    Ok(h)
                });
                results.lock().unwrap()[i] = Some(head);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all cells visited"))
        .collect()
}

fn load_dataset(manifest: &ExperimentManifest, data_root: Option<&Path>) -> Result<FeatureDataset> {
    if let Some(spec) = &manifest.dataset.synthetic {
        return Ok(synth_gaussian(
            spec.classes,
            spec.dim,
            spec.per_class,
            spec.separation,
            derive_seed(manifest.seed, "dataset", 0),
        ));
    }
    let path = manifest.dataset.path.as_ref().expect("validated");
    let resolved = if path.is_relative() {
        data_root.map(|root| root.join(path)).unwrap_or_else(|| path.clone())
    } else {
        path.clone()
    };
    FeatureDataset::load_from_path(&resolved)
}

struct AttackPlanView<'a> {
    target: &'a LinearHead,
    target_train_ids: Vec<usize>,
    shadows: Vec<ShadowModel>,
}

fn run_one_attack(
    name: &str,
    ctx: &AttackContext,
    scored: &[usize],
    distill_ids: &[usize],
    manifest: &ExperimentManifest,
) -> Result<AttackScoreSet> {
    let knobs = &manifest.attack_config;
    let set = match name {
        "loss" => attacks::loss_attack(ctx, scored)?,
        "attack-p" => attacks::attack_p(ctx, scored)?,
        "qmia" => {
            let mut config = attacks::QmiaConfig::default();
            if let Some(level) = knobs.qmia_reference_level {
                config.reference_level = level;
            }
            if let Some(width) = knobs.qmia_hidden_width {
                config.hidden_width = width;
            }
            attacks::qmia(ctx, scored, &config)?
        }
        "ml-leaks" => attacks::ml_leaks(ctx, scored, knobs.mlleaks_k_top)?,
        "lira" => {
            let mut config = attacks::LiraConfig::default();
            if let Some(mode) = knobs.lira_variance_mode {
                config.variance_mode = mode;
            }
            if let Some(views) = knobs.lira_query_views {
                config.query_views = views;
            }
            attacks::lira(ctx, scored, &config)?
        }
        "rmia" => {
            let mut config = attacks::RmiaConfig::default();
            if let Some(gamma) = knobs.rmia_gamma {
                config.gamma = gamma;
            }
            if let Some(mode) = knobs.rmia_vote_mode {
                config.vote_mode = mode;
            }
            attacks::rmia(ctx, scored, &config)?
        }
        "trajectory-mia" => {
            let mut config = attacks::TrajectoryConfig::default();
            if let Some(epochs) = knobs.trajectory_distill_epochs {
                config.distill_epochs = epochs;
            }
            if let Some(count) = knobs.trajectory_shadow_count {
                config.shadow_count = count;
            }
            let size = knobs.trajectory_distill_size.unwrap_or(0);
            let take = if size == 0 { distill_ids.len() } else { size.min(distill_ids.len()) };
            attacks::trajectory_mia(ctx, scored, &distill_ids[..take], &config)?
        }
        "iha" => attacks::iha(ctx, scored, knobs.iha_lambda.unwrap_or(1e-3))?,
        other => return Err(Error::Config(format!("unknown attack {other}"))),
    };
    set.validate()?;
    Ok(set)
}

fn write_roc_csv(path: &Path, attack: &str, repeat: usize, curve: &eval::RocCurve) -> Result<()> {
    let mut text = String::from("attack,repeat,fpr,tpr\n");
    for &(fpr, tpr) in &curve.points {
        text.push_str(&format!(
            "{attack},{repeat},{},{}\n",
            attacks::format_score(fpr),
            attacks::format_score(tpr)
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run_experiment(
    manifest: &ExperimentManifest,
    manifest_hash: u64,
    data_root: Option<&Path>,
    resume: bool,
) -> Result<RunOutcome> {
    manifest.validate()?;
    let ds = load_dataset(manifest, data_root)?;
    let out = &manifest.out_dir;
    let model_dir = out.join("models");
    let score_dir = out.join("scores");
    let roc_dir = out.join("roc");
    for dir in [&model_dir, &score_dir, &roc_dir] {
        std::fs::create_dir_all(dir)?;
    }

    let m = manifest.shadow_models;
    let n_fpr = manifest.fpr_targets.len();
    // per (attack, shot) -> per-repeat TPR vectors (one entry per fpr target)
    let mut tally: Vec<Vec<Vec<Vec<f64>>>> =
        vec![vec![Vec::new(); manifest.shots.len()]; manifest.attacks.len()];
    let mut errors: Vec<CellError> = Vec::new();

    for repeat in 0..manifest.repeats {
        let repeat_seed = derive_seed(manifest.seed, "repeat", repeat as u64);
        for (si, &shots) in manifest.shots.iter().enumerate() {
            let cell_seed = derive_seed(repeat_seed, "shots", shots as u64);
            let cell = run_cell(
                manifest, &ds, repeat, shots, cell_seed, m, &model_dir, &score_dir, &roc_dir,
                resume,
            );
            match cell {
                Ok(per_attack) => {
                    for (ai, result) in per_attack.into_iter().enumerate() {
                        match result {
                            Ok(tprs) => tally[ai][si].push(tprs),
                            Err(e) => errors.push(CellError {
                                attack: manifest.attacks[ai].clone(),
                                repeat,
                                shots,
                                message: e.to_string(),
                            }),
                        }
                    }
                }
                Err(e) => {
                    // Whole-cell failure (splits or training): every attack
                    // in this (repeat, S) cell is affected.
                    for name in &manifest.attacks {
                        errors.push(CellError {
                            attack: name.clone(),
                            repeat,
                            shots,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (ai, name) in manifest.attacks.iter().enumerate() {
        for (si, &shots) in manifest.shots.iter().enumerate() {
            let repeats = &tally[ai][si];
            if repeats.is_empty() {
                continue;
            }
            let summary = eval::aggregate_repeats(repeats, &manifest.fpr_targets);
            for f in 0..n_fpr {
                rows.push(SummaryRow {
                    attack: name.clone(),
                    shots,
                    shadow_models: m,
                    fpr_target: manifest.fpr_targets[f],
                    median_tpr: summary.medians[f],
                    iqr: summary.iqrs[f],
                    n_repeats: summary.n_repeats,
                });
            }
        }
    }

    let summary = Summary { manifest_hash: format!("{manifest_hash:016x}"), rows, errors };
    let summary_path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Format(format!("summary serialization: {e}")))?;
    std::fs::write(&summary_path, json + "\n")?;
    Ok(RunOutcome { summary, summary_path })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    manifest: &ExperimentManifest,
    ds: &FeatureDataset,
    repeat: usize,
    shots: usize,
    cell_seed: u64,
    m: usize,
    model_dir: &Path,
    score_dir: &Path,
    roc_dir: &Path,
    resume: bool,
) -> Result<Vec<Result<Vec<f64>>>> {
    let c = ds.classes();
    // Candidate pool: 2S per class, so the target's members sit alongside an
    // equal-sized bank of non-members with matched class balance.
    let pool = sample_shots(ds, ShotSpec { shots: 2 * shots, classes: c }, derive_seed(cell_seed, "pool", 0))?;
    let mut plan: SplitPlan =
        make_shadow_splits(&pool, m, manifest.protocol, derive_seed(cell_seed, "split", 0))?;
    if manifest.protocol == SplitProtocol::BalancedSingleTarget {
        let target_ids = sample_shots_from(
            ds,
            &pool,
            ShotSpec { shots, classes: c },
            derive_seed(cell_seed, "target", 0),
        )?;
        plan.assign_target(&target_ids)?;
    }

    // Everything outside the pool: first half population, second half
    // distillation.
    let in_pool: std::collections::HashSet<usize> = pool.iter().copied().collect();
    let remaining: Vec<usize> = (0..ds.len()).filter(|i| !in_pool.contains(i)).collect();
    let mid = remaining.len() / 2;
    let population_ids: Vec<usize> = remaining[..mid].to_vec();
    let distill_ids: Vec<usize> = remaining[mid..].to_vec();

    let config = match (&manifest.hpo, &manifest.train) {
        (Some(budget), _) => hpo_search(
            ds,
            &plan.target_train_ids(),
            &HpoRanges::default(),
            budget.trials,
            budget.strategy,
            derive_seed(cell_seed, "hpo", 0),
        )?,
        (None, Some(train)) => *train,
        (None, None) => unreachable!("validated"),
    };

    // Training cells: balanced has target + M shadows; efficient has the
    // M + 1 row models with row 0 doubling as the default target.
    let mut cells = Vec::with_capacity(m + 1);
    cells.push(TrainCell {
        index: 0,
        role: "target",
        ids: plan.target_train_ids(),
        seed: derive_seed(cell_seed, "train-model", 0),
    });
    for shadow in 0..m {
        cells.push(TrainCell {
            index: shadow + 1,
            role: "shadow",
            ids: plan.shadow_train_ids(shadow),
            seed: derive_seed(cell_seed, "train-model", shadow as u64 + 1),
        });
    }
    let heads = train_cells(
        ds, &cells, &config, manifest.workers, model_dir, repeat, shots, resume,
    )?;

    // Rotation: balanced evaluates the single target; efficient evaluates all
    // M + 1 models as targets with the remaining M as shadows.
    let rotations: Vec<AttackPlanView> = match manifest.protocol {
        SplitProtocol::BalancedSingleTarget => vec![AttackPlanView {
            target: &heads[0],
            target_train_ids: plan.target_train_ids(),
            shadows: (0..m)
                .map(|s| ShadowModel::new(heads[s + 1].clone(), plan.shadow_train_ids(s)))
                .collect(),
        }],
        SplitProtocol::EfficientBernoulli => (0..=m)
            .map(|ti| {
                let train_ids = if ti == 0 {
                    plan.target_train_ids()
                } else {
                    plan.shadow_train_ids(ti - 1)
                };
                let shadows = (0..=m)
                    .filter(|&other| other != ti)
                    .map(|other| {
                        let ids = if other == 0 {
                            plan.target_train_ids()
                        } else {
                            plan.shadow_train_ids(other - 1)
                        };
                        ShadowModel::new(heads[other].clone(), ids)
                    })
                    .collect();
                AttackPlanView { target: &heads[ti], target_train_ids: train_ids, shadows }
            })
            .collect(),
    };

    let scored = &pool;
    let mut per_attack = Vec::with_capacity(manifest.attacks.len());
    for (ai, name) in manifest.attacks.iter().enumerate() {
        let result = (|| -> Result<Vec<f64>> {
            let mut avg = vec![0.0; manifest.fpr_targets.len()];
            for (ti, view) in rotations.iter().enumerate() {
                let ctx = AttackContext {
                    dataset: ds,
                    target: view.target,
                    target_train_ids: view.target_train_ids.clone(),
                    shadows: view.shadows.clone(),
                    population_ids: population_ids.clone(),
                    seed: derive_seed(cell_seed, "attack", (ai * (m + 2) + ti) as u64),
                };
                let set = run_one_attack(name, &ctx, scored, &distill_ids, manifest)?;
                let mut csv = Vec::new();
                set.write_csv(&mut csv, repeat, ti)?;
                std::fs::write(
                    score_dir.join(format!("{name}_r{repeat}_S{shots}_t{ti}.csv")),
                    csv,
                )?;
                let curve = eval::roc_curve(&set)?;
                write_roc_csv(
                    &roc_dir.join(format!("{name}_r{repeat}_S{shots}_t{ti}.csv")),
                    name,
                    repeat,
                    &curve,
                )?;
                for (f, &target_fpr) in manifest.fpr_targets.iter().enumerate() {
                    avg[f] += eval::tpr_at_fpr(&set, target_fpr)?.tpr;
                }
            }
            for v in avg.iter_mut() {
                *v /= rotations.len() as f64;
            }
            Ok(avg)
        })();
        per_attack.push(result);
    }
    Ok(per_attack)
}
