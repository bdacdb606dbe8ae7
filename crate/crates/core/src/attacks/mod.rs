//! The eight score-based membership-inference attacks. Each emits one real
//! score per (target model, sample); higher means more member-like.

mod iha;
mod lira;
mod mlleaks;
mod mlp;
mod qmia;
mod rmia;
mod simple;
mod trajectory;

use std::collections::HashSet;
use std::io::Write;

pub use iha::iha;
pub use lira::{lira, lira_log_lr, LiraConfig, VarianceMode};
pub use mlleaks::ml_leaks;
pub use mlp::{pinball_loss, BinaryMlp, QuantileNet};
pub use qmia::{qmia, QmiaConfig};
pub use rmia::{rmia, RmiaConfig, VoteMode};
pub use simple::{attack_p, loss_attack};
pub use trajectory::{trajectory_mia, TrajectoryConfig};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::trainer::LinearHead;

/// A shadow model together with the ids it was trained on.
#[derive(Debug, Clone)]
pub struct ShadowModel {
    pub head: LinearHead,
    pub member_ids: HashSet<usize>,
}

impl ShadowModel {
    pub fn new(head: LinearHead, member_ids: impl IntoIterator<Item = usize>) -> Self {
        Self { head, member_ids: member_ids.into_iter().collect() }
    }

    pub fn is_member(&self, id: usize) -> bool {
        self.member_ids.contains(&id)
    }
}

/// Everything an attack may consult: the target head and its training set,
/// shadow models with their membership rows, and population (known
/// non-member) samples.
#[derive(Debug)]
pub struct AttackContext<'a> {
    pub dataset: &'a FeatureDataset,
    pub target: &'a LinearHead,
    pub target_train_ids: Vec<usize>,
    pub shadows: Vec<ShadowModel>,
    pub population_ids: Vec<usize>,
    pub seed: u64,
}

impl AttackContext<'_> {
    pub fn is_target_member(&self, id: usize) -> bool {
        self.target_train_ids.contains(&id)
    }

    pub(crate) fn require_population(&self) -> Result<()> {
        if self.population_ids.is_empty() {
            return Err(Error::Config("attack requires a non-empty population set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: usize,
    pub score: f64,
    pub is_member: bool,
}

/// Per-sample membership scores for one attack against one target model.
#[derive(Debug, Clone)]
pub struct AttackScoreSet {
    pub attack: String,
    pub rows: Vec<ScoreRow>,
    /// Free-form config snapshot, embedded in exports.
    pub config: String,
}

impl AttackScoreSet {
    pub fn new(attack: impl Into<String>, config: impl Into<String>) -> Self {
        Self { attack: attack.into(), rows: Vec::new(), config: config.into() }
    }

    pub fn push(&mut self, id: usize, score: f64, is_member: bool) {
        self.rows.push(ScoreRow { id, score, is_member });
    }

    pub fn pairs(&self) -> Vec<(f64, bool)> {
        self.rows.iter().map(|r| (r.score, r.is_member)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(row) = self.rows.iter().find(|r| !r.score.is_finite()) {
            return Err(Error::Validation {
                row: row.id,
                message: format!("non-finite attack score in {}", self.attack),
            });
        }
        let members = self.rows.iter().filter(|r| r.is_member).count();
        if members == 0 || members == self.rows.len() {
            return Err(Error::Config(format!(
                "score set for {} needs both member and non-member rows",
                self.attack
            )));
        }
        Ok(())
    }

    /// CSV export: `attack,sample_id,score,is_member,repeat,target_index`.
    pub fn write_csv<W: Write>(&self, mut w: W, repeat: usize, target_index: usize) -> Result<()> {
        writeln!(w, "attack,sample_id,score,is_member,repeat,target_index")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.attack,
                row.id,
                format_score(row.score),
                row.is_member,
                repeat,
                target_index
            )?;
        }
        Ok(())
    }
}

/// Stable decimal formatting shared by every CSV writer.
pub(crate) fn format_score(v: f64) -> String {
    let mut s = format!("{v:.12e}");
    // Normalize "-0" exponents emitted by some formatters for determinism.
    if s == "-0.000000000000e0" {
        s = "0.000000000000e0".into();
    }
    s
}

/// Names of the eight implemented attacks.
pub const ATTACK_NAMES: [&str; 8] =
    ["loss", "attack-p", "qmia", "ml-leaks", "lira", "rmia", "trajectory-mia", "iha"];
