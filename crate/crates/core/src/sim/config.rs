use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::Strategy;
use crate::model::{ArchConfig, LocalUpdateConfig};

/// Overrides the configured output directory (the CLI `--out` flag wins
/// over both).
pub const OUT_DIR_ENV: &str = "FEDTLU_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fixed portion from a freshly initialised model.
    FromScratch,
    /// Full-update pre-training, then halved shards, lower participation
    /// and the decaying portion schedule.
    Finetune,
    /// `Finetune` with a fraction of clients carrying shuffled labels.
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain local SGD, weighted averaging on the server.
    Fedavg,
    /// Local objective gains `mu/2 * ||w - w_global||^2`.
    Fedprox { mu: f64 },
}

impl Aggregation {
    pub fn mu(self) -> f64 {
        match self {
            Aggregation::Fedavg => 0.0,
            Aggregation::Fedprox { mu } => mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortionSchedule {
    Fixed,
    Decay,
}

/// What the plateau rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauMetric {
    /// NLL of the new global model on the test split.
    GlobalEvalNll,
    /// Mean final-epoch training NLL of the round's participants.
    LocalTrainNll,
}

/// Model dimensions other than the vocabulary, which comes from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchSpec {
    pub embed_dim: usize,
    pub context_len: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        let a = ArchConfig::new(1);
        Self { embed_dim: a.embed_dim, context_len: a.context_len, hidden_dim: a.hidden_dim, num_blocks: a.num_blocks }
    }
}

impl ArchSpec {
    pub fn with_vocab(self, vocab_size: usize) -> ArchConfig {
        ArchConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            context_len: self.context_len,
            hidden_dim: self.hidden_dim,
            num_blocks: self.num_blocks,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    /// Model init, client sampling, local batch order, random block picks.
    pub experiment: u64,
    /// Shard sizes.
    pub data: u64,
    /// Which clients are noisy and how their labels are permuted.
    pub corruption: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write per-round tensor scores as JSON lines.
    pub score_dump: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), score_dump: false }
    }
}

fn d_test_fraction() -> f64 {
    0.05
}
fn d_participation() -> f64 {
    0.10
}
fn d_finetune_participation() -> f64 {
    0.05
}
fn d_portion() -> f64 {
    0.5
}
fn d_batch_size() -> usize {
    16
}
fn d_seq_len() -> usize {
    32
}
fn d_epochs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub corpus_path: PathBuf,
    #[serde(default = "d_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub arch: ArchSpec,
    /// Number of clients `K`.
    pub clients: usize,
    /// Fraction of clients sampled per round (pre-training and
    /// from-scratch rounds).
    #[serde(default = "d_participation")]
    pub participation: f64,
    /// Participation once fine-tuning starts.
    #[serde(default = "d_finetune_participation")]
    pub finetune_participation: f64,
    pub strategy: Strategy,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    pub eta: f64,
    #[serde(default = "d_epochs")]
    pub local_epochs: usize,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_seq_len")]
    pub seq_len: usize,
    /// Rounds after pre-training.
    pub rounds: usize,
    #[serde(default)]
    pub pretrain_rounds: usize,
    pub scenario: Scenario,
    /// Fixed portion for the from-scratch scenario.
    #[serde(default = "d_portion")]
    pub portion: f64,
    #[serde(default = "default_plateau")]
    pub plateau_metric: PlateauMetric,
    #[serde(default)]
    pub noisy_fraction: f64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_aggregation() -> Aggregation {
    Aggregation::Fedavg
}
fn default_plateau() -> PlateauMetric {
    PlateauMetric::GlobalEvalNll
}

/// `ceil(rate * clients)`, ignoring floating-point fuzz in the product.
pub fn participants_per_round(rate: f64, clients: usize) -> usize {
    ((rate * clients as f64) - 1e-9).ceil().max(0.0) as usize
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative `corpus_path` and output directory resolve
    /// against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(parent) = path.parent() {
            for p in [&mut cfg.corpus_path, &mut cfg.output.dir] {
                if p.is_relative() {
                    *p = parent.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn schedule(&self) -> PortionSchedule {
        match self.scenario {
            Scenario::FromScratch => PortionSchedule::Fixed,
            Scenario::Finetune | Scenario::Attack => PortionSchedule::Decay,
        }
    }

    pub fn local_update(&self) -> LocalUpdateConfig {
        LocalUpdateConfig {
            epochs: self.local_epochs,
            eta: self.eta,
            batch_size: self.batch_size,
            seq_len: self.seq_len,
            mu: self.aggregation.mu(),
        }
    }

    pub fn noisy_clients(&self) -> usize {
        (self.noisy_fraction * self.clients as f64).floor() as usize
    }

    /// Output directory after applying [`OUT_DIR_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return bad("clients must be at least 1".into());
        }
        for (name, rate) in [("participation", self.participation), ("finetune_participation", self.finetune_participation)] {
            if !(rate > 0.0 && rate <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {rate}"));
            }
            if participants_per_round(rate, self.clients) < 1 {
                return bad(format!("{name} selects no clients"));
            }
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if !(self.noisy_fraction >= 0.0 && self.noisy_fraction < 1.0) {
            return bad(format!("noisy_fraction must lie in [0, 1), got {}", self.noisy_fraction));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be finite and non-negative, got {}", self.eta));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch_size and seq_len must be at least 1".into());
        }
        if !(self.portion > 0.0 && self.portion <= 1.0) {
            return bad(format!("portion must lie in (0, 1], got {}", self.portion));
        }
        if let Aggregation::Fedprox { mu } = self.aggregation {
            if !(mu >= 0.0 && mu.is_finite()) {
                return bad(format!("mu must be finite and non-negative, got {mu}"));
            }
        }
        self.arch.with_vocab(1).validate().map_err(|e| Error::Config(e.to_string()))?;
        match self.scenario {
            Scenario::FromScratch if self.pretrain_rounds > 0 => {
                bad("pretrain_rounds only applies to finetune and attack scenarios".into())
            }
            Scenario::FromScratch | Scenario::Finetune if self.noisy_fraction > 0.0 => {
                bad("noisy_fraction requires the attack scenario".into())
            }
            Scenario::Finetune | Scenario::Attack if self.pretrain_rounds == 0 => {
                bad("fine-tuning scenarios need pretrain_rounds >= 1".into())
            }
            Scenario::Attack if self.noisy_clients() == 0 => {
                bad("attack scenario selects no noisy clients".into())
            }
            _ => Ok(()),
        }
    }
}
