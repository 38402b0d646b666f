use rand::seq::index::sample;

use super::config::{PlateauMetric, PortionSchedule, Scenario, SimConfig};
use super::round::{run_round, test_examples, RoundRecord, RoundSettings, ScoreRow};
use crate::data::{halve_shard, load_corpus, partition, shuffle_labels, CorpusSplit, Example, TokenShard, Vocab};
use crate::error::Result;
use crate::fed::{advance_portion, PortionScheduleState, Strategy, PORTION_LEVELS};
use crate::model::{init_model, ArchConfig, ModelState};
use crate::rng::{derive_seed, derived_rng};

/// Corpus, shards and the initial model: everything that depends only on
/// the seeds, never on the update strategy.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub split: CorpusSplit,
    pub arch: ArchConfig,
    pub shards: Vec<TokenShard>,
    pub test_examples: Vec<Example>,
    pub initial: ModelState,
}

pub fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (vocab, split) = load_corpus(&cfg.corpus_path, cfg.test_fraction)?;
    let arch = cfg.arch.with_vocab(vocab.len());
    let shards = partition(&split.train_tokens, cfg.clients, arch.context_len, cfg.seeds.data)?;
    let test_examples = test_examples(&split.test_tokens, arch.context_len, cfg.seq_len)?;
    let initial = init_model(arch, derive_seed(cfg.seeds.experiment, "init", 0, 0))?;
    Ok(Prepared { vocab, split, arch, shards, test_examples, initial })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Every round, pre-training first.
    pub records: Vec<RoundRecord>,
    /// How many leading records are pre-training rounds.
    pub pretrain_rounds: usize,
    /// Shards used after pre-training.
    pub shards: Vec<TokenShard>,
    pub scores: Vec<ScoreRow>,
    pub final_model: ModelState,
}

impl ExperimentResult {
    /// Records of the rounds run with the configured strategy.
    pub fn evaluation_records(&self) -> &[RoundRecord] {
        &self.records[self.pretrain_rounds..]
    }
}

/// State after the full-update pre-training phase.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: ModelState,
    pub records: Vec<RoundRecord>,
    pub scores: Vec<ScoreRow>,
}

pub fn pretrain(cfg: &SimConfig, prepared: &Prepared) -> Result<Pretrained> {
    let settings = RoundSettings {
        strategy: Strategy::Full,
        participation: cfg.participation,
        portion: 1.0,
        local: cfg.local_update(),
        experiment_seed: cfg.seeds.experiment,
        test_examples: &prepared.test_examples,
        dump_scores: cfg.output.score_dump,
    };
    let mut model = prepared.initial.clone();
    let mut records = Vec::with_capacity(cfg.pretrain_rounds);
    let mut scores = Vec::new();
    for round in 0..cfg.pretrain_rounds {
        let out = run_round(&model, &prepared.shards, &settings, round)?;
        model = out.model;
        records.push(out.record);
        scores.extend(out.scores);
    }
    Ok(Pretrained { model, records, scores })
}

/// Clients whose labels get shuffled in the attack scenario, ascending.
pub fn noisy_client_ids(cfg: &SimConfig) -> Vec<usize> {
    let n = cfg.noisy_clients();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = derived_rng(cfg.seeds.corruption, "noisy-clients", 0, 0);
    let mut ids = sample(&mut rng, cfg.clients, n).into_vec();
    ids.sort_unstable();
    ids
}

/// Shards for the phase after pre-training: halved for fine-tuning, with
/// labels shuffled for the attack scenario's noisy clients.
pub fn evaluation_shards(cfg: &SimConfig, prepared: &Prepared) -> Result<Vec<TokenShard>> {
    let c = prepared.arch.context_len;
    match cfg.scenario {
        Scenario::FromScratch => Ok(prepared.shards.clone()),
        Scenario::Finetune | Scenario::Attack => {
            let mut shards: Vec<TokenShard> =
                prepared.shards.iter().map(|s| halve_shard(s, c)).collect::<Result<_>>()?;
            for k in noisy_client_ids(cfg) {
                let seed = derive_seed(cfg.seeds.corruption, "labels", k as u64, 0);
                shards[k] = shuffle_labels(&shards[k], c, seed)?;
            }
            Ok(shards)
        }
    }
}

/// Runs the configured strategy for `cfg.rounds` rounds on top of a
/// (possibly pre-trained) starting state.
pub fn run_evaluation_phase(cfg: &SimConfig, prepared: &Prepared, start: Pretrained) -> Result<ExperimentResult> {
    let shards = evaluation_shards(cfg, prepared)?;
    let (participation, schedule) = match cfg.scenario {
        Scenario::FromScratch => (cfg.participation, PortionSchedule::Fixed),
        _ => (cfg.finetune_participation, cfg.schedule()),
    };
    let mut state = PortionScheduleState::new(PORTION_LEVELS[0]);
    let Pretrained { mut model, mut records, mut scores } = start;
    let pretrain_rounds = records.len();

    for t in 0..cfg.rounds {
        let portion = match schedule {
            PortionSchedule::Fixed => cfg.portion,
            PortionSchedule::Decay => state.current_portion,
        };
        let settings = RoundSettings {
            strategy: cfg.strategy,
            participation,
            portion,
            local: cfg.local_update(),
            experiment_seed: cfg.seeds.experiment,
            test_examples: &prepared.test_examples,
            dump_scores: cfg.output.score_dump,
        };
        let out = run_round(&model, &shards, &settings, pretrain_rounds + t)?;
        if schedule == PortionSchedule::Decay {
            let metric = match cfg.plateau_metric {
                PlateauMetric::GlobalEvalNll => out.global_nll,
                PlateauMetric::LocalTrainNll => out.mean_train_nll,
            };
            state = advance_portion(&state, metric)?;
        }
        model = out.model;
        records.push(out.record);
        scores.extend(out.scores);
    }
    Ok(ExperimentResult { records, pretrain_rounds, shards, scores, final_model: model })
}

/// Runs one configured experiment end to end.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentResult> {
    let prepared = prepare(cfg)?;
    let start = pretrain(cfg, &prepared)?;
    run_evaluation_phase(cfg, &prepared, start)
}

/// One cell of a strategy-by-seed comparison.
#[derive(Debug, Clone)]
pub struct MatrixRun {
    pub strategy: Strategy,
    pub seed_index: usize,
    pub experiment_seed: u64,
    pub result: ExperimentResult,
}

/// Runs every strategy for `seeds` consecutive experiment seeds starting
/// at `cfg.seeds.experiment`. The data seed stays fixed unless
/// `vary_data_seed` is set. Preparation and pre-training are shared by all
/// strategies of one seed since neither depends on the strategy.
pub fn run_matrix(cfg: &SimConfig, strategies: &[Strategy], seeds: usize, vary_data_seed: bool) -> Result<Vec<MatrixRun>> {
    let mut out = Vec::with_capacity(strategies.len() * seeds);
    for i in 0..seeds {
        let mut seeded = cfg.clone();
        seeded.seeds.experiment = cfg.seeds.experiment + i as u64;
        if vary_data_seed {
            seeded.seeds.data = cfg.seeds.data + i as u64;
        }
        let prepared = prepare(&seeded)?;
        let start = pretrain(&seeded, &prepared)?;
        for &strategy in strategies {
            let mut run_cfg = seeded.clone();
            run_cfg.strategy = strategy;
            let result = run_evaluation_phase(&run_cfg, &prepared, start.clone())?;
            out.push(MatrixRun { strategy, seed_index: i, experiment_seed: seeded.seeds.experiment, result });
        }
    }
    Ok(out)
}
