use rand::seq::index::sample;
use serde::Serialize;

use crate::data::{stream_examples, Example, TokenShard};
use crate::error::{Error, Result};
use crate::fed::{
    aggregate, apply_update, client_weights, group_blocks, layer_scores, plan_update,
    structure, Strategy, UpdatePlan,
};
use crate::model::{local_update_tracked, mean_nll, LocalUpdateConfig, ModelState};
use crate::rng::{derive_seed, derived_rng};

/// Everything a round needs besides the model and the shards.
#[derive(Debug, Clone)]
pub struct RoundSettings<'a> {
    pub strategy: Strategy,
    pub participation: f64,
    /// Portion handed to the planner.
    pub portion: f64,
    pub local: LocalUpdateConfig,
    pub experiment_seed: u64,
    /// Pre-built evaluation examples over the test split.
    pub test_examples: &'a [Example],
    /// Collect per-tensor score rows.
    pub dump_scores: bool,
}

/// One row of a CSV report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: Strategy,
    pub portion: f64,
    pub global_ppl: f64,
    pub local_ppl: f64,
    pub selected_block_ids: Vec<usize>,
    pub num_selected_tensors: usize,
    pub participants: Vec<usize>,
}

/// One line of the optional score dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub round: usize,
    pub tensor_name: String,
    pub score: f64,
    pub block_id: Option<usize>,
    pub group_id: Option<usize>,
    pub selected: bool,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: ModelState,
    pub record: RoundRecord,
    /// Natural log of `record.global_ppl`.
    pub global_nll: f64,
    pub mean_train_nll: f64,
    pub plan: UpdatePlan,
    pub scores: Vec<ScoreRow>,
}

/// Clients taking part in `round`, ascending.
pub fn sample_clients(num_clients: usize, per_round: usize, experiment_seed: u64, round: usize) -> Vec<usize> {
    let mut rng = derived_rng(experiment_seed, "sample", round as u64, 0);
    let mut ids = sample(&mut rng, num_clients, per_round.min(num_clients)).into_vec();
    ids.sort_unstable();
    ids
}

/// Builds the test-split examples once per experiment.
pub fn test_examples(test_tokens: &[u32], context_len: usize, seq_len: usize) -> Result<Vec<Example>> {
    if test_tokens.len() < context_len + 1 {
        return Err(Error::TooShort { len: test_tokens.len(), needed: context_len + 1 });
    }
    Ok(stream_examples(test_tokens, context_len, seq_len))
}

/// One server round: sample, train locally, aggregate, score, select,
/// apply, evaluate.
pub fn run_round(
    global: &ModelState,
    shards: &[TokenShard],
    settings: &RoundSettings<'_>,
    round: usize,
) -> Result<RoundOutcome> {
    let per_round = super::config::participants_per_round(settings.participation, shards.len());
    if per_round == 0 {
        return Err(Error::EmptyParticipants);
    }
    let participants = sample_clients(shards.len(), per_round, settings.experiment_seed, round);

    let mut local_models = Vec::with_capacity(participants.len());
    let mut train_nll = 0.0;
    for &k in &participants {
        let seed = derive_seed(settings.experiment_seed, "local", round as u64, k as u64);
        let (model, nll) = local_update_tracked(global, &shards[k], &settings.local, seed)?;
        local_models.push(model);
        train_nll += nll;
    }
    let mean_train_nll = train_nll / participants.len() as f64;

    let participant_shards: Vec<&TokenShard> = participants.iter().map(|&k| &shards[k]).collect();
    let weights = client_weights(&participant_shards)?;
    let aggre = aggregate(&local_models, &weights)?;

    let round_seed = derive_seed(settings.experiment_seed, "random-select", round as u64, 0);
    let plan = plan_update(settings.strategy, global, &aggre, settings.portion, round_seed)?;
    let model = apply_update(global, &aggre, &plan)?;

    let global_nll = mean_nll(&model, settings.test_examples)?;
    if !global_nll.is_finite() {
        return Err(Error::NonFinite(global_nll));
    }
    let mut local_ppl = 0.0;
    for m in &local_models {
        local_ppl += mean_nll(m, settings.test_examples)?.exp();
    }
    local_ppl /= local_models.len() as f64;

    let scores = if settings.dump_scores { score_rows(global, &aggre, &plan, round)? } else { Vec::new() };

    let record = RoundRecord {
        round,
        strategy: settings.strategy,
        portion: settings.portion,
        global_ppl: global_nll.exp(),
        local_ppl,
        selected_block_ids: plan.selected_block_ids.clone(),
        num_selected_tensors: plan.num_selected(),
        participants,
    };
    Ok(RoundOutcome { model, record, global_nll, mean_train_nll, plan, scores })
}

fn score_rows(before: &ModelState, aggre: &ModelState, plan: &UpdatePlan, round: usize) -> Result<Vec<ScoreRow>> {
    let meta = structure(before);
    let groups = group_blocks(&meta);
    Ok(layer_scores(before, aggre)?
        .into_iter()
        .zip(&meta)
        .map(|(s, t)| ScoreRow {
            round,
            selected: plan.selected_tensor_names.contains(&s.tensor_name),
            tensor_name: s.tensor_name,
            score: s.score,
            block_id: t.block_id,
            group_id: t
                .block_id
                .and_then(|b| groups.iter().find(|g| g.block_ids.contains(&b)).map(|g| g.group_id)),
        })
        .collect())
}
