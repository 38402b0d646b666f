use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::score::{block_scores, group_blocks, layer_scores, select_blocks, structure};
use crate::error::{Error, Result};
use crate::model::{ModelState, OUTPUT_BIAS, OUTPUT_WEIGHT};
use crate::rng::derived_rng;

/// How the server folds an aggregate into the global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Take every tensor.
    Full,
    /// Non-repeated part plus the top-scoring blocks of each group.
    #[serde(rename = "fedtlu")]
    FedTlu,
    /// Non-repeated part plus uniformly drawn blocks of each group.
    Random,
    /// Output projection only.
    Last,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Full, Strategy::FedTlu, Strategy::Random, Strategy::Last];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Full => "full",
            Strategy::FedTlu => "fedtlu",
            Strategy::Random => "random",
            Strategy::Last => "last",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Strategy::Full),
            "fedtlu" => Ok(Strategy::FedTlu),
            "random" => Ok(Strategy::Random),
            "last" => Ok(Strategy::Last),
            _ => Err(Error::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePlan {
    pub strategy: Strategy,
    pub selected_tensor_names: BTreeSet<String>,
    /// Repeated blocks taken from the aggregate, ascending.
    pub selected_block_ids: Vec<usize>,
    pub portion: f64,
}

impl UpdatePlan {
    pub fn num_selected(&self) -> usize {
        self.selected_tensor_names.len()
    }
}

/// Blocks to take out of a group of `group_size`:
/// `max(1, round(portion * group_size))`, capped at the group size.
pub fn blocks_to_select(portion: f64, group_size: usize) -> usize {
    ((portion * group_size as f64).round() as usize).clamp(1, group_size.max(1))
}

pub fn plan_update(
    strategy: Strategy,
    before: &ModelState,
    aggre: &ModelState,
    portion: f64,
    round_seed: u64,
) -> Result<UpdatePlan> {
    before.check_congruent(aggre)?;
    let all = || before.params.iter().map(|p| p.name.clone());
    let non_repeated = || before.params.iter().filter(|p| p.block_id.is_none()).map(|p| p.name.clone());

    let (names, blocks, portion): (BTreeSet<String>, Vec<usize>, f64) = match strategy {
        Strategy::Full => {
            let blocks = before.block_signatures().into_iter().map(|(b, _)| b).collect();
            (all().collect(), blocks, 1.0)
        }
        Strategy::Last => (
            [OUTPUT_WEIGHT.to_string(), OUTPUT_BIAS.to_string()].into_iter().collect(),
            Vec::new(),
            portion,
        ),
        Strategy::FedTlu | Strategy::Random => {
            if !(portion > 0.0 && portion <= 1.0) {
                return Err(Error::InvalidArgument(format!("portion {portion} outside (0, 1]")));
            }
            let meta = structure(before);
            let groups = group_blocks(&meta);
            let mut chosen = Vec::new();
            if strategy == Strategy::FedTlu {
                let scores = block_scores(&layer_scores(before, aggre)?, &meta)?;
                for g in &groups {
                    let in_group: Vec<_> = scores.iter().filter(|b| b.group_id == g.group_id).cloned().collect();
                    chosen.extend(select_blocks(&in_group, blocks_to_select(portion, in_group.len()))?);
                }
            } else {
                for g in &groups {
                    let mut rng = derived_rng(round_seed, "random-blocks", g.group_id as u64, 0);
                    let s = blocks_to_select(portion, g.block_ids.len());
                    chosen.extend(sample(&mut rng, g.block_ids.len(), s).into_iter().map(|i| g.block_ids[i]));
                }
            }
            chosen.sort_unstable();
            let names = non_repeated()
                .chain(
                    before
                        .params
                        .iter()
                        .filter(|p| p.block_id.is_some_and(|b| chosen.contains(&b)))
                        .map(|p| p.name.clone()),
                )
                .collect();
            (names, chosen, portion)
        }
    };
    Ok(UpdatePlan { strategy, selected_tensor_names: names, selected_block_ids: blocks, portion })
}

/// Selected tensors come from `aggre`, everything else from `before`.
pub fn apply_update(before: &ModelState, aggre: &ModelState, plan: &UpdatePlan) -> Result<ModelState> {
    before.check_congruent(aggre)?;
    if let Some(unknown) = plan.selected_tensor_names.iter().find(|n| before.get(n).is_none()) {
        return Err(Error::UnknownTensor(unknown.clone()));
    }
    let params = before
        .params
        .iter()
        .zip(&aggre.params)
        .map(|(b, a)| if plan.selected_tensor_names.contains(&b.name) { a.clone() } else { b.clone() })
        .collect();
    Ok(ModelState { arch: before.arch, params })
}
