//! Change scores.
//!
//! For a tensor with change `d = after - before` over `n` entries:
//!
//! ```text
//! score = ||d||_2 / (sqrt(n) * max(std(d), 1e-12))
//! ```
//!
//! with the population standard deviation. A block's score is the sum of
//! the scores of its tensors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelState, ParamTensor};

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerScore {
    pub tensor_name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockScore {
    pub block_id: usize,
    pub group_id: usize,
    pub score: f64,
}

/// Blocks sharing one ordered parameter-count signature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockGroup {
    pub group_id: usize,
    pub signature: Vec<usize>,
    pub block_ids: Vec<usize>,
}

/// What scoring and grouping need to know about one tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    pub name: String,
    pub block_id: Option<usize>,
    pub param_count: usize,
}

pub fn structure(model: &ModelState) -> Vec<TensorMeta> {
    model
        .params
        .iter()
        .map(|p| TensorMeta { name: p.name.clone(), block_id: p.block_id, param_count: p.param_count() })
        .collect()
}

pub fn layer_score(before: &ParamTensor, after: &ParamTensor) -> Result<LayerScore> {
    if before.name != after.name || before.shape != after.shape || before.values.len() != after.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot score `{}` against `{}`",
            before.name, after.name
        )));
    }
    let n = before.values.len();
    let score = if n == 0 {
        0.0
    } else {
        let deltas = || after.values.iter().zip(&before.values).map(|(a, b)| a - b);
        let norm = deltas().map(|d| d * d).sum::<f64>().sqrt();
        let mean = deltas().sum::<f64>() / n as f64;
        let var = deltas().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        norm / ((n as f64).sqrt() * var.sqrt().max(STD_FLOOR))
    };
    Ok(LayerScore { tensor_name: before.name.clone(), score })
}

/// Scores of every tensor, in model order.
pub fn layer_scores(before: &ModelState, after: &ModelState) -> Result<Vec<LayerScore>> {
    before.check_congruent(after)?;
    before.params.iter().zip(&after.params).map(|(b, a)| layer_score(b, a)).collect()
}

/// Partitions blocks by exact equality of their ordered parameter-count
/// sequences. Group ids follow first occurrence.
pub fn group_blocks(structure: &[TensorMeta]) -> Vec<BlockGroup> {
    let mut signatures: Vec<(usize, Vec<usize>)> = Vec::new();
    for t in structure {
        if let Some(b) = t.block_id {
            match signatures.iter_mut().find(|(id, _)| *id == b) {
                Some((_, sig)) => sig.push(t.param_count),
                None => signatures.push((b, vec![t.param_count])),
            }
        }
    }
    let mut groups: Vec<BlockGroup> = Vec::new();
    for (block, sig) in signatures {
        match groups.iter_mut().find(|g| g.signature == sig) {
            Some(g) => g.block_ids.push(block),
            None => groups.push(BlockGroup { group_id: groups.len(), signature: sig, block_ids: vec![block] }),
        }
    }
    groups
}

/// Sums layer scores per block, in the tensor order of `structure`.
pub fn block_scores(scores: &[LayerScore], structure: &[TensorMeta]) -> Result<Vec<BlockScore>> {
    let groups = group_blocks(structure);
    let mut out: Vec<BlockScore> = Vec::new();
    for t in structure {
        let Some(block) = t.block_id else { continue };
        let score = scores
            .iter()
            .find(|s| s.tensor_name == t.name)
            .ok_or_else(|| Error::MissingScore(t.name.clone()))?
            .score;
        match out.iter_mut().find(|b| b.block_id == block) {
            Some(b) => b.score += score,
            None => {
                let group_id = groups
                    .iter()
                    .find(|g| g.block_ids.contains(&block))
                    .map(|g| g.group_id)
                    .expect("every block belongs to a group");
                out.push(BlockScore { block_id: block, group_id, score });
            }
        }
    }
    Ok(out)
}

/// The `s` highest-scoring blocks, ties going to the lower block id,
/// returned in ascending id order.
pub fn select_blocks(scores: &[BlockScore], s: usize) -> Result<Vec<usize>> {
    if s == 0 || s > scores.len() {
        return Err(Error::SelectionOutOfRange { requested: s, available: scores.len() });
    }
    let mut ranked: Vec<&BlockScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.block_id.cmp(&b.block_id)));
    let mut ids: Vec<usize> = ranked[..s].iter().map(|b| b.block_id).collect();
    ids.sort_unstable();
    Ok(ids)
}
