//! Corpus loading, client partitioning and example batching.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A character-level vocabulary. Ids follow sorted character order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
    ids: BTreeMap<char, u32>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Self {
        let mut symbols: Vec<char> = text.chars().collect();
        symbols.sort_unstable();
        symbols.dedup();
        let ids = symbols.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
        Self { symbols, ids }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.ids.get(&c).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                self.id(c)
                    .ok_or_else(|| Error::InvalidArgument(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        ids.iter()
            .map(|&i| {
                self.symbol(i).ok_or(Error::TokenOutOfRange { token: i, vocab: self.len() })
            })
            .collect()
    }
}

/// Train tokens followed by a held-out test suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train_tokens: Vec<u32>,
    pub test_tokens: Vec<u32>,
}

/// Tokenises `text`; the last `ceil(test_fraction * N)` tokens become the
/// test split.
pub fn split_text(text: &str, test_fraction: f64) -> Result<(Vocab, CorpusSplit)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if text.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = Vocab::from_text(text);
    let mut tokens = vocab.encode(text)?;
    let n = tokens.len();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    if n_test >= n {
        return Err(Error::TooShort { len: n, needed: n_test + 1 });
    }
    let test_tokens = tokens.split_off(n - n_test);
    Ok((vocab, CorpusSplit { train_tokens: tokens, test_tokens }))
}

pub fn load_corpus(path: impl AsRef<Path>, test_fraction: f64) -> Result<(Vocab, CorpusSplit)> {
    split_text(&fs::read_to_string(path)?, test_fraction)
}

/// One client's contiguous slice of the training stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenShard {
    pub client_id: usize,
    /// Offset of the first token within the training stream.
    pub start: usize,
    pub tokens: Vec<u32>,
    /// Per-position training labels when they differ from `tokens`.
    labels: Option<Vec<u32>>,
    pub corrupted: bool,
}

impl TokenShard {
    pub fn new(client_id: usize, start: usize, tokens: Vec<u32>) -> Self {
        Self { client_id, start, tokens, labels: None, corrupted: false }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The training target paired with the context ending just before
    /// position `i`.
    pub fn label(&self, i: usize) -> u32 {
        match &self.labels {
            Some(l) => l[i],
            None => self.tokens[i],
        }
    }

    /// Targets of every example, in position order.
    pub fn targets(&self, context_len: usize) -> Vec<u32> {
        (context_len..self.len()).map(|i| self.label(i)).collect()
    }
}

/// Shard bounds for `n` tokens over `k` clients: `max = n / k`,
/// `min = max / 2`, both floored.
pub fn shard_bounds(n: usize, k: usize) -> (usize, usize) {
    let max = n / k.max(1);
    (max / 2, max)
}

/// Splits `train` into `k` consecutive, non-overlapping shards whose
/// lengths are drawn uniformly from [`shard_bounds`].
pub fn partition(train: &[u32], k: usize, context_len: usize, seed: u64) -> Result<Vec<TokenShard>> {
    let mut rng = rng_from_seed(seed);
    partition_with(train, k, context_len, |lo, hi| rng.gen_range(lo..=hi))
}

pub(crate) fn partition_with(
    train: &[u32],
    k: usize,
    context_len: usize,
    mut draw: impl FnMut(usize, usize) -> usize,
) -> Result<Vec<TokenShard>> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one client".to_string()));
    }
    let (min, max) = shard_bounds(train.len(), k);
    if min < context_len + 1 {
        return Err(Error::TooShort { len: train.len(), needed: 2 * k * (context_len + 1) });
    }
    let mut offset = 0;
    let mut shards = Vec::with_capacity(k);
    for client in 0..k {
        let count = draw(min, max);
        debug_assert!((min..=max).contains(&count));
        shards.push(TokenShard::new(client, offset, train[offset..offset + count].to_vec()));
        offset += count;
    }
    Ok(shards)
}

/// Keeps the first half of a shard.
pub fn halve_shard(shard: &TokenShard, context_len: usize) -> Result<TokenShard> {
    let half = shard.len() / 2;
    if half < context_len + 1 {
        return Err(Error::TooShort { len: shard.len(), needed: 2 * (context_len + 1) });
    }
    let mut out = shard.clone();
    out.tokens.truncate(half);
    if let Some(l) = &mut out.labels {
        l.truncate(half);
    }
    Ok(out)
}

/// Re-pairs every context with a target drawn from a seeded permutation of
/// the shard's own targets. Contexts stay clean.
pub fn shuffle_labels(shard: &TokenShard, context_len: usize, seed: u64) -> Result<TokenShard> {
    if shard.len() < context_len + 2 {
        return Err(Error::TooShort { len: shard.len(), needed: context_len + 2 });
    }
    let mut targets = shard.targets(context_len);
    targets.shuffle(&mut rng_from_seed(seed));
    let mut labels = shard.tokens[..context_len].to_vec();
    labels.extend(targets);
    let mut out = shard.clone();
    out.labels = Some(labels);
    out.corrupted = true;
    Ok(out)
}

/// One training pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Example {
    pub context: Vec<u32>,
    pub target: u32,
}

fn windowed_examples(len: usize, context_len: usize, seq_len: usize, mut at: impl FnMut(usize) -> Example) -> Vec<Example> {
    let mut out = Vec::with_capacity(len.saturating_sub(context_len));
    let step = seq_len.max(1);
    let mut window_start = context_len;
    while window_start < len {
        let end = (window_start + step).min(len);
        out.extend((window_start..end).map(&mut at));
        window_start = end;
    }
    out
}

/// Every `(context, next token)` pair of a clean token stream, in order.
pub fn stream_examples(tokens: &[u32], context_len: usize, seq_len: usize) -> Vec<Example> {
    windowed_examples(tokens.len(), context_len, seq_len, |i| Example {
        context: tokens[i - context_len..i].to_vec(),
        target: tokens[i],
    })
}

/// All training pairs of a shard, in position order.
pub fn shard_examples(shard: &TokenShard, context_len: usize, seq_len: usize) -> Vec<Example> {
    windowed_examples(shard.len(), context_len, seq_len, |i| Example {
        context: shard.tokens[i - context_len..i].to_vec(),
        target: shard.label(i),
    })
}

/// Shuffled mini-batches over one epoch of a shard. The final batch may be
/// smaller than `batch_size`.
pub fn batches(
    shard: &TokenShard,
    context_len: usize,
    seq_len: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Vec<Example>>> {
    if shard.len() < context_len + 1 {
        return Err(Error::TooShort { len: shard.len(), needed: context_len + 1 });
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".to_string()));
    }
    let mut examples = shard_examples(shard, context_len, seq_len);
    examples.shuffle(&mut rng_from_seed(seed));
    Ok(examples.chunks(batch_size).map(<[Example]>::to_vec).collect())
}

/// Audit record of one shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShardRecord {
    pub client_id: usize,
    pub start: usize,
    pub length: usize,
    pub corrupted: bool,
}

pub fn shard_manifest(shards: &[TokenShard]) -> Vec<ShardRecord> {
    shards
        .iter()
        .map(|s| ShardRecord { client_id: s.client_id, start: s.start, length: s.len(), corrupted: s.corrupted })
        .collect()
}

pub fn write_shard_manifest(shards: &[TokenShard], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&shard_manifest(shards))?)?;
    Ok(())
}
