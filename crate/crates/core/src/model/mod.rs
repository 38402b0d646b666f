//! A small next-token language model.
//!
//! The network reads a window of the `context_len` most recent token ids,
//! embeds and concatenates them, projects into a hidden state and passes it
//! through `num_blocks` identical residual blocks before the output
//! projection:
//!
//! ```text
//! x   = concat(embed[t_1], .., embed[t_C])
//! h_0 = tanh(x W_in + b_in)
//! h_r = h_{r-1} + tanh(h_{r-1} W1_r + b1_r) W2_r + b2_r
//! y   = softmax(h_R W_out + b_out)
//! ```
//!
//! Dense weights are stored as `[in, out]` row-major so a batch of row
//! vectors multiplies on the left.

mod checkpoint;
mod forward;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{loss_and_grads, mean_nll, perplexity};
pub use train::{local_update, local_update_tracked, proximal_adjust, LocalUpdateConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const EMBED: &str = "embed";
pub const INPUT_WEIGHT: &str = "input.weight";
pub const INPUT_BIAS: &str = "input.bias";
pub const OUTPUT_WEIGHT: &str = "output.weight";
pub const OUTPUT_BIAS: &str = "output.bias";

const INIT_RANGE: f64 = 0.05;

fn default_embed_dim() -> usize {
    32
}
fn default_context_len() -> usize {
    8
}
fn default_hidden_dim() -> usize {
    64
}
fn default_num_blocks() -> usize {
    4
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_num_blocks")]
    pub num_blocks: usize,
}

impl ArchConfig {
    /// Default dimensions for the given vocabulary.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: default_embed_dim(),
            context_len: default_context_len(),
            hidden_dim: default_hidden_dim(),
            num_blocks: default_num_blocks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("context_len", self.context_len),
            ("hidden_dim", self.hidden_dim),
            ("num_blocks", self.num_blocks),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArch(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// The ordered list of `(name, shape, block_id)` every model with this
    /// architecture carries.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, Option<usize>)> {
        let (v, d, c, h) = (self.vocab_size, self.embed_dim, self.context_len, self.hidden_dim);
        let mut out = vec![
            (EMBED.to_string(), vec![v, d], None),
            (INPUT_WEIGHT.to_string(), vec![c * d, h], None),
            (INPUT_BIAS.to_string(), vec![h], None),
        ];
        for b in 0..self.num_blocks {
            out.push((block_tensor_name(b, "dense1.weight"), vec![h, h], Some(b)));
            out.push((block_tensor_name(b, "dense1.bias"), vec![h], Some(b)));
            out.push((block_tensor_name(b, "dense2.weight"), vec![h, h], Some(b)));
            out.push((block_tensor_name(b, "dense2.bias"), vec![h], Some(b)));
        }
        out.push((OUTPUT_WEIGHT.to_string(), vec![h, v], None));
        out.push((OUTPUT_BIAS.to_string(), vec![v], None));
        out
    }

    pub fn num_tensors(&self) -> usize {
        5 + 4 * self.num_blocks
    }
}

pub fn block_tensor_name(block: usize, suffix: &str) -> String {
    format!("block{block}.{suffix}")
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
    /// Index of the repeated block this tensor belongs to; `None` for the
    /// embedding, input and output layers.
    pub block_id: Option<usize>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>, block_id: Option<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            block_id,
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Same name, shape and block membership.
    pub fn congruent(&self, other: &ParamTensor) -> bool {
        self.name == other.name && self.shape == other.shape && self.block_id == other.block_id
    }
}

/// Ordered parameters of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: ArchConfig,
    pub params: Vec<ParamTensor>,
}

/// Partial derivatives of the mean NLL, keyed exactly like
/// [`ModelState::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<ParamTensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.params.iter().find(|p| p.name == name)
    }
}

// Fixed tensor positions within `params`.
pub(crate) struct Slots {
    blocks: usize,
}

impl Slots {
    pub(crate) fn new(arch: &ArchConfig) -> Self {
        Self { blocks: arch.num_blocks }
    }
    pub(crate) const EMBED: usize = 0;
    pub(crate) const IN_W: usize = 1;
    pub(crate) const IN_B: usize = 2;
    pub(crate) fn block(&self, b: usize) -> [usize; 4] {
        let base = 3 + 4 * b;
        [base, base + 1, base + 2, base + 3]
    }
    pub(crate) fn out_w(&self) -> usize {
        3 + 4 * self.blocks
    }
    pub(crate) fn out_b(&self) -> usize {
        4 + 4 * self.blocks
    }
}

impl ModelState {
    /// An all-zero model.
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let params = arch
            .layout()
            .into_iter()
            .map(|(name, shape, block)| ParamTensor::zeros(name, shape, block))
            .collect();
        Ok(Self { arch, params })
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn total_params(&self) -> usize {
        self.params.iter().map(ParamTensor::param_count).sum()
    }

    /// Same architecture and tensor layout.
    pub fn congruent(&self, other: &ModelState) -> bool {
        self.arch == other.arch
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.congruent(b))
    }

    pub(crate) fn check_congruent(&self, other: &ModelState) -> Result<()> {
        if self.congruent(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(
                "models do not share a tensor layout".to_string(),
            ))
        }
    }

    /// Number of repeated blocks and their ordered parameter-count
    /// sequences, in block order.
    pub fn block_signatures(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
        for p in &self.params {
            if let Some(b) = p.block_id {
                match out.iter_mut().find(|(id, _)| *id == b) {
                    Some((_, sig)) => sig.push(p.param_count()),
                    None => out.push((b, vec![p.param_count()])),
                }
            }
        }
        out
    }
}

/// Seeded initialisation: weights uniform in `[-0.05, 0.05]`, biases zero.
pub fn init_model(arch: ArchConfig, seed: u64) -> Result<ModelState> {
    let mut model = ModelState::zeros(arch)?;
    let mut rng = rng_from_seed(seed);
    for p in &mut model.params {
        if p.shape.len() == 2 {
            for v in &mut p.values {
                *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
    }
    Ok(model)
}
