use super::{loss_and_grads, Gradients, ModelState};
use crate::data::{batches, TokenShard};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Hyper-parameters of one client's local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUpdateConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// FedProx proximal coefficient; `0.0` is plain SGD.
    pub mu: f64,
}

/// Adds the gradient of `mu/2 * ||current - anchor||^2` to `grads`.
pub fn proximal_adjust(
    grads: &Gradients,
    current: &ModelState,
    anchor: &ModelState,
    mu: f64,
) -> Result<Gradients> {
    current.check_congruent(anchor)?;
    let congruent = grads.params.len() == current.params.len()
        && grads.params.iter().zip(&current.params).all(|(g, p)| g.congruent(p));
    if !congruent {
        return Err(Error::ShapeMismatch(
            "gradients do not match the model layout".to_string(),
        ));
    }
    let mut out = grads.clone();
    if mu == 0.0 {
        return Ok(out);
    }
    for ((g, cur), anc) in out.params.iter_mut().zip(&current.params).zip(&anchor.params) {
        for ((gv, &c), &a) in g.values.iter_mut().zip(&cur.values).zip(&anc.values) {
            let diff = c - a;
            // skipping zero displacement keeps a -0.0 gradient entry bitwise intact
            if diff != 0.0 {
                *gv += mu * diff;
            }
        }
    }
    Ok(out)
}

/// Client-side training; see [`local_update_tracked`].
pub fn local_update(
    global: &ModelState,
    shard: &TokenShard,
    cfg: &LocalUpdateConfig,
    seed: u64,
) -> Result<ModelState> {
    local_update_tracked(global, shard, cfg, seed).map(|(m, _)| m)
}

/// Runs `cfg.epochs` epochs of mini-batch SGD from a copy of `global`,
/// with the proximal term anchored at `global`. Returns the trained model
/// and the example-weighted mean training NLL of the final epoch (`NaN`
/// when no step ran).
pub fn local_update_tracked(
    global: &ModelState,
    shard: &TokenShard,
    cfg: &LocalUpdateConfig,
    seed: u64,
) -> Result<(ModelState, f64)> {
    let c = global.arch.context_len;
    if shard.len() < c + 1 {
        return Err(Error::TooShort { len: shard.len(), needed: c + 1 });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".to_string()));
    }
    let mut model = global.clone();
    if cfg.epochs == 0 || cfg.eta == 0.0 {
        return Ok((model, f64::NAN));
    }

    let mut last_epoch_nll = f64::NAN;
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(seed, "epoch", epoch as u64, 0);
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for batch in batches(shard, c, cfg.seq_len, cfg.batch_size, epoch_seed)? {
            let (loss, grads) = loss_and_grads(&model, &batch)?;
            let grads = if cfg.mu > 0.0 {
                proximal_adjust(&grads, &model, global, cfg.mu)?
            } else {
                grads
            };
            for (p, g) in model.params.iter_mut().zip(&grads.params) {
                for (w, &gv) in p.values.iter_mut().zip(&g.values) {
                    *w -= cfg.eta * gv;
                }
            }
            weighted += loss * batch.len() as f64;
            seen += batch.len();
        }
        last_epoch_nll = weighted / seen as f64;
    }
    Ok((model, last_epoch_nll))
}
