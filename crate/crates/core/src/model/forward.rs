use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use super::{Gradients, ModelState, ParamTensor, Slots};
use crate::data::Example;
use crate::error::{Error, Result};

/// Examples per forward chunk when only the loss is needed.
const EVAL_CHUNK: usize = 512;

fn mat<'a>(p: &'a ParamTensor) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((p.shape[0], p.shape[1]), &p.values).expect("rank-2 tensor")
}

fn vec1(p: &ParamTensor) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p.values[..])
}

fn into_tensor(template: &ParamTensor, values: Vec<f64>) -> ParamTensor {
    ParamTensor {
        name: template.name.clone(),
        shape: template.shape.clone(),
        values,
        block_id: template.block_id,
    }
}

fn check_batch(model: &ModelState, batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let arch = &model.arch;
    for ex in batch {
        if ex.context.len() != arch.context_len {
            return Err(Error::ShapeMismatch(format!(
                "context of length {} for a model with context_len {}",
                ex.context.len(),
                arch.context_len
            )));
        }
        for &t in ex.context.iter().chain(std::iter::once(&ex.target)) {
            if t as usize >= arch.vocab_size {
                return Err(Error::TokenOutOfRange { token: t, vocab: arch.vocab_size });
            }
        }
    }
    Ok(())
}

/// Activations kept for the backward pass.
struct Trace {
    input: Array2<f64>,
    /// `hidden[0]` is the post-tanh input projection, `hidden[r + 1]` the
    /// output of block `r`.
    hidden: Vec<Array2<f64>>,
    /// Post-tanh inner activation of each block.
    inner: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

fn forward(model: &ModelState, batch: &[Example]) -> Trace {
    let arch = &model.arch;
    let slots = Slots::new(arch);
    let (c, d) = (arch.context_len, arch.embed_dim);
    let embed = &model.params[Slots::EMBED].values;

    let mut input = Array2::<f64>::zeros((batch.len(), c * d));
    for (mut row, ex) in input.rows_mut().into_iter().zip(batch) {
        let row = row.as_slice_mut().expect("contiguous row");
        for (j, &t) in ex.context.iter().enumerate() {
            let t = t as usize;
            row[j * d..(j + 1) * d].copy_from_slice(&embed[t * d..(t + 1) * d]);
        }
    }

    let mut h0 = input.dot(&mat(&model.params[Slots::IN_W])) + vec1(&model.params[Slots::IN_B]);
    h0.mapv_inplace(f64::tanh);

    let mut hidden = vec![h0];
    let mut inner = Vec::with_capacity(arch.num_blocks);
    for b in 0..arch.num_blocks {
        let [w1, b1, w2, b2] = slots.block(b).map(|i| &model.params[i]);
        let prev = hidden.last().expect("non-empty");
        let mut a = prev.dot(&mat(w1)) + vec1(b1);
        a.mapv_inplace(f64::tanh);
        let next = a.dot(&mat(w2)) + vec1(b2) + prev;
        inner.push(a);
        hidden.push(next);
    }

    let last = hidden.last().expect("non-empty");
    let logits = last.dot(&mat(&model.params[slots.out_w()])) + vec1(&model.params[slots.out_b()]);
    Trace { input, hidden, inner, logits }
}

/// Per-row negative log-likelihood; optionally overwrites `logits` with
/// the softmax probabilities.
fn nll_rows(logits: &mut Array2<f64>, batch: &[Example], keep_probs: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch.len());
    for (mut row, ex) in logits.rows_mut().into_iter().zip(batch) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        out.push(lse - row[ex.target as usize]);
        if keep_probs {
            row.mapv_inplace(|z| (z - lse).exp());
        }
    }
    out
}

/// Mean next-token NLL over `batch` and its exact gradient.
pub fn loss_and_grads(model: &ModelState, batch: &[Example]) -> Result<(f64, Gradients)> {
    check_batch(model, batch)?;
    let arch = &model.arch;
    let slots = Slots::new(arch);
    let n = batch.len() as f64;
    let (c, d) = (arch.context_len, arch.embed_dim);

    let Trace { input, hidden, inner, mut logits } = forward(model, batch);
    let nll = nll_rows(&mut logits, batch, true);
    let mean = nll.iter().sum::<f64>() / n;

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = logits;
    for (mut row, ex) in delta.rows_mut().into_iter().zip(batch) {
        row[ex.target as usize] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }

    let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.param_count()]).collect();
    let last = hidden.last().expect("non-empty");
    grads[slots.out_w()] = last.t().dot(&delta).into_raw_vec_and_offset().0;
    grads[slots.out_b()] = delta.sum_axis(Axis(0)).to_vec();
    let mut d_hidden = delta.dot(&mat(&model.params[slots.out_w()]).t());

    for b in (0..arch.num_blocks).rev() {
        let [w1, b1, w2, b2] = slots.block(b);
        let a = &inner[b];
        let prev = &hidden[b];
        grads[w2] = a.t().dot(&d_hidden).into_raw_vec_and_offset().0;
        grads[b2] = d_hidden.sum_axis(Axis(0)).to_vec();
        let mut d_inner = d_hidden.dot(&mat(&model.params[w2]).t());
        d_inner.zip_mut_with(a, |g, &act| *g *= 1.0 - act * act);
        grads[w1] = prev.t().dot(&d_inner).into_raw_vec_and_offset().0;
        grads[b1] = d_inner.sum_axis(Axis(0)).to_vec();
        d_hidden = d_hidden + d_inner.dot(&mat(&model.params[w1]).t());
    }

    let mut d_pre = d_hidden;
    d_pre.zip_mut_with(&hidden[0], |g, &act| *g *= 1.0 - act * act);
    grads[Slots::IN_W] = input.t().dot(&d_pre).into_raw_vec_and_offset().0;
    grads[Slots::IN_B] = d_pre.sum_axis(Axis(0)).to_vec();
    let d_input = d_pre.dot(&mat(&model.params[Slots::IN_W]).t());

    let d_embed = &mut grads[Slots::EMBED];
    for (row, ex) in d_input.rows().into_iter().zip(batch) {
        for (j, &t) in ex.context.iter().enumerate() {
            let dst = &mut d_embed[t as usize * d..(t as usize + 1) * d];
            for (g, &v) in dst.iter_mut().zip(row.iter().skip(j * d).take(d)) {
                *g += v;
            }
        }
        debug_assert_eq!(row.len(), c * d);
    }

    let params = model
        .params
        .iter()
        .zip(grads)
        .map(|(p, g)| into_tensor(p, g))
        .collect();
    Ok((mean, Gradients { params }))
}

/// Mean NLL without gradients. Evaluated in fixed-size chunks; per-example
/// terms are summed in batch order.
pub fn mean_nll(model: &ModelState, batch: &[Example]) -> Result<f64> {
    check_batch(model, batch)?;
    let mut total = 0.0;
    for chunk in batch.chunks(EVAL_CHUNK) {
        let mut logits = forward(model, chunk).logits;
        total += nll_rows(&mut logits, chunk, false).iter().sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// `exp(mean NLL)` over every position of `tokens` that has a full
/// context window.
pub fn perplexity(model: &ModelState, tokens: &[u32], seq_len: usize) -> Result<f64> {
    let c = model.arch.context_len;
    if tokens.len() < c + 1 {
        return Err(Error::TooShort { len: tokens.len(), needed: c + 1 });
    }
    let examples = crate::data::stream_examples(tokens, c, seq_len);
    Ok(mean_nll(model, &examples)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ArchConfig};

    fn tiny() -> ArchConfig {
        ArchConfig { vocab_size: 11, embed_dim: 4, context_len: 3, hidden_dim: 8, num_blocks: 2 }
    }

    fn batch(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                context: vec![(i % 11) as u32, ((i * 3) % 11) as u32, ((i * 7 + 1) % 11) as u32],
                target: ((i * 5 + 2) % 11) as u32,
            })
            .collect()
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut m = init_model(tiny(), 1).unwrap();
        let slots = Slots::new(&m.arch);
        m.params[slots.out_w()].values.fill(0.0);
        m.params[slots.out_b()].values.fill(0.0);
        let (loss, _) = loss_and_grads(&m, &batch(7)).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let m = init_model(tiny(), 2).unwrap();
        let b = batch(6);
        let doubled: Vec<_> = b.iter().flat_map(|e| [e.clone(), e.clone()]).collect();
        let (l1, g1) = loss_and_grads(&m, &b).unwrap();
        let (l2, g2) = loss_and_grads(&m, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.params.iter().zip(&g2.params) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()), "{}", a.name);
            }
        }
    }

    #[test]
    fn mean_nll_matches_loss() {
        let m = init_model(tiny(), 3).unwrap();
        let b = batch(1200);
        let (l, _) = loss_and_grads(&m, &b).unwrap();
        assert!((mean_nll(&m, &b).unwrap() - l).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_batches() {
        let m = init_model(tiny(), 3).unwrap();
        assert!(matches!(loss_and_grads(&m, &[]), Err(Error::EmptyBatch)));
        let bad = vec![Example { context: vec![0, 1, 11], target: 0 }];
        assert!(matches!(loss_and_grads(&m, &bad), Err(Error::TokenOutOfRange { token: 11, .. })));
        let bad = vec![Example { context: vec![0, 1, 2], target: 40 }];
        assert!(loss_and_grads(&m, &bad).is_err());
        let short = vec![Example { context: vec![0, 1], target: 0 }];
        assert!(matches!(loss_and_grads(&m, &short), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn perplexity_too_short() {
        let m = init_model(tiny(), 3).unwrap();
        assert!(matches!(perplexity(&m, &[1, 2, 3], 4), Err(Error::TooShort { .. })));
        assert!(perplexity(&m, &[1, 2, 3, 4], 4).unwrap() >= 1.0);
    }
}
