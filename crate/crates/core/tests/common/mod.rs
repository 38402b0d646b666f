//! Test-only oracles, independent of the library's compute paths.
#![allow(dead_code)]

pub mod dd;

use std::ops::{Add, Div, Mul, Sub};

use fedtlu_core::data::Example;
use fedtlu_core::model::ModelState;

pub use dd::Dd;

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn of(x: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn approx(self) -> f64;
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn approx(self) -> f64 {
        self
    }
}

impl Scalar for Dd {
    fn of(x: f64) -> Self {
        Dd::from_f64(x)
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn tanh(self) -> Self {
        Dd::tanh(self)
    }
    fn approx(self) -> f64 {
        self.to_f64()
    }
}

/// Scalar reference forward pass: per example, plain loops, no shared
/// helpers with the library implementation.
pub fn reference_nll<S: Scalar>(model: &ModelState, batch: &[Example]) -> S {
    let a = &model.arch;
    let (v, d, c, h, r) = (a.vocab_size, a.embed_dim, a.context_len, a.hidden_dim, a.num_blocks);
    let p = |name: &str| -> Vec<S> { model.get(name).unwrap().values.iter().map(|&x| S::of(x)).collect() };
    let embed = p("embed");
    let (w_in, b_in) = (p("input.weight"), p("input.bias"));
    let (w_out, b_out) = (p("output.weight"), p("output.bias"));
    let blocks: Vec<_> = (0..r)
        .map(|b| {
            (
                p(&format!("block{b}.dense1.weight")),
                p(&format!("block{b}.dense1.bias")),
                p(&format!("block{b}.dense2.weight")),
                p(&format!("block{b}.dense2.bias")),
            )
        })
        .collect();
    let mut total = S::of(0.0);
    for ex in batch {
        let mut x = vec![S::of(0.0); c * d];
        for (j, &t) in ex.context.iter().enumerate() {
            for k in 0..d {
                x[j * d + k] = embed[t as usize * d + k];
            }
        }
        let mut hid = vec![S::of(0.0); h];
        for o in 0..h {
            let mut s = b_in[o];
            for i in 0..c * d {
                s = s + x[i] * w_in[i * h + o];
            }
            hid[o] = s.tanh();
        }
        for (w1, b1, w2, b2) in &blocks {
            let mut inner = vec![S::of(0.0); h];
            for o in 0..h {
                let mut s = b1[o];
                for i in 0..h {
                    s = s + hid[i] * w1[i * h + o];
                }
                inner[o] = s.tanh();
            }
            let mut next = hid.clone();
            for o in 0..h {
                let mut s = b2[o];
                for i in 0..h {
                    s = s + inner[i] * w2[i * h + o];
                }
                next[o] = next[o] + s;
            }
            hid = next;
        }
        let mut logits = vec![S::of(0.0); v];
        for o in 0..v {
            let mut s = b_out[o];
            for i in 0..h {
                s = s + hid[i] * w_out[i * v + o];
            }
            logits[o] = s;
        }
        let max = logits.iter().map(|z| z.approx()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = S::of(0.0);
        for &z in &logits {
            sum = sum + (z - S::of(max)).exp();
        }
        let lse = S::of(max) + sum.ln();
        total = total + (lse - logits[ex.target as usize]);
    }
    total / S::of(batch.len() as f64)
}

pub fn reference_mean_nll(model: &ModelState, batch: &[Example]) -> f64 {
    reference_nll::<f64>(model, batch)
}

/// Central difference `(L(w+h) - L(w-h)) / (actual step)` of one
/// coordinate, with the loss evaluated in double-double precision.
pub fn central_difference(model: &ModelState, batch: &[Example], tensor: usize, index: usize, step: f64) -> f64 {
    let base = model.params[tensor].values[index];
    let mut plus = model.clone();
    plus.params[tensor].values[index] = base + step;
    let mut minus = model.clone();
    minus.params[tensor].values[index] = base - step;
    let width = plus.params[tensor].values[index] - minus.params[tensor].values[index];
    let diff = reference_nll::<Dd>(&plus, batch) - reference_nll::<Dd>(&minus, batch);
    (diff / Dd::from_f64(width)).to_f64()
}

/// Relative error with the denominator floored at 1e-8.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}
