use std::collections::BTreeSet;

use proptest::prelude::*;

use fedtlu_core::fed::{
    advance_portion, aggregate, apply_update, blocks_to_select, layer_score, plan_update, select_blocks, BlockScore,
    PortionScheduleState, Strategy as UpdateStrategy, PORTION_LEVELS,
};
use fedtlu_core::model::{init_model, ArchConfig, ModelState, ParamTensor};

fn arch() -> impl Strategy<Value = ArchConfig> {
    (2usize..10, 1usize..4, 1usize..4, 1usize..6, 1usize..7).prop_map(|(v, d, c, h, r)| ArchConfig {
        vocab_size: v,
        embed_dim: d,
        context_len: c,
        hidden_dim: h,
        num_blocks: r,
    })
}

fn models() -> impl Strategy<Value = (ModelState, ModelState)> {
    (arch(), any::<u64>()).prop_map(|(a, s)| (init_model(a, s).unwrap(), init_model(a, s.wrapping_add(1)).unwrap()))
}

fn scaled(before: &ModelState, aggre: &ModelState, c: f64) -> ModelState {
    let mut out = before.clone();
    for ((o, b), a) in out.params.iter_mut().zip(&before.params).zip(&aggre.params) {
        for ((x, &bv), &av) in o.values.iter_mut().zip(&b.values).zip(&a.values) {
            *x = bv + c * (av - bv);
        }
    }
    out
}

fn tensor(values: Vec<f64>) -> ParamTensor {
    let mut t = ParamTensor::zeros("t", vec![values.len()], None);
    t.values = values;
    t
}

proptest! {
    #[test]
    fn layer_score_is_nonnegative_and_scale_invariant(
        delta in prop::collection::vec(-10.0f64..10.0, 1..40),
        exp in -8i32..8,
    ) {
        let zero = tensor(vec![0.0; delta.len()]);
        let spread = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - delta.iter().cloned().fold(f64::INFINITY, f64::min);
        // A constant update hits the std floor, where scaling does matter.
        prop_assume!(spread > 1e-3);
        let s = layer_score(&zero, &tensor(delta.clone())).unwrap().score;
        prop_assert!(s >= 0.0 && s.is_finite());
        let c = 2f64.powi(exp);
        let sc = layer_score(&zero, &tensor(delta.iter().map(|d| d * c).collect())).unwrap().score;
        prop_assert_eq!(s.to_bits(), sc.to_bits());
        let c = 3.7;
        let sc = layer_score(&zero, &tensor(delta.iter().map(|d| d * c).collect())).unwrap().score;
        prop_assert!((s - sc).abs() <= 1e-9 * s.max(1.0));
    }

    #[test]
    fn fedtlu_selection_ignores_update_scale((before, aggre) in models(), exp in -6i32..6, portion in 0.1f64..1.0) {
        let a = plan_update(UpdateStrategy::FedTlu, &before, &aggre, portion, 0).unwrap();
        let b = plan_update(UpdateStrategy::FedTlu, &before, &scaled(&before, &aggre, 2f64.powi(exp)), portion, 0).unwrap();
        prop_assert_eq!(a.selected_block_ids, b.selected_block_ids);
    }

    #[test]
    fn select_blocks_takes_a_top_set(
        scores in prop::collection::vec(0u8..5, 1..12),
        s_frac in 0.0f64..1.0,
    ) {
        let blocks: Vec<BlockScore> = scores
            .iter()
            .enumerate()
            .map(|(i, &v)| BlockScore { block_id: 3 * i, group_id: 0, score: v as f64 })
            .collect();
        let s = 1 + ((blocks.len() - 1) as f64 * s_frac) as usize;
        let chosen = select_blocks(&blocks, s).unwrap();
        prop_assert_eq!(chosen.len(), s);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        let picked: BTreeSet<usize> = chosen.iter().copied().collect();
        let min_in = blocks.iter().filter(|b| picked.contains(&b.block_id)).map(|b| b.score).fold(f64::INFINITY, f64::min);
        let max_out = blocks.iter().filter(|b| !picked.contains(&b.block_id)).map(|b| b.score).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min_in >= max_out);
    }

    #[test]
    fn fedtlu_and_random_update_equal_amounts((before, aggre) in models(), portion in 0.05f64..1.0, seed in any::<u64>()) {
        let t = plan_update(UpdateStrategy::FedTlu, &before, &aggre, portion, seed).unwrap();
        let r = plan_update(UpdateStrategy::Random, &before, &aggre, portion, seed).unwrap();
        prop_assert_eq!(t.num_selected(), r.num_selected());
        prop_assert_eq!(t.selected_block_ids.len(), blocks_to_select(portion, before.arch.num_blocks));
        let full = plan_update(UpdateStrategy::Full, &before, &aggre, portion, seed).unwrap();
        prop_assert_eq!(full.num_selected(), before.params.len());
        prop_assert_eq!(plan_update(UpdateStrategy::Last, &before, &aggre, portion, seed).unwrap().num_selected(), 2);
    }

    #[test]
    fn full_plan_reproduces_aggregate((before, aggre) in models()) {
        let plan = plan_update(UpdateStrategy::Full, &before, &aggre, 0.5, 0).unwrap();
        prop_assert_eq!(apply_update(&before, &aggre, &plan).unwrap(), aggre);
    }

    #[test]
    fn aggregate_of_identical_models((model, _) in models(), raw in prop::collection::vec(0.01f64..1.0, 1..6)) {
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Ok(());
        }
        let copies = vec![model.clone(); weights.len()];
        let out = aggregate(&copies, &weights).unwrap();
        for (o, m) in out.params.iter().zip(&model.params) {
            for (x, y) in o.values.iter().zip(&m.values) {
                prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()) * weights.len() as f64);
            }
        }
    }

    #[test]
    fn portion_never_rises(metrics in prop::collection::vec(0.5f64..5.0, 1..80)) {
        let mut state = PortionScheduleState::default();
        for m in metrics {
            let next = advance_portion(&state, m).unwrap();
            prop_assert!(next.current_portion <= state.current_portion);
            prop_assert!(PORTION_LEVELS.contains(&next.current_portion));
            state = next;
        }
    }
}

#[test]
fn single_model_aggregate_is_bitwise() {
    let m = init_model(ArchConfig { vocab_size: 5, embed_dim: 2, context_len: 2, hidden_dim: 3, num_blocks: 2 }, 4).unwrap();
    assert_eq!(aggregate(std::slice::from_ref(&m), &[1.0]).unwrap(), m);
}
