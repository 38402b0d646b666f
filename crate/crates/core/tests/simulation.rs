use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use fedtlu_core::data::shard_manifest;
use fedtlu_core::fed::{aggregate, client_weights, Strategy};
use fedtlu_core::model::local_update;
use fedtlu_core::rng::derive_seed;
use fedtlu_core::sim::{
    evaluation_shards, noisy_client_ids, prepare, report_csv, run_experiment, run_matrix, run_round, sample_clients,
    RoundSettings, SimConfig,
};

fn corpus_file(dir: &Path, chars: usize) -> PathBuf {
    let src = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/moby_dick_200k.txt");
    let text: String = fs::read_to_string(src).unwrap().chars().take(chars).collect();
    let path = dir.join("corpus.txt");
    fs::write(&path, text).unwrap();
    path
}

fn config(dir: &Path, extra: &str) -> SimConfig {
    let corpus = corpus_file(dir, 16_000);
    SimConfig::from_json(&format!(
        r#"{{"corpus_path": {corpus:?}, "arch": {{"embed_dim": 4, "context_len": 4, "hidden_dim": 8, "num_blocks": 3}},
            "clients": 20, "strategy": "fedtlu", "eta": 0.1, "seq_len": 16, "rounds": 3{extra}}}"#
    ))
    .unwrap()
}

const FROM_SCRATCH: &str = r#", "scenario": "from_scratch""#;
const ATTACK: &str = r#", "scenario": "attack", "pretrain_rounds": 2, "noisy_fraction": 0.1"#;

#[test]
fn full_round_equals_plain_aggregate() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), FROM_SCRATCH);
    let prepared = prepare(&cfg).unwrap();
    let settings = RoundSettings {
        strategy: Strategy::Full,
        participation: 0.2,
        portion: 0.5,
        local: cfg.local_update(),
        experiment_seed: 5,
        test_examples: &prepared.test_examples,
        dump_scores: false,
    };
    let out = run_round(&prepared.initial, &prepared.shards, &settings, 3).unwrap();

    let ids = sample_clients(20, 4, 5, 3);
    assert_eq!(out.record.participants, ids);
    let locals: Vec<_> = ids
        .iter()
        .map(|&k| local_update(&prepared.initial, &prepared.shards[k], &cfg.local_update(), derive_seed(5, "local", 3, k as u64)).unwrap())
        .collect();
    let shards: Vec<_> = ids.iter().map(|&k| &prepared.shards[k]).collect();
    let expected = aggregate(&locals, &client_weights(&shards).unwrap()).unwrap();
    assert_eq!(out.model, expected);
    assert_eq!(out.record.num_selected_tensors, prepared.initial.params.len());
}

#[test]
fn full_participation_samples_everyone() {
    for round in 0..5 {
        assert_eq!(sample_clients(3, 3, 9, round), vec![0, 1, 2]);
    }
    let a = sample_clients(20, 2, 9, 0);
    assert_eq!(a.len(), 2);
    assert!(a[0] < a[1]);
}

#[test]
fn from_scratch_records_are_sane_and_fixed_portion() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), FROM_SCRATCH);
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.pretrain_rounds, 0);
    assert_eq!(result.records.len(), 3);
    for (i, r) in result.records.iter().enumerate() {
        assert_eq!(r.round, i);
        assert_eq!(r.portion, 0.5);
        assert_eq!(r.participants.len(), 2);
        assert_eq!(r.selected_block_ids.len(), 2);
        for ppl in [r.global_ppl, r.local_ppl] {
            assert!(ppl.is_finite() && ppl >= 1.0);
        }
    }
}

#[test]
fn attack_preset_halves_and_corrupts() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), ATTACK);
    let prepared = prepare(&cfg).unwrap();
    let shards = evaluation_shards(&cfg, &prepared).unwrap();
    let noisy = noisy_client_ids(&cfg);
    assert_eq!(noisy.len(), 2);
    for (s, orig) in shards.iter().zip(&prepared.shards) {
        assert_eq!(s.len(), orig.len() / 2);
        assert_eq!(s.corrupted, noisy.contains(&s.client_id));
    }
    assert_eq!(shard_manifest(&shards).iter().filter(|r| r.corrupted).count(), 2);

    let mut other = cfg.clone();
    other.seeds.corruption = 1234;
    assert_eq!(noisy_client_ids(&other).len(), 2);
    assert_eq!(noisy_client_ids(&cfg), noisy);

    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.pretrain_rounds, 2);
    let (pre, post) = result.records.split_at(2);
    assert!(pre.iter().all(|r| r.strategy == Strategy::Full && r.portion == 1.0 && r.participants.len() == 2));
    assert!(post.iter().all(|r| r.strategy == Strategy::FedTlu && r.portion == 0.75 && r.participants.len() == 1));
    assert_eq!(post[0].round, 2);
}

#[test]
fn strategies_share_samples_and_pretraining() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), ATTACK);
    let runs = run_matrix(&cfg, &Strategy::ALL, 2, false).unwrap();
    assert_eq!(runs.len(), 8);
    for seed in 0..2 {
        let cell: Vec<_> = runs.iter().filter(|r| r.seed_index == seed).collect();
        let first = &cell[0].result;
        for r in &cell[1..] {
            assert_eq!(r.result.records[..2], first.records[..2]);
            let parts = |x: &fedtlu_core::sim::ExperimentResult| {
                x.records.iter().map(|r| r.participants.clone()).collect::<Vec<_>>()
            };
            assert_eq!(parts(&r.result), parts(first));
        }
    }
    let single = {
        let mut c = cfg.clone();
        c.strategy = Strategy::Random;
        c.seeds.experiment += 1;
        run_experiment(&c).unwrap()
    };
    let from_matrix = runs.iter().find(|r| r.seed_index == 1 && r.strategy == Strategy::Random).unwrap();
    assert_eq!(report_csv(&single.records), report_csv(&from_matrix.result.records));
}

#[test]
fn invalid_scenario_combinations_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let corpus = corpus_file(tmp.path(), 1000);
    let base = format!(r#""corpus_path": {corpus:?}, "clients": 20, "strategy": "fedtlu", "eta": 0.1"#);
    assert!(SimConfig::from_json(&format!(r#"{{{base}, "rounds": 3, "scenario": "from_scratch"}}"#)).is_ok());
    for extra in [
        r#""rounds": 3, "scenario": "from_scratch", "pretrain_rounds": 2"#,
        r#""rounds": 3, "scenario": "finetune", "pretrain_rounds": 0"#,
        r#""rounds": 3, "scenario": "finetune", "pretrain_rounds": 2, "noisy_fraction": 0.1"#,
        r#""rounds": 3, "scenario": "attack", "pretrain_rounds": 2, "noisy_fraction": 0.01"#,
        r#""rounds": 0, "scenario": "from_scratch""#,
    ] {
        assert!(SimConfig::from_json(&format!("{{{base}, {extra}}}")).is_err(), "{extra}");
    }
}

#[test]
fn shipped_configs_load() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for path in names {
        let cfg = SimConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(cfg.corpus_path.exists(), "{}", path.display());
    }
}
