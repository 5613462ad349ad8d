use hypkg_core::ehr_ingest::{generate_synthetic, SynthConfig};
use hypkg_core::model::load_checkpoint;
use hypkg_core::pipeline::{self, Inputs, RunConfig};

fn small_data(seed: u64) -> hypkg_core::ehr_ingest::SyntheticData {
    generate_synthetic(&SynthConfig {
        seed,
        n_visits: 150,
        attrs_per_cluster: 12,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn run_once_writes_consistent_artifacts() {
    let data = small_data(11);
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 60;
    let dir = tempfile::tempdir().unwrap();
    let inputs = Inputs::in_memory(data.kg.clone(), data.dataset.clone());
    let result = pipeline::run_once(&inputs, &cfg, 11, dir.path()).unwrap();

    for f in ["links.csv", "history.csv", "metrics.json", "checkpoint.json", "predictions.csv", "pairs.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 61);

    let ckpt = load_checkpoint(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.params, result.train.best_params);
    assert_eq!(ckpt.epoch, result.train.best_epoch);

    let m = result.metrics();
    assert!((0.0..=1.0).contains(&m.auroc));
    assert_eq!(result.links.len(), data.dataset.attribute_vocab().len());
}

#[test]
fn smoothed_training_loss_does_not_increase_early() {
    let data = small_data(5);
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 50;
    cfg.analysis.enabled = false;
    let dir = tempfile::tempdir().unwrap();
    let inputs = Inputs::in_memory(data.kg, data.dataset);
    let result = pipeline::run_once(&inputs, &cfg, 5, dir.path()).unwrap();
    let losses: Vec<f64> = result.train.history.iter().map(|r| r.train_loss).collect();
    let smoothed: Vec<f64> = losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for pair in smoothed.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "{pair:?}");
    }
    assert!(smoothed.last().unwrap() < smoothed.first().unwrap());
}

#[test]
fn repeats_are_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(2);
    data.kg.write_triples(&dir.path().join("kg.tsv")).unwrap();
    data.dataset.write_jsonl(&dir.path().join("ehr.jsonl")).unwrap();
    let mut cfg = RunConfig::default();
    cfg.repeats = 2;
    cfg.train.epochs = 10;
    cfg.analysis.enabled = false;
    cfg.paths.kg = dir.path().join("kg.tsv");
    cfg.paths.ehr = dir.path().join("ehr.jsonl");
    cfg.paths.output = dir.path().join("out");
    let results = pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!(results.len(), 2);
    assert_ne!(results[0].seed, results[1].seed);
    let summary = pipeline::summarize(&results);
    assert_eq!(summary["auroc"].runs.len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cfg.paths.output.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_input_names_its_stage() {
    let mut cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    cfg.paths.kg = dir.path().join("nope.tsv");
    cfg.paths.ehr = dir.path().join("nope.jsonl");
    cfg.paths.output = dir.path().join("out");
    assert!(pipeline::run_pipeline(&cfg).is_err());
}
