//! End-to-end pipeline runs at miniature scale, driven through the same
//! command functions the binary dispatches to.

use std::path::PathBuf;

use surfrec::scansim::Variant;
use surfrec_cli::commands::{
    cmd_ablate, cmd_eval, cmd_make_dataset, cmd_reconstruct, cmd_train, ReconstructOpts,
};
use surfrec_cli::config::ExperimentConfig;

fn tiny_config(out_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        out_dir,
        n_shapes: 2,
        dataset_variants: vec![Variant::VarNoise],
        train_variant: Variant::VarNoise,
        width_divisor: 8,
        n_d: 16,
        n_s: 32,
        epochs: 2,
        batch_size: 16,
        queries_per_shape: 40,
        query_near: 30,
        query_uniform: 30,
        grid_res: 20,
        eval_samples: 500,
        ..ExperimentConfig::default()
    }
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

#[test]
fn full_pipeline_smoke() {
    let cfg = tiny_config(scratch("pipeline"));

    cmd_make_dataset(&cfg, false).unwrap();
    let manifest = std::fs::read_to_string(cfg.manifest_path()).unwrap();
    assert_eq!(manifest.lines().count(), 2, "one manifest record per shape");
    assert!(manifest.contains("n_queries=60"));

    // idempotent rerun leaves the manifest untouched
    cmd_make_dataset(&cfg, false).unwrap();
    assert_eq!(std::fs::read_to_string(cfg.manifest_path()).unwrap(), manifest);

    cmd_train(&cfg, false, None).unwrap();
    let ckpts = cfg.train_dir("e_vanilla").join("checkpoints");
    assert!(ckpts.join("epoch_0002.ckpt").exists());

    // rerunning train resumes past the end and adds nothing
    cmd_train(&cfg, false, None).unwrap();
    assert!(!ckpts.join("epoch_0003.ckpt").exists());

    cmd_reconstruct(&cfg, false, &ReconstructOpts::default()).unwrap();
    let recon_dir = cfg.recon_dir("e_vanilla", Variant::VarNoise);
    let stats = std::fs::read_to_string(recon_dir.join("stats.tsv")).unwrap();
    assert_eq!(stats.lines().count(), 2);
    assert!(stats.contains("evaluated_fraction="));

    cmd_eval(&cfg, None).unwrap();
    let table = std::fs::read_to_string(cfg.eval_dir().join("e_vanilla_var-noise.csv")).unwrap();
    assert!(table.ends_with(",1.00\n"), "self-relative column is 1.00: {table}");

    // single-variant ablation reuses the checkpoints and reports rel 1.00
    cmd_ablate(&cfg, false).unwrap();
    let ablate = std::fs::read_to_string(cfg.out_dir.join("ablate/table.csv")).unwrap();
    assert_eq!(ablate.lines().nth(0).unwrap(), "dataset,e_vanilla_abs,e_vanilla_rel");
    assert!(ablate.lines().nth(1).unwrap().starts_with("var-noise,"));
    assert!(ablate.trim_end().ends_with(",1.00"));
}

#[test]
fn dataset_and_training_are_deterministic() {
    let mut outputs = Vec::new();
    for run in ["det_a", "det_b"] {
        let cfg = tiny_config(scratch(run));
        cmd_make_dataset(&cfg, false).unwrap();
        cmd_train(&cfg, false, None).unwrap();
        let manifest = std::fs::read(cfg.manifest_path()).unwrap();
        let ckpt = std::fs::read(
            cfg.train_dir("e_vanilla").join("checkpoints/epoch_0002.ckpt"),
        )
        .unwrap();
        outputs.push((manifest, ckpt));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "manifests must be byte-identical");
    assert_eq!(outputs[0].1, outputs[1].1, "checkpoints must be byte-identical");
}

#[test]
fn missing_dataset_is_a_clean_error() {
    let cfg = tiny_config(scratch("missing"));
    let err = cmd_train(&cfg, false, None).unwrap_err();
    assert!(err.to_string().contains("make-dataset"));
}
