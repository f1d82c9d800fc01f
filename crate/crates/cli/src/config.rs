//! Experiment configuration: every knob the pipeline exposes, stored as a
//! plain-text `key = value` file so a run can be reproduced from its
//! config and master seed alone.

use std::path::{Path, PathBuf};

use surfrec::error::{Error, Result};
use surfrec::model::ModelConfig;
use surfrec::rng::derive_seed;
use surfrec::scansim::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed; every RNG stream is derived from it by hashing with a
    /// shape id and a purpose tag.
    pub seed: u64,
    /// All artifacts land under this directory.
    pub out_dir: PathBuf,
    /// Directory of .obj/.ply meshes to use instead of the procedural
    /// dataset; empty means procedural.
    pub mesh_dir: Option<PathBuf>,
    /// Procedural shape count when no mesh directory is given.
    pub n_shapes: usize,
    /// Scan protocols to generate per shape.
    pub dataset_variants: Vec<Variant>,
    /// Which scan protocol the train/reconstruct commands read.
    pub train_variant: Variant,
    /// Model variant used by train/reconstruct/eval.
    pub model_variant: String,
    /// Model variants swept by the ablate command.
    pub ablate_variants: Vec<String>,
    /// Integer divisor applied to all layer widths (desk-scale runs).
    pub width_divisor: usize,
    pub n_d: usize,
    pub n_s: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub queries_per_shape: usize,
    /// Near-surface / uniform query counts written per shape by
    /// make-dataset.
    pub query_near: usize,
    pub query_uniform: usize,
    /// Simulated depth-image resolution; smaller images give sparser
    /// clouds for desk-scale runs.
    pub scan_width: usize,
    pub scan_height: usize,
    pub grid_res: usize,
    pub epsilon_cells: f64,
    pub confidence: usize,
    pub dense: bool,
    pub eval_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            mesh_dir: None,
            n_shapes: 10,
            dataset_variants: vec![Variant::VarNoise],
            train_variant: Variant::VarNoise,
            model_variant: "e_vanilla".to_string(),
            ablate_variants: vec!["e_vanilla".to_string()],
            width_divisor: 1,
            n_d: model.n_d,
            n_s: model.n_s,
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            queries_per_shape: 1000,
            query_near: 1000,
            query_uniform: 1000,
            scan_width: 176,
            scan_height: 144,
            grid_res: 128,
            epsilon_cells: 3.0,
            confidence: 13,
            dense: false,
            eval_samples: 10_000,
        }
    }
}

impl ExperimentConfig {
    /// Serialize to the config-file text form. `parse` of this text
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put(
            "mesh_dir",
            self.mesh_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        put("n_shapes", self.n_shapes.to_string());
        put(
            "dataset_variants",
            self.dataset_variants
                .iter()
                .map(|v| v.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("train_variant", self.train_variant.name().to_string());
        put("model_variant", self.model_variant.clone());
        put("ablate_variants", self.ablate_variants.join(","));
        put("width_divisor", self.width_divisor.to_string());
        put("n_d", self.n_d.to_string());
        put("n_s", self.n_s.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("queries_per_shape", self.queries_per_shape.to_string());
        put("query_near", self.query_near.to_string());
        put("query_uniform", self.query_uniform.to_string());
        put("scan_width", self.scan_width.to_string());
        put("scan_height", self.scan_height.to_string());
        put("grid_res", self.grid_res.to_string());
        put("epsilon_cells", self.epsilon_cells.to_string());
        put("confidence", self.confidence.to_string());
        put("dense", self.dense.to_string());
        put("eval_samples", self.eval_samples.to_string());
        s
    }

    /// Parse the config-file form: one `key = value` per line, `#`
    /// comments, unknown keys rejected. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {}: bad {what}: {value}", lineno + 1));
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "mesh_dir" => {
                    cfg.mesh_dir = if value.is_empty() {
                        None
                    } else {
                        Some(PathBuf::from(value))
                    }
                }
                "n_shapes" => cfg.n_shapes = value.parse().map_err(|_| bad("integer"))?,
                "dataset_variants" => {
                    cfg.dataset_variants = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| Variant::parse(s.trim()))
                        .collect::<Result<_>>()?
                }
                "train_variant" => cfg.train_variant = Variant::parse(value)?,
                "model_variant" => {
                    check_model_variant(value)?;
                    cfg.model_variant = value.to_string()
                }
                "ablate_variants" => {
                    cfg.ablate_variants = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            let s = s.trim();
                            check_model_variant(s).map(|()| s.to_string())
                        })
                        .collect::<Result<_>>()?
                }
                "width_divisor" => cfg.width_divisor = value.parse().map_err(|_| bad("integer"))?,
                "n_d" => cfg.n_d = value.parse().map_err(|_| bad("integer"))?,
                "n_s" => cfg.n_s = value.parse().map_err(|_| bad("integer"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("number"))?,
                "queries_per_shape" => {
                    cfg.queries_per_shape = value.parse().map_err(|_| bad("integer"))?
                }
                "query_near" => cfg.query_near = value.parse().map_err(|_| bad("integer"))?,
                "query_uniform" => cfg.query_uniform = value.parse().map_err(|_| bad("integer"))?,
                "scan_width" => cfg.scan_width = value.parse().map_err(|_| bad("integer"))?,
                "scan_height" => cfg.scan_height = value.parse().map_err(|_| bad("integer"))?,
                "grid_res" => cfg.grid_res = value.parse().map_err(|_| bad("integer"))?,
                "epsilon_cells" => cfg.epsilon_cells = value.parse().map_err(|_| bad("number"))?,
                "confidence" => cfg.confidence = value.parse().map_err(|_| bad("integer"))?,
                "dense" => cfg.dense = value.parse().map_err(|_| bad("boolean"))?,
                "eval_samples" => cfg.eval_samples = value.parse().map_err(|_| bad("integer"))?,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key: {other}",
                        lineno + 1
                    )))
                }
            }
        }
        if cfg.width_divisor < 1 {
            return Err(Error::Config("width_divisor must be >= 1".into()));
        }
        if cfg.dataset_variants.is_empty() {
            return Err(Error::Config("dataset_variants must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    /// Network configuration for a named model variant, with the
    /// experiment's sizes and width divisor applied. Radius variants are
    /// interpreted in the normalized frame where the bounding box longest
    /// side is 1.
    pub fn model_config(&self, variant: &str) -> Result<ModelConfig> {
        let mut base = ModelConfig {
            n_d: self.n_d,
            n_s: self.n_s,
            ..ModelConfig::default()
        }
        .scaled_down(self.width_divisor);
        base.seed = derive_seed(self.seed, variant, "model-init");
        base.variant(variant, 1.0)
    }

    // --- canonical artifact locations under out_dir ---

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_dir.join("dataset")
    }
    pub fn manifest_path(&self) -> PathBuf {
        self.dataset_dir().join("manifest.tsv")
    }
    pub fn train_dir(&self, variant: &str) -> PathBuf {
        self.out_dir.join("train").join(variant)
    }
    pub fn recon_dir(&self, model_variant: &str, cloud_variant: Variant) -> PathBuf {
        self.out_dir
            .join("recon")
            .join(model_variant)
            .join(cloud_variant.name())
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.out_dir.join("eval")
    }
}

fn check_model_variant(name: &str) -> Result<()> {
    if ModelConfig::VARIANTS.contains(&name) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "unknown model variant: {name} (expected one of {})",
            ModelConfig::VARIANTS.join(", ")
        )))
    }
}
