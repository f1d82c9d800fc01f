//! Training loop: per-epoch query subsets, mini-batch Adam, per-epoch
//! checkpoints and log records.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::{Adam, BnMode, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geometry::{KdTree, Sign};
use crate::io::manifest::{append_record, Record};
use crate::math::Vec3;
use crate::sampling::QuerySample;

use super::checkpoint::{read_checkpoint, write_checkpoint};
use super::config::ModelConfig;
use super::net::{
    apply_stat_updates, build_pair, forward_batch, loss_distance, loss_sign, Bindings,
};

/// One training shape: its point cloud (indexed) and precomputed query
/// samples with ground-truth distance and sign.
pub struct TrainShape {
    pub id: String,
    pub tree: KdTree,
    pub queries: Vec<QuerySample>,
}

impl TrainShape {
    pub fn new(id: &str, cloud: Vec<Vec3>, queries: Vec<QuerySample>) -> Self {
        TrainShape {
            id: id.to_string(),
            tree: KdTree::build(&cloud),
            queries,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Query points drawn per shape per epoch.
    pub queries_per_shape: usize,
    pub seed: u64,
    /// Where per-epoch checkpoints go; no checkpoints if unset.
    pub checkpoint_dir: Option<PathBuf>,
    /// Line-delimited training log; appended to.
    pub log_path: Option<PathBuf>,
    /// Continue from the newest checkpoint in `checkpoint_dir`.
    pub resume: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            lr: 1e-3,
            queries_per_shape: 1000,
            seed: 0,
            checkpoint_dir: None,
            log_path: None,
            resume: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: u32,
    pub loss_distance: f64,
    pub loss_sign: f64,
    pub sign_accuracy: f64,
    pub wall_secs: f64,
}

fn epoch_path(dir: &Path, epoch: u32) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Newest `epoch_*.ckpt` in a directory, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<(PathBuf, u32)> {
    let mut best: Option<(PathBuf, u32)> = None;
    let entries = std::fs::read_dir(dir).ok()?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name
            .strip_prefix("epoch_")
            .and_then(|s| s.strip_suffix(".ckpt"))
        {
            if let Ok(e) = num.parse::<u32>() {
                if best.as_ref().is_none_or(|(_, b)| e > *b) {
                    best = Some((entry.path(), e));
                }
            }
        }
    }
    best
}

/// Train the network. Returns final parameters and per-epoch statistics
/// for the epochs run in this call. Learning rate drops by 10x for the
/// final quarter of the schedule. Deterministic for a fixed seed when run
/// single-threaded.
pub fn train(
    shapes: &[TrainShape],
    model_cfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ParamStore, Vec<EpochStats>)> {
    if shapes.is_empty() {
        return Err(Error::Config("no training shapes".into()));
    }
    for s in shapes {
        if s.queries.is_empty() {
            return Err(Error::Config(format!("shape {} has no query samples", s.id)));
        }
    }
    let cfg_hash = model_cfg.hash();

    let (mut store, start_epoch) = match (&tcfg.checkpoint_dir, tcfg.resume) {
        (Some(dir), true) => match latest_checkpoint(dir) {
            Some((path, _)) => {
                let (store, epoch) = read_checkpoint(&path, cfg_hash)?;
                (store, epoch)
            }
            None => (super::net::init_params(model_cfg), 0),
        },
        _ => (super::net::init_params(model_cfg), 0),
    };
    if let Some(dir) = &tcfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut opt = Adam::new(tcfg.lr);
    let decay_epoch = (tcfg.epochs as f64 * 0.75).ceil() as u32;
    let mut stats = Vec::new();

    for epoch in (start_epoch + 1)..=(tcfg.epochs as u32) {
        let t0 = Instant::now();
        opt.lr = if epoch > decay_epoch { tcfg.lr * 0.1 } else { tcfg.lr };

        let mut sum_ld = 0.0;
        let mut sum_ls = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;

        for shape in shapes {
            let mut rng =
                crate::rng::stream_rng(tcfg.seed, &shape.id, &format!("epoch-{epoch}"));
            let mut order: Vec<usize> = (0..shape.queries.len()).collect();
            order.shuffle(&mut rng);
            order.truncate(tcfg.queries_per_shape.min(shape.queries.len()));

            for batch in order.chunks(tcfg.batch_size) {
                let mut pairs = Vec::with_capacity(batch.len());
                let mut gts = Vec::with_capacity(batch.len());
                let mut signs: Vec<Sign> = Vec::with_capacity(batch.len());
                for &qi in batch {
                    let q = &shape.queries[qi];
                    pairs.push(build_pair(&shape.tree, q.x, model_cfg, &mut rng)?);
                    gts.push(q.gt_abs_distance);
                    signs.push(q.gt_sign);
                }
                let scales: Vec<f64> = pairs.iter().map(|p| p.scale_factor).collect();

                let mut tape = Tape::new();
                let mut bind = Bindings::new();
                let (out, updates) =
                    forward_batch(&mut tape, &store, &mut bind, model_cfg, &pairs, BnMode::Train)?;
                let ld = loss_distance(&mut tape, out.dist_patch, &scales, &gts)?;
                let ls = loss_sign(&mut tape, out.logits, &signs);
                let total_loss = tape.add(ld, ls);
                let loss_val = tape.value(total_loss).item();
                if !loss_val.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at epoch {epoch}, shape {}: ld={} ls={}",
                        shape.id,
                        tape.value(ld).item(),
                        tape.value(ls).item()
                    )));
                }
                sum_ld += tape.value(ld).item() * batch.len() as f64;
                sum_ls += tape.value(ls).item() * batch.len() as f64;
                let logits = tape.value(out.logits).clone();
                for (i, s) in signs.iter().enumerate() {
                    let predicted_outside = logits.data[i] >= 0.0;
                    if predicted_outside == (*s == Sign::Outside) {
                        correct += 1;
                    }
                }
                total += batch.len();

                tape.backward(total_loss)?;
                let grads = bind.grads(&tape, &store);
                opt.step(&mut store, &grads)?;
                apply_stat_updates(&mut store, &updates);
            }
        }

        let es = EpochStats {
            epoch,
            loss_distance: sum_ld / total as f64,
            loss_sign: sum_ls / total as f64,
            sign_accuracy: correct as f64 / total as f64,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        if let Some(dir) = &tcfg.checkpoint_dir {
            write_checkpoint(&epoch_path(dir, epoch), &store, cfg_hash, epoch)?;
        }
        if let Some(log) = &tcfg.log_path {
            let rec = Record::new()
                .set("epoch", epoch)
                .set("loss_distance", format!("{:.9}", es.loss_distance))
                .set("loss_sign", format!("{:.9}", es.loss_sign))
                .set("sign_accuracy", format!("{:.6}", es.sign_accuracy))
                .set("wall_secs", format!("{:.4}", es.wall_secs));
            append_record(log, &rec)?;
        }
        stats.push(es);
    }

    Ok((store, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, IndexedMesh};
    use crate::model::config::ModelConfig;
    use crate::sampling::generate_query_set_sized;

    fn sphere_shape(n_queries: usize, n_cloud: usize, seed: u64) -> TrainShape {
        let mesh = shapes::uv_sphere(Vec3::new(0.0, 0.0, 0.0), 1.0, 24, 12)
            .normalize_unit_cube()
            .unwrap();
        let mut rng = crate::rng::seeded_rng(seed);
        let cloud =
            crate::geometry::sample::sample_surface_points(&mesh, n_cloud, &mut rng).unwrap();
        let indexed = IndexedMesh::build(mesh);
        let queries =
            generate_query_set_sized(&indexed, n_queries / 2, n_queries / 2, &mut rng).unwrap();
        TrainShape::new("sphere", cloud, queries)
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            n_d: 8,
            n_s: 16,
            point_widths: vec![8, 8, 8, 12, 16],
            decoder_widths: vec![16, 12, 8],
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn first_epochs_descend() {
        let shape = sphere_shape(60, 400, 21);
        let cfg = tiny_model();
        let tcfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            queries_per_shape: 60,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, stats) = train(&[shape], &cfg, &tcfg).unwrap();
        assert_eq!(stats.len(), 4);
        let first = stats[0].loss_distance + stats[0].loss_sign;
        let last = stats[3].loss_distance + stats[3].loss_sign;
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn checkpoints_written_and_resume_continues() {
        let shape = sphere_shape(30, 300, 22);
        let cfg = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("train.log");
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            queries_per_shape: 30,
            seed: 6,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            log_path: Some(log.clone()),
            ..TrainConfig::default()
        };
        let (_, stats) = train(&[shape], &cfg, &tcfg).unwrap();
        assert_eq!(stats.len(), 2);
        assert!(epoch_path(dir.path(), 1).exists());
        assert!(epoch_path(dir.path(), 2).exists());
        let records = crate::io::manifest::read_records(&log).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].get("epoch").unwrap(), "2");

        // resuming with a higher epoch budget picks up at epoch 3
        let shape = sphere_shape(30, 300, 22);
        let tcfg2 = TrainConfig {
            epochs: 3,
            resume: true,
            ..tcfg
        };
        let (_, stats2) = train(&[shape], &cfg, &tcfg2).unwrap();
        assert_eq!(stats2.len(), 1);
        assert_eq!(stats2[0].epoch, 3);
    }

    #[test]
    fn resume_rejects_changed_architecture() {
        let shape = sphere_shape(20, 300, 23);
        let cfg = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            queries_per_shape: 20,
            seed: 8,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        train(&[shape], &cfg, &tcfg).unwrap();

        let shape = sphere_shape(20, 300, 23);
        let mut cfg2 = cfg.clone();
        cfg2.n_d = 10;
        let tcfg2 = TrainConfig {
            epochs: 2,
            resume: true,
            ..tcfg
        };
        let err = train(&[shape], &cfg2, &tcfg2).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn same_seed_same_final_params() {
        let cfg = tiny_model();
        let tcfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            queries_per_shape: 20,
            seed: 9,
            ..TrainConfig::default()
        };
        let (a, _) = train(&[sphere_shape(20, 300, 24)], &cfg, &tcfg).unwrap();
        let (b, _) = train(&[sphere_shape(20, 300, 24)], &cfg, &tcfg).unwrap();
        for n in a.names() {
            assert_eq!(a.get(n).data, b.get(n).data, "{n} differs between runs");
        }
    }
}
