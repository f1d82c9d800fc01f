//! Pipeline subcommands. Each returns a `Result`; the binary maps errors
//! to exit codes. All artifacts live under the config's output directory
//! and every path stored in a manifest is relative to it, so a moved run
//! directory stays valid and reruns are byte-comparable.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use surfrec::error::{Error, Result};
use surfrec::evaluation::{evaluate_reconstruction, report_table, MethodReports, MetricReport};
use surfrec::extraction::{reconstruct, ExtractionConfig};
use surfrec::geometry::{IndexedMesh, TriangleMesh};
use surfrec::io::manifest::{read_records, write_records, Record};
use surfrec::io::obj::{read_obj, write_obj};
use surfrec::io::ply::{read_ply_mesh, read_ply_points, write_ply_points};
use surfrec::model::{
    latest_checkpoint, read_checkpoint, train as train_model, TrainConfig, TrainShape,
};
use surfrec::rng::{derive_seed, stream_rng};
use surfrec::sampling::{generate_query_set_sized, read_query_set, write_query_set};
use surfrec::scansim::{make_variant, ScanConfig, Variant};

use crate::config::ExperimentConfig;

/// Generate the dataset: per shape, a unit-cube-normalized ground-truth
/// mesh, one simulated-scan point cloud per requested protocol variant,
/// and a query-point file; everything is summarized in a manifest.
/// Per-shape failures are logged and the run continues.
pub fn cmd_make_dataset(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let manifest = cfg.manifest_path();
    if manifest.exists() && !force {
        println!("dataset already exists at {} (use --force to regenerate)", manifest.display());
        return Ok(());
    }
    let shapes = load_source_meshes(cfg)?;
    let dataset = cfg.dataset_dir();
    std::fs::create_dir_all(dataset.join("meshes"))?;
    std::fs::create_dir_all(dataset.join("queries"))?;
    for v in &cfg.dataset_variants {
        std::fs::create_dir_all(dataset.join("clouds").join(v.name()))?;
    }

    // parallel across shapes; per-shape seeds and the ordered collect keep
    // the manifest independent of scheduling
    let results: Vec<(String, Result<Record>)> = shapes
        .into_par_iter()
        .map(|(id, mesh)| {
            let rec = process_shape(cfg, &id, mesh);
            (id, rec)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = 0;
    for (id, res) in results {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failures += 1;
                eprintln!("shape {id}: {e}");
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Data("every shape failed; no dataset written".into()));
    }
    write_records(&manifest, &records)?;
    println!(
        "wrote {} shapes x {} variants to {} ({} failed)",
        records.len(),
        cfg.dataset_variants.len(),
        dataset.display(),
        failures
    );
    Ok(())
}

fn process_shape(cfg: &ExperimentConfig, id: &str, mesh: TriangleMesh) -> Result<Record> {
    let mesh = mesh.normalize_unit_cube()?;
    let indexed = IndexedMesh::build(mesh);

    let mesh_rel = Path::new("dataset").join("meshes").join(format!("{id}.obj"));
    write_obj(&cfg.out_dir.join(&mesh_rel), &indexed.mesh)?;

    let mut rec = Record::new()
        .set("shape", id)
        .set("mesh", mesh_rel.display());

    for &variant in &cfg.dataset_variants {
        let scan_cfg = ScanConfig {
            seed: derive_seed(cfg.seed, id, &format!("scan-{}", variant.name())),
            image_width: cfg.scan_width,
            image_height: cfg.scan_height,
            ..ScanConfig::default()
        };
        let cloud = make_variant(&indexed, variant, &scan_cfg)?;
        let cloud_rel = Path::new("dataset")
            .join("clouds")
            .join(variant.name())
            .join(format!("{id}.ply"));
        write_ply_points(&cfg.out_dir.join(&cloud_rel), &cloud.points, None)?;
        rec = rec
            .set(&format!("cloud_{}", variant.name()), cloud_rel.display())
            .set(&format!("points_{}", variant.name()), cloud.points.len());
    }

    let mut qrng = stream_rng(cfg.seed, id, "queries");
    let queries =
        generate_query_set_sized(&indexed, cfg.query_near, cfg.query_uniform, &mut qrng)?;
    let query_rel = Path::new("dataset").join("queries").join(format!("{id}.qry"));
    write_query_set(&cfg.out_dir.join(&query_rel), &queries)?;

    Ok(rec
        .set("queries", query_rel.display())
        .set("n_queries", queries.len()))
}

fn load_source_meshes(cfg: &ExperimentConfig) -> Result<Vec<(String, TriangleMesh)>> {
    match &cfg.mesh_dir {
        None => Ok(surfrec::geometry::shapes::procedural_dataset(cfg.n_shapes)),
        Some(dir) => {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()),
                        Some("obj") | Some("ply")
                    )
                })
                .collect();
            entries.sort();
            if entries.is_empty() {
                return Err(Error::Data(format!("no .obj or .ply meshes in {}", dir.display())));
            }
            entries
                .into_iter()
                .map(|p| {
                    let id = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| Error::Data(format!("bad mesh file name: {}", p.display())))?
                        .to_string();
                    let mesh = match p.extension().and_then(|e| e.to_str()) {
                        Some("obj") => read_obj(&p)?,
                        _ => read_ply_mesh(&p)?,
                    };
                    Ok((id, mesh))
                })
                .collect()
        }
    }
}

fn load_manifest(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let path = cfg.manifest_path();
    if !path.exists() {
        return Err(Error::Data(format!(
            "no dataset manifest at {} (run make-dataset first)",
            path.display()
        )));
    }
    read_records(&path)
}

/// Load every shape's training cloud (for one scan protocol) and query
/// set from the dataset manifest.
pub fn load_train_shapes(cfg: &ExperimentConfig, cloud_variant: Variant) -> Result<Vec<TrainShape>> {
    let manifest = load_manifest(cfg)?;
    let cloud_key = format!("cloud_{}", cloud_variant.name());
    manifest
        .iter()
        .map(|rec| {
            let id: String = rec.get_parsed("shape")?;
            let cloud_rel: String = rec.get_parsed(&cloud_key)?;
            let query_rel: String = rec.get_parsed("queries")?;
            let cloud = read_ply_points(&cfg.out_dir.join(cloud_rel))?;
            let queries = read_query_set(&cfg.out_dir.join(query_rel))?;
            Ok(TrainShape::new(&id, cloud, queries))
        })
        .collect()
}

/// Train a model variant on the dataset's training clouds. Resumes from
/// the newest checkpoint unless `force` wipes the checkpoint directory.
pub fn cmd_train(cfg: &ExperimentConfig, force: bool, variant: Option<&str>) -> Result<()> {
    let variant = variant.unwrap_or(&cfg.model_variant);
    let model_cfg = cfg.model_config(variant)?;
    let shapes = load_train_shapes(cfg, cfg.train_variant)?;

    let train_dir = cfg.train_dir(variant);
    let ckpt_dir = train_dir.join("checkpoints");
    if force && ckpt_dir.exists() {
        std::fs::remove_dir_all(&ckpt_dir)?;
    }
    std::fs::create_dir_all(&ckpt_dir)?;

    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        queries_per_shape: cfg.queries_per_shape,
        seed: derive_seed(cfg.seed, variant, "train"),
        checkpoint_dir: Some(ckpt_dir),
        log_path: Some(train_dir.join("train.log")),
        resume: true,
    };
    let (_store, stats) = train_model(&shapes, &model_cfg, &tcfg)?;
    if stats.is_empty() {
        println!("{variant}: already trained to {} epochs", cfg.epochs);
    } else {
        for s in &stats {
            println!(
                "{variant} epoch={} loss_d={:.6} loss_s={:.6} sign_acc={:.3} wall={:.1}s",
                s.epoch, s.loss_distance, s.loss_sign, s.sign_accuracy, s.wall_secs
            );
        }
    }
    Ok(())
}

/// Per-command overrides for reconstruction.
#[derive(Debug, Default, Clone)]
pub struct ReconstructOpts {
    pub checkpoint: Option<PathBuf>,
    pub cloud_variant: Option<Variant>,
    pub grid_res: Option<usize>,
    pub epsilon_cells: Option<f64>,
    pub confidence: Option<usize>,
    pub dense: bool,
}

/// Reconstruct a mesh per dataset cloud from a trained checkpoint.
/// Existing meshes are kept unless `force`; per-cloud failures are logged
/// and the run continues.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, force: bool, opts: &ReconstructOpts) -> Result<()> {
    let variant = &cfg.model_variant;
    let cloud_variant = opts.cloud_variant.unwrap_or(cfg.train_variant);
    let manifest = load_manifest(cfg)?;
    let model_cfg = cfg.model_config(variant)?;

    let ckpt_path = match &opts.checkpoint {
        Some(p) => p.clone(),
        None => {
            let dir = cfg.train_dir(variant).join("checkpoints");
            latest_checkpoint(&dir)
                .map(|(p, _)| p)
                .ok_or_else(|| {
                    Error::Checkpoint(format!(
                        "no checkpoint found in {} (run train first)",
                        dir.display()
                    ))
                })?
        }
    };
    if !ckpt_path.exists() {
        return Err(Error::Checkpoint(format!("missing checkpoint: {}", ckpt_path.display())));
    }
    let (store, epoch) = read_checkpoint(&ckpt_path, model_cfg.hash())?;
    println!(
        "reconstructing with {} (epoch {epoch}), clouds: {}",
        ckpt_path.display(),
        cloud_variant.name()
    );

    let ecfg = ExtractionConfig {
        grid_res: opts.grid_res.unwrap_or(cfg.grid_res),
        epsilon_cells: opts.epsilon_cells.unwrap_or(cfg.epsilon_cells),
        confidence: opts.confidence.unwrap_or(cfg.confidence),
        dense: opts.dense || cfg.dense,
        ..ExtractionConfig::default()
    };

    let recon_dir = cfg.recon_dir(variant, cloud_variant);
    std::fs::create_dir_all(&recon_dir)?;
    let stats_path = recon_dir.join("stats.tsv");
    let mut stats: Vec<Record> = if stats_path.exists() {
        read_records(&stats_path)?
    } else {
        Vec::new()
    };

    let cloud_key = format!("cloud_{}", cloud_variant.name());
    let mut failures = 0;
    let mut done = 0;
    for rec in &manifest {
        let id: String = rec.get_parsed("shape")?;
        let mesh_path = recon_dir.join(format!("{id}.obj"));
        if mesh_path.exists() && !force {
            continue;
        }
        let run = || -> Result<Record> {
            let cloud_rel: String = rec.get_parsed(&cloud_key)?;
            let cloud = read_ply_points(&cfg.out_dir.join(cloud_rel))?;
            let mut shape_ecfg = ecfg.clone();
            shape_ecfg.seed = derive_seed(cfg.seed, &id, "extract");
            let (mesh, st) = reconstruct(&cloud, &store, &model_cfg, &shape_ecfg)?;
            write_obj(&mesh_path, &mesh)?;
            Ok(Record::new()
                .set("shape", &id)
                .set("vertices", mesh.vertices.len())
                .set("triangles", mesh.triangles.len())
                .set("evaluated_fraction", format!("{:.6}", st.evaluated_fraction))
                .set("propagation_iterations", st.propagation_iterations)
                .set("grid_res", shape_ecfg.grid_res)
                .set("dense", shape_ecfg.dense))
        };
        match run() {
            Ok(stat) => {
                stats.retain(|r| r.get("shape") != Some(&id));
                stats.push(stat);
                done += 1;
            }
            Err(e) => {
                failures += 1;
                eprintln!("shape {id}: {e}");
            }
        }
    }
    stats.sort_by_key(|r| r.get("shape").unwrap_or_default().to_string());
    write_records(&stats_path, &stats)?;
    println!("{done} reconstructed, {failures} failed, stats in {}", stats_path.display());
    if done == 0 && failures > 0 {
        return Err(Error::Data("every reconstruction failed".into()));
    }
    Ok(())
}

/// Evaluate reconstructed meshes against the ground truth and return the
/// per-shape reports; also writes a per-shape record file and a one-row
/// summary table.
pub fn eval_run(
    cfg: &ExperimentConfig,
    model_variant: &str,
    cloud_variant: Variant,
) -> Result<MethodReports> {
    let manifest = load_manifest(cfg)?;
    let recon_dir = cfg.recon_dir(model_variant, cloud_variant);
    let method_id = format!("{model_variant}_{}", cloud_variant.name());

    let mut reports: Vec<MetricReport> = Vec::new();
    for rec in &manifest {
        let id: String = rec.get_parsed("shape")?;
        let gt_rel: String = rec.get_parsed("mesh")?;
        let recon_path = recon_dir.join(format!("{id}.obj"));
        if !recon_path.exists() {
            eprintln!("shape {id}: no reconstruction at {} (skipped)", recon_path.display());
            continue;
        }
        let gt = read_obj(&cfg.out_dir.join(gt_rel))?;
        let recon = read_obj(&recon_path)?;
        let report = evaluate_reconstruction(
            &id,
            &recon,
            &gt,
            cfg.eval_samples,
            derive_seed(cfg.seed, &id, "eval"),
        )?;
        reports.push(report);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!(
            "nothing to evaluate in {} (run reconstruct first)",
            recon_dir.display()
        )));
    }

    std::fs::create_dir_all(cfg.eval_dir())?;
    let records: Vec<Record> = reports
        .iter()
        .map(|r| {
            Record::new()
                .set("shape", &r.shape_id)
                .set("chamfer", format!("{:.12e}", r.chamfer))
                .set("chamfer_x100", format!("{:.8}", r.chamfer_x100))
                .set("samples", r.recon_samples)
                .set("empty", r.empty_reconstruction)
        })
        .collect();
    write_records(&cfg.eval_dir().join(format!("{method_id}.tsv")), &records)?;

    let method = MethodReports {
        method_id: method_id.clone(),
        reports,
    };
    let table = report_table(std::slice::from_ref(&method), &method_id)?;
    std::fs::write(cfg.eval_dir().join(format!("{method_id}.csv")), &table)?;
    Ok(method)
}

pub fn cmd_eval(cfg: &ExperimentConfig, cloud_variant: Option<Variant>) -> Result<()> {
    let cloud_variant = cloud_variant.unwrap_or(cfg.train_variant);
    let method = eval_run(cfg, &cfg.model_variant, cloud_variant)?;
    let mean =
        method.reports.iter().map(|r| r.chamfer_x100).sum::<f64>() / method.reports.len() as f64;
    println!(
        "{}: mean chamfer x100 = {:.4} over {} shapes (details in {})",
        method.method_id,
        mean,
        method.reports.len(),
        cfg.eval_dir().display()
    );
    Ok(())
}

/// Train and evaluate every requested model variant on every dataset
/// variant, then emit a comparison table: one row per dataset variant,
/// per model variant an absolute column (mean chamfer x100) and a column
/// relative to the baseline. A failed variant leaves dashes; partial
/// results are still written.
pub fn cmd_ablate(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    if cfg.ablate_variants.is_empty() {
        return Err(Error::Config("ablate_variants must not be empty".into()));
    }
    let baseline = if cfg.ablate_variants.iter().any(|v| v == "e_vanilla") {
        "e_vanilla".to_string()
    } else {
        cfg.ablate_variants[0].clone()
    };

    // means[dataset variant][model variant] = mean chamfer x100
    let mut means: Vec<Vec<Option<f64>>> =
        vec![vec![None; cfg.ablate_variants.len()]; cfg.dataset_variants.len()];

    for (mi, mv) in cfg.ablate_variants.iter().enumerate() {
        let run = || -> Result<Vec<f64>> {
            let mut scoped = cfg.clone();
            scoped.model_variant = mv.clone();
            cmd_train(&scoped, force, Some(mv))?;
            let mut out = Vec::new();
            for &dv in &cfg.dataset_variants {
                let opts = ReconstructOpts {
                    cloud_variant: Some(dv),
                    ..ReconstructOpts::default()
                };
                cmd_reconstruct(&scoped, force, &opts)?;
                let method = eval_run(&scoped, mv, dv)?;
                out.push(
                    method.reports.iter().map(|r| r.chamfer_x100).sum::<f64>()
                        / method.reports.len() as f64,
                );
            }
            Ok(out)
        };
        match run() {
            Ok(per_dataset) => {
                for (di, m) in per_dataset.into_iter().enumerate() {
                    means[di][mi] = Some(m);
                }
            }
            Err(e) => eprintln!("variant {mv} failed, leaving gaps in the table: {e}"),
        }
    }

    let bi = cfg.ablate_variants.iter().position(|v| *v == baseline).unwrap();
    let mut table = String::from("dataset");
    for mv in &cfg.ablate_variants {
        table.push_str(&format!(",{mv}_abs,{mv}_rel"));
    }
    table.push('\n');
    for (di, dv) in cfg.dataset_variants.iter().enumerate() {
        table.push_str(dv.name());
        let base = means[di][bi];
        for mi in 0..cfg.ablate_variants.len() {
            match (means[di][mi], base) {
                (Some(m), Some(b)) if b > 0.0 => {
                    table.push_str(&format!(",{m:.4},{:.2}", m / b))
                }
                (Some(m), _) => table.push_str(&format!(",{m:.4},-")),
                _ => table.push_str(",-,-"),
            }
        }
        table.push('\n');
    }

    let dir = cfg.out_dir.join("ablate");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("table.csv"), &table)?;
    print!("{table}");
    if means.iter().flatten().all(|m| m.is_none()) {
        return Err(Error::Data("every ablation variant failed".into()));
    }
    Ok(())
}
