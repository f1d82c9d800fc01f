//! Forward pass of the two-encoder network, its parameter initialization,
//! and the two losses.
//!
//! Architecture: a local point-set encoder over the kNN patch and a global
//! encoder over the distance-weighted subsample, each a per-point MLP
//! ladder with batch normalization over the point dimension, a learned
//! feature-space transform after the third stage, and a channel-wise max
//! pool. An optional rotation subnetwork predicts a quaternion from the
//! global subset and rotates both subsets. A 4-layer MLP decodes the
//! concatenated features into an absolute distance (patch frame) and sign
//! logits.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnMode, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::KdTree;
use crate::math::Vec3;
use crate::sampling::{
    fixed_radius_patch, gradient_subsample, knn_patch, normalize_pair, uniform_subsample,
    PatchPair,
};

use super::config::{EncoderMode, ModelConfig, PatchMode, SubsampleMode};

/// Momentum for batch-norm running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// Output of the network for one normalized patch pair.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    /// Nonnegative distance in the patch frame (post |.| activation).
    pub abs_distance_patch_frame: f64,
    /// Raw sign logits; positive means outside.
    pub sign_logits: f64,
    /// Patch-frame distance rescaled to world units.
    pub abs_distance_world: f64,
}

impl Prediction {
    pub fn sign_probability(&self) -> f64 {
        1.0 / (1.0 + (-self.sign_logits).exp())
    }

    /// Signed world-frame distance; ties at zero logits resolve to
    /// outside (+1).
    pub fn signed_world(&self) -> f64 {
        let sign = if self.sign_logits >= 0.0 { 1.0 } else { -1.0 };
        sign * self.abs_distance_world
    }
}

/// Encoder parameter prefixes for a config.
fn encoder_prefixes(cfg: &ModelConfig) -> (&'static str, &'static str) {
    match cfg.encoder_mode {
        EncoderMode::Separate => ("local", "global"),
        EncoderMode::Shared => ("enc", "enc"),
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

fn init_encoder(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut ChaCha8Rng) {
    let mut input = 3;
    for (i, &out) in widths.iter().enumerate() {
        store.insert(&format!("{prefix}.s{i}.w"), glorot(rng, input, out), true);
        store.insert(&format!("{prefix}.s{i}.b"), Tensor::zeros(1, out), true);
        store.insert(
            &format!("{prefix}.s{i}.gamma"),
            Tensor::from_vec(1, out, vec![1.0; out]),
            true,
        );
        store.insert(&format!("{prefix}.s{i}.beta"), Tensor::zeros(1, out), true);
        store.insert(&format!("{prefix}.s{i}.rmean"), Tensor::zeros(1, out), false);
        store.insert(
            &format!("{prefix}.s{i}.rvar"),
            Tensor::from_vec(1, out, vec![1.0; out]),
            false,
        );
        input = out;
    }
    // feature-space transform on the third stage's output, identity init
    let c = widths[2];
    let mut ident = Tensor::zeros(c, c);
    for i in 0..c {
        *ident.at_mut(i, i) = 1.0;
    }
    store.insert(&format!("{prefix}.ft"), ident, true);
}

/// Initialize all parameters for a config. The parameter set (names and
/// shapes) is a pure function of the config; only values depend on the
/// seed.
pub fn init_params(cfg: &ModelConfig) -> ParamStore {
    let mut rng = crate::rng::seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let (local, global) = encoder_prefixes(cfg);
    init_encoder(&mut store, local, &cfg.point_widths, &mut rng);
    if global != local {
        init_encoder(&mut store, global, &cfg.point_widths, &mut rng);
    }
    if cfg.use_qstn {
        // the rotation subnetwork only drives a 4-number quaternion, so it
        // runs at half the encoder width
        let qstn_widths: Vec<usize> = cfg.point_widths.iter().map(|&w| (w / 2).max(4)).collect();
        init_encoder(&mut store, "qstn", &qstn_widths, &mut rng);
        let c = *qstn_widths.last().unwrap();
        // zero weights + identity-quaternion bias: the subnetwork starts
        // as a no-op rotation
        store.insert("qstn.head.w", Tensor::zeros(c, 4), true);
        store.insert(
            "qstn.head.b",
            Tensor::row(vec![1.0, 0.0, 0.0, 0.0]),
            true,
        );
    }
    let mut input = 2 * cfg.feature_width();
    for (i, &out) in cfg.decoder_widths.iter().enumerate() {
        store.insert(&format!("dec.l{i}.w"), glorot(&mut rng, input, out), true);
        store.insert(&format!("dec.l{i}.b"), Tensor::zeros(1, out), true);
        input = out;
    }
    let last = cfg.decoder_widths.len();
    store.insert(&format!("dec.l{last}.w"), glorot(&mut rng, input, 2), true);
    store.insert(&format!("dec.l{last}.b"), Tensor::zeros(1, 2), true);
    store
}

/// Lazily binds store parameters to tape nodes so every use of a
/// parameter within one tape shares a node and gradients accumulate.
pub struct Bindings {
    map: HashMap<String, Var>,
}

impl Bindings {
    pub fn new() -> Self {
        Bindings { map: HashMap::new() }
    }

    pub fn var(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.map.get(name) {
            return v;
        }
        let v = tape.param(store.get(name).clone());
        self.map.insert(name.to_string(), v);
        v
    }

    /// Collect gradients for all bound trainable parameters.
    pub fn grads(&self, tape: &Tape, store: &ParamStore) -> HashMap<String, Tensor> {
        self.map
            .iter()
            .filter(|(n, _)| store.is_trainable(n))
            .map(|(n, &v)| (n.clone(), tape.grad(v)))
            .collect()
    }
}

impl Default for Bindings {
    fn default() -> Self {
        Bindings::new()
    }
}

/// Deferred batch-norm running-stat update: (param prefix like
/// "local.s2", batch mean, batch variance).
pub type StatUpdate = (String, Vec<f64>, Vec<f64>);

/// Fold collected batch statistics into the running estimates.
pub fn apply_stat_updates(store: &mut ParamStore, updates: &[StatUpdate]) {
    for (prefix, mean, var) in updates {
        let rm = store.get_mut(&format!("{prefix}.rmean"));
        for (r, &m) in rm.data.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = store.get_mut(&format!("{prefix}.rvar"));
        for (r, &v) in rv.data.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

fn tensor_from_points(points: &[Vec3]) -> Tensor {
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    Tensor::from_vec(points.len(), 3, data)
}

/// One encoder ladder shared across a batch of point groups: the groups'
/// rows are stacked into one tensor so each dense stage is a single
/// matrix product and batch normalization pools statistics over every
/// point in the batch, not just one group. ReLU on all but the last
/// stage, feature transform after stage 3, then a per-group channel-wise
/// max pool to one 1 x C feature per group.
#[allow(clippy::too_many_arguments)]
fn encode_groups(
    tape: &mut Tape,
    store: &ParamStore,
    bind: &mut Bindings,
    prefix: &str,
    groups: &[Var],
    cfg: &ModelConfig,
    mode: BnMode,
    updates: &mut Vec<StatUpdate>,
) -> Result<Vec<Var>> {
    let rows_per_group = tape.value(groups[0]).rows;
    let mut h = tape.stack_rows(groups);
    let last = cfg.point_widths.len() - 1;
    for i in 0..cfg.point_widths.len() {
        let w = bind.var(tape, store, &format!("{prefix}.s{i}.w"));
        let b = bind.var(tape, store, &format!("{prefix}.s{i}.b"));
        let gamma = bind.var(tape, store, &format!("{prefix}.s{i}.gamma"));
        let beta = bind.var(tape, store, &format!("{prefix}.s{i}.beta"));
        let z = tape.matmul(h, w);
        let z = tape.add_bias(z, b);
        let (rm, rv) = (
            store.get(&format!("{prefix}.s{i}.rmean")).data.clone(),
            store.get(&format!("{prefix}.s{i}.rvar")).data.clone(),
        );
        let running = match mode {
            BnMode::Train => None,
            BnMode::Eval => Some((rm.as_slice(), rv.as_slice())),
        };
        let (bn, stats) = tape.batch_norm(z, gamma, beta, running, mode)?;
        if let Some((mean, var)) = stats {
            updates.push((format!("{prefix}.s{i}"), mean, var));
        }
        h = if i < last { tape.relu(bn) } else { bn };
        if i == 2 {
            let ft = bind.var(tape, store, &format!("{prefix}.ft"));
            h = tape.matmul(h, ft);
        }
    }
    Ok((0..groups.len())
        .map(|g| {
            let rows = tape.slice_rows(h, g * rows_per_group, (g + 1) * rows_per_group);
            tape.col_max(rows)
        })
        .collect())
}

/// Batched network output: B x 1 patch-frame distances and B x 1 logits.
pub struct ForwardOut {
    pub dist_patch: Var,
    pub logits: Var,
}

/// Run the full network over a batch of normalized patch pairs. Each
/// encoder ladder runs once over the stacked points of every pair (so
/// batch-norm statistics span the whole batch) with per-pair max pooling;
/// the decoder runs once over the stacked feature rows.
pub fn forward_batch(
    tape: &mut Tape,
    store: &ParamStore,
    bind: &mut Bindings,
    cfg: &ModelConfig,
    pairs: &[PatchPair],
    mode: BnMode,
) -> Result<(ForwardOut, Vec<StatUpdate>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyPointSet("forward batch".into()));
    }
    let (local_prefix, global_prefix) = encoder_prefixes(cfg);
    let mut updates = Vec::new();
    let mut locals: Vec<Var> = pairs
        .iter()
        .map(|p| tape.input(tensor_from_points(&p.local_patch)))
        .collect();
    let mut globals: Vec<Var> = pairs
        .iter()
        .map(|p| tape.input(tensor_from_points(&p.global_sub)))
        .collect();
    if cfg.use_qstn {
        let feats = encode_groups(tape, store, bind, "qstn", &globals, cfg, mode, &mut updates)?;
        let hw = bind.var(tape, store, "qstn.head.w");
        let hb = bind.var(tape, store, "qstn.head.b");
        for (i, feat) in feats.into_iter().enumerate() {
            let q = tape.matmul(feat, hw);
            let q = tape.add_bias(q, hb);
            locals[i] = tape.quat_rotate(q, locals[i])?;
            globals[i] = tape.quat_rotate(q, globals[i])?;
        }
    }
    let zd = encode_groups(tape, store, bind, local_prefix, &locals, cfg, mode, &mut updates)?;
    let zs = encode_groups(tape, store, bind, global_prefix, &globals, cfg, mode, &mut updates)?;
    let feature_rows: Vec<Var> = zd
        .into_iter()
        .zip(zs)
        .map(|(d, s)| tape.concat_cols(&[d, s]))
        .collect();
    let mut h = tape.stack_rows(&feature_rows);
    let n_hidden = cfg.decoder_widths.len();
    for i in 0..=n_hidden {
        let w = bind.var(tape, store, &format!("dec.l{i}.w"));
        let b = bind.var(tape, store, &format!("dec.l{i}.b"));
        let z = tape.matmul(h, w);
        let z = tape.add_bias(z, b);
        h = if i < n_hidden { tape.relu(z) } else { z };
    }
    let raw_dist = tape.slice_cols(h, 0, 1);
    let dist_patch = tape.abs(raw_dist);
    let logits = tape.slice_cols(h, 1, 2);
    Ok((ForwardOut { dist_patch, logits }, updates))
}

/// Distance loss in world units: mean over the batch of
/// (tanh(pred_world) - tanh(gt))^2 with pred_world = patch-frame distance
/// times the patch scale. Both arguments are nonnegative, so tanh of the
/// value equals tanh of its absolute value.
pub fn loss_distance(
    tape: &mut Tape,
    dist_patch: Var,
    scales: &[f64],
    gt_world_abs: &[f64],
) -> Result<Var> {
    for &g in gt_world_abs {
        if !g.is_finite() || g < 0.0 {
            return Err(Error::NonFinite(format!("distance target {g}")));
        }
    }
    let world = tape.mul_const(dist_patch, Tensor::column(scales.to_vec()));
    let t = tape.tanh(world);
    let target: Vec<f64> = gt_world_abs.iter().map(|g| g.tanh()).collect();
    let diff = tape.sub_const(t, Tensor::column(target));
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

/// Sign loss: mean binary cross entropy with logits; label 1 = outside.
pub fn loss_sign(tape: &mut Tape, logits: Var, gt_signs: &[crate::geometry::Sign]) -> Var {
    let labels: Vec<f64> = gt_signs
        .iter()
        .map(|s| match s {
            crate::geometry::Sign::Outside => 1.0,
            crate::geometry::Sign::Inside => 0.0,
        })
        .collect();
    let bce = tape.bce_with_logits(logits, Tensor::column(labels));
    tape.mean_all(bce)
}

/// Build the (local, global) normalized pair for a query point per the
/// config's patch and subsample modes.
pub fn build_pair(
    tree: &KdTree,
    x: Vec3,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PatchPair> {
    let local = match cfg.patch_mode {
        PatchMode::Knn => knn_patch(tree, x, cfg.n_d)?,
        PatchMode::FixedRadius(r) => fixed_radius_patch(tree, x, r, cfg.n_d)?,
    };
    let global = match cfg.subsample_mode {
        SubsampleMode::Gradient => gradient_subsample(tree.points(), x, cfg.n_s, rng)?,
        SubsampleMode::Uniform => uniform_subsample(tree.points(), cfg.n_s, rng)?,
    };
    normalize_pair(&local, &global, x)
}

/// Evaluate the frozen network on a batch of prepared pairs.
pub fn predict_pairs(
    store: &ParamStore,
    cfg: &ModelConfig,
    pairs: &[PatchPair],
) -> Result<Vec<Prediction>> {
    let mut tape = Tape::new();
    let mut bind = Bindings::new();
    let (out, _) = forward_batch(&mut tape, store, &mut bind, cfg, pairs, BnMode::Eval)?;
    let dist = tape.value(out.dist_patch).clone();
    let logits = tape.value(out.logits).clone();
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| Prediction {
            abs_distance_patch_frame: dist.data[i],
            sign_logits: logits.data[i],
            abs_distance_world: dist.data[i] * pair.scale_factor,
        })
        .collect())
}

/// Signed world-frame distance estimate at a single query point.
pub fn predict_sdf(
    tree: &KdTree,
    x: Vec3,
    store: &ParamStore,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pair = build_pair(tree, x, cfg, rng)?;
    let pred = predict_pairs(store, cfg, &[pair])?;
    Ok(pred[0].signed_world())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Sign;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_d: 8,
            n_s: 12,
            point_widths: vec![8, 8, 8, 16, 32],
            decoder_widths: vec![32, 16, 8],
            seed: 7,
            ..ModelConfig::default()
        }
    }

    fn random_pair(rng: &mut ChaCha8Rng, n_d: usize, n_s: usize) -> PatchPair {
        let mut pt = |r: f64| {
            Vec3::new(
                rng.gen_range(-r..r),
                rng.gen_range(-r..r),
                rng.gen_range(-r..r),
            )
        };
        PatchPair {
            local_patch: (0..n_d).map(|_| pt(1.0)).collect(),
            global_sub: (0..n_s).map(|_| pt(3.0)).collect(),
            scale_factor: 0.2,
        }
    }

    #[test]
    fn parameter_set_depends_only_on_config() {
        let a = init_params(&tiny_config());
        let mut cfg2 = tiny_config();
        cfg2.seed = 99;
        let b = init_params(&cfg2);
        assert_eq!(a.names(), b.names());
        assert_eq!(a.num_scalars(), b.num_scalars());
        for n in a.names() {
            assert_eq!(a.get(n).rows, b.get(n).rows);
            assert_eq!(a.get(n).cols, b.get(n).cols);
        }
    }

    #[test]
    fn shared_encoder_has_fewer_parameters() {
        let sep = init_params(&tiny_config());
        let mut cfg = tiny_config();
        cfg.encoder_mode = EncoderMode::Shared;
        let shared = init_params(&cfg);
        assert!(shared.num_scalars() < sep.num_scalars());
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let cfg = tiny_config();
        let store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(11);
        let pair = random_pair(&mut rng, cfg.n_d, cfg.n_s);

        let base = predict_pairs(&store, &cfg, &[pair.clone()]).unwrap()[0];

        let mut permuted = pair.clone();
        permuted.local_patch.reverse();
        permuted.global_sub.rotate_left(5);
        let p = predict_pairs(&store, &cfg, &[permuted]).unwrap()[0];
        assert_eq!(base.abs_distance_patch_frame, p.abs_distance_patch_frame);
        assert_eq!(base.sign_logits, p.sign_logits);

        // channel max ignores duplicated rows
        let mut doubled = pair.clone();
        doubled.local_patch.extend(pair.local_patch.iter().copied());
        doubled.global_sub.extend(pair.global_sub.iter().copied());
        let d = predict_pairs(&store, &cfg, &[doubled]).unwrap()[0];
        assert_eq!(base.abs_distance_patch_frame, d.abs_distance_patch_frame);
        assert_eq!(base.sign_logits, d.sign_logits);
    }

    #[test]
    fn identity_qstn_matches_disabled_qstn() {
        let cfg = tiny_config();
        let store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(12);
        let pair = random_pair(&mut rng, cfg.n_d, cfg.n_s);
        let with = predict_pairs(&store, &cfg, &[pair.clone()]).unwrap()[0];

        // same parameter values, rotation subnetwork bypassed
        let mut cfg_no = cfg.clone();
        cfg_no.use_qstn = false;
        let mut store_no = ParamStore::new();
        for n in store.names() {
            if !n.starts_with("qstn") {
                store_no.insert(n, store.get(n).clone(), store.is_trainable(n));
            }
        }
        let without = predict_pairs(&store_no, &cfg_no, &[pair]).unwrap()[0];
        assert!((with.abs_distance_patch_frame - without.abs_distance_patch_frame).abs() < 1e-12);
        assert!((with.sign_logits - without.sign_logits).abs() < 1e-12);
    }

    #[test]
    fn outputs_well_formed() {
        let cfg = tiny_config();
        let store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(13);
        let pairs: Vec<PatchPair> = (0..4).map(|_| random_pair(&mut rng, cfg.n_d, cfg.n_s)).collect();
        for p in predict_pairs(&store, &cfg, &pairs).unwrap() {
            assert!(p.abs_distance_patch_frame >= 0.0);
            let prob = p.sign_probability();
            assert!(prob > 0.0 && prob < 1.0);
            assert!(
                (p.abs_distance_world - p.abs_distance_patch_frame * 0.2).abs() < 1e-15
            );
            assert_eq!(p.signed_world().abs(), p.abs_distance_world);
        }
    }

    #[test]
    fn scale_round_trip_exact() {
        let cfg = tiny_config();
        let store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(14);
        let mut pair = random_pair(&mut rng, cfg.n_d, cfg.n_s);
        pair.scale_factor = 0.37;
        let p = predict_pairs(&store, &cfg, &[pair]).unwrap()[0];
        assert_eq!(p.abs_distance_world, p.abs_distance_patch_frame * 0.37);
    }

    #[test]
    fn distance_loss_examples() {
        // equal prediction and target -> 0
        let mut tape = Tape::new();
        let d = tape.input(Tensor::column(vec![0.1]));
        let l = loss_distance(&mut tape, d, &[1.0], &[0.1]).unwrap();
        assert!(tape.value(l).item() < 1e-15);

        // pred 0 vs gt 0.1 -> tanh(0.1)^2
        let mut tape = Tape::new();
        let d = tape.input(Tensor::column(vec![0.0]));
        let l = loss_distance(&mut tape, d, &[1.0], &[0.1]).unwrap();
        let expect = 0.1f64.tanh().powi(2);
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
        assert!((expect - 0.009933).abs() < 1e-6);

        // monotone decrease approaching the target from both sides
        let at = |pred: f64| {
            let mut tape = Tape::new();
            let d = tape.input(Tensor::column(vec![pred]));
            let l = loss_distance(&mut tape, d, &[1.0], &[0.3]).unwrap();
            tape.value(l).item()
        };
        assert!(at(0.0) > at(0.1) && at(0.1) > at(0.2) && at(0.2) > at(0.29));
        assert!(at(0.8) > at(0.6) && at(0.6) > at(0.4) && at(0.4) > at(0.31));

        // rejects non-finite targets
        let mut tape = Tape::new();
        let d = tape.input(Tensor::column(vec![0.0]));
        assert!(loss_distance(&mut tape, d, &[1.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn sign_loss_examples() {
        let at = |logit: f64, sign: Sign| {
            let mut tape = Tape::new();
            let z = tape.input(Tensor::column(vec![logit]));
            let l = loss_sign(&mut tape, z, &[sign]);
            tape.value(l).item()
        };
        assert!((at(0.0, Sign::Outside) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((at(0.0, Sign::Inside) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(at(20.0, Sign::Outside) < 1e-8);
        assert!((at(-20.0, Sign::Outside) - 20.0).abs() < 1e-6);
        // stable far into the saturated regime
        assert!(at(1e3, Sign::Outside).is_finite());
        assert!(at(-1e3, Sign::Outside).is_finite());
    }

    #[test]
    fn full_stack_gradcheck() {
        // finite differences through encoders + decoder + both losses on
        // a reduced config; spot-check a few parameters from each block
        let mut cfg = tiny_config();
        cfg.n_d = 5;
        cfg.n_s = 6;
        cfg.point_widths = vec![4, 4, 4, 6, 8];
        cfg.decoder_widths = vec![8, 6, 4];
        let mut store = init_params(&cfg);
        // the rotation head initializes to exactly zero weights, which
        // blocks gradient into its encoder ladder; nudge it off zero so
        // the check exercises that path too
        for (i, v) in store.get_mut("qstn.head.w").data.iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f64 - 3.0);
        }
        let mut rng = crate::rng::seeded_rng(15);
        let pairs: Vec<PatchPair> = (0..3).map(|_| random_pair(&mut rng, cfg.n_d, cfg.n_s)).collect();
        let gts = [0.05, 0.2, 0.4];
        let signs = [Sign::Outside, Sign::Inside, Sign::Outside];
        let scales: Vec<f64> = pairs.iter().map(|p| p.scale_factor).collect();

        let eval_loss = |store: &ParamStore| -> f64 {
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let (out, _) =
                forward_batch(&mut tape, store, &mut bind, &cfg, &pairs, BnMode::Train).unwrap();
            let ld = loss_distance(&mut tape, out.dist_patch, &scales, &gts).unwrap();
            let ls = loss_sign(&mut tape, out.logits, &signs);
            let total = tape.add(ld, ls);
            tape.value(total).item()
        };

        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let (out, _) =
            forward_batch(&mut tape, &store, &mut bind, &cfg, &pairs, BnMode::Train).unwrap();
        let ld = loss_distance(&mut tape, out.dist_patch, &scales, &gts).unwrap();
        let ls = loss_sign(&mut tape, out.logits, &signs);
        let total = tape.add(ld, ls);
        tape.backward(total).unwrap();
        let grads = bind.grads(&tape, &store);

        let h = 1e-5;
        let probe = [
            ("local.s0.w", 2usize),
            ("local.s3.gamma", 1),
            ("global.s1.b", 0),
            ("global.ft", 5),
            ("qstn.s0.w", 3),
            ("qstn.head.b", 1),
            ("dec.l0.w", 10),
            ("dec.l3.w", 1),
            ("dec.l3.b", 0),
        ];
        for (name, idx) in probe {
            let mut plus = store.clone();
            plus.get_mut(name).data[idx] += h;
            let mut minus = store.clone();
            minus.get_mut(name).data[idx] -= h;
            let numeric = (eval_loss(&plus) - eval_loss(&minus)) / (2.0 * h);
            let analytic = grads[name].data[idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-6);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
            );
        }
        // the rotation subnetwork receives gradient signal end to end
        for name in ["qstn.head.w", "qstn.s0.w"] {
            let norm: f64 = grads[name].data.iter().map(|g| g * g).sum();
            assert!(norm > 0.0, "{name} got no gradient");
        }
    }

    #[test]
    fn distance_loss_never_reaches_sign_head() {
        // backward through the distance loss only; the final decoder
        // weight column feeding the logits must stay at zero gradient
        let cfg = tiny_config();
        let store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(16);
        let pairs = vec![random_pair(&mut rng, cfg.n_d, cfg.n_s)];
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let (out, _) =
            forward_batch(&mut tape, &store, &mut bind, &cfg, &pairs, BnMode::Train).unwrap();
        let ld = loss_distance(&mut tape, out.dist_patch, &[0.2], &[0.1]).unwrap();
        tape.backward(ld).unwrap();
        let grads = bind.grads(&tape, &store);
        let last = cfg.decoder_widths.len();
        let gw = &grads[&format!("dec.l{last}.w")];
        let gb = &grads[&format!("dec.l{last}.b")];
        for r in 0..gw.rows {
            assert_eq!(gw.at(r, 1), 0.0, "logit column weight got distance gradient");
        }
        assert_eq!(gb.at(0, 1), 0.0);
        // while the distance column does receive gradient
        let dist_norm: f64 = (0..gw.rows).map(|r| gw.at(r, 0).powi(2)).sum();
        assert!(dist_norm > 0.0);
    }

    #[test]
    fn shared_mode_uses_one_parameter_set_for_both_subsets() {
        let mut cfg = tiny_config();
        cfg.encoder_mode = EncoderMode::Shared;
        cfg.use_qstn = false;
        let store = init_params(&cfg);
        // swapping local and global subsets of equal size changes only
        // which feature lands in which half of the concat
        let mut rng = crate::rng::seeded_rng(17);
        let mut pair = random_pair(&mut rng, cfg.n_d, cfg.n_d);
        pair.global_sub = pair.local_patch.clone();
        let p = predict_pairs(&store, &cfg, &[pair.clone()]).unwrap()[0];
        std::mem::swap(&mut pair.local_patch, &mut pair.global_sub);
        let q = predict_pairs(&store, &cfg, &[pair]).unwrap()[0];
        assert_eq!(p.sign_logits, q.sign_logits);
        assert_eq!(p.abs_distance_patch_frame, q.abs_distance_patch_frame);
    }

    #[test]
    fn batch_norm_running_stats_move_toward_batch() {
        let cfg = tiny_config();
        let mut store = init_params(&cfg);
        let mut rng = crate::rng::seeded_rng(18);
        let pairs = vec![random_pair(&mut rng, cfg.n_d, cfg.n_s)];
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let (_, updates) =
            forward_batch(&mut tape, &store, &mut bind, &cfg, &pairs, BnMode::Train).unwrap();
        assert!(!updates.is_empty());
        let before = store.get("local.s0.rmean").clone();
        apply_stat_updates(&mut store, &updates);
        let after = store.get("local.s0.rmean");
        assert_ne!(before.data, after.data);
    }
}
