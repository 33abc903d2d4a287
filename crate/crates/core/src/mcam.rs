//! Multimodal contextual alignment: per-frame contextual attention between
//! the projected-object feature and video frame features, temporal fusion
//! of the aligned frames, injection into the 3D branch, and upsampling to
//! the full-resolution context-aligned feature.

use crate::encoders::EncoderConfig;
use crate::error::Result;
use crate::geometry::KnnPlan;
use crate::params::{init_bias, init_linear, Bound, ParamId, ParamSet};
use crate::tensor::{Tape, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const L2_EPS: f64 = 1e-8;

/// Scaling factor d^(-1/2) with d = 3·3·C.
pub fn ctx_scale(c: usize) -> f64 {
    1.0 / ((9 * c) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct McamParams {
    /// Temporal-fusion maps: (T·C) -> 2C -> C, stored row-major as
    /// [out, in] so they left-multiply token matrices.
    pub w1: ParamId,
    pub w2: ParamId,
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    /// Running statistics (not trainable; updated outside the tape).
    pub bn_mean: ParamId,
    pub bn_var: ParamId,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

impl McamParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        let tc = cfg.t * c;
        let ch = 2 * c;
        McamParams {
            w1: ps.register("mcam.fuse.w1", init_linear(rng, ch, tc, tc), true),
            w2: ps.register("mcam.fuse.w2", init_linear(rng, c, ch, ch), true),
            bn_gamma: ps.register("mcam.fuse.bn_gamma", Tensor::full(&[c], 1.0), true),
            bn_beta: ps.register("mcam.fuse.bn_beta", Tensor::zeros(&[c]), true),
            bn_mean: ps.register("mcam.fuse.bn_mean", Tensor::zeros(&[c]), false),
            bn_var: ps.register("mcam.fuse.bn_var", Tensor::full(&[c], 1.0), false),
            w_q: ps.register("mcam.inject.w_q", init_linear(rng, c, c, c), true),
            w_k: ps.register("mcam.inject.w_k", init_linear(rng, c, c, c), true),
            w_v: ps.register("mcam.inject.w_v", init_linear(rng, c, c, c), true),
        }
    }
}

/// One propagation hop of the point decoder: features interpolated from
/// the N_p level to all N points pass through a linear + relu mix.
#[derive(Debug, Clone)]
pub struct UpsampleParams {
    pub mix_w: ParamId,
    pub mix_b: ParamId,
}

impl UpsampleParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        UpsampleParams {
            mix_w: ps.register("fp.mix.w", init_linear(rng, c, c, c), true),
            mix_b: ps.register("fp.mix.b", init_bias(rng, c, c), true),
        }
    }
}

/// Batch-norm mode for [`temporal_fuse`].
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with the current tokens' statistics; the node exposes the
    /// observed (mean, var) for running updates.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

/// L2-normalizes every row, adding 1e-8 to the norms (a 1e-16 floor under
/// the square root keeps all-zero patch rows differentiable).
fn l2_normalize_rows(tape: &mut Tape, x: TensorId) -> Result<TensorId> {
    let sq = tape.mul(x, x)?;
    let sums = tape.sum_axis(sq, 1, true)?;
    let sums = tape.add_scalar(sums, 1e-16);
    let norms = tape.sqrt(sums);
    let norms = tape.add_scalar(norms, L2_EPS);
    tape.div(x, norms)
}

/// Contextual attention between the projection feature (foreground) and
/// one video frame feature (background): cosine-similarity scores over 3×3
/// patch rows, row-softmax over the background axis, and reconstruction
/// from the unnormalized background patches folded back to a map.
pub fn contextual_attend(
    tape: &mut Tape,
    f_i: TensorId,
    f_v_t: TensorId,
) -> Result<(TensorId, TensorId)> {
    let shape = tape.shape(f_i).to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let fg = tape.unfold(f_i, 3, 1, 1)?; // L×9C
    let bg = tape.unfold(f_v_t, 3, 1, 1)?;
    let fg_n = l2_normalize_rows(tape, fg)?;
    let bg_n = l2_normalize_rows(tape, bg)?;
    let sim = tape.matmul_bt(fg_n, bg_n)?; // L×L
    let a_t = tape.softmax_scaled(sim, 1, ctx_scale(c))?;
    let rows = tape.matmul(a_t, bg)?; // convex mix of raw background patches
    let f_i_t = tape.fold(rows, h, w, true)?;
    Ok((f_i_t, a_t))
}

/// Channel-concatenates the T aligned frames and compresses them per
/// spatial token: relu(BN(W2 · relu(W1 · tokens))). Returns the fused
/// C×H'×W' map and the batch-norm node (for running-stat updates in
/// train mode).
pub fn temporal_fuse(
    tape: &mut Tape,
    frames: &[TensorId],
    p: &McamParams,
    bound: &Bound,
    cfg: &EncoderConfig,
    bn: BnMode,
) -> Result<(TensorId, TensorId)> {
    if frames.len() != cfg.t {
        return Err(crate::error::VagError::contract(
            "temporal_fuse",
            format!("expected {} frames, got {}", cfg.t, frames.len()),
        ));
    }
    let l = cfg.l();
    let mut tokens = Vec::with_capacity(frames.len());
    for &f in frames {
        tokens.push(tape.reshape(f, &[cfg.c, l])?);
    }
    let cat = tape.concat(&tokens, 0)?; // (T·C)×L
    let h1 = tape.matmul(bound.id(p.w1), cat)?;
    let h1 = tape.relu(h1);
    let h2 = tape.matmul(bound.id(p.w2), h1)?; // C×L
    let bn_node = match bn {
        BnMode::Train => {
            tape.batchnorm_train(h2, bound.id(p.bn_gamma), bound.id(p.bn_beta), BN_EPS)?
        }
        BnMode::Eval { mean, var } => tape.batchnorm_eval(
            h2,
            bound.id(p.bn_gamma),
            bound.id(p.bn_beta),
            mean,
            var,
            BN_EPS,
        )?,
    };
    let out = tape.relu(bn_node);
    let f_2d = tape.reshape(out, &[cfg.c, cfg.h_feat, cfg.w_feat])?;
    Ok((f_2d, bn_node))
}

/// Residual cross-attention injecting the fused 2D context into the point
/// feature: every point token attends over the L spatial tokens of F_2d.
pub fn inject_2d_to_3d(
    tape: &mut Tape,
    f_p: TensorId,
    f_2d: TensorId,
    p: &McamParams,
    bound: &Bound,
    cfg: &EncoderConfig,
) -> Result<(TensorId, TensorId)> {
    let l = cfg.l();
    let f2 = tape.reshape(f_2d, &[cfg.c, l])?;
    let q = tape.matmul(bound.id(p.w_q), f_p)?; // C×N_p
    let k = tape.matmul(bound.id(p.w_k), f2)?; // C×L
    let v = tape.matmul(bound.id(p.w_v), f2)?;
    let scores = tape.matmul_at(q, k)?; // N_p×L
    let attn = tape.softmax_scaled(scores, 1, 1.0 / (cfg.c as f64).sqrt())?;
    let ctx = tape.matmul_bt(v, attn)?; // C×N_p
    let f_a = tape.add(f_p, ctx)?;
    Ok((f_a, attn))
}

/// Everything the full 2D branch produces for the rest of the model.
#[derive(Debug, Clone)]
pub struct McamOutput {
    pub f_2d: TensorId,
    pub f_a: TensorId,
    pub f_3d: TensorId,
    /// Per-frame contextual attention maps A_t (row-stochastic L×L).
    pub ctx_attn: Vec<TensorId>,
    /// Cross-attention rows of the injection step (N_p×L).
    pub inject_attn: TensorId,
    /// Batch-norm node inside the temporal fusion.
    pub bn_node: TensorId,
}

/// Full module: T contextual attention pairs, temporal fusion, injection,
/// and one propagation hop up to all N points (inverse-distance k-NN
/// interpolation followed by a linear + relu mix).
#[allow(clippy::too_many_arguments)]
pub fn mcam_forward(
    tape: &mut Tape,
    f_p: TensorId,
    f_i: TensorId,
    f_v: TensorId,
    up_plan: &KnnPlan,
    p: &McamParams,
    up: &UpsampleParams,
    bound: &Bound,
    cfg: &EncoderConfig,
    bn: BnMode,
) -> Result<McamOutput> {
    let mut frames = Vec::with_capacity(cfg.t);
    let mut ctx_attn = Vec::with_capacity(cfg.t);
    for t in 0..cfg.t {
        let f_v_t = tape.slice(f_v, 0, t, 1)?;
        let f_v_t = tape.reshape(f_v_t, &[cfg.c, cfg.h_feat, cfg.w_feat])?;
        let (f_i_t, a_t) = contextual_attend(tape, f_i, f_v_t)?;
        frames.push(f_i_t);
        ctx_attn.push(a_t);
    }
    let (f_2d, bn_node) = temporal_fuse(tape, &frames, p, bound, cfg, bn)?;
    let (f_a, inject_attn) = inject_2d_to_3d(tape, f_p, f_2d, p, bound, cfg)?;
    let f_3d = upsample_to_points(tape, f_a, up_plan, up, bound)?;
    Ok(McamOutput {
        f_2d,
        f_a,
        f_3d,
        ctx_attn,
        inject_attn,
        bn_node,
    })
}

/// The shared propagation hop: N_p-level features to all N points.
pub fn upsample_to_points(
    tape: &mut Tape,
    feats: TensorId,
    up_plan: &KnnPlan,
    up: &UpsampleParams,
    bound: &Bound,
) -> Result<TensorId> {
    let interp = tape.gather_mix(feats, &up_plan.idx, &up_plan.w, up_plan.k)?;
    let mixed = tape.matmul(bound.id(up.mix_w), interp)?;
    let mixed = tape.add(mixed, bound.id(up.mix_b))?;
    Ok(tape.relu(mixed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, project_to_scalar, rand_tensor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            c: 6,
            n: 40,
            n_p: 10,
            t: 3,
            h: 16,
            w: 16,
            h_feat: 4,
            w_feat: 4,
            heads: 2,
            video_frozen: true,
        }
    }

    #[test]
    fn scale_factor_matches_desk_value() {
        assert!((ctx_scale(32) - 0.05892556509887896).abs() < 1e-15);
        assert!((ctx_scale(32) - 1.0 / 288f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_patch_rows_attend_to_the_diagonal() {
        // one-hot channel per pixel makes every unfold row orthogonal to
        // every other, so self-similarity must dominate each row
        let (c, h, w) = (9, 3, 3);
        let mut data = vec![0.0; c * h * w];
        for pix in 0..h * w {
            data[pix * h * w + pix] = 1.0;
        }
        let mut tape = Tape::new();
        let f = tape.constant(data, &[c, h, w]).unwrap();
        let (_, a_t) = contextual_attend(&mut tape, f, f).unwrap();
        let l = h * w;
        let a = tape.data(a_t);
        for r in 0..l {
            let row = &a[r * l..(r + 1) * l];
            let max_idx = row
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(max_idx, r, "row {r} attends off-diagonal");
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_background_reconstruction_is_convex() {
        // zero padding keeps edge patch rows distinct, but the center tap
        // is in-bounds for every patch, so each reconstructed row carries
        // the exact constant there and the folded map never exceeds it
        let cval = 0.73;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_cfg();
        let f_i = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let mut tape = Tape::new();
        let fg = tape.leaf(&f_i, false);
        let bg = tape
            .constant(
                vec![cval; cfg.c * cfg.l()],
                &[cfg.c, cfg.h_feat, cfg.w_feat],
            )
            .unwrap();
        let (f_i_t, a_t) = contextual_attend(&mut tape, fg, bg).unwrap();
        let rows = {
            // reconstruction rows = A_t · unfold(bg)
            let bgu = tape.unfold(bg, 3, 1, 1).unwrap();
            let r = tape.matmul(a_t, bgu).unwrap();
            tape.data(r).to_vec()
        };
        let l = cfg.l();
        for r in 0..l {
            for ch in 0..cfg.c {
                let center = rows[r * 9 * cfg.c + 4 * cfg.c + ch];
                assert!((center - cval).abs() <= 1e-9, "row {r} center tap {center}");
            }
        }
        for v in tape.data(f_i_t) {
            assert!(*v <= cval + 1e-9 && *v >= 0.0);
        }
    }

    #[test]
    fn attention_is_invariant_to_background_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small_cfg();
        let f_i = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let f_v = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let mut tape = Tape::new();
        let fg = tape.leaf(&f_i, false);
        let bg = tape.leaf(&f_v, false);
        let bg_scaled = tape.mul_scalar(bg, 7.5);
        let (rec1, a1) = contextual_attend(&mut tape, fg, bg).unwrap();
        let (rec2, a2) = contextual_attend(&mut tape, fg, bg_scaled).unwrap();
        for (x, y) in tape.data(a1).iter().zip(tape.data(a2)) {
            assert!((x - y).abs() <= 1e-6, "attention changed: {x} vs {y}");
        }
        for (x, y) in tape.data(rec1).iter().zip(tape.data(rec2)) {
            assert!((7.5 * x - y).abs() <= 1e-5 * y.abs().max(1.0));
        }
    }

    fn mcam_fixture(cfg: &EncoderConfig, seed: u64) -> (ParamSet, McamParams, UpsampleParams) {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mp = McamParams::new(&mut ps, &mut rng, cfg);
        let up = UpsampleParams::new(&mut ps, &mut rng, cfg);
        (ps, mp, up)
    }

    #[test]
    fn temporal_fuse_zero_input_zero_beta_gives_zero() {
        let cfg = small_cfg();
        let (ps, mp, _) = mcam_fixture(&cfg, 3);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let frames: Vec<TensorId> = (0..cfg.t)
            .map(|_| {
                tape.constant(
                    vec![0.0; cfg.c * cfg.l()],
                    &[cfg.c, cfg.h_feat, cfg.w_feat],
                )
                .unwrap()
            })
            .collect();
        let (f_2d, _) =
            temporal_fuse(&mut tape, &frames, &mp, &bound, &cfg, BnMode::Train).unwrap();
        assert!(tape.data(f_2d).iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape(f_2d), &[cfg.c, cfg.h_feat, cfg.w_feat]);
    }

    #[test]
    fn temporal_fuse_desk_shape_contract() {
        let cfg = EncoderConfig::desk();
        let (ps, mp, _) = mcam_fixture(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let frames: Vec<TensorId> = (0..cfg.t)
            .map(|_| {
                let t = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
                tape.leaf(&t, false)
            })
            .collect();
        let (f_2d, _) =
            temporal_fuse(&mut tape, &frames, &mp, &bound, &cfg, BnMode::Train).unwrap();
        assert_eq!(tape.shape(f_2d), &[32, 8, 8]);
    }

    #[test]
    fn temporal_fuse_wrong_frame_count_is_contract_error() {
        let cfg = small_cfg();
        let (ps, mp, _) = mcam_fixture(&cfg, 6);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let frames = vec![tape
            .constant(vec![0.0; cfg.c * cfg.l()], &[cfg.c, cfg.h_feat, cfg.w_feat])
            .unwrap()];
        assert!(temporal_fuse(&mut tape, &frames, &mp, &bound, &cfg, BnMode::Train).is_err());
    }

    #[test]
    fn temporal_fuse_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let (ps, mp, _) = mcam_fixture(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame_data: Vec<Tensor> = (0..cfg.t)
            .map(|_| rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]))
            .collect();
        let mut inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let n_params = inputs.len();
        inputs.extend(frame_data);
        let rep = fd_check(&inputs, 8, 9, &|t, ids| {
            let bound = crate::params::Bound::from_ids(ids[..n_params].to_vec());
            let frames = ids[n_params..].to_vec();
            let (f_2d, _) = temporal_fuse(t, &frames, &mp, &bound, &cfg, BnMode::Train)?;
            project_to_scalar(t, f_2d, 71)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn inject_uniform_attention_with_zero_queries() {
        let cfg = small_cfg();
        let (mut ps, mp, _) = mcam_fixture(&cfg, 10);
        for name in ["mcam.inject.w_q", "mcam.inject.w_k"] {
            let n = ps.by_name(name).unwrap().tensor.data.len();
            ps.set_data(name, vec![0.0; n]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f_p = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
        let f_2d = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let fp = tape.leaf(&f_p, false);
        let f2 = tape.leaf(&f_2d, false);
        let (f_a, attn) = inject_2d_to_3d(&mut tape, fp, f2, &mp, &bound, &cfg).unwrap();
        let l = cfg.l();
        for row in tape.data(attn).chunks(l) {
            for v in row {
                assert!((v - 1.0 / l as f64).abs() <= 1e-12);
            }
        }
        // correction identical across points (rank-1 across the N_p axis)
        let np = cfg.n_p;
        let fa = tape.data(f_a);
        let fpd = tape.data(fp);
        for ch in 0..cfg.c {
            let corr0 = fa[ch * np] - fpd[ch * np];
            for j in 1..np {
                let corr = fa[ch * np + j] - fpd[ch * np + j];
                assert!((corr - corr0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn inject_zero_values_is_residual_identity() {
        let cfg = small_cfg();
        let (mut ps, mp, _) = mcam_fixture(&cfg, 12);
        let n = ps.by_name("mcam.inject.w_v").unwrap().tensor.data.len();
        ps.set_data("mcam.inject.w_v", vec![0.0; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f_p = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
        let f_2d = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let fp = tape.leaf(&f_p, false);
        let f2 = tape.leaf(&f_2d, false);
        let (f_a, _) = inject_2d_to_3d(&mut tape, fp, f2, &mp, &bound, &cfg).unwrap();
        assert_eq!(tape.data(f_a), tape.data(fp));
    }

    #[test]
    fn inject_rows_stochastic_and_gradients_match() {
        let cfg = small_cfg();
        let (ps, mp, _) = mcam_fixture(&cfg, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let f_p = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
        let f_2d = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape, false);
            let fp = tape.leaf(&f_p, false);
            let f2 = tape.leaf(&f_2d, false);
            let (_, attn) = inject_2d_to_3d(&mut tape, fp, f2, &mp, &bound, &cfg).unwrap();
            for row in tape.data(attn).chunks(cfg.l()) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() <= 1e-9);
            }
        }
        let mut inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let n_params = inputs.len();
        inputs.push(f_p);
        inputs.push(f_2d);
        let rep = fd_check(&inputs, 8, 16, &|t, ids| {
            let bound = crate::params::Bound::from_ids(ids[..n_params].to_vec());
            let (f_a, _) = inject_2d_to_3d(t, ids[n_params], ids[n_params + 1], &mp, &bound, &cfg)?;
            project_to_scalar(t, f_a, 72)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }

    fn forward_fixture(
        cfg: &EncoderConfig,
        seed: u64,
    ) -> (ParamSet, McamParams, UpsampleParams, KnnPlan, Tensor, Tensor, Tensor) {
        let (ps, mp, up) = mcam_fixture(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let src: Vec<[f64; 3]> = (0..cfg.n_p)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let dst: Vec<[f64; 3]> = (0..cfg.n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let plan = crate::geometry::knn_plan(&src, &dst, 3).unwrap();
        let f_p = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
        let f_i = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
        let f_v = rand_tensor(&mut rng, &[cfg.t, cfg.c, cfg.h_feat, cfg.w_feat]);
        (ps, mp, up, plan, f_p, f_i, f_v)
    }

    #[test]
    fn mcam_forward_desk_shape_contract() {
        let cfg = EncoderConfig::desk();
        let (ps, mp, up, plan, f_p, f_i, f_v) = forward_fixture(&cfg, 17);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let fp = tape.leaf(&f_p, false);
        let fi = tape.leaf(&f_i, false);
        let fv = tape.leaf(&f_v, false);
        let out = mcam_forward(
            &mut tape, fp, fi, fv, &plan, &mp, &up, &bound, &cfg, BnMode::Train,
        )
        .unwrap();
        assert_eq!(tape.shape(out.f_3d), &[32, 512]);
        assert_eq!(tape.shape(out.f_2d), &[32, 8, 8]);
        assert_eq!(out.ctx_attn.len(), 8);
    }

    #[test]
    fn mcam_forward_gradient_to_projection_feature() {
        let cfg = small_cfg();
        let (ps, mp, up, plan, f_p, f_i, f_v) = forward_fixture(&cfg, 18);
        let params: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let n_params = params.len();
        let mut inputs = params;
        inputs.push(f_i);
        let rep = fd_check(&inputs, 6, 19, &|t, ids| {
            let bound = crate::params::Bound::from_ids(ids[..n_params].to_vec());
            let fp = t.leaf(&f_p, false);
            let fv = t.leaf(&f_v, false);
            let out = mcam_forward(
                t, fp, ids[n_params], fv, &plan, &mp, &up, &bound, &cfg, BnMode::Train,
            )?;
            project_to_scalar(t, out.f_3d, 73)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-3, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn mcam_forward_is_deterministic() {
        let cfg = small_cfg();
        let (ps, mp, up, plan, f_p, f_i, f_v) = forward_fixture(&cfg, 20);
        let run = || {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape, false);
            let fp = tape.leaf(&f_p, false);
            let fi = tape.leaf(&f_i, false);
            let fv = tape.leaf(&f_v, false);
            let out = mcam_forward(
                &mut tape, fp, fi, fv, &plan, &mp, &up, &bound, &cfg, BnMode::Train,
            )
            .unwrap();
            tape.data(out.f_3d).to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn all_ctx_attention_rows_are_stochastic() {
        let cfg = small_cfg();
        let (ps, mp, up, plan, f_p, f_i, f_v) = forward_fixture(&cfg, 21);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let fp = tape.leaf(&f_p, false);
        let fi = tape.leaf(&f_i, false);
        let fv = tape.leaf(&f_v, false);
        let out = mcam_forward(
            &mut tape, fp, fi, fv, &plan, &mp, &up, &bound, &cfg, BnMode::Train,
        )
        .unwrap();
        for a_t in &out.ctx_attn {
            for row in tape.data(*a_t).chunks(cfg.l()) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() <= 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
