//! Spatial-temporal fusion: full-resolution 3D features attend to each
//! video frame's patch tokens, a learned 1×1 map along the time axis
//! compresses the per-frame results, and a channel fusion combines the
//! outcome with the 3D branch.

use crate::encoders::EncoderConfig;
use crate::error::Result;
use crate::params::{init_bias, init_linear, Bound, ParamId, ParamSet};
use crate::tensor::{Tape, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct StfmParams {
    pub u_q: ParamId,
    pub u_k: ParamId,
    pub u_v: ParamId,
    /// One learned T -> 1 linear map shared across channels and points.
    pub theta_time_w: ParamId,
    pub theta_time_b: ParamId,
    /// Channel fusion 2C -> C over [F_3d; F_pv].
    pub theta_fuse_w: ParamId,
    pub theta_fuse_b: ParamId,
}

impl StfmParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        StfmParams {
            u_q: ps.register("stfm.u_q", init_linear(rng, c, c, c), true),
            u_k: ps.register("stfm.u_k", init_linear(rng, c, c, c), true),
            u_v: ps.register("stfm.u_v", init_linear(rng, c, c, c), true),
            theta_time_w: ps.register("stfm.time.w", init_linear(rng, 1, cfg.t, cfg.t), true),
            theta_time_b: ps.register("stfm.time.b", init_bias(rng, 1, cfg.t), true),
            theta_fuse_w: ps.register("stfm.fuse.w", init_linear(rng, c, 2 * c, 2 * c), true),
            theta_fuse_b: ps.register("stfm.fuse.b", init_bias(rng, c, 2 * c), true),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StfmAttendOutput {
    pub f_pv: TensorId,
    /// Per-frame attention maps (N×L, row-stochastic).
    pub attn: Vec<TensorId>,
    /// Per-frame attention outputs C×N, before time mixing.
    pub per_frame: Vec<TensorId>,
}

/// Repeats the 3D feature across the T frames (one attention per frame in
/// chronological order), attends each point token over that frame's L
/// patch tokens, and compresses the stack with the learned time map.
pub fn stfm_cross_attend(
    tape: &mut Tape,
    f_3d: TensorId,
    f_v: TensorId,
    p: &StfmParams,
    bound: &Bound,
    cfg: &EncoderConfig,
) -> Result<StfmAttendOutput> {
    let (c, l, n) = (cfg.c, cfg.l(), tape.shape(f_3d)[1]);
    let scale = 1.0 / (c as f64).sqrt();
    let q = tape.matmul(bound.id(p.u_q), f_3d)?; // C×N
    let mut per_frame = Vec::with_capacity(cfg.t);
    let mut attns = Vec::with_capacity(cfg.t);
    let mut flat_frames = Vec::with_capacity(cfg.t);
    for t in 0..cfg.t {
        let f_v_t = tape.slice(f_v, 0, t, 1)?;
        let f_v_t = tape.reshape(f_v_t, &[c, l])?;
        let k = tape.matmul(bound.id(p.u_k), f_v_t)?; // C×L
        let v = tape.matmul(bound.id(p.u_v), f_v_t)?;
        let scores = tape.matmul_at(q, k)?; // N×L
        let attn = tape.softmax_scaled(scores, 1, scale)?;
        let out = tape.matmul_bt(v, attn)?; // C×N
        per_frame.push(out);
        attns.push(attn);
        flat_frames.push(tape.reshape(out, &[1, c * n])?);
    }
    let stack = tape.concat(&flat_frames, 0)?; // T×(C·N)
    let mixed = tape.matmul(bound.id(p.theta_time_w), stack)?; // 1×(C·N)
    let mixed = tape.add(mixed, bound.id(p.theta_time_b))?;
    let f_pv = tape.reshape(mixed, &[c, n])?;
    Ok(StfmAttendOutput {
        f_pv,
        attn: attns,
        per_frame,
    })
}

/// F_f = theta_fuse · [F_3d; F_pv] + bias, per point token.
pub fn stfm_fuse(
    tape: &mut Tape,
    f_3d: TensorId,
    f_pv: TensorId,
    p: &StfmParams,
    bound: &Bound,
) -> Result<TensorId> {
    let cat = tape.concat(&[f_3d, f_pv], 0)?; // 2C×N
    let f_f = tape.matmul(bound.id(p.theta_fuse_w), cat)?;
    tape.add(f_f, bound.id(p.theta_fuse_b))
}
