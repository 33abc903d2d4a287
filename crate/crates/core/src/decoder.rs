//! Affordance head (two-layer MLP + sigmoid) and the training objective
//! (soft-target focal loss plus soft dice, summed 1:1).

use crate::encoders::EncoderConfig;
use crate::error::{Result, VagError};
use crate::params::{init_bias, init_linear, Bound, ParamId, ParamSet};
use crate::tensor::{Tape, TensorId};
use rand_chacha::ChaCha8Rng;

pub const PRED_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub d1_w: ParamId,
    pub d1_b: ParamId,
    pub d2_w: ParamId,
    pub d2_b: ParamId,
}

impl DecoderParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        DecoderParams {
            d1_w: ps.register("decoder.d1.w", init_linear(rng, c, c, c), true),
            d1_b: ps.register("decoder.d1.b", init_bias(rng, c, c), true),
            d2_w: ps.register("decoder.d2.w", init_linear(rng, 1, c, c), true),
            d2_b: ps.register("decoder.d2.b", init_bias(rng, 1, c), true),
        }
    }
}

/// A_pred = sigmoid(D2 · relu(D1 · F_f + b1) + b2), one score per point.
pub fn decode_affordance(
    tape: &mut Tape,
    f_f: TensorId,
    p: &DecoderParams,
    bound: &Bound,
) -> Result<TensorId> {
    let h = tape.matmul(bound.id(p.d1_w), f_f)?;
    let h = tape.add(h, bound.id(p.d1_b))?;
    let h = tape.relu(h);
    let logits = tape.matmul(bound.id(p.d2_w), h)?; // 1×N
    let logits = tape.add(logits, bound.id(p.d2_b))?;
    let scores = tape.sigmoid(logits);
    tape.transpose(scores) // N×1
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub eps_dice: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            alpha: 0.25,
            eps_dice: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || !(0.0..1.0).contains(&self.alpha) || self.alpha == 0.0 {
            return Err(VagError::unsupported(
                "LossConfig",
                format!("gamma={} alpha={}", self.gamma, self.alpha),
            ));
        }
        if self.eps_dice <= 0.0 {
            return Err(VagError::unsupported("LossConfig", "eps_dice must be positive"));
        }
        Ok(())
    }
}

fn check_same_shape(tape: &Tape, pred: TensorId, gt: TensorId, op: &'static str) -> Result<()> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(VagError::DimMismatch {
            op,
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(gt).to_vec(),
        });
    }
    Ok(())
}

/// Soft-target focal loss, averaged over points:
/// −[α·g·(1−p)^γ·log p + (1−α)·(1−g)·p^γ·log(1−p)], p clamped to
/// [1e-7, 1−1e-7] for log stability.
pub fn focal_loss(
    tape: &mut Tape,
    pred: TensorId,
    gt: TensorId,
    cfg: &LossConfig,
) -> Result<TensorId> {
    check_same_shape(tape, pred, gt, "focal_loss")?;
    let p = tape.clamp(pred, PRED_CLAMP, 1.0 - PRED_CLAMP);
    let one_minus_p = {
        let neg = tape.mul_scalar(p, -1.0);
        tape.add_scalar(neg, 1.0)
    };
    let one_minus_g = {
        let neg = tape.mul_scalar(gt, -1.0);
        tape.add_scalar(neg, 1.0)
    };
    let log_p = tape.log(p);
    let log_1p = tape.log(one_minus_p);
    let pos_w = tape.pow_scalar(one_minus_p, cfg.gamma);
    let neg_w = tape.pow_scalar(p, cfg.gamma);

    let pos = tape.mul(gt, pos_w)?;
    let pos = tape.mul(pos, log_p)?;
    let pos = tape.mul_scalar(pos, cfg.alpha);

    let neg = tape.mul(one_minus_g, neg_w)?;
    let neg = tape.mul(neg, log_1p)?;
    let neg = tape.mul_scalar(neg, 1.0 - cfg.alpha);

    let sum = tape.add(pos, neg)?;
    let mean = tape.mean_all(sum);
    Ok(tape.mul_scalar(mean, -1.0))
}

/// Soft dice: 1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε).
pub fn dice_loss(
    tape: &mut Tape,
    pred: TensorId,
    gt: TensorId,
    cfg: &LossConfig,
) -> Result<TensorId> {
    check_same_shape(tape, pred, gt, "dice_loss")?;
    let inter = tape.mul(pred, gt)?;
    let inter = tape.sum_all(inter);
    let num = tape.mul_scalar(inter, 2.0);
    let num = tape.add_scalar(num, cfg.eps_dice);
    let sp = tape.sum_all(pred);
    let sg = tape.sum_all(gt);
    let denom = tape.add(sp, sg)?;
    let denom = tape.add_scalar(denom, cfg.eps_dice);
    let ratio = tape.div(num, denom)?;
    let neg = tape.mul_scalar(ratio, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Focal + dice, unweighted.
pub fn total_loss(
    tape: &mut Tape,
    pred: TensorId,
    gt: TensorId,
    cfg: &LossConfig,
) -> Result<TensorId> {
    let f = focal_loss(tape, pred, gt, cfg)?;
    let d = dice_loss(tape, pred, gt, cfg)?;
    tape.add(f, d)
}
