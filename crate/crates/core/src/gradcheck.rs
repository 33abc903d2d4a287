//! Central finite-difference gradient checks.
//!
//! The checker evaluates a scalar-valued graph builder twice per coordinate
//! (x ± h) and compares the difference quotient against the tape gradient.
//! It never reuses the autodiff path it is checking.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, TensorId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Builds a scalar loss from leaf tensors inserted on the given tape.
pub type LossBuilder<'a> = dyn Fn(&mut Tape, &[TensorId]) -> Result<TensorId> + 'a;

#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Relative error with an absolute floor on the denominator, so
/// near-zero gradient pairs compare on an absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn eval_loss(inputs: &[Tensor], build: &LossBuilder) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t, false)).collect();
    let loss = build(&mut tape, &ids)?;
    Ok(tape.data(loss)[0])
}

/// Checks d(loss)/d(input) for every input tensor against central
/// differences, sampling at most `max_coords_per_input` coordinates (all of
/// them when the tensor is smaller).
pub fn fd_check(
    inputs: &[Tensor],
    max_coords_per_input: usize,
    seed: u64,
    build: &LossBuilder,
) -> Result<FdReport> {
    // Autodiff gradients.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.leaf(t, true)).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut checked = 0usize;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let n = input.data.len();
        let coords: Vec<usize> = if n <= max_coords_per_input {
            (0..n).collect()
        } else {
            (0..max_coords_per_input)
                .map(|_| rng.gen_range(0..n))
                .collect()
        };
        for &ci in &coords {
            let orig = work[ti].data[ci];
            work[ti].data[ci] = orig + FD_STEP;
            let f_plus = eval_loss(&work, build)?;
            work[ti].data[ci] = orig - FD_STEP;
            let f_minus = eval_loss(&work, build)?;
            work[ti].data[ci] = orig;
            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            let ad = if grads[ti].is_empty() { 0.0 } else { grads[ti][ci] };
            max_err = max_err.max(rel_err(ad, fd));
            checked += 1;
        }
    }
    Ok(FdReport {
        max_rel_err: max_err,
        coords_checked: checked,
    })
}

/// Random tensor with entries in [-2, 2].
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::new(data, shape).expect("valid shape")
}

/// Random tensor keeping every entry at least `margin` away from the given
/// kink locations, so finite differences do not straddle a non-smooth point.
pub fn rand_tensor_avoiding(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    kinks: &[f64],
    margin: f64,
) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let v: f64 = rng.gen_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() > margin) {
            data.push(v);
        }
    }
    Tensor::new(data, shape).expect("valid shape")
}

/// Random tensor with entries in (lo, hi).
pub fn rand_tensor_in(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(data, shape).expect("valid shape")
}

/// A fixed random projection to a scalar: sum(w ⊙ x) with deterministic w.
pub fn project_to_scalar(tape: &mut Tape, x: TensorId, seed: u64) -> Result<TensorId> {
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel: usize = shape.iter().product();
    let w: Vec<f64> = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wid = tape.constant(w, &shape)?;
    let prod = tape.mul(x, wid)?;
    Ok(tape.sum_all(prod))
}

// ── the per-operation check suite ────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub coords_checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn run_check(
    name: &str,
    tol: f64,
    inputs: &[Tensor],
    max_coords: usize,
    build: &LossBuilder,
) -> Result<CheckReport> {
    let report = fd_check(inputs, max_coords, 07, build)?;
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: report.max_rel_err,
        tol,
        coords_checked: report.coords_checked,
    })
}

/// Gradient checks for every differentiable tensor primitive. Module-level
/// and end-to-end checks live in [`crate::model::gradcheck_suite`].
pub fn tensor_op_checks() -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    let tol = 1e-4;

    let a = rand_tensor(&mut rng, &[5, 7]);
    let b = rand_tensor(&mut rng, &[7, 3]);
    out.push(run_check("tensor.matmul", 1e-6, &[a, b], 64, &|t, ids| {
        let c = t.matmul(ids[0], ids[1])?;
        project_to_scalar(t, c, 1)
    })?);

    let x = rand_tensor(&mut rng, &[4, 6]);
    out.push(run_check("tensor.softmax", 1e-5, &[x], 64, &|t, ids| {
        let y = t.softmax(ids[0], 1)?;
        project_to_scalar(t, y, 2)
    })?);

    let x = rand_tensor(&mut rng, &[3, 4, 5]);
    out.push(run_check("tensor.softmax_scaled", 1e-5, &[x], 64, &|t, ids| {
        let y = t.softmax_scaled(ids[0], 1, 0.37)?;
        project_to_scalar(t, y, 23)
    })?);

    let a = rand_tensor(&mut rng, &[6, 4]);
    let b = rand_tensor(&mut rng, &[6, 5]);
    out.push(run_check("tensor.matmul_at", 1e-6, &[a, b], 64, &|t, ids| {
        let y = t.matmul_at(ids[0], ids[1])?;
        project_to_scalar(t, y, 24)
    })?);

    let a = rand_tensor(&mut rng, &[4, 6]);
    let b = rand_tensor(&mut rng, &[5, 6]);
    out.push(run_check("tensor.matmul_bt", 1e-6, &[a, b], 64, &|t, ids| {
        let y = t.matmul_bt(ids[0], ids[1])?;
        project_to_scalar(t, y, 25)
    })?);

    let a = rand_tensor(&mut rng, &[3, 5]);
    let b = rand_tensor(&mut rng, &[3, 1]);
    out.push(run_check("tensor.add_broadcast", tol, &[a, b], 64, &|t, ids| {
        let y = t.add(ids[0], ids[1])?;
        project_to_scalar(t, y, 3)
    })?);

    let a = rand_tensor(&mut rng, &[3, 5]);
    let b = rand_tensor(&mut rng, &[3, 5]);
    out.push(run_check("tensor.sub", tol, &[a, b], 64, &|t, ids| {
        let y = t.sub(ids[0], ids[1])?;
        project_to_scalar(t, y, 4)
    })?);

    let a = rand_tensor(&mut rng, &[4, 4]);
    let b = rand_tensor(&mut rng, &[1, 4]);
    out.push(run_check("tensor.mul_broadcast", tol, &[a, b], 64, &|t, ids| {
        let y = t.mul(ids[0], ids[1])?;
        project_to_scalar(t, y, 5)
    })?);

    let a = rand_tensor(&mut rng, &[4, 4]);
    let b = rand_tensor_avoiding(&mut rng, &[4, 1], &[0.0], 0.3);
    out.push(run_check("tensor.div_broadcast", tol, &[a, b], 64, &|t, ids| {
        let y = t.div(ids[0], ids[1])?;
        project_to_scalar(t, y, 6)
    })?);

    let x = rand_tensor_avoiding(&mut rng, &[6, 6], &[0.0], 0.05);
    out.push(run_check("tensor.relu", tol, &[x], 64, &|t, ids| {
        let y = t.relu(ids[0]);
        project_to_scalar(t, y, 7)
    })?);

    let x = rand_tensor(&mut rng, &[6, 6]);
    out.push(run_check("tensor.sigmoid", tol, &[x], 64, &|t, ids| {
        let y = t.sigmoid(ids[0]);
        project_to_scalar(t, y, 8)
    })?);

    let x = rand_tensor_in(&mut rng, &[5, 5], 0.05, 2.0);
    out.push(run_check("tensor.log", tol, &[x], 64, &|t, ids| {
        let y = t.log(ids[0]);
        project_to_scalar(t, y, 9)
    })?);

    let x = rand_tensor_in(&mut rng, &[5, 5], 0.05, 2.0);
    out.push(run_check("tensor.pow_scalar", tol, &[x], 64, &|t, ids| {
        let y = t.pow_scalar(ids[0], 2.0);
        project_to_scalar(t, y, 10)
    })?);

    let x = rand_tensor_in(&mut rng, &[5, 5], 0.05, 2.0);
    out.push(run_check("tensor.sqrt", tol, &[x], 64, &|t, ids| {
        let y = t.sqrt(ids[0]);
        project_to_scalar(t, y, 11)
    })?);

    let x = rand_tensor(&mut rng, &[5, 5]);
    out.push(run_check("tensor.exp", tol, &[x], 64, &|t, ids| {
        let y = t.exp(ids[0]);
        project_to_scalar(t, y, 12)
    })?);

    let x = rand_tensor_avoiding(&mut rng, &[5, 5], &[-1.5, 1.5], 0.05);
    out.push(run_check("tensor.clamp", tol, &[x], 64, &|t, ids| {
        let y = t.clamp(ids[0], -1.5, 1.5);
        project_to_scalar(t, y, 13)
    })?);

    let x = rand_tensor(&mut rng, &[4, 7]);
    out.push(run_check("tensor.sum_mean", tol, &[x], 64, &|t, ids| {
        let s = t.sum_all(ids[0]);
        let m = t.mean_all(ids[0]);
        let sa = t.sum_axis(ids[0], 1, true)?;
        let saw = project_to_scalar(t, sa, 14)?;
        let sm = t.add(s, m)?;
        t.add(sm, saw)
    })?);

    // Keep lane maxima separated so h = 1e-5 cannot flip an argmax.
    let x = {
        let mut t = rand_tensor(&mut rng, &[4, 6]);
        for lane in 0..4 {
            for j in 0..6 {
                t.data[lane * 6 + j] += (j as f64) * 0.2;
            }
        }
        t
    };
    out.push(run_check("tensor.max_axis", tol, &[x], 64, &|t, ids| {
        let y = t.max_axis(ids[0], 1)?;
        project_to_scalar(t, y, 15)
    })?);

    let x = rand_tensor(&mut rng, &[5, 4]);
    out.push(run_check("tensor.transpose_reshape", tol, &[x], 64, &|t, ids| {
        let y = t.transpose(ids[0])?;
        let z = t.reshape(y, &[2, 10])?;
        project_to_scalar(t, z, 16)
    })?);

    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[2, 4]);
    out.push(run_check("tensor.concat_slice", tol, &[a, b], 64, &|t, ids| {
        let y = t.concat(&[ids[0], ids[1]], 0)?;
        let z = t.slice(y, 0, 1, 3)?;
        project_to_scalar(t, z, 17)
    })?);

    let x = rand_tensor(&mut rng, &[2, 4, 4]);
    out.push(run_check("tensor.unfold_fold", 1e-5, &[x], 96, &|t, ids| {
        let rows = t.unfold(ids[0], 3, 1, 1)?;
        let back = t.fold(rows, 4, 4, true)?;
        project_to_scalar(t, back, 18)
    })?);

    let x = rand_tensor(&mut rng, &[3, 16]);
    let gamma = rand_tensor_in(&mut rng, &[3], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[3]);
    out.push(run_check("tensor.batchnorm_train", tol, &[x, gamma, beta], 64, &|t, ids| {
        let y = t.batchnorm_train(ids[0], ids[1], ids[2], 1e-5)?;
        project_to_scalar(t, y, 19)
    })?);

    let x = rand_tensor(&mut rng, &[3, 8]);
    let gamma = rand_tensor_in(&mut rng, &[3], 0.5, 1.5);
    let beta = rand_tensor(&mut rng, &[3]);
    out.push(run_check("tensor.batchnorm_eval", tol, &[x, gamma, beta], 64, &|t, ids| {
        let rm = [0.1, -0.2, 0.05];
        let rv = [1.1, 0.9, 1.3];
        let y = t.batchnorm_eval(ids[0], ids[1], ids[2], &rm, &rv, 1e-5)?;
        project_to_scalar(t, y, 20)
    })?);

    let x = rand_tensor(&mut rng, &[3, 6]);
    out.push(run_check("tensor.gather_cols", tol, &[x], 64, &|t, ids| {
        let y = t.gather_cols(ids[0], &[5, 0, 0, 3, 2])?;
        project_to_scalar(t, y, 21)
    })?);

    let x = rand_tensor(&mut rng, &[3, 6]);
    out.push(run_check("tensor.gather_mix", tol, &[x], 64, &|t, ids| {
        let idx = [0usize, 1, 2, 3, 4, 5, 1, 3, 0];
        let w = [0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.4, 0.4, 0.2];
        let y = t.gather_mix(ids[0], &idx, &w, 3)?;
        project_to_scalar(t, y, 22)
    })?);

    Ok(out)
}

// ── module-level and end-to-end checks ───────────────────────────────

use crate::data::{generate_sample, Affordance, Category};
use crate::decoder::{decode_affordance, total_loss, DecoderParams, LossConfig};
use crate::encoders::{
    build_point_plan, encode_image, encode_points, encode_video, EncoderConfig,
    ImageEncoderParams, PointEncoderParams, VideoEncoderParams,
};
use crate::geometry::knn_interpolate;
use crate::mcam::{inject_2d_to_3d, mcam_forward, temporal_fuse, BnMode, McamParams, UpsampleParams};
use crate::model::{Ablation, Mode, SampleCtx, VagNet};
use crate::params::{Bound, ParamSet};
use crate::stfm::{stfm_cross_attend, stfm_fuse, StfmParams};

fn small_cfg() -> EncoderConfig {
    EncoderConfig {
        c: 8,
        n: 48,
        n_p: 8,
        t: 3,
        h: 16,
        w: 16,
        h_feat: 4,
        w_feat: 4,
        heads: 2,
        video_frozen: false,
    }
}

fn param_tensors(ps: &ParamSet) -> Vec<Tensor> {
    ps.entries().iter().map(|e| e.tensor.clone()).collect()
}

fn random_coords(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect()
}

/// Gradient checks for every module's differentiable path.
pub fn module_checks() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    // geometry: inverse-distance interpolation
    {
        let src = random_coords(6, &mut rng);
        let dst = random_coords(5, &mut rng);
        let feats = rand_tensor(&mut rng, &[4, 6]);
        out.push(run_check("geometry.knn_interpolate", 1e-5, &[feats], 24, &|t, ids| {
            let y = knn_interpolate(t, &src, ids[0], &dst, 3)?;
            project_to_scalar(t, y, 201)
        })?);
    }

    // point encoder
    {
        let coords = random_coords(cfg.n, &mut rng);
        let plan = build_point_plan(&coords, &cfg)?;
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(102);
        let pe = PointEncoderParams::new(&mut ps, &mut prng, &cfg);
        let cfg2 = cfg.clone();
        out.push(run_check("encoders.point", 1e-3, &param_tensors(&ps), 8, &move |t, ids| {
            let bound = Bound::from_ids(ids.to_vec());
            let (f_p, _) = encode_points(t, &plan, &pe, &bound, &cfg2)?;
            project_to_scalar(t, f_p, 202)
        })?);
    }

    // image encoder
    {
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(103);
        let ie = ImageEncoderParams::new(&mut ps, &mut prng, &cfg);
        let img = rand_tensor_in(&mut rng, &[1, cfg.h, cfg.w], 0.0, 1.0);
        let cfg2 = cfg.clone();
        out.push(run_check("encoders.image", 1e-4, &param_tensors(&ps), 8, &move |t, ids| {
            let bound = Bound::from_ids(ids.to_vec());
            let f_i = encode_image(t, &img, &ie, &bound, &cfg2)?;
            project_to_scalar(t, f_i, 203)
        })?);
    }

    // video encoder (tiny grid to keep the sweep quick)
    {
        let vcfg = EncoderConfig {
            c: 4,
            n: 16,
            n_p: 4,
            t: 2,
            h: 8,
            w: 8,
            h_feat: 2,
            w_feat: 2,
            heads: 2,
            video_frozen: false,
        };
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(104);
        let ve = VideoEncoderParams::new(&mut ps, &mut prng, &vcfg);
        let clip = crate::data::VideoClip {
            t: vcfg.t,
            c: 1,
            h: vcfg.h,
            w: vcfg.w,
            data: (0..vcfg.t * vcfg.h * vcfg.w)
                .map(|i| ((i * 37 % 101) as f32) / 101.0)
                .collect(),
        };
        out.push(run_check("encoders.video", 1e-4, &param_tensors(&ps), 5, &move |t, ids| {
            let bound = Bound::from_ids(ids.to_vec());
            let f_v = encode_video(t, &clip, &ve, &bound, &vcfg)?;
            project_to_scalar(t, f_v, 204)
        })?);
    }

    // contextual alignment
    {
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(105);
        let mp = McamParams::new(&mut ps, &mut prng, &cfg);
        let n_params = ps.len();
        let mut inputs = param_tensors(&ps);
        for _ in 0..cfg.t {
            inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]));
        }
        let (cfg2, mp2) = (cfg.clone(), mp.clone());
        out.push(run_check("mcam.temporal_fuse", 1e-4, &inputs, 6, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let frames = ids[n_params..].to_vec();
            let (f_2d, _) = temporal_fuse(t, &frames, &mp2, &bound, &cfg2, BnMode::Train)?;
            project_to_scalar(t, f_2d, 205)
        })?);

        let mut inputs = param_tensors(&ps);
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.n_p]));
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]));
        let (cfg2, mp2) = (cfg.clone(), mp.clone());
        out.push(run_check("mcam.inject", 1e-4, &inputs, 6, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let (f_a, _) = inject_2d_to_3d(t, ids[n_params], ids[n_params + 1], &mp2, &bound, &cfg2)?;
            project_to_scalar(t, f_a, 206)
        })?);

        // full module, gradient reaching the projection feature
        let mut prng2 = ChaCha8Rng::seed_from_u64(106);
        let up = UpsampleParams::new(&mut ps, &mut prng2, &cfg);
        let n_params = ps.len();
        let src = random_coords(cfg.n_p, &mut rng);
        let dst = random_coords(cfg.n, &mut rng);
        let plan = crate::geometry::knn_plan(&src, &dst, 3)?;
        let f_p = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
        let f_v = rand_tensor(&mut rng, &[cfg.t, cfg.c, cfg.h_feat, cfg.w_feat]);
        let mut inputs = param_tensors(&ps);
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]));
        let cfg2 = cfg.clone();
        out.push(run_check("mcam.forward", 1e-3, &inputs, 6, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let fp = t.leaf(&f_p, false);
            let fv = t.leaf(&f_v, false);
            let o = mcam_forward(t, fp, ids[n_params], fv, &plan, &mp, &up, &bound, &cfg2, BnMode::Train)?;
            project_to_scalar(t, o.f_3d, 207)
        })?);
    }

    // spatio-temporal fusion
    {
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(107);
        let sp = StfmParams::new(&mut ps, &mut prng, &cfg);
        let n_params = ps.len();
        let mut inputs = param_tensors(&ps);
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.n]));
        inputs.push(rand_tensor(&mut rng, &[cfg.t, cfg.c, cfg.h_feat, cfg.w_feat]));
        let (cfg2, sp2) = (cfg.clone(), sp.clone());
        out.push(run_check("stfm.cross_attend", 1e-3, &inputs, 6, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let o = stfm_cross_attend(t, ids[n_params], ids[n_params + 1], &sp2, &bound, &cfg2)?;
            project_to_scalar(t, o.f_pv, 208)
        })?);

        let mut inputs = param_tensors(&ps);
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.n]));
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.n]));
        out.push(run_check("stfm.fuse", 1e-4, &inputs, 6, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let f_f = stfm_fuse(t, ids[n_params], ids[n_params + 1], &sp, &bound)?;
            project_to_scalar(t, f_f, 209)
        })?);
    }

    // decoder head and losses
    {
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(108);
        let dp = DecoderParams::new(&mut ps, &mut prng, &cfg);
        let n_params = ps.len();
        let mut inputs = param_tensors(&ps);
        inputs.push(rand_tensor(&mut rng, &[cfg.c, cfg.n]));
        out.push(run_check("decoder.head", 1e-4, &inputs, 8, &move |t, ids| {
            let bound = Bound::from_ids(ids[..n_params].to_vec());
            let pred = decode_affordance(t, ids[n_params], &dp, &bound)?;
            project_to_scalar(t, pred, 210)
        })?);

        let pred = rand_tensor_in(&mut rng, &[16, 1], 0.05, 0.95);
        let gt = rand_tensor_in(&mut rng, &[16, 1], 0.0, 1.0);
        out.push(run_check("loss.total", 1e-4, &[pred, gt.clone()], 16, &move |t, ids| {
            total_loss(t, ids[0], ids[1], &LossConfig::default())
        })?);
    }

    Ok(out)
}

/// Full-pipeline check on the desk configuration with the video encoder
/// unfrozen: autodiff gradients of the training loss versus central
/// differences on `n_coords` parameter coordinates sampled across all
/// trainable tensors.
pub fn end_to_end_check(n_coords: usize) -> Result<CheckReport> {
    let mut cfg = EncoderConfig::desk();
    cfg.video_frozen = false;
    let mut model = VagNet::new(cfg, Ablation::Full, 2024)?;
    let sample = generate_sample(Category::Barbell, Affordance::Lift, 5)?;
    let ctx = SampleCtx::build(&model, &sample, false)?;
    let gt = sample.points.heatmap.clone().expect("heatmap");
    let loss_cfg = LossConfig::default();

    let eval_loss = |model: &VagNet| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, false);
        let trace = model.forward_bound(&mut tape, &bound, &ctx, Mode::Train)?;
        let gt_id = tape.constant(gt.clone(), &[gt.len(), 1])?;
        let loss = total_loss(&mut tape, trace.a_pred, gt_id, &loss_cfg)?;
        Ok(tape.data(loss)[0])
    };

    // autodiff gradients
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let trace = model.forward_bound(&mut tape, &bound, &ctx, Mode::Train)?;
    let gt_id = tape.constant(gt.clone(), &[gt.len(), 1])?;
    let loss = total_loss(&mut tape, trace.a_pred, gt_id, &loss_cfg)?;
    tape.backward(loss)?;
    let grads: Vec<Option<Vec<f64>>> = bound
        .ids()
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()))
        .collect();
    drop(tape);

    // sample coordinates uniformly over all trainable parameter entries
    let trainable: Vec<usize> = model
        .params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.trainable)
        .map(|(i, _)| i)
        .collect();
    let sizes: Vec<usize> = trainable
        .iter()
        .map(|&i| model.params.entries()[i].tensor.data.len())
        .collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut max_err: f64 = 0.0;
    for _ in 0..n_coords {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0usize;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let entry = trainable[which];
        let orig = model.params.entries()[entry].tensor.data[flat];
        model.params.entries_mut()[entry].tensor.data[flat] = orig + FD_STEP;
        let fp = eval_loss(&model)?;
        model.params.entries_mut()[entry].tensor.data[flat] = orig - FD_STEP;
        let fm = eval_loss(&model)?;
        model.params.entries_mut()[entry].tensor.data[flat] = orig;
        let fd = (fp - fm) / (2.0 * FD_STEP);
        let ad = grads[entry].as_ref().map(|g| g[flat]).unwrap_or(0.0);
        max_err = max_err.max(rel_err(ad, fd));
    }
    Ok(CheckReport {
        name: "model.end_to_end".to_string(),
        max_rel_err: max_err,
        tol: 1e-3,
        coords_checked: n_coords,
    })
}

/// Every gradient check: tensor primitives, module paths, and the full
/// graph; `filter` keeps checks whose name contains the substring.
pub fn full_suite(filter: Option<&str>) -> Result<Vec<CheckReport>> {
    let mut all = tensor_op_checks()?;
    all.extend(module_checks()?);
    all.push(end_to_end_check(20)?);
    if let Some(f) = filter {
        all.retain(|r| r.name.contains(f));
    }
    Ok(all)
}
