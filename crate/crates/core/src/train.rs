//! Training loop: AdamW with decoupled weight decay, cosine learning-rate
//! schedule, batch-parallel forward/backward, per-epoch evaluation and
//! checkpointing.

use crate::data::{Dataset, Sample, SplitTag};
use crate::decoder::{total_loss, LossConfig};
use crate::encoders::EncoderConfig;
use crate::error::{Result, VagError};
use crate::mcam::BN_MOMENTUM;
use crate::metrics::{evaluate_split, EvalResult};
use crate::model::{Ablation, Mode, SampleCtx, VagNet};
use crate::params::ParamSet;
use crate::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub img_mode: bool,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 12,
            lr0: 1e-4,
            weight_decay: 1e-6,
            seed: 0,
            ablation: Ablation::Full,
            img_mode: false,
            loss: LossConfig::default(),
            encoder: EncoderConfig::desk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr0 <= 0.0 || self.weight_decay < 0.0 {
            return Err(VagError::unsupported(
                "TrainConfig",
                format!(
                    "epochs={} batch={} lr0={} wd={}",
                    self.epochs, self.batch_size, self.lr0, self.weight_decay
                ),
            ));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }
}

/// Optimizer moments, aligned with the parameter set.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(ps: &ParamSet) -> AdamState {
        AdamState {
            m: ps.entries().iter().map(|e| vec![0.0; e.tensor.data.len()]).collect(),
            v: ps.entries().iter().map(|e| vec![0.0; e.tensor.data.len()]).collect(),
            step: 0,
        }
    }
}

/// One AdamW step over every trainable parameter with a gradient:
/// decoupled weight decay first (p -= lr·wd·p), then the bias-corrected
/// moment update. A NaN gradient aborts, naming the parameter.
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for (i, entry) in params.entries_mut().iter_mut().enumerate() {
        if !entry.trainable {
            continue;
        }
        let Some(g) = grads.get(i).and_then(|g| g.as_ref()) else {
            continue;
        };
        if g.iter().any(|v| v.is_nan()) {
            return Err(VagError::NanGrad {
                param: entry.name.clone(),
                step: t,
            });
        }
        let p = &mut entry.tensor.data;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            p[j] -= lr * weight_decay * p[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g[j];
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// lr0 · ½(1 + cos(π·step/total_steps)), no warmup.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval: Option<EvalResult>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

pub struct TrainOutput {
    pub model: VagNet,
    pub adam: AdamState,
    pub log: TrainLog,
}

struct MemberResult {
    loss: f64,
    grads: Vec<Option<Vec<f64>>>,
    bn_obs: Option<(Vec<f64>, Vec<f64>)>,
}

fn forward_backward(
    model: &VagNet,
    ctx: &SampleCtx,
    sample: &Sample,
    loss_cfg: &LossConfig,
) -> Result<MemberResult> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let trace = model.forward_bound(&mut tape, &bound, ctx, Mode::Train)?;
    let gt = sample
        .points
        .heatmap
        .as_ref()
        .ok_or_else(|| VagError::contract("train", "sample lacks heatmap"))?;
    let gt_id = tape.constant(gt.clone(), &[gt.len(), 1])?;
    let loss = total_loss(&mut tape, trace.a_pred, gt_id, loss_cfg)?;
    let loss_val = tape.data(loss)[0];
    tape.backward(loss)?;
    let grads: Vec<Option<Vec<f64>>> = bound
        .ids()
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()))
        .collect();
    let bn_obs = trace.bn_node.and_then(|n| {
        tape.batchnorm_observed(n)
            .map(|(m, v)| (m.to_vec(), v.to_vec()))
    });
    Ok(MemberResult {
        loss: loss_val,
        grads,
        bn_obs,
    })
}

/// Mini-batch training over the seen-train split with per-epoch seen-eval
/// metrics; checkpoints written after every epoch when a path is given.
/// A NaN loss aborts with the last completed epoch's checkpoint on disk.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, ckpt_path: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    let train_samples: Vec<&Sample> = dataset.split(SplitTag::SeenTrain);
    if train_samples.is_empty() {
        return Err(VagError::contract("train", "seen-train split is empty"));
    }
    let eval_samples: Vec<&Sample> = dataset.split(SplitTag::SeenEval);

    let mut model = VagNet::new(cfg.encoder.clone(), cfg.ablation, cfg.seed)?;
    let mut adam = AdamState::for_params(&model.params);
    let mut log = TrainLog::default();

    // per-sample contexts are pure and reusable across epochs
    let train_ctx: Vec<SampleCtx> = train_samples
        .par_iter()
        .map(|s| SampleCtx::build(&model, s, cfg.img_mode))
        .collect::<Result<_>>()?;
    let eval_ctx: Vec<SampleCtx> = eval_samples
        .par_iter()
        .map(|s| SampleCtx::build(&model, s, cfg.img_mode))
        .collect::<Result<_>>()?;

    let steps_per_epoch = train_samples.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut global_step = 0u64;
    let mut last_good_epoch: i64 = -1;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(global_step, total_steps, cfg.lr0);
            let results: Vec<MemberResult> = batch
                .par_iter()
                .map(|&i| forward_backward(&model, &train_ctx[i], train_samples[i], &cfg.loss))
                .collect::<Result<_>>()?;

            let batch_loss: f64 = results.iter().map(|r| r.loss).sum::<f64>() / batch.len() as f64;
            if batch_loss.is_nan() {
                return Err(VagError::NanLoss {
                    step: global_step,
                    last_good_epoch,
                });
            }
            epoch_loss += batch_loss;

            // average member gradients in batch order
            let n_params = model.params.len();
            let mut avg: Vec<Option<Vec<f64>>> = vec![None; n_params];
            for r in &results {
                for (slot, g) in avg.iter_mut().zip(&r.grads) {
                    if let Some(g) = g {
                        match slot {
                            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                            None => *slot = Some(g.clone()),
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for slot in avg.iter_mut().flatten() {
                slot.iter_mut().for_each(|v| *v *= scale);
            }

            adamw_step(&mut model.params, &avg, &mut adam, lr, cfg.weight_decay)?;

            // fold batch-norm observations into running stats, member order
            if let Some(mp) = mcam_params(&model) {
                for r in &results {
                    if let Some((mean, var)) = &r.bn_obs {
                        let rm = &mut model.params.get_mut(mp.0).data;
                        rm.iter_mut()
                            .zip(mean)
                            .for_each(|(r, m)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
                        let rv = &mut model.params.get_mut(mp.1).data;
                        rv.iter_mut()
                            .zip(var)
                            .for_each(|(r, v)| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v);
                    }
                }
            }
            global_step += 1;
        }

        let eval = if eval_samples.is_empty() {
            None
        } else {
            let mut it = eval_ctx.iter();
            Some(evaluate_split(
                |_s| model.predict(it.next().expect("ctx per sample")),
                &eval_samples,
            )?)
        };

        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / steps_per_epoch as f64,
            eval,
        });
        if let Some(path) = ckpt_path {
            let ckpt = Checkpoint::from_model(cfg, &model, &adam);
            ckpt.write(path)?;
        }
        last_good_epoch = epoch as i64;
    }

    Ok(TrainOutput { model, adam, log })
}

fn mcam_params(model: &VagNet) -> Option<(crate::params::ParamId, crate::params::ParamId)> {
    // running stats are registered right after gamma/beta; look them up by name
    let names: Vec<&str> = model.params.entries().iter().map(|e| e.name.as_str()).collect();
    let rm = names.iter().position(|n| *n == "mcam.fuse.bn_mean")?;
    let rv = names.iter().position(|n| *n == "mcam.fuse.bn_var")?;
    Some((crate::params::ParamId(rm), crate::params::ParamId(rv)))
}

/// Eval-mode predictions for a list of samples (contexts built on demand).
pub fn predict_split(model: &VagNet, samples: &[&Sample], img_mode: bool) -> Result<EvalResult> {
    let ctxs: Vec<SampleCtx> = samples
        .par_iter()
        .map(|s| SampleCtx::build(model, s, img_mode))
        .collect::<Result<_>>()?;
    let mut it = ctxs.iter();
    evaluate_split(|_s| model.predict(it.next().expect("ctx per sample")), samples)
}

/// Writes per-point "x,y,z,score" lines for external visualization.
pub fn export_heatmap(model: &VagNet, sample: &Sample, img_mode: bool, path: &Path) -> Result<()> {
    let ctx = SampleCtx::build(model, sample, img_mode)?;
    let scores = model.predict(&ctx)?;
    let mut out = String::with_capacity(scores.len() * 64);
    for (p, s) in sample.points.coords.iter().zip(&scores) {
        out.push_str(&format!("{:.8e},{:.8e},{:.8e},{:.8e}\n", p[0], p[1], p[2], s));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ── checkpoint ───────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 4] = b"VAGC";
const CKPT_VERSION: u32 = 1;

/// Named tensors (parameters + running stats), optimizer moments, step
/// counter and a numeric config snapshot; binary records after a "VAGC"
/// magic and a version word.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(cfg: &TrainConfig, model: &VagNet, adam: &AdamState) -> Checkpoint {
        let mut records = Vec::new();
        records.push((
            "__config".to_string(),
            Tensor::new(config_vector(cfg, model), &[17]).expect("config vector"),
        ));
        records.push((
            "__step".to_string(),
            Tensor::new(vec![adam.step as f64], &[1]).expect("step"),
        ));
        for e in model.params.entries() {
            records.push((e.name.clone(), e.tensor.clone()));
        }
        for (i, e) in model.params.entries().iter().enumerate() {
            if e.trainable {
                records.push((
                    format!("m.{}", e.name),
                    Tensor::new(adam.m[i].clone(), &e.tensor.shape).expect("moment"),
                ));
                records.push((
                    format!("v.{}", e.name),
                    Tensor::new(adam.v[i].clone(), &e.tensor.shape).expect("moment"),
                ));
            }
        }
        Checkpoint { records }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model (and optimizer state) this checkpoint captured.
    pub fn restore(&self) -> Result<(TrainConfig, VagNet, AdamState)> {
        let cfgv = self
            .get("__config")
            .ok_or_else(|| VagError::contract("Checkpoint", "missing __config record"))?;
        let (cfg, enc) = config_from_vector(&cfgv.data)?;
        let mut model = VagNet::new(enc, cfg.ablation, cfg.seed)?;
        let step = self
            .get("__step")
            .ok_or_else(|| VagError::contract("Checkpoint", "missing __step record"))?
            .data[0] as u64;
        let mut adam = AdamState::for_params(&model.params);
        adam.step = step;
        for i in 0..model.params.len() {
            let (name, trainable) = {
                let e = &model.params.entries()[i];
                (e.name.clone(), e.trainable)
            };
            let rec = self
                .get(&name)
                .ok_or_else(|| VagError::contract("Checkpoint", format!("missing record '{name}'")))?;
            model.params.set_data(&name, rec.data.clone())?;
            if trainable {
                if let Some(m) = self.get(&format!("m.{name}")) {
                    adam.m[i] = m.data.clone();
                }
                if let Some(v) = self.get(&format!("v.{name}")) {
                    adam.v[i] = v.data.clone();
                }
            }
        }
        Ok((cfg, model, adam))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (name, t) in &self.records {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let mut file = std::fs::File::open(path)?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
            if *off + n > buf.len() {
                return Err(VagError::Truncated {
                    detail: format!("checkpoint ends at {} needing {} more bytes", buf.len(), n),
                });
            }
            let r = *off..*off + n;
            *off += n;
            Ok(r)
        };
        let magic = take(&mut off, 4)?;
        if &buf[magic.clone()] != CKPT_MAGIC {
            return Err(VagError::Format {
                offset: 0,
                detail: format!("bad magic {:?}, expected {CKPT_MAGIC:?}", &buf[magic]),
            });
        }
        let vr = take(&mut off, 4)?;
        let version = u32::from_le_bytes(buf[vr].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(VagError::Format {
                offset: 4,
                detail: format!("unsupported checkpoint version {version}"),
            });
        }
        let nr = take(&mut off, 4)?;
        let n_records = u32::from_le_bytes(buf[nr].try_into().unwrap()) as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let lr = take(&mut off, 4)?;
            let name_len = u32::from_le_bytes(buf[lr].try_into().unwrap()) as usize;
            let nr = take(&mut off, name_len)?;
            let name = String::from_utf8(buf[nr].to_vec()).map_err(|_| VagError::Format {
                offset: off as u64,
                detail: "non-utf8 record name".to_string(),
            })?;
            let rr = take(&mut off, 4)?;
            let rank = u32::from_le_bytes(buf[rr].try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let dr = take(&mut off, 4)?;
                shape.push(u32::from_le_bytes(buf[dr].try_into().unwrap()) as usize);
            }
            let numel: usize = shape.iter().product();
            let pr = take(&mut off, numel * 8)?;
            let data: Vec<f64> = buf[pr]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            records.push((name, Tensor::new(data, &shape)?));
        }
        if off != buf.len() {
            return Err(VagError::Format {
                offset: off as u64,
                detail: format!("{} trailing bytes after records", buf.len() - off),
            });
        }
        Ok(Checkpoint { records })
    }
}

fn config_vector(cfg: &TrainConfig, model: &VagNet) -> Vec<f64> {
    let e = &cfg.encoder;
    vec![
        cfg.epochs as f64,
        cfg.batch_size as f64,
        cfg.lr0,
        cfg.weight_decay,
        cfg.seed as f64,
        model.ablation.code() as f64,
        cfg.img_mode as u8 as f64,
        e.c as f64,
        e.n as f64,
        e.n_p as f64,
        e.t as f64,
        e.h as f64,
        e.w as f64,
        e.h_feat as f64,
        e.w_feat as f64,
        e.heads as f64,
        e.video_frozen as u8 as f64,
    ]
}

fn config_from_vector(v: &[f64]) -> Result<(TrainConfig, EncoderConfig)> {
    if v.len() != 17 {
        return Err(VagError::contract(
            "Checkpoint",
            format!("config vector has {} fields, expected 17", v.len()),
        ));
    }
    let enc = EncoderConfig {
        c: v[7] as usize,
        n: v[8] as usize,
        n_p: v[9] as usize,
        t: v[10] as usize,
        h: v[11] as usize,
        w: v[12] as usize,
        h_feat: v[13] as usize,
        w_feat: v[14] as usize,
        heads: v[15] as usize,
        video_frozen: v[16] != 0.0,
    };
    let cfg = TrainConfig {
        epochs: v[0] as usize,
        batch_size: v[1] as usize,
        lr0: v[2],
        weight_decay: v[3],
        seed: v[4] as u64,
        ablation: Ablation::from_code(v[5] as u8)?,
        img_mode: v[6] != 0.0,
        loss: LossConfig::default(),
        encoder: enc.clone(),
    };
    Ok((cfg, enc))
}

/// Writes the log as text: one "epoch,loss,auc,aiou,sim,mae" row per epoch.
pub fn write_log(log: &TrainLog, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for e in &log.epochs {
        match &e.eval {
            Some(ev) => writeln!(f, "{},{:.9},{}", e.epoch, e.train_loss, ev.to_csv_row())?,
            None => writeln!(f, "{},{:.9}", e.epoch, e.train_loss)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_splits, SplitSpec};

    #[test]
    fn adamw_zero_grad_is_fixed_point_without_decay() {
        let mut ps = ParamSet::new();
        ps.register("p", Tensor::new(vec![1.5, -2.0], &[2]).unwrap(), true);
        let mut adam = AdamState::for_params(&ps);
        let grads = vec![Some(vec![0.0, 0.0])];
        adamw_step(&mut ps, &grads, &mut adam, 0.1, 0.0).unwrap();
        assert_eq!(ps.entries()[0].tensor.data, vec![1.5, -2.0]);
    }

    #[test]
    fn adamw_zero_grad_with_decay_shrinks_multiplicatively() {
        let mut ps = ParamSet::new();
        ps.register("p", Tensor::new(vec![2.0], &[1]).unwrap(), true);
        let mut adam = AdamState::for_params(&ps);
        let grads = vec![Some(vec![0.0])];
        adamw_step(&mut ps, &grads, &mut adam, 0.5, 0.1).unwrap();
        assert!((ps.entries()[0].tensor.data[0] - 2.0 * (1.0 - 0.05)).abs() <= 1e-15);
    }

    #[test]
    fn adamw_drives_quadratic_to_zero() {
        let mut ps = ParamSet::new();
        ps.register("x", Tensor::new(vec![1.0], &[1]).unwrap(), true);
        let mut adam = AdamState::for_params(&ps);
        for _ in 0..200 {
            let x = ps.entries()[0].tensor.data[0];
            let grads = vec![Some(vec![2.0 * x])];
            adamw_step(&mut ps, &grads, &mut adam, 0.1, 0.0).unwrap();
        }
        assert!(ps.entries()[0].tensor.data[0].abs() < 0.01);
    }

    #[test]
    fn adamw_nan_gradient_names_parameter() {
        let mut ps = ParamSet::new();
        ps.register("layer.w", Tensor::new(vec![1.0], &[1]).unwrap(), true);
        let mut adam = AdamState::for_params(&ps);
        let grads = vec![Some(vec![f64::NAN])];
        match adamw_step(&mut ps, &grads, &mut adam, 0.1, 0.0) {
            Err(VagError::NanGrad { param, .. }) => assert_eq!(param, "layer.w"),
            other => panic!("expected NanGrad, got {other:?}"),
        }
    }

    #[test]
    fn cosine_boundaries_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-4), 1e-4);
        assert!(cosine_lr(100, 100, 1e-4).abs() < 1e-19);
        assert!((cosine_lr(50, 100, 1e-4) - 5e-5).abs() < 1e-19);
    }

    fn tiny_dataset(n_per_pair: usize) -> Dataset {
        use crate::data::{Affordance, Category};
        let spec = SplitSpec {
            seen_pairs: vec![(Category::Hammer, Affordance::Beat)],
            unseen_pairs: vec![],
            seed: 0,
        };
        let (samples, _) = make_splits(&spec, n_per_pair).unwrap();
        Dataset { samples }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            lr0: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_runs_and_logs_every_epoch() {
        let ds = tiny_dataset(2);
        let out = train(&tiny_cfg(), &ds, None).unwrap();
        assert_eq!(out.log.epochs.len(), 2);
        assert!(out.log.epochs.iter().all(|e| e.train_loss.is_finite()));
        assert!(out.log.epochs.iter().all(|e| e.eval.is_some()));
    }

    #[test]
    fn fixed_seed_training_is_bitwise_reproducible() {
        let ds = tiny_dataset(2);
        let a = train(&tiny_cfg(), &ds, None).unwrap();
        let b = train(&tiny_cfg(), &ds, None).unwrap();
        let la = a.log.losses();
        let lb = b.log.losses();
        assert_eq!(la.len(), lb.len());
        assert!(la.iter().zip(&lb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn frozen_video_parameters_never_move() {
        let ds = tiny_dataset(2);
        let cfg = tiny_cfg();
        let before = VagNet::new(cfg.encoder.clone(), cfg.ablation, cfg.seed).unwrap();
        let out = train(&cfg, &ds, None).unwrap();
        for (b, a) in before
            .params
            .entries()
            .iter()
            .zip(out.model.params.entries())
        {
            if b.name.starts_with("video.") {
                assert_eq!(b.tensor.data, a.tensor.data, "{} moved", b.name);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_reproduces_predictions_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(2);
        let cfg = tiny_cfg();
        let path = dir.path().join("model.vagc");
        let out = train(&cfg, &ds, Some(&path)).unwrap();

        let ckpt = Checkpoint::read(&path).unwrap();
        let (_cfg2, model2, adam2) = ckpt.restore().unwrap();
        assert_eq!(adam2.step, out.adam.step);

        let s = &ds.samples[0];
        let ctx1 = SampleCtx::build(&out.model, s, false).unwrap();
        let ctx2 = SampleCtx::build(&model2, s, false).unwrap();
        let p1 = out.model.predict(&ctx1).unwrap();
        let p2 = model2.predict(&ctx2).unwrap();
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));

        // file-level roundtrip is bitwise too
        let path2 = dir.path().join("model2.vagc");
        ckpt.write(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn checkpoint_bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vagc");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(
            Checkpoint::read(&path),
            Err(VagError::Format { .. })
        ));
    }

    #[test]
    fn export_writes_one_line_per_point_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(1);
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_cfg()
        };
        let out = train(&cfg, &ds, None).unwrap();
        let path = dir.path().join("heat.csv");
        export_heatmap(&out.model, &ds.samples[0], false, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), ds.samples[0].points.len());
        for line in lines {
            let score: f64 = line.split(',').nth(3).unwrap().parse().unwrap();
            assert!(score > 0.0 && score < 1.0);
        }
    }
}
