//! The assembled grounding network: encoder wiring, the four supported
//! module configurations, per-sample forward context, and prediction.

use crate::data::{replicate_image_to_clip, Sample, VideoClip};
use crate::decoder::{decode_affordance, DecoderParams};
use crate::encoders::{
    build_point_plan, encode_image, encode_points, encode_video, EncoderConfig,
    ImageEncoderParams, PointEncoderParams, PointPlan, VideoEncoderParams,
};
use crate::error::{Result, VagError};
use crate::geometry::project_points;
use crate::mcam::{
    inject_2d_to_3d, mcam_forward, temporal_fuse, upsample_to_points, BnMode, McamParams,
    UpsampleParams,
};
use crate::params::{Bound, ParamSet};
use crate::stfm::{stfm_cross_attend, stfm_fuse, StfmParams};
use crate::tensor::{Tape, Tensor, TensorId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The frame an image-only run replicates: the first (pre-contact) frame.
pub const IMG_MODE_FRAME: usize = 0;

/// Supported module configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// Projection + contextual alignment + spatio-temporal fusion.
    Full,
    /// 2D branch and injection kept, decoder fed F_3d directly.
    NoStfm,
    /// Contextual attention dropped: the projection feature is fused with
    /// the 3D branch directly (temporal compression and injection kept).
    NoMcam,
    /// No 2D branch at all: upsampled point features go straight to the
    /// spatio-temporal fusion.
    StfmOnly,
}

impl Ablation {
    /// Maps the three module switches onto the supported rows.
    pub fn from_flags(use_mcam: bool, use_stfm: bool, use_proj: bool) -> Result<Ablation> {
        match (use_mcam, use_stfm, use_proj) {
            (true, true, true) => Ok(Ablation::Full),
            (true, false, true) => Ok(Ablation::NoStfm),
            (false, true, true) => Ok(Ablation::NoMcam),
            (false, true, false) => Ok(Ablation::StfmOnly),
            _ => Err(VagError::unsupported(
                "ablate_wiring",
                format!(
                    "mcam={use_mcam} stfm={use_stfm} proj={use_proj}; valid rows: \
                     full | no-stfm (mcam+proj) | no-mcam (stfm+proj) | stfm-only (no proj)"
                ),
            )),
        }
    }

    pub fn uses_proj(&self) -> bool {
        !matches!(self, Ablation::StfmOnly)
    }

    pub fn uses_mcam(&self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoStfm)
    }

    pub fn uses_stfm(&self) -> bool {
        !matches!(self, Ablation::NoStfm)
    }

    pub fn code(&self) -> u8 {
        match self {
            Ablation::Full => 0,
            Ablation::NoStfm => 1,
            Ablation::NoMcam => 2,
            Ablation::StfmOnly => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Ablation> {
        match code {
            0 => Ok(Ablation::Full),
            1 => Ok(Ablation::NoStfm),
            2 => Ok(Ablation::NoMcam),
            3 => Ok(Ablation::StfmOnly),
            _ => Err(VagError::unsupported("Ablation", format!("code {code}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters and wiring for one configuration.
#[derive(Debug, Clone)]
pub struct VagNet {
    pub cfg: EncoderConfig,
    pub ablation: Ablation,
    pub params: ParamSet,
    pub init_seed: u64,
    point: PointEncoderParams,
    image: Option<ImageEncoderParams>,
    video: VideoEncoderParams,
    mcam: Option<McamParams>,
    upsample: UpsampleParams,
    stfm: Option<StfmParams>,
    decoder: DecoderParams,
}

impl VagNet {
    pub fn new(cfg: EncoderConfig, ablation: Ablation, seed: u64) -> Result<VagNet> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = PointEncoderParams::new(&mut ps, &mut rng, &cfg);
        let image = ablation
            .uses_proj()
            .then(|| ImageEncoderParams::new(&mut ps, &mut rng, &cfg));
        let video = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        // every projection row needs the temporal compression and the
        // injection matrices, even with contextual attention dropped
        let mcam = ablation
            .uses_proj()
            .then(|| McamParams::new(&mut ps, &mut rng, &cfg));
        let upsample = UpsampleParams::new(&mut ps, &mut rng, &cfg);
        let stfm = ablation
            .uses_stfm()
            .then(|| StfmParams::new(&mut ps, &mut rng, &cfg));
        let decoder = DecoderParams::new(&mut ps, &mut rng, &cfg);
        Ok(VagNet {
            cfg,
            ablation,
            params: ps,
            init_seed: seed,
            point,
            image,
            video,
            mcam,
            upsample,
            stfm,
            decoder,
        })
    }

    pub fn video_params(&self) -> &VideoEncoderParams {
        &self.video
    }
}

/// Precomputed per-sample inputs: grouping plan, rendered projection, the
/// clip actually consumed, and optionally the frozen video feature.
#[derive(Debug, Clone)]
pub struct SampleCtx {
    pub plan: PointPlan,
    pub image: Option<Tensor>,
    pub clip: VideoClip,
    pub f_v_cached: Option<Tensor>,
}

impl SampleCtx {
    /// Builds the context; with `img_mode` the clip is T copies of the
    /// pre-contact frame. When the video encoder is frozen its output is
    /// computed once here and reused as a constant.
    pub fn build(model: &VagNet, sample: &Sample, img_mode: bool) -> Result<SampleCtx> {
        let plan = build_point_plan(&sample.points.coords, &model.cfg)?;
        let image = if model.ablation.uses_proj() {
            let proj = project_points(&sample.points, &sample.viewpoint)?;
            Some(proj.pixels)
        } else {
            None
        };
        let clip = if img_mode {
            let frame: Vec<f64> = sample
                .clip
                .frame(IMG_MODE_FRAME)
                .iter()
                .map(|&v| v as f64)
                .collect();
            let img = Tensor::new(frame, &[1, sample.clip.h, sample.clip.w])?;
            replicate_image_to_clip(&img, sample.clip.t)?
        } else {
            sample.clip.clone()
        };
        let f_v_cached = if model.cfg.video_frozen {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, false);
            let f_v = encode_video(&mut tape, &clip, &model.video, &bound, &model.cfg)?;
            Some(tape.detach(f_v))
        } else {
            None
        };
        Ok(SampleCtx {
            plan,
            image,
            clip,
            f_v_cached,
        })
    }
}

/// Handles to every named activation of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub f_p: TensorId,
    pub f_i: Option<TensorId>,
    pub f_v: TensorId,
    pub f_2d: Option<TensorId>,
    pub f_a: Option<TensorId>,
    pub f_3d: TensorId,
    pub f_pv: Option<TensorId>,
    pub f_f: TensorId,
    pub a_pred: TensorId,
    pub ctx_attn: Vec<TensorId>,
    pub inject_attn: Option<TensorId>,
    pub stfm_attn: Vec<TensorId>,
    pub bn_node: Option<TensorId>,
}

impl VagNet {
    /// Runs the configured graph on one sample context.
    pub fn forward(&self, tape: &mut Tape, ctx: &SampleCtx, mode: Mode) -> Result<ForwardTrace> {
        let bound = self.params.bind(tape, mode == Mode::Train);
        self.forward_bound(tape, &bound, ctx, mode)
    }

    /// Forward with an externally created binding (gradient checks insert
    /// the parameter leaves themselves).
    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        ctx: &SampleCtx,
        mode: Mode,
    ) -> Result<ForwardTrace> {
        let cfg = &self.cfg;
        let (f_p, _state) = encode_points(tape, &ctx.plan, &self.point, bound, cfg)?;

        let f_v = match &ctx.f_v_cached {
            Some(t) => tape.leaf(t, false),
            None => encode_video(tape, &ctx.clip, &self.video, bound, cfg)?,
        };

        let f_i = match (&self.image, &ctx.image) {
            (Some(ip), Some(img)) => Some(encode_image(tape, img, ip, bound, cfg)?),
            (None, _) => None,
            (Some(_), None) => {
                return Err(VagError::contract(
                    "forward",
                    "projection image required for this configuration",
                ))
            }
        };

        let bn_mode = |ps: &ParamSet, mp: &McamParams| -> (Vec<f64>, Vec<f64>) {
            (
                ps.get(mp.bn_mean).data.clone(),
                ps.get(mp.bn_var).data.clone(),
            )
        };

        let mut f_2d = None;
        let mut f_a = None;
        let mut ctx_attn = Vec::new();
        let mut inject_attn = None;
        let mut bn_node = None;

        let f_3d = match self.ablation {
            Ablation::Full | Ablation::NoStfm => {
                let mp = self.mcam.as_ref().expect("mcam params present");
                let (rm, rv) = bn_mode(&self.params, mp);
                let bn = match mode {
                    Mode::Train => BnMode::Train,
                    Mode::Eval => BnMode::Eval { mean: &rm, var: &rv },
                };
                let out = mcam_forward(
                    tape,
                    f_p,
                    f_i.expect("projection feature present"),
                    f_v,
                    &ctx.plan.up,
                    mp,
                    &self.upsample,
                    bound,
                    cfg,
                    bn,
                )?;
                f_2d = Some(out.f_2d);
                f_a = Some(out.f_a);
                ctx_attn = out.ctx_attn;
                inject_attn = Some(out.inject_attn);
                bn_node = Some(out.bn_node);
                out.f_3d
            }
            Ablation::NoMcam => {
                // contextual attention replaced by the identity on F_i
                let mp = self.mcam.as_ref().expect("mcam params present");
                let (rm, rv) = bn_mode(&self.params, mp);
                let bn = match mode {
                    Mode::Train => BnMode::Train,
                    Mode::Eval => BnMode::Eval { mean: &rm, var: &rv },
                };
                let fi = f_i.expect("projection feature present");
                let frames = vec![fi; cfg.t];
                let (fused, bnode) = temporal_fuse(tape, &frames, mp, bound, cfg, bn)?;
                let (fa, attn) = inject_2d_to_3d(tape, f_p, fused, mp, bound, cfg)?;
                f_2d = Some(fused);
                f_a = Some(fa);
                inject_attn = Some(attn);
                bn_node = Some(bnode);
                upsample_to_points(tape, fa, &ctx.plan.up, &self.upsample, bound)?
            }
            Ablation::StfmOnly => {
                upsample_to_points(tape, f_p, &ctx.plan.up, &self.upsample, bound)?
            }
        };

        let mut f_pv = None;
        let mut stfm_attn = Vec::new();
        let f_f = if let Some(sp) = &self.stfm {
            let out = stfm_cross_attend(tape, f_3d, f_v, sp, bound, cfg)?;
            f_pv = Some(out.f_pv);
            stfm_attn = out.attn;
            stfm_fuse(tape, f_3d, out.f_pv, sp, bound)?
        } else {
            f_3d
        };

        let a_pred = decode_affordance(tape, f_f, &self.decoder, bound)?;

        Ok(ForwardTrace {
            f_p,
            f_i,
            f_v,
            f_2d,
            f_a,
            f_3d,
            f_pv,
            f_f,
            a_pred,
            ctx_attn,
            inject_attn,
            stfm_attn,
            bn_node,
        })
    }

    /// Eval-mode per-point scores for one sample.
    pub fn predict(&self, ctx: &SampleCtx) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, ctx, Mode::Eval)?;
        Ok(tape.data(trace.a_pred).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sample, Affordance, Category};

    fn sample() -> Sample {
        generate_sample(Category::Barbell, Affordance::Lift, 7).unwrap()
    }

    #[test]
    fn desk_shape_contract_binds_all_symbols() {
        let model = VagNet::new(EncoderConfig::desk(), Ablation::Full, 1).unwrap();
        let s = sample();
        let ctx = SampleCtx::build(&model, &s, false).unwrap();
        let mut tape = Tape::new();
        let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
        assert_eq!(tape.shape(tr.f_p), &[32, 64]);
        assert_eq!(tape.shape(tr.f_i.unwrap()), &[32, 8, 8]);
        assert_eq!(tape.shape(tr.f_v), &[8, 32, 8, 8]);
        assert_eq!(tape.shape(tr.f_2d.unwrap()), &[32, 8, 8]);
        assert_eq!(tape.shape(tr.f_3d), &[32, 512]);
        assert_eq!(tape.shape(tr.f_pv.unwrap()), &[32, 512]);
        assert_eq!(tape.shape(tr.f_f), &[32, 512]);
        assert_eq!(tape.shape(tr.a_pred), &[512, 1]);
    }

    #[test]
    fn invalid_ablation_combinations_are_rejected() {
        assert!(Ablation::from_flags(true, true, false).is_err());
        assert!(Ablation::from_flags(false, false, true).is_err());
        assert!(Ablation::from_flags(false, false, false).is_err());
        assert_eq!(Ablation::from_flags(true, true, true).unwrap(), Ablation::Full);
    }

    #[test]
    fn no_stfm_feeds_f3d_to_decoder_bitwise() {
        let model = VagNet::new(EncoderConfig::desk(), Ablation::NoStfm, 2).unwrap();
        let s = sample();
        let ctx = SampleCtx::build(&model, &s, false).unwrap();
        let mut tape = Tape::new();
        let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
        assert!(tr.f_pv.is_none());
        assert_eq!(tr.f_f, tr.f_3d);
    }

    #[test]
    fn stfm_only_has_zero_mcam_parameters() {
        let model = VagNet::new(EncoderConfig::desk(), Ablation::StfmOnly, 3).unwrap();
        assert!(model
            .params
            .entries()
            .iter()
            .all(|e| !e.name.starts_with("mcam.") && !e.name.starts_with("image.")));
        let s = sample();
        let ctx = SampleCtx::build(&model, &s, false).unwrap();
        assert!(ctx.image.is_none());
        let mut tape = Tape::new();
        let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
        assert!(tr.f_i.is_none() && tr.f_2d.is_none());
        assert_eq!(tape.shape(tr.a_pred), &[512, 1]);
    }

    #[test]
    fn replicated_clip_equals_img_mode_bitwise() {
        let model = VagNet::new(EncoderConfig::desk(), Ablation::Full, 4).unwrap();
        let s = sample();
        // img-mode context replicates the pre-contact frame internally
        let ctx_img = SampleCtx::build(&model, &s, true).unwrap();
        // manually replace the video with T copies of the same frame
        let mut s2 = s.clone();
        s2.clip = s.clip.replicate_frame(IMG_MODE_FRAME);
        let ctx_manual = SampleCtx::build(&model, &s2, false).unwrap();

        let mut t1 = Tape::new();
        let tr1 = model.forward(&mut t1, &ctx_img, Mode::Train).unwrap();
        let mut t2 = Tape::new();
        let tr2 = model.forward(&mut t2, &ctx_manual, Mode::Train).unwrap();
        let a = t1.data(tr1.f_3d);
        let b = t2.data(tr2.f_3d);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn eval_mode_uses_running_stats_and_is_deterministic() {
        let model = VagNet::new(EncoderConfig::desk(), Ablation::Full, 5).unwrap();
        let s = sample();
        let ctx = SampleCtx::build(&model, &s, false).unwrap();
        let p1 = model.predict(&ctx).unwrap();
        let p2 = model.predict(&ctx).unwrap();
        assert!(p1.iter().zip(&p2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(p1.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p1.len(), 512);
    }
}
