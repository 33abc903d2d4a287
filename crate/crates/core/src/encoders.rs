//! Desk-scale modality encoders: a two-level set-abstraction point
//! encoder, a patch/residual image encoder, and a divided space-time
//! attention video encoder with learned temporal position embeddings.

use crate::data::VideoClip;
use crate::error::{Result, VagError};
use crate::geometry::{ball_query, farthest_point_sample, knn_plan, KnnPlan, Vec3};
use crate::params::{init_bias, init_linear, Bound, ParamId, ParamSet};
use crate::tensor::{Tape, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

/// Shapes and switches shared by every module in the pipeline.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    /// Feature channels C.
    pub c: usize,
    /// Input points N.
    pub n: usize,
    /// Downsampled points N_p.
    pub n_p: usize,
    /// Clip frames T.
    pub t: usize,
    /// Frame height/width.
    pub h: usize,
    pub w: usize,
    /// Feature grid H'/W'.
    pub h_feat: usize,
    pub w_feat: usize,
    /// Attention heads in the video encoder.
    pub heads: usize,
    /// When set, the video encoder's parameters receive no gradient.
    pub video_frozen: bool,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            c: 32,
            n: 512,
            n_p: 64,
            t: 8,
            h: 32,
            w: 32,
            h_feat: 8,
            w_feat: 8,
            heads: 4,
            video_frozen: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c % self.heads != 0 {
            return Err(VagError::unsupported(
                "EncoderConfig",
                format!("C={} not divisible by heads={}", self.c, self.heads),
            ));
        }
        if self.h != 4 * self.h_feat || self.w != 4 * self.w_feat {
            return Err(VagError::unsupported(
                "EncoderConfig",
                format!(
                    "frame {}x{} must be 4x the feature grid {}x{}",
                    self.h, self.w, self.h_feat, self.w_feat
                ),
            ));
        }
        if self.n_p > self.n {
            return Err(VagError::unsupported(
                "EncoderConfig",
                format!("N_p={} exceeds N={}", self.n_p, self.n),
            ));
        }
        Ok(())
    }

    /// Spatial token count L = H'·W'.
    pub fn l(&self) -> usize {
        self.h_feat * self.w_feat
    }

    /// Mid-level point count of the first set-abstraction stage.
    pub fn n_mid(&self) -> usize {
        (self.n / 2).max(self.n_p)
    }
}

pub const SA1_RADIUS: f64 = 0.2;
pub const SA2_RADIUS: f64 = 0.4;
pub const SA_NEIGHBORS: usize = 16;
pub const FP_NEIGHBORS: usize = 3;

// ── point encoder ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PointEncoderParams {
    pub sa1_w: ParamId,
    pub sa1_b: ParamId,
    pub sa2_w: ParamId,
    pub sa2_b: ParamId,
}

impl PointEncoderParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        PointEncoderParams {
            sa1_w: ps.register("point.sa1.w", init_linear(rng, c, 3, 3), true),
            sa1_b: ps.register("point.sa1.b", init_bias(rng, c, 3), true),
            sa2_w: ps.register("point.sa2.w", init_linear(rng, c, c + 3, c + 3), true),
            sa2_b: ps.register("point.sa2.b", init_bias(rng, c, c + 3), true),
        }
    }
}

/// Grouping indices and relative coordinates, a pure function of the
/// cloud; reusable across epochs.
#[derive(Debug, Clone)]
pub struct PointPlan {
    pub l0_coords: Vec<Vec3>,
    pub l1_coords: Vec<Vec3>,
    pub l2_coords: Vec<Vec3>,
    l1_rel: Tensor,          // 3×(S1·K)
    l2_rel: Tensor,          // 3×(S2·K)
    l2_gather: Vec<usize>,   // S2·K indices into level-1 features
    pub up: KnnPlan,         // N_p level -> all N points
}

pub fn build_point_plan(coords: &[Vec3], cfg: &EncoderConfig) -> Result<PointPlan> {
    if coords.len() != cfg.n {
        return Err(VagError::contract(
            "encode_points",
            format!("cloud has {} points, config expects {}", coords.len(), cfg.n),
        ));
    }
    let pc = crate::geometry::PointCloud::new(coords.to_vec(), None)?;
    let s1 = cfg.n_mid();
    let l1_centers = farthest_point_sample(&pc, s1, 0)?;
    let l1_groups = ball_query(&pc, &l1_centers, SA1_RADIUS, SA_NEIGHBORS)?;
    let l1_coords: Vec<Vec3> = l1_centers.iter().map(|&i| coords[i]).collect();
    let mut l1_rel = Vec::with_capacity(3 * s1 * SA_NEIGHBORS);
    for d in 0..3 {
        for (ci, group) in l1_groups.iter().enumerate() {
            let center = l1_coords[ci];
            for &m in group {
                l1_rel.push(coords[m][d] - center[d]);
            }
        }
    }

    let pc1 = crate::geometry::PointCloud::new(l1_coords.clone(), None)?;
    let l2_centers = farthest_point_sample(&pc1, cfg.n_p, 0)?;
    let l2_groups = ball_query(&pc1, &l2_centers, SA2_RADIUS, SA_NEIGHBORS)?;
    let l2_coords: Vec<Vec3> = l2_centers.iter().map(|&i| l1_coords[i]).collect();
    let mut l2_rel = Vec::with_capacity(3 * cfg.n_p * SA_NEIGHBORS);
    for d in 0..3 {
        for (ci, group) in l2_groups.iter().enumerate() {
            let center = l2_coords[ci];
            for &m in group {
                l2_rel.push(l1_coords[m][d] - center[d]);
            }
        }
    }
    let l2_gather: Vec<usize> = l2_groups.iter().flatten().copied().collect();

    let up = knn_plan(&l2_coords, coords, FP_NEIGHBORS)?;

    Ok(PointPlan {
        l0_coords: coords.to_vec(),
        l1_coords,
        l2_coords,
        l1_rel: Tensor::new(l1_rel, &[3, s1 * SA_NEIGHBORS])?,
        l2_rel: Tensor::new(l2_rel, &[3, cfg.n_p * SA_NEIGHBORS])?,
        l2_gather,
        up,
    })
}

/// Per-level snapshots retained for decoder-side interpolation.
#[derive(Debug, Clone)]
pub struct PointEncoderState {
    pub l0_coords: Vec<Vec3>,
    pub l2_coords: Vec<Vec3>,
    pub f1: TensorId,
    pub f_p: TensorId,
}

/// Two set-abstraction levels (N → N/2 → N_p): group by ball query around
/// farthest-point centers, shared linear + relu on center-relative
/// features, max-pool per group.
pub fn encode_points(
    tape: &mut Tape,
    plan: &PointPlan,
    p: &PointEncoderParams,
    bound: &Bound,
    cfg: &EncoderConfig,
) -> Result<(TensorId, PointEncoderState)> {
    let s1 = plan.l1_coords.len();
    let k = SA_NEIGHBORS;
    let c = cfg.c;

    let rel1 = tape.leaf(&plan.l1_rel, false);
    let h1 = tape.matmul(bound.id(p.sa1_w), rel1)?;
    let h1 = tape.add(h1, bound.id(p.sa1_b))?;
    let h1 = tape.relu(h1);
    let h1 = tape.reshape(h1, &[c, s1, k])?;
    let f1 = tape.max_axis(h1, 2)?; // C×S1

    let gathered = tape.gather_cols(f1, &plan.l2_gather)?; // C×(S2·K)
    let rel2 = tape.leaf(&plan.l2_rel, false);
    let cat = tape.concat(&[rel2, gathered], 0)?; // (3+C)×(S2·K)
    let h2 = tape.matmul(bound.id(p.sa2_w), cat)?;
    let h2 = tape.add(h2, bound.id(p.sa2_b))?;
    let h2 = tape.relu(h2);
    let h2 = tape.reshape(h2, &[c, cfg.n_p, k])?;
    let f_p = tape.max_axis(h2, 2)?; // C×N_p

    Ok((
        f_p,
        PointEncoderState {
            l0_coords: plan.l0_coords.clone(),
            l2_coords: plan.l2_coords.clone(),
            f1,
            f_p,
        },
    ))
}

// ── image encoder ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImageEncoderParams {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    pub block_w: [ParamId; 2],
    pub block_b: [ParamId; 2],
}

impl ImageEncoderParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        ImageEncoderParams {
            patch_w: ps.register("image.patch.w", init_linear(rng, c, 16, 16), true),
            patch_b: ps.register("image.patch.b", init_bias(rng, c, 16), true),
            block_w: [
                ps.register("image.block1.w", init_linear(rng, c, c, c), true),
                ps.register("image.block2.w", init_linear(rng, c, c, c), true),
            ],
            block_b: [
                ps.register("image.block1.b", init_bias(rng, c, c), true),
                ps.register("image.block2.b", init_bias(rng, c, c), true),
            ],
        }
    }
}

/// Non-overlapping 4×4 patches of a 1×H×W image as a 16×L matrix
/// (patch-local raster order per row, patches in raster order).
pub fn patchify(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (hp, wp) = (h / 4, w / 4);
    let l = hp * wp;
    let mut out = vec![0.0; 16 * l];
    for py in 0..hp {
        for px in 0..wp {
            let patch = py * wp + px;
            for dy in 0..4 {
                for dx in 0..4 {
                    out[(dy * 4 + dx) * l + patch] = img[(py * 4 + dy) * w + (px * 4 + dx)];
                }
            }
        }
    }
    out
}

/// Patch embedding plus two residual channel-mixing blocks; output C×H'×W'.
pub fn encode_image(
    tape: &mut Tape,
    img: &Tensor,
    p: &ImageEncoderParams,
    bound: &Bound,
    cfg: &EncoderConfig,
) -> Result<TensorId> {
    if img.shape != [1, cfg.h, cfg.w] {
        return Err(VagError::contract(
            "encode_image",
            format!("expected [1, {}, {}], got {:?}", cfg.h, cfg.w, img.shape),
        ));
    }
    let l = cfg.l();
    let patches = tape.constant(patchify(&img.data, cfg.h, cfg.w), &[16, l])?;
    let x = image_stem(tape, patches, p, bound)?;
    tape.reshape(x, &[cfg.c, cfg.h_feat, cfg.w_feat])
}

fn image_stem(
    tape: &mut Tape,
    patches: TensorId,
    p: &ImageEncoderParams,
    bound: &Bound,
) -> Result<TensorId> {
    let x = tape.matmul(bound.id(p.patch_w), patches)?;
    let mut x = tape.add(x, bound.id(p.patch_b))?;
    for i in 0..2 {
        let h = tape.matmul(bound.id(p.block_w[i]), x)?;
        let h = tape.add(h, bound.id(p.block_b[i]))?;
        let h = tape.relu(h);
        x = tape.add(x, h)?;
    }
    Ok(x)
}

// ── video encoder ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AttnProj {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
}

impl AttnProj {
    fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, prefix: &str, c: usize, trainable: bool) -> Self {
        AttnProj {
            q: ps.register(format!("{prefix}.q"), init_linear(rng, c, c, c), trainable),
            k: ps.register(format!("{prefix}.k"), init_linear(rng, c, c, c), trainable),
            v: ps.register(format!("{prefix}.v"), init_linear(rng, c, c, c), trainable),
            o: ps.register(format!("{prefix}.o"), init_linear(rng, c, c, c), trainable),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VideoBlockParams {
    pub temporal: AttnProj,
    pub spatial: AttnProj,
}

#[derive(Debug, Clone)]
pub struct VideoEncoderParams {
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    /// Learned temporal position embedding, C×T; added to the tokens
    /// feeding the temporal queries and keys only, so identical frames
    /// still produce identical outputs.
    pub pos_t: ParamId,
    pub blocks: Vec<VideoBlockParams>,
}

impl VideoEncoderParams {
    pub fn new(ps: &mut ParamSet, rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.c;
        let trainable = !cfg.video_frozen;
        VideoEncoderParams {
            patch_w: ps.register("video.patch.w", init_linear(rng, c, 16, 16), trainable),
            patch_b: ps.register("video.patch.b", init_bias(rng, c, 16), trainable),
            pos_t: ps.register("video.pos_t", init_linear(rng, c, cfg.t, c), trainable),
            blocks: (0..2)
                .map(|i| VideoBlockParams {
                    temporal: AttnProj::new(ps, rng, &format!("video.block{i}.t"), c, trainable),
                    spatial: AttnProj::new(ps, rng, &format!("video.block{i}.s"), c, trainable),
                })
                .collect(),
        }
    }
}

/// Multi-head scaled dot-product self-attention over the columns of
/// q/k/v (C×M token matrices); returns C×M.
fn multihead_attend(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    heads: usize,
) -> Result<TensorId> {
    let c = tape.shape(q)[0];
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 0, h * dh, dh)?;
        let kh = tape.slice(k, 0, h * dh, dh)?;
        let vh = tape.slice(v, 0, h * dh, dh)?;
        let scores = tape.matmul_at(qh, kh)?; // M×M
        let attn = tape.softmax_scaled(scores, 1, scale)?;
        outs.push(tape.matmul_bt(vh, attn)?); // dh×M
    }
    tape.concat(&outs, 0)
}

/// Divided space-time attention over per-frame patch embeddings. Output is
/// the stacked T×C×H'×W' feature map.
pub fn encode_video(
    tape: &mut Tape,
    clip: &VideoClip,
    p: &VideoEncoderParams,
    bound: &Bound,
    cfg: &EncoderConfig,
) -> Result<TensorId> {
    if (clip.t, clip.c, clip.h, clip.w) != (cfg.t, 1, cfg.h, cfg.w) {
        return Err(VagError::contract(
            "encode_video",
            format!(
                "expected {}×1×{}×{} clip, got {}×{}×{}×{}",
                cfg.t, cfg.h, cfg.w, clip.t, clip.c, clip.h, clip.w
            ),
        ));
    }
    let (t_n, l, c) = (cfg.t, cfg.l(), cfg.c);

    // per-frame patch embedding, laid out as one C×(T·L) token matrix
    let mut per_frame = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let frame: Vec<f64> = clip.frame(t).iter().map(|&v| v as f64).collect();
        let patches = tape.constant(patchify(&frame, cfg.h, cfg.w), &[16, l])?;
        let x = tape.matmul(bound.id(p.patch_w), patches)?;
        let x = tape.add(x, bound.id(p.patch_b))?;
        per_frame.push(x);
    }
    let mut x = tape.concat(&per_frame, 1)?; // column t*L + s

    // frame index of each column, for broadcasting pos_t over sites
    let frame_of_col: Vec<usize> = (0..t_n * l).map(|i| i / l).collect();
    // site-major permutation and its inverse
    let site_cols: Vec<Vec<usize>> = (0..l)
        .map(|s| (0..t_n).map(|t| t * l + s).collect())
        .collect();
    let mut unshuffle = vec![0usize; t_n * l];
    for (s, cols) in site_cols.iter().enumerate() {
        for (t, &col) in cols.iter().enumerate() {
            unshuffle[col] = s * t_n + t;
        }
    }

    for block in &p.blocks {
        // temporal attention across the T tokens at each spatial site
        let pos = tape.gather_cols(bound.id(p.pos_t), &frame_of_col)?;
        let xp = tape.add(x, pos)?;
        let q = tape.matmul(bound.id(block.temporal.q), xp)?;
        let k = tape.matmul(bound.id(block.temporal.k), xp)?;
        let v = tape.matmul(bound.id(block.temporal.v), x)?;
        let mut site_outs = Vec::with_capacity(l);
        for cols in &site_cols {
            let qs = tape.gather_cols(q, cols)?;
            let ks = tape.gather_cols(k, cols)?;
            let vs = tape.gather_cols(v, cols)?;
            site_outs.push(multihead_attend(tape, qs, ks, vs, cfg.heads)?);
        }
        let stacked = tape.concat(&site_outs, 1)?; // column s*T + t
        let reordered = tape.gather_cols(stacked, &unshuffle)?;
        let out = tape.matmul(bound.id(block.temporal.o), reordered)?;
        x = tape.add(x, out)?;

        // spatial attention across the L tokens within each frame
        let q = tape.matmul(bound.id(block.spatial.q), x)?;
        let k = tape.matmul(bound.id(block.spatial.k), x)?;
        let v = tape.matmul(bound.id(block.spatial.v), x)?;
        let mut frame_outs = Vec::with_capacity(t_n);
        for t in 0..t_n {
            let qf = tape.slice(q, 1, t * l, l)?;
            let kf = tape.slice(k, 1, t * l, l)?;
            let vf = tape.slice(v, 1, t * l, l)?;
            frame_outs.push(multihead_attend(tape, qf, kf, vf, cfg.heads)?);
        }
        let stacked = tape.concat(&frame_outs, 1)?; // already t*L + s order
        let out = tape.matmul(bound.id(block.spatial.o), stacked)?;
        x = tape.add(x, out)?;
    }

    // C×(T·L) -> T×C×H'×W'
    let mut frames = Vec::with_capacity(t_n);
    for t in 0..t_n {
        let f = tape.slice(x, 1, t * l, l)?;
        frames.push(tape.reshape(f, &[1, c, cfg.h_feat, cfg.w_feat])?);
    }
    tape.concat(&frames, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, project_to_scalar};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            c: 8,
            n: 64,
            n_p: 8,
            t: 4,
            h: 16,
            w: 16,
            h_feat: 4,
            w_feat: 4,
            heads: 2,
            video_frozen: false,
        }
    }

    fn random_cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
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

    #[test]
    fn point_encoder_desk_shape_contract() {
        let cfg = EncoderConfig::desk();
        let coords = random_cloud(cfg.n, 1);
        let plan = build_point_plan(&coords, &cfg).unwrap();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pe = PointEncoderParams::new(&mut ps, &mut rng, &cfg);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let (f_p, state) = encode_points(&mut tape, &plan, &pe, &bound, &cfg).unwrap();
        assert_eq!(tape.shape(f_p), &[32, 64]);
        assert_eq!(state.l0_coords.len(), 512);
        assert_eq!(state.l2_coords.len(), 64);
    }

    #[test]
    fn point_encoder_wrong_count_is_contract_error() {
        let cfg = EncoderConfig::desk();
        let coords = random_cloud(100, 1);
        assert!(matches!(
            build_point_plan(&coords, &cfg),
            Err(VagError::Contract { .. })
        ));
    }

    #[test]
    fn point_encoder_is_translation_invariant() {
        let cfg = small_cfg();
        let coords = random_cloud(cfg.n, 2);
        let shifted: Vec<Vec3> = coords
            .iter()
            .map(|p| [p[0] + 0.5, p[1] - 0.25, p[2] + 1.0])
            .collect();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pe = PointEncoderParams::new(&mut ps, &mut rng, &cfg);

        let run = |coords: &[Vec3]| {
            let plan = build_point_plan(coords, &cfg).unwrap();
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape, false);
            let (f_p, _) = encode_points(&mut tape, &plan, &pe, &bound, &cfg).unwrap();
            tape.data(f_p).to_vec()
        };
        let a = run(&coords);
        let b = run(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn point_encoder_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let coords = random_cloud(cfg.n, 4);
        let plan = build_point_plan(&coords, &cfg).unwrap();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pe = PointEncoderParams::new(&mut ps, &mut rng, &cfg);
        let inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let rep = fd_check(&inputs, 10, 6, &|t, ids| {
            // rebuild a ParamSet binding from the provided leaves
            let bound = crate::params::Bound::from_ids(ids.to_vec());
            let (f_p, _) = encode_points(t, &plan, &pe, &bound, &cfg)?;
            project_to_scalar(t, f_p, 61)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-3, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn image_encoder_zero_image_zero_bias_gives_zero() {
        let cfg = small_cfg();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ie = ImageEncoderParams::new(&mut ps, &mut rng, &cfg);
        for e in ps.entries_mut() {
            if e.name.ends_with(".b") {
                e.tensor.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let img = Tensor::zeros(&[1, cfg.h, cfg.w]);
        let f_i = encode_image(&mut tape, &img, &ie, &bound, &cfg).unwrap();
        assert!(tape.data(f_i).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_encoder_desk_shape_contract() {
        let cfg = EncoderConfig::desk();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ie = ImageEncoderParams::new(&mut ps, &mut rng, &cfg);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let img = Tensor::full(&[1, 32, 32], 0.3);
        let f_i = encode_image(&mut tape, &img, &ie, &bound, &cfg).unwrap();
        assert_eq!(tape.shape(f_i), &[32, 8, 8]);
    }

    #[test]
    fn image_encoder_gradients_match_finite_differences() {
        let cfg = small_cfg();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ie = ImageEncoderParams::new(&mut ps, &mut rng, &cfg);
        let mut img = Tensor::zeros(&[1, cfg.h, cfg.w]);
        let mut vrng = ChaCha8Rng::seed_from_u64(10);
        img.data.iter_mut().for_each(|v| *v = vrng.gen_range(0.0..1.0));
        let inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let rep = fd_check(&inputs, 10, 11, &|t, ids| {
            let bound = crate::params::Bound::from_ids(ids.to_vec());
            let f_i = encode_image(t, &img, &ie, &bound, &cfg)?;
            project_to_scalar(t, f_i, 62)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }

    fn random_clip(cfg: &EncoderConfig, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..cfg.t * cfg.h * cfg.w)
            .map(|_| rng.gen_range(0.0f32..1.0))
            .collect();
        VideoClip {
            t: cfg.t,
            c: 1,
            h: cfg.h,
            w: cfg.w,
            data,
        }
    }

    #[test]
    fn video_encoder_desk_shape_contract() {
        let cfg = EncoderConfig::desk();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let clip = random_clip(&cfg, 13);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let f_v = encode_video(&mut tape, &clip, &ve, &bound, &cfg).unwrap();
        assert_eq!(tape.shape(f_v), &[8, 32, 8, 8]);
    }

    #[test]
    fn identical_frames_produce_identical_output_frames() {
        let cfg = small_cfg();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let one = random_clip(&cfg, 15);
        let clip = one.replicate_frame(0);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let f_v = encode_video(&mut tape, &clip, &ve, &bound, &cfg).unwrap();
        let fs = cfg.c * cfg.l();
        let data = tape.data(f_v);
        for t in 1..cfg.t {
            for i in 0..fs {
                assert!(
                    (data[t * fs + i] - data[i]).abs() <= 1e-9,
                    "frame {t} deviates at {i}"
                );
            }
        }
    }

    #[test]
    fn video_encoder_is_not_frame_permutation_equivariant() {
        let cfg = small_cfg();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let clip = random_clip(&cfg, 17);
        // reversed frame order
        let fs = cfg.h * cfg.w;
        let mut rev = clip.clone();
        for t in 0..cfg.t {
            rev.data[t * fs..(t + 1) * fs]
                .copy_from_slice(&clip.data[(cfg.t - 1 - t) * fs..(cfg.t - t) * fs]);
        }
        let run = |c: &VideoClip| {
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape, false);
            let f_v = encode_video(&mut tape, c, &ve, &bound, &cfg).unwrap();
            tape.data(f_v).to_vec()
        };
        let fwd = run(&clip);
        let bwd = run(&rev);
        // permuting the input frames does not just permute the outputs
        let fsz = cfg.c * cfg.l();
        let mut max_dev: f64 = 0.0;
        for t in 0..cfg.t {
            let orig = &fwd[(cfg.t - 1 - t) * fsz..(cfg.t - t) * fsz];
            let perm = &bwd[t * fsz..(t + 1) * fsz];
            for (a, b) in orig.iter().zip(perm) {
                max_dev = max_dev.max((a - b).abs());
            }
        }
        assert!(max_dev > 1e-6, "outputs permuted equivariantly ({max_dev})");
    }

    #[test]
    fn video_encoder_outputs_finite_on_unit_inputs() {
        let cfg = small_cfg();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let clip = random_clip(&cfg, 19);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let f_v = encode_video(&mut tape, &clip, &ve, &bound, &cfg).unwrap();
        assert!(tape.data(f_v).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frozen_video_params_get_no_gradient() {
        let mut cfg = small_cfg();
        cfg.video_frozen = true;
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let clip = random_clip(&cfg, 21);
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, true);
        let f_v = encode_video(&mut tape, &clip, &ve, &bound, &cfg).unwrap();
        let loss = tape.mean_all(f_v);
        tape.backward(loss).unwrap();
        for e in ps.entries() {
            assert!(!e.trainable, "{} should be frozen", e.name);
        }
        assert!(tape.grad(bound.id(ve.patch_w)).is_none());
    }

    #[test]
    fn video_encoder_gradients_match_finite_differences() {
        // tiny config keeps the FD sweep fast
        let cfg = EncoderConfig {
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
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ve = VideoEncoderParams::new(&mut ps, &mut rng, &cfg);
        let clip = random_clip(&cfg, 23);
        let inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.tensor.clone()).collect();
        let rep = fd_check(&inputs, 6, 24, &|t, ids| {
            let bound = crate::params::Bound::from_ids(ids.to_vec());
            let f_v = encode_video(t, &clip, &ve, &bound, &cfg)?;
            project_to_scalar(t, f_v, 63)
        })
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
    }
}
