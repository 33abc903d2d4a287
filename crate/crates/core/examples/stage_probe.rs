use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::encoders::*;
use vagnet_core::mcam::*;
use vagnet_core::model::{Ablation, SampleCtx, VagNet};
use vagnet_core::params::ParamSet;
use vagnet_core::stfm::*;
use vagnet_core::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let cfg = EncoderConfig::desk();
    let model = VagNet::new(cfg.clone(), Ablation::Full, 1).unwrap();
    let s = generate_sample(Category::Barbell, Affordance::Lift, 3).unwrap();
    let ctx = SampleCtx::build(&model, &s, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ps = ParamSet::new();
    let pe = PointEncoderParams::new(&mut ps, &mut rng, &cfg);
    let ie = ImageEncoderParams::new(&mut ps, &mut rng, &cfg);
    let mp = McamParams::new(&mut ps, &mut rng, &cfg);
    let up = UpsampleParams::new(&mut ps, &mut rng, &cfg);
    let sp = StfmParams::new(&mut ps, &mut rng, &cfg);

    for rep in 0..3 {
        let mut tape = Tape::new();
        let t0 = Instant::now();
        let bound = ps.bind(&mut tape, false);
        let t_bind = t0.elapsed();
        let t0 = Instant::now();
        let (f_p, _) = encode_points(&mut tape, &ctx.plan, &pe, &bound, &cfg).unwrap();
        let t_pts = t0.elapsed();
        let t0 = Instant::now();
        let fv = tape.leaf(ctx.f_v_cached.as_ref().unwrap(), false);
        let fi = encode_image(&mut tape, ctx.image.as_ref().unwrap(), &ie, &bound, &cfg).unwrap();
        let t_img = t0.elapsed();
        let t0 = Instant::now();
        let out = mcam_forward(&mut tape, f_p, fi, fv, &ctx.plan.up, &mp, &up, &bound, &cfg, BnMode::Train).unwrap();
        let t_mcam = t0.elapsed();
        let t0 = Instant::now();
        let so = stfm_cross_attend(&mut tape, out.f_3d, fv, &sp, &bound, &cfg).unwrap();
        let t_stfm = t0.elapsed();
        let t0 = Instant::now();
        let ff = stfm_fuse(&mut tape, out.f_3d, so.f_pv, &sp, &bound).unwrap();
        let t_fuse = t0.elapsed();
        std::hint::black_box(tape.data(ff)[0]);
        println!("rep{rep}: bind {t_bind:?} pts {t_pts:?} img {t_img:?} mcam {t_mcam:?} stfm {t_stfm:?} fuse {t_fuse:?} nodes {}", tape.len());
    }
}
