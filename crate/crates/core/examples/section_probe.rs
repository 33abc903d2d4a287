use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::encoders::*;
use vagnet_core::gradcheck::rand_tensor;
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
    let mp = McamParams::new(&mut ps, &mut rng, &cfg);
    let up = UpsampleParams::new(&mut ps, &mut rng, &cfg);
    let sp = StfmParams::new(&mut ps, &mut rng, &cfg);

    let f_p_t = rand_tensor(&mut rng, &[cfg.c, cfg.n_p]);
    let f_i_t = rand_tensor(&mut rng, &[cfg.c, cfg.h_feat, cfg.w_feat]);
    let f_v_t = rand_tensor(&mut rng, &[cfg.t, cfg.c, cfg.h_feat, cfg.w_feat]);
    let f_3d_t = rand_tensor(&mut rng, &[cfg.c, cfg.n]);
    let reps = 30u32;

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let (f_p, _) = encode_points(&mut tape, &ctx.plan, &pe, &bound, &cfg).unwrap();
        std::hint::black_box(tape.data(f_p)[0]);
    }
    println!("encode_points {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let fi = tape.leaf(&f_i_t, false);
        let fv = tape.leaf(&f_v_t, false);
        let fp = tape.leaf(&f_p_t, false);
        let out = mcam_forward(&mut tape, fp, fi, fv, &ctx.plan.up, &mp, &up, &bound, &cfg, BnMode::Train).unwrap();
        std::hint::black_box(tape.data(out.f_3d)[0]);
    }
    println!("mcam_forward {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape, false);
        let f3 = tape.leaf(&f_3d_t, false);
        let fv = tape.leaf(&f_v_t, false);
        let out = stfm_cross_attend(&mut tape, f3, fv, &sp, &bound, &cfg).unwrap();
        let ff = stfm_fuse(&mut tape, f3, out.f_pv, &sp, &bound).unwrap();
        std::hint::black_box(tape.data(ff)[0]);
    }
    println!("stfm {:?}", t.elapsed() / reps);

    // single contextual_attend decomposition
    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let fi = tape.leaf(&f_i_t, false);
        let f2 = tape.leaf(&f_i_t, false);
        let (o, _) = contextual_attend(&mut tape, fi, f2).unwrap();
        std::hint::black_box(tape.data(o)[0]);
    }
    println!("contextual_attend(x1) {:?}", t.elapsed() / reps);
}
