use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::encoders::EncoderConfig;
use vagnet_core::model::{Ablation, Mode, SampleCtx, VagNet};
use vagnet_core::tensor::Tape;

fn stats(name: &str, d: &[f64]) {
    let sub = d.iter().filter(|v| v.is_subnormal()).count();
    let tiny = d.iter().filter(|v| v.abs() < 1e-300 && **v != 0.0).count();
    let absmax = d.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let absmin_nz = d.iter().filter(|v| **v != 0.0).fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    println!("{name}: n={} subnormal={sub} tiny={tiny} absmax={absmax:.3e} absmin_nz={absmin_nz:.3e}", d.len());
}

fn main() {
    let model = VagNet::new(EncoderConfig::desk(), Ablation::Full, 1).unwrap();
    let s = generate_sample(Category::Barbell, Affordance::Lift, 3).unwrap();
    let ctx = SampleCtx::build(&model, &s, false).unwrap();
    let mut tape = Tape::new();
    let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
    stats("f_p", tape.data(tr.f_p));
    stats("f_2d", tape.data(tr.f_2d.unwrap()));
    stats("f_3d", tape.data(tr.f_3d));
    stats("stfm_attn[0]", tape.data(tr.stfm_attn[0]));
    stats("f_pv", tape.data(tr.f_pv.unwrap()));
    stats("f_v", tape.data(tr.f_v));
}
