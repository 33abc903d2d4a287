use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::encoders::EncoderConfig;
use vagnet_core::model::{Ablation, Mode, SampleCtx, VagNet};
use vagnet_core::tensor::Tape;
use std::time::Instant;

fn main() {
    let s = generate_sample(Category::Barbell, Affordance::Lift, 3).unwrap();
    for abl in [Ablation::Full, Ablation::NoStfm, Ablation::NoMcam, Ablation::StfmOnly] {
        let model = VagNet::new(EncoderConfig::desk(), abl, 1).unwrap();
        let ctx = SampleCtx::build(&model, &s, false).unwrap();
        let reps = 20u32;
        let t = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
            std::hint::black_box(tape.data(tr.a_pred)[0]);
        }
        println!("{abl:?} forward {:?}", t.elapsed() / reps);
    }
}
