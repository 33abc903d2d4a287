use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::decoder::{total_loss, LossConfig};
use vagnet_core::encoders::EncoderConfig;
use vagnet_core::model::{Ablation, Mode, SampleCtx, VagNet};
use vagnet_core::tensor::Tape;
use std::time::Instant;

fn main() {
    let model = VagNet::new(EncoderConfig::desk(), Ablation::Full, 1).unwrap();
    let s = generate_sample(Category::Barbell, Affordance::Lift, 3).unwrap();
    let t0 = Instant::now();
    let ctx = SampleCtx::build(&model, &s, false).unwrap();
    println!("ctx build {:?}", t0.elapsed());
    let gt = s.points.heatmap.clone().unwrap();
    let lc = LossConfig::default();

    // warmup + forward only (train mode)
    let reps = 20;
    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
        std::hint::black_box(tape.data(tr.a_pred)[0]);
    }
    println!("forward(train) {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        let mut tape = Tape::new();
        let tr = model.forward(&mut tape, &ctx, Mode::Train).unwrap();
        let g = tape.constant(gt.clone(), &[gt.len(), 1]).unwrap();
        let loss = total_loss(&mut tape, tr.a_pred, g, &lc).unwrap();
        tape.backward(loss).unwrap();
        std::hint::black_box(tape.grad(tape_id_probe(&tape)));
    }
    println!("forward+backward {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(model.predict(&ctx).unwrap());
    }
    println!("eval predict {:?}", t.elapsed() / reps);
}

fn tape_id_probe(_t: &vagnet_core::tensor::Tape) -> vagnet_core::tensor::TensorId {
    // grad of the first leaf; placeholder to keep the optimizer honest
    unsafe { std::mem::transmute(0usize) }
}
