use vagnet_core::data::{generate_sample, Affordance, Category, Dataset};
use vagnet_core::metrics::{aiou, GT_BINARIZE};
use vagnet_core::model::{Ablation, SampleCtx};
use vagnet_core::train::{train, TrainConfig};

fn main() {
    for lr in [1e-3, 3e-3, 1e-2] {
        let s = generate_sample(Category::Cart, Affordance::Lift, 0).unwrap();
        let ds = Dataset { samples: vec![s] };
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 1,
            lr0: lr,
            seed: 0,
            ablation: Ablation::Full,
            ..TrainConfig::default()
        };
        let t = std::time::Instant::now();
        let out = train(&cfg, &ds, None).unwrap();
        let final_loss = out.log.epochs.last().unwrap().train_loss;
        let ctx = SampleCtx::build(&out.model, &ds.samples[0], false).unwrap();
        let pred = out.model.predict(&ctx).unwrap();
        let gt = ds.samples[0].points.heatmap.as_ref().unwrap();
        let gt_bin: Vec<f64> = gt.iter().map(|&g| if g > GT_BINARIZE { 1.0 } else { 0.0 }).collect();
        let a = aiou(&pred, &gt_bin).unwrap().unwrap();
        println!("lr={lr:.0e}: loss {final_loss:.4} aiou {a:.1} ({:?})", t.elapsed());
    }
}
