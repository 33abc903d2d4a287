use vagnet_core::data::{make_splits, Dataset, SplitSpec, SplitTag};
use vagnet_core::model::Ablation;
use vagnet_core::train::{train, TrainConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let spec = SplitSpec::default_spec(0);
    let (samples, _) = make_splits(&spec, 20).unwrap();
    let ds = Dataset { samples };
    println!(
        "dataset: {} train / {} seen-eval / {} unseen-eval, built in {:?}",
        ds.split(SplitTag::SeenTrain).len(),
        ds.split(SplitTag::SeenEval).len(),
        ds.split(SplitTag::UnseenEval).len(),
        t0.elapsed()
    );
    let cfg = TrainConfig {
        epochs: 2,
        ablation: Ablation::Full,
        lr0: 1e-3,
        ..TrainConfig::default()
    };
    let t1 = std::time::Instant::now();
    let out = train(&cfg, &ds, None).unwrap();
    let dt = t1.elapsed();
    println!("2 epochs in {dt:?} => {:?} per epoch", dt / 2);
    for e in &out.log.epochs {
        let ev = e.eval.as_ref().unwrap();
        println!("epoch {} loss {:.4} auc {:.1} aiou {:.1}", e.epoch, e.train_loss, ev.auc, ev.aiou);
    }
    println!("projected 60-epoch full run: {:?}", dt / 2 * 60);
}
