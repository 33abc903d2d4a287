use vagnet_core::data::{make_splits, Dataset, SplitSpec};
use vagnet_core::model::Ablation;
use vagnet_core::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let abl = match args.get(3).map(|s| s.as_str()).unwrap_or("full") {
        "full" => Ablation::Full,
        "nostfm" => Ablation::NoStfm,
        "nomcam" => Ablation::NoMcam,
        "stfmonly" => Ablation::StfmOnly,
        other => panic!("unknown ablation {other}"),
    };
    let img_mode = args.get(4).map(|s| s == "img").unwrap_or(false);

    let spec = SplitSpec::default_spec(0);
    let (samples, _) = make_splits(&spec, 20).unwrap();
    let ds = Dataset { samples };
    let cfg = TrainConfig {
        epochs,
        lr0: lr,
        seed: 0,
        ablation: abl,
        img_mode,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let out = train(&cfg, &ds, None).unwrap();
    for e in out.log.epochs.iter().step_by(2.max(epochs / 12)) {
        let ev = e.eval.as_ref().unwrap();
        println!(
            "ep {:3} loss {:.4} | auc {:.1} aiou {:.1} sim {:.3} mae {:.3}",
            e.epoch, e.train_loss, ev.auc, ev.aiou, ev.sim, ev.mae
        );
    }
    let ev = out.log.epochs.last().unwrap().eval.as_ref().unwrap();
    println!(
        "FINAL {:?} lr={lr:.0e} ep={epochs}: loss {:.4} auc {:.2} aiou {:.2} sim {:.3} mae {:.3} ({:?})",
        abl, out.log.epochs.last().unwrap().train_loss, ev.auc, ev.aiou, ev.sim, ev.mae, t.elapsed()
    );
    // train-split metrics on a subset, to separate optimization from generalization
    use vagnet_core::data::SplitTag;
    let tr: Vec<_> = ds.split(SplitTag::SeenTrain).into_iter().take(30).collect();
    let res = vagnet_core::train::predict_split(&out.model, &tr, img_mode).unwrap();
    println!("TRAIN-SUBSET: auc {:.2} aiou {:.2} sim {:.3} mae {:.3}", res.auc, res.aiou, res.sim, res.mae);
}
