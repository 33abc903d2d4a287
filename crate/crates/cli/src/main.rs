//! Command-line interface: synthetic dataset generation, training,
//! evaluation, gradient checks, and heatmap export.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vagnet_core::data::{load_dataset, make_splits, write_dataset, SplitSpec, SplitTag};
use vagnet_core::gradcheck::full_suite;
use vagnet_core::model::Ablation;
use vagnet_core::train::{export_heatmap, predict_split, train, Checkpoint, TrainConfig};

#[derive(Parser)]
#[command(name = "vagnet", about = "Video-guided 3D affordance grounding pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired video/point-cloud dataset.
    GenData {
        /// Output directory for samples and manifest.csv
        #[arg(long)]
        out: PathBuf,
        /// Dataset seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training samples per seen pairing (eval gets a quarter)
        #[arg(long = "n-per-pair", default_value_t = 20)]
        n_per_pair: usize,
    },
    /// Train on the seen-train split of a generated dataset.
    Train {
        /// Dataset directory (with manifest.csv)
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Evaluate a checkpoint on the seen or unseen evaluation split.
    Eval {
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Which evaluation split to use
        #[arg(long, value_parser = ["seen", "unseen"])]
        split: String,
    },
    /// Run the finite-difference gradient check suite.
    Gradcheck {
        /// Only run checks whose name contains this substring
        #[arg(long)]
        module: Option<String>,
    },
    /// Export a sample's predicted heatmap as x,y,z,score lines.
    Export {
        /// Checkpoint path
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Sample id from the manifest
        #[arg(long)]
        sample: String,
        /// Output file
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainOpts {
    /// Drop the contextual attention (keep projection + fusion)
    #[arg(long)]
    no_mcam: bool,
    /// Feed the 3D branch output straight to the decoder
    #[arg(long)]
    no_stfm: bool,
    /// Drop the entire 2D branch (projection and alignment)
    #[arg(long)]
    no_proj: bool,
    /// Replace the clip with T copies of its pre-contact frame
    #[arg(long)]
    img_mode: bool,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 12)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    wd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: Cli) -> vagnet_core::Result<()> {
    match cli.command {
        Command::GenData { out, seed, n_per_pair } => {
            let spec = SplitSpec::default_spec(seed);
            let (samples, manifest) = make_splits(&spec, n_per_pair)?;
            write_dataset(&out, &samples, &manifest)?;
            println!(
                "wrote {} samples ({} train / {} seen-eval / {} unseen-eval) to {}",
                samples.len(),
                samples.iter().filter(|s| s.split_tag == SplitTag::SeenTrain).count(),
                samples.iter().filter(|s| s.split_tag == SplitTag::SeenEval).count(),
                samples.iter().filter(|s| s.split_tag == SplitTag::UnseenEval).count(),
                out.display()
            );
        }
        Command::Train { data, out, opts } => {
            let dataset = load_dataset(&data)?;
            let ablation = Ablation::from_flags(!opts.no_mcam, !opts.no_stfm, !opts.no_proj)?;
            let cfg = TrainConfig {
                epochs: opts.epochs,
                batch_size: opts.batch,
                lr0: opts.lr,
                weight_decay: opts.wd,
                seed: opts.seed,
                ablation,
                img_mode: opts.img_mode,
                ..TrainConfig::default()
            };
            let result = train(&cfg, &dataset, Some(&out))?;
            for e in &result.log.epochs {
                match &e.eval {
                    Some(ev) => println!(
                        "epoch={} loss={:.6} auc={:.2} aiou={:.2} sim={:.4} mae={:.4}",
                        e.epoch, e.train_loss, ev.auc, ev.aiou, ev.sim, ev.mae
                    ),
                    None => println!("epoch={} loss={:.6}", e.epoch, e.train_loss),
                }
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Eval { ckpt, data, split } => {
            let dataset = load_dataset(&data)?;
            let checkpoint = Checkpoint::read(&ckpt)?;
            let (cfg, model, _) = checkpoint.restore()?;
            let tag = if split == "seen" { SplitTag::SeenEval } else { SplitTag::UnseenEval };
            let samples = dataset.split(tag);
            let result = predict_split(&model, &samples, cfg.img_mode)?;
            print!("{}", result.to_kv_report());
            println!("csv={}", result.to_csv_row());
        }
        Command::Gradcheck { module } => {
            let reports = full_suite(module.as_deref())?;
            if reports.is_empty() {
                return Err(vagnet_core::VagError::unsupported(
                    "gradcheck",
                    format!("no check matches '{}'", module.unwrap_or_default()),
                ));
            }
            let mut failed = 0;
            for r in &reports {
                println!(
                    "{} {:32} max_rel_err={:.3e} tol={:.0e} coords={}",
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.name,
                    r.max_rel_err,
                    r.tol,
                    r.coords_checked
                );
                if !r.passed() {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(vagnet_core::VagError::contract(
                    "gradcheck",
                    format!("{failed} of {} checks failed", reports.len()),
                ));
            }
        }
        Command::Export { ckpt, data, sample, out } => {
            let dataset = load_dataset(&data)?;
            let checkpoint = Checkpoint::read(&ckpt)?;
            let (cfg, model, _) = checkpoint.restore()?;
            let s = dataset.by_id(&sample).ok_or_else(|| {
                vagnet_core::VagError::contract("export", format!("unknown sample id '{sample}'"))
            })?;
            export_heatmap(&model, s, cfg.img_mode, &out)?;
            println!("wrote {} scores to {}", s.points.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
