//! `heatgrasp train` — SGD over a generated dataset, loss log, weight file.

use crate::dataset::{load_frame, load_intrinsics, load_labels, scene_dirs, ModelFlags};
use heatgrasp::geometry::{GraspPose, ImageFrame};
use heatgrasp::nn::SgdOptimizer;
use heatgrasp::pipeline::{Model, TrainLosses};
use heatgrasp::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Dataset directory from `gen-data`
    #[arg(long)]
    pub data: PathBuf,
    /// Where to write the trained weights
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Append per-epoch losses to this CSV
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Override the config's RNG seed (weight init, shuffling, region sizes)
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelFlags,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = args.model.resolve(args.seed)?;
    let intr = load_intrinsics(&args.data)?;
    if (intr.height, intr.width) != cfg.input_hw {
        return Err(Error::Config(format!(
            "dataset frames are {}x{}, config wants {}x{}",
            intr.height, intr.width, cfg.input_hw.0, cfg.input_hw.1
        )));
    }

    let dirs = scene_dirs(&args.data)?;
    let mut samples: Vec<(ImageFrame, Vec<GraspPose>)> = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        samples.push((load_frame(dir, &intr)?, load_labels(dir)?));
    }
    println!(
        "training on {} scenes for {} epochs (lr {}, momentum {}, config {})",
        samples.len(),
        args.epochs,
        args.lr,
        args.momentum,
        &cfg.hash()[..12],
    );

    let mut model = Model::init(cfg.clone())?;
    let mut opt = SgdOptimizer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e);
    let mut csv: Option<std::fs::File> = match &args.loss_csv {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            writeln!(f, "epoch,heatmap_loss,rotation_loss,refine_loss")?;
            Some(f)
        }
        None => None,
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let started = Instant::now();
    for epoch in 0..args.epochs {
        order.shuffle(&mut rng);
        let mut sum = TrainLosses::default();
        // step decay: final 30% of the epochs run at 30% of the base rate,
        // trading early coverage for late refinement precision
        // step decay: final 30% of the epochs run at 30% of the base rate,
        // trading early coverage for late refinement precision
        let lr = if (epoch as f64) >= args.epochs as f64 * 0.7 {
            args.lr * 0.3
        } else {
            args.lr
        };
        for &i in &order {
            let (frame, labels) = &samples[i];
            let losses = model.train_step(frame, labels, &mut opt, lr, args.momentum, &mut rng)?;
            sum.heatmap += losses.heatmap;
            sum.rotation += losses.rotation;
            sum.refine += losses.refine;
            sum.total += losses.total;
        }
        let n = samples.len() as f64;
        println!(
            "epoch {:>3}/{}  heatmap {:.4}  rotation {:.4}  refine {:.4}  total {:.4}  ({:.1}s)",
            epoch + 1,
            args.epochs,
            sum.heatmap / n,
            sum.rotation / n,
            sum.refine / n,
            sum.total / n,
            started.elapsed().as_secs_f64(),
        );
        if let Some(f) = &mut csv {
            writeln!(
                f,
                "{},{},{},{}",
                epoch,
                sum.heatmap / n,
                sum.rotation / n,
                sum.refine / n
            )?;
        }
    }

    model.save(&args.out)?;
    println!("saved weights to {}", args.out.display());
    Ok(())
}
