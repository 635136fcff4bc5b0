//! `heatgrasp bench` — single-frame latency and multi-thread throughput.

use crate::dataset::{infer_options, write_json, ModelFlags};
use heatgrasp::pipeline::{Model, StageTimings};
use heatgrasp::scene::{default_intrinsics, gen_scene, render_frame};
use heatgrasp::Result;
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Trained weight file; fresh seeded weights when absent (same cost)
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Timed inference runs
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Untimed runs before measurement
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    /// Worker threads for the throughput section (1 skips it)
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Scene-generation seed
    #[arg(long, default_value_t = 7000)]
    pub seed: u64,
    /// Region-size multipliers for pooled multi-scale inference
    #[arg(long, value_delimiter = ',')]
    pub tta_scales: Vec<f32>,
    /// Write the report here (JSON); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = args.model.resolve(None)?;
    let model = match &args.weights {
        Some(path) => Model::load(cfg.clone(), path)?,
        None => Model::init(cfg.clone())?,
    };
    let opts = infer_options(&args.tta_scales);

    let intr = default_intrinsics();
    let frames: Vec<_> = (0..args.frames.max(1))
        .map(|i| render_frame(&gen_scene(args.seed + i as u64, 4), &intr))
        .collect::<Result<_>>()?;

    for i in 0..args.warmup {
        model.infer(&frames[i % frames.len()], &opts)?;
    }

    let mut totals = Vec::with_capacity(frames.len());
    let mut stage_sum = StageTimings::default();
    let mut encoder_calls = 0usize;
    for frame in &frames {
        let det = model.infer(frame, &opts)?;
        let t = det.diag.timings;
        totals.push(t.total_ms);
        stage_sum.input_ms += t.input_ms;
        stage_sum.backbone_ms += t.backbone_ms;
        stage_sum.region_ms += t.region_ms;
        stage_sum.rotation_ms += t.rotation_ms;
        stage_sum.decode_ms += t.decode_ms;
        stage_sum.nms_ms += t.nms_ms;
        encoder_calls = det.diag.encoder_calls;
    }
    let n = totals.len() as f64;
    let mut sorted = totals.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = totals.iter().sum::<f64>() / n;
    let median = sorted[sorted.len() / 2];
    let p95 = sorted[((sorted.len() as f64 * 0.95) as usize).min(sorted.len() - 1)];

    let throughput = if args.threads > 1 {
        let started = Instant::now();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for t in 0..args.threads {
                let model = &model;
                let frames = &frames;
                let opts = &opts;
                handles.push(scope.spawn(move || -> Result<()> {
                    for (i, frame) in frames.iter().enumerate() {
                        if i % args.threads == t {
                            model.infer(frame, opts)?;
                        }
                    }
                    Ok(())
                }));
            }
            for h in handles {
                h.join().expect("bench worker panicked")?;
            }
            Ok(())
        })?;
        let elapsed = started.elapsed().as_secs_f64();
        Some(json!({
            "threads": args.threads,
            "frames": frames.len(),
            "seconds": elapsed,
            "frames_per_second": frames.len() as f64 / elapsed,
        }))
    } else {
        None
    };

    let report = json!({
        "config_hash": cfg.hash(),
        "frames": frames.len(),
        "encoder_calls_per_frame": encoder_calls,
        "latency_ms": { "mean": mean, "median": median, "p95": p95 },
        "stage_means_ms": {
            "input": stage_sum.input_ms / n,
            "backbone": stage_sum.backbone_ms / n,
            "region": stage_sum.region_ms / n,
            "rotation": stage_sum.rotation_ms / n,
            "decode": stage_sum.decode_ms / n,
            "nms": stage_sum.nms_ms / n,
        },
        "throughput": throughput,
    });
    eprintln!("mean {mean:.1} ms  median {median:.1} ms  p95 {p95:.1} ms");
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
