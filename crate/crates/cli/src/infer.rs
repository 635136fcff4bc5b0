//! `heatgrasp infer` — detect grasps on one stored frame.

use crate::dataset::{infer_options, load_frame, write_json, ModelFlags};
use heatgrasp::imgio::write_heatmap_pgm;
use heatgrasp::pipeline::Model;
use heatgrasp::{Error, Result};
use serde_json::json;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Trained weight file
    #[arg(long)]
    pub weights: PathBuf,
    /// Scene directory holding depth.pgm and rgb.ppm
    #[arg(long)]
    pub frame: PathBuf,
    /// Camera file; defaults to intrinsics.json next to the scene directory
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Write detections here (JSON); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the graspability heatmap as an 8-bit PGM
    #[arg(long)]
    pub dump_heatmap: Option<PathBuf>,
    /// Write the selected region centers as JSON
    #[arg(long)]
    pub dump_regions: Option<PathBuf>,
    /// Region-size multipliers for pooled multi-scale inference, e.g. 0.8,1.0,1.2
    #[arg(long, value_delimiter = ',')]
    pub tta_scales: Vec<f32>,
    #[command(flatten)]
    pub model: ModelFlags,
}

pub fn run(args: Args) -> Result<()> {
    let cfg = args.model.resolve(None)?;
    let intr_path = match &args.intrinsics {
        Some(p) => p.clone(),
        None => args
            .frame
            .parent()
            .map(|p| p.join(crate::dataset::INTRINSICS_FILE))
            .ok_or_else(|| Error::Config("cannot locate intrinsics next to frame".into()))?,
    };
    let intr = crate::dataset::read_json(&intr_path)?;
    let frame = load_frame(&args.frame, &intr)?;

    let model = Model::load(cfg.clone(), &args.weights)?;
    let det = model.infer(&frame, &infer_options(&args.tta_scales))?;

    if let Some(path) = &args.dump_heatmap {
        write_heatmap_pgm(path, &det.heatmap)?;
    }
    if let Some(path) = &args.dump_regions {
        let regions: Vec<_> = det
            .centers
            .iter()
            .map(|c| {
                json!({
                    "v": c.v,
                    "u": c.u,
                    "depth_m": c.depth_m,
                    "graspability": c.graspability,
                })
            })
            .collect();
        write_json(path, &regions)?;
    }

    let report = json!({
        "metadata": {
            "weights": args.weights.display().to_string(),
            "config_hash": cfg.hash(),
            "tta_scales": if args.tta_scales.is_empty() { vec![1.0] } else { args.tta_scales.clone() },
            "diagnostics": det.diag,
        },
        "grasps": det.grasps,
    });
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    eprintln!(
        "{} grasps in {:.1} ms ({} encoder calls)",
        det.grasps.len(),
        det.diag.timings.total_ms,
        det.diag.encoder_calls
    );
    Ok(())
}
