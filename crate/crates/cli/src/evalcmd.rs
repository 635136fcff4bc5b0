//! `heatgrasp eval` — force-closure AP over a dataset.
//!
//! Detections come from a trained model or, with `--grasps-dir`, from
//! per-scene JSON files (`<grasps-dir>/<scene-name>.json`) so externally
//! produced lists can be scored too.

use crate::dataset::{
    infer_options, load_frame, load_grasps, load_intrinsics, load_scene, scene_dirs, write_json,
    ModelFlags,
};
use heatgrasp::metrics::{scene_ap, EvalReport, SceneAp};
use heatgrasp::pipeline::Model;
use heatgrasp::{Error, Result};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Dataset directory from `gen-data`
    #[arg(long)]
    pub data: PathBuf,
    /// Trained weight file (run the model on every scene)
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Score stored detection files instead of running the model
    #[arg(long, conflicts_with = "weights")]
    pub grasps_dir: Option<PathBuf>,
    /// Write the report here (JSON); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Region-size multipliers for pooled multi-scale inference
    #[arg(long, value_delimiter = ',')]
    pub tta_scales: Vec<f32>,
    #[command(flatten)]
    pub model: ModelFlags,
}

pub fn run(args: Args) -> Result<()> {
    let model = match (&args.weights, &args.grasps_dir) {
        (Some(w), None) => {
            let cfg = args.model.resolve(None)?;
            Some(Model::load(cfg, w)?)
        }
        (None, Some(_)) => None,
        _ => {
            return Err(Error::Config(
                "pass exactly one of --weights or --grasps-dir".into(),
            ))
        }
    };
    let opts = infer_options(&args.tta_scales);
    let intr = load_intrinsics(&args.data)?;

    let mut per_scene: Vec<SceneAp> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();
    for dir in scene_dirs(&args.data)? {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("scene")
            .to_string();
        let scene = load_scene(&dir)?;
        let grasps = match &model {
            Some(model) => {
                let frame = load_frame(&dir, &intr)?;
                model.infer(&frame, &opts)?.grasps
            }
            None => {
                let path = args
                    .grasps_dir
                    .as_ref()
                    .expect("checked above")
                    .join(format!("{name}.json"));
                match load_grasps(&path) {
                    Ok(g) => g,
                    Err(e) => {
                        skipped.push(format!("{name}: {e}"));
                        continue;
                    }
                }
            }
        };
        per_scene.push(scene_ap(&scene, &grasps));
    }

    let report = EvalReport::from_scene_aps(&per_scene, skipped);
    println!(
        "scenes {:>3}  skipped {:>2}  mAP {:.4}",
        report.scenes,
        report.skipped.len(),
        report.map
    );
    match &args.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
