//! On-disk dataset layout shared by every subcommand.
//!
//! ```text
//! dataset/
//!   intrinsics.json          camera shared by all scenes
//!   scene_000/
//!     scene.json             primitive layout (ground truth for scoring)
//!     depth.pgm              16-bit depth, millimeters
//!     rgb.ppm                8-bit color
//!     labels.json            analytic grasp labels
//!   scene_001/ ...
//! ```

use heatgrasp::geometry::{CameraIntrinsics, GraspPose, ImageFrame};
use heatgrasp::imgio::{read_depth_pgm, read_rgb_ppm};
use heatgrasp::pipeline::PipelineConfig;
use heatgrasp::scene::SceneModel;
use heatgrasp::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const SCENE_FILE: &str = "scene.json";
pub const DEPTH_FILE: &str = "depth.pgm";
pub const RGB_FILE: &str = "rgb.ppm";
pub const LABELS_FILE: &str = "labels.json";

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:03}")
}

/// All `scene_*` directories under the dataset root, sorted by name.
pub fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("scene_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no scene_* directories under {}",
            root.display()
        )));
    }
    Ok(dirs)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_intrinsics(root: &Path) -> Result<CameraIntrinsics> {
    read_json(&root.join(INTRINSICS_FILE))
}

pub fn load_scene(dir: &Path) -> Result<SceneModel> {
    read_json(&dir.join(SCENE_FILE))
}

pub fn load_labels(dir: &Path) -> Result<Vec<GraspPose>> {
    read_json(&dir.join(LABELS_FILE))
}

pub fn load_frame(dir: &Path, intr: &CameraIntrinsics) -> Result<ImageFrame> {
    let depth = read_depth_pgm(dir.join(DEPTH_FILE))?;
    let rgb = read_rgb_ppm(dir.join(RGB_FILE))?;
    ImageFrame::new(rgb, depth, *intr)
}

/// Detection files are either a bare grasp array or an object with a
/// `grasps` field (the form `infer` writes, which carries metadata too).
pub fn load_grasps(path: &Path) -> Result<Vec<GraspPose>> {
    #[derive(Deserialize)]
    struct Wrapped {
        grasps: Vec<GraspPose>,
    }
    let bytes = std::fs::read(path)?;
    if let Ok(flat) = serde_json::from_slice::<Vec<GraspPose>>(&bytes) {
        return Ok(flat);
    }
    let wrapped: Wrapped = serde_json::from_slice(&bytes)?;
    Ok(wrapped.grasps)
}

// ─── config assembly ───────────────────────────────────────────────────────

/// Flags shared by every subcommand that instantiates the model.
#[derive(clap::Args, Debug, Clone)]
pub struct ModelFlags {
    /// Pipeline configuration file (JSON); defaults apply for absent fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Re-encode a raw crop per region instead of sampling the shared map
    #[arg(long)]
    pub no_rfp: bool,
    /// Use only the finest encoder level, skipping pyramid fusion
    #[arg(long)]
    pub no_glh: bool,
    /// Regress one rotation directly instead of scoring the anchor grid
    #[arg(long)]
    pub no_rrh: bool,
}

impl ModelFlags {
    /// Load the config (or defaults), apply ablation switches, validate.
    pub fn resolve(&self, seed: Option<u64>) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match &self.config {
            Some(path) => read_json(path)?,
            None => PipelineConfig::default(),
        };
        if self.no_rfp {
            cfg.region_propagation = false;
        }
        if self.no_glh {
            cfg.pyramid_fusion = false;
        }
        if self.no_rrh {
            cfg.anchor_rotation = false;
        }
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `--tta-scales 0.8,1.0,1.2` → inference options.
pub fn infer_options(scales: &[f32]) -> heatgrasp::pipeline::InferOptions {
    if scales.is_empty() {
        heatgrasp::pipeline::InferOptions::default()
    } else {
        heatgrasp::pipeline::InferOptions {
            tta_scales: scales.to_vec(),
        }
    }
}
