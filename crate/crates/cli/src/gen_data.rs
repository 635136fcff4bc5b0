//! `heatgrasp gen-data` — synthesize scenes, render frames, write labels.

use crate::dataset::{
    scene_dir_name, write_json, DEPTH_FILE, INTRINSICS_FILE, LABELS_FILE, RGB_FILE, SCENE_FILE,
};
use heatgrasp::imgio::{write_depth_pgm, write_rgb_ppm};
use heatgrasp::scene::{default_intrinsics, gen_scene, label_grasps, render_frame};
use heatgrasp::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Output dataset directory (created if absent)
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes
    #[arg(long, default_value_t = 20)]
    pub scenes: usize,
    /// Fewest objects per scene
    #[arg(long, default_value_t = 2)]
    pub min_objects: usize,
    /// Most objects per scene
    #[arg(long, default_value_t = 5)]
    pub max_objects: usize,
    /// Base seed; scene i uses seed + i, so keep dataset seeds far apart
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: Args) -> Result<()> {
    if args.min_objects == 0 || args.min_objects > args.max_objects {
        return Err(heatgrasp::Error::Config(format!(
            "need 1 <= min_objects <= max_objects, got {}..{}",
            args.min_objects, args.max_objects
        )));
    }
    let intr = default_intrinsics();
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join(INTRINSICS_FILE), &intr)?;

    let mut count_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x6f62_6a63_6e74);
    let mut labels_total = 0usize;
    for i in 0..args.scenes {
        let n = count_rng.gen_range(args.min_objects..=args.max_objects);
        let scene = gen_scene(args.seed + i as u64, n);
        let frame = render_frame(&scene, &intr)?;
        let labels = label_grasps(&scene);
        labels_total += labels.len();

        let dir = args.out.join(scene_dir_name(i));
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join(SCENE_FILE), &scene)?;
        write_json(&dir.join(LABELS_FILE), &labels)?;
        write_depth_pgm(dir.join(DEPTH_FILE), &frame.depth_mm)?;
        write_rgb_ppm(dir.join(RGB_FILE), &frame.rgb)?;
    }
    println!(
        "wrote {} scenes ({} labels) to {}",
        args.scenes,
        labels_total,
        args.out.display()
    );
    Ok(())
}
