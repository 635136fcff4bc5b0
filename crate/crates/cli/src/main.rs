//! `heatgrasp` — generate synthetic scenes, train the detector, run
//! inference, score detections, and benchmark latency.
//!
//! Exit codes: 1 generic failure, 2 I/O (unreadable/unwritable path),
//! 3 non-finite loss during training, 4 corrupt weight file, 5 bad or
//! mismatched configuration.

mod bench;
mod dataset;
mod evalcmd;
mod gen_data;
mod infer;
mod train;

use clap::{Parser, Subcommand};
use heatgrasp::Error;

#[derive(Parser)]
#[command(name = "heatgrasp", version, about = "6-DoF grasp detection on synthetic RGB-D scenes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset of synthetic tabletop scenes
    GenData(gen_data::Args),
    /// Train the detector on a generated dataset
    Train(train::Args),
    /// Detect grasps on one stored frame
    Infer(infer::Args),
    /// Score detections against scene geometry (force-closure AP)
    Eval(evalcmd::Args),
    /// Measure inference latency
    Bench(bench::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData(args) => gen_data::run(args),
        Cmd::Train(args) => train::run(args),
        Cmd::Infer(args) => infer::run(args),
        Cmd::Eval(args) => evalcmd::run(args),
        Cmd::Bench(args) => bench::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Io(_) => 2,
            Error::NonFinite(_) => 3,
            Error::WeightFormat(_) => 4,
            Error::Config(_) => 5,
            _ => 1,
        });
    }
}
