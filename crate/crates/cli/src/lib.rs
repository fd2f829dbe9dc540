//! Command-line front end: flag and config-file handling, sampling commands,
//! previews, mask dumps, benchmarks and self-verification.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{BenchRequest, SampleRequest};
use crate::config::{parse_pair, SamplerArgs};
use crate::error::{CliError, CliResult};
use crate::verify::VerifyOptions;

#[derive(Debug, Parser)]
#[command(
    name = "sama",
    version,
    about = "Scale-and-mask fragment sampling for quality assessment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Input image, or a directory of frame_NNNNNN.png|ppm files for video.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Output container path.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Also write `<out stem>_preview.png`: plain, tinted or bordered.
    #[arg(long, value_name = "STYLE")]
    pub preview: Option<String>,
}

impl From<SampleArgs> for SampleRequest {
    fn from(a: SampleArgs) -> Self {
        SampleRequest {
            input: a.input,
            sampler: a.sampler,
            out: a.out,
            preview: a.preview,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample one image into a container.
    SampleImage(SampleArgs),
    /// Sample a frame directory into a container.
    SampleVideo {
        #[command(flatten)]
        args: SampleArgs,
        /// Select 128 frames and write 4 snippet containers `<stem>_s{k}`.
        #[arg(long)]
        infer: bool,
    },
    /// Render a container as a contact-sheet image.
    Preview {
        container: PathBuf,
        #[arg(long, alias = "style", value_name = "STYLE", default_value = "tinted")]
        preview: String,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Write per-scale spatial mask indicators as PGM files.
    Masks {
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Time each pipeline stage against the single-scale path.
    Bench {
        #[command(flatten)]
        sampler: SamplerArgs,
        /// Image file or frame directory; synthetic input when omitted.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Synthetic input size.
        #[arg(long, value_name = "HxW", value_parser = parse_pair, default_value = "1080x1920")]
        size: (usize, usize),
        /// Synthetic frame count; more than one benches the video path.
        #[arg(long, value_name = "N", default_value_t = 1)]
        synthetic_frames: usize,
        #[arg(long, value_name = "N")]
        reps: Option<usize>,
    },
    /// Run the attention, pooling and gating property suite.
    AttnCheck {
        #[arg(long, value_name = "N", default_value_t = 100)]
        instances: usize,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
    },
    /// Run audits, mask checks, determinism replays and the head suite.
    Verify {
        /// Number of identical runs compared byte for byte.
        #[arg(long, value_name = "N", default_value_t = 2)]
        seed_replay: usize,
        #[arg(long, value_name = "N", default_value_t = 100)]
        instances: usize,
        #[arg(long, value_name = "N", default_value_t = 0)]
        seed: u64,
        /// Corrupt one gathered pixel to check that the audit catches it.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Applies `SAMA_THREADS` to the global thread pool.
pub fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SAMA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            CliError::Config(format!(
                "SAMA_THREADS must be a positive integer, got `{value}`"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::SampleImage(args) => commands::sample_image_cmd(args.into()),
        Command::SampleVideo { args, infer } => commands::sample_video_cmd(args.into(), infer),
        Command::Preview {
            container,
            preview,
            out,
        } => commands::preview_cmd(&container, &preview, &out),
        Command::Masks { sampler, out } => commands::masks_cmd(&sampler, &out),
        Command::Bench {
            sampler,
            input,
            size,
            synthetic_frames,
            reps,
        } => commands::bench_cmd(BenchRequest {
            sampler,
            input,
            size,
            synthetic_frames: synthetic_frames.max(1),
            reps,
        }),
        Command::AttnCheck { instances, seed } => commands::attn_check_cmd(instances, seed),
        Command::Verify {
            seed_replay,
            instances,
            seed,
            inject_fault,
        } => commands::verify_cmd(&VerifyOptions {
            seed_replay,
            head_instances: instances,
            seed,
            inject_fault,
        }),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
