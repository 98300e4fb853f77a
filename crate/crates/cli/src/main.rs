//! `bodyfit` command line: model inspection/assembly/export, identity and
//! pose sampling, synthetic observation generation, multi-view fitting, and
//! skin-tone matching.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use context::{CliError, Context};

#[derive(Parser)]
#[command(name = "bodyfit", version, about = "Parametric body model toolkit")]
struct Cli {
    /// Root seed; all randomized steps derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Optional JSON/TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Rayon thread count for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for generated files.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model container operations.
    Model {
        #[command(subcommand)]
        cmd: ModelCmd,
    },
    /// Draw identities or pose frames from fitted distributions.
    Sample {
        #[command(subcommand)]
        cmd: SampleCmd,
    },
    /// Generate synthetic landmark observations from ground-truth params.
    Synth(commands::synth::SynthArgs),
    /// Fit the model to landmark observations.
    Fit(commands::fit::FitArgs),
    /// Skin-tone statistics and moment matching.
    Colormatch {
        #[command(subcommand)]
        cmd: ColormatchCmd,
    },
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Validate a model container or descriptor and print its dimensions.
    Info(commands::model::InfoArgs),
    /// Run the topology-transfer pipeline from a manifest and write a
    /// combined model.
    Assemble(commands::model::AssembleArgs),
    /// Evaluate the mesh for given parameters and write an OBJ.
    ExportObj(commands::model::ExportObjArgs),
}

#[derive(Subcommand)]
enum SampleCmd {
    /// Sample face/body identities in equal gender proportions.
    Identity(commands::sample::IdentityArgs),
    /// Sample pose frames with GMM class weighting and mirroring.
    Pose(commands::sample::PoseArgs),
}

#[derive(Subcommand)]
enum ColormatchCmd {
    /// Compute masked per-channel stats of a texture.
    Stats(commands::colormatch::StatsArgs),
    /// Adjust a body texture's moments to match face stats.
    Apply(commands::colormatch::ApplyArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match Context::resolve(
        cli.seed,
        cli.threads,
        cli.output_dir.clone(),
        cli.config.as_deref(),
    ) {
        Ok(ctx) => ctx,
        Err(e) => {
            e.report();
            return ExitCode::from(e.exit);
        }
    };
    let outcome: Result<u8, CliError> = match cli.command {
        Command::Model { cmd } => match cmd {
            ModelCmd::Info(args) => commands::model::info(&ctx, args),
            ModelCmd::Assemble(args) => commands::model::assemble(&ctx, args),
            ModelCmd::ExportObj(args) => commands::model::export_obj(&ctx, args),
        },
        Command::Sample { cmd } => match cmd {
            SampleCmd::Identity(args) => commands::sample::identity(&ctx, args),
            SampleCmd::Pose(args) => commands::sample::pose(&ctx, args),
        },
        Command::Synth(args) => commands::synth::run(&ctx, args),
        Command::Fit(args) => commands::fit::run(&ctx, args),
        Command::Colormatch { cmd } => match cmd {
            ColormatchCmd::Stats(args) => commands::colormatch::stats(&ctx, args),
            ColormatchCmd::Apply(args) => commands::colormatch::apply(&ctx, args),
        },
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            e.report();
            ExitCode::from(e.exit)
        }
    }
}
