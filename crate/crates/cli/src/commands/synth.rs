//! `bodyfit synth`: observations from ground-truth parameters.

use std::path::PathBuf;

use bodyfit::fit::FitParams;
use bodyfit::model::{BodyModel, ShapeParams};
use bodyfit::scene::{generate_observations, load_cameras, write_observations, LandmarkDef};
use clap::Args;
use serde_json::json;

use crate::context::{require_path, write_json, CliError, CliResult, Context, EXIT_OK};

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Camera list JSON.
    #[arg(long)]
    pub cameras: PathBuf,
    /// Landmark definition JSON.
    #[arg(long)]
    pub def: PathBuf,
    /// Ground-truth parameters (FitParams JSON: shared identity, per-frame
    /// expression/pose).
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value = "observations.ndjson")]
    pub output: String,
}

pub fn run(ctx: &Context, args: SynthArgs) -> CliResult<u8> {
    for (p, what) in [
        (&args.model, "model"),
        (&args.cameras, "cameras"),
        (&args.def, "def"),
        (&args.truth, "truth"),
    ] {
        require_path(p, what)?;
    }
    let echo = ctx.echo_config(
        "synth",
        json!({
            "model": args.model,
            "cameras": args.cameras,
            "def": args.def,
            "truth": args.truth,
            "noise_sigma": args.noise_sigma,
            "output": args.output,
        }),
    );
    let model = BodyModel::load(&args.model)?;
    let mut cameras = load_cameras(&args.cameras)?;
    let def = LandmarkDef::load(&args.def)?;
    def.validate(model.dims.vertices)?;
    let truth: FitParams = serde_json::from_str(&std::fs::read_to_string(&args.truth)?)
        .map_err(|e| CliError::input("truth", e.to_string()))?;
    if truth.camera_rotation.len() == cameras.len() {
        // Ground-truth extrinsics override the camera file's.
        for (c, (rot, trans)) in cameras
            .iter_mut()
            .zip(truth.camera_rotation.iter().zip(&truth.camera_translation))
        {
            c.rotation = *rot;
            c.translation = *trans;
        }
    }

    let mut all = Vec::new();
    let mut drops = 0usize;
    let mut per_camera = vec![0usize; cameras.len()];
    for f in 0..truth.n_frames() {
        let shape = ShapeParams {
            gamma: truth.gamma.clone(),
            beta: truth.beta.clone(),
            psi: truth.psi[f].clone(),
        };
        let (mut obs, report) = generate_observations(
            &model,
            &shape,
            &[truth.pose_for_frame(f)],
            &cameras,
            &def,
            args.noise_sigma,
            ctx.seed.wrapping_add(f as u64),
        )?;
        for o in &mut obs {
            o.frame = f;
        }
        drops += report.behind_camera_drops;
        for (c, n) in report.per_camera_counts.iter().enumerate() {
            per_camera[c] += n;
        }
        all.extend(obs);
    }
    if all.is_empty() {
        return Err(CliError::input(
            "visibility",
            "no landmark is visible in any camera",
        ));
    }
    let out = ctx.out_path(&args.output);
    write_observations(&out, &all)?;
    // Echo the ground truth next to the observations for later fitting.
    std::fs::write(
        ctx.out_path("ground_truth.json"),
        serde_json::to_string_pretty(&truth).map_err(|e| CliError::input("truth", e.to_string()))?,
    )?;
    write_json(
        &ctx.out_path("synth_report.json"),
        &json!({
            "config": echo,
            "observations": all.len(),
            "behind_camera_drops": drops,
            "per_camera_counts": per_camera,
            "frames": truth.n_frames(),
            "landmarks": def.len(),
            "output": out,
        }),
    )?;
    Ok(EXIT_OK)
}
