//! `bodyfit fit`: multi-view model fitting with recovery metrics.

use std::path::PathBuf;

use bodyfit::fit::{
    fit, perturb_init, vertex_rms, FitParams, FitPriors, FitProblem, PerturbScales,
};
use bodyfit::model::BodyModel;
use bodyfit::scene::{load_cameras, read_observations, LandmarkDef};
use clap::Args;
use serde_json::json;

use crate::context::{
    require_path, write_json, CliError, CliResult, Context, EXIT_DIVERGED, EXIT_OK,
};

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Camera list JSON (intrinsics; extrinsics are the init values).
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub def: PathBuf,
    /// Observations NDJSON.
    #[arg(long)]
    pub observations: PathBuf,
    /// Initial parameters JSON; required unless --init-from-truth.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Build the init by perturbing the ground truth (requires --truth).
    #[arg(long)]
    pub init_from_truth: bool,
    #[arg(long, default_value_t = 0.1)]
    pub perturb_pose: f64,
    #[arg(long, default_value_t = 0.05)]
    pub perturb_identity: f64,
    /// Ground truth for recovery metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Priors JSON ({face_identity, pose} as serialized FitPriors).
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Keep camera extrinsics fixed at their init values.
    #[arg(long)]
    pub freeze_cameras: bool,
    /// Fail (exit 1) when fewer than 3 cameras are supplied.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value = "fit_result.json")]
    pub output: String,
}

pub fn run(ctx: &Context, args: FitArgs) -> CliResult<u8> {
    for (p, what) in [
        (&args.model, "model"),
        (&args.cameras, "cameras"),
        (&args.def, "def"),
        (&args.observations, "observations"),
    ] {
        require_path(p, what)?;
    }
    let weights = ctx.file.weights.unwrap_or_default();
    let mut config = ctx.file.fit.clone().unwrap_or_default();
    if args.freeze_cameras {
        config.freeze.cameras = true;
    }
    let echo = ctx.echo_config(
        "fit",
        json!({
            "model": args.model,
            "cameras": args.cameras,
            "def": args.def,
            "observations": args.observations,
            "init": args.init,
            "init_from_truth": args.init_from_truth,
            "perturb_pose": args.perturb_pose,
            "perturb_identity": args.perturb_identity,
            "truth": args.truth,
            "priors": args.priors,
            "freeze_cameras": args.freeze_cameras,
            "strict": args.strict,
            "weights": weights,
            "fit_config": config,
            "output": args.output,
        }),
    );

    let model = BodyModel::load(&args.model)?;
    let cameras = load_cameras(&args.cameras)?;
    if cameras.len() < 3 {
        let warning = json!({
            "warning": "multi-view body fitting expects at least 3 cameras; fewer views are often ill-posed",
            "cameras": cameras.len(),
        });
        eprintln!("{warning}");
        if args.strict {
            return Err(CliError::input(
                "cameras",
                format!("strict mode requires >= 3 cameras, got {}", cameras.len()),
            ));
        }
    }
    let def = LandmarkDef::load(&args.def)?;
    let observations = read_observations(&args.observations)?;
    let n_frames = observations.iter().map(|o| o.frame + 1).max().unwrap_or(0);
    if n_frames == 0 {
        return Err(CliError::input("observations", "no observations"));
    }

    let truth: Option<FitParams> = match &args.truth {
        Some(path) => Some(
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| CliError::input("truth", e.to_string()))?,
        ),
        None => None,
    };
    let init: FitParams = match (&args.init, args.init_from_truth) {
        (Some(path), _) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::input("init", e.to_string()))?,
        (None, true) => {
            let truth = truth.as_ref().ok_or_else(|| {
                CliError::input("init", "--init-from-truth requires --truth")
            })?;
            let scales = ctx.file.perturb.unwrap_or(PerturbScales {
                pose: args.perturb_pose,
                identity: args.perturb_identity,
                ..Default::default()
            });
            perturb_init(truth, &scales, ctx.seed)
        }
        (None, false) => {
            return Err(CliError::input(
                "init",
                "either --init or --init-from-truth is required",
            ))
        }
    };
    let priors: FitPriors = match &args.priors {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| CliError::input("priors", e.to_string()))?,
        None => FitPriors::default(),
    };

    let problem = FitProblem::new(
        &model,
        cameras,
        def,
        observations,
        n_frames,
        priors,
        weights,
    )?;
    let result = fit(&problem, &init, &config)?;

    let recovery = match &truth {
        Some(truth) if truth.n_frames() == result.params.n_frames() => {
            let rms = vertex_rms(&model, truth, &result.params)?;
            let block_err = |a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| -> f64 {
                if a.is_empty() {
                    0.0
                } else {
                    (a - b).norm() / (a.len() as f64).sqrt()
                }
            };
            let mut pose_err2 = 0.0;
            let mut pose_n = 0usize;
            for f in 0..truth.n_frames() {
                for (ta, fa) in truth.theta[f].iter().zip(&result.params.theta[f]) {
                    pose_err2 += (ta - fa).norm_squared();
                    pose_n += 3;
                }
            }
            Some(json!({
                "vertex_rms": rms,
                "gamma_rms": block_err(&truth.gamma, &result.params.gamma),
                "beta_rms": block_err(&truth.beta, &result.params.beta),
                "pose_rms_rad": (pose_err2 / pose_n as f64).sqrt(),
            }))
        }
        _ => None,
    };

    let trace: Vec<_> = result
        .trace
        .iter()
        .map(|b| {
            json!({
                "total": b.total,
                "landmarks": b.landmarks,
                "face_identity": b.face_identity,
                "body_identity": b.body_identity,
                "expression": b.expression,
                "pose": b.pose,
                "temporal": b.temporal,
                "intersect": b.intersect,
            })
        })
        .collect();
    let out = ctx.out_path(&args.output);
    write_json(
        &out,
        &json!({
            "config": echo,
            "converged": result.converged,
            "diverged": result.diverged,
            "iterations": result.iterations,
            "final_energy": result.final_energy,
            "trace": trace,
            "recovery": recovery,
            "params": serde_json::to_value(&result.params)
                .map_err(|e| CliError::input("serialize", e.to_string()))?,
        }),
    )?;
    if result.diverged {
        return Ok(EXIT_DIVERGED);
    }
    Ok(EXIT_OK)
}
