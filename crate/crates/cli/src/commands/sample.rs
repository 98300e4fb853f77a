//! `bodyfit sample {identity, pose}`.

use std::path::PathBuf;

use bodyfit::identity::{sample_identity, to_neutral, IdentityLabel, IdentityPriors};
use bodyfit::poselib::{
    fit_pose_gmm, sample_frame, sampling_weights, GmmModel, PoseArchive,
};
use clap::Args;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use crate::context::{require_path, write_json, CliError, CliResult, Context, EXIT_OK};

#[derive(Args)]
pub struct IdentityArgs {
    /// Identity priors container (face Gaussians + gender transfers).
    #[arg(long)]
    pub priors: PathBuf,
    #[arg(long, default_value_t = 9)]
    pub count: usize,
    /// Scale of the unit-normal body identity draw before neutral transfer.
    #[arg(long, default_value_t = 1.0)]
    pub body_scale: f64,
    #[arg(long, default_value = "identities.json")]
    pub output: String,
}

pub fn identity(ctx: &Context, args: IdentityArgs) -> CliResult<u8> {
    require_path(&args.priors, "priors")?;
    let echo = ctx.echo_config(
        "sample identity",
        json!({
            "priors": args.priors,
            "count": args.count,
            "body_scale": args.body_scale,
            "output": args.output,
        }),
    );
    let priors = IdentityPriors::load(&args.priors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    // Equal thirds across the gender spectrum, cycling deterministically.
    let labels = [
        IdentityLabel::Male,
        IdentityLabel::Female,
        IdentityLabel::Neutral,
    ];
    let mut samples = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let label = labels[i % 3];
        let face = priors.face_for(label).ok_or_else(|| {
            CliError::input("priors", format!("no face Gaussian for {}", label.as_str()))
        })?;
        let gamma = sample_identity(face, &mut rng);
        let beta = match label {
            IdentityLabel::Neutral => {
                // Neutral body identity: direct unit-normal draw in the
                // neutral basis.
                let dim = priors
                    .body_transfers
                    .first()
                    .map(|t| t.offset.len())
                    .unwrap_or(0);
                DVector::from_fn(dim, |_, _| {
                    args.body_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                })
            }
            gendered => {
                let transfer = priors.transfer_for(gendered).ok_or_else(|| {
                    CliError::input(
                        "priors",
                        format!("no gender transfer for {}", gendered.as_str()),
                    )
                })?;
                let beta_g = DVector::from_fn(transfer.mapping.nrows(), |_, _| {
                    args.body_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                to_neutral(&beta_g, transfer)?
            }
        };
        samples.push(json!({
            "label": label.as_str(),
            "gamma": gamma.as_slice(),
            "beta": beta.as_slice(),
        }));
    }
    let out = ctx.out_path(&args.output);
    write_json(&out, &json!({"config": echo, "samples": samples}))?;
    Ok(EXIT_OK)
}

#[derive(Args)]
pub struct PoseArgs {
    /// Pose archive container.
    #[arg(long)]
    pub archive: PathBuf,
    /// Fitted GMM JSON; fitted on the fly when absent.
    #[arg(long)]
    pub gmm: Option<PathBuf>,
    /// Components for on-the-fly GMM fitting.
    #[arg(long, default_value_t = 3)]
    pub fit_components: usize,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Class weight for the component labeled "tpose".
    #[arg(long, default_value_t = 0.1)]
    pub tpose_weight: f64,
    /// Class weight for every other component.
    #[arg(long, default_value_t = 1.0)]
    pub class_weight: f64,
    /// Exponent of the mean-absolute-angle up-weighting.
    #[arg(long, default_value_t = 1.0)]
    pub activity_exponent: f64,
    #[arg(long, default_value_t = 0.5)]
    pub mirror_prob: f64,
    /// JSON mirror map (involutive joint pairing); identity pairing with
    /// axis reflection when absent.
    #[arg(long)]
    pub mirror_map: Option<PathBuf>,
    #[arg(long, default_value = "sampled_poses.sbm1")]
    pub output: String,
}

pub fn pose(ctx: &Context, args: PoseArgs) -> CliResult<u8> {
    require_path(&args.archive, "archive")?;
    let echo = ctx.echo_config(
        "sample pose",
        json!({
            "archive": args.archive,
            "gmm": args.gmm,
            "fit_components": args.fit_components,
            "count": args.count,
            "tpose_weight": args.tpose_weight,
            "class_weight": args.class_weight,
            "activity_exponent": args.activity_exponent,
            "mirror_prob": args.mirror_prob,
            "mirror_map": args.mirror_map,
            "output": args.output,
        }),
    );
    let archive = PoseArchive::load(&args.archive)?;
    let gmm = match &args.gmm {
        Some(path) => GmmModel::load(path)?,
        None => {
            let data: Vec<DVector<f64>> =
                archive.frames.iter().map(|f| f.body_flat()).collect();
            let gmm = fit_pose_gmm(&data, args.fit_components, ctx.seed)?;
            gmm.save(&ctx.out_path("fitted_gmm.json"))?;
            gmm
        }
    };
    let class_weights: Vec<f64> = gmm
        .labels
        .iter()
        .map(|l| {
            if l == "tpose" {
                args.tpose_weight
            } else {
                args.class_weight
            }
        })
        .collect();
    let weights = sampling_weights(&archive, &gmm, &class_weights, args.activity_exponent)?;

    let mirror_map = match &args.mirror_map {
        Some(path) => {
            let map: bodyfit::poselib::MirrorMap =
                serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| CliError::input("mirror-map", e.to_string()))?;
            map.validate()?;
            map
        }
        None => bodyfit::poselib::MirrorMap::identity(archive.layout.body_joints),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut sampled = Vec::with_capacity(args.count);
    let mut class_histogram = vec![0usize; gmm.n_components()];
    for _ in 0..args.count {
        let frame = sample_frame(&archive, &weights, &mut rng, args.mirror_prob, &mirror_map)?;
        class_histogram[gmm.classify(&frame.body_flat())] += 1;
        sampled.push(frame);
    }
    let out_archive = PoseArchive {
        frames: sampled,
        fps: archive.fps,
        layout: archive.layout.clone(),
    };
    let out = ctx.out_path(&args.output);
    out_archive.save(&out)?;
    write_json(
        &ctx.out_path("sample_report.json"),
        &json!({
            "config": echo,
            "class_labels": gmm.labels,
            "class_histogram": class_histogram,
            "frames_written": out_archive.frames.len(),
            "output": out,
        }),
    )?;
    Ok(EXIT_OK)
}
