//! Fixture sets for the CLI and acceptance harnesses.

use std::path::Path;

use bodyfit::fit::FitParams;
use bodyfit::identity::{
    fit_gaussian, GenderTransfer, IdentityLabel, IdentityPriors,
};
use bodyfit::poselib::{ChannelLayout, PoseArchive, PoseFrame};
use bodyfit::scene::save_cameras;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::humanoid::{Humanoid, HumanoidConfig, JOINTS};
use crate::rig::ring_cameras;

/// Ground-truth fit parameters for the humanoid: moderate identity and
/// per-frame poses well inside the camera ring.
pub fn truth_params(h: &Humanoid, n_frames: usize, n_cameras: usize, seed: u64) -> FitParams {
    let cameras = ring_cameras(n_cameras, 2.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = &h.model.dims;
    FitParams {
        gamma: DVector::from_fn(dims.face_identity, |_, _| 0.5 * (rng.random::<f64>() - 0.5)),
        beta: DVector::from_fn(dims.body_identity, |_, _| 0.5 * (rng.random::<f64>() - 0.5)),
        psi: (0..n_frames)
            .map(|_| {
                DVector::from_fn(dims.expression, |_, _| 0.5 * (rng.random::<f64>() - 0.5))
            })
            .collect(),
        theta: (0..n_frames)
            .map(|_| {
                (0..dims.joints)
                    .map(|_| {
                        Vector3::new(
                            0.3 * (rng.random::<f64>() - 0.5),
                            0.3 * (rng.random::<f64>() - 0.5),
                            0.3 * (rng.random::<f64>() - 0.5),
                        )
                    })
                    .collect()
            })
            .collect(),
        root_translation: (0..n_frames)
            .map(|_| {
                Vector3::new(
                    0.2 * (rng.random::<f64>() - 0.5),
                    0.1 * (rng.random::<f64>() - 0.5),
                    0.2 * (rng.random::<f64>() - 0.5),
                )
            })
            .collect(),
        camera_rotation: cameras.iter().map(|c| c.rotation).collect(),
        camera_translation: cameras.iter().map(|c| c.translation).collect(),
    }
}

/// A pose archive shaped like the humanoid skeleton: a block of near-T-pose
/// calibration frames plus a block of active frames, some with hands.
pub fn pose_archive(seed: u64, tpose_frames: usize, active_frames: usize) -> PoseArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = ChannelLayout {
        body_joints: JOINTS,
        hand_joints: 2,
        eye_joints: 2,
        expression_dims: 4,
    };
    let mut frames = Vec::new();
    for _ in 0..tpose_frames {
        let mut f = PoseFrame::rest(&layout);
        for aa in &mut f.body {
            for c in 0..3 {
                aa[c] = 0.02 * (rng.random::<f64>() - 0.5);
            }
        }
        frames.push(f);
    }
    for i in 0..active_frames {
        let mut f = PoseFrame::rest(&layout);
        for aa in &mut f.body {
            for c in 0..3 {
                aa[c] = 0.9 + 0.6 * (rng.random::<f64>() - 0.5);
            }
        }
        f.root_translation = Vector3::new(
            0.3 * (rng.random::<f64>() - 0.5),
            0.0,
            0.3 * (rng.random::<f64>() - 0.5),
        );
        if i % 2 == 0 {
            let hand = |rng: &mut ChaCha8Rng| {
                (0..layout.hand_joints)
                    .map(|_| {
                        Vector3::new(
                            0.5 * (rng.random::<f64>() - 0.5),
                            0.5 * (rng.random::<f64>() - 0.5),
                            0.5 * (rng.random::<f64>() - 0.5),
                        )
                    })
                    .collect::<Vec<_>>()
            };
            f.left_hand = Some(hand(&mut rng));
            f.right_hand = Some(hand(&mut rng));
        }
        if i % 3 == 0 {
            f.expression = Some(DVector::from_fn(layout.expression_dims, |_, _| {
                rng.random::<f64>() - 0.5
            }));
        }
        frames.push(f);
    }
    let archive = PoseArchive {
        frames,
        fps: 30.0,
        layout,
    };
    archive.validate().expect("fixture archive is valid");
    archive
}

/// Identity priors: three face Gaussians fitted to synthetic clusters and
/// one gender transfer per gendered label.
pub fn identity_priors(seed: u64, face_dim: usize, beta_g: usize, beta_n: usize) -> IdentityPriors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit_label = |center: f64, label: IdentityLabel| {
        let n = 200;
        let mut samples = DMatrix::zeros(n, face_dim);
        for i in 0..n {
            for d in 0..face_dim {
                samples[(i, d)] = center + 0.5 * (rng.random::<f64>() - 0.5);
            }
        }
        fit_gaussian(&samples, label).expect("fixture gaussian fits")
    };
    let face = vec![
        fit_label(0.4, IdentityLabel::Male),
        fit_label(-0.4, IdentityLabel::Female),
        fit_label(0.0, IdentityLabel::Neutral),
    ];
    let mut transfer = |label: IdentityLabel| GenderTransfer {
        offset: DVector::from_fn(beta_n, |_, _| 0.3 * (rng.random::<f64>() - 0.5)),
        mapping: DMatrix::from_fn(beta_g, beta_n, |r, c| {
            if r == c {
                1.0
            } else {
                0.1 * (rng.random::<f64>() - 0.5)
            }
        }),
        label,
    };
    IdentityPriors {
        face,
        body_transfers: vec![
            transfer(IdentityLabel::Male),
            transfer(IdentityLabel::Female),
        ],
    }
}

/// Paths of a written fixture set.
pub struct FixtureSet {
    pub model: std::path::PathBuf,
    pub cameras: std::path::PathBuf,
    pub dense_def: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub archive: std::path::PathBuf,
    pub identity: std::path::PathBuf,
}

/// Writes the full demo/acceptance fixture set into `dir`.
pub fn write_fixture_set(dir: &Path, seed: u64) -> std::io::Result<FixtureSet> {
    std::fs::create_dir_all(dir)?;
    let h = crate::humanoid::build(&HumanoidConfig {
        seed,
        ..Default::default()
    });
    let io_err = |e: String| std::io::Error::other(e);

    let model = dir.join("model.sbm1");
    h.model.save(&model).map_err(|e| io_err(e.to_string()))?;

    let cameras_path = dir.join("cameras.json");
    let cameras = ring_cameras(3, 2.5, 1.0);
    save_cameras(&cameras_path, &cameras).map_err(|e| io_err(e.to_string()))?;

    let dense_def = dir.join("dense_def.json");
    h.landmark_def("dense", 200)
        .save(&dense_def)
        .map_err(|e| io_err(e.to_string()))?;

    let truth = dir.join("truth.json");
    let params = truth_params(&h, 3, 3, seed.wrapping_add(1));
    std::fs::write(&truth, serde_json::to_string_pretty(&params)?)?;

    let archive_path = dir.join("poses.sbm1");
    pose_archive(seed.wrapping_add(2), 20, 40)
        .save(&archive_path)
        .map_err(|e| io_err(e.to_string()))?;

    let identity_path = dir.join("identity_priors.sbm1");
    identity_priors(seed.wrapping_add(3), h.model.dims.face_identity, 6, h.model.dims.body_identity)
        .save(&identity_path)
        .map_err(|e| io_err(e.to_string()))?;

    Ok(FixtureSet {
        model,
        cameras: cameras_path,
        dense_def,
        truth,
        archive: archive_path,
        identity: identity_path,
    })
}
