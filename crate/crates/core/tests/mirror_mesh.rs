//! Pose mirroring checked in mesh space: mirroring the pose must reflect
//! the generated mesh across the sagittal plane, up to the vertex mirror
//! correspondence of the symmetric test humanoid.

use bodyfit::model::{Pose, ShapeParams};
use bodyfit::poselib::{mirror_pose, PoseFrame};
use bodyfit_testkit::humanoid::{build, HumanoidConfig, L_ELBOW, L_SHOULDER, R_ELBOW, R_SHOULDER};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn symmetric_humanoid() -> bodyfit_testkit::humanoid::Humanoid {
    // A nonzero pose basis is not mirror-equivariant; switch it off so the
    // model itself is exactly symmetric.
    build(&HumanoidConfig {
        pose_basis_scale: 0.0,
        seed: 11,
        ..Default::default()
    })
}

fn frame_to_pose(frame: &PoseFrame) -> Pose {
    Pose {
        theta: frame.body.clone(),
        root_translation: frame.root_translation,
    }
}

fn reflected_matches(
    h: &bodyfit_testkit::humanoid::Humanoid,
    pose: &Pose,
    mirrored: &Pose,
    tol: f64,
) {
    let shape = ShapeParams::zeros(&h.model.dims);
    let mesh = h.model.generate_mesh(&shape, pose).unwrap();
    let mesh_mirrored = h.model.generate_mesh(&shape, mirrored).unwrap();
    for i in 0..h.model.dims.vertices {
        let m = h.vertex_mirror[i];
        let dx = mesh_mirrored[3 * m] + mesh[3 * i];
        let dy = mesh_mirrored[3 * m + 1] - mesh[3 * i + 1];
        let dz = mesh_mirrored[3 * m + 2] - mesh[3 * i + 2];
        assert!(
            dx.abs() < tol && dy.abs() < tol && dz.abs() < tol,
            "vertex {i}: reflection residual ({dx}, {dy}, {dz})"
        );
    }
}

#[test]
fn left_arm_raise_becomes_right_arm_raise() {
    let h = symmetric_humanoid();
    let mut frame = PoseFrame {
        body: vec![Vector3::zeros(); 12],
        root_translation: Vector3::new(0.1, 0.0, 0.05),
        left_hand: None,
        right_hand: None,
        expression: None,
        eyes: None,
    };
    frame.body[L_SHOULDER] = Vector3::new(0.0, 0.0, 0.9);
    frame.body[L_ELBOW] = Vector3::new(0.0, 0.4, 0.3);
    let mirrored = mirror_pose(&frame, &h.mirror_map).unwrap();
    // The right-side joints carry the reflected rotations now.
    assert_eq!(mirrored.body[R_SHOULDER], Vector3::new(0.0, 0.0, -0.9));
    assert_eq!(mirrored.body[R_ELBOW], Vector3::new(0.0, -0.4, -0.3));
    assert_eq!(mirrored.body[L_SHOULDER], Vector3::zeros());
    reflected_matches(
        &h,
        &frame_to_pose(&frame),
        &frame_to_pose(&mirrored),
        1e-9,
    );
}

#[test]
fn random_poses_reflect_in_mesh_space() {
    let h = symmetric_humanoid();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let frame = PoseFrame {
            body: (0..12)
                .map(|_| {
                    Vector3::new(
                        0.5 * (rng.random::<f64>() - 0.5),
                        0.5 * (rng.random::<f64>() - 0.5),
                        0.5 * (rng.random::<f64>() - 0.5),
                    )
                })
                .collect(),
            root_translation: Vector3::new(
                0.3 * (rng.random::<f64>() - 0.5),
                0.3 * (rng.random::<f64>() - 0.5),
                0.3 * (rng.random::<f64>() - 0.5),
            ),
            left_hand: None,
            right_hand: None,
            expression: None,
            eyes: None,
        };
        let mirrored = mirror_pose(&frame, &h.mirror_map).unwrap();
        reflected_matches(
            &h,
            &frame_to_pose(&frame),
            &frame_to_pose(&mirrored),
            1e-9,
        );
        // Involution, exactly.
        let back = mirror_pose(&mirrored, &h.mirror_map).unwrap();
        assert_eq!(back, frame);
    }
}
