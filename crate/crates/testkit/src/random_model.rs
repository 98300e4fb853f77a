//! Random small body models for oracle-equivalence testing.

use bodyfit::model::{BodyModel, ModelDims, Pose, ShapeParams};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random, mathematically valid model with `n <= 50` vertices and
/// `k <= 5` joints. Weight columns and regressor rows are normalized, the
/// kinematic tree is a random topologically-ordered forest with one root.
pub fn random_model(seed: u64) -> BodyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..=50);
    let k = rng.random_range(2..=5);
    let dims = ModelDims {
        vertices: n,
        joints: k,
        face_identity: rng.random_range(1..=4),
        body_identity: rng.random_range(1..=4),
        expression: rng.random_range(1..=3),
    };
    let template = DVector::from_fn(3 * n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let mut basis = |cols: usize, scale: f64| {
        DMatrix::from_fn(3 * n, cols, |_, _| scale * (rng.random::<f64>() - 0.5))
    };
    let face_identity_basis = basis(dims.face_identity, 0.4);
    let body_identity_basis = basis(dims.body_identity, 0.4);
    let expression_basis = basis(dims.expression, 0.2);
    let pose_basis = basis(9 * (k - 1), 0.05);

    let mut skinning_weights = DMatrix::zeros(k, n);
    for v in 0..n {
        let mut col: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = col.iter().sum();
        for w in &mut col {
            *w /= s;
        }
        for (j, w) in col.iter().enumerate() {
            skinning_weights[(j, v)] = *w;
        }
    }
    let mut joint_regressor = DMatrix::zeros(k, n);
    for j in 0..k {
        let mut row: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s: f64 = row.iter().sum();
        for w in &mut row {
            *w /= s;
        }
        for (v, w) in row.iter().enumerate() {
            joint_regressor[(j, v)] = *w;
        }
    }
    let parents = (0..k)
        .map(|j| if j == 0 { None } else { Some(rng.random_range(0..j)) })
        .collect();
    let model = BodyModel {
        dims,
        template,
        faces: vec![[0, 1, 2]],
        parents,
        face_identity_basis,
        body_identity_basis,
        expression_basis,
        pose_basis,
        skinning_weights,
        joint_regressor,
    };
    model.validate().expect("random model must be valid");
    model
}

/// Random shape and pose for a model, with configurable scales.
pub fn random_params(
    model: &BodyModel,
    seed: u64,
    shape_scale: f64,
    pose_scale: f64,
) -> (ShapeParams, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ShapeParams {
        gamma: DVector::from_fn(model.dims.face_identity, |_, _| {
            shape_scale * (rng.random::<f64>() - 0.5)
        }),
        beta: DVector::from_fn(model.dims.body_identity, |_, _| {
            shape_scale * (rng.random::<f64>() - 0.5)
        }),
        psi: DVector::from_fn(model.dims.expression, |_, _| {
            shape_scale * (rng.random::<f64>() - 0.5)
        }),
    };
    let pose = Pose {
        theta: (0..model.dims.joints)
            .map(|_| {
                Vector3::new(
                    pose_scale * (rng.random::<f64>() - 0.5),
                    pose_scale * (rng.random::<f64>() - 0.5),
                    pose_scale * (rng.random::<f64>() - 0.5),
                )
            })
            .collect(),
        root_translation: Vector3::new(
            0.5 * (rng.random::<f64>() - 0.5),
            0.5 * (rng.random::<f64>() - 0.5),
            0.5 * (rng.random::<f64>() - 0.5),
        ),
    };
    (shape, pose)
}
