//! Mesh generation against a deliberately naive scalar oracle.

use bodyfit::model::{Pose, ShapeParams};
use bodyfit_testkit::oracle::{max_abs_diff, naive_generate_mesh, naive_joints, naive_unposed};
use bodyfit_testkit::random_model::{random_model, random_params};

#[test]
fn generate_mesh_matches_naive_oracle_on_twenty_models() {
    for seed in 0..20 {
        let model = random_model(seed);
        let (shape, pose) = random_params(&model, seed + 500, 1.0, 1.5);
        let mesh = model.generate_mesh(&shape, &pose).unwrap();
        let oracle = naive_generate_mesh(&model, &shape, &pose);
        let diff = max_abs_diff(&mesh, &oracle);
        assert!(
            diff < 1e-10,
            "seed {seed}: max abs diff {diff} (n={}, k={})",
            model.dims.vertices,
            model.dims.joints
        );
    }
}

#[test]
fn unposed_mesh_matches_naive_oracle() {
    for seed in 30..36 {
        let model = random_model(seed);
        let (shape, pose) = random_params(&model, seed + 700, 1.0, 1.0);
        let unposed = model.unposed_mesh(&shape, &pose).unwrap();
        let oracle = naive_unposed(&model, &shape, &pose);
        assert!(max_abs_diff(&unposed, &oracle) < 1e-12);
    }
}

#[test]
fn joint_locations_match_naive_oracle() {
    for seed in 40..46 {
        let model = random_model(seed);
        let (shape, _) = random_params(&model, seed + 900, 1.0, 0.0);
        let joints = model.joint_locations(&shape.gamma, &shape.beta).unwrap();
        let oracle = naive_joints(&model, &shape);
        for (got, want) in joints.iter().zip(&oracle) {
            for x in 0..3 {
                assert!((got[x] - want[x]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_case_is_exactly_the_template() {
    for seed in 50..55 {
        let model = random_model(seed);
        let shape = ShapeParams::zeros(&model.dims);
        let pose = Pose::identity(model.dims.joints);
        let mesh = model.generate_mesh(&shape, &pose).unwrap();
        let diff = (&mesh - &model.template).amax();
        assert!(diff < 1e-12);
    }
}
