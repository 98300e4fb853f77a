//! Surface-map distances against a dense barycentric-grid sampling oracle.

use bodyfit::mesh::Mesh;
use bodyfit::topo::{bary_point, build_surface_map};
use bodyfit_testkit::oracle::grid_closest_distance;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn map_distance_matches_grid_oracle_on_quad() {
    let quad = Mesh::new(
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let targets: Vec<Vector3<f64>> = (0..25)
        .map(|_| {
            Vector3::new(
                3.0 * (rng.random::<f64>() - 0.5),
                3.0 * (rng.random::<f64>() - 0.5),
                2.0 * (rng.random::<f64>() - 0.5),
            )
        })
        .collect();
    let map = build_surface_map(&quad, &targets).unwrap();
    let resolution = 400;
    // Grid spacing bounds how far the sampled minimum can sit above the
    // true one.
    let grid_tol = 2.0 * (2.0f64).sqrt() / resolution as f64;
    for (p, entry) in targets.iter().zip(&map.entries) {
        let d_map = (p - bary_point(&quad, entry.tri, &entry.bary)).norm();
        let d_grid = grid_closest_distance(p, &quad, resolution);
        assert!(
            d_map <= d_grid + 1e-12,
            "map distance {d_map} exceeds grid minimum {d_grid}"
        );
        assert!(
            d_grid - d_map <= grid_tol,
            "map distance {d_map} is not within grid tolerance of {d_grid}"
        );
    }
}

#[test]
fn map_distance_matches_grid_oracle_on_bent_surface() {
    // Two triangles meeting at a ridge; exercises edge and corner regions.
    let bent = Mesh::new(
        vec![
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.6),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.3),
        ],
        vec![[0, 1, 3], [1, 2, 3]],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let targets: Vec<Vector3<f64>> = (0..25)
        .map(|_| {
            Vector3::new(
                4.0 * (rng.random::<f64>() - 0.5),
                3.0 * (rng.random::<f64>() - 0.5),
                3.0 * (rng.random::<f64>() - 0.5),
            )
        })
        .collect();
    let map = build_surface_map(&bent, &targets).unwrap();
    let resolution = 400;
    let grid_tol = 3.0 / resolution as f64;
    for (p, entry) in targets.iter().zip(&map.entries) {
        let d_map = (p - bary_point(&bent, entry.tri, &entry.bary)).norm();
        let d_grid = grid_closest_distance(p, &bent, resolution);
        assert!(d_map <= d_grid + 1e-12);
        assert!(d_grid - d_map <= grid_tol);
    }
}
