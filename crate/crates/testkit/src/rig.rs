//! Camera rigs for synthetic scenes.

use bodyfit::math::rodrigues;
use bodyfit::scene::Camera;
use nalgebra::Vector3;

/// Cameras on a horizontal ring of the given radius, all aimed at the
/// vertical axis at the given height.
pub fn ring_cameras(count: usize, radius: f64, height: f64) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / count as f64;
            let rotation = Vector3::new(0.0, std::f64::consts::PI - angle, 0.0);
            let rot = rodrigues(&rotation);
            let position = Vector3::new(radius * angle.sin(), height, radius * angle.cos());
            Camera {
                fx: 800.0,
                fy: 800.0,
                cx: 640.0,
                cy: 480.0,
                rotation,
                translation: -(rot * position),
                width: 1280,
                height: 960,
            }
        })
        .collect()
}
