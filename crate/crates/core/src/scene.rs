//! Pinhole cameras, landmark definitions, and the synthetic observation
//! generator used by the fitting harness.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::rodrigues;
use crate::model::{BodyModel, ModelError, Pose, ShapeParams};

/// Points closer than this to the camera plane count as behind the camera.
pub const MIN_CAMERA_DEPTH: f64 = 1e-6;

/// Recorded landmark sigmas are floored at this value (pixels).
pub const MIN_SIGMA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("camera focal lengths must be positive (fx = {fx}, fy = {fy})")]
    BadFocal { fx: f64, fy: f64 },
    #[error("landmark index {index} out of range ({vertices} vertices)")]
    LandmarkIndex { index: u32, vertices: usize },
    #[error("duplicate landmark index {0}")]
    DuplicateLandmark(u32),
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pinhole camera: intrinsics in pixels, world-to-camera extrinsics as
/// axis-angle rotation plus translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::BadFocal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        rodrigues(&self.rotation) * p + self.translation
    }

    /// Projects a camera-frame point; errors when it is behind the camera.
    pub fn project_camera_point(&self, p_cam: &Vector3<f64>) -> Result<Vector2<f64>, SceneError> {
        if p_cam.z <= MIN_CAMERA_DEPTH {
            return Err(SceneError::BehindCamera(p_cam.z));
        }
        Ok(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    pub fn project(&self, world_point: &Vector3<f64>) -> Result<Vector2<f64>, SceneError> {
        self.project_camera_point(&self.world_to_camera(world_point))
    }
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>, SceneError> {
    let json = std::fs::read_to_string(path)?;
    let cameras: Vec<Camera> = serde_json::from_str(&json)?;
    for c in &cameras {
        c.validate()?;
    }
    Ok(cameras)
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<(), SceneError> {
    std::fs::write(path, serde_json::to_string_pretty(cameras)?)?;
    Ok(())
}

/// A named landmark set: vertex indices into the model mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkDef {
    pub name: String,
    pub indices: Vec<u32>,
}

impl LandmarkDef {
    pub fn validate(&self, vertices: usize) -> Result<(), SceneError> {
        let mut seen = std::collections::HashSet::new();
        for &index in &self.indices {
            if index as usize >= vertices {
                return Err(SceneError::LandmarkIndex { index, vertices });
            }
            if !seen.insert(index) {
                return Err(SceneError::DuplicateLandmark(index));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// One probabilistic 2D landmark measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkObservation {
    pub frame: usize,
    pub cam: usize,
    pub lm: usize,
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
}

impl LandmarkObservation {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.sigma > 0.0) {
            return Err(SceneError::BadSigma(self.sigma));
        }
        Ok(())
    }
}

/// Newline-delimited JSON, one observation per line.
pub fn write_observations(path: &Path, obs: &[LandmarkObservation]) -> Result<(), SceneError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for o in obs {
        serde_json::to_writer(&mut w, o)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path) -> Result<Vec<LandmarkObservation>, SceneError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let o: LandmarkObservation = serde_json::from_str(&line)?;
        o.validate()?;
        out.push(o);
    }
    Ok(out)
}

/// Bookkeeping from a synthesis run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthReport {
    pub observations: usize,
    pub behind_camera_drops: usize,
    pub per_camera_counts: Vec<usize>,
}

/// Projects the chosen landmark vertices of every frame into every camera,
/// adds isotropic Gaussian pixel noise of scale `noise_sigma`, and records
/// `sigma = max(noise_sigma, 0.1)`. Behind-camera landmarks are dropped and
/// counted. Noise streams are derived per frame from the root seed, so
/// results do not depend on evaluation order across frames.
pub fn generate_observations(
    model: &BodyModel,
    shape: &ShapeParams,
    poses: &[Pose],
    cameras: &[Camera],
    def: &LandmarkDef,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Vec<LandmarkObservation>, SynthReport), SceneError> {
    def.validate(model.dims.vertices)?;
    for c in cameras {
        c.validate()?;
    }
    let sigma = noise_sigma.max(MIN_SIGMA);
    let mut observations = Vec::new();
    let mut report = SynthReport {
        per_camera_counts: vec![0; cameras.len()],
        ..Default::default()
    };
    for (frame, pose) in poses.iter().enumerate() {
        let mesh = model.generate_mesh(shape, pose)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(frame as u64);
        for (cam_idx, camera) in cameras.iter().enumerate() {
            for (lm, &vertex) in def.indices.iter().enumerate() {
                let i = vertex as usize;
                let p = Vector3::new(mesh[3 * i], mesh[3 * i + 1], mesh[3 * i + 2]);
                match camera.project(&p) {
                    Ok(uv) => {
                        let nu: f64 = StandardNormal.sample(&mut rng);
                        let nv: f64 = StandardNormal.sample(&mut rng);
                        observations.push(LandmarkObservation {
                            frame,
                            cam: cam_idx,
                            lm,
                            u: uv.x + noise_sigma * nu,
                            v: uv.y + noise_sigma * nv,
                            sigma,
                        });
                        report.per_camera_counts[cam_idx] += 1;
                    }
                    Err(SceneError::BehindCamera(_)) => {
                        report.behind_camera_drops += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    report.observations = observations.len();
    Ok((observations, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn simple_camera() -> Camera {
        Camera {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
            width: 640,
            height: 480,
        }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = simple_camera();
        let uv = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(uv, Vector2::new(320.0, 240.0), epsilon = 1e-12);
    }

    #[test]
    fn unit_intrinsics_divide_by_depth() {
        let cam = Camera {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            ..simple_camera()
        };
        let uv = cam.project(&Vector3::new(1.0, 2.0, 2.0)).unwrap();
        assert_relative_eq!(uv, Vector2::new(0.5, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = simple_camera();
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(SceneError::BehindCamera(_))
        ));
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(SceneError::BehindCamera(_))
        ));
    }

    #[test]
    fn projection_is_scale_invariant_along_the_ray() {
        let cam = simple_camera();
        let p = Vector3::new(0.3, -0.2, 2.0);
        let base = cam.project_camera_point(&p).unwrap();
        for lambda in [0.5, 2.0, 7.5] {
            let uv = cam.project_camera_point(&(p * lambda)).unwrap();
            assert_relative_eq!(uv, base, epsilon = 1e-9);
        }
    }

    #[test]
    fn landmark_def_validation() {
        let def = LandmarkDef {
            name: "test".into(),
            indices: vec![0, 3, 7],
        };
        assert!(def.validate(8).is_ok());
        assert!(matches!(
            def.validate(7),
            Err(SceneError::LandmarkIndex { index: 7, .. })
        ));
        let dup = LandmarkDef {
            name: "dup".into(),
            indices: vec![1, 1],
        };
        assert!(matches!(
            dup.validate(8),
            Err(SceneError::DuplicateLandmark(1))
        ));
    }

    fn flat_test_model() -> BodyModel {
        // 3 vertices pinned to one root joint.
        let dims = crate::model::ModelDims {
            vertices: 3,
            joints: 1,
            face_identity: 0,
            body_identity: 0,
            expression: 0,
        };
        BodyModel {
            dims,
            template: DVector::from_vec(vec![
                0.0, 0.0, 2.0, //
                0.2, 0.1, 2.5, //
                -0.3, 0.2, 3.0,
            ]),
            faces: vec![[0, 1, 2]],
            parents: vec![None],
            face_identity_basis: DMatrix::zeros(9, 0),
            body_identity_basis: DMatrix::zeros(9, 0),
            expression_basis: DMatrix::zeros(9, 0),
            pose_basis: DMatrix::zeros(9, 0),
            skinning_weights: DMatrix::from_element(1, 3, 1.0),
            joint_regressor: DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        }
    }

    #[test]
    fn zero_noise_observations_equal_projections() {
        let model = flat_test_model();
        let shape = ShapeParams::zeros(&model.dims);
        let poses = vec![Pose::identity(1)];
        let cameras = vec![simple_camera()];
        let def = LandmarkDef {
            name: "all".into(),
            indices: vec![0, 1, 2],
        };
        let (obs, report) =
            generate_observations(&model, &shape, &poses, &cameras, &def, 0.0, 42).unwrap();
        assert_eq!(obs.len(), 3);
        assert_eq!(report.behind_camera_drops, 0);
        for o in &obs {
            let i = def.indices[o.lm] as usize;
            let p = Vector3::new(
                model.template[3 * i],
                model.template[3 * i + 1],
                model.template[3 * i + 2],
            );
            let uv = cameras[0].project(&p).unwrap();
            assert_eq!((o.u, o.v), (uv.x, uv.y));
            assert_eq!(o.sigma, MIN_SIGMA);
        }
    }

    #[test]
    fn camera_facing_away_sees_nothing() {
        let model = flat_test_model();
        let shape = ShapeParams::zeros(&model.dims);
        let poses = vec![Pose::identity(1)];
        // Rotate camera 180 degrees about y: scene is now behind it.
        let cameras = vec![Camera {
            rotation: Vector3::new(0.0, std::f64::consts::PI, 0.0),
            ..simple_camera()
        }];
        let def = LandmarkDef {
            name: "all".into(),
            indices: vec![0, 1, 2],
        };
        let (obs, report) =
            generate_observations(&model, &shape, &poses, &cameras, &def, 0.0, 0).unwrap();
        assert!(obs.is_empty());
        assert_eq!(report.behind_camera_drops, 3);
    }

    #[test]
    fn noise_std_matches_requested_sigma() {
        let model = flat_test_model();
        let shape = ShapeParams::zeros(&model.dims);
        let poses: Vec<Pose> = (0..200).map(|_| Pose::identity(1)).collect();
        let cameras = vec![simple_camera(); 9];
        let def = LandmarkDef {
            name: "all".into(),
            indices: vec![0, 1, 2],
        };
        let sigma = 2.0;
        let (obs, _) =
            generate_observations(&model, &shape, &poses, &cameras, &def, sigma, 3).unwrap();
        assert!(obs.len() >= 4000);
        let mut sum2 = 0.0;
        let mut count = 0usize;
        for o in &obs {
            let i = def.indices[o.lm] as usize;
            let p = Vector3::new(
                model.template[3 * i],
                model.template[3 * i + 1],
                model.template[3 * i + 2],
            );
            let uv = cameras[o.cam].project(&p).unwrap();
            sum2 += (o.u - uv.x).powi(2) + (o.v - uv.y).powi(2);
            count += 2;
        }
        let std = (sum2 / count as f64).sqrt();
        // 3-sigma Monte Carlo band for the sample std of ~10^4 draws.
        let band = 3.0 * sigma / (2.0 * count as f64).sqrt();
        assert!(
            (std - sigma).abs() < band,
            "std {std} not within {band} of {sigma}"
        );
    }

    #[test]
    fn observation_generation_is_deterministic() {
        let model = flat_test_model();
        let shape = ShapeParams::zeros(&model.dims);
        let poses = vec![Pose::identity(1); 3];
        let cameras = vec![simple_camera(); 2];
        let def = LandmarkDef {
            name: "all".into(),
            indices: vec![0, 1, 2],
        };
        let (a, _) =
            generate_observations(&model, &shape, &poses, &cameras, &def, 1.5, 11).unwrap();
        let (b, _) =
            generate_observations(&model, &shape, &poses, &cameras, &def, 1.5, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn observation_ndjson_round_trip() {
        let obs = vec![
            LandmarkObservation {
                frame: 0,
                cam: 1,
                lm: 2,
                u: 10.25,
                v: -3.75,
                sigma: 0.5,
            },
            LandmarkObservation {
                frame: 1,
                cam: 0,
                lm: 0,
                u: 0.1,
                v: 0.2,
                sigma: 1.0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.ndjson");
        write_observations(&path, &obs).unwrap();
        let back = read_observations(&path).unwrap();
        assert_eq!(obs, back);
    }
}
