//! Packing of the fit parameter block into a flat vector.
//!
//! Order: `[gamma | beta | psi per frame | (theta, root translation) per
//! frame | (rotation, translation) per camera]`.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::model::Pose;

/// The full parameter block of a fit: shared identity, per-frame expression
/// and pose, and per-camera extrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    /// Per-frame expression coefficients.
    pub psi: Vec<DVector<f64>>,
    /// Per-frame axis-angle joint rotations.
    pub theta: Vec<Vec<Vector3<f64>>>,
    /// Per-frame root translation.
    pub root_translation: Vec<Vector3<f64>>,
    /// Per-camera world-to-camera axis-angle rotation.
    pub camera_rotation: Vec<Vector3<f64>>,
    /// Per-camera world-to-camera translation.
    pub camera_translation: Vec<Vector3<f64>>,
}

impl FitParams {
    pub fn n_frames(&self) -> usize {
        self.theta.len()
    }

    pub fn n_cameras(&self) -> usize {
        self.camera_rotation.len()
    }

    pub fn pose_for_frame(&self, f: usize) -> Pose {
        Pose {
            theta: self.theta[f].clone(),
            root_translation: self.root_translation[f],
        }
    }

    pub fn is_finite(&self) -> bool {
        let vecs_ok = |vs: &[Vector3<f64>]| vs.iter().all(|v| v.iter().all(|x| x.is_finite()));
        self.gamma.iter().all(|v| v.is_finite())
            && self.beta.iter().all(|v| v.is_finite())
            && self.psi.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && self.theta.iter().all(|t| vecs_ok(t))
            && vecs_ok(&self.root_translation)
            && vecs_ok(&self.camera_rotation)
            && vecs_ok(&self.camera_translation)
    }
}

/// Sizes and offsets of every block inside the packed parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_gamma: usize,
    pub n_beta: usize,
    pub n_psi: usize,
    pub n_joints: usize,
    pub n_frames: usize,
    pub n_cameras: usize,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.n_gamma
            + self.n_beta
            + self.n_frames * self.n_psi
            + self.n_frames * (3 * self.n_joints + 3)
            + self.n_cameras * 6
    }

    /// Per-frame human block size `[gamma | beta | psi | theta | root]` used
    /// by the kinematics Jacobian.
    pub fn frame_human(&self) -> usize {
        self.n_gamma + self.n_beta + self.n_psi + 3 * self.n_joints + 3
    }

    pub fn gamma_offset(&self) -> usize {
        0
    }

    pub fn beta_offset(&self) -> usize {
        self.n_gamma
    }

    pub fn psi_offset(&self, frame: usize) -> usize {
        self.n_gamma + self.n_beta + frame * self.n_psi
    }

    pub fn theta_offset(&self, frame: usize) -> usize {
        self.n_gamma
            + self.n_beta
            + self.n_frames * self.n_psi
            + frame * (3 * self.n_joints + 3)
    }

    pub fn root_offset(&self, frame: usize) -> usize {
        self.theta_offset(frame) + 3 * self.n_joints
    }

    pub fn camera_rotation_offset(&self, cam: usize) -> usize {
        self.n_gamma
            + self.n_beta
            + self.n_frames * self.n_psi
            + self.n_frames * (3 * self.n_joints + 3)
            + cam * 6
    }

    pub fn camera_translation_offset(&self, cam: usize) -> usize {
        self.camera_rotation_offset(cam) + 3
    }

    pub fn pack(&self, p: &FitParams) -> DVector<f64> {
        let mut x = DVector::zeros(self.total());
        x.rows_mut(self.gamma_offset(), self.n_gamma).copy_from(&p.gamma);
        x.rows_mut(self.beta_offset(), self.n_beta).copy_from(&p.beta);
        for f in 0..self.n_frames {
            x.rows_mut(self.psi_offset(f), self.n_psi).copy_from(&p.psi[f]);
            let t0 = self.theta_offset(f);
            for (j, aa) in p.theta[f].iter().enumerate() {
                x[t0 + 3 * j] = aa.x;
                x[t0 + 3 * j + 1] = aa.y;
                x[t0 + 3 * j + 2] = aa.z;
            }
            let r0 = self.root_offset(f);
            x[r0] = p.root_translation[f].x;
            x[r0 + 1] = p.root_translation[f].y;
            x[r0 + 2] = p.root_translation[f].z;
        }
        for c in 0..self.n_cameras {
            let ro = self.camera_rotation_offset(c);
            let to = self.camera_translation_offset(c);
            for i in 0..3 {
                x[ro + i] = p.camera_rotation[c][i];
                x[to + i] = p.camera_translation[c][i];
            }
        }
        x
    }

    pub fn unpack(&self, x: &DVector<f64>) -> FitParams {
        let vec3 = |off: usize| Vector3::new(x[off], x[off + 1], x[off + 2]);
        FitParams {
            gamma: x.rows(self.gamma_offset(), self.n_gamma).into_owned(),
            beta: x.rows(self.beta_offset(), self.n_beta).into_owned(),
            psi: (0..self.n_frames)
                .map(|f| x.rows(self.psi_offset(f), self.n_psi).into_owned())
                .collect(),
            theta: (0..self.n_frames)
                .map(|f| {
                    let t0 = self.theta_offset(f);
                    (0..self.n_joints).map(|j| vec3(t0 + 3 * j)).collect()
                })
                .collect(),
            root_translation: (0..self.n_frames)
                .map(|f| vec3(self.root_offset(f)))
                .collect(),
            camera_rotation: (0..self.n_cameras)
                .map(|c| vec3(self.camera_rotation_offset(c)))
                .collect(),
            camera_translation: (0..self.n_cameras)
                .map(|c| vec3(self.camera_translation_offset(c)))
                .collect(),
        }
    }
}

/// Which parameter blocks stay fixed during optimization.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeSpec {
    pub cameras: bool,
    /// Freezes gamma and beta.
    pub shape: bool,
    pub expression: bool,
    /// Freezes all joint rotations (overridden by `free_joints`).
    pub pose: bool,
    pub root_translation: bool,
    /// When set, exactly these joints stay free regardless of `pose`.
    pub free_joints: Option<Vec<usize>>,
}

impl FreezeSpec {
    /// Indices of free (optimizable) parameters under this spec.
    pub fn free_indices(&self, layout: &ParamLayout) -> Vec<usize> {
        let mut free = Vec::with_capacity(layout.total());
        if !self.shape {
            free.extend(layout.gamma_offset()..layout.gamma_offset() + layout.n_gamma);
            free.extend(layout.beta_offset()..layout.beta_offset() + layout.n_beta);
        }
        for f in 0..layout.n_frames {
            if !self.expression {
                free.extend(layout.psi_offset(f)..layout.psi_offset(f) + layout.n_psi);
            }
            let t0 = layout.theta_offset(f);
            for j in 0..layout.n_joints {
                let joint_free = match &self.free_joints {
                    Some(list) => list.contains(&j),
                    None => !self.pose,
                };
                if joint_free {
                    free.extend(t0 + 3 * j..t0 + 3 * j + 3);
                }
            }
            if !self.root_translation {
                free.extend(layout.root_offset(f)..layout.root_offset(f) + 3);
            }
        }
        if !self.cameras {
            for c in 0..layout.n_cameras {
                let ro = layout.camera_rotation_offset(c);
                free.extend(ro..ro + 6);
            }
        }
        free
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ParamLayout {
        ParamLayout {
            n_gamma: 2,
            n_beta: 3,
            n_psi: 2,
            n_joints: 4,
            n_frames: 2,
            n_cameras: 3,
        }
    }

    fn params(l: &ParamLayout) -> FitParams {
        let mut counter = 0.0;
        let mut next = || {
            counter += 1.0;
            counter
        };
        FitParams {
            gamma: DVector::from_fn(l.n_gamma, |_, _| next()),
            beta: DVector::from_fn(l.n_beta, |_, _| next()),
            psi: (0..l.n_frames)
                .map(|_| DVector::from_fn(l.n_psi, |_, _| next()))
                .collect(),
            theta: (0..l.n_frames)
                .map(|_| {
                    (0..l.n_joints)
                        .map(|_| Vector3::new(next(), next(), next()))
                        .collect()
                })
                .collect(),
            root_translation: (0..l.n_frames)
                .map(|_| Vector3::new(next(), next(), next()))
                .collect(),
            camera_rotation: (0..l.n_cameras)
                .map(|_| Vector3::new(next(), next(), next()))
                .collect(),
            camera_translation: (0..l.n_cameras)
                .map(|_| Vector3::new(next(), next(), next()))
                .collect(),
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let l = layout();
        let p = params(&l);
        let x = l.pack(&p);
        assert_eq!(x.len(), l.total());
        // Every slot filled exactly once with distinct values.
        let mut sorted: Vec<f64> = x.iter().cloned().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (i, v) in sorted.iter().enumerate() {
            assert_eq!(*v, (i + 1) as f64);
        }
        assert_eq!(l.unpack(&x), p);
    }

    #[test]
    fn default_freeze_frees_everything() {
        let l = layout();
        let free = FreezeSpec::default().free_indices(&l);
        assert_eq!(free.len(), l.total());
    }

    #[test]
    fn freeze_cameras_removes_camera_block() {
        let l = layout();
        let spec = FreezeSpec {
            cameras: true,
            ..Default::default()
        };
        let free = spec.free_indices(&l);
        assert_eq!(free.len(), l.total() - 6 * l.n_cameras);
        assert!(free.iter().all(|&i| i < l.camera_rotation_offset(0)));
    }

    #[test]
    fn free_joint_list_overrides_pose_flag() {
        let l = layout();
        let spec = FreezeSpec {
            pose: true,
            free_joints: Some(vec![1, 3]),
            ..Default::default()
        };
        let free = spec.free_indices(&l);
        let t0 = l.theta_offset(0);
        assert!(free.contains(&(t0 + 3)));
        assert!(!free.contains(&t0));
        assert!(free.contains(&(t0 + 9)));
    }
}
