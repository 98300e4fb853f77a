//! Energy terms of the multi-view fit and their residual/Jacobian forms.
//!
//! The data term is a Gaussian negative log-likelihood over 2D landmark
//! observations; regularizers are L2 priors (body identity, expression,
//! optionally face identity), GMM negative log densities (face identity when
//! fitted, body pose, each hand), a squared temporal difference on theta and
//! psi, and a pluggable intersection slot that defaults to zero.
//!
//! For the Levenberg-Marquardt step, GMM terms enter through their EM
//! surrogate: with responsibilities frozen at the current iterate, the rows
//! `sqrt(w resp_k) (x - mu_k) / sigma_k` have the same gradient as the true
//! negative log density, so steps use a Gauss-Newton model of a majorizer
//! while acceptance is always decided on the true energy.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{rodrigues, rodrigues_jacobian};
use crate::model::{BodyModel, ModelError};
use crate::poselib::{GmmModel, PoseError};
use crate::scene::{Camera, LandmarkDef, LandmarkObservation, SceneError, MIN_CAMERA_DEPTH};

use super::kinematics::{frame_kinematics, FrameKinematics, KinematicsCache};
use super::layout::ParamLayout;

/// Energy added per predicted landmark that falls behind its camera. No
/// gradient is propagated past the depth barrier.
pub const BEHIND_CAMERA_PENALTY: f64 = 1e6;

/// GMM components below this responsibility are skipped in the residual
/// model.
const RESPONSIBILITY_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("observation {index} references {what} {got} out of range {max}")]
    BadObservation {
        index: usize,
        what: &'static str,
        got: usize,
        max: usize,
    },
    #[error("energy weight {0} is negative")]
    NegativeWeight(&'static str),
    #[error("pose prior {what}: gmm dim {got}, block needs {expected}")]
    PriorDim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("prior joint index {0} out of range")]
    PriorJoint(usize),
    #[error("energy is not finite at the initial parameters")]
    NonFiniteEnergy,
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pose(#[from] PoseError),
}

/// One non-negative multiplier per energy term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyWeights {
    pub landmarks: f64,
    pub face_identity: f64,
    pub body_identity: f64,
    pub expression: f64,
    pub pose: f64,
    pub temporal: f64,
    pub intersect: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            landmarks: 1.0,
            face_identity: 1e-4,
            body_identity: 1e-4,
            expression: 1e-4,
            pose: 1e-4,
            temporal: 1e-4,
            intersect: 0.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<(), FitError> {
        let named = [
            ("landmarks", self.landmarks),
            ("face_identity", self.face_identity),
            ("body_identity", self.body_identity),
            ("expression", self.expression),
            ("pose", self.pose),
            ("temporal", self.temporal),
            ("intersect", self.intersect),
        ];
        for (name, v) in named {
            if v < 0.0 {
                return Err(FitError::NegativeWeight(name));
            }
        }
        Ok(())
    }

    /// Data term only; handy for tests that need an exact optimum.
    pub fn landmarks_only() -> Self {
        Self {
            landmarks: 1.0,
            face_identity: 0.0,
            body_identity: 0.0,
            expression: 0.0,
            pose: 0.0,
            temporal: 0.0,
            intersect: 0.0,
        }
    }
}

/// Raw (unweighted) value of every term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub landmarks: f64,
    pub face_identity: f64,
    pub body_identity: f64,
    pub expression: f64,
    pub pose: f64,
    pub temporal: f64,
    pub intersect: f64,
    pub total: f64,
}

/// A GMM prior over a block of joints (3 dims per joint, flattened in joint
/// order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePrior {
    pub joints: Vec<usize>,
    pub gmm: GmmModel,
}

/// The three pose priors: body (hands and eyes excluded) and one per hand.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PosePriorSet {
    pub body: Option<PosePrior>,
    pub left_hand: Option<PosePrior>,
    pub right_hand: Option<PosePrior>,
}

impl PosePriorSet {
    fn entries(&self) -> [(&'static str, Option<&PosePrior>); 3] {
        [
            ("body", self.body.as_ref()),
            ("left_hand", self.left_hand.as_ref()),
            ("right_hand", self.right_hand.as_ref()),
        ]
    }
}

/// Priors available to the fit. Face identity uses the GMM when present and
/// an L2 prior otherwise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitPriors {
    pub face_identity: Option<GmmModel>,
    pub pose: PosePriorSet,
}

/// Pluggable intersection penalty: maps the packed parameter vector to a
/// value and gradient.
pub type IntersectTerm = Box<dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + Send + Sync>;

/// `weight * |x|^2` with gradient `2 weight x`.
pub fn e_l2(x: &DVector<f64>, weight: f64) -> (f64, DVector<f64>) {
    (weight * x.norm_squared(), 2.0 * weight * x)
}

/// Negative log density of a diagonal GMM, with analytic gradient
/// `sum_k resp_k (x - mu_k) / var_k`.
pub fn e_gmm(x: &DVector<f64>, gmm: &GmmModel) -> (f64, DVector<f64>) {
    let value = -gmm.log_density(x);
    let resp = gmm.responsibilities(x);
    let mut grad = DVector::zeros(x.len());
    for (k, r) in resp.iter().enumerate() {
        if *r < RESPONSIBILITY_FLOOR {
            continue;
        }
        for d in 0..x.len() {
            grad[d] += r * (x[d] - gmm.means[k][d]) / gmm.variances[k][d];
        }
    }
    (value, grad)
}

/// Sum of squared frame-to-frame differences with per-frame gradients.
pub fn e_temporal(frames: &[DVector<f64>]) -> (f64, Vec<DVector<f64>>) {
    let mut value = 0.0;
    let mut grads: Vec<DVector<f64>> = frames
        .iter()
        .map(|f| DVector::zeros(f.len()))
        .collect();
    for f in 1..frames.len() {
        let diff = &frames[f] - &frames[f - 1];
        value += diff.norm_squared();
        grads[f] += 2.0 * &diff;
        grads[f - 1] -= 2.0 * &diff;
    }
    (value, grads)
}

/// Sparse residual row: global column indices with coefficients.
struct Row {
    residual: f64,
    entries: Vec<(usize, f64)>,
}

/// A fully specified fitting problem over one model, one landmark set and a
/// batch of observations.
pub struct FitProblem<'a> {
    pub model: &'a BodyModel,
    /// Intrinsics and image sizes; extrinsics come from the parameters.
    pub cameras: Vec<Camera>,
    pub def: LandmarkDef,
    pub observations: Vec<LandmarkObservation>,
    pub priors: FitPriors,
    pub weights: EnergyWeights,
    pub layout: ParamLayout,
    pub intersect: Option<IntersectTerm>,
    obs_by_frame: Vec<Vec<usize>>,
    cache: KinematicsCache,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        model: &'a BodyModel,
        cameras: Vec<Camera>,
        def: LandmarkDef,
        observations: Vec<LandmarkObservation>,
        n_frames: usize,
        priors: FitPriors,
        weights: EnergyWeights,
    ) -> Result<Self, FitError> {
        weights.validate()?;
        def.validate(model.dims.vertices)?;
        for c in &cameras {
            c.validate()?;
        }
        let layout = ParamLayout {
            n_gamma: model.dims.face_identity,
            n_beta: model.dims.body_identity,
            n_psi: model.dims.expression,
            n_joints: model.dims.joints,
            n_frames,
            n_cameras: cameras.len(),
        };
        let mut obs_by_frame = vec![Vec::new(); n_frames];
        for (index, o) in observations.iter().enumerate() {
            o.validate()?;
            let checks = [
                ("frame", o.frame, n_frames),
                ("camera", o.cam, cameras.len()),
                ("landmark", o.lm, def.len()),
            ];
            for (what, got, max) in checks {
                if got >= max {
                    return Err(FitError::BadObservation {
                        index,
                        what,
                        got,
                        max,
                    });
                }
            }
            obs_by_frame[o.frame].push(index);
        }
        for (what, prior) in priors.pose.entries() {
            if let Some(p) = prior {
                for &j in &p.joints {
                    if j >= model.dims.joints {
                        return Err(FitError::PriorJoint(j));
                    }
                }
                if p.gmm.dim() != 3 * p.joints.len() {
                    return Err(FitError::PriorDim {
                        what,
                        expected: 3 * p.joints.len(),
                        got: p.gmm.dim(),
                    });
                }
            }
        }
        if let Some(gmm) = &priors.face_identity {
            if gmm.dim() != model.dims.face_identity {
                return Err(FitError::PriorDim {
                    what: "face_identity",
                    expected: model.dims.face_identity,
                    got: gmm.dim(),
                });
            }
        }
        let cache = KinematicsCache::build(
            model,
            def.indices.iter().map(|&i| i as usize).collect(),
        );
        Ok(Self {
            model,
            cameras,
            def,
            observations,
            priors,
            weights,
            layout,
            intersect: None,
            obs_by_frame,
            cache,
        })
    }

    fn frame_kin(&self, x: &DVector<f64>, frame: usize, with_jac: bool) -> FrameKinematics {
        let l = &self.layout;
        let gamma = x.rows(l.gamma_offset(), l.n_gamma).into_owned();
        let beta = x.rows(l.beta_offset(), l.n_beta).into_owned();
        let psi = x.rows(l.psi_offset(frame), l.n_psi).into_owned();
        let t0 = l.theta_offset(frame);
        let theta: Vec<Vector3<f64>> = (0..l.n_joints)
            .map(|j| Vector3::new(x[t0 + 3 * j], x[t0 + 3 * j + 1], x[t0 + 3 * j + 2]))
            .collect();
        let r0 = l.root_offset(frame);
        let root = Vector3::new(x[r0], x[r0 + 1], x[r0 + 2]);
        frame_kinematics(
            self.model, &self.cache, l, &gamma, &beta, &psi, &theta, &root, with_jac,
        )
    }

    fn camera_at(&self, x: &DVector<f64>, cam: usize) -> Camera {
        let l = &self.layout;
        let ro = l.camera_rotation_offset(cam);
        let to = l.camera_translation_offset(cam);
        Camera {
            rotation: Vector3::new(x[ro], x[ro + 1], x[ro + 2]),
            translation: Vector3::new(x[to], x[to + 1], x[to + 2]),
            ..self.cameras[cam]
        }
    }

    /// GNLL landmark energy plus behind-camera penalties (raw value and raw
    /// gradient over the packed parameters).
    pub fn e_landmarks(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (v, g, _) = self.landmarks_impl(x, true);
        (v, g.expect("gradient requested"))
    }

    /// Landmark energy only (no gradient allocation).
    pub fn e_landmarks_value(&self, x: &DVector<f64>) -> f64 {
        self.landmarks_impl(x, false).0
    }

    #[allow(clippy::type_complexity)]
    fn landmarks_impl(
        &self,
        x: &DVector<f64>,
        with_grad: bool,
    ) -> (f64, Option<DVector<f64>>, Vec<Row>) {
        let l = &self.layout;
        let mut value = 0.0;
        let mut grad = with_grad.then(|| DVector::zeros(l.total()));
        let mut rows = Vec::new();
        let sqrt_w = self.weights.landmarks.sqrt();

        for frame in 0..l.n_frames {
            if self.obs_by_frame[frame].is_empty() {
                continue;
            }
            let kin = self.frame_kin(x, frame, with_grad);
            // Camera data reused across observations in this frame.
            let cams: Vec<(Camera, Matrix3<f64>, [Matrix3<f64>; 3])> = (0..self.cameras.len())
                .map(|c| {
                    let cam = self.camera_at(x, c);
                    let rot = rodrigues(&cam.rotation);
                    let drot = rodrigues_jacobian(&cam.rotation);
                    (cam, rot, drot)
                })
                .collect();

            for &oi in &self.obs_by_frame[frame] {
                let o = &self.observations[oi];
                let (cam, rot, drot) = &cams[o.cam];
                let p_world = kin.positions[o.lm];
                let p_cam = rot * p_world + cam.translation;
                if p_cam.z <= MIN_CAMERA_DEPTH {
                    value += BEHIND_CAMERA_PENALTY;
                    continue;
                }
                let uv = Vector2::new(
                    cam.fx * p_cam.x / p_cam.z + cam.cx,
                    cam.fy * p_cam.y / p_cam.z + cam.cy,
                );
                let delta = uv - Vector2::new(o.u, o.v);
                let inv_sigma2 = 1.0 / (o.sigma * o.sigma);
                value += 0.5 * delta.norm_squared() * inv_sigma2;

                if !with_grad {
                    continue;
                }
                let z = p_cam.z;
                let duv_dpc = Matrix2x3::new(
                    cam.fx / z,
                    0.0,
                    -cam.fx * p_cam.x / (z * z),
                    0.0,
                    cam.fy / z,
                    -cam.fy * p_cam.y / (z * z),
                );
                let jac_h = &kin.jacobians.as_ref().expect("jacobians requested")[o.lm];
                // 2 x frame_human block.
                let duv_dh = duv_dpc * rot * jac_h;
                // 2 x 3 camera blocks.
                let mut dpc_drho = Matrix3::zeros();
                for c in 0..3 {
                    dpc_drho.set_column(c, &(drot[c] * p_world));
                }
                let duv_drho = duv_dpc * dpc_drho;
                let duv_dt = duv_dpc;

                // Scatter into the global gradient.
                let g = grad.as_mut().unwrap();
                let ph = l.frame_human();
                let mut scatter = |row_scale: Vector2<f64>| {
                    // human block cols -> global cols
                    for hc in 0..ph {
                        let gcol = human_col_to_global(l, frame, hc);
                        g[gcol] += row_scale.x * duv_dh[(0, hc)] + row_scale.y * duv_dh[(1, hc)];
                    }
                    let ro = l.camera_rotation_offset(o.cam);
                    let to = l.camera_translation_offset(o.cam);
                    for c in 0..3 {
                        g[ro + c] +=
                            row_scale.x * duv_drho[(0, c)] + row_scale.y * duv_drho[(1, c)];
                        g[to + c] += row_scale.x * duv_dt[(0, c)] + row_scale.y * duv_dt[(1, c)];
                    }
                };
                scatter(delta * inv_sigma2);

                // Residual rows for the LM system.
                let scale = sqrt_w / o.sigma;
                for r in 0..2 {
                    let mut entries = Vec::with_capacity(ph + 6);
                    for hc in 0..ph {
                        let v = duv_dh[(r, hc)];
                        if v != 0.0 {
                            entries.push((human_col_to_global(l, frame, hc), scale * v));
                        }
                    }
                    let ro = l.camera_rotation_offset(o.cam);
                    let to = l.camera_translation_offset(o.cam);
                    for c in 0..3 {
                        entries.push((ro + c, scale * duv_drho[(r, c)]));
                        entries.push((to + c, scale * duv_dt[(r, c)]));
                    }
                    rows.push(Row {
                        residual: scale * delta[r],
                        entries,
                    });
                }
            }
        }
        (value, grad, rows)
    }

    fn pose_block(&self, x: &DVector<f64>, frame: usize, joints: &[usize]) -> DVector<f64> {
        let t0 = self.layout.theta_offset(frame);
        let mut out = DVector::zeros(3 * joints.len());
        for (bi, &j) in joints.iter().enumerate() {
            for c in 0..3 {
                out[3 * bi + c] = x[t0 + 3 * j + c];
            }
        }
        out
    }

    /// Raw face identity prior: GMM negative log density when fitted, else
    /// squared norm.
    pub fn e_face_identity(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = &self.layout;
        let gamma = x.rows(l.gamma_offset(), l.n_gamma).into_owned();
        let mut grad = DVector::zeros(l.total());
        let value = match &self.priors.face_identity {
            Some(gmm) => {
                let (v, g) = e_gmm(&gamma, gmm);
                grad.rows_mut(l.gamma_offset(), l.n_gamma).copy_from(&g);
                v
            }
            None => {
                let (v, g) = e_l2(&gamma, 1.0);
                grad.rows_mut(l.gamma_offset(), l.n_gamma).copy_from(&g);
                v
            }
        };
        (value, grad)
    }

    /// Raw body identity prior (L2 on beta).
    pub fn e_body_identity(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = &self.layout;
        let beta = x.rows(l.beta_offset(), l.n_beta).into_owned();
        let (v, g) = e_l2(&beta, 1.0);
        let mut grad = DVector::zeros(l.total());
        grad.rows_mut(l.beta_offset(), l.n_beta).copy_from(&g);
        (v, grad)
    }

    /// Raw expression prior (L2 on every frame's psi).
    pub fn e_expression(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = &self.layout;
        let mut value = 0.0;
        let mut grad = DVector::zeros(l.total());
        for f in 0..l.n_frames {
            let psi = x.rows(l.psi_offset(f), l.n_psi).into_owned();
            let (v, g) = e_l2(&psi, 1.0);
            value += v;
            grad.rows_mut(l.psi_offset(f), l.n_psi).copy_from(&g);
        }
        (value, grad)
    }

    /// Raw pose prior: sum of the three GMM negative log densities over all
    /// frames.
    pub fn e_pose_prior(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = &self.layout;
        let mut value = 0.0;
        let mut grad = DVector::zeros(l.total());
        for f in 0..l.n_frames {
            for (_, prior) in self.priors.pose.entries() {
                let Some(p) = prior else { continue };
                let block = self.pose_block(x, f, &p.joints);
                let (v, g) = e_gmm(&block, &p.gmm);
                value += v;
                let t0 = l.theta_offset(f);
                for (bi, &j) in p.joints.iter().enumerate() {
                    for c in 0..3 {
                        grad[t0 + 3 * j + c] += g[3 * bi + c];
                    }
                }
            }
        }
        (value, grad)
    }

    /// Raw temporal term over theta and psi blocks.
    pub fn e_temporal_term(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let l = &self.layout;
        let mut grad = DVector::zeros(l.total());
        if l.n_frames < 2 {
            return (0.0, grad);
        }
        let thetas: Vec<DVector<f64>> = (0..l.n_frames)
            .map(|f| x.rows(l.theta_offset(f), 3 * l.n_joints).into_owned())
            .collect();
        let psis: Vec<DVector<f64>> = (0..l.n_frames)
            .map(|f| x.rows(l.psi_offset(f), l.n_psi).into_owned())
            .collect();
        let (vt, gt) = e_temporal(&thetas);
        let (vp, gp) = e_temporal(&psis);
        for f in 0..l.n_frames {
            grad.rows_mut(l.theta_offset(f), 3 * l.n_joints)
                .copy_from(&gt[f]);
            grad.rows_mut(l.psi_offset(f), l.n_psi).copy_from(&gp[f]);
        }
        (vt + vp, grad)
    }

    /// True energy breakdown at `x` (no gradients).
    pub fn energy(&self, x: &DVector<f64>) -> EnergyBreakdown {
        let mut bd = EnergyBreakdown {
            landmarks: self.e_landmarks_value(x),
            ..Default::default()
        };
        let l = &self.layout;
        let gamma = x.rows(l.gamma_offset(), l.n_gamma).into_owned();
        bd.face_identity = match &self.priors.face_identity {
            Some(gmm) => -gmm.log_density(&gamma),
            None => gamma.norm_squared(),
        };
        bd.body_identity = x.rows(l.beta_offset(), l.n_beta).norm_squared();
        for f in 0..l.n_frames {
            bd.expression += x.rows(l.psi_offset(f), l.n_psi).norm_squared();
            for (_, prior) in self.priors.pose.entries() {
                let Some(p) = prior else { continue };
                bd.pose += -p.gmm.log_density(&self.pose_block(x, f, &p.joints));
            }
        }
        for f in 1..l.n_frames {
            bd.temporal += (x.rows(l.theta_offset(f), 3 * l.n_joints)
                - x.rows(l.theta_offset(f - 1), 3 * l.n_joints))
            .norm_squared();
            bd.temporal += (x.rows(l.psi_offset(f), l.n_psi)
                - x.rows(l.psi_offset(f - 1), l.n_psi))
            .norm_squared();
        }
        if let Some(term) = &self.intersect {
            bd.intersect = term(x).0;
        }
        bd.total = self.weighted_total(&bd);
        bd
    }

    pub fn weighted_total(&self, bd: &EnergyBreakdown) -> f64 {
        let w = &self.weights;
        w.landmarks * bd.landmarks
            + w.face_identity * bd.face_identity
            + w.body_identity * bd.body_identity
            + w.expression * bd.expression
            + w.pose * bd.pose
            + w.temporal * bd.temporal
            + w.intersect * bd.intersect
    }

    /// True weighted energy and its analytic gradient.
    pub fn total_energy(&self, x: &DVector<f64>) -> (EnergyBreakdown, DVector<f64>) {
        let w = &self.weights;
        let mut bd = EnergyBreakdown::default();
        let (v_lm, g_lm) = self.e_landmarks(x);
        bd.landmarks = v_lm;
        let mut grad = w.landmarks * g_lm;
        let (v, g) = self.e_face_identity(x);
        bd.face_identity = v;
        grad += w.face_identity * g;
        let (v, g) = self.e_body_identity(x);
        bd.body_identity = v;
        grad += w.body_identity * g;
        let (v, g) = self.e_expression(x);
        bd.expression = v;
        grad += w.expression * g;
        let (v, g) = self.e_pose_prior(x);
        bd.pose = v;
        grad += w.pose * g;
        let (v, g) = self.e_temporal_term(x);
        bd.temporal = v;
        grad += w.temporal * g;
        if let Some(term) = &self.intersect {
            let (v, g) = term(x);
            bd.intersect = v;
            grad += w.intersect * g;
        }
        bd.total = self.weighted_total(&bd);
        (bd, grad)
    }

    /// Residual vector and dense Jacobian of the least-squares model at `x`
    /// (GMM terms via their EM surrogate). Behind-camera observations
    /// contribute no rows; their penalty only appears in the true energy.
    pub fn residuals(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let l = &self.layout;
        let w = &self.weights;
        let (_, _, mut rows) = self.landmarks_impl(x, true);

        // L2 priors: rows sqrt(2 w) * value with unit direction.
        let push_l2 = |offset: usize, len: usize, weight: f64, rows: &mut Vec<Row>| {
            if weight == 0.0 {
                return;
            }
            let s = (2.0 * weight).sqrt();
            for d in 0..len {
                rows.push(Row {
                    residual: s * x[offset + d],
                    entries: vec![(offset + d, s)],
                });
            }
        };
        if self.priors.face_identity.is_none() {
            push_l2(l.gamma_offset(), l.n_gamma, w.face_identity, &mut rows);
        } else if w.face_identity > 0.0 {
            let gamma = x.rows(l.gamma_offset(), l.n_gamma).into_owned();
            let gmm = self.priors.face_identity.as_ref().unwrap();
            gmm_surrogate_rows(
                &gamma,
                gmm,
                l.gamma_offset(),
                |b| b,
                w.face_identity,
                &mut rows,
            );
        }
        push_l2(l.beta_offset(), l.n_beta, w.body_identity, &mut rows);
        for f in 0..l.n_frames {
            push_l2(l.psi_offset(f), l.n_psi, w.expression, &mut rows);
        }

        if w.pose > 0.0 {
            for f in 0..l.n_frames {
                for (_, prior) in self.priors.pose.entries() {
                    let Some(p) = prior else { continue };
                    let block = self.pose_block(x, f, &p.joints);
                    let t0 = l.theta_offset(f);
                    let joints = &p.joints;
                    gmm_surrogate_rows(
                        &block,
                        &p.gmm,
                        0,
                        |b| t0 + 3 * joints[b / 3] + b % 3,
                        w.pose,
                        &mut rows,
                    );
                }
            }
        }

        if w.temporal > 0.0 {
            let s = (2.0 * w.temporal).sqrt();
            for f in 1..l.n_frames {
                for (off_a, off_b, len) in [
                    (l.theta_offset(f), l.theta_offset(f - 1), 3 * l.n_joints),
                    (l.psi_offset(f), l.psi_offset(f - 1), l.n_psi),
                ] {
                    for d in 0..len {
                        rows.push(Row {
                            residual: s * (x[off_a + d] - x[off_b + d]),
                            entries: vec![(off_a + d, s), (off_b + d, -s)],
                        });
                    }
                }
            }
        }

        let n_rows = rows.len();
        let mut r = DVector::zeros(n_rows);
        let mut jac = DMatrix::zeros(n_rows, l.total());
        for (i, row) in rows.into_iter().enumerate() {
            r[i] = row.residual;
            for (col, v) in row.entries {
                jac[(i, col)] += v;
            }
        }
        (r, jac)
    }
}

/// Maps a frame-local human column (gamma|beta|psi|theta|root) to its global
/// column.
fn human_col_to_global(l: &ParamLayout, frame: usize, hc: usize) -> usize {
    let ng = l.n_gamma;
    let nb = l.n_beta;
    let np = l.n_psi;
    if hc < ng {
        l.gamma_offset() + hc
    } else if hc < ng + nb {
        l.beta_offset() + (hc - ng)
    } else if hc < ng + nb + np {
        l.psi_offset(frame) + (hc - ng - nb)
    } else {
        let t = hc - ng - nb - np;
        if t < 3 * l.n_joints {
            l.theta_offset(frame) + t
        } else {
            l.root_offset(frame) + (t - 3 * l.n_joints)
        }
    }
}

/// EM-surrogate residual rows for one GMM block: for each component with
/// responsibility r_k, rows `sqrt(w r_k) (x_d - mu_d) / sigma_d`. Their
/// Gauss-Newton gradient equals the weighted true gradient at this point.
fn gmm_surrogate_rows(
    block: &DVector<f64>,
    gmm: &GmmModel,
    _base: usize,
    col_of: impl Fn(usize) -> usize,
    weight: f64,
    rows: &mut Vec<Row>,
) {
    let resp = gmm.responsibilities(block);
    for (k, &r) in resp.iter().enumerate() {
        if r < RESPONSIBILITY_FLOOR {
            continue;
        }
        let s = (weight * r).sqrt();
        for d in 0..block.len() {
            let sigma = gmm.variances[k][d].sqrt();
            rows.push(Row {
                residual: s * (block[d] - gmm.means[k][d]) / sigma,
                entries: vec![(col_of(d), s / sigma)],
            });
        }
    }
}
