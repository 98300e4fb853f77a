//! Pose archives: storage, GMM classification, weighted sampling,
//! mirroring, and channel splicing.
//!
//! Motion-capture archives over-represent canonical calibration poses
//! (T-pose at sequence boundaries) and neutral standing. A diagonal-
//! covariance GMM fitted to flattened body pose vectors classifies frames
//! into coarse classes so T-pose can be down-weighted, while a power of the
//! mean absolute joint angle up-weights high-activity frames. Sampled frames
//! can be mirrored about the sagittal plane and spliced with independently
//! sampled hand poses, expressions and eye poses.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, NamedArray};

/// Variance floor for GMM components.
pub const VARIANCE_FLOOR: f64 = 1e-6;
/// EM stops when the mean log-likelihood improves by less than this.
pub const EM_TOL: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 200;
/// Additive term inside the activity up-weighting power law.
pub const ACTIVITY_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("archive is empty")]
    EmptyArchive,
    #[error("need at least {needed} frames for {needed} components, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("component count must be >= 1")]
    NoComponents,
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("mirror map is not an involution at joint {0}")]
    BadMirrorMap(usize),
    #[error("frame has no {0} pose and none was supplied")]
    MissingHandPose(&'static str),
    #[error("sampling weights sum to zero")]
    ZeroWeights,
    #[error("class weights must be non-negative, got {0}")]
    NegativeClassWeight(f64),
    #[error("activity exponent must be non-negative, got {0}")]
    NegativeExponent(f64),
    #[error("fps must be positive, got {0}")]
    BadFps(f64),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Which joints each pose channel covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub body_joints: usize,
    pub hand_joints: usize,
    pub eye_joints: usize,
    pub expression_dims: usize,
}

/// One archived pose: body rotations plus optional hand/eye/expression
/// channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub body: Vec<Vector3<f64>>,
    pub root_translation: Vector3<f64>,
    pub left_hand: Option<Vec<Vector3<f64>>>,
    pub right_hand: Option<Vec<Vector3<f64>>>,
    pub expression: Option<DVector<f64>>,
    pub eyes: Option<Vec<Vector3<f64>>>,
}

impl PoseFrame {
    pub fn rest(layout: &ChannelLayout) -> Self {
        Self {
            body: vec![Vector3::zeros(); layout.body_joints],
            root_translation: Vector3::zeros(),
            left_hand: None,
            right_hand: None,
            expression: None,
            eyes: None,
        }
    }

    pub fn has_hands(&self) -> bool {
        self.left_hand.is_some() && self.right_hand.is_some()
    }

    /// Body rotations flattened to a 3K vector (hands/eyes excluded).
    pub fn body_flat(&self) -> DVector<f64> {
        let mut out = DVector::zeros(3 * self.body.len());
        for (j, aa) in self.body.iter().enumerate() {
            out[3 * j] = aa.x;
            out[3 * j + 1] = aa.y;
            out[3 * j + 2] = aa.z;
        }
        out
    }

    /// Mean absolute body joint angle component.
    pub fn mean_abs_angle(&self) -> f64 {
        let n = 3 * self.body.len();
        if n == 0 {
            return 0.0;
        }
        self.body
            .iter()
            .map(|aa| aa.x.abs() + aa.y.abs() + aa.z.abs())
            .sum::<f64>()
            / n as f64
    }
}

/// A library of pose frames sharing one channel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseArchive {
    pub frames: Vec<PoseFrame>,
    pub fps: f64,
    pub layout: ChannelLayout,
}

impl PoseArchive {
    pub fn validate(&self) -> Result<(), PoseError> {
        if !(self.fps > 0.0) {
            return Err(PoseError::BadFps(self.fps));
        }
        let check = |what: &str, got: usize, expected: usize| -> Result<(), PoseError> {
            if got != expected {
                return Err(PoseError::DimensionMismatch {
                    what: what.into(),
                    expected,
                    got,
                });
            }
            Ok(())
        };
        for f in &self.frames {
            check("body joints", f.body.len(), self.layout.body_joints)?;
            if let Some(h) = &f.left_hand {
                check("left hand joints", h.len(), self.layout.hand_joints)?;
            }
            if let Some(h) = &f.right_hand {
                check("right hand joints", h.len(), self.layout.hand_joints)?;
            }
            if let Some(e) = &f.eyes {
                check("eye joints", e.len(), self.layout.eye_joints)?;
            }
            if let Some(x) = &f.expression {
                check("expression dims", x.len(), self.layout.expression_dims)?;
            }
        }
        Ok(())
    }
}

// --- GMM -------------------------------------------------------------------

/// Diagonal-covariance Gaussian mixture with per-component labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub variances: Vec<DVector<f64>>,
    pub labels: Vec<String>,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let k = self.n_components();
        if k == 0 {
            return Err(PoseError::NoComponents);
        }
        let mismatch = |what: &str, got: usize, expected: usize| PoseError::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        };
        if self.means.len() != k {
            return Err(mismatch("means", self.means.len(), k));
        }
        if self.variances.len() != k {
            return Err(mismatch("variances", self.variances.len(), k));
        }
        if self.labels.len() != k {
            return Err(mismatch("labels", self.labels.len(), k));
        }
        Ok(())
    }

    /// Per-component log joint `ln w_k + ln N(x; mu_k, sigma_k^2)`.
    fn log_joint(&self, x: &DVector<f64>) -> Vec<f64> {
        let d = self.dim();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&w, (mean, var))| {
                let mut ll = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
                for i in 0..d {
                    let diff = x[i] - mean[i];
                    ll += -0.5 * ((std::f64::consts::TAU * var[i]).ln() + diff * diff / var[i]);
                }
                ll
            })
            .collect()
    }

    /// Log mixture density, computed with log-sum-exp stabilization.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        log_sum_exp(&self.log_joint(x))
    }

    /// Posterior responsibilities of each component for `x`.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Vec<f64> {
        let lj = self.log_joint(x);
        let lse = log_sum_exp(&lj);
        lj.iter().map(|&v| (v - lse).exp()).collect()
    }

    /// Most responsible component; ties go to the lowest index.
    pub fn classify(&self, x: &DVector<f64>) -> usize {
        let lj = self.log_joint(x);
        let mut best = 0;
        for (i, &v) in lj.iter().enumerate().skip(1) {
            if v > lj[best] {
                best = i;
            }
        }
        best
    }

    pub fn component_labeled(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn save(&self, path: &Path) -> Result<(), std::io::Error> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, std::io::Error> {
        let gmm: GmmModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Ok(gmm)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn kmeanspp_init(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = data.len();
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(data[rng.random_range(0..n)].clone());
    let mut dist2: Vec<f64> = data
        .iter()
        .map(|x| (x - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let center = data[next].clone();
        for (i, x) in data.iter().enumerate() {
            dist2[i] = dist2[i].min((x - &center).norm_squared());
        }
        centers.push(center);
    }
    centers
}

/// Fits a diagonal-covariance GMM to flattened body pose vectors with EM
/// (k-means++ initialization, deterministic for a given seed). The component
/// whose mean has the smallest mean absolute entry is labeled `"tpose"`,
/// the others `"class<i>"`; relabel afterwards to override.
pub fn fit_pose_gmm(
    frames: &[DVector<f64>],
    n_components: usize,
    seed: u64,
) -> Result<GmmModel, PoseError> {
    Ok(fit_pose_gmm_traced(frames, n_components, seed)?.0)
}

/// [`fit_pose_gmm`] plus the mean log-likelihood after each E step.
pub fn fit_pose_gmm_traced(
    frames: &[DVector<f64>],
    n_components: usize,
    seed: u64,
) -> Result<(GmmModel, Vec<f64>), PoseError> {
    if n_components < 1 {
        return Err(PoseError::NoComponents);
    }
    if frames.is_empty() {
        return Err(PoseError::EmptyArchive);
    }
    if frames.len() < n_components {
        return Err(PoseError::TooFewFrames {
            needed: n_components,
            got: frames.len(),
        });
    }
    let n = frames.len();
    let d = frames[0].len();
    for f in frames {
        if f.len() != d {
            return Err(PoseError::DimensionMismatch {
                what: "frame dim".into(),
                expected: d,
                got: f.len(),
            });
        }
    }
    let k = n_components;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = kmeanspp_init(frames, k, &mut rng);

    // Shared initial variance: per-dimension data variance, floored.
    let mut grand_mean = DVector::zeros(d);
    for f in frames {
        grand_mean += f;
    }
    grand_mean /= n as f64;
    let mut init_var = DVector::from_element(d, 0.0);
    for f in frames {
        for i in 0..d {
            let diff = f[i] - grand_mean[i];
            init_var[i] += diff * diff;
        }
    }
    init_var /= n as f64;
    init_var.apply(|v| *v = v.max(VARIANCE_FLOOR));

    let mut variances = vec![init_var; k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = DMatrix::zeros(n, k);
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll_trace = Vec::new();

    for _iter in 0..EM_MAX_ITERS {
        // E step.
        let gmm = GmmModel {
            weights: weights.clone(),
            means: means.clone(),
            variances: variances.clone(),
            labels: vec![String::new(); k],
        };
        let mut ll = 0.0;
        for (i, x) in frames.iter().enumerate() {
            let lj = gmm.log_joint(x);
            let lse = log_sum_exp(&lj);
            ll += lse;
            for c in 0..k {
                resp[(i, c)] = (lj[c] - lse).exp();
            }
        }
        ll /= n as f64;
        ll_trace.push(ll);

        // M step.
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[(i, c)]).sum();
            if nk < 1e-12 {
                // Collapsed component: keep its parameters, shrink weight.
                weights[c] = 1e-12;
                continue;
            }
            weights[c] = nk / n as f64;
            let mut mean = DVector::zeros(d);
            for (i, x) in frames.iter().enumerate() {
                mean.axpy(resp[(i, c)], x, 1.0);
            }
            mean /= nk;
            let mut var = DVector::zeros(d);
            for (i, x) in frames.iter().enumerate() {
                let r = resp[(i, c)];
                for j in 0..d {
                    let diff = x[j] - mean[j];
                    var[j] += r * diff * diff;
                }
            }
            var /= nk;
            var.apply(|v| *v = v.max(VARIANCE_FLOOR));
            means[c] = mean;
            variances[c] = var;
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }

        if (ll - prev_ll).abs() < EM_TOL && _iter > 0 {
            break;
        }
        prev_ll = ll;
    }

    // Auto-label: the flattest mean is the calibration-pose class.
    let mut labels: Vec<String> = (0..k).map(|i| format!("class{i}")).collect();
    let mut tpose = 0;
    let mean_abs = |m: &DVector<f64>| m.iter().map(|v| v.abs()).sum::<f64>() / d.max(1) as f64;
    for c in 1..k {
        if mean_abs(&means[c]) < mean_abs(&means[tpose]) {
            tpose = c;
        }
    }
    labels[tpose] = "tpose".into();

    let gmm = GmmModel {
        weights,
        means,
        variances,
        labels,
    };
    gmm.validate()?;
    Ok((gmm, ll_trace))
}

// --- sampling --------------------------------------------------------------

/// Per-frame sampling weights: the classified class weight times the
/// activity power law, normalized to a probability distribution.
pub fn sampling_weights(
    archive: &PoseArchive,
    gmm: &GmmModel,
    class_weights: &[f64],
    activity_exponent: f64,
) -> Result<Vec<f64>, PoseError> {
    if class_weights.len() != gmm.n_components() {
        return Err(PoseError::DimensionMismatch {
            what: "class weights".into(),
            expected: gmm.n_components(),
            got: class_weights.len(),
        });
    }
    if let Some(&w) = class_weights.iter().find(|&&w| w < 0.0) {
        return Err(PoseError::NegativeClassWeight(w));
    }
    if activity_exponent < 0.0 {
        return Err(PoseError::NegativeExponent(activity_exponent));
    }
    if archive.frames.is_empty() {
        return Err(PoseError::EmptyArchive);
    }
    let mut weights: Vec<f64> = archive
        .frames
        .iter()
        .map(|f| {
            let class = gmm.classify(&f.body_flat());
            class_weights[class] * (f.mean_abs_angle() + ACTIVITY_EPS).powf(activity_exponent)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(PoseError::ZeroWeights);
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Involutive left/right pairing for mirroring. Joints mapped to themselves
/// lie on the sagittal plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MirrorMap {
    pub body_perm: Vec<usize>,
    /// Pairing for eye joints, when present.
    pub eye_perm: Option<Vec<usize>>,
}

impl MirrorMap {
    pub fn validate(&self) -> Result<(), PoseError> {
        for (i, &j) in self.body_perm.iter().enumerate() {
            if j >= self.body_perm.len() || self.body_perm[j] != i {
                return Err(PoseError::BadMirrorMap(i));
            }
        }
        if let Some(p) = &self.eye_perm {
            for (i, &j) in p.iter().enumerate() {
                if j >= p.len() || p[j] != i {
                    return Err(PoseError::BadMirrorMap(i));
                }
            }
        }
        Ok(())
    }

    pub fn identity(body_joints: usize) -> Self {
        Self {
            body_perm: (0..body_joints).collect(),
            eye_perm: None,
        }
    }
}

/// Reflects an axis-angle about the sagittal (x = 0) plane.
fn reflect_axis_angle(aa: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(aa.x, -aa.y, -aa.z)
}

/// Mirrors a pose about the sagittal plane: paired body joints swap with
/// their rotations reflected, hands swap sides, eye joints swap, and the
/// root translation's x component is negated. Expression is unchanged.
pub fn mirror_pose(frame: &PoseFrame, map: &MirrorMap) -> Result<PoseFrame, PoseError> {
    map.validate()?;
    if map.body_perm.len() != frame.body.len() {
        return Err(PoseError::DimensionMismatch {
            what: "mirror map".into(),
            expected: frame.body.len(),
            got: map.body_perm.len(),
        });
    }
    let body = (0..frame.body.len())
        .map(|j| reflect_axis_angle(&frame.body[map.body_perm[j]]))
        .collect();
    let reflect_hand = |hand: &Option<Vec<Vector3<f64>>>| {
        hand.as_ref()
            .map(|joints| joints.iter().map(reflect_axis_angle).collect())
    };
    let eyes = match (&frame.eyes, &map.eye_perm) {
        (Some(eyes), Some(perm)) => {
            if perm.len() != eyes.len() {
                return Err(PoseError::DimensionMismatch {
                    what: "eye mirror map".into(),
                    expected: eyes.len(),
                    got: perm.len(),
                });
            }
            Some(
                (0..eyes.len())
                    .map(|j| reflect_axis_angle(&eyes[perm[j]]))
                    .collect(),
            )
        }
        (Some(eyes), None) => Some(eyes.iter().map(reflect_axis_angle).collect()),
        (None, _) => None,
    };
    Ok(PoseFrame {
        body,
        root_translation: Vector3::new(
            -frame.root_translation.x,
            frame.root_translation.y,
            frame.root_translation.z,
        ),
        left_hand: reflect_hand(&frame.right_hand),
        right_hand: reflect_hand(&frame.left_hand),
        expression: frame.expression.clone(),
        eyes,
    })
}

/// Draws a frame index by the given weights, then mirrors with probability
/// `mirror_prob`. Deterministic for a given rng state.
pub fn sample_frame<R: Rng + ?Sized>(
    archive: &PoseArchive,
    weights: &[f64],
    rng: &mut R,
    mirror_prob: f64,
    map: &MirrorMap,
) -> Result<PoseFrame, PoseError> {
    if weights.len() != archive.frames.len() {
        return Err(PoseError::DimensionMismatch {
            what: "weights".into(),
            expected: archive.frames.len(),
            got: weights.len(),
        });
    }
    if archive.frames.is_empty() {
        return Err(PoseError::EmptyArchive);
    }
    let mut target = rng.random::<f64>();
    let mut chosen = archive.frames.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        target -= w;
        if target <= 0.0 {
            chosen = i;
            break;
        }
    }
    let frame = archive.frames[chosen].clone();
    if rng.random::<f64>() < mirror_prob {
        return mirror_pose(&frame, map);
    }
    Ok(frame)
}

/// Overwrites hand, expression and eye channels; body joints are untouched.
/// Frames without stored hands must be given both hand poses.
pub fn splice(
    frame: &PoseFrame,
    left_hand: Option<&[Vector3<f64>]>,
    right_hand: Option<&[Vector3<f64>]>,
    expression: Option<&DVector<f64>>,
    eyes: Option<&[Vector3<f64>]>,
) -> Result<PoseFrame, PoseError> {
    let mut out = frame.clone();
    match (left_hand, &frame.left_hand) {
        (Some(h), _) => out.left_hand = Some(h.to_vec()),
        (None, Some(_)) => {}
        (None, None) => return Err(PoseError::MissingHandPose("left hand")),
    }
    match (right_hand, &frame.right_hand) {
        (Some(h), _) => out.right_hand = Some(h.to_vec()),
        (None, Some(_)) => {}
        (None, None) => return Err(PoseError::MissingHandPose("right hand")),
    }
    if let Some(x) = expression {
        out.expression = Some(x.clone());
    }
    if let Some(e) = eyes {
        out.eyes = Some(e.to_vec());
    }
    Ok(out)
}

// --- container IO ----------------------------------------------------------

pub const ARCHIVE_KIND: &str = "pose_archive";

impl PoseArchive {
    pub fn save(&self, path: &Path) -> Result<(), PoseError> {
        self.validate()?;
        let f = self.frames.len();
        let layout = &self.layout;
        let mut c = Container::new(ARCHIVE_KIND);
        c.meta = serde_json::json!({
            "fps": self.fps,
            "frames": f,
            "layout": layout,
        });

        let mut body = Vec::with_capacity(f * layout.body_joints * 3);
        let mut root = Vec::with_capacity(f * 3);
        for frame in &self.frames {
            for aa in &frame.body {
                body.extend_from_slice(&[aa.x as f32, aa.y as f32, aa.z as f32]);
            }
            root.extend_from_slice(&[
                frame.root_translation.x as f32,
                frame.root_translation.y as f32,
                frame.root_translation.z as f32,
            ]);
        }
        c.push(NamedArray::f32("body", vec![f, layout.body_joints, 3], body));
        c.push(NamedArray::f32("root_translation", vec![f, 3], root));

        let push_joint_channel = |c: &mut Container,
                                  name: &str,
                                  joints: usize,
                                  get: &dyn Fn(&PoseFrame) -> &Option<Vec<Vector3<f64>>>| {
            let mut present = Vec::with_capacity(f);
            let mut data = vec![0.0f32; f * joints * 3];
            for (i, frame) in self.frames.iter().enumerate() {
                match get(frame) {
                    Some(values) => {
                        present.push(1u32);
                        for (j, aa) in values.iter().enumerate() {
                            let base = (i * joints + j) * 3;
                            data[base] = aa.x as f32;
                            data[base + 1] = aa.y as f32;
                            data[base + 2] = aa.z as f32;
                        }
                    }
                    None => present.push(0u32),
                }
            }
            c.push(NamedArray::u32(&format!("{name}_present"), vec![f], present));
            c.push(NamedArray::f32(name, vec![f, joints, 3], data));
        };
        push_joint_channel(&mut c, "left_hand", layout.hand_joints, &|fr| &fr.left_hand);
        push_joint_channel(&mut c, "right_hand", layout.hand_joints, &|fr| {
            &fr.right_hand
        });
        push_joint_channel(&mut c, "eyes", layout.eye_joints, &|fr| &fr.eyes);

        let mut expr_present = Vec::with_capacity(f);
        let mut expr = vec![0.0f32; f * layout.expression_dims];
        for (i, frame) in self.frames.iter().enumerate() {
            match &frame.expression {
                Some(x) => {
                    expr_present.push(1u32);
                    for (j, v) in x.iter().enumerate() {
                        expr[i * layout.expression_dims + j] = *v as f32;
                    }
                }
                None => expr_present.push(0u32),
            }
        }
        c.push(NamedArray::u32("expression_present", vec![f], expr_present));
        c.push(NamedArray::f32(
            "expression",
            vec![f, layout.expression_dims],
            expr,
        ));
        c.write(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let c = Container::read(path)?;
        let meta = c.meta_object();
        let fps = meta
            .get("fps")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| ContainerError::Header("missing fps".into()))?;
        let layout: ChannelLayout = meta
            .get("layout")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| ContainerError::Header("missing layout".into()))?;
        let f = meta
            .get("frames")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ContainerError::Header("missing frame count".into()))?
            as usize;

        let body = c.take_f64("body", &[f, layout.body_joints, 3])?;
        let root = c.take_f64("root_translation", &[f, 3])?;
        let read_joint_channel =
            |name: &str, joints: usize| -> Result<Vec<Option<Vec<Vector3<f64>>>>, PoseError> {
                let (pshape, present) = c.get_u32(&format!("{name}_present"))?;
                if pshape != [f] {
                    return Err(ContainerError::ArrayShape {
                        name: format!("{name}_present"),
                        got: pshape.to_vec(),
                        want: vec![f],
                    }
                    .into());
                }
                let data = c.take_f64(name, &[f, joints, 3])?;
                Ok((0..f)
                    .map(|i| {
                        if present[i] == 0 {
                            None
                        } else {
                            Some(
                                (0..joints)
                                    .map(|j| {
                                        let base = (i * joints + j) * 3;
                                        Vector3::new(data[base], data[base + 1], data[base + 2])
                                    })
                                    .collect(),
                            )
                        }
                    })
                    .collect())
            };
        let left = read_joint_channel("left_hand", layout.hand_joints)?;
        let right = read_joint_channel("right_hand", layout.hand_joints)?;
        let eyes = read_joint_channel("eyes", layout.eye_joints)?;
        let (_, expr_present) = c.get_u32("expression_present")?;
        let expr = c.take_f64("expression", &[f, layout.expression_dims])?;

        let frames = (0..f)
            .map(|i| {
                let body_joints = (0..layout.body_joints)
                    .map(|j| {
                        let base = (i * layout.body_joints + j) * 3;
                        Vector3::new(body[base], body[base + 1], body[base + 2])
                    })
                    .collect();
                PoseFrame {
                    body: body_joints,
                    root_translation: Vector3::new(root[3 * i], root[3 * i + 1], root[3 * i + 2]),
                    left_hand: left[i].clone(),
                    right_hand: right[i].clone(),
                    expression: (expr_present[i] != 0).then(|| {
                        DVector::from_iterator(
                            layout.expression_dims,
                            (0..layout.expression_dims)
                                .map(|j| expr[i * layout.expression_dims + j]),
                        )
                    }),
                    eyes: eyes[i].clone(),
                }
            })
            .collect();
        let archive = PoseArchive {
            frames,
            fps,
            layout,
        };
        archive.validate()?;
        Ok(archive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn layout() -> ChannelLayout {
        ChannelLayout {
            body_joints: 4,
            hand_joints: 2,
            eye_joints: 2,
            expression_dims: 3,
        }
    }

    fn frame_from_flat(values: &[f64]) -> PoseFrame {
        let body = values
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        PoseFrame {
            body,
            root_translation: Vector3::zeros(),
            left_hand: None,
            right_hand: None,
            expression: None,
            eyes: None,
        }
    }

    fn two_cluster_data(seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for i in 0..200 {
            let center = if i % 2 == 0 { 0.0 } else { 8.0 };
            data.push(DVector::from_fn(6, |_, _| {
                center + 0.1 * (rng.random::<f64>() - 0.5)
            }));
        }
        data
    }

    #[test]
    fn separated_clusters_get_confident_responsibilities() {
        let data = two_cluster_data(1);
        let gmm = fit_pose_gmm(&data, 2, 7).unwrap();
        for x in &data {
            let resp = gmm.responsibilities(x);
            let best = gmm.classify(x);
            assert!(resp[best] >= 0.99, "resp {resp:?}");
        }
        // One cluster sits near zero and is auto-labeled tpose.
        let tpose = gmm.component_labeled("tpose").unwrap();
        assert!(gmm.means[tpose].amax() < 1.0);
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let data: Vec<DVector<f64>> = (0..50)
            .map(|i| {
                let t = i as f64;
                DVector::from_vec(vec![(0.3 * t).sin(), (0.5 * t).cos()])
            })
            .collect();
        let gmm = fit_pose_gmm(&data, 1, 0).unwrap();
        let n = data.len() as f64;
        let mut mean = DVector::zeros(2);
        for x in &data {
            mean += x;
        }
        mean /= n;
        let mut var = DVector::zeros(2);
        for x in &data {
            for j in 0..2 {
                var[j] += (x[j] - mean[j]).powi(2);
            }
        }
        var /= n;
        assert_relative_eq!(gmm.means[0], mean, epsilon = 1e-9);
        assert_relative_eq!(gmm.variances[0], var, epsilon = 1e-9);
        assert_relative_eq!(gmm.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_frames_hit_variance_floor() {
        let data = vec![DVector::from_vec(vec![0.5, -0.5]); 10];
        let gmm = fit_pose_gmm(&data, 1, 3).unwrap();
        for v in gmm.variances[0].iter() {
            assert_eq!(*v, VARIANCE_FLOOR);
        }
    }

    #[test]
    fn em_is_deterministic_per_seed() {
        let data = two_cluster_data(5);
        let a = fit_pose_gmm(&data, 3, 11).unwrap();
        let b = fit_pose_gmm(&data, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn em_rejects_bad_inputs() {
        let data = vec![DVector::zeros(2); 3];
        assert!(matches!(
            fit_pose_gmm(&data, 0, 0),
            Err(PoseError::NoComponents)
        ));
        assert!(matches!(
            fit_pose_gmm(&data, 4, 0),
            Err(PoseError::TooFewFrames { .. })
        ));
        assert!(matches!(
            fit_pose_gmm(&[], 1, 0),
            Err(PoseError::EmptyArchive)
        ));
    }

    #[test]
    fn classify_at_mean_with_dominant_weight() {
        let gmm = GmmModel {
            weights: vec![0.9, 0.1],
            means: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![5.0])],
            variances: vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])],
            labels: vec!["a".into(), "b".into()],
        };
        assert_eq!(gmm.classify(&DVector::from_vec(vec![0.0])), 0);
    }

    #[test]
    fn classify_tie_goes_to_lowest_index() {
        let gmm = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0])],
            variances: vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])],
            labels: vec!["a".into(), "b".into()],
        };
        // x = 0 is exactly equidistant.
        assert_eq!(gmm.classify(&DVector::from_vec(vec![0.0])), 0);
    }

    #[test]
    fn classify_matches_direct_responsibility_oracle() {
        let gmm = GmmModel {
            weights: vec![0.3, 0.45, 0.25],
            means: vec![
                DVector::from_vec(vec![0.0, 1.0]),
                DVector::from_vec(vec![2.0, -1.0]),
                DVector::from_vec(vec![-1.5, 0.5]),
            ],
            variances: vec![
                DVector::from_vec(vec![0.5, 1.5]),
                DVector::from_vec(vec![2.0, 0.25]),
                DVector::from_vec(vec![1.0, 1.0]),
            ],
            labels: vec!["a".into(), "b".into(), "c".into()],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let x = DVector::from_fn(2, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
            // Direct (non-log) density oracle.
            let dens: Vec<f64> = (0..3)
                .map(|k| {
                    let mut p = gmm.weights[k];
                    for j in 0..2 {
                        let var: f64 = gmm.variances[k][j];
                        let diff: f64 = x[j] - gmm.means[k][j];
                        p *= (-0.5 * diff * diff / var).exp()
                            / (std::f64::consts::TAU * var).sqrt();
                    }
                    p
                })
                .collect();
            let total: f64 = dens.iter().sum();
            let direct: Vec<f64> = dens.iter().map(|d| d / total).collect();
            let resp = gmm.responsibilities(&x);
            for (a, b) in resp.iter().zip(&direct) {
                assert_relative_eq!(a, b, epsilon = 1e-10);
            }
            let best = direct
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(gmm.classify(&x), best);
        }
    }

    #[test]
    fn log_density_is_stable_in_the_tail() {
        let gmm = GmmModel {
            weights: vec![1.0],
            means: vec![DVector::zeros(2)],
            variances: vec![DVector::from_element(2, 1.0)],
            labels: vec!["a".into()],
        };
        let far = DVector::from_element(2, 1e4);
        let ld = gmm.log_density(&far);
        assert!(ld.is_finite());
        assert!(ld < -1e7);
    }

    fn archive_with_frames(frames: Vec<PoseFrame>) -> PoseArchive {
        PoseArchive {
            frames,
            fps: 30.0,
            layout: layout(),
        }
    }

    fn trivial_gmm() -> GmmModel {
        GmmModel {
            weights: vec![1.0],
            means: vec![DVector::zeros(12)],
            variances: vec![DVector::from_element(12, 1.0)],
            labels: vec!["tpose".into()],
        }
    }

    #[test]
    fn uniform_class_weights_and_zero_exponent_give_uniform() {
        let frames = vec![
            frame_from_flat(&[0.0; 12]),
            frame_from_flat(&[0.5; 12]),
            frame_from_flat(&[1.0; 12]),
        ];
        let archive = archive_with_frames(frames);
        let w = sampling_weights(&archive, &trivial_gmm(), &[1.0], 0.0).unwrap();
        for v in &w {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_class_weight_zeroes_that_class() {
        let near_zero = frame_from_flat(&[0.01; 12]);
        let active = frame_from_flat(&[2.0; 12]);
        let archive = archive_with_frames(vec![near_zero, active]);
        let gmm = GmmModel {
            weights: vec![0.5, 0.5],
            means: vec![
                DVector::from_element(12, 0.0),
                DVector::from_element(12, 2.0),
            ],
            variances: vec![
                DVector::from_element(12, 0.1),
                DVector::from_element(12, 0.1),
            ],
            labels: vec!["tpose".into(), "class1".into()],
        };
        let w = sampling_weights(&archive, &gmm, &[0.0, 1.0], 0.0).unwrap();
        assert_eq!(w[0], 0.0);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn doubled_angles_double_the_weight_at_unit_exponent() {
        let a = frame_from_flat(&[0.2; 12]);
        let b = frame_from_flat(&[0.4; 12]);
        let archive = archive_with_frames(vec![a, b]);
        let w = sampling_weights(&archive, &trivial_gmm(), &[1.0], 1.0).unwrap();
        let ratio = w[1] / w[0];
        let expected = (0.4 + ACTIVITY_EPS) / (0.2 + ACTIVITY_EPS);
        assert_relative_eq!(ratio, expected, epsilon = 1e-9);
    }

    #[test]
    fn weights_form_a_distribution() {
        let frames: Vec<PoseFrame> = (0..17)
            .map(|i| frame_from_flat(&[(i as f64 * 0.37).sin().abs(); 12]))
            .collect();
        let archive = archive_with_frames(frames);
        let w = sampling_weights(&archive, &trivial_gmm(), &[0.35], 1.7).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn all_zero_weights_error() {
        let archive = archive_with_frames(vec![frame_from_flat(&[0.5; 12])]);
        assert!(matches!(
            sampling_weights(&archive, &trivial_gmm(), &[0.0], 1.0),
            Err(PoseError::ZeroWeights)
        ));
    }

    fn mirror_map() -> MirrorMap {
        // Joints: 0 center, 1 center, 2 <-> 3 (left/right pair).
        MirrorMap {
            body_perm: vec![0, 1, 3, 2],
            eye_perm: Some(vec![1, 0]),
        }
    }

    fn rich_frame() -> PoseFrame {
        PoseFrame {
            body: vec![
                Vector3::new(0.1, 0.2, 0.3),
                Vector3::new(-0.4, 0.5, -0.6),
                Vector3::new(0.7, -0.8, 0.9),
                Vector3::new(-1.0, 1.1, -1.2),
            ],
            root_translation: Vector3::new(0.25, 1.0, -0.5),
            left_hand: Some(vec![Vector3::new(0.1, 0.0, 0.2), Vector3::new(0.3, 0.4, 0.5)]),
            right_hand: Some(vec![Vector3::new(-0.1, 0.2, 0.0), Vector3::new(0.0, 0.6, 0.7)]),
            expression: Some(DVector::from_vec(vec![0.5, -0.25, 1.5])),
            eyes: Some(vec![Vector3::new(0.0, 0.1, 0.0), Vector3::new(0.0, -0.1, 0.0)]),
        }
    }

    #[test]
    fn mirror_is_an_involution() {
        let frame = rich_frame();
        let map = mirror_map();
        let twice = mirror_pose(&mirror_pose(&frame, &map).unwrap(), &map).unwrap();
        assert_eq!(frame, twice);
    }

    #[test]
    fn symmetric_pose_is_a_fixed_point() {
        let map = mirror_map();
        // Paired joints carry reflected rotations of each other; center
        // joints are self-reflections (y = z = 0), translation has x = 0.
        let left = Vector3::new(0.3, 0.2, -0.1);
        let frame = PoseFrame {
            body: vec![
                Vector3::new(0.5, 0.0, 0.0),
                Vector3::new(-0.2, 0.0, 0.0),
                left,
                reflect_axis_angle(&left),
            ],
            root_translation: Vector3::new(0.0, 1.3, 0.2),
            left_hand: None,
            right_hand: None,
            expression: None,
            eyes: None,
        };
        // Hands absent: mirrored frame also has none.
        let mirrored = mirror_pose(&frame, &map).unwrap();
        assert_eq!(frame, mirrored);
    }

    #[test]
    fn mirror_swaps_hands() {
        let frame = rich_frame();
        let map = mirror_map();
        let m = mirror_pose(&frame, &map).unwrap();
        let expect_left: Vec<Vector3<f64>> = frame
            .right_hand
            .as_ref()
            .unwrap()
            .iter()
            .map(reflect_axis_angle)
            .collect();
        assert_eq!(m.left_hand.as_ref().unwrap(), &expect_left);
        assert_relative_eq!(m.root_translation.x, -frame.root_translation.x);
    }

    #[test]
    fn bad_mirror_map_is_rejected() {
        let map = MirrorMap {
            body_perm: vec![1, 2, 0], // 3-cycle, not an involution
            eye_perm: None,
        };
        assert!(matches!(
            map.validate(),
            Err(PoseError::BadMirrorMap(_))
        ));
    }

    #[test]
    fn single_frame_archive_always_samples_it() {
        let archive = archive_with_frames(vec![rich_frame()]);
        let map = MirrorMap::identity(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let f = sample_frame(&archive, &[1.0], &mut rng, 0.0, &map).unwrap();
            assert_eq!(f, archive.frames[0]);
        }
    }

    #[test]
    fn sampling_frequencies_match_weights() {
        let frames = vec![frame_from_flat(&[0.1; 12]), frame_from_flat(&[0.9; 12])];
        let archive = archive_with_frames(frames);
        let weights = [0.9, 0.1];
        let map = MirrorMap::identity(4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let mut count0 = 0usize;
        for _ in 0..n {
            let f = sample_frame(&archive, &weights, &mut rng, 0.0, &map).unwrap();
            if f == archive.frames[0] {
                count0 += 1;
            }
        }
        let p = count0 as f64 / n as f64;
        // 3-sigma binomial band.
        let band = 3.0 * (0.9 * 0.1 / n as f64).sqrt();
        assert!((p - 0.9).abs() < band, "p = {p}, band = {band}");
    }

    #[test]
    fn mirror_prob_one_always_mirrors() {
        let frame = rich_frame();
        let archive = archive_with_frames(vec![frame.clone()]);
        let map = mirror_map();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sampled = sample_frame(&archive, &[1.0], &mut rng, 1.0, &map).unwrap();
        assert_eq!(sampled, mirror_pose(&frame, &map).unwrap());
    }

    #[test]
    fn splice_with_own_channels_is_identity() {
        let frame = rich_frame();
        let out = splice(
            &frame,
            frame.left_hand.as_deref(),
            frame.right_hand.as_deref(),
            frame.expression.as_ref(),
            frame.eyes.as_deref(),
        )
        .unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn splice_zero_hands_zeroes_hands_only() {
        let frame = rich_frame();
        let zeros = vec![Vector3::zeros(); 2];
        let out = splice(&frame, Some(&zeros), Some(&zeros), None, None).unwrap();
        assert_eq!(out.left_hand.as_ref().unwrap(), &zeros);
        assert_eq!(out.right_hand.as_ref().unwrap(), &zeros);
        assert_eq!(out.body, frame.body);
        assert_eq!(out.expression, frame.expression);
    }

    #[test]
    fn splice_replaces_blocks_elementwise() {
        let frame = rich_frame();
        let left = vec![Vector3::new(9.0, 8.0, 7.0), Vector3::new(6.0, 5.0, 4.0)];
        let expr = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let eyes = vec![Vector3::new(0.5, 0.0, 0.0), Vector3::new(-0.5, 0.0, 0.0)];
        let out = splice(&frame, Some(&left), None, Some(&expr), Some(&eyes)).unwrap();
        assert_eq!(out.left_hand.as_ref().unwrap(), &left);
        assert_eq!(out.right_hand, frame.right_hand);
        assert_eq!(out.expression.as_ref().unwrap(), &expr);
        assert_eq!(out.eyes.as_ref().unwrap(), &eyes);
        assert_eq!(out.body, frame.body);
    }

    #[test]
    fn splice_requires_hands_when_frame_has_none() {
        let frame = PoseFrame::rest(&layout());
        assert!(matches!(
            splice(&frame, None, None, None, None),
            Err(PoseError::MissingHandPose(_))
        ));
        let hand = vec![Vector3::zeros(); 2];
        assert!(splice(&frame, Some(&hand), Some(&hand), None, None).is_ok());
    }

    #[test]
    fn archive_container_round_trip() {
        // Values chosen f32-exact so the first save/load round trip is
        // already bitwise.
        let mut frame_a = PoseFrame::rest(&layout());
        frame_a.body[1] = Vector3::new(0.5, -0.25, 1.5);
        frame_a.root_translation = Vector3::new(0.125, 1.0, -2.0);
        frame_a.expression = Some(DVector::from_vec(vec![0.5, 0.0, -0.75]));
        let mut frame_b = PoseFrame::rest(&layout());
        frame_b.left_hand = Some(vec![Vector3::new(0.5, 0.5, 0.5); 2]);
        frame_b.right_hand = Some(vec![Vector3::new(-0.5, 0.25, 0.0); 2]);
        frame_b.eyes = Some(vec![Vector3::zeros(); 2]);
        let archive = archive_with_frames(vec![frame_a, frame_b]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("archive.sbm1");
        archive.save(&path).unwrap();
        let back = PoseArchive::load(&path).unwrap();
        assert_eq!(archive, back);

        // Byte-level determinism of the writer.
        let path2 = dir.path().join("archive2.sbm1");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn gmm_json_round_trip() {
        let gmm = trivial_gmm();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gmm.json");
        gmm.save(&path).unwrap();
        assert_eq!(GmmModel::load(&path).unwrap(), gmm);
    }

    #[test]
    fn em_log_likelihood_is_non_decreasing() {
        for seed in [0, 4, 9] {
            let data = two_cluster_data(seed);
            let (_, trace) = fit_pose_gmm_traced(&data, 3, seed + 100).unwrap();
            assert!(trace.len() >= 2);
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10, "LL decreased: {w:?}");
            }
        }
    }
}
