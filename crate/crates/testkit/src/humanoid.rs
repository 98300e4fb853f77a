//! A mirror-symmetric procedural humanoid for harness tests.
//!
//! The skeleton is a 12-joint biped (pelvis, spine, chest, head, two-joint
//! arms and legs). Geometry is built as tube segments along the bones for
//! the center and the left side, then mirrored across the sagittal (x = 0)
//! plane by exact negation, so the vertex mirror map and the joint mirror
//! map are involutions by construction. Skinning weights blend between each
//! bone's proximal and distal joint; the joint regressor picks up the ring
//! vertices nearest to each joint.

use bodyfit::model::{BodyModel, ModelDims};
use bodyfit::poselib::MirrorMap;
use bodyfit::scene::LandmarkDef;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PELVIS: usize = 0;
pub const SPINE: usize = 1;
pub const CHEST: usize = 2;
pub const HEAD: usize = 3;
pub const L_SHOULDER: usize = 4;
pub const L_ELBOW: usize = 5;
pub const R_SHOULDER: usize = 6;
pub const R_ELBOW: usize = 7;
pub const L_HIP: usize = 8;
pub const L_KNEE: usize = 9;
pub const R_HIP: usize = 10;
pub const R_KNEE: usize = 11;

pub const JOINTS: usize = 12;

pub fn joint_parents() -> Vec<Option<usize>> {
    vec![
        None,             // pelvis
        Some(PELVIS),     // spine
        Some(SPINE),      // chest
        Some(CHEST),      // head
        Some(CHEST),      // l_shoulder
        Some(L_SHOULDER), // l_elbow
        Some(CHEST),      // r_shoulder
        Some(R_SHOULDER), // r_elbow
        Some(PELVIS),     // l_hip
        Some(L_HIP),      // l_knee
        Some(PELVIS),     // r_hip
        Some(R_HIP),      // r_knee
    ]
}

/// Joint permutation swapping left and right; the mesh mirror map comes
/// from [`build`].
pub fn joint_mirror_map() -> MirrorMap {
    MirrorMap {
        body_perm: vec![
            PELVIS, SPINE, CHEST, HEAD, R_SHOULDER, R_ELBOW, L_SHOULDER, L_ELBOW, R_HIP, R_KNEE,
            L_HIP, L_KNEE,
        ],
        eye_perm: None,
    }
}

fn joint_positions() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.0, 1.00, 0.0),  // pelvis
        Vector3::new(0.0, 1.15, 0.0),  // spine
        Vector3::new(0.0, 1.35, 0.0),  // chest
        Vector3::new(0.0, 1.60, 0.0),  // head
        Vector3::new(0.20, 1.30, 0.0), // l_shoulder
        Vector3::new(0.45, 1.30, 0.0), // l_elbow
        Vector3::new(-0.20, 1.30, 0.0),
        Vector3::new(-0.45, 1.30, 0.0),
        Vector3::new(0.10, 0.95, 0.0), // l_hip
        Vector3::new(0.10, 0.50, 0.0), // l_knee
        Vector3::new(-0.10, 0.95, 0.0),
        Vector3::new(-0.10, 0.50, 0.0),
    ]
}

/// One tube segment: geometry from `start` to `end`, weights blending from
/// `proximal` to `distal` joints along the way.
struct Segment {
    start: Vector3<f64>,
    end: Vector3<f64>,
    proximal: usize,
    distal: usize,
    radius: f64,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone)]
pub struct HumanoidConfig {
    /// Rings per tube segment.
    pub rings: usize,
    /// Vertices per ring.
    pub sides: usize,
    pub n_face_identity: usize,
    pub n_body_identity: usize,
    pub n_expression: usize,
    /// Amplitude of the random identity displacement fields.
    pub identity_scale: f64,
    pub expression_scale: f64,
    /// Amplitude of the pose-corrective basis; zero keeps the model exactly
    /// mirror-symmetric under pose mirroring.
    pub pose_basis_scale: f64,
    pub seed: u64,
}

impl Default for HumanoidConfig {
    fn default() -> Self {
        Self {
            rings: 4,
            sides: 6,
            n_face_identity: 8,
            n_body_identity: 10,
            n_expression: 6,
            identity_scale: 0.04,
            expression_scale: 0.02,
            pose_basis_scale: 0.005,
            seed: 0,
        }
    }
}

/// A built humanoid: the model plus its structural metadata.
pub struct Humanoid {
    pub model: BodyModel,
    /// Involutive vertex permutation: `mirror[i]` is the vertex at the
    /// mirrored (x-negated) position.
    pub vertex_mirror: Vec<usize>,
    pub mirror_map: MirrorMap,
}

impl Humanoid {
    /// Evenly spread landmark definition with exactly `count` indices.
    pub fn landmark_def(&self, name: &str, count: usize) -> LandmarkDef {
        let n = self.model.dims.vertices;
        assert!(count <= n);
        let indices = (0..count)
            .map(|i| ((i * n) / count) as u32)
            .collect::<Vec<_>>();
        LandmarkDef {
            name: name.into(),
            indices,
        }
    }
}

pub fn build(config: &HumanoidConfig) -> Humanoid {
    let joints = joint_positions();
    let seg = |a: usize, b: usize, radius: f64| Segment {
        start: joints[a],
        end: joints[b],
        proximal: a,
        distal: b,
        radius,
    };
    // Center and left-side segments; leaf bones extend past their joint so
    // elbow/knee/head rotations move real geometry.
    let center = vec![
        seg(PELVIS, SPINE, 0.09),
        seg(SPINE, CHEST, 0.09),
        seg(CHEST, HEAD, 0.05),
        Segment {
            start: joints[HEAD],
            end: joints[HEAD] + Vector3::new(0.0, 0.22, 0.0),
            proximal: HEAD,
            distal: HEAD,
            radius: 0.07,
        },
    ];
    let left = vec![
        seg(CHEST, L_SHOULDER, 0.045),
        seg(L_SHOULDER, L_ELBOW, 0.035),
        Segment {
            start: joints[L_ELBOW],
            end: joints[L_ELBOW] + Vector3::new(0.26, 0.0, 0.0),
            proximal: L_ELBOW,
            distal: L_ELBOW,
            radius: 0.03,
        },
        seg(PELVIS, L_HIP, 0.05),
        seg(L_HIP, L_KNEE, 0.045),
        Segment {
            start: joints[L_KNEE],
            end: joints[L_KNEE] + Vector3::new(0.0, -0.38, 0.0),
            proximal: L_KNEE,
            distal: L_KNEE,
            radius: 0.04,
        },
    ];

    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut weights: Vec<[f64; JOINTS]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let emit_tube = |s: &Segment, vertices: &mut Vec<Vector3<f64>>, weights: &mut Vec<[f64; JOINTS]>, faces: &mut Vec<[u32; 3]>| {
        let base = vertices.len() as u32;
        let axis = (s.end - s.start).normalize();
        // A stable frame perpendicular to the axis.
        let helper = if axis.x.abs() < 0.9 {
            Vector3::new(1.0, 0.0, 0.0)
        } else {
            Vector3::new(0.0, 1.0, 0.0)
        };
        let u = (helper - axis * helper.dot(&axis)).normalize();
        let v = axis.cross(&u);
        let rings = config.rings;
        let sides = config.sides;
        for ring in 0..rings {
            let t = if rings > 1 {
                ring as f64 / (rings - 1) as f64
            } else {
                0.0
            };
            let center = s.start + (s.end - s.start) * t;
            let wd = smoothstep(t);
            for side in 0..sides {
                let phi = std::f64::consts::TAU * side as f64 / sides as f64;
                vertices.push(center + s.radius * (phi.cos() * u + phi.sin() * v));
                let mut w = [0.0; JOINTS];
                w[s.proximal] += 1.0 - wd;
                w[s.distal] += wd;
                weights.push(w);
            }
        }
        for ring in 0..rings - 1 {
            for side in 0..sides {
                let next = (side + 1) % sides;
                let a = base + (ring * sides + side) as u32;
                let b = base + (ring * sides + next) as u32;
                let c = base + ((ring + 1) * sides + side) as u32;
                let d = base + ((ring + 1) * sides + next) as u32;
                faces.push([a, b, c]);
                faces.push([b, d, c]);
            }
        }
    };

    for s in center.iter().chain(&left) {
        emit_tube(s, &mut vertices, &mut weights, &mut faces);
    }

    // Mirror everything across x = 0. Negation is exact, so the mirrored
    // half is bitwise symmetric.
    let half = vertices.len();
    let mirror_map = joint_mirror_map();
    let mut vertex_mirror: Vec<usize> = (0..half).map(|i| i + half).collect();
    vertex_mirror.extend(0..half);
    for i in 0..half {
        let p = vertices[i];
        vertices.push(Vector3::new(-p.x, p.y, p.z));
        let mut w = [0.0; JOINTS];
        for j in 0..JOINTS {
            w[mirror_map.body_perm[j]] = weights[i][j];
        }
        weights.push(w);
    }
    let n_faces_half = faces.len();
    for fi in 0..n_faces_half {
        let f = faces[fi];
        faces.push([
            f[0] + half as u32,
            f[2] + half as u32,
            f[1] + half as u32,
        ]);
    }

    let n = vertices.len();
    let template = {
        let mut t = DVector::zeros(3 * n);
        for (i, p) in vertices.iter().enumerate() {
            t[3 * i] = p.x;
            t[3 * i + 1] = p.y;
            t[3 * i + 2] = p.z;
        }
        t
    };
    let mut skinning_weights = DMatrix::zeros(JOINTS, n);
    for (i, w) in weights.iter().enumerate() {
        for j in 0..JOINTS {
            skinning_weights[(j, i)] = w[j];
        }
    }

    // Joint regressor: uniform over vertices within reach of each joint,
    // nearest vertex as a fallback. Distances mirror exactly, so the
    // regressor is symmetric too.
    let mut joint_regressor = DMatrix::zeros(JOINTS, n);
    for (j, jp) in joints.iter().enumerate() {
        let reach = 0.13;
        let mut selected: Vec<usize> = (0..n)
            .filter(|&i| (vertices[i] - jp).norm_squared() < reach * reach)
            .collect();
        if selected.is_empty() {
            let mut best = 0;
            for i in 1..n {
                if (vertices[i] - jp).norm_squared() < (vertices[best] - jp).norm_squared() {
                    best = i;
                }
            }
            selected.push(best);
        }
        let w = 1.0 / selected.len() as f64;
        for i in selected {
            joint_regressor[(j, i)] = w;
        }
    }

    // Smooth random displacement bases.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut smooth_basis = |cols: usize, scale: f64, mask: Option<&dyn Fn(&Vector3<f64>) -> f64>| {
        let mut basis = DMatrix::zeros(3 * n, cols);
        for c in 0..cols {
            // A few random low-frequency harmonics per component.
            let waves: Vec<(Vector3<f64>, Vector3<f64>, f64)> = (0..3)
                .map(|_| {
                    let k = Vector3::new(
                        3.0 * (rng.random::<f64>() - 0.5),
                        3.0 * (rng.random::<f64>() - 0.5),
                        3.0 * (rng.random::<f64>() - 0.5),
                    );
                    let dir = Vector3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    )
                    .normalize();
                    let phase = std::f64::consts::TAU * rng.random::<f64>();
                    (k, dir, phase)
                })
                .collect();
            for (i, p) in vertices.iter().enumerate() {
                let m = mask.map(|f| f(p)).unwrap_or(1.0);
                let mut d = Vector3::zeros();
                for (k, dir, phase) in &waves {
                    d += dir * (k.dot(p) + phase).sin();
                }
                for x in 0..3 {
                    basis[(3 * i + x, c)] = scale * m * d[x];
                }
            }
        }
        basis
    };
    // Face identity and expression act on the head region only.
    let head_mask = |p: &Vector3<f64>| -> f64 {
        let t = ((p.y - 1.42) / 0.1).clamp(0.0, 1.0);
        smoothstep(t)
    };
    let face_identity_basis =
        smooth_basis(config.n_face_identity, config.identity_scale, Some(&head_mask));
    let expression_basis = smooth_basis(
        config.n_expression,
        config.expression_scale,
        Some(&head_mask),
    );
    let body_identity_basis = smooth_basis(config.n_body_identity, config.identity_scale, None);
    let pose_basis = smooth_basis(9 * (JOINTS - 1), config.pose_basis_scale, None);

    let model = BodyModel {
        dims: ModelDims {
            vertices: n,
            joints: JOINTS,
            face_identity: config.n_face_identity,
            body_identity: config.n_body_identity,
            expression: config.n_expression,
        },
        template,
        faces,
        parents: joint_parents(),
        face_identity_basis,
        body_identity_basis,
        expression_basis,
        pose_basis,
        skinning_weights,
        joint_regressor,
    };
    model.validate().expect("humanoid must satisfy invariants");
    Humanoid {
        model,
        vertex_mirror,
        mirror_map,
    }
}
