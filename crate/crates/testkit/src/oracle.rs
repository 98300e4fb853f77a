//! Deliberately naive scalar re-implementations used as test oracles.
//!
//! These mirror the mathematical definitions with plain loops and `[f64; _]`
//! arrays; they share no code with the main crate's evaluation path.

use bodyfit::mesh::Mesh;
use bodyfit::model::{BodyModel, Pose, ShapeParams};
use nalgebra::Vector3;

type Mat4 = [[f64; 4]; 4];

fn mat4_identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut acc = 0.0;
            for t in 0..4 {
                acc += a[r][t] * b[t][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

fn mat4_apply(m: &Mat4, p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (r, o) in out.iter_mut().enumerate() {
        *o = m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3];
    }
    out
}

/// Scalar Rodrigues formula.
fn rot3(aa: [f64; 3]) -> [[f64; 3]; 3] {
    let theta = (aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]).sqrt();
    let mut r = [[0.0; 3]; 3];
    if theta < 1e-12 {
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        return r;
    }
    let (x, y, z) = (aa[0] / theta, aa[1] / theta, aa[2] / theta);
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    r[0][0] = c + x * x * t;
    r[0][1] = x * y * t - z * s;
    r[0][2] = x * z * t + y * s;
    r[1][0] = y * x * t + z * s;
    r[1][1] = c + y * y * t;
    r[1][2] = y * z * t - x * s;
    r[2][0] = z * x * t - y * s;
    r[2][1] = z * y * t + x * s;
    r[2][2] = c + z * z * t;
    r
}

/// Unposed mesh by explicit triple loops.
pub fn naive_unposed(model: &BodyModel, shape: &ShapeParams, pose: &Pose) -> Vec<[f64; 3]> {
    let n = model.dims.vertices;
    let k = model.dims.joints;
    let mut out = vec![[0.0; 3]; n];
    for (i, v) in out.iter_mut().enumerate() {
        for (x, o) in v.iter_mut().enumerate() {
            *o = model.template[3 * i + x];
        }
    }
    for a in 0..model.dims.face_identity {
        for i in 0..n {
            for x in 0..3 {
                out[i][x] += shape.gamma[a] * model.face_identity_basis[(3 * i + x, a)];
            }
        }
    }
    for b in 0..model.dims.body_identity {
        for i in 0..n {
            for x in 0..3 {
                out[i][x] += shape.beta[b] * model.body_identity_basis[(3 * i + x, b)];
            }
        }
    }
    for e in 0..model.dims.expression {
        for i in 0..n {
            for x in 0..3 {
                out[i][x] += shape.psi[e] * model.expression_basis[(3 * i + x, e)];
            }
        }
    }
    // Pose features: row-major vec(R - I) per non-root joint.
    let mut features = vec![0.0; 9 * (k - 1)];
    for j in 1..k {
        let r = rot3([pose.theta[j].x, pose.theta[j].y, pose.theta[j].z]);
        for row in 0..3 {
            for col in 0..3 {
                let eye = if row == col { 1.0 } else { 0.0 };
                features[9 * (j - 1) + 3 * row + col] = r[row][col] - eye;
            }
        }
    }
    for (f, feat) in features.iter().enumerate() {
        for i in 0..n {
            for x in 0..3 {
                out[i][x] += feat * model.pose_basis[(3 * i + x, f)];
            }
        }
    }
    out
}

/// Joint locations by explicit loops (no expression contribution).
pub fn naive_joints(model: &BodyModel, shape: &ShapeParams) -> Vec<[f64; 3]> {
    let n = model.dims.vertices;
    let k = model.dims.joints;
    let mut shaped = vec![[0.0; 3]; n];
    for (i, v) in shaped.iter_mut().enumerate() {
        for (x, o) in v.iter_mut().enumerate() {
            *o = model.template[3 * i + x];
            for a in 0..model.dims.face_identity {
                *o += shape.gamma[a] * model.face_identity_basis[(3 * i + x, a)];
            }
            for b in 0..model.dims.body_identity {
                *o += shape.beta[b] * model.body_identity_basis[(3 * i + x, b)];
            }
        }
    }
    let mut joints = vec![[0.0; 3]; k];
    for (j, joint) in joints.iter_mut().enumerate() {
        for i in 0..n {
            for x in 0..3 {
                joint[x] += model.joint_regressor[(j, i)] * shaped[i][x];
            }
        }
    }
    joints
}

/// Full mesh generation via homogeneous 4x4 chains and per-vertex scalar
/// skinning.
pub fn naive_generate_mesh(model: &BodyModel, shape: &ShapeParams, pose: &Pose) -> Vec<[f64; 3]> {
    let n = model.dims.vertices;
    let k = model.dims.joints;
    let unposed = naive_unposed(model, shape, pose);
    let joints = naive_joints(model, shape);

    // World transform per joint.
    let mut world: Vec<Mat4> = vec![mat4_identity(); k];
    for j in 0..k {
        let r = rot3([pose.theta[j].x, pose.theta[j].y, pose.theta[j].z]);
        let mut local = mat4_identity();
        for row in 0..3 {
            for col in 0..3 {
                local[row][col] = r[row][col];
            }
        }
        match model.parents[j] {
            None => {
                for row in 0..3 {
                    local[row][3] = joints[j][row] + pose.root_translation[row];
                }
                world[j] = local;
            }
            Some(p) => {
                for row in 0..3 {
                    local[row][3] = joints[j][row] - joints[p][row];
                }
                world[j] = mat4_mul(&world[p].clone(), &local);
            }
        }
    }
    // Skinning transform: world about the rest joint.
    let mut skin: Vec<Mat4> = Vec::with_capacity(k);
    for j in 0..k {
        let mut unjoint = mat4_identity();
        for row in 0..3 {
            unjoint[row][3] = -joints[j][row];
        }
        skin.push(mat4_mul(&world[j], &unjoint));
    }

    let mut out = vec![[0.0; 3]; n];
    for i in 0..n {
        for j in 0..k {
            let w = model.skinning_weights[(j, i)];
            let moved = mat4_apply(&skin[j], unposed[i]);
            for x in 0..3 {
                out[i][x] += w * moved[x];
            }
        }
    }
    out
}

/// Maximum absolute coordinate difference between the main implementation's
/// flat buffer and the oracle's output.
pub fn max_abs_diff(mesh: &nalgebra::DVector<f64>, oracle: &[[f64; 3]]) -> f64 {
    let mut max = 0.0f64;
    for (i, v) in oracle.iter().enumerate() {
        for x in 0..3 {
            max = max.max((mesh[3 * i + x] - v[x]).abs());
        }
    }
    max
}

/// Brute-force closest distance from a point to a mesh by sampling a dense
/// barycentric grid on every triangle. Accurate to roughly the triangle
/// diameter divided by `resolution`.
pub fn grid_closest_distance(p: &Vector3<f64>, mesh: &Mesh, resolution: usize) -> f64 {
    let mut best = f64::INFINITY;
    for face in &mesh.faces {
        let a = mesh.vertices[face[0] as usize];
        let b = mesh.vertices[face[1] as usize];
        let c = mesh.vertices[face[2] as usize];
        for i in 0..=resolution {
            for j in 0..=(resolution - i) {
                let u = i as f64 / resolution as f64;
                let v = j as f64 / resolution as f64;
                let w = 1.0 - u - v;
                let q = a * u + b * v + c * w;
                best = best.min((p - q).norm());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rot3_is_orthonormal() {
        let r = rot3([0.3, -0.8, 0.5]);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|t| r[t][i] * r[t][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
    }
}
