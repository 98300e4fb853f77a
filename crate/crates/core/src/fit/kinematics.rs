//! Forward kinematics of landmark vertices with analytic Jacobians.
//!
//! For one frame, computes the world position of every landmark vertex and
//! (optionally) its derivative with respect to the frame-local human
//! parameter block `[gamma | beta | psi | theta | root translation]`.
//!
//! Derivative structure, for a skinned point
//! `p_i = sum_k w_ki (R'_k t_i + u_k)`:
//!
//! - shape coefficients move both the unposed point (`A_i = sum_k w_ki R'_k`
//!   times the basis block) and the joints; a joint displacement `dj_m`
//!   shifts the posed point by `(R'_parent(m) - R'_m) dj_m`, weighted by the
//!   total skinning weight of m's subtree;
//! - a joint rotation `theta_m` acts on every descendant transform through
//!   `dG'_k = Xi_mc G'_k` with `Xi_mc = G'_p D_mc G'_m^{-1}`, which is affine
//!   on already-posed points, plus the pose-corrective blendshape path.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::math::{rodrigues, rodrigues_jacobian};
use crate::model::{chain_from_rotations, pose_feature, BodyModel};

use super::layout::ParamLayout;

/// Model-dependent constants reused across frames and iterations.
#[derive(Debug, Clone)]
pub struct KinematicsCache {
    /// Landmark vertex indices.
    pub vertices: Vec<usize>,
    /// Rest joints regressed from the template, 3K.
    pub joint_rest: Vec<Vector3<f64>>,
    /// d(joints)/d(gamma), 3K x n_gamma.
    pub joint_gamma: DMatrix<f64>,
    /// d(joints)/d(beta), 3K x n_beta.
    pub joint_beta: DMatrix<f64>,
    /// Subtree-accumulated skinning weights per landmark vertex, K x L:
    /// entry (m, l) is the total weight vertex l puts on joints in m's
    /// subtree (m included).
    pub subtree_weights: DMatrix<f64>,
}

impl KinematicsCache {
    pub fn build(model: &BodyModel, vertices: Vec<usize>) -> Self {
        let k = model.dims.joints;
        let joint_rest = model
            .joint_locations(
                &DVector::zeros(model.dims.face_identity),
                &DVector::zeros(model.dims.body_identity),
            )
            .expect("zero shape params always match model dims");
        let reg_times_basis = |basis: &DMatrix<f64>| -> DMatrix<f64> {
            let comps = basis.ncols();
            let mut out = DMatrix::zeros(3 * k, comps);
            for j in 0..k {
                for i in 0..model.dims.vertices {
                    let r = model.joint_regressor[(j, i)];
                    if r != 0.0 {
                        for c in 0..comps {
                            for x in 0..3 {
                                out[(3 * j + x, c)] += r * basis[(3 * i + x, c)];
                            }
                        }
                    }
                }
            }
            out
        };
        let joint_gamma = reg_times_basis(&model.face_identity_basis);
        let joint_beta = reg_times_basis(&model.body_identity_basis);

        let mut subtree_weights = DMatrix::zeros(k, vertices.len());
        for (l, &v) in vertices.iter().enumerate() {
            for j in 0..k {
                subtree_weights[(j, l)] = model.skinning_weights[(j, v)];
            }
        }
        // Accumulate child weights into parents (children have larger ids).
        for j in (1..k).rev() {
            if let Some(p) = model.parents[j] {
                for l in 0..vertices.len() {
                    let w = subtree_weights[(j, l)];
                    subtree_weights[(p, l)] += w;
                }
            }
        }
        Self {
            vertices,
            joint_rest,
            joint_gamma,
            joint_beta,
            subtree_weights,
        }
    }
}

/// Landmark positions for one frame, with optional Jacobians against the
/// frame-local human block (3 x `layout.frame_human()` each).
pub struct FrameKinematics {
    pub positions: Vec<Vector3<f64>>,
    pub jacobians: Option<Vec<DMatrix<f64>>>,
}

pub fn frame_kinematics(
    model: &BodyModel,
    cache: &KinematicsCache,
    layout: &ParamLayout,
    gamma: &DVector<f64>,
    beta: &DVector<f64>,
    psi: &DVector<f64>,
    theta: &[Vector3<f64>],
    root_translation: &Vector3<f64>,
    want_jacobians: bool,
) -> FrameKinematics {
    let k = model.dims.joints;
    let (ng, nb, np) = (layout.n_gamma, layout.n_beta, layout.n_psi);
    // Column offsets inside the frame-local human block.
    let off_gamma = 0;
    let off_beta = ng;
    let off_psi = ng + nb;
    let off_theta = ng + nb + np;
    let off_root = off_theta + 3 * k;
    let ph = layout.frame_human();

    // Joints under the current identity.
    let mut joints = cache.joint_rest.clone();
    for j in 0..k {
        for x in 0..3 {
            let mut acc = 0.0;
            for a in 0..ng {
                acc += cache.joint_gamma[(3 * j + x, a)] * gamma[a];
            }
            for b in 0..nb {
                acc += cache.joint_beta[(3 * j + x, b)] * beta[b];
            }
            joints[j][x] += acc;
        }
    }

    let rotations: Vec<Matrix3<f64>> = theta.iter().map(rodrigues).collect();
    let transforms = chain_from_rotations(&model.parents, &rotations, &joints, root_translation);
    let features = pose_feature(theta);

    // theta -> world-transform perturbations: Xi_{m,c} as (A, b) pairs with
    // d(point) = A p + b for points already carried by a descendant of m.
    let mut xi: Vec<[(Matrix3<f64>, Vector3<f64>); 3]> = Vec::new();
    // theta -> pose-feature derivative, 9 entries per (joint, component).
    let mut dfeat: Vec<[[f64; 9]; 3]> = Vec::new();
    if want_jacobians {
        xi.reserve(k);
        dfeat.reserve(k);
        for m in 0..k {
            let drot = rodrigues_jacobian(&theta[m]);
            let parent_rot = match model.parents[m] {
                Some(p) => transforms.world[p].rot,
                None => Matrix3::identity(),
            };
            let world_m = &transforms.world[m];
            let mut entry = [(Matrix3::zeros(), Vector3::zeros()); 3];
            let mut feat_entry = [[0.0; 9]; 3];
            for c in 0..3 {
                let a = parent_rot * drot[c] * world_m.rot.transpose();
                entry[c] = (a, -(a * world_m.trans));
                for r in 0..3 {
                    for s in 0..3 {
                        feat_entry[c][3 * r + s] = drot[c][(r, s)];
                    }
                }
            }
            xi.push(entry);
            dfeat.push(feat_entry);
        }
    }

    let n_landmarks = cache.vertices.len();
    let mut positions = Vec::with_capacity(n_landmarks);
    let mut jacobians = want_jacobians.then(|| Vec::with_capacity(n_landmarks));

    for (l, &vi) in cache.vertices.iter().enumerate() {
        // Unposed vertex.
        let mut t_i = Vector3::new(
            model.template[3 * vi],
            model.template[3 * vi + 1],
            model.template[3 * vi + 2],
        );
        for x in 0..3 {
            let row = 3 * vi + x;
            let mut acc = 0.0;
            for a in 0..ng {
                acc += model.face_identity_basis[(row, a)] * gamma[a];
            }
            for b in 0..nb {
                acc += model.body_identity_basis[(row, b)] * beta[b];
            }
            for e in 0..np {
                acc += model.expression_basis[(row, e)] * psi[e];
            }
            for ftr in 0..features.len() {
                acc += model.pose_basis[(row, ftr)] * features[ftr];
            }
            t_i[x] += acc;
        }

        // Skinning.
        let mut p = Vector3::zeros();
        let mut posed_per_joint: Vec<Vector3<f64>> = Vec::new();
        if want_jacobians {
            posed_per_joint = Vec::with_capacity(k);
        }
        let mut blended_rot = Matrix3::zeros();
        for j in 0..k {
            let w = model.skinning_weights[(j, vi)];
            let posed = transforms.skinning[j].apply(&t_i);
            if want_jacobians {
                posed_per_joint.push(w * posed);
                blended_rot += w * transforms.skinning[j].rot;
            }
            p += w * posed;
        }
        positions.push(p);

        let Some(jacs) = jacobians.as_mut() else {
            continue;
        };

        // Subtree sums of weighted posed points.
        let mut q = posed_per_joint;
        for j in (1..k).rev() {
            if let Some(par) = model.parents[j] {
                let qj = q[j];
                q[par] += qj;
            }
        }

        let mut jac = DMatrix::zeros(3, ph);

        // d(posed)/d(joint m): subtree weight times (R'_parent - R'_m).
        // Assembled as a 3 x 3K matrix, then contracted with the joint
        // shape derivatives.
        let mut djoints = DMatrix::zeros(3, 3 * k);
        for m in 0..k {
            let c_mi = cache.subtree_weights[(m, l)];
            if c_mi == 0.0 {
                continue;
            }
            let parent_rot = match model.parents[m] {
                Some(p) => transforms.world[p].rot,
                None => Matrix3::identity(),
            };
            let delta = parent_rot - transforms.world[m].rot;
            for r in 0..3 {
                for s in 0..3 {
                    djoints[(r, 3 * m + s)] = c_mi * delta[(r, s)];
                }
            }
        }

        // gamma and beta: blended rotation times the basis block, plus the
        // joint-motion path.
        for (cols, off, basis, joint_basis) in [
            (ng, off_gamma, &model.face_identity_basis, &cache.joint_gamma),
            (nb, off_beta, &model.body_identity_basis, &cache.joint_beta),
        ] {
            for a in 0..cols {
                let bcol = Vector3::new(
                    basis[(3 * vi, a)],
                    basis[(3 * vi + 1, a)],
                    basis[(3 * vi + 2, a)],
                );
                let mut col = blended_rot * bcol;
                for m in 0..3 * k {
                    let jb = joint_basis[(m, a)];
                    if jb != 0.0 {
                        for r in 0..3 {
                            col[r] += djoints[(r, m)] * jb;
                        }
                    }
                }
                for r in 0..3 {
                    jac[(r, off + a)] = col[r];
                }
            }
        }

        // psi: expression moves only the unposed point.
        for e in 0..np {
            let bcol = Vector3::new(
                model.expression_basis[(3 * vi, e)],
                model.expression_basis[(3 * vi + 1, e)],
                model.expression_basis[(3 * vi + 2, e)],
            );
            let col = blended_rot * bcol;
            for r in 0..3 {
                jac[(r, off_psi + e)] = col[r];
            }
        }

        // theta: rigid-chain path plus pose-corrective blendshapes.
        for m in 0..k {
            let c_mi = cache.subtree_weights[(m, l)];
            for c in 0..3 {
                let mut col = Vector3::zeros();
                if c_mi != 0.0 {
                    let (a, b) = &xi[m][c];
                    col = a * q[m] + c_mi * b;
                }
                if m > 0 {
                    // Feature block of joint m lives at 9(m-1).
                    let base = 9 * (m - 1);
                    let mut dt = Vector3::zeros();
                    for r in 0..3 {
                        let row = 3 * vi + r;
                        let mut acc = 0.0;
                        for s in 0..9 {
                            acc += model.pose_basis[(row, base + s)] * dfeat[m][c][s];
                        }
                        dt[r] = acc;
                    }
                    col += blended_rot * dt;
                }
                for r in 0..3 {
                    jac[(r, off_theta + 3 * m + c)] = col[r];
                }
            }
        }

        // Root translation: carried through every joint transform.
        let total_weight = cache.subtree_weights[(0, l)];
        for r in 0..3 {
            jac[(r, off_root + r)] = total_weight;
        }

        jacs.push(jac);
    }

    FrameKinematics {
        positions,
        jacobians,
    }
}
