//! Body model container and the mesh-generating function.
//!
//! A [`BodyModel`] holds the template mesh, the linear face-identity /
//! body-identity / expression bases, a pose-corrective basis driven by joint
//! rotation features, per-vertex skinning weights and a joint regressor.
//! Mesh generation composes four steps:
//!
//! 1. [`BodyModel::unposed_mesh`] — template plus linear displacements,
//! 2. [`BodyModel::joint_locations`] — regressed joints on the shaped body,
//! 3. [`BodyModel::global_joint_transforms`] — kinematic-chain transforms,
//! 4. [`lbs`] — linear blend skinning.
//!
//! Vertex buffers are flat `3N` vectors in vertex-major order
//! (`x0 y0 z0 x1 y1 z1 ...`); basis matrices are `3N x components` with one
//! displacement field per column.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, NamedArray};
use crate::math::{rodrigues, RigidTransform};
use crate::mesh::Mesh;

pub const WEIGHT_SUM_TOL: f64 = 1e-6;
pub const REGRESSOR_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("vertex {vertex}: skinning weights sum to {sum}, not 1")]
    WeightSum { vertex: usize, sum: f64 },
    #[error("vertex {vertex}, joint {joint}: negative skinning weight {value}")]
    NegativeWeight {
        vertex: usize,
        joint: usize,
        value: f64,
    },
    #[error("joint {joint}: regressor row sums to {sum}, not 1")]
    RegressorSum { joint: usize, sum: f64 },
    #[error("kinematic tree invalid: {0}")]
    Tree(String),
    #[error("face {face} references vertex {index}, but model has {vertices} vertices")]
    FaceIndex {
        face: usize,
        index: u32,
        vertices: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Declared sizes of every axis of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vertices: usize,
    pub joints: usize,
    pub face_identity: usize,
    pub body_identity: usize,
    pub expression: usize,
}

impl ModelDims {
    pub fn pose_features(&self) -> usize {
        9 * (self.joints - 1)
    }
}

/// Skeletal pose: one axis-angle per joint plus a world-space root offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation per joint, radians; index 0..K matches the
    /// skeleton, the root entry carries the global rotation.
    pub theta: Vec<Vector3<f64>>,
    /// World placement of the root joint.
    pub root_translation: Vector3<f64>,
}

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self {
            theta: vec![Vector3::zeros(); joints],
            root_translation: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.root_translation.iter().all(|v| v.is_finite())
    }
}

/// Linear shape coefficients: face identity, body identity, expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub psi: DVector<f64>,
}

impl ShapeParams {
    pub fn zeros(dims: &ModelDims) -> Self {
        Self {
            gamma: DVector::zeros(dims.face_identity),
            beta: DVector::zeros(dims.body_identity),
            psi: DVector::zeros(dims.expression),
        }
    }
}

/// The full parametric body model. Immutable after load; all evaluation
/// methods are pure, so a model can be shared freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub dims: ModelDims,
    /// Template vertex positions, flat 3N (meters).
    pub template: DVector<f64>,
    pub faces: Vec<[u32; 3]>,
    /// Parent joint per joint; `None` for the single root. Parents precede
    /// children (topological order).
    pub parents: Vec<Option<usize>>,
    /// Face identity basis, 3N x |gamma|.
    pub face_identity_basis: DMatrix<f64>,
    /// Body identity basis, 3N x |beta|.
    pub body_identity_basis: DMatrix<f64>,
    /// Expression basis, 3N x |psi|.
    pub expression_basis: DMatrix<f64>,
    /// Pose corrective basis, 3N x 9(K-1), contracted with [`pose_feature`].
    pub pose_basis: DMatrix<f64>,
    /// Skinning weights, K x N; each vertex column is a convex combination.
    pub skinning_weights: DMatrix<f64>,
    /// Joint regressor, K x N; rows sum to one.
    pub joint_regressor: DMatrix<f64>,
}

impl BodyModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let d = &self.dims;
        let n3 = 3 * d.vertices;
        let expect = |what: &str, got: usize, expected: usize| -> Result<(), ModelError> {
            if got != expected {
                return Err(ModelError::DimensionMismatch {
                    what: what.into(),
                    expected,
                    got,
                });
            }
            Ok(())
        };
        expect("template length", self.template.len(), n3)?;
        expect("parents length", self.parents.len(), d.joints)?;
        expect(
            "face identity basis rows",
            self.face_identity_basis.nrows(),
            n3,
        )?;
        expect(
            "face identity basis cols",
            self.face_identity_basis.ncols(),
            d.face_identity,
        )?;
        expect(
            "body identity basis rows",
            self.body_identity_basis.nrows(),
            n3,
        )?;
        expect(
            "body identity basis cols",
            self.body_identity_basis.ncols(),
            d.body_identity,
        )?;
        expect("expression basis rows", self.expression_basis.nrows(), n3)?;
        expect(
            "expression basis cols",
            self.expression_basis.ncols(),
            d.expression,
        )?;
        expect("pose basis rows", self.pose_basis.nrows(), n3)?;
        expect("pose basis cols", self.pose_basis.ncols(), d.pose_features())?;
        expect("skinning weight rows", self.skinning_weights.nrows(), d.joints)?;
        expect("skinning weight cols", self.skinning_weights.ncols(), d.vertices)?;
        expect("joint regressor rows", self.joint_regressor.nrows(), d.joints)?;
        expect("joint regressor cols", self.joint_regressor.ncols(), d.vertices)?;

        for (fi, face) in self.faces.iter().enumerate() {
            for &index in face {
                if index as usize >= d.vertices {
                    return Err(ModelError::FaceIndex {
                        face: fi,
                        index,
                        vertices: d.vertices,
                    });
                }
            }
        }

        let mut roots = 0usize;
        for (j, parent) in self.parents.iter().enumerate() {
            match parent {
                None => roots += 1,
                Some(p) => {
                    if *p >= j {
                        return Err(ModelError::Tree(format!(
                            "joint {j} has parent {p}; parents must precede children"
                        )));
                    }
                }
            }
        }
        if roots != 1 {
            return Err(ModelError::Tree(format!("expected 1 root, found {roots}")));
        }

        for v in 0..d.vertices {
            let mut sum = 0.0;
            for k in 0..d.joints {
                let w = self.skinning_weights[(k, v)];
                if w < -1e-9 {
                    return Err(ModelError::NegativeWeight {
                        vertex: v,
                        joint: k,
                        value: w,
                    });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(ModelError::WeightSum { vertex: v, sum });
            }
        }
        for k in 0..d.joints {
            let sum: f64 = self.joint_regressor.row(k).iter().sum();
            if (sum - 1.0).abs() > REGRESSOR_SUM_TOL {
                return Err(ModelError::RegressorSum { joint: k, sum });
            }
        }

        for (name, data) in [
            ("template", &self.template),
        ] {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name.into()));
            }
        }
        for (name, m) in [
            ("face_identity_basis", &self.face_identity_basis),
            ("body_identity_basis", &self.body_identity_basis),
            ("expression_basis", &self.expression_basis),
            ("pose_basis", &self.pose_basis),
            ("skinning_weights", &self.skinning_weights),
            ("joint_regressor", &self.joint_regressor),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name.into()));
            }
        }
        Ok(())
    }

    fn check_shape(&self, shape: &ShapeParams) -> Result<(), ModelError> {
        let pairs = [
            ("gamma", shape.gamma.len(), self.dims.face_identity),
            ("beta", shape.beta.len(), self.dims.body_identity),
            ("psi", shape.psi.len(), self.dims.expression),
        ];
        for (what, got, expected) in pairs {
            if got != expected {
                return Err(ModelError::DimensionMismatch {
                    what: what.into(),
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    fn check_pose(&self, pose: &Pose) -> Result<(), ModelError> {
        if pose.theta.len() != self.dims.joints {
            return Err(ModelError::DimensionMismatch {
                what: "pose joints".into(),
                expected: self.dims.joints,
                got: pose.theta.len(),
            });
        }
        if !pose.is_finite() {
            return Err(ModelError::NonFinite("pose".into()));
        }
        Ok(())
    }

    /// Unposed mesh: template plus identity, expression and pose-corrective
    /// displacements (flat 3N).
    pub fn unposed_mesh(&self, shape: &ShapeParams, pose: &Pose) -> Result<DVector<f64>, ModelError> {
        self.check_shape(shape)?;
        self.check_pose(pose)?;
        let mut out = self.template.clone();
        out.gemv(1.0, &self.face_identity_basis, &shape.gamma, 1.0);
        out.gemv(1.0, &self.body_identity_basis, &shape.beta, 1.0);
        out.gemv(1.0, &self.expression_basis, &shape.psi, 1.0);
        let features = pose_feature(&pose.theta);
        out.gemv(1.0, &self.pose_basis, &features, 1.0);
        Ok(out)
    }

    /// Pose-corrective displacements alone (flat 3N).
    pub fn pose_blend_offsets(&self, pose: &Pose) -> Result<DVector<f64>, ModelError> {
        self.check_pose(pose)?;
        let features = pose_feature(&pose.theta);
        Ok(&self.pose_basis * features)
    }

    /// Joint locations regressed from the identity-shaped mesh. Expression
    /// does not move joints.
    pub fn joint_locations(
        &self,
        gamma: &DVector<f64>,
        beta: &DVector<f64>,
    ) -> Result<Vec<Vector3<f64>>, ModelError> {
        if gamma.len() != self.dims.face_identity {
            return Err(ModelError::DimensionMismatch {
                what: "gamma".into(),
                expected: self.dims.face_identity,
                got: gamma.len(),
            });
        }
        if beta.len() != self.dims.body_identity {
            return Err(ModelError::DimensionMismatch {
                what: "beta".into(),
                expected: self.dims.body_identity,
                got: beta.len(),
            });
        }
        let mut shaped = self.template.clone();
        shaped.gemv(1.0, &self.face_identity_basis, gamma, 1.0);
        shaped.gemv(1.0, &self.body_identity_basis, beta, 1.0);
        Ok(regress_joints(&self.joint_regressor, &shaped))
    }

    /// World transforms mapping rest-pose space to posed space, one per
    /// joint. The root transform rotates about the root joint and applies
    /// the pose's root translation; children compose down the tree with
    /// rotations about their rest-pose joint locations in the parent frame.
    pub fn global_joint_transforms(
        &self,
        pose: &Pose,
        joints: &[Vector3<f64>],
    ) -> Result<Vec<RigidTransform>, ModelError> {
        Ok(self.chain_transforms(pose, joints)?.skinning)
    }

    pub(crate) fn chain_transforms(
        &self,
        pose: &Pose,
        joints: &[Vector3<f64>],
    ) -> Result<JointTransforms, ModelError> {
        self.check_pose(pose)?;
        if joints.len() != self.dims.joints {
            return Err(ModelError::DimensionMismatch {
                what: "joints".into(),
                expected: self.dims.joints,
                got: joints.len(),
            });
        }
        let rotations: Vec<Matrix3<f64>> = pose.theta.iter().map(rodrigues).collect();
        Ok(chain_from_rotations(
            &self.parents,
            &rotations,
            joints,
            &pose.root_translation,
        ))
    }

    /// Full mesh generation: unposed mesh, joints, chain transforms, LBS.
    pub fn generate_mesh(&self, shape: &ShapeParams, pose: &Pose) -> Result<DVector<f64>, ModelError> {
        let unposed = self.unposed_mesh(shape, pose)?;
        let joints = self.joint_locations(&shape.gamma, &shape.beta)?;
        let transforms = self.global_joint_transforms(pose, &joints)?;
        Ok(lbs(&unposed, &transforms, &self.skinning_weights))
    }

    /// The template and faces as a [`Mesh`].
    pub fn template_mesh(&self) -> Mesh {
        Mesh {
            vertices: unflatten(&self.template),
            faces: self.faces.clone(),
        }
    }
}

/// World and skinning (rest -> posed) transforms for every joint.
#[derive(Debug, Clone)]
pub(crate) struct JointTransforms {
    pub world: Vec<RigidTransform>,
    pub skinning: Vec<RigidTransform>,
}

/// Composes the kinematic chain from already-converted local rotations.
/// The root transform rotates about the root joint and applies the root
/// translation; each child rotates about its rest joint in the parent frame.
pub(crate) fn chain_from_rotations(
    parents: &[Option<usize>],
    rotations: &[Matrix3<f64>],
    joints: &[Vector3<f64>],
    root_translation: &Vector3<f64>,
) -> JointTransforms {
    let k = parents.len();
    let mut world: Vec<RigidTransform> = Vec::with_capacity(k);
    for j in 0..k {
        let g = match parents[j] {
            None => RigidTransform::new(rotations[j], joints[j] + root_translation),
            Some(p) => world[p].compose(&RigidTransform::new(rotations[j], joints[j] - joints[p])),
        };
        world.push(g);
    }
    let skinning = world
        .iter()
        .zip(joints)
        .map(|(g, j)| RigidTransform::new(g.rot, g.trans - g.rot * j))
        .collect();
    JointTransforms { world, skinning }
}

/// Pose feature vector: `vec(R(theta_j) - I)` flattened row-major for every
/// non-root joint, concatenated in joint order (9(K-1) entries). The root
/// rotation is excluded.
pub fn pose_feature(theta: &[Vector3<f64>]) -> DVector<f64> {
    let k = theta.len();
    let mut out = DVector::zeros(9 * k.saturating_sub(1));
    for (j, aa) in theta.iter().enumerate().skip(1) {
        let m = rodrigues(aa) - Matrix3::identity();
        let base = 9 * (j - 1);
        for r in 0..3 {
            for c in 0..3 {
                out[base + 3 * r + c] = m[(r, c)];
            }
        }
    }
    out
}

/// Linear blend skinning: each vertex is the weight-blended image of its
/// rest position under the joint transforms.
pub fn lbs(
    verts: &DVector<f64>,
    transforms: &[RigidTransform],
    weights: &DMatrix<f64>,
) -> DVector<f64> {
    let n = verts.len() / 3;
    debug_assert_eq!(weights.ncols(), n);
    debug_assert_eq!(weights.nrows(), transforms.len());
    let mut out = DVector::zeros(verts.len());
    for i in 0..n {
        let v = Vector3::new(verts[3 * i], verts[3 * i + 1], verts[3 * i + 2]);
        let mut acc = Vector3::zeros();
        for (k, t) in transforms.iter().enumerate() {
            let w = weights[(k, i)];
            if w != 0.0 {
                acc += w * t.apply(&v);
            }
        }
        out[3 * i] = acc.x;
        out[3 * i + 1] = acc.y;
        out[3 * i + 2] = acc.z;
    }
    out
}

/// Applies a K x N regressor to a flat 3N vertex buffer.
pub fn regress_joints(regressor: &DMatrix<f64>, verts: &DVector<f64>) -> Vec<Vector3<f64>> {
    let n = verts.len() / 3;
    let k = regressor.nrows();
    let mut joints = vec![Vector3::zeros(); k];
    for j in 0..k {
        let mut acc = Vector3::zeros();
        for i in 0..n {
            let r = regressor[(j, i)];
            if r != 0.0 {
                acc += r * Vector3::new(verts[3 * i], verts[3 * i + 1], verts[3 * i + 2]);
            }
        }
        joints[j] = acc;
    }
    joints
}

/// Flat 3N buffer as per-vertex vectors.
pub fn unflatten(verts: &DVector<f64>) -> Vec<Vector3<f64>> {
    (0..verts.len() / 3)
        .map(|i| Vector3::new(verts[3 * i], verts[3 * i + 1], verts[3 * i + 2]))
        .collect()
}

/// Per-vertex vectors as a flat 3N buffer.
pub fn flatten(verts: &[Vector3<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(3 * verts.len());
    for (i, v) in verts.iter().enumerate() {
        out[3 * i] = v.x;
        out[3 * i + 1] = v.y;
        out[3 * i + 2] = v.z;
    }
    out
}

// --- container IO ---------------------------------------------------------

pub const MODEL_KIND: &str = "body_model";

impl BodyModel {
    /// Reads a model from an SBM1 container and validates every invariant.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let c = Container::read(path)?;
        Self::from_container(&c)
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        let meta = c.meta_object();
        let dims: ModelDims = meta
            .get("dims")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .ok_or_else(|| ContainerError::Header("missing or malformed dims in meta".into()))?;
        let n = dims.vertices;
        let k = dims.joints;
        let n3 = 3 * n;

        let template = DVector::from_vec(c.take_f64("template", &[n, 3])?);
        let (fshape, fdata) = c.get_u32("faces")?;
        if fshape.len() != 2 || fshape[1] != 3 {
            return Err(ContainerError::ArrayShape {
                name: "faces".into(),
                got: fshape.to_vec(),
                want: vec![fshape.first().copied().unwrap_or(0), 3],
            }
            .into());
        }
        let faces: Vec<[u32; 3]> = fdata.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let (pshape, pdata) = c.get_i32("parents")?;
        if pshape != [k] {
            return Err(ContainerError::ArrayShape {
                name: "parents".into(),
                got: pshape.to_vec(),
                want: vec![k],
            }
            .into());
        }
        let parents = pdata
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();

        let basis = |name: &str, comps: usize| -> Result<DMatrix<f64>, ModelError> {
            let data = c.take_f64(name, &[comps, n, 3])?;
            // Disk layout is (component, vertex, xyz) row-major; in memory we
            // keep one flattened displacement field per column.
            let mut m = DMatrix::zeros(n3, comps);
            for comp in 0..comps {
                for r in 0..n3 {
                    m[(r, comp)] = data[comp * n3 + r];
                }
            }
            Ok(m)
        };
        let face_identity_basis = basis("face_identity_basis", dims.face_identity)?;
        let body_identity_basis = basis("body_identity_basis", dims.body_identity)?;
        let expression_basis = basis("expression_basis", dims.expression)?;
        let pose_basis = basis("pose_basis", dims.pose_features())?;

        let kxn = |name: &str| -> Result<DMatrix<f64>, ModelError> {
            let data = c.take_f64(name, &[k, n])?;
            Ok(DMatrix::from_row_iterator(k, n, data))
        };
        let skinning_weights = kxn("skinning_weights")?;
        let joint_regressor = kxn("joint_regressor")?;

        let model = BodyModel {
            dims,
            template,
            faces,
            parents,
            face_identity_basis,
            body_identity_basis,
            expression_basis,
            pose_basis,
            skinning_weights,
            joint_regressor,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.to_container().write(path)?;
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let d = &self.dims;
        let n = d.vertices;
        let n3 = 3 * n;
        let mut c = Container::new(MODEL_KIND);
        c.meta = serde_json::json!({
            "dims": d,
            "polygons": self.faces.len(),
        });
        c.push(NamedArray::from_f64(
            "template",
            vec![n, 3],
            self.template.as_slice(),
        ));
        c.push(NamedArray::u32(
            "faces",
            vec![self.faces.len(), 3],
            self.faces.iter().flatten().copied().collect(),
        ));
        c.push(NamedArray::i32(
            "parents",
            vec![d.joints],
            self.parents
                .iter()
                .map(|p| p.map(|v| v as i32).unwrap_or(-1))
                .collect(),
        ));
        let push_basis = |c: &mut Container, name: &str, m: &DMatrix<f64>| {
            let comps = m.ncols();
            let mut data = Vec::with_capacity(comps * n3);
            for comp in 0..comps {
                for r in 0..n3 {
                    data.push(m[(r, comp)] as f32);
                }
            }
            c.push(NamedArray::f32(name, vec![comps, n, 3], data));
        };
        push_basis(&mut c, "face_identity_basis", &self.face_identity_basis);
        push_basis(&mut c, "body_identity_basis", &self.body_identity_basis);
        push_basis(&mut c, "expression_basis", &self.expression_basis);
        push_basis(&mut c, "pose_basis", &self.pose_basis);
        let push_kxn = |c: &mut Container, name: &str, m: &DMatrix<f64>| {
            let mut data = Vec::with_capacity(d.joints * n);
            for k in 0..d.joints {
                for i in 0..n {
                    data.push(m[(k, i)] as f32);
                }
            }
            c.push(NamedArray::f32(name, vec![d.joints, n], data));
        };
        push_kxn(&mut c, "skinning_weights", &self.skinning_weights);
        push_kxn(&mut c, "joint_regressor", &self.joint_regressor);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    /// Two joints on the y axis, four vertices, one identity/expression
    /// component each; enough structure to exercise every path by hand.
    fn tiny_model() -> BodyModel {
        let dims = ModelDims {
            vertices: 4,
            joints: 2,
            face_identity: 1,
            body_identity: 1,
            expression: 1,
        };
        let template = DVector::from_vec(vec![
            0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            1.0, 1.0, 0.0, //
            0.0, 2.0, 0.0,
        ]);
        let faces = vec![[0, 1, 2], [1, 3, 2]];
        let parents = vec![None, Some(0)];
        let face_identity_basis =
            DMatrix::from_column_slice(12, 1, &[0.1, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let body_identity_basis =
            DMatrix::from_column_slice(12, 1, &[0.0, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.4]);
        let expression_basis =
            DMatrix::from_column_slice(12, 1, &[0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let pose_basis = DMatrix::zeros(12, 9);
        let skinning_weights = DMatrix::from_row_slice(
            2,
            4,
            &[
                1.0, 0.5, 0.25, 0.0, //
                0.0, 0.5, 0.75, 1.0,
            ],
        );
        let joint_regressor = DMatrix::from_row_slice(
            2,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0,
            ],
        );
        let model = BodyModel {
            dims,
            template,
            faces,
            parents,
            face_identity_basis,
            body_identity_basis,
            expression_basis,
            pose_basis,
            skinning_weights,
            joint_regressor,
        };
        model.validate().unwrap();
        model
    }

    #[test]
    fn zero_params_identity_pose_is_template() {
        let m = tiny_model();
        let shape = ShapeParams::zeros(&m.dims);
        let pose = Pose::identity(m.dims.joints);
        let mesh = m.generate_mesh(&shape, &pose).unwrap();
        assert_relative_eq!(mesh, m.template, epsilon = 1e-12);
    }

    #[test]
    fn one_hot_gamma_extracts_basis_column() {
        let m = tiny_model();
        let mut shape = ShapeParams::zeros(&m.dims);
        shape.gamma[0] = 1.0;
        let pose = Pose::identity(m.dims.joints);
        let unposed = m.unposed_mesh(&shape, &pose).unwrap();
        let expected = &m.template + m.face_identity_basis.column(0);
        assert_relative_eq!(unposed, expected, epsilon = 1e-12);
    }

    #[test]
    fn identity_pose_gives_zero_offsets() {
        let m = tiny_model();
        let offsets = m.pose_blend_offsets(&Pose::identity(2)).unwrap();
        assert_eq!(offsets, DVector::zeros(12));
    }

    #[test]
    fn root_rotation_gives_zero_offsets() {
        let m = tiny_model();
        let mut pose = Pose::identity(2);
        pose.theta[0] = Vector3::new(0.3, 0.7, -0.4);
        let offsets = m.pose_blend_offsets(&pose).unwrap();
        assert_eq!(offsets, DVector::zeros(12));
    }

    #[test]
    fn pose_feature_quarter_turn_about_x() {
        let theta = vec![Vector3::zeros(), Vector3::new(FRAC_PI_2, 0.0, 0.0)];
        let f = pose_feature(&theta);
        // R_x(90) - I, row-major.
        let expected = [0.0, 0.0, 0.0, 0.0, -1.0, -1.0, 0.0, 1.0, -1.0];
        assert_eq!(f.len(), 9);
        for (got, want) in f.iter().zip(expected) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_offsets_contract_basis_with_features() {
        let mut m = tiny_model();
        let mut basis = DMatrix::zeros(12, 9);
        for r in 0..12 {
            for c in 0..9 {
                basis[(r, c)] = ((r * 9 + c) as f64 * 0.01).sin();
            }
        }
        m.pose_basis = basis.clone();
        let mut pose = Pose::identity(2);
        pose.theta[1] = Vector3::new(FRAC_PI_2, 0.0, 0.0);
        let offsets = m.pose_blend_offsets(&pose).unwrap();
        let f = pose_feature(&pose.theta);
        let expected = basis * f;
        assert_relative_eq!(offsets, expected, epsilon = 1e-12);
    }

    #[test]
    fn joint_locations_zero_shape_is_regressed_template() {
        let m = tiny_model();
        let joints = m
            .joint_locations(&DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        // Regressor rows are one-hot on vertices 0 and 1.
        assert_relative_eq!(joints[0], Vector3::new(0.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(joints[1], Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn one_hot_regressor_row_tracks_shaped_vertex() {
        let m = tiny_model();
        let gamma = DVector::from_vec(vec![2.0]);
        let beta = DVector::from_vec(vec![-1.0]);
        let joints = m.joint_locations(&gamma, &beta).unwrap();
        // Vertex 1 shaped: (0,1,0) + 2*(0.2,0,0) + (-1)*(0,0.3,0).
        assert_relative_eq!(joints[1], Vector3::new(0.4, 0.7, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn expression_does_not_move_joints() {
        let m = tiny_model();
        let mut shape = ShapeParams::zeros(&m.dims);
        shape.psi[0] = 5.0;
        let j0 = m.joint_locations(&shape.gamma, &shape.beta).unwrap();
        let j1 = m
            .joint_locations(&DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        assert_eq!(j0, j1);
    }

    #[test]
    fn identity_pose_transforms_are_identity() {
        let m = tiny_model();
        let joints = m
            .joint_locations(&DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        let transforms = m
            .global_joint_transforms(&Pose::identity(2), &joints)
            .unwrap();
        for t in transforms {
            assert_relative_eq!(t.rot, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(t.trans, Vector3::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn child_rotation_is_about_child_joint() {
        let m = tiny_model();
        let joints = m
            .joint_locations(&DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        let mut pose = Pose::identity(2);
        pose.theta[1] = Vector3::new(0.0, 0.0, FRAC_PI_2);
        let transforms = m.global_joint_transforms(&pose, &joints).unwrap();
        // Child joint sits at (0,1,0); its transform must fix that point.
        assert_relative_eq!(
            transforms[1].apply(&joints[1]),
            joints[1],
            epsilon = 1e-12
        );
        // A point one unit along +y from the child maps one unit along -x...
        // rotating (0,2,0) by 90 deg about z around (0,1,0) gives (-1,1,0).
        assert_relative_eq!(
            transforms[1].apply(&Vector3::new(0.0, 2.0, 0.0)),
            Vector3::new(-1.0, 1.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn root_rotation_left_multiplies_every_transform() {
        let m = tiny_model();
        let joints = m
            .joint_locations(&DVector::zeros(1), &DVector::zeros(1))
            .unwrap();
        let mut pose = Pose::identity(2);
        pose.theta[1] = Vector3::new(0.4, -0.2, 0.9);
        let base = m.global_joint_transforms(&pose, &joints).unwrap();

        let root_aa = Vector3::new(0.0, 0.3, 0.0);
        pose.theta[0] = root_aa;
        let rotated = m.global_joint_transforms(&pose, &joints).unwrap();

        let root = RigidTransform::about_point(rodrigues(&root_aa), joints[0]);
        for (b, r) in base.iter().zip(&rotated) {
            let expected = root.compose(b);
            assert_relative_eq!(r.rot, expected.rot, epsilon = 1e-12);
            assert_relative_eq!(r.trans, expected.trans, epsilon = 1e-12);
        }
    }

    #[test]
    fn lbs_identity_transforms_keep_vertices() {
        let m = tiny_model();
        let out = lbs(
            &m.template,
            &vec![RigidTransform::identity(); 2],
            &m.skinning_weights,
        );
        assert_relative_eq!(out, m.template, epsilon = 1e-15);
    }

    #[test]
    fn lbs_full_weight_tracks_single_transform() {
        let m = tiny_model();
        let t = RigidTransform::new(
            rodrigues(&Vector3::new(0.1, 0.2, 0.3)),
            Vector3::new(1.0, -2.0, 0.5),
        );
        let transforms = vec![RigidTransform::identity(), t];
        let out = lbs(&m.template, &transforms, &m.skinning_weights);
        // Vertex 3 has weight 1 on joint 1.
        let v = Vector3::new(m.template[9], m.template[10], m.template[11]);
        let posed = Vector3::new(out[9], out[10], out[11]);
        assert_relative_eq!(posed, t.apply(&v), epsilon = 1e-12);
    }

    #[test]
    fn equal_transforms_move_rigidly() {
        // Weights sum to one per vertex, so equal joint transforms act like
        // a single rigid transform on every vertex.
        let m = tiny_model();
        let t = RigidTransform::new(
            rodrigues(&Vector3::new(-0.3, 0.8, 0.1)),
            Vector3::new(0.2, 0.0, -1.0),
        );
        let out = lbs(&m.template, &vec![t; 2], &m.skinning_weights);
        for i in 0..4 {
            let v = Vector3::new(m.template[3 * i], m.template[3 * i + 1], m.template[3 * i + 2]);
            let got = Vector3::new(out[3 * i], out[3 * i + 1], out[3 * i + 2]);
            assert_relative_eq!(got, t.apply(&v), epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_root_rotation_rotates_mesh_about_root() {
        let m = tiny_model();
        let shape = ShapeParams::zeros(&m.dims);
        let mut pose = Pose::identity(2);
        let aa = Vector3::new(0.0, 0.0, 1.1);
        pose.theta[0] = aa;
        let mesh = m.generate_mesh(&shape, &pose).unwrap();
        let joints = m
            .joint_locations(&shape.gamma, &shape.beta)
            .unwrap();
        let rigid = RigidTransform::about_point(rodrigues(&aa), joints[0]);
        for i in 0..4 {
            let v = Vector3::new(m.template[3 * i], m.template[3 * i + 1], m.template[3 * i + 2]);
            let got = Vector3::new(mesh[3 * i], mesh[3 * i + 1], mesh[3 * i + 2]);
            assert_relative_eq!(got, rigid.apply(&v), epsilon = 1e-12);
        }
    }

    #[test]
    fn unposed_mesh_is_affine_in_shape() {
        let m = tiny_model();
        let pose = Pose::identity(2);
        let s1 = ShapeParams {
            gamma: DVector::from_vec(vec![0.7]),
            beta: DVector::from_vec(vec![-0.2]),
            psi: DVector::from_vec(vec![1.1]),
        };
        let s2 = ShapeParams {
            gamma: DVector::from_vec(vec![-0.4]),
            beta: DVector::from_vec(vec![0.9]),
            psi: DVector::from_vec(vec![0.3]),
        };
        let (a, b) = (0.35, 0.95);
        let mix = ShapeParams {
            gamma: a * &s1.gamma + b * &s2.gamma,
            beta: a * &s1.beta + b * &s2.beta,
            psi: a * &s1.psi + b * &s2.psi,
        };
        let f1 = m.unposed_mesh(&s1, &pose).unwrap();
        let f2 = m.unposed_mesh(&s2, &pose).unwrap();
        let fmix = m.unposed_mesh(&mix, &pose).unwrap();
        let expected = a * &f1 + b * &f2 - (a + b - 1.0) * &m.template;
        assert_relative_eq!(fmix, expected, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = tiny_model();
        let bad = ShapeParams {
            gamma: DVector::zeros(3),
            beta: DVector::zeros(1),
            psi: DVector::zeros(1),
        };
        assert!(matches!(
            m.unposed_mesh(&bad, &Pose::identity(2)),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn container_round_trip() {
        let m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sbm1");
        let path2 = dir.path().join("model2.sbm1");
        m.save(&path).unwrap();
        // Storage is f32, so the first load quantizes; after that the
        // round trip must be exact, file bytes included.
        let back = BodyModel::load(&path).unwrap();
        assert_relative_eq!(back.template, m.template, epsilon = 1e-7);
        back.save(&path2).unwrap();
        let again = BodyModel::load(&path2).unwrap();
        assert_eq!(back, again);
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn validate_rejects_bad_weight_sum() {
        let mut m = tiny_model();
        m.skinning_weights[(0, 2)] = 0.9;
        assert!(matches!(
            m.validate(),
            Err(ModelError::WeightSum { vertex: 2, .. })
        ));
    }

    #[test]
    fn validate_rejects_bad_regressor_sum() {
        let mut m = tiny_model();
        m.joint_regressor[(1, 1)] = 0.5;
        assert!(matches!(
            m.validate(),
            Err(ModelError::RegressorSum { joint: 1, .. })
        ));
    }

    #[test]
    fn validate_rejects_two_roots() {
        let mut m = tiny_model();
        m.parents[1] = None;
        assert!(matches!(m.validate(), Err(ModelError::Tree(_))));
    }
}
