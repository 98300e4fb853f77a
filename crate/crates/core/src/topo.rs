//! Topology transfer: barycentric surface maps and masked basis blending.
//!
//! A [`SurfaceMap`] stores, for every vertex of a target mesh, the closest
//! point on a source mesh encoded as a triangle index plus barycentric
//! coordinates. Applying the map to any per-vertex data on the source
//! topology produces the corresponding data on the target topology. The rest
//! of the module covers the pieces needed to assemble a combined model on a
//! new topology: vertex-group mapping, joint-regressor transfer (which must
//! keep exact row sums), eye regressors built from extreme points, masked
//! identity-basis blending, and rigid skinning overrides.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Mesh;

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("source mesh has no triangles")]
    EmptySource,
    #[error("data has {got} rows, surface map source has {expected} vertices")]
    DataRows { got: usize, expected: usize },
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("vertex group is empty")]
    EmptyGroup,
    #[error("joint {0} out of range")]
    JointIndex(usize),
    #[error("vertex index {0} out of range")]
    VertexIndex(usize),
    #[error("regressor row {joint} lost all mass in transfer (sum {sum})")]
    DegenerateRow { joint: usize, sum: f64 },
    #[error("mask length {got}, expected {expected}")]
    MaskLength { got: usize, expected: usize },
    #[error("mask value {value} at vertex {vertex} outside [0, 1]")]
    MaskRange { vertex: usize, value: f64 },
    #[error("basis shapes disagree: {0}")]
    Shape(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One target vertex's anchor on the source surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub tri: usize,
    pub bary: [f64; 3],
}

/// Per-target-vertex barycentric correspondence onto a source mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMap {
    pub entries: Vec<MapEntry>,
    pub source_vertices: usize,
}

impl SurfaceMap {
    /// Serializes as a bare JSON array of `{tri, bary}` records.
    pub fn to_json(&self) -> Result<String, TopoError> {
        Ok(serde_json::to_string(&self.entries)?)
    }

    pub fn from_json(json: &str, source_vertices: usize) -> Result<Self, TopoError> {
        Ok(Self {
            entries: serde_json::from_str(json)?,
            source_vertices,
        })
    }
}

/// Smooth per-vertex scalar in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VertexMask(Vec<f64>);

impl VertexMask {
    pub fn new(values: Vec<f64>) -> Result<Self, TopoError> {
        for (vertex, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(TopoError::MaskRange { vertex, value });
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Closest point to `p` on triangle `(a, b, c)`, as barycentric coordinates.
/// Corner and edge regions return exact 0/1 weights.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> [f64; 3] {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let denom = d1 - d3;
        let v = if denom != 0.0 { d1 / denom } else { 0.0 };
        return [1.0 - v, v, 0.0];
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let denom = d2 - d6;
        let w = if denom != 0.0 { d2 / denom } else { 0.0 };
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let denom = (d4 - d3) + (d5 - d6);
        let w = if denom != 0.0 { (d4 - d3) / denom } else { 0.0 };
        return [0.0, 1.0 - w, w];
    }
    let denom = va + vb + vc;
    if denom <= 0.0 || !denom.is_finite() {
        // Degenerate (collinear) triangle: fall back to the best edge.
        return degenerate_closest(p, a, b, c);
    }
    let v = vb / denom;
    let w = vc / denom;
    [1.0 - v - w, v, w]
}

fn closest_on_segment(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return 0.0;
    }
    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
}

fn degenerate_closest(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> [f64; 3] {
    let mut best = [1.0, 0.0, 0.0];
    let mut best_d = (p - a).norm_squared();
    let edges: [(usize, usize, &Vector3<f64>, &Vector3<f64>); 3] =
        [(0, 1, a, b), (0, 2, a, c), (1, 2, b, c)];
    for (i, j, u, v) in edges {
        let t = closest_on_segment(p, u, v);
        let q = u + (v - u) * t;
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = [0.0, 0.0, 0.0];
            best[i] = 1.0 - t;
            best[j] = t;
        }
    }
    best
}

/// Evaluates a map entry back to a point on the source surface.
pub fn bary_point(mesh: &Mesh, tri: usize, bary: &[f64; 3]) -> Vector3<f64> {
    let f = mesh.faces[tri];
    mesh.vertices[f[0] as usize] * bary[0]
        + mesh.vertices[f[1] as usize] * bary[1]
        + mesh.vertices[f[2] as usize] * bary[2]
}

/// For each target vertex, the globally closest point on the source surface.
/// Ties are broken by the lowest triangle index (triangles are scanned in
/// order and only a strictly smaller distance replaces the incumbent).
pub fn build_surface_map(source: &Mesh, targets: &[Vector3<f64>]) -> Result<SurfaceMap, TopoError> {
    if source.faces.is_empty() || source.vertices.is_empty() {
        return Err(TopoError::EmptySource);
    }
    let entries: Vec<MapEntry> = targets
        .par_iter()
        .map(|p| {
            let mut best = MapEntry {
                tri: 0,
                bary: [1.0, 0.0, 0.0],
            };
            let mut best_d = f64::INFINITY;
            for (tri, face) in source.faces.iter().enumerate() {
                let a = &source.vertices[face[0] as usize];
                let b = &source.vertices[face[1] as usize];
                let c = &source.vertices[face[2] as usize];
                let bary = closest_point_on_triangle(p, a, b, c);
                let q = a * bary[0] + b * bary[1] + c * bary[2];
                let d = (p - q).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = MapEntry { tri, bary };
                }
            }
            best
        })
        .collect();
    Ok(SurfaceMap {
        entries,
        source_vertices: source.vertices.len(),
    })
}

/// Transfers per-vertex data (one row per source vertex, any column count)
/// onto the target topology as barycentric-weighted sums.
pub fn apply_map(
    map: &SurfaceMap,
    source: &Mesh,
    data: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TopoError> {
    if data.nrows() != map.source_vertices {
        return Err(TopoError::DataRows {
            got: data.nrows(),
            expected: map.source_vertices,
        });
    }
    let m = data.ncols();
    let mut out = DMatrix::zeros(map.entries.len(), m);
    for (i, entry) in map.entries.iter().enumerate() {
        let f = source.faces[entry.tri];
        // Exact-copy fast path keeps bit-level fidelity for identity maps.
        if let Some(corner) = exact_corner(&entry.bary) {
            let src = f[corner] as usize;
            for c in 0..m {
                out[(i, c)] = data[(src, c)];
            }
            continue;
        }
        for c in 0..m {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += entry.bary[j] * data[(f[j] as usize, c)];
            }
            out[(i, c)] = acc;
        }
    }
    Ok(out)
}

fn exact_corner(bary: &[f64; 3]) -> Option<usize> {
    for j in 0..3 {
        if bary[j] == 1.0 && bary[(j + 1) % 3] == 0.0 && bary[(j + 2) % 3] == 0.0 {
            return Some(j);
        }
    }
    None
}

/// Transfers each column of a flat `3|Q| x components` basis matrix through
/// the map, treating every component independently.
pub fn apply_map_to_basis(
    map: &SurfaceMap,
    source: &Mesh,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TopoError> {
    if basis.nrows() != 3 * map.source_vertices {
        return Err(TopoError::DataRows {
            got: basis.nrows(),
            expected: 3 * map.source_vertices,
        });
    }
    let comps = basis.ncols();
    let n = map.entries.len();
    let mut out = DMatrix::zeros(3 * n, comps);
    for (i, entry) in map.entries.iter().enumerate() {
        let f = source.faces[entry.tri];
        if let Some(corner) = exact_corner(&entry.bary) {
            let src = f[corner] as usize;
            for comp in 0..comps {
                for x in 0..3 {
                    out[(3 * i + x, comp)] = basis[(3 * src + x, comp)];
                }
            }
            continue;
        }
        for comp in 0..comps {
            for x in 0..3 {
                let mut acc = 0.0;
                for j in 0..3 {
                    acc += entry.bary[j] * basis[(3 * (f[j] as usize) + x, comp)];
                }
                out[(3 * i + x, comp)] = acc;
            }
        }
    }
    Ok(out)
}

/// Maps a source vertex group through the surface map: builds a 0/1
/// indicator, transfers it, and keeps target vertices whose mapped value
/// exceeds the threshold.
pub fn map_vertex_group(
    map: &SurfaceMap,
    source: &Mesh,
    group: &[usize],
    threshold: f64,
) -> Result<Vec<usize>, TopoError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TopoError::Threshold(threshold));
    }
    let mut indicator = DMatrix::zeros(map.source_vertices, 1);
    for &v in group {
        if v >= map.source_vertices {
            return Err(TopoError::VertexIndex(v));
        }
        indicator[(v, 0)] = 1.0;
    }
    let mapped = apply_map(map, source, &indicator)?;
    Ok((0..mapped.nrows())
        .filter(|&i| mapped[(i, 0)] > threshold)
        .collect())
}

/// Moves a joint regressor onto a new topology through a one-to-one
/// nearest-vertex pairing (each source vertex pairs with its nearest target
/// vertex, ties to the lowest index). Entries landing on the same target
/// vertex are summed and each row is renormalized to sum exactly one.
pub fn transfer_joint_regressor(
    source_vertices: &[Vector3<f64>],
    target_vertices: &[Vector3<f64>],
    regressor: &DMatrix<f64>,
) -> Result<DMatrix<f64>, TopoError> {
    if regressor.ncols() != source_vertices.len() {
        return Err(TopoError::DataRows {
            got: regressor.ncols(),
            expected: source_vertices.len(),
        });
    }
    if target_vertices.is_empty() {
        return Err(TopoError::EmptySource);
    }
    let pairing: Vec<usize> = source_vertices
        .par_iter()
        .map(|s| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, t) in target_vertices.iter().enumerate() {
                let d = (s - t).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    let k = regressor.nrows();
    let mut out = DMatrix::zeros(k, target_vertices.len());
    for j in 0..k {
        for (src, &dst) in pairing.iter().enumerate() {
            out[(j, dst)] += regressor[(j, src)];
        }
        let sum: f64 = out.row(j).iter().sum();
        if sum.abs() < 1e-12 {
            return Err(TopoError::DegenerateRow { joint: j, sum });
        }
        for i in 0..target_vertices.len() {
            out[(j, i)] /= sum;
        }
    }
    Ok(out)
}

/// Which extreme of which axis to pick when building a regressor row from a
/// vertex group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeAxis {
    PosX,
    NegX,
    PosY,
    NegY,
}

pub const EYE_EXTREME_AXES: [ExtremeAxis; 4] = [
    ExtremeAxis::PosX,
    ExtremeAxis::NegX,
    ExtremeAxis::PosY,
    ExtremeAxis::NegY,
];

/// Builds a regressor row placing uniform weight on the group's extreme
/// vertices along the given axes (ties to the lowest index). Coincident
/// extremes accumulate, so a single-vertex group yields weight one on it.
pub fn joint_regressor_from_extremes(
    group: &[usize],
    positions: &[Vector3<f64>],
    axes: &[ExtremeAxis],
) -> Result<DVector<f64>, TopoError> {
    if group.is_empty() || axes.is_empty() {
        return Err(TopoError::EmptyGroup);
    }
    for &v in group {
        if v >= positions.len() {
            return Err(TopoError::VertexIndex(v));
        }
    }
    let mut row = DVector::zeros(positions.len());
    let share = 1.0 / axes.len() as f64;
    for axis in axes {
        let key = |v: usize| -> f64 {
            match axis {
                ExtremeAxis::PosX => positions[v].x,
                ExtremeAxis::NegX => -positions[v].x,
                ExtremeAxis::PosY => positions[v].y,
                ExtremeAxis::NegY => -positions[v].y,
            }
        };
        let mut best = group[0];
        for &v in &group[1..] {
            if key(v) > key(best) {
                best = v;
            }
        }
        row[best] += share;
    }
    Ok(row)
}

/// Masked blending of mapped identity bases. The head basis is scaled by the
/// mask; the body basis is scaled by its complement, and for each body
/// component the mask-weighted mean displacement over the masked region is
/// added back uniformly (scaled by the mask) so body identity still
/// translates the head.
pub fn blend_identity_bases(
    head_basis: &DMatrix<f64>,
    body_basis: &DMatrix<f64>,
    mask: &VertexMask,
) -> Result<(DMatrix<f64>, DMatrix<f64>), TopoError> {
    let n = mask.len();
    if head_basis.nrows() != 3 * n || body_basis.nrows() != 3 * n {
        return Err(TopoError::Shape(format!(
            "bases have {} / {} rows, mask implies {}",
            head_basis.nrows(),
            body_basis.nrows(),
            3 * n
        )));
    }
    let mask = mask.values();
    let mask_total: f64 = mask.iter().sum();

    let mut head_out = head_basis.clone();
    for comp in 0..head_out.ncols() {
        for v in 0..n {
            for x in 0..3 {
                head_out[(3 * v + x, comp)] *= mask[v];
            }
        }
    }

    let mut body_out = body_basis.clone();
    for comp in 0..body_out.ncols() {
        let mut mean = Vector3::zeros();
        if mask_total > 0.0 {
            for v in 0..n {
                if mask[v] != 0.0 {
                    for x in 0..3 {
                        mean[x] += mask[v] * body_basis[(3 * v + x, comp)];
                    }
                }
            }
            mean /= mask_total;
        }
        for v in 0..n {
            for x in 0..3 {
                body_out[(3 * v + x, comp)] =
                    (1.0 - mask[v]) * body_basis[(3 * v + x, comp)] + mask[v] * mean[x];
            }
        }
    }
    Ok((head_out, body_out))
}

/// Scales each per-vertex displacement of a basis by `1 - mask`, restricting
/// it to the unmasked (body) region.
pub fn mask_basis_complement(basis: &DMatrix<f64>, mask: &VertexMask) -> Result<DMatrix<f64>, TopoError> {
    let n = mask.len();
    if basis.nrows() != 3 * n {
        return Err(TopoError::Shape(format!(
            "basis has {} rows, mask implies {}",
            basis.nrows(),
            3 * n
        )));
    }
    let mut out = basis.clone();
    for comp in 0..out.ncols() {
        for v in 0..n {
            let s = 1.0 - mask.values()[v];
            for x in 0..3 {
                out[(3 * v + x, comp)] *= s;
            }
        }
    }
    Ok(out)
}

/// Makes the given vertex group follow one joint rigidly: group columns are
/// zeroed and the joint's weight set to one; other vertices are untouched.
pub fn override_rigid_skinning(
    weights: &DMatrix<f64>,
    group: &[usize],
    joint: usize,
) -> Result<DMatrix<f64>, TopoError> {
    if joint >= weights.nrows() {
        return Err(TopoError::JointIndex(joint));
    }
    let mut out = weights.clone();
    for &v in group {
        if v >= weights.ncols() {
            return Err(TopoError::VertexIndex(v));
        }
        for k in 0..out.nrows() {
            out[(k, v)] = 0.0;
        }
        out[(joint, v)] = 1.0;
    }
    Ok(out)
}
