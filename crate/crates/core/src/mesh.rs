//! Triangle meshes and OBJ import/export.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("obj parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face index {index} out of range (mesh has {vertices} vertices)")]
    FaceIndex { index: u32, vertices: usize },
    #[error("mesh has no vertices")]
    Empty,
}

/// Triangle mesh: positions and faces only.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.vertices.is_empty() {
            return Err(MeshError::Empty);
        }
        for face in &self.faces {
            for &index in face {
                if index as usize >= self.vertices.len() {
                    return Err(MeshError::FaceIndex {
                        index,
                        vertices: self.vertices.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reads `v` and `f` records; polygon faces are fan-triangulated.
    pub fn read_obj(path: &Path) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let mut coords = [0.0f64; 3];
                    for coord in &mut coords {
                        let tok = parts.next().ok_or_else(|| MeshError::Parse {
                            line: lineno + 1,
                            message: "vertex needs 3 coordinates".into(),
                        })?;
                        *coord = tok.parse().map_err(|_| MeshError::Parse {
                            line: lineno + 1,
                            message: format!("bad coordinate {tok:?}"),
                        })?;
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in parts {
                        // "i", "i/t", "i/t/n", "i//n" all start with the index
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| MeshError::Parse {
                            line: lineno + 1,
                            message: format!("bad face index {tok:?}"),
                        })?;
                        let i = if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            i - 1
                        };
                        if i < 0 {
                            return Err(MeshError::Parse {
                                line: lineno + 1,
                                message: format!("face index {tok:?} out of range"),
                            });
                        }
                        idx.push(i as u32);
                    }
                    if idx.len() < 3 {
                        return Err(MeshError::Parse {
                            line: lineno + 1,
                            message: "face needs at least 3 indices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Mesh::new(vertices, faces)
    }

    /// Positions and faces only, no normals or UVs.
    pub fn write_obj(&self, path: &Path) -> Result<(), MeshError> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obj_round_trip() {
        let mesh = Mesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.25),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        mesh.write_obj(&path).unwrap();
        let back = Mesh::read_obj(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn quad_faces_are_triangulated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n",
        )
        .unwrap();
        let mesh = Mesh::read_obj(&path).unwrap();
        assert_eq!(mesh.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_face_rejected() {
        assert!(Mesh::new(vec![Vector3::zeros()], vec![[0, 0, 1]]).is_err());
    }
}
