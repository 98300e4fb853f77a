//! Named model profiles and descriptor validation.
//!
//! A profile pins the expected dimensions and landmark-set sizes of a
//! published model configuration. Descriptors (or container metadata) that
//! declare a known profile are checked against it field by field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Expected dimensions for a named model configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub vertices: usize,
    pub polygons: usize,
    pub joints: usize,
    pub face_identity: usize,
    pub body_identity: usize,
    pub expression: usize,
    pub landmark_sets: BTreeMap<String, usize>,
}

impl ModelProfile {
    /// The standard full-body configuration: combined face/body template with
    /// articulated hands and eyes, sparse/dense landmark sets for body and
    /// hand tracking.
    pub fn fullbody_v1() -> Self {
        ModelProfile {
            name: "fullbody-v1".into(),
            vertices: 12943,
            polygons: 12726,
            joints: 54,
            face_identity: 260,
            body_identity: 300,
            expression: 224,
            landmark_sets: [
                ("sparse".to_string(), 36),
                ("dense".to_string(), 1428),
                ("hand_sparse".to_string(), 21),
                ("hand_dense".to_string(), 141),
            ]
            .into_iter()
            .collect(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "fullbody-v1" => Some(Self::fullbody_v1()),
            _ => None,
        }
    }
}

/// Declared dimensions of a model, as found in a standalone descriptor JSON
/// or in an SBM1 container's metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDescriptor {
    #[serde(default)]
    pub profile: Option<String>,
    pub dims: DescriptorDims,
    #[serde(default)]
    pub landmark_sets: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorDims {
    pub vertices: usize,
    pub polygons: usize,
    pub joints: usize,
    pub face_identity: usize,
    pub body_identity: usize,
    pub expression: usize,
}

impl ModelDescriptor {
    /// All mismatches against the declared profile; empty means valid.
    /// A descriptor without a profile (or with an unknown one) never
    /// mismatches on profile grounds.
    pub fn profile_mismatches(&self) -> Vec<String> {
        let Some(name) = &self.profile else {
            return Vec::new();
        };
        let Some(profile) = ModelProfile::builtin(name) else {
            return vec![format!("unknown profile {name:?}")];
        };
        let mut issues = Vec::new();
        let mut check = |field: &str, got: usize, want: usize| {
            if got != want {
                issues.push(format!("{field}: declared {got}, profile expects {want}"));
            }
        };
        check("vertices", self.dims.vertices, profile.vertices);
        check("polygons", self.dims.polygons, profile.polygons);
        check("joints", self.dims.joints, profile.joints);
        check("face_identity", self.dims.face_identity, profile.face_identity);
        check("body_identity", self.dims.body_identity, profile.body_identity);
        check("expression", self.dims.expression, profile.expression);
        for (set, want) in &profile.landmark_sets {
            match self.landmark_sets.get(set) {
                Some(got) if got == want => {}
                Some(got) => {
                    issues.push(format!(
                        "landmark set {set:?}: declared {got}, profile expects {want}"
                    ));
                }
                None => issues.push(format!("landmark set {set:?} missing (expects {want})")),
            }
        }
        issues
    }
}
