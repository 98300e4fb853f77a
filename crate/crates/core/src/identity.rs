//! Identity distributions and gendered-to-neutral shape transfer.
//!
//! Face identities are modeled as multivariate Gaussians fitted per gender
//! label; body identity parameters from gendered models are re-expressed in
//! the neutral basis through an affine map `beta_n = o_g + beta_g . M_g`
//! solved in the least-squares sense against the flattened shape bases.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{Container, ContainerError, NamedArray};

/// Rank-detection tolerance (relative to largest singular value) for the
/// least-squares solves.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("need at least 2 samples to fit a Gaussian, got {0}")]
    TooFewSamples(usize),
    #[error("covariance not positive definite even with jitter up to {0}")]
    JitterExhausted(f64),
    #[error("neutral basis is rank deficient: rank {rank} of {needed} components")]
    RankDeficient { rank: usize, needed: usize },
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityLabel {
    Male,
    Female,
    Neutral,
}

impl IdentityLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            IdentityLabel::Male => "male",
            IdentityLabel::Female => "female",
            IdentityLabel::Neutral => "neutral",
        }
    }
}

/// Multivariate Gaussian over identity coefficients, stored as mean plus a
/// lower-triangular Cholesky factor of the covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianIdentity {
    pub mean: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub label: IdentityLabel,
}

impl GaussianIdentity {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Sample mean and unbiased sample covariance, with escalating diagonal
/// jitter (1e-9 up to 1e-3, times ten each step) if the covariance is not
/// positive definite.
pub fn fit_gaussian(
    samples: &DMatrix<f64>,
    label: IdentityLabel,
) -> Result<GaussianIdentity, IdentityError> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 2 {
        return Err(IdentityError::TooFewSamples(n));
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        mean += samples.row(i).transpose();
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let centered = samples.row(i).transpose() - &mean;
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (n - 1) as f64;

    if let Some(chol) = nalgebra::Cholesky::new(cov.clone()) {
        return Ok(GaussianIdentity {
            mean,
            factor: chol.l(),
            label,
        });
    }
    let mut jitter = 1e-9;
    while jitter <= 1e-3 {
        let mut jittered = cov.clone();
        for i in 0..d {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(jittered) {
            return Ok(GaussianIdentity {
                mean,
                factor: chol.l(),
                label,
            });
        }
        jitter *= 10.0;
    }
    Err(IdentityError::JitterExhausted(1e-3))
}

/// Draws `mean + L z` with `z` standard normal; deterministic per rng state.
pub fn sample_identity<R: Rng + ?Sized>(g: &GaussianIdentity, rng: &mut R) -> DVector<f64> {
    let d = g.dim();
    let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    &g.mean + &g.factor * z
}

/// Affine map from a gendered shape space into the neutral one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderTransfer {
    /// Template offset in neutral coefficients, |beta_n|.
    pub offset: DVector<f64>,
    /// Row i maps gendered component i onto neutral coefficients,
    /// |beta_g| x |beta_n|.
    pub mapping: DMatrix<f64>,
    pub label: IdentityLabel,
}

/// A solved transfer together with the least-squares residuals it left
/// behind (model units, flattened-mesh 2-norms).
#[derive(Debug, Clone)]
pub struct GenderTransferSolution {
    pub transfer: GenderTransfer,
    pub template_residual: f64,
    pub basis_residuals: Vec<f64>,
}

/// Solves `offset . S_n ~ T_g - T_n` and, per gendered component i,
/// `m_i . S_n ~ S_g^i`, both against the flattened neutral basis. Bases are
/// `3N x components` (one flattened displacement field per column); solved
/// by SVD with rank detection.
pub fn solve_gender_transfer(
    template_g: &DVector<f64>,
    basis_g: &DMatrix<f64>,
    template_n: &DVector<f64>,
    basis_n: &DMatrix<f64>,
    label: IdentityLabel,
) -> Result<GenderTransferSolution, IdentityError> {
    let n3 = template_n.len();
    if template_g.len() != n3 {
        return Err(IdentityError::DimensionMismatch {
            what: "gendered template length".into(),
            expected: n3,
            got: template_g.len(),
        });
    }
    if basis_n.nrows() != n3 || basis_g.nrows() != n3 {
        return Err(IdentityError::DimensionMismatch {
            what: "basis rows".into(),
            expected: n3,
            got: if basis_n.nrows() != n3 {
                basis_n.nrows()
            } else {
                basis_g.nrows()
            },
        });
    }
    let bn = basis_n.ncols();
    if n3 < bn {
        return Err(IdentityError::DimensionMismatch {
            what: "flattened vertices (need >= neutral components)".into(),
            expected: bn,
            got: n3,
        });
    }

    let svd = basis_n.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * sigma_max)
        .count();
    if rank < bn {
        return Err(IdentityError::RankDeficient { rank, needed: bn });
    }

    let solve = |rhs: &DVector<f64>| -> DVector<f64> {
        svd.solve(rhs, RANK_TOL * sigma_max)
            .expect("svd was computed with u and v_t")
    };

    let diff = template_g - template_n;
    let offset = solve(&diff);
    let template_residual = (basis_n * &offset - &diff).norm();

    let bg = basis_g.ncols();
    let mut mapping = DMatrix::zeros(bg, bn);
    let mut basis_residuals = Vec::with_capacity(bg);
    for i in 0..bg {
        let rhs: DVector<f64> = basis_g.column(i).into_owned();
        let m_i = solve(&rhs);
        basis_residuals.push((basis_n * &m_i - &rhs).norm());
        mapping.row_mut(i).copy_from(&m_i.transpose());
    }
    Ok(GenderTransferSolution {
        transfer: GenderTransfer {
            offset,
            mapping,
            label,
        },
        template_residual,
        basis_residuals,
    })
}

/// `beta_n = offset + beta_g . mapping`.
pub fn to_neutral(
    beta_g: &DVector<f64>,
    transfer: &GenderTransfer,
) -> Result<DVector<f64>, IdentityError> {
    if beta_g.len() != transfer.mapping.nrows() {
        return Err(IdentityError::DimensionMismatch {
            what: "beta_g".into(),
            expected: transfer.mapping.nrows(),
            got: beta_g.len(),
        });
    }
    Ok(&transfer.offset + transfer.mapping.tr_mul(beta_g))
}

// --- container IO ----------------------------------------------------------

pub const IDENTITY_KIND: &str = "identity_priors";

/// Face Gaussians and body gender transfers bundled for distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentityPriors {
    pub face: Vec<GaussianIdentity>,
    pub body_transfers: Vec<GenderTransfer>,
}

impl IdentityPriors {
    pub fn face_for(&self, label: IdentityLabel) -> Option<&GaussianIdentity> {
        self.face.iter().find(|g| g.label == label)
    }

    pub fn transfer_for(&self, label: IdentityLabel) -> Option<&GenderTransfer> {
        self.body_transfers.iter().find(|t| t.label == label)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), IdentityError> {
        let mut c = Container::new(IDENTITY_KIND);
        let face_labels: Vec<_> = self.face.iter().map(|g| g.label.as_str()).collect();
        let transfer_labels: Vec<_> = self
            .body_transfers
            .iter()
            .map(|t| t.label.as_str())
            .collect();
        c.meta = serde_json::json!({
            "face_labels": face_labels,
            "transfer_labels": transfer_labels,
        });
        for g in &self.face {
            let d = g.dim();
            c.push(NamedArray::from_f64(
                &format!("face_mean_{}", g.label.as_str()),
                vec![d],
                g.mean.as_slice(),
            ));
            let mut fac = Vec::with_capacity(d * d);
            for r in 0..d {
                for col in 0..d {
                    fac.push(g.factor[(r, col)] as f32);
                }
            }
            c.push(NamedArray::f32(
                &format!("face_factor_{}", g.label.as_str()),
                vec![d, d],
                fac,
            ));
        }
        for t in &self.body_transfers {
            let (bg, bn) = (t.mapping.nrows(), t.mapping.ncols());
            c.push(NamedArray::from_f64(
                &format!("body_offset_{}", t.label.as_str()),
                vec![bn],
                t.offset.as_slice(),
            ));
            let mut map = Vec::with_capacity(bg * bn);
            for r in 0..bg {
                for col in 0..bn {
                    map.push(t.mapping[(r, col)] as f32);
                }
            }
            c.push(NamedArray::f32(
                &format!("body_mapping_{}", t.label.as_str()),
                vec![bg, bn],
                map,
            ));
        }
        c.write(path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, IdentityError> {
        let c = Container::read(path)?;
        let meta = c.meta_object();
        let labels = |key: &str| -> Vec<IdentityLabel> {
            meta.get(key)
                .and_then(|v| v.as_array())
                .map(|arr| {
                    arr.iter()
                        .filter_map(|v| v.as_str())
                        .filter_map(|s| match s {
                            "male" => Some(IdentityLabel::Male),
                            "female" => Some(IdentityLabel::Female),
                            "neutral" => Some(IdentityLabel::Neutral),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default()
        };
        let mut out = IdentityPriors::default();
        for label in labels("face_labels") {
            let (mshape, mdata) = c.get_f32(&format!("face_mean_{}", label.as_str()))?;
            let d = mshape[0];
            let mean = DVector::from_iterator(d, mdata.iter().map(|&v| v as f64));
            let (_, fdata) = c.get_f32(&format!("face_factor_{}", label.as_str()))?;
            let factor =
                DMatrix::from_row_iterator(d, d, fdata.iter().map(|&v| v as f64));
            out.face.push(GaussianIdentity {
                mean,
                factor,
                label,
            });
        }
        for label in labels("transfer_labels") {
            let (oshape, odata) = c.get_f32(&format!("body_offset_{}", label.as_str()))?;
            let bn = oshape[0];
            let offset = DVector::from_iterator(bn, odata.iter().map(|&v| v as f64));
            let (mshape, mdata) = c.get_f32(&format!("body_mapping_{}", label.as_str()))?;
            let bg = mshape[0];
            let mapping =
                DMatrix::from_row_iterator(bg, bn, mdata.iter().map(|&v| v as f64));
            out.body_transfers.push(GenderTransfer {
                offset,
                mapping,
                label,
            });
        }
        Ok(out)
    }
}
