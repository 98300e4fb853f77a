//! Parametric articulated human body-model toolkit.
//!
//! The crate is organized around a [`model::BodyModel`]: a template mesh with
//! linear identity/expression/pose bases, a skeleton, skinning weights and a
//! joint regressor. On top of it sit:
//!
//! - [`topo`] — barycentric surface maps for transferring per-vertex data
//!   (bases, masks, skinning weights) and joint regressors between topologies;
//! - [`identity`] — multivariate Gaussian identity fitting/sampling and
//!   gendered-to-neutral shape parameter transfer;
//! - [`poselib`] — pose archives, GMM pose classification, weighted sampling,
//!   mirroring and channel splicing;
//! - [`color`] — perceptual skin-tone distance and texture moment matching;
//! - [`scene`] — pinhole cameras, landmark definitions and the synthetic
//!   observation generator;
//! - [`fit`] — multi-view model fitting to probabilistic 2D landmarks via
//!   Levenberg-Marquardt with GMM/L2 priors;
//! - [`container`] — the SBM1 binary array container used for models,
//!   pose archives and identity priors.

pub mod color;
pub mod container;
pub mod fit;
pub mod identity;
pub mod math;
pub mod topo;
pub mod mesh;
pub mod model;
pub mod poselib;
pub mod profile;
pub mod scene;
