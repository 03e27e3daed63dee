//! Prototype-space representation learning for tabular deep models.
//!
//! A model-agnostic two-phase pipeline: a backbone is first trained on the
//! supervised task, K-Means over its representations seeds a set of global
//! prototypes, and a freshly initialized backbone is then trained to express
//! each sample as a simplex combination of those prototypes. An optimal
//! transport projecting loss, a coordinate-diversifying contrastive term and a
//! prototype orthogonalization penalty shape that projection space.
//!
//! Module map:
//!
//! * [`data`] loads, preprocesses and splits tabular datasets.
//! * [`nn`] holds the backbones, the prediction head and the coordinate estimator.
//! * [`pspace`] chooses the prototype count, runs K-Means and projects coordinates.
//! * [`ot`] computes cosine costs and (entropic) optimal transport.
//! * [`losses`] implements every training objective with analytic gradients.
//! * [`train`] runs both phases and the end-to-end pipeline.
//! * [`eval`] computes metrics, ablation grids, aggregates and the Wilcoxon test.
//! * [`report`] renders plots with CSV twins and writes run manifests.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod ot;
pub mod pspace;
pub mod report;
pub mod train;

pub use error::{Error, Result};
