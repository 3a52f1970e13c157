//! Consistency-based transferability estimation for segmentation models.
//!
//! Candidate models are scored on an unlabelled target set by how stable
//! their predictions are under test-time perturbation; the per-model scores
//! rank the candidates, and the ranking can be checked against ground-truth
//! performance with rank-correlation statistics.
//!
//! Pipeline: [`tensor_io`] loads the manifest and predictions, [`score`]
//! evaluates a [`consistency`] metric per cell, [`aggregate`] reduces to one
//! score per model and ranks, [`rankstats`] correlates with performance.
//! [`perturb`] produces perturbed inputs and [`synthlab`] fabricates complete
//! toy studies.

pub mod aggregate;
pub mod consistency;
pub mod error;
mod fsutil;
pub mod output;
pub mod perturb;
pub mod pipeline;
pub mod rankstats;
pub mod rng;
pub mod score;
pub mod synthlab;
pub mod tensor_io;

pub use error::{Error, ErrorClass, Result};
pub use fsutil::{write_atomic, write_json};
