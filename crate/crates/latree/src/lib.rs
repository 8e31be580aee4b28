#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` guards NaN as well

//! Latent class and latent tree analysis for categorical survey data:
//! EM parameter estimation with BIC model selection, BIC-guided structure
//! search, partition reports (cluster sizes, occurrence probabilities,
//! mutual information, co-occurrence / mutual-exclusion patterns), joint
//! clustering over feature groups, and score-based classification rules
//! that approximate posterior-odds classification.

pub mod cli;
pub mod data;
pub mod em;
pub mod error;
pub mod inference;
pub mod joint;
pub mod manifest;
pub mod model;
pub mod parallel;
pub mod persist;
pub mod report;
pub mod rules;
pub mod search;
pub mod seeding;

pub use data::DataSet;
pub use error::{Error, Result};
pub use inference::Evidence;
pub use model::{JointTable, LatentTreeModel, VarKind, Variable};

#[cfg(test)]
pub(crate) mod testutil;
