//! Fisher discriminant analysis and trace-ratio reduction for multigroup
//! classification, with classical and robust (MCD/MRCD) scatter estimates,
//! closed-form contamination algebra and a seeded simulation engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod contaminate;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod reduce;
pub mod rng;
pub mod robust;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::SymMatrix;
pub use moments::{GroupModel, LabeledDataset, ScatterPair, ScatterSource};
