#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtins;
pub mod convexity;
pub mod domain;
pub mod error;
pub mod field;
pub mod gallery;
pub mod jacobi;
pub mod linalg;
pub mod manifold;
pub mod pathspace;
pub mod problem;
pub mod solver;

pub use error::{GeodomError, Result};
