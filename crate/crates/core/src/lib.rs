#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod collision;
pub mod dynamics;
pub mod error;
pub mod execution;
pub mod experiment;
pub mod kinematics;
mod linalg;
pub mod lqg;
pub mod planner;
pub mod report;
pub mod risk;
pub mod scenario;
mod serde_mat;
pub mod trajectory;

pub use error::{Error, Result};
