pub mod atlas;
pub mod curvature;
pub mod error;
pub mod fit;
pub mod kernels;
pub mod lab;
pub mod lattice;
pub mod linalg;
pub mod modelzoo;
pub mod norms;

pub use error::{Error, Result};
