pub mod envs;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod mesh;
pub mod nn;
pub mod snn;
pub mod spgd;
pub mod td3;

pub use error::{Error, Result};
