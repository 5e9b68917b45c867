pub mod activation;
pub mod data;
pub mod harness;
pub mod error;
pub mod kernels;
pub mod lazy;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mat = linalg::Matrix<f64>;
pub type Mat32 = linalg::Matrix<f32>;
pub type Model = model::ModelState<f64>;
pub type Model32 = model::ModelState<f32>;
pub type Data = data::Dataset<f64>;
pub type Data32 = data::Dataset<f32>;
