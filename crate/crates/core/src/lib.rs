pub mod covering;
pub mod error;
pub mod geometry;
pub mod growth;
pub mod kernels;
pub mod linalg;
pub mod maximal;
pub mod model;
pub mod par;
pub mod quadrature;
pub mod semigroup;

pub use error::{Error, Result};
pub use model::{build_model, Model};
