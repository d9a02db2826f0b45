// coefficient tables are kept as published; `!(x > 0.0)` also rejects NaN
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod first_order_hj;
pub mod gibbs_sampler;
pub mod priors;
pub(crate) mod quadrature;
pub mod special;
pub mod tv_imaging;
pub mod verification;
pub mod viscous_hj;

pub use error::{Error, Result};
pub use priors::{DomainLocation, Prior};
