// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod oracle;
pub mod problem;
pub mod trainer;

pub use error::{Error, Result};
pub use numkit::Mat;
