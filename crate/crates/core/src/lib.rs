pub mod distance;
pub mod env;
pub mod error;
pub mod goals;
pub mod oracle;
pub mod policy;
pub mod stats;
pub mod trainer;
pub mod verify;
pub mod trajectory;

pub use error::{DdlError, Result};
