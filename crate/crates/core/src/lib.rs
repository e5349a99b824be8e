pub mod calibration;
pub mod dataio;
pub mod differential;
pub mod error;
pub mod kinematics;
pub mod model;
pub mod rotation;

pub use error::{CremError, Result};
