use thiserror::Error;

/// Failures of the equilibrium, kinematics and calibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CremError {
    #[error("backbone {backbone} has non-physical length {length} mm")]
    NonPhysicalLength { backbone: usize, length: f64 },

    #[error("insertion depth q_s = {q_s} mm is too close to a segment end for finite stiffness")]
    SingularInsertion { q_s: f64 },

    #[error("equilibrium iteration did not converge after {iterations} iterations (last step {last_step:e} rad)")]
    NoConvergence { iterations: usize, last_step: f64 },

    #[error("equilibrium gradient system is singular (condition number {condition:e})")]
    SingularGradient { condition: f64 },

    #[error("normal equations are singular (condition number {condition:e})")]
    SingularNormalEquations { condition: f64 },

    #[error("calibration did not converge after {iterations} iterations")]
    CalibrationNotConverged { iterations: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration {index}: {source}")]
    AtConfiguration {
        index: usize,
        #[source]
        source: Box<CremError>,
    },
}

impl CremError {
    pub(crate) fn at(self, index: usize) -> Self {
        CremError::AtConfiguration {
            index,
            source: Box::new(self),
        }
    }

    /// Strips any configuration tags and returns the underlying failure.
    pub fn root(&self) -> &CremError {
        match self {
            CremError::AtConfiguration { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CremError>;
