use thiserror::Error;

pub type Result<T, E = GeodomError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeodomError {
    #[error("point {point:?} lies outside the chart domain")]
    ChartDomain { point: Vec<f64> },

    #[error("metric at {point:?} is not symmetric (defect {defect:e})")]
    AsymmetricMetric { point: Vec<f64>, defect: f64 },

    #[error("metric at {point:?} is not positive definite")]
    NotPositiveDefinite { point: Vec<f64> },

    #[error("metric at {point:?} is ill-conditioned (condition number {condition:e})")]
    IllConditionedMetric { point: Vec<f64>, condition: f64 },

    #[error("trajectory left the chart domain at t = {time}; last valid point {point:?}")]
    Escape {
        time: f64,
        point: Vec<f64>,
        velocity: Vec<f64>,
    },

    #[error("gradient of the barrier vanishes at {point:?} (norm {norm:e})")]
    DegenerateGradient { point: Vec<f64>, norm: f64 },

    #[error("flow time {time} reaches the boundary (phi = {phi})")]
    BoundaryReach { time: f64, phi: f64 },

    #[error("level {level} lies above the point's barrier value {phi}")]
    WrongSide { level: f64, phi: f64 },

    #[error("{failures} of {samples} samples failed; region unusable")]
    UnusableRegion { failures: usize, samples: usize },

    #[error("node {node} violates the domain boundary (phi = {phi})")]
    BoundaryViolation { node: usize, phi: f64 },

    #[error("segment {segment} may cross the boundary (phi sum {phi_sum:e} below clearance {clearance:e})")]
    SegmentCrossing {
        segment: usize,
        phi_sum: f64,
        clearance: f64,
    },

    #[error("energy level {energy} is not above the potential {potential} at {point:?}")]
    EnergyLevel {
        point: Vec<f64>,
        energy: f64,
        potential: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeodomError {
    fn from(err: std::io::Error) -> Self {
        GeodomError::Io(err.to_string())
    }
}

impl From<csv::Error> for GeodomError {
    fn from(err: csv::Error) -> Self {
        GeodomError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for GeodomError {
    fn from(err: serde_json::Error) -> Self {
        GeodomError::Io(err.to_string())
    }
}
