use thiserror::Error;

use crate::geometry::GeometryKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by the geometric and rendering core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("frame vectors are linearly dependent or null")]
    DegenerateFrame,
    #[error("metric is singular (determinant {det:e})")]
    SingularMetric { det: f64 },
    #[error("numeric failure: {0}")]
    NumericFailure(&'static str),
    #[error("point lies outside the coordinate chart")]
    OutsideChart,
    #[error("point lies outside the model")]
    OutsideModel,
    #[error("{op} is not supported for {geometry}")]
    Unsupported {
        op: &'static str,
        geometry: GeometryKind,
    },
    #[error("no face pairing for face {0}")]
    NoPairing(usize),
    #[error("group closure exceeded {0} elements")]
    Overflow(usize),
    #[error("unknown manifold `{name}` (field `{field}`)")]
    UnknownManifold { name: String, field: String },
    #[error("surface gradient vanishes")]
    DegenerateNormal,
    #[error("navigation stalled at the chart boundary")]
    ChartStall,
    #[error("invalid gluing data: {0}")]
    InvalidGluing(String),
    #[error("config parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("`{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Error>),
}

impl Error {
    pub fn unsupported(op: &'static str, geometry: GeometryKind) -> Self {
        Error::Unsupported { op, geometry }
    }

    pub fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}
