use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} is invalid: {reason}")]
    InvalidFace { face: usize, reason: String },

    #[error("non-manifold edge ({0}, {1})")]
    NonManifoldEdge(usize, usize),

    #[error("non-manifold vertex {0}")]
    NonManifoldVertex(usize),

    #[error("inconsistent face orientation across edge ({0}, {1})")]
    InconsistentOrientation(usize, usize),

    #[error("disk topology violated: {loops} boundary loops, Euler characteristic {euler}")]
    NotADisk { loops: usize, euler: i64 },

    #[error("degenerate face {face}: area {area:e} below threshold {threshold:e}")]
    DegenerateFace { face: usize, area: f64, threshold: f64 },

    #[error("zero-area neighborhood around vertex {0}")]
    ZeroAreaVertex(usize),

    #[error("Beltrami coefficient on face {face} has modulus {modulus}, too close to 1")]
    NearSingularMu { face: usize, modulus: f64 },

    #[error("degenerate conformal factor on face {face} (|f_z| = {modulus:e})")]
    DegenerateConformalFactor { face: usize, modulus: f64 },

    #[error("linear system is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("iterative solver did not converge: residual {residual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("map folds {} faces (first: {:?})", .faces.len(), .faces.iter().take(8).collect::<Vec<_>>())]
    Folded { faces: Vec<usize> },

    #[error("point ({x}, {y}) lies outside the mesh image (distance {distance:e} to the nearest face)")]
    OutsideMesh { x: f64, y: f64, distance: f64 },

    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("boundary angles are not monotone around the circle")]
    NonMonotoneAngles,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema version mismatch: file has version {found}, this build reads version {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
