use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("interior angle {omega} is not in (0, 2pi) \\ {{pi}}")]
    InvalidAngle { omega: f64 },

    #[error(
        "characteristic root search failed in Re [{re_min}, {re_max}] x Im [{im_min}, {im_max}]"
    )]
    RootSearch {
        re_min: f64,
        re_max: f64,
        im_min: f64,
        im_max: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown builtin domain `{0}`")]
    UnknownDomain(String),

    #[error("edge ({a}, {b}) joins two graded corners")]
    GradedEdge { a: usize, b: usize },

    #[error("refinement of triangle {triangle} produced a degenerate child")]
    DegenerateTriangle { triangle: usize },

    #[error("point ({x}, {y}) lies outside the domain")]
    PointOutside { x: f64, y: f64 },

    #[error("meshes are not nested (levels {coarse} -> {fine})")]
    NotNested { coarse: usize, fine: usize },

    #[error("corner {0} is not a flagged graded corner")]
    CornerNotGraded(usize),

    #[error("unsupported space: degree {degree}, kind {kind}")]
    UnsupportedSpace { degree: usize, kind: String },

    #[error("fields or spaces live on different meshes")]
    MeshMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-positive pivot at dof {index}")]
    Singular { index: usize },

    #[error("linear solve residual {residual:e} above tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },

    #[error("curl F = f validation failed: residual {residual:e} at ({x}, {y})")]
    SourceValidation { residual: f64, x: f64, y: f64 },

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("problem too large for dense diagnostic: {unknowns} unknowns (limit {limit})")]
    TooLarge { unknowns: usize, limit: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::AtLevel {
            level,
            source: Box::new(self),
        }
    }
}
