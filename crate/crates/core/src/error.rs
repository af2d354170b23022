use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("packed tensor holds at most {capacity} channels, metadata claims {requested}")]
    PackedCapacity { requested: usize, capacity: usize },

    #[error("dimension mismatch: [{lhs_rows}, {lhs_cols}] x [{rhs_rows}, {rhs_cols}]")]
    DimMismatch {
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("unknown op kind `{0}`")]
    UnknownOpKind(String),

    #[error("node `{node}` reads tensor `{tensor}` which is never produced")]
    DanglingInput { node: String, tensor: String },

    #[error("graph contains a cycle through node `{0}`")]
    Cycle(String),

    #[error("shape inference failed at node `{node}`: {reason}")]
    ShapeInference { node: String, reason: String },

    #[error("unsupported Winograd size F({n}, {k}): alpha = {alpha} exceeds 10")]
    UnsupportedWinograd { n: usize, k: usize, alpha: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("backend `{backend}` does not support {kind}")]
    Unsupported { backend: String, kind: String },

    #[error("op `{op}`: buffer [{offset}, {end}) exceeds pool of {pool} bytes")]
    PoolExhausted {
        op: String,
        offset: usize,
        end: usize,
        pool: usize,
    },

    #[error("buffer handle {0} used after release")]
    UseAfterRelease(u32),

    #[error("buffer handle {0} is not host visible")]
    NotHostVisible(u32),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
