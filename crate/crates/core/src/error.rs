use thiserror::Error;

/// Errors raised by the tensor engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        len: usize,
        shape: Vec<usize>,
        expected: usize,
    },
    #[error("matmul inner extents disagree: {lhs:?} vs {rhs:?}")]
    InnerExtent { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid axis {axis} for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },
    #[error("reduction over an empty tensor region (shape {shape:?})")]
    EmptyReduce { shape: Vec<usize> },
    #[error("conv2d kernel extent {kernel} must be odd")]
    EvenKernel { kernel: usize },
    #[error("conv2d output extent below 1 for input {input:?}, kernel {kernel}, stride {stride}, padding {padding}")]
    ConvGeometry {
        input: Vec<usize>,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch { expected: usize, shape: Vec<usize> },
    #[error("index {index} out of bounds for axis of extent {extent}")]
    IndexOutOfBounds { index: usize, extent: usize },
    #[error("cannot write data into a non-leaf tensor")]
    NotALeaf,
    #[error("tensor has {numel} elements, expected exactly one")]
    NotAScalar { numel: usize },
    #[error("all scores are NaN; no finite maximum exists")]
    AllNan,
}

/// Pipeline-level errors: model assembly, data handling, training, IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Config(String),
    #[error("click point ({row:.3}, {col:.3}) lies outside the {height}x{width} grid")]
    ClickOutsideGrid {
        row: f64,
        col: f64,
        height: usize,
        width: usize,
    },
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: min must be strictly below max")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("sample {sample_id}: {reason}")]
    BadSample { sample_id: String, reason: String },
    #[error("annotation line {line}: {reason}")]
    BadAnnotation { line: usize, reason: String },
    #[error("could not place target shape after {attempts} attempts")]
    Unplaceable { attempts: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
