use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Mismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("buffer of length {len} cannot hold a {rows}x{cols} matrix")]
    BufferLength { rows: usize, cols: usize, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: (usize, usize), to: (usize, usize) },
    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("{op}: expected a {expected:?} matrix, got {got:?}")]
    Expected {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("backward requires a scalar loss, got a {0:?} node")]
    NotScalar((usize, usize)),
    #[error("degenerate normal matrix (condition estimate {condition:e})")]
    DegenerateMatrix { condition: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("frame {frame}: {visible} visible points, at least 3 are required")]
    TooFewVisible { frame: usize, visible: usize },
    #[error("frame {frame}: visible keypoints have zero spread")]
    ZeroSpread { frame: usize },
    #[error("frame {frame}: visible points are collinear")]
    Collinear { frame: usize },
    #[error("frame {frame}: degenerate normal matrix (condition estimate {condition:e})")]
    DegenerateNormal { frame: usize, condition: f64 },
    #[error("frame {frame}: {source}")]
    Graph {
        frame: usize,
        #[source]
        source: AutodiffError,
    },
}

impl GeometryError {
    pub(crate) fn from_autodiff(frame: usize, err: AutodiffError) -> Self {
        match err {
            AutodiffError::DegenerateMatrix { condition } => GeometryError::DegenerateNormal { frame, condition },
            other => GeometryError::Graph { frame, source: other },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("bottleneck K={k} must be at least 1 and below 3P={dim}")]
    Bottleneck { k: usize, dim: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("frame id {id} out of range for {frames} frames")]
    FrameOutOfRange { id: usize, frames: usize },
    #[error("operation requires {0} code mode")]
    CodeMode(&'static str),
    #[error(transparent)]
    Graph(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("N must be ≥ 1")]
    NoFrames,
    #[error("P must be ≥ 3, got {0}")]
    TooFewPoints(usize),
    #[error("frame {frame}: expected {expected} points, got {got}")]
    InconsistentPoints { frame: usize, expected: usize, got: usize },
    #[error("ground truth has {got} frames but dataset has {expected}")]
    GroundTruthCount { expected: usize, got: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("frame {frame}: could not draw at least 3 visible points in 100 attempts")]
    InfeasibleOcclusion { frame: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (frame {frame}): {dump}")]
    NonFinite { step: usize, frame: usize, dump: String },
    #[error("every frame of the batch at step {step} was skipped")]
    AllFramesSkipped { step: usize },
    #[error("checkpoint callback failed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<AutodiffError> for TrainError {
    fn from(err: AutodiffError) -> Self {
        TrainError::Model(ModelError::Graph(err))
    }
}
