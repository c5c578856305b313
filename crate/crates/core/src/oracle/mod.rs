//! Choreography for the closing sequence: pick three moves, write the poem,
//! and score how the audience danced them.

pub mod metrics;
pub mod moves;
pub mod score;
pub mod sequence;

pub use metrics::{
    dtw, dtw_by, dtw_scalar, energy, frame_distance, oks, oks_with_scale, DtwResult, OksParams,
};
pub use moves::{builtin_library, select_moves, ChoreographyCue, CueSource, Move, MoveLibrary};
pub use score::{score, score_against, Components, ScoreConfig, ScoreReport, Weights};
pub use sequence::{PoseFrame, PoseSequence};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("need at least 3 moves, library has {0}")]
    InsufficientMoves(usize),
    #[error("reference frame has no visible keypoints")]
    NoVisibleKeypoints,
    #[error("object scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("empty pose sequence")]
    EmptySequence,
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {index} does not come after the previous one")]
    NonIncreasingTime { index: usize },
    #[error("frame {index} has non-finite coordinates or confidence outside [0, 1]")]
    MalformedFrame { index: usize },
    #[error("duplicate move id {0}")]
    DuplicateMove(String),
    #[error("unknown move id {0}")]
    UnknownMove(String),
    #[error("bad scoring config: {0}")]
    BadConfig(String),
    #[error("poem backend failed: {0}")]
    Poem(String),
    #[error("parse error: {0}")]
    Parse(String),
}
