//! Error type shared by the core pipeline.

use alloc::string::String;
use core::fmt;

/// Contract violations raised by the core pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Salt-and-pepper density must lie in `[0, 1]`.
    DensityOutOfRange(f64),
    /// Blur kernels must be odd and positive.
    KernelNotOdd(usize),
    /// Asked to drop more words than the query holds.
    DropTooMany { requested: usize, len: usize },
    /// Frame pixel outside `[0, 1]` or non-finite.
    PixelOutOfRange(f64),
    /// Frame dimensions or buffer length inconsistent.
    FrameShape { height: usize, width: usize, len: usize },
    /// Query longer than the supported maximum.
    QueryTooLong { len: usize, max: usize },
    /// Query tokens must be non-empty, lowercase words.
    BadToken(String),
    /// Padding requires at least one frame and at most `target` frames.
    PadLength { len: usize, target: usize },
    /// Annotation merge needs at least one label.
    EmptyLabels,
    /// A score label fell outside `[0, classes)`.
    LabelOutOfRange { label: usize, classes: usize },
    /// A fraction-valued parameter fell outside `[0, 1]`.
    FractionOutOfRange(f64),
    /// Split ratios must be non-negative and sum to one.
    BadSplitRatios,
    /// Visual treatments need pixel frames, not precomputed features.
    PreFeaturized,
    /// A pair failed its structural invariants.
    BadPair { pair_id: String, reason: &'static str },
    /// Number of frames differs from what the model expects.
    FrameCountMismatch { expected: usize, got: usize },
    /// A feature vector has the wrong width.
    DimMismatch { what: &'static str, expected: usize, got: usize },
    /// Non-finite value where a finite one is required.
    NonFinite(&'static str),
    /// Invalid model or training configuration.
    BadConfig(String),
    /// Referenced pair id not present in the corpus.
    UnknownPair(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DensityOutOfRange(d) => write!(f, "noise density {d} outside [0, 1]"),
            Error::KernelNotOdd(k) => write!(f, "blur kernel size {k} must be odd and >= 1"),
            Error::DropTooMany { requested, len } => {
                write!(f, "cannot drop {requested} words from a {len}-word query")
            }
            Error::PixelOutOfRange(v) => write!(f, "pixel value {v} outside [0, 1]"),
            Error::FrameShape { height, width, len } => write!(
                f,
                "frame buffer of length {len} does not match 3x{height}x{width}"
            ),
            Error::QueryTooLong { len, max } => {
                write!(f, "query has {len} tokens, maximum is {max}")
            }
            Error::BadToken(t) => write!(f, "invalid query token {t:?}"),
            Error::PadLength { len, target } => {
                write!(f, "cannot pad {len} frames to length {target}")
            }
            Error::EmptyLabels => write!(f, "cannot merge an empty list of score labels"),
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "score label {label} outside [0, {classes})")
            }
            Error::FractionOutOfRange(x) => write!(f, "fraction {x} outside [0, 1]"),
            Error::BadSplitRatios => write!(f, "split ratios must be non-negative and sum to 1"),
            Error::PreFeaturized => {
                write!(f, "visual treatments require pixel frames, got precomputed features")
            }
            Error::BadPair { pair_id, reason } => write!(f, "pair {pair_id}: {reason}"),
            Error::FrameCountMismatch { expected, got } => {
                write!(f, "expected {expected} frames, got {got}")
            }
            Error::DimMismatch { what, expected, got } => {
                write!(f, "{what}: expected dimension {expected}, got {got}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::BadConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::UnknownPair(id) => write!(f, "pair id {id:?} not found in corpus"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
