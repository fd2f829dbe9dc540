use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame dimensions differ within clip: {first:?} vs {other:?} ({path})")]
    MixedDimensions {
        first: (usize, usize),
        other: (usize, usize),
        path: PathBuf,
    },
    #[error("clip has no frames")]
    EmptyClip,
    #[error("need {needed} frames, clip has {available}")]
    InsufficientFrames { needed: usize, available: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input min-side {min_side} is below target {target}")]
    InputTooSmall { min_side: usize, target: usize },
    #[error("{size}px cannot be split into {cells} grid cells")]
    GridTooFine { size: usize, cells: usize },
    #[error("grid cell {cell_h}x{cell_w} is smaller than fragment {frag_h}x{frag_w}")]
    CellSmallerThanFragment {
        cell_h: usize,
        cell_w: usize,
        frag_h: usize,
        frag_w: usize,
    },
    #[error("{height}x{width} is not divisible into {block}px tiles")]
    IndivisibleDims {
        height: usize,
        width: usize,
        block: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad arity: {0}")]
    BadArity(String),
    #[error("tensor carries no provenance")]
    MissingProvenance,
}

pub type Result<T> = std::result::Result<T, Error>;
