//! Stereo multi-object tracking on pixel level.
//!
//! Masks of tracked instances are transported by optical flow into the next
//! frame (temporal, left-left) or into the other stereo image (left-right),
//! compared against detections with an overlap affinity matrix and matched
//! by the Kuhn-Munkres algorithm. The two assignment problems are solved
//! sequentially; the joint four-view matching is deliberately not solved.
//!
//! The left camera owns all tracks: right detections only ever attach to an
//! existing track, they never spawn one.

mod affinity;
mod assign;
mod flow;
mod mask;
mod tracker;

pub use affinity::{build_affinity, overlap, overlap_with, AffinityMatrix, OverlapKind, PredictionSet};
pub use assign::assign;
pub use flow::FlowField;
pub use mask::{labels_from_masks, masks_from_labels, read_pgm, write_pgm, InstanceMask, Side};
pub use tracker::{Track, TrackStatus, TrackerState};

use thiserror::Error;

/// Tracker hyperparameters. The paper defers these to its monocular
/// predecessor; they are configuration, not constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingConfig {
    /// Assignment pairs below this overlap are discarded.
    pub min_overlap: f64,
    /// A track is terminated after this many consecutive unmatched frames.
    pub max_lost: u32,
    /// Detections with fewer set pixels are ignored.
    pub min_mask_area: usize,
    /// Overlap definition used in the affinity matrix.
    pub overlap_kind: OverlapKind,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            min_overlap: 0.3,
            max_lost: 2,
            min_mask_area: 25,
            overlap_kind: OverlapKind::IoU,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("all mask pixels leave the image under the flow field")]
    EmptyPrediction,
    #[error("frames are not consecutive: tracker is at frame {tracker_frame}, flow maps {flow_source} -> {flow_target}")]
    FrameOrderError {
        tracker_frame: usize,
        flow_source: usize,
        flow_target: usize,
    },
    #[error("flow field does not match {expected}: got {got}")]
    FlowMismatch { expected: String, got: String },
    #[error("raster dimensions differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },
    #[error("instance label {0} does not fit an 8-bit PGM")]
    LabelOutOfRange(u32),
    #[error("{path}: {message}")]
    ParseError { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
