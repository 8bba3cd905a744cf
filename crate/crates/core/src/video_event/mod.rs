//! Collision time in the video clock: coarse pre/post split from the
//! acceleration change of a tracked centroid, then per-pixel line fits on
//! anchor-frame flows and their L1-optimal intersection time.

mod estimate;
mod fit;
mod split;
mod track;

use thiserror::Error;

pub use estimate::{refine_collision_time, FineEstimate, FineParams};
pub use fit::{
    estimate_collision_time, estimate_from_times, fit_pixel, fit_pixel_trajectories, intersection_loss, AxisFits,
    CollisionTimeEstimate, FitModel, FitParams, PixelTrajectoryFit,
};
pub use split::{coarse_split, coarse_split_with, CollisionSplit, MIN_DELTA_A_PX};
pub use track::{track_centroid, track_from, CentroidTrack, TrackParams, TrackPoint};

/// Frames per side used by the trajectory fits.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum VideoEventError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no collision detected")]
    NoCollision,
    #[error("tracking lost after frame {last_good}")]
    TrackingLost { last_good: usize },
    #[error("track has {got} frames, {need} needed")]
    TooFewFrames { got: usize, need: usize },
    #[error("collision time estimation failed: {0}")]
    Estimation(String),
}
