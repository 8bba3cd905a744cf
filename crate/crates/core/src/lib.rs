//! Depth from the arrival-time gap between the sight and the sound of a
//! collision.
//!
//! The crate contains a scene simulator, a pyramidal Lucas-Kanade flow solver,
//! the coarse audio/video pairing stage, the sub-frame collision timer, the
//! acoustic onset locator, the delay-to-depth conversion with offset
//! calibration, and a batch harness that ties them together.

pub mod audio_event;
pub mod av_correspondence;
pub mod depth;
pub mod harness;
pub mod image;
pub mod io;
pub mod optical_flow;
pub mod scene_sim;
pub mod stats;
pub mod video_event;

pub use image::{GrayImage, Mask};
