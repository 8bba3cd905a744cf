//! Coarse matching of impact sounds to collision frame windows: an energy
//! detector on the audio, an acceleration-change detector on tracked moving
//! regions of the 30 FPS stream, and a greedy time-ordered pairing.

mod audio;
mod motion;
mod pairing;

pub use audio::{detect_audio_impacts, AudioDetectParams, AudioImpactWindow};
pub use motion::{detect_motion_events, MotionDetectParams, MotionEventWindow};
pub use pairing::{admissible_interval, pair_events, AVEventPair, Pairing, PairingParams};

/// Frame rate of the stream used for correspondence.
pub const COARSE_FPS: u32 = 30;
