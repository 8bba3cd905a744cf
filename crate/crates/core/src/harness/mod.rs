//! Dataset generation, batch evaluation and the metric reports.

mod dataset;
mod metrics;
mod pipeline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_event::OnsetParams;
use crate::av_correspondence::{AudioDetectParams, MotionDetectParams, PairingParams, COARSE_FPS};
use crate::depth::PropagationConstants;
use crate::io::IoError;
use crate::scene_sim::SceneError;
use crate::video_event::FineParams;

pub use dataset::{
    generate_dataset, load_dataset_spec, load_scene, sample_scenes, scene_dir_name, DatasetSpec, ImpactModelMix,
    SampledScene, SceneRanges, DATASET_FILE, DATASET_FORMAT,
};
pub use metrics::{
    aggregate, bucket_of, calibration_samples, evaluate_scene, fps_consistency_report, fps_consistency_report_from,
    run_pipeline, run_pipeline_in_memory, Aggregate, DepthBucket, FailureRow, FpsReport, FpsRow, FpsSummary,
    MetricsReport, MetricsRow, SceneEvaluation, CSV_HEADER, MATCH_WINDOW_S, REPORT_FORMAT,
};
pub use pipeline::{estimate_scene, EventEstimate, EventFailure, SceneEstimate};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("{0}")]
    Report(String),
}

/// Why a scene or a pair produced no depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    NoCollision,
    NoOnset,
    NegativeDelay,
    TrackingLost,
    /// An estimate that matches no ground-truth collision.
    Spurious,
    /// Unreadable or unsupported input.
    Input,
}

impl FailureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::NoCollision => "no-collision",
            Self::NoOnset => "no-onset",
            Self::NegativeDelay => "negative-delay",
            Self::TrackingLost => "tracking-lost",
            Self::Spurious => "spurious",
            Self::Input => "input",
        }
    }
}

/// Every tunable of the end-to-end pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub motion: MotionDetectParams,
    pub audio: AudioDetectParams,
    pub pairing: PairingParams,
    pub fine: FineParams,
    pub onset: OnsetParams,
    pub consts: PropagationConstants,
    /// Rate of the stream used for event detection and pairing.
    pub coarse_fps: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            motion: MotionDetectParams::default(),
            audio: AudioDetectParams::default(),
            pairing: PairingParams::default(),
            fine: FineParams::default(),
            onset: OnsetParams::default(),
            consts: PropagationConstants::default(),
            coarse_fps: COARSE_FPS,
        }
    }
}
