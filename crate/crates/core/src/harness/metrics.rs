use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{load_dataset_spec, load_scene, scene_dir_name, SampledScene};
use super::pipeline::{estimate_scene, SceneEstimate};
use super::{FailureKind, HarnessError, PipelineConfig};
use crate::depth::{CalibrationModel, CalibrationSample};
use crate::scene_sim::{simulate_scene, AudioClip, FrameSequence, GroundTruth};
use crate::stats::{median, percentile};

pub const REPORT_FORMAT: u32 = 1;
/// An estimate counts for a ground-truth collision within this many seconds.
pub const MATCH_WINDOW_S: f64 = 2.0 / 30.0;
pub const CSV_HEADER: &str = "scene_id,fps,event,depth_gt,depth_est,abs_err,abs_rel,bucket,t_video,t_audio";
const BASELINE_FPS: u32 = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DepthBucket {
    #[serde(rename = "<10")]
    Near,
    #[serde(rename = "10-30")]
    Mid,
    #[serde(rename = ">30")]
    Far,
}

impl DepthBucket {
    pub const ALL: [DepthBucket; 3] = [Self::Near, Self::Mid, Self::Far];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Near => "<10",
            Self::Mid => "10-30",
            Self::Far => ">30",
        }
    }
}

pub fn bucket_of(depth_m: f64) -> DepthBucket {
    if depth_m < 10.0 {
        DepthBucket::Near
    } else if depth_m <= 30.0 {
        DepthBucket::Mid
    } else {
        DepthBucket::Far
    }
}

/// One matched collision. Columns follow [`CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scene_id: usize,
    pub fps: u32,
    /// Index of the ground-truth collision in the scene.
    pub event: usize,
    pub depth_gt: f64,
    pub depth_est: f64,
    pub abs_err: f64,
    pub abs_rel: f64,
    pub bucket: DepthBucket,
    pub t_video: f64,
    pub t_audio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub scene_id: usize,
    pub fps: u32,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// `None` pools every rate.
    pub fps: Option<u32>,
    /// `None` pools every bucket.
    pub bucket: Option<DepthBucket>,
    pub n: usize,
    pub abs_err_p25: f64,
    pub abs_err_median: f64,
    pub abs_err_p75: f64,
    pub abs_rel_p25: f64,
    pub abs_rel_median: f64,
    pub abs_rel_p75: f64,
}

/// Evaluation of one scene at one frame rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvaluation {
    pub scene_id: usize,
    pub fps: u32,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<FailureRow>,
    /// Ground-truth collisions without a matching estimate.
    pub missed: usize,
    /// Estimated `t_video` per ground-truth collision.
    pub t_video: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<FailureRow>,
    pub ground_truth_events: usize,
    pub missed_events: usize,
    pub aggregates: Vec<Aggregate>,
    /// Present when the 240 FPS baseline and at least one other rate ran.
    pub improvement: Option<FpsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsRow {
    pub scene_id: usize,
    pub event: usize,
    pub fps: u32,
    pub t_video: f64,
    pub t_video_baseline: f64,
    pub temporal_error_s: f64,
    /// Frame duration over the temporal error; `None` when the error is 0.
    pub improvement_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsSummary {
    pub fps: u32,
    pub n: usize,
    pub median_temporal_error_ms: f64,
    pub median_improvement_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    pub format_version: u32,
    pub baseline_fps: u32,
    pub rows: Vec<FpsRow>,
    pub summary: Vec<FpsSummary>,
}

/// Matches estimates to ground-truth collisions, closest pairs first.
pub fn evaluate_scene(
    scene_id: usize,
    frames: &FrameSequence,
    audio: &AudioClip,
    gt: &GroundTruth,
    calibration: &CalibrationModel,
    config: &PipelineConfig,
) -> SceneEvaluation {
    let fps = frames.fps;
    let est: SceneEstimate = estimate_scene(frames, audio, calibration, config);
    let mut failures: Vec<FailureRow> = est
        .failures
        .iter()
        .map(|f| FailureRow {
            scene_id,
            fps,
            kind: f.kind,
            message: f.message.clone(),
        })
        .collect();

    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, e) in est.events.iter().enumerate() {
        for (j, g) in gt.events.iter().enumerate() {
            let d = (e.t_video - g.collision_time_s).abs();
            if d <= MATCH_WINDOW_S {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; est.events.len()];
    let mut gt_match: Vec<Option<usize>> = vec![None; gt.events.len()];
    for (_, i, j) in cand {
        if !est_used[i] && gt_match[j].is_none() {
            est_used[i] = true;
            gt_match[j] = Some(i);
        }
    }
    let rows = gt_match
        .iter()
        .enumerate()
        .filter_map(|(j, m)| {
            let e = &est.events[(*m)?];
            let depth_gt = gt.events[j].depth_m;
            let abs_err = (e.depth_m - depth_gt).abs();
            Some(MetricsRow {
                scene_id,
                fps,
                event: j,
                depth_gt,
                depth_est: e.depth_m,
                abs_err,
                abs_rel: abs_err / depth_gt,
                bucket: bucket_of(depth_gt),
                t_video: e.t_video,
                t_audio: e.t_audio,
            })
        })
        .collect();
    for (i, e) in est.events.iter().enumerate() {
        if !est_used[i] {
            failures.push(FailureRow {
                scene_id,
                fps,
                kind: FailureKind::Spurious,
                message: format!("estimate at t_video = {:.4} s matches no collision", e.t_video),
            });
        }
    }
    SceneEvaluation {
        scene_id,
        fps,
        rows,
        failures,
        missed: gt_match.iter().filter(|m| m.is_none()).count(),
        t_video: gt_match.iter().map(|m| m.map(|i| est.events[i].t_video)).collect(),
    }
}

fn quartiles(v: &[f64]) -> (f64, f64, f64) {
    (
        percentile(v, 25.0).unwrap_or(f64::NAN),
        median(v).unwrap_or(f64::NAN),
        percentile(v, 75.0).unwrap_or(f64::NAN),
    )
}

/// Quartiles per rate, per bucket and per rate and bucket.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(Option<u32>, Option<DepthBucket>), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        for key in [
            (Some(r.fps), None),
            (None, Some(r.bucket)),
            (Some(r.fps), Some(r.bucket)),
        ] {
            groups.entry(key).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|((fps, bucket), rs)| {
            let err: Vec<f64> = rs.iter().map(|r| r.abs_err).collect();
            let rel: Vec<f64> = rs.iter().map(|r| r.abs_rel).collect();
            let (e25, e50, e75) = quartiles(&err);
            let (r25, r50, r75) = quartiles(&rel);
            Aggregate {
                fps,
                bucket,
                n: rs.len(),
                abs_err_p25: e25,
                abs_err_median: e50,
                abs_err_p75: e75,
                abs_rel_p25: r25,
                abs_rel_median: r50,
                abs_rel_p75: r75,
            }
        })
        .collect()
}

impl MetricsReport {
    pub fn from_evaluations(mut evals: Vec<SceneEvaluation>, ground_truth_events: usize) -> Self {
        evals.sort_by_key(|e| (e.scene_id, e.fps));
        let rows: Vec<MetricsRow> = evals.iter().flat_map(|e| e.rows.iter().cloned()).collect();
        let failures = evals.iter().flat_map(|e| e.failures.iter().cloned()).collect();
        let improvement = fps_consistency_report_from(&evals).ok();
        Self {
            format_version: REPORT_FORMAT,
            aggregates: aggregate(&rows),
            rows,
            failures,
            ground_truth_events,
            missed_events: evals.iter().map(|e| e.missed).sum(),
            improvement,
        }
    }

    pub fn aggregate_for(&self, fps: Option<u32>, bucket: Option<DepthBucket>) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.fps == fps && a.bucket == bucket)
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| HarnessError::Report(e.to_string());
        w.write_record(CSV_HEADER.split(',')).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.scene_id.to_string(),
                r.fps.to_string(),
                r.event.to_string(),
                r.depth_gt.to_string(),
                r.depth_est.to_string(),
                r.abs_err.to_string(),
                r.abs_rel.to_string(),
                r.bucket.as_str().to_string(),
                r.t_video.to_string(),
                r.t_audio.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        crate::io::ensure_dir(dir)?;
        let csv_path = dir.join("metrics.csv");
        std::fs::write(&csv_path, self.to_csv()?)
            .map_err(|source| crate::io::IoError::Fs { path: csv_path, source })?;
        crate::io::write_json(&dir.join("metrics.json"), self)?;
        Ok(())
    }
}

/// Evaluates a dataset directory. Without a calibration the ground-truth
/// offset of each scene is used. `fps_filter` restricts the rates.
pub fn run_pipeline(
    dataset: &Path,
    calibration: Option<&CalibrationModel>,
    config: &PipelineConfig,
    fps_filter: Option<&[u32]>,
) -> Result<MetricsReport, HarnessError> {
    let spec = load_dataset_spec(dataset)?;
    let fps_set = select_fps(&spec.fps_set, fps_filter)?;
    let units: Vec<(usize, u32)> = (0..spec.n_scenes)
        .flat_map(|id| fps_set.iter().map(move |&f| (id, f)))
        .collect();
    let results: Vec<(SceneEvaluation, usize)> = units
        .par_iter()
        .map(|&(id, fps)| match load_scene(&dataset.join(scene_dir_name(id)), fps) {
            Ok((frames, audio, gt)) => {
                let cal = calibration
                    .copied()
                    .unwrap_or_else(|| CalibrationModel::known_offset(gt.t_hw_s));
                (evaluate_scene(id, &frames, &audio, &gt, &cal, config), gt.events.len())
            }
            Err(e) => (
                SceneEvaluation {
                    scene_id: id,
                    fps,
                    rows: Vec::new(),
                    failures: vec![FailureRow {
                        scene_id: id,
                        fps,
                        kind: FailureKind::Input,
                        message: e.to_string(),
                    }],
                    missed: 0,
                    t_video: Vec::new(),
                },
                0,
            ),
        })
        .collect();
    let n_gt = results.iter().map(|r| r.1).sum();
    Ok(MetricsReport::from_evaluations(
        results.into_iter().map(|r| r.0).collect(),
        n_gt,
    ))
}

/// [`run_pipeline`] on scenes simulated in memory, without touching disk.
pub fn run_pipeline_in_memory(
    scenes: &[SampledScene],
    fps_set: &[u32],
    calibration: Option<&CalibrationModel>,
    config: &PipelineConfig,
) -> Result<MetricsReport, HarnessError> {
    let units: Vec<(&SampledScene, u32)> = scenes
        .iter()
        .flat_map(|s| fps_set.iter().map(move |&f| (s, f)))
        .collect();
    let results = units
        .par_iter()
        .map(|&(s, fps)| {
            let sim = simulate_scene(&s.spec.with_fps(fps))?;
            let gt = &sim.ground_truth;
            let cal = calibration
                .copied()
                .unwrap_or_else(|| CalibrationModel::known_offset(gt.t_hw_s));
            Ok((
                evaluate_scene(s.id, &sim.frames, &sim.audio, gt, &cal, config),
                gt.events.len(),
            ))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let n_gt = results.iter().map(|r| r.1).sum();
    Ok(MetricsReport::from_evaluations(
        results.into_iter().map(|r| r.0).collect(),
        n_gt,
    ))
}

fn select_fps(available: &[u32], filter: Option<&[u32]>) -> Result<Vec<u32>, HarnessError> {
    let Some(filter) = filter else {
        return Ok(available.to_vec());
    };
    if let Some(f) = filter.iter().find(|f| !available.contains(f)) {
        return Err(HarnessError::Report(format!(
            "fps {f} is not in the dataset (has {available:?})"
        )));
    }
    Ok(available.iter().copied().filter(|f| filter.contains(f)).collect())
}

/// Temporal error of every lower rate against the 240 FPS estimate of the
/// same collision.
pub fn fps_consistency_report_from(evals: &[SceneEvaluation]) -> Result<FpsReport, HarnessError> {
    let baseline: BTreeMap<usize, &SceneEvaluation> = evals
        .iter()
        .filter(|e| e.fps == BASELINE_FPS)
        .map(|e| (e.scene_id, e))
        .collect();
    if baseline.is_empty() {
        return Err(HarnessError::Report(format!("missing the {BASELINE_FPS} FPS baseline")));
    }
    let mut sorted: Vec<&SceneEvaluation> = evals.iter().filter(|e| e.fps != BASELINE_FPS).collect();
    if sorted.is_empty() {
        return Err(HarnessError::Report("no rate other than the baseline".into()));
    }
    sorted.sort_by_key(|e| (e.fps, e.scene_id));
    let mut rows = Vec::new();
    for e in sorted {
        let Some(b) = baseline.get(&e.scene_id) else { continue };
        for (j, (t, tb)) in e.t_video.iter().zip(&b.t_video).enumerate() {
            if let (Some(t), Some(tb)) = (t, tb) {
                let err = (t - tb).abs();
                rows.push(FpsRow {
                    scene_id: e.scene_id,
                    event: j,
                    fps: e.fps,
                    t_video: *t,
                    t_video_baseline: *tb,
                    temporal_error_s: err,
                    improvement_ratio: (err > 0.0).then(|| 1.0 / f64::from(e.fps) / err),
                });
            }
        }
    }
    let mut rates: Vec<u32> = rows.iter().map(|r| r.fps).collect();
    rates.dedup();
    let summary = rates
        .into_iter()
        .map(|fps| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.fps == fps)
                .map(|r| r.temporal_error_s)
                .collect();
            let ratios: Vec<f64> = rows
                .iter()
                .filter(|r| r.fps == fps)
                .filter_map(|r| r.improvement_ratio)
                .collect();
            FpsSummary {
                fps,
                n: errs.len(),
                median_temporal_error_ms: median(&errs).unwrap_or(f64::NAN) * 1e3,
                median_improvement_ratio: median(&ratios).unwrap_or(f64::NAN),
            }
        })
        .collect();
    Ok(FpsReport {
        format_version: REPORT_FORMAT,
        baseline_fps: BASELINE_FPS,
        rows,
        summary,
    })
}

/// Runs every rate of a dataset and compares each against 240 FPS.
pub fn fps_consistency_report(dataset: &Path, config: &PipelineConfig) -> Result<FpsReport, HarnessError> {
    let spec = load_dataset_spec(dataset)?;
    if !spec.fps_set.contains(&BASELINE_FPS) {
        return Err(HarnessError::Report(format!(
            "dataset has no {BASELINE_FPS} FPS variant (has {:?})",
            spec.fps_set
        )));
    }
    let report = run_pipeline(dataset, None, config, None)?;
    report
        .improvement
        .ok_or_else(|| HarnessError::Report("no rate other than the baseline".into()))
}

/// Labelled timing observations from a report, for offset calibration.
pub fn calibration_samples(report: &MetricsReport) -> Vec<CalibrationSample> {
    report
        .rows
        .iter()
        .map(|r| CalibrationSample {
            t_audio: r.t_audio,
            t_video: r.t_video,
            depth_m: r.depth_gt,
        })
        .collect()
}
