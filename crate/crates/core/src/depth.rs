//! Delay-to-depth conversion and recording-offset calibration.
//!
//! Light arrives after `d/c` and sound after `d/v`, so the gap between the
//! two is `T = d/v - d/c` and `d = c v T / (c - v)`. `T` is observed as
//! `t_audio - t_video + t_hw`, where `t_hw` is the start offset of the audio
//! clock against the video clock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_sim::{DEFAULT_C_LIGHT, DEFAULT_V_SOUND};

#[derive(Debug, Error, PartialEq)]
pub enum DepthError {
    #[error("non-positive delay {0} s; the sound and the motion are probably mis-paired")]
    NegativeDelay(f64),
    #[error("invalid propagation constants: v = {v}, c = {c}")]
    Constants { v: f64, c: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConstants {
    pub v_sound: f64,
    pub c_light: f64,
}

impl Default for PropagationConstants {
    fn default() -> Self {
        Self {
            v_sound: DEFAULT_V_SOUND,
            c_light: DEFAULT_C_LIGHT,
        }
    }
}

impl PropagationConstants {
    pub fn validate(&self) -> Result<(), DepthError> {
        if self.v_sound > 0.0 && self.v_sound < self.c_light && self.c_light.is_finite() {
            Ok(())
        } else {
            Err(DepthError::Constants {
                v: self.v_sound,
                c: self.c_light,
            })
        }
    }

    /// Seconds of sound/light delay per metre, `1/v - 1/c`.
    pub fn delay_per_metre(&self) -> f64 {
        1.0 / self.v_sound - 1.0 / self.c_light
    }
}

/// Exact depth for a sound/light delay `t`.
pub fn depth_from_delay(t: f64, consts: &PropagationConstants) -> Result<f64, DepthError> {
    consts.validate()?;
    if !(t > 0.0) {
        return Err(DepthError::NegativeDelay(t));
    }
    let (v, c) = (consts.v_sound, consts.c_light);
    Ok(c * v * t / (c - v))
}

/// The `d = v t` approximation, ignoring light travel time.
pub fn depth_from_delay_approx(t: f64, consts: &PropagationConstants) -> Result<f64, DepthError> {
    consts.validate()?;
    if !(t > 0.0) {
        return Err(DepthError::NegativeDelay(t));
    }
    Ok(consts.v_sound * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub t_hw_s: f64,
    /// Fitted speed of sound, if requested.
    pub v_eff: Option<f64>,
    /// RMS timing residual of the fit.
    pub residual_ms: f64,
    pub samples: usize,
}

fn format_version() -> u32 {
    1
}

impl CalibrationModel {
    /// A model with a known offset and no fitted speed.
    pub fn known_offset(t_hw_s: f64) -> Self {
        Self {
            format_version: format_version(),
            t_hw_s,
            v_eff: None,
            residual_ms: 0.0,
            samples: 0,
        }
    }

    /// Constants with the fitted speed of sound substituted.
    pub fn constants(&self, consts: &PropagationConstants) -> PropagationConstants {
        PropagationConstants {
            v_sound: self.v_eff.unwrap_or(consts.v_sound),
            ..*consts
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub depth_m: f64,
    #[serde(rename = "T_s")]
    pub t_s: f64,
    pub t_audio: f64,
    pub t_video: f64,
    pub t_hw: f64,
}

pub fn estimate_depth(
    t_audio: f64,
    t_video: f64,
    model: &CalibrationModel,
    consts: &PropagationConstants,
) -> Result<DepthEstimate, DepthError> {
    let t = t_audio - t_video + model.t_hw_s;
    let depth_m = depth_from_delay(t, &model.constants(consts))?;
    Ok(DepthEstimate {
        depth_m,
        t_s: t,
        t_audio,
        t_video,
        t_hw: model.t_hw_s,
    })
}

/// One labelled observation for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub t_audio: f64,
    pub t_video: f64,
    pub depth_m: f64,
}

/// Fits `t_hw` (and optionally the speed of sound) to labelled samples.
///
/// The model is `t_audio - t_video = d (1/v - 1/c) - t_hw`. Without
/// `fit_v` the offset is the mean residual; with it, `1/v` and `t_hw` come
/// from a straight-line regression of the observed gap on depth.
pub fn calibrate(
    samples: &[CalibrationSample],
    fit_v: bool,
    consts: &PropagationConstants,
) -> Result<CalibrationModel, DepthError> {
    consts.validate()?;
    let need = if fit_v { 3 } else { 2 };
    if samples.len() < need {
        return Err(DepthError::Calibration(format!(
            "{} samples given, at least {need} needed",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let gap = |s: &CalibrationSample| s.t_audio - s.t_video;
    let (t_hw_s, v_eff, predict): (f64, Option<f64>, Box<dyn Fn(&CalibrationSample) -> f64>) = if fit_v {
        let md = samples.iter().map(|s| s.depth_m).sum::<f64>() / n;
        let mg = samples.iter().map(gap).sum::<f64>() / n;
        let sdd: f64 = samples.iter().map(|s| (s.depth_m - md).powi(2)).sum();
        let sdg: f64 = samples.iter().map(|s| (s.depth_m - md) * (gap(s) - mg)).sum();
        if sdd <= 1e-12 * n * md.abs().max(1.0).powi(2) {
            return Err(DepthError::Calibration(
                "all samples share one depth; the speed is unidentifiable".into(),
            ));
        }
        let slope = sdg / sdd;
        let intercept = mg - slope * md;
        // slope = 1/v - 1/c
        let inv_v = slope + 1.0 / consts.c_light;
        if inv_v <= 0.0 {
            return Err(DepthError::Calibration("fitted speed of sound is not positive".into()));
        }
        let v = 1.0 / inv_v;
        if !(320.0..=360.0).contains(&v) {
            return Err(DepthError::Calibration(format!(
                "fitted speed of sound {v:.1} m/s outside 320..360"
            )));
        }
        (-intercept, Some(v), Box::new(move |s| slope * s.depth_m + intercept))
    } else {
        let k = consts.delay_per_metre();
        let t_hw = samples.iter().map(|s| s.depth_m * k - gap(s)).sum::<f64>() / n;
        (t_hw, None, Box::new(move |s| s.depth_m * k - t_hw))
    };
    if !t_hw_s.is_finite() {
        return Err(DepthError::Calibration("offset is not finite".into()));
    }
    let rms = (samples.iter().map(|s| (gap(s) - predict(s)).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CalibrationModel {
        format_version: format_version(),
        t_hw_s,
        v_eff,
        residual_ms: rms * 1e3,
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn consts(v: f64) -> PropagationConstants {
        PropagationConstants {
            v_sound: v,
            ..PropagationConstants::default()
        }
    }

    #[test]
    fn one_millisecond_is_about_34_cm() {
        let d = depth_from_delay(0.001, &consts(340.0)).unwrap();
        assert!((d - 0.34).abs() < 1e-6);
    }

    #[test]
    fn exact_and_approx_differ_by_v_over_c() {
        let c = consts(343.0);
        let e = depth_from_delay(0.1, &c).unwrap();
        let a = depth_from_delay_approx(0.1, &c).unwrap();
        assert!(((e - a) / e - 343.0 / c.c_light).abs() < 1e-12);
        assert!(((e - a) - 39.2e-6).abs() < 0.5e-6);
    }

    #[test]
    fn non_positive_delay_rejected() {
        assert_eq!(
            depth_from_delay(0.0, &consts(343.0)),
            Err(DepthError::NegativeDelay(0.0))
        );
        assert!(depth_from_delay(-0.01, &consts(343.0)).is_err());
        assert!(depth_from_delay(0.01, &consts(4e8)).is_err());
    }

    #[test]
    fn depth_from_timing() {
        let m = CalibrationModel::known_offset(0.0);
        let d = estimate_depth(0.6, 0.5, &m, &consts(343.0)).unwrap();
        assert!((d.depth_m - 34.30).abs() < 1e-3);
        let biased = CalibrationModel::known_offset(0.001);
        let db = estimate_depth(0.6, 0.5, &biased, &consts(343.0)).unwrap();
        assert!((db.depth_m - d.depth_m - 0.343).abs() < 1e-3);
        assert!(matches!(
            estimate_depth(0.5, 0.6, &m, &consts(343.0)),
            Err(DepthError::NegativeDelay(_))
        ));
    }

    fn synth(depths: &[f64], t_hw: f64, v: f64) -> Vec<CalibrationSample> {
        let k = consts(v).delay_per_metre();
        depths
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let t_video = 0.3 + 0.01 * i as f64;
                CalibrationSample {
                    t_video,
                    t_audio: t_video + d * k - t_hw,
                    depth_m: d,
                }
            })
            .collect()
    }

    #[test]
    fn offset_recovered_exactly() {
        let s = synth(&[3.0, 12.0, 40.0], 0.001, 343.0);
        let m = calibrate(&s, false, &consts(343.0)).unwrap();
        assert!((m.t_hw_s - 0.001).abs() < 1e-9);
        assert!(m.residual_ms < 1e-6);
    }

    #[test]
    fn speed_and_offset_recovered() {
        let s = synth(&[3.0, 12.0, 25.0, 40.0], 0.0012, 338.0);
        let m = calibrate(&s, true, &consts(343.0)).unwrap();
        assert!((m.v_eff.unwrap() - 338.0).abs() < 1e-6);
        assert!((m.t_hw_s - 0.0012).abs() < 1e-9);
    }

    #[test]
    fn same_depth_cannot_fit_speed() {
        let s = synth(&[10.0, 10.0, 10.0], 0.001, 343.0);
        assert!(matches!(
            calibrate(&s, true, &consts(343.0)),
            Err(DepthError::Calibration(_))
        ));
        assert!(calibrate(&s[..1], false, &consts(343.0)).is_err());
    }

    #[test]
    fn uniform_bias_goes_into_offset() {
        let mut s = synth(&[3.0, 12.0, 40.0, 22.0], 0.001, 343.0);
        for x in &mut s {
            x.t_audio += 0.0015;
        }
        let m = calibrate(&s, false, &consts(343.0)).unwrap();
        assert!((m.t_hw_s - (0.001 - 0.0015)).abs() < 1e-9);
        assert!(m.residual_ms < 1e-6);
    }

    proptest! {
        #[test]
        fn linear_in_delay(t in 1e-4f64..0.3) {
            let c = PropagationConstants::default();
            let d1 = depth_from_delay(t, &c).unwrap();
            let d2 = depth_from_delay(2.0 * t, &c).unwrap();
            prop_assert!((d2 - 2.0 * d1).abs() <= 1e-12 * d2);
            prop_assert!(depth_from_delay(t * 1.001, &c).unwrap() > d1);
        }

        #[test]
        fn calibration_idempotent(t_hw in -0.005f64..0.005, d0 in 2.0f64..50.0, d1 in 2.0f64..50.0) {
            let s = synth(&[d0, d1, 0.5 * (d0 + d1)], t_hw, 343.0);
            let m = calibrate(&s, false, &consts(343.0)).unwrap();
            prop_assert!((m.t_hw_s - t_hw).abs() < 1e-12);
        }
    }
}
