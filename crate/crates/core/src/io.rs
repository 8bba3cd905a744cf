//! On-disk formats: binary PGM frames with a JSON manifest, float WAV audio
//! and JSON documents.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;
use crate::scene_sim::{AudioClip, FrameSequence};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl ToString) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(fs_err(path))
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(fs_err(path))?;
    let enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(
        img.as_raw(),
        img.width() as u32,
        img.height() as u32,
        ExtendedColorType::L8,
    )
    .map_err(|e| format_err(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .map_err(|e| format_err(path, e))?
        .into_luma8();
    let (w, h) = img.dimensions();
    GrayImage::from_raw(w as usize, h as usize, img.into_raw()).ok_or_else(|| format_err(path, "bad pixel count"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(fs_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Mono 32-bit float WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), IoError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| format_err(path, e))?;
    for &s in &clip.samples {
        w.write_sample(s).map_err(|e| format_err(path, e))?;
    }
    w.finalize().map_err(|e| format_err(path, e))
}

/// Reads a mono WAV into normalized floats. The clock offset is not stored
/// in the file and must be supplied.
pub fn read_wav(path: &Path, clock_offset_s: f64) -> Result<AudioClip, IoError> {
    let mut r = hound::WavReader::open(path).map_err(|e| format_err(path, e))?;
    let spec = r.spec();
    if spec.channels != 1 {
        return Err(format_err(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>().map(|s| s.map(|v| v as f32 / full)).collect()
        }
    }
    .map_err(|e| format_err(path, e))?;
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        clock_offset_s,
        overlapping: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifest {
    pub fps: u32,
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// `printf`-style name of frame files, e.g. `frame_00012.pgm`.
    pub pattern: String,
}

pub fn frame_file_name(n: usize) -> String {
    format!("frame_{n:05}.pgm")
}

pub fn write_frames(dir: &Path, frames: &FrameSequence) -> Result<(), IoError> {
    ensure_dir(dir)?;
    for (n, f) in frames.frames.iter().enumerate() {
        write_pgm(&dir.join(frame_file_name(n)), f)?;
    }
    let manifest = FrameManifest {
        fps: frames.fps,
        width: frames.width(),
        height: frames.height(),
        count: frames.len(),
        pattern: "frame_%05d.pgm".into(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn read_frames(dir: &Path) -> Result<FrameSequence, IoError> {
    let manifest: FrameManifest = read_json(&dir.join("manifest.json"))?;
    let mut frames = Vec::with_capacity(manifest.count);
    for n in 0..manifest.count {
        let path = dir.join(frame_file_name(n));
        let img = read_pgm(&path)?;
        if img.width() != manifest.width || img.height() != manifest.height {
            return Err(format_err(&path, "frame size differs from manifest"));
        }
        frames.push(img);
    }
    Ok(FrameSequence::new(frames, manifest.fps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as u8);
        let p = dir.path().join("a.pgm");
        write_pgm(&p, &img).unwrap();
        assert!(fs::read(&p).unwrap().starts_with(b"P5"));
        assert_eq!(read_pgm(&p).unwrap(), img);
    }

    #[test]
    fn wav_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let clip = AudioClip {
            samples: vec![0.0, 0.25, -1.0, 1.0, 1e-7],
            sample_rate: 48_000,
            clock_offset_s: 0.001,
            overlapping: false,
        };
        let p = dir.path().join("a.wav");
        write_wav(&p, &clip).unwrap();
        assert_eq!(read_wav(&p, 0.001).unwrap(), clip);
    }

    #[test]
    fn frames_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = FrameSequence::new(vec![GrayImage::filled(4, 3, 1), GrayImage::filled(4, 3, 2)], 60);
        write_frames(dir.path(), &seq).unwrap();
        assert!(dir.path().join("frame_00001.pgm").exists());
        assert_eq!(read_frames(dir.path()).unwrap(), seq);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_pgm(Path::new("/nonexistent/x.pgm")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.pgm"));
    }
}
