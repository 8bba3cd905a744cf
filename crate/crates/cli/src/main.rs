use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flashbang::depth::{calibrate, CalibrationModel};
use flashbang::harness::{
    calibration_samples, estimate_scene, fps_consistency_report, generate_dataset, load_dataset_spec, run_pipeline,
    DatasetSpec, PipelineConfig,
};
use flashbang::io::{read_frames, read_json, read_wav, write_json};
use flashbang::scene_sim::GroundTruth;

#[derive(Parser)]
#[command(
    name = "flashbang",
    version,
    about = "Depth from the delay between seeing and hearing a collision"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Dataset seed; overrides the one in the dataset spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset spec for `simulate`, pipeline config otherwise (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Simulate {
        /// Overrides `n_scenes` of the spec.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Estimate collision depths in one scene directory.
    Estimate {
        scene: PathBuf,
        /// Frame rate variant to use; the highest available by default.
        #[arg(long)]
        fps: Option<u32>,
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Fit the recording offset on a labelled dataset.
    Calibrate {
        dataset: PathBuf,
        /// Also fit the speed of sound.
        #[arg(long)]
        fit_v: bool,
        /// Frame rate variant to time; the highest in the dataset by default.
        #[arg(long)]
        fps: Option<u32>,
    },
    /// Run the pipeline over a dataset and write metrics.
    Evaluate {
        dataset: PathBuf,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Comma-separated frame rates to evaluate.
        #[arg(long, value_delimiter = ',')]
        fps: Option<Vec<u32>>,
    },
    /// Compare low frame rates against the 240 FPS estimates.
    FpsReport { dataset: PathBuf },
}

fn pipeline_config(global: &Global) -> Result<PipelineConfig> {
    match &global.config {
        Some(p) => Ok(read_json(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn emit<T: serde::Serialize>(out: Option<&Path>, name: &str, value: &T) -> Result<()> {
    match out {
        Some(dir) => {
            flashbang::io::ensure_dir(dir)?;
            let path = dir.join(name);
            write_json(&path, value)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            use std::io::Write;
            writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(value)?)?;
        }
    }
    Ok(())
}

fn fps_dirs(scene: &Path) -> Result<Vec<u32>> {
    let mut rates: Vec<u32> = std::fs::read_dir(scene)
        .with_context(|| format!("cannot read scene directory {}", scene.display()))?
        .filter_map(|e| e.ok()?.file_name().to_str()?.strip_prefix("fps_")?.parse().ok())
        .collect();
    rates.sort_unstable();
    Ok(rates)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { scenes } => {
            let mut spec: DatasetSpec = match &g.config {
                Some(p) => read_json(p)?,
                None => DatasetSpec::default(),
            };
            if let Some(s) = g.seed {
                spec.seed = s;
            }
            if let Some(n) = scenes {
                spec.n_scenes = n;
            }
            let Some(out) = &g.out else {
                bail!("simulate needs --out <dir>")
            };
            let written = generate_dataset(&spec, out)?;
            eprintln!("wrote {} scenes to {}", written.len(), out.display());
        }
        Command::Estimate {
            scene,
            fps,
            calibration,
        } => {
            let config = pipeline_config(g)?;
            let rates = fps_dirs(&scene)?;
            let fps = match fps {
                Some(f) if rates.contains(&f) => f,
                Some(f) => bail!("{} has no {f} FPS frames (has {rates:?})", scene.display()),
                None => *rates
                    .last()
                    .with_context(|| format!("no fps_* frame directory in {}", scene.display()))?,
            };
            let gt_path = scene.join("ground_truth.json");
            let model = match calibration {
                Some(p) => read_json(&p)?,
                None if gt_path.exists() => CalibrationModel::known_offset(read_json::<GroundTruth>(&gt_path)?.t_hw_s),
                None => CalibrationModel::known_offset(0.0),
            };
            let frames = read_frames(&scene.join(format!("fps_{fps:03}")))?;
            let audio = read_wav(&scene.join("audio.wav"), model.t_hw_s)?;
            let est = estimate_scene(&frames, &audio, &model, &config);
            emit(g.out.as_deref(), "estimate.json", &est)?;
            if est.events.is_empty() {
                bail!(
                    "no depth estimated: {}",
                    est.failures
                        .iter()
                        .map(|f| f.message.as_str())
                        .collect::<Vec<_>>()
                        .join("; ")
                );
            }
        }
        Command::Calibrate { dataset, fit_v, fps } => {
            let config = pipeline_config(g)?;
            let fps = match fps {
                Some(f) => f,
                None => *load_dataset_spec(&dataset)?
                    .fps_set
                    .iter()
                    .max()
                    .context("dataset has no frame rates")?,
            };
            // Timings are read with a zero offset; the fit supplies the real one.
            let zero = CalibrationModel::known_offset(0.0);
            let report = run_pipeline(&dataset, Some(&zero), &config, Some(&[fps]))?;
            let model = calibrate(&calibration_samples(&report), fit_v, &config.consts)?;
            emit(g.out.as_deref(), "calibration.json", &model)?;
        }
        Command::Evaluate {
            dataset,
            calibration,
            fps,
        } => {
            let config = pipeline_config(g)?;
            let model: Option<CalibrationModel> = calibration.map(|p| read_json(&p)).transpose()?;
            let report = run_pipeline(&dataset, model.as_ref(), &config, fps.as_deref())?;
            let out = g.out.clone().unwrap_or_else(|| dataset.join("report"));
            report.write(&out)?;
            for a in report.aggregates.iter().filter(|a| a.bucket.is_none()) {
                println!(
                    "fps {:>3}  n {:>4}  AbsErr median {:.3} m  AbsRel median {:.4}",
                    a.fps.unwrap_or(0),
                    a.n,
                    a.abs_err_median,
                    a.abs_rel_median
                );
            }
            println!(
                "{} failures, {} of {} collisions missed; report in {}",
                report.failures.len(),
                report.missed_events,
                report.ground_truth_events,
                out.display()
            );
        }
        Command::FpsReport { dataset } => {
            let config = pipeline_config(g)?;
            let report = fps_consistency_report(&dataset, &config)?;
            for s in &report.summary {
                eprintln!(
                    "fps {:>3}  n {:>4}  median error {:.3} ms  median improvement ratio {:.1}",
                    s.fps, s.n, s.median_temporal_error_ms, s.median_improvement_ratio
                );
            }
            emit(g.out.as_deref(), "fps_report.json", &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
