//! Subcommand implementations and the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};

use ndm::eval::{evaluate as score, Estimate};
use ndm::io;
use ndm::model::{Domain, GroundTruth};
use ndm::np::NonparametricRun;
use ndm::simgen::{simulate as draw, SimSpec};
use ndm::vi::{FitMode, FitReport, FitSession};
use ndm::Error;
use serde::{Deserialize, Serialize};

use crate::config::{self, FitConfig};
use crate::manifest::Recorder;
use crate::Mode;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_SHAPE: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Domain(_) => EXIT_DATA,
            Error::Shape(_) => EXIT_SHAPE,
            _ => EXIT_FAILURE,
        };
        Self { code, message: e.to_string() }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn failure(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

/// Reads an input JSON document; unreadable or malformed input is a data error.
fn read_input<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    io::read_json(path).map_err(|e| failure(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn digest(rec: &mut Recorder, path: &Path) -> Outcome {
    rec.input(path).map_err(|e| failure(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn out_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| failure(EXIT_FAILURE, format!("{}: {e}", dir.display())))
}

/// `metrics.json` → `metrics.run.json`.
fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.run.json"))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn simulate(config: &Option<PathBuf>, sets: &[String], seed: Option<u64>, out: &Path) -> Outcome {
    let mut rec = Recorder::new("simulate");
    let mut spec: SimSpec = config::load(config.as_deref(), sets)?;
    if let Some(path) = config {
        digest(&mut rec, path)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let sim = draw(&spec)?;
    out_dir(out)?;

    let mut data = sim.dataset.clone();
    data.truth = None;
    let csv = out.join("data.csv");
    io::write_dataset(&csv, &data)?;
    rec.output(&csv);
    rec.output(&io::manifest_path(&csv));
    let truth = out.join("truth.json");
    io::write_json(&truth, sim.truth())?;
    rec.output(&truth);
    if let Some(p) = &sim.particles {
        let path = out.join("particles.json");
        io::write_json(&path, p)?;
        rec.output(&path);
    }
    rec.manifest.config = to_value(&spec);
    rec.manifest.seed = Some(spec.seed);
    rec.manifest.notes = sim.notes.clone();
    rec.finish(&out.join("run.json"))?;
    Ok(())
}

pub struct FitRequest {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub data: PathBuf,
    pub domain: Option<Domain>,
    pub denominators: Option<PathBuf>,
    pub mode: Mode,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub no_splits: bool,
    pub no_merges: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
enum Progress {
    Parametric(FitSession),
    Nonparametric(NonparametricRun),
}

/// A resumable fit, tied to the digests of the data it was started on.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    inputs: Vec<String>,
    #[serde(flatten)]
    progress: Progress,
}

fn write_checkpoint(path: &Path, inputs: &[String], progress: Progress) -> ndm::Result<()> {
    io::write_json(path, &Checkpoint { inputs: inputs.to_vec(), progress })
}

pub fn fit(req: &FitRequest) -> Outcome {
    let mut rec = Recorder::new("fit");
    let cfg: FitConfig = config::load(req.config.as_deref(), &req.sets)?;
    if let Some(path) = &req.config {
        digest(&mut rec, path)?;
    }
    let mut data = io::read_dataset(&req.data, req.domain)?;
    digest(&mut rec, &req.data)?;
    if let Some(path) = &req.denominators {
        let d = io::read_denominators(path)?;
        digest(&mut rec, path)?;
        data = io::counts_to_proportions(&data, &d)?;
        rec.manifest.notes.push("counts divided by row denominators and fitted as proportions".into());
    }
    let data_digests: Vec<String> =
        rec.manifest.inputs.iter().skip(usize::from(req.config.is_some())).map(|d| d.sha256.clone()).collect();
    let seed = req.seed.or(cfg.seed).unwrap_or(0);
    let hp = cfg.hyperparameters(data.m(), data.domain)?;
    let opts = cfg.fit_options(seed, hp.family)?;
    let np = cfg.nonparametric(req.no_splits, req.no_merges);
    out_dir(&req.out)?;
    let ckpt_path = req.out.join("checkpoint.json");
    let every = cfg.checkpoint_every.max(1);

    let progress = match &req.resume {
        Some(path) => {
            let c: Checkpoint = read_input(path)?;
            digest(&mut rec, path)?;
            if c.inputs != data_digests {
                return Err(failure(EXIT_DATA, format!("{}: checkpoint was written for different data", path.display())));
            }
            let matches = matches!(
                (&c.progress, req.mode),
                (Progress::Parametric(_), Mode::Parametric) | (Progress::Nonparametric(_), Mode::Nonparametric)
            );
            if !matches {
                return Err(failure(EXIT_CONFIG, format!("{}: checkpoint is for the other --mode", path.display())));
            }
            rec.manifest.notes.push(format!("resumed from {}", path.display()));
            let mut progress = c.progress;
            match &mut progress {
                Progress::Parametric(s) => s.set_max_iters(opts.max_iters),
                Progress::Nonparametric(r) => r.set_max_iters(opts.max_iters),
            }
            progress
        }
        None => match req.mode {
            Mode::Parametric => Progress::Parametric(FitSession::new(hp.clone(), &data, cfg.k, false, opts.clone())?),
            Mode::Nonparametric => Progress::Nonparametric(NonparametricRun::new(&hp, &data, cfg.k, &opts)?),
        },
    };

    let report: FitReport = match progress {
        Progress::Parametric(mut session) => {
            session.run_with(&data, |s| {
                if s.iterations % every == 0 {
                    log::info!("iteration {}: ELBO {:.3}", s.iterations, s.elbo_trace.last().copied().unwrap_or(f64::NAN));
                    let c = Checkpoint { inputs: data_digests.clone(), progress: Progress::Parametric(s.clone()) };
                    io::write_json(&ckpt_path, &c)?;
                }
                Ok(())
            })?;
            let report = session.report(FitMode::Parametric, Vec::new());
            write_checkpoint(&ckpt_path, &data_digests, Progress::Parametric(session))?;
            report
        }
        Progress::Nonparametric(mut run) => {
            run.run_with(&data, &np, |r| {
                log::info!("round {}: K = {}, {} iterations", r.round, r.session.state.k(), r.session.iterations);
                if r.round % every == 0 {
                    let c = Checkpoint { inputs: data_digests.clone(), progress: Progress::Nonparametric(r.clone()) };
                    io::write_json(&ckpt_path, &c)?;
                }
                Ok(())
            })?;
            let report = run.report();
            write_checkpoint(&ckpt_path, &data_digests, Progress::Nonparametric(run))?;
            report
        }
    };
    rec.output(&ckpt_path);
    let fit_path = req.out.join("fit.json");
    io::write_json(&fit_path, &report)?;
    rec.output(&fit_path);
    if !report.converged {
        log::warn!("fit stopped after {} iterations without converging", report.iterations);
    }
    rec.manifest.config = serde_json::json!({
        "file": to_value(&cfg),
        "mode": match req.mode { Mode::Parametric => "parametric", Mode::Nonparametric => "nonparametric" },
        "hyperparameters": to_value(&report.hyperparameters),
        "options": to_value(&report.options),
        "nonparametric": to_value(&np),
    });
    rec.manifest.seed = Some(report.options.seed);
    rec.finish(&req.out.join("run.json"))?;
    Ok(())
}

pub fn evaluate(truth: &Path, fit: Option<&Path>, estimate: Option<&Path>, out: &Path) -> Outcome {
    let mut rec = Recorder::new("evaluate");
    let t: GroundTruth = read_input(truth)?;
    digest(&mut rec, truth)?;
    let est = match (fit, estimate) {
        (Some(path), _) => {
            let report: FitReport = read_input(path)?;
            digest(&mut rec, path)?;
            Estimate::from(&report.expectations)
        }
        (None, Some(path)) => {
            let est = io::read_estimate_csv(path)?;
            digest(&mut rec, path)?;
            est
        }
        (None, None) => return Err(failure(EXIT_CONFIG, "one of --fit or --estimate is required")),
    };
    let metrics = score(&est, &t)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    io::write_json(out, &metrics)?;
    rec.output(out);
    rec.finish(&sibling_manifest(out))?;
    Ok(())
}

pub fn export(fit: &Path, out: &Path) -> Outcome {
    let mut rec = Recorder::new("export-expectations");
    let report: FitReport = read_input(fit)?;
    digest(&mut rec, fit)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    io::write_expectations(out, &report.expectations)?;
    rec.output(out);
    rec.finish(&sibling_manifest(out))?;
    Ok(())
}
