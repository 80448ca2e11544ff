//! Command dispatch for the `conenet` binary. All file I/O lives here.

pub mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::Serialize;

use conenet::construct::{build_clustered, build_sls, ClusteredOptions, SlsOptions, TraceJson};
use conenet::dataset::{
    check_clustered, dataset_from_json, dataset_to_json, find_sls_certificate, gen_clustered, gen_sls,
    LabeledDataset, SLSCertificate, SlsSearchOptions,
};
use conenet::netcore::{LayerNet, NetworkJson};
use conenet::numlin::Tolerance;
use conenet::verify::{certify, count_params, default_tolerance, degeneracy_probe, BuilderKind};
use conenet::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    GenClustered,
    GenSls,
    Check,
    CertifySls,
    Build,
    Verify,
    Probe,
    Params,
    Plot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Clustered,
    Sls,
}

/// Build zero-loss ReLU networks from cones and truncation maps.
#[derive(Debug, Clone, Parser)]
#[command(name = "conenet", version)]
pub struct RunConfig {
    #[arg(value_enum)]
    pub command: Command,
    /// Input file; repeat for commands taking data then a network or certificate.
    #[arg(long = "in")]
    pub inputs: Vec<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Construction trace (written by `build`, read by `plot`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, default_value_t = 0.125)]
    pub c0: f64,
    /// `μ/δ` per layer, comma separated, or one shared value.
    #[arg(long = "mu-frac", value_delimiter = ',')]
    pub mu_frac: Vec<f64>,
    /// Aperture fraction `α` per layer, comma separated, or one shared value.
    #[arg(long = "theta-alpha", value_delimiter = ',')]
    pub theta_alpha: Vec<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long = "points-per-class", default_value_t = 50)]
    pub points_per_class: usize,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The input did not satisfy a checked condition.
    Failed,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Failed => 1,
        }
    }
}

/// Exit code for an error: 1 for unmet preconditions, 2 otherwise.
pub fn error_code(e: &Error) -> i32 {
    match e {
        Error::Precondition(_) | Error::NotSeparable(_) => 1,
        _ => 2,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn input(cfg: &RunConfig, k: usize, what: &str) -> Result<PathBuf> {
    cfg.inputs
        .get(k)
        .cloned()
        .ok_or_else(|| Error::InvalidInput(format!("missing --in for the {what}")))
}

fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    dataset_from_json(&read(path)?).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| {
        Error::Parse(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

fn read_net(path: &Path) -> Result<LayerNet> {
    read_json::<NetworkJson>(path)?.into_layer_net(&Tolerance::default())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

fn emit(cfg: &RunConfig, body: &str, stdout: &mut dyn Write) -> Result<()> {
    match &cfg.out {
        Some(p) => fs::write(p, body)?,
        None => stdout.write_all(body.as_bytes())?,
    }
    Ok(())
}

fn require<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidInput(format!("{flag} is required")))
}

fn require_mode(cfg: &RunConfig) -> Result<Mode> {
    require(cfg.mode, "--mode")
}

fn clustered_options(cfg: &RunConfig) -> ClusteredOptions {
    let mut o = ClusteredOptions { c0: cfg.c0, ..Default::default() };
    if !cfg.mu_frac.is_empty() {
        o.mu_fractions = cfg.mu_frac.clone();
    }
    o
}

fn sls_options(cfg: &RunConfig) -> SlsOptions {
    if cfg.theta_alpha.is_empty() {
        SlsOptions::default()
    } else {
        SlsOptions { alphas: cfg.theta_alpha.clone() }
    }
}

fn sls_certificate(cfg: &RunConfig, ds: &LabeledDataset) -> Result<SLSCertificate> {
    match cfg.inputs.get(1) {
        Some(p) => read_json(p),
        None => find_sls_certificate(ds, &SlsSearchOptions::default()),
    }
}

/// Runs one command; summaries go to `stdout` unless `--out` names a file.
pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<Outcome> {
    match cfg.command {
        Command::GenClustered => {
            let ds = gen_clustered(
                require(cfg.seed, "--seed")?,
                require(cfg.dim, "--dim")?,
                require(cfg.classes, "--classes")?,
                cfg.points_per_class,
                cfg.spread,
            )?;
            emit(cfg, &(dataset_to_json(&ds) + "\n"), stdout)?;
            Ok(Outcome::Success)
        }
        Command::GenSls => {
            let ds = gen_sls(
                require(cfg.seed, "--seed")?,
                require(cfg.dim, "--dim")?,
                require(cfg.classes, "--classes")?,
                cfg.points_per_class,
            )?;
            emit(cfg, &(dataset_to_json(&ds) + "\n"), stdout)?;
            Ok(Outcome::Success)
        }
        Command::Check => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            let report = check_clustered(&ds, cfg.c0)?;
            emit(cfg, &to_json(&report), stdout)?;
            Ok(if report.passes { Outcome::Success } else { Outcome::Failed })
        }
        Command::CertifySls => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            match find_sls_certificate(&ds, &SlsSearchOptions::default()) {
                Ok(cert) => {
                    emit(cfg, &to_json(&cert), stdout)?;
                    Ok(Outcome::Success)
                }
                Err(Error::NotSeparable(report)) => {
                    emit(cfg, &to_json(&report), stdout)?;
                    Ok(Outcome::Failed)
                }
                Err(e) => Err(e),
            }
        }
        Command::Build => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            let out = require(cfg.out.as_ref(), "--out")?;
            let (net, trace) = match require_mode(cfg)? {
                Mode::Clustered => build_clustered(&ds, &clustered_options(cfg))?,
                Mode::Sls => build_sls(&ds, &sls_certificate(cfg, &ds)?, &sls_options(cfg))?,
            };
            fs::write(out, to_json(&NetworkJson::from(&net)))?;
            if let Some(t) = &cfg.trace {
                fs::write(t, to_json(&TraceJson::from(&trace)))?;
            }
            let cert = certify(&net, &ds, cfg.tol.unwrap_or_else(|| default_tolerance(&ds)))?;
            stdout.write_all(to_json(&cert).as_bytes())?;
            Ok(if cert.passes { Outcome::Success } else { Outcome::Failed })
        }
        Command::Verify => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            let net = read_net(&input(cfg, 1, "network")?)?;
            let cert = certify(&net, &ds, cfg.tol.unwrap_or_else(|| default_tolerance(&ds)))?;
            emit(cfg, &to_json(&cert), stdout)?;
            Ok(if cert.passes { Outcome::Success } else { Outcome::Failed })
        }
        Command::Probe => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            let kind = match require_mode(cfg)? {
                Mode::Clustered => BuilderKind::Clustered,
                Mode::Sls => BuilderKind::Sls,
            };
            let report = degeneracy_probe(&ds, kind, cfg.probes, cfg.seed.unwrap_or(0))?;
            emit(cfg, &to_json(&report), stdout)?;
            Ok(if report.all_pass() { Outcome::Success } else { Outcome::Failed })
        }
        Command::Params => {
            let net = read_net(&input(cfg, 0, "network")?)?;
            emit(cfg, &to_json(&count_params(&net)), stdout)?;
            Ok(Outcome::Success)
        }
        Command::Plot => {
            let ds = read_dataset(&input(cfg, 0, "dataset")?)?;
            let trace: TraceJson = match &cfg.trace {
                Some(p) => read_json(p)?,
                None => TraceJson { steps: vec![] },
            };
            emit(cfg, &plot::plot_trace(&ds, &trace)?, stdout)?;
            Ok(Outcome::Success)
        }
    }
}
