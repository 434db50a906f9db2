//! Command-line front end.
//!
//! Every configuration key is also a flag: `--lambda 0.5` is the same as
//! `--set lambda=0.5`. Precedence, lowest first: built-in defaults, the
//! `SPECDETECT_SEED` environment variable (seed only), `--config` files in
//! order, then flags in order.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use specdetect_core::diff::ParamStore;
use specdetect_core::eval::{roc_report, separability_stats};
use specdetect_core::hsi::{normalize_bands, HsiCube, LabelMap, SpectralPrior};
use specdetect_core::model::Model;
use specdetect_core::rng;

use crate::config::{ConfigError, RunConfig};
use crate::exec::Pool;
use crate::formats::{self, FormatError, ReportJson, ScoreMap};
use crate::pipeline;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INVALID: u8 = 3;

pub const SEED_ENV: &str = "SPECDETECT_SEED";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

#[derive(Debug, Parser)]
#[command(name = "specdetect", version, about = "Few-shot hyperspectral target detection")]
struct Cli {
    /// Configuration file, `key = value` per line. Repeatable.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Override one key, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic source/target scene pair.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Episodic training on a labelled source cube.
    MetaTrain {
        /// Labelled cube.
        #[arg(long)]
        source: PathBuf,
        /// Prior of one class, `CLASS=FILE`. Classes without one use their mean spectrum.
        #[arg(long = "prior", value_name = "CLASS=FILE")]
        priors: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection map without adaptation.
    Detect {
        #[command(flatten)]
        target: TargetArgs,
        /// Write the cosine-similarity map instead of the detection head output.
        #[arg(long)]
        baseline: bool,
    },
    /// Test-time adaptation, then the detection map.
    Adapt {
        #[command(flatten)]
        target: TargetArgs,
    },
    /// Score a map against the labels of a cube.
    Eval {
        #[arg(long)]
        map: PathBuf,
        /// Cube whose labels are the ground truth (non-zero = target).
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic experiments over a grid of values of one key.
    Sweep {
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference audit of the training objective on a toy model.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long = "window", default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 50)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    Version,
}

#[derive(Debug, Args)]
struct TargetArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cube: PathBuf,
    /// Target prior file.
    #[arg(long)]
    prior: PathBuf,
    /// Support pixel `ROW,COL`. Repeatable. Without any, `shots` labelled
    /// pixels of the cube are drawn by seed.
    #[arg(long = "support", value_name = "ROW,COL")]
    support: Vec<String>,
    /// Min-max scale each band of the cube, and the prior with it.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Invalid(_) => EXIT_INVALID,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<specdetect_core::Error> for CliError {
    fn from(e: specdetect_core::Error) -> Self {
        use specdetect_core::Error as E;
        match e {
            E::Config(_) | E::BlendOutOfRange(_) | E::EmptyGroup(_) | E::EvenWindow(_) => Self::Invalid(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Splits `--<config key> value` and `--<config key>=value` out of `args`.
fn extract_key_flags(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(s) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(a);
            continue;
        };
        let (name, inline) = match s.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (s, None),
        };
        let key = name.replace('-', "_");
        if !RunConfig::KEYS.contains(&key.as_str()) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn resolve_config(cli: &Cli, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.set("seed", v.trim())?;
    }
    for path in &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    formats::write_text(&dir.join(RUN_CONFIG_FILE), &cfg.to_text())?;
    Ok(())
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let (args, overrides) = extract_key_flags(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    if let Command::Version = cli.command {
        println!("specdetect {}", env!("CARGO_PKG_VERSION"));
        return Ok(());
    }
    let cfg = resolve_config(&cli, &overrides)?;
    let pool = Pool::new(cli.threads).map_err(|e| CliError::Runtime(e.to_string()))?;
    match &cli.command {
        Command::Synth { out } => synth(&cfg, out),
        Command::MetaTrain { source, priors, out } => meta_train(&cfg, source, priors, out, &pool),
        Command::Detect { target, baseline } => detect(&cfg, target, *baseline, &pool),
        Command::Adapt { target } => adapt(&cfg, target, &pool),
        Command::Eval { map, truth, out } => eval(&cfg, map, truth, out),
        Command::Sweep {
            key,
            values,
            seeds,
            out,
        } => sweep(&cfg, key, values, seeds, out, &pool),
        Command::Gradcheck {
            bands,
            window,
            width,
            coords,
            tolerance,
        } => gradcheck(&cfg, *bands, *window, *width, *coords, *tolerance),
        Command::Version => unreachable!(),
    }
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_out(out, cfg)?;
    let pair = pipeline::synthetic_pair(cfg, cfg.seed)?;
    formats::save_cube(&out.join("source.sphc"), &pair.source.cube, Some(&pair.source.labels))?;
    formats::save_cube(&out.join("target.sphc"), &pair.target.cube, Some(&pair.target.labels))?;
    formats::write_text(&out.join("target_prior.txt"), &formats::prior_text(&pair.target_prior, None))?;
    for (class, p) in &pair.source.priors {
        formats::write_text(&out.join(format!("source_prior_{class}.txt")), &formats::prior_text(p, None))?;
    }
    println!("wrote scene pair to {}", out.display());
    Ok(())
}

fn meta_train(cfg: &RunConfig, source: &Path, priors: &[String], out: &Path, pool: &Pool) -> Result<()> {
    let (cube, labels) = formats::load_cube(source)?;
    let labels = labels.ok_or_else(|| CliError::Runtime(format!("{}: cube has no labels", source.display())))?;
    let mut prior_map = std::collections::BTreeMap::new();
    for spec in priors {
        let (class, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--prior expects CLASS=FILE, got `{spec}`")))?;
        let class: u16 = class
            .parse()
            .map_err(|_| CliError::Usage(format!("bad class id `{class}`")))?;
        let p = formats::read_prior(Path::new(path), cube.bands(), cube.wavelengths())?;
        prior_map.insert(class, p.values);
    }
    create_out(out, cfg)?;
    let scene = pipeline::Scene {
        cube,
        labels,
        priors: prior_map,
    };
    let (_, store, trace) = pipeline::train_model(cfg, &scene, pool)?;
    formats::save_checkpoint(&out.join("checkpoint.spdm"), &store)?;
    formats::write_text(&out.join("loss_trace.csv"), &formats::loss_trace_csv(&trace))?;
    if let Some(last) = trace.last() {
        println!("iteration {} total loss {:.6}", last.iteration, last.loss_total);
    }
    Ok(())
}

struct Target {
    model: Model,
    store: ParamStore,
    cube: HsiCube,
    proto: specdetect_core::pgte::Prototype,
}

fn parse_support(spec: &str) -> Result<(usize, usize)> {
    let bad = || CliError::Usage(format!("--support expects ROW,COL, got `{spec}`"));
    let (r, c) = spec.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

fn load_target(cfg: &RunConfig, t: &TargetArgs) -> Result<Target> {
    let (cube, labels) = formats::load_cube(&t.cube)?;
    let prior = formats::read_prior(&t.prior, cube.bands(), cube.wavelengths())?;
    let (cube, prior) = if t.normalize {
        let (c, scale) = normalize_bands(&cube);
        let p = SpectralPrior::new(&prior.material, scale.apply(&prior.values))?;
        (c, p)
    } else {
        (cube, prior)
    };
    let support = if t.support.is_empty() {
        let labels: LabelMap = labels.ok_or_else(|| {
            CliError::Usage("no --support pixels given and the cube has no labels to draw them from".into())
        })?;
        pipeline::pick_support(&labels, cfg.shots, rng::derive(cfg.seed, &[30]))?
    } else {
        t.support.iter().map(|s| parse_support(s)).collect::<Result<Vec<_>>>()?
    };
    let mut store = formats::load_checkpoint(&t.checkpoint)?;
    let model = Model::bind(&cfg.model(cube.bands()), &mut store)?;
    let proto = pipeline::target_prototype(&model, &store, &cube, &support, &prior.values, cfg.lambda)?;
    Ok(Target {
        model,
        store,
        cube,
        proto,
    })
}

fn write_map(out: &Path, cube: &HsiCube, scores: &[f64]) -> Result<()> {
    let map = ScoreMap::new(cube.height(), cube.width(), scores)?;
    formats::save_map(&out.join("map.sphm"), &map)?;
    formats::save_pgm(&out.join("map.pgm"), &map)?;
    Ok(())
}

fn detect(cfg: &RunConfig, t: &TargetArgs, baseline: bool, pool: &Pool) -> Result<()> {
    let mut target = load_target(cfg, t)?;
    create_out(&t.out, cfg)?;
    let scores = if baseline {
        pipeline::baseline_map(&target.model, &target.store, &target.cube, &target.proto, pool)?
    } else {
        let mut zero = cfg.clone();
        zero.tta_iterations = 0;
        pipeline::adapt(&zero, &target.model, &mut target.store, &target.cube, &target.proto, pool)?.map
    };
    write_map(&t.out, &target.cube, &scores)?;
    println!("wrote {}", t.out.join("map.sphm").display());
    Ok(())
}

fn adapt(cfg: &RunConfig, t: &TargetArgs, pool: &Pool) -> Result<()> {
    let mut target = load_target(cfg, t)?;
    create_out(&t.out, cfg)?;
    let outcome = pipeline::adapt(cfg, &target.model, &mut target.store, &target.cube, &target.proto, pool)?;
    write_map(&t.out, &target.cube, &outcome.map)?;
    formats::save_checkpoint(&t.out.join("checkpoint.spdm"), &target.store)?;
    formats::write_text(&t.out.join("tta_trace.csv"), &formats::tta_trace_csv(&outcome.trace))?;
    println!("wrote {}", t.out.join("map.sphm").display());
    Ok(())
}

fn eval(cfg: &RunConfig, map: &Path, truth: &Path, out: &Path) -> Result<()> {
    let map = formats::load_map(map)?;
    let (cube, labels) = formats::load_cube(truth)?;
    let labels = labels.ok_or_else(|| CliError::Runtime(format!("{}: cube has no labels", truth.display())))?;
    if (map.height, map.width) != (cube.height(), cube.width()) {
        return Err(CliError::Runtime(format!(
            "map is {}x{}, truth is {}x{}",
            map.height,
            map.width,
            cube.height(),
            cube.width()
        )));
    }
    let scores = map.scores_f64();
    let report = roc_report(&scores, &labels, cfg.grid)?;
    let stats = separability_stats(&scores, &labels)?;
    create_out(out, cfg)?;
    let json = ReportJson::new(&report, &stats);
    formats::write_text(&out.join("report.json"), &json.to_json())?;
    formats::write_text(&out.join("roc.csv"), &formats::roc_csv(&report.curves))?;
    println!(
        "auc_pf_pd {:.5} auc_tau_pd {:.5} auc_tau_pf {:.5} auc_oa {:.5} auc_snpr {}",
        report.auc_pf_pd,
        report.auc_tau_pd,
        report.auc_tau_pf,
        report.auc_oa,
        if report.snpr_infinite { "inf".to_string() } else { format!("{:.5}", report.auc_snpr) }
    );
    Ok(())
}

fn sweep(cfg: &RunConfig, key: &str, values: &[String], seeds: &[u64], out: &Path, pool: &Pool) -> Result<()> {
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let mut settings = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        c.set(key, v)?;
        c.validate()?;
        settings.push((v.clone(), c));
    }
    create_out(out, cfg)?;
    let column = key.replace('-', "_");
    let mut csv = format!("{column},seed,auc_baseline,auc_unadapted,auc_adapted\n");
    for (v, c) in &settings {
        for &seed in &seeds {
            let e = pipeline::synthetic_experiment(c, seed, pool)?;
            csv.push_str(&format!(
                "{v},{seed},{:?},{:?},{:?}\n",
                e.baseline.auc_pf_pd, e.unadapted.auc_pf_pd, e.adapted.auc_pf_pd
            ));
            println!("{column}={v} seed {seed}: adapted {:.5}", e.adapted.auc_pf_pd);
        }
    }
    formats::write_text(&out.join("sweep.csv"), &csv)?;
    Ok(())
}

fn gradcheck(cfg: &RunConfig, bands: usize, window: usize, width: usize, coords: usize, tolerance: f64) -> Result<()> {
    let audit = pipeline::gradient_audit(bands, window, width, coords, cfg.seed)?;
    for (ns, n, err) in &audit.namespaces {
        println!("{ns:<10} {n:>4} coords  max rel error {err:.3e}");
    }
    let worst = audit.max_rel_error();
    if worst < tolerance {
        println!("ok: {worst:.3e} < {tolerance:e}");
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient audit failed: {worst:.3e} >= {tolerance:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_flags_are_extracted() {
        let args = ["x", "--lambda", "0.5", "eval", "--rho-low=0.3", "--out", "d"].map(OsString::from).to_vec();
        let (rest, ov) = extract_key_flags(args).unwrap();
        assert_eq!(rest, ["x", "eval", "--out", "d"].map(OsString::from).to_vec());
        assert_eq!(ov, vec![("lambda".into(), "0.5".into()), ("rho_low".into(), "0.3".into())]);
    }

    #[test]
    fn dangling_key_flag_is_usage_error() {
        let err = extract_key_flags(["x", "--lambda"].map(OsString::from).to_vec()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }
}
