use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rtm_core::experiment::{self, run_sweep, simulate_with_truth, with_workers, Dataset, RunConfig, Setup, SweepAxis, SweepSpec, TruthSource};
use rtm_core::forward::LogPermField;
use rtm_core::io::{self, RunManifest, MANIFEST_FILE, SUMMARIES_FILE};

/// Invalid user input, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(message: impl Into<String>) -> anyhow::Error {
    ConfigError(message.into()).into()
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn load_config(path: &Option<PathBuf>, edit: impl FnOnce(&mut RunConfig)) -> anyhow::Result<RunConfig> {
    let mut config = match path {
        Some(p) => parse_toml(p)?,
        None => RunConfig::default(),
    };
    edit(&mut config);
    config.validate().map_err(|e| config_error(e.to_string()))?;
    Ok(config)
}

fn load_truth(config: &RunConfig) -> anyhow::Result<Dataset> {
    match &config.truth.file {
        None => Ok(experiment::simulate(config)?),
        Some(path) => {
            let values = io::read_field(path, "data")?;
            let field = LogPermField::new(config.data_grid()?, values)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            Ok(simulate_with_truth(config, field, TruthSource::File { path: path.clone() })?)
        }
    }
}

/// Resolved configuration, loadable again with `--config`.
const CONFIG_ECHO: &str = "config.toml";

fn finish(out: &Path, mut manifest: RunManifest, files: Vec<String>) -> anyhow::Result<()> {
    let echo = toml::to_string(&manifest.config).context("serializing the configuration")?;
    fs::write(out.join(CONFIG_ECHO), echo).with_context(|| format!("writing {}", out.display()))?;
    manifest.files = files;
    manifest.files.push(CONFIG_ECHO.into());
    manifest.files.push(MANIFEST_FILE.into());
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    println!("{}", out.display());
    Ok(())
}

pub fn simulate(config: &Option<PathBuf>, out: &Path, seed: Option<u64>) -> anyhow::Result<()> {
    let config = load_config(config, |c| {
        if let Some(s) = seed {
            c.truth.seed = s;
        }
    })?;
    let data = load_truth(&config).context("simulating observations")?;
    let files = io::write_dataset(out, &config, &data)?;
    finish(out, RunManifest::new("simulate", &config, data.source.clone()), files)
}

pub struct RunArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<usize>,
    pub data: Option<PathBuf>,
    pub benchmark: Option<PathBuf>,
}

pub fn run(args: RunArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, |c| {
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if let Some(r) = args.repeats {
            c.repeats = r;
        }
    })?;
    let data = match &args.data {
        Some(dir) => {
            let source = io::read_json::<RunManifest>(&dir.join(MANIFEST_FILE))
                .map(|m| m.truth)
                .unwrap_or(TruthSource::File { path: dir.clone() });
            io::read_dataset(dir, &config, source).context("loading observations")?
        }
        None => load_truth(&config).context("simulating observations")?,
    };
    let benchmark = match &args.benchmark {
        Some(dir) => {
            let mut summaries = io::read_summaries(&dir.join(SUMMARIES_FILE), 0).context("loading benchmark")?;
            summaries.remove(0);
            Some(summaries)
        }
        None => None,
    };
    let setup = Setup::new(config.clone())?;
    let results = with_workers(args.workers, || setup.run(&data, benchmark.as_deref()))??;
    let mut files = io::write_dataset(&args.out, &config, &data)?;
    files.extend(io::write_run(&args.out, &results, &setup.prior.grid().centers())?);
    let mut manifest = RunManifest::new("run", &config, data.source.clone());
    manifest.data_dir = args.data;
    manifest.costs = results.iter().map(io::RepeatCost::new).collect();
    finish(&args.out, manifest, files)
}

pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub sweep: Option<PathBuf>,
    pub axis: Option<&'static str>,
    pub repeats: Option<usize>,
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let config = load_config(&args.config, |c| {
        if let Some(s) = args.seed {
            c.seed = s;
        }
    })?;
    let mut spec: SweepSpec = match (&args.sweep, args.axis) {
        (Some(path), _) => parse_toml(path)?,
        (None, Some(axis)) => toml::from_str(&format!("[axis]\nkind = \"{axis}\"\n"))
            .map_err(|e| config_error(e.to_string()))?,
        (None, None) => return Err(config_error("either --sweep or --axis is required")),
    };
    if let Some(r) = args.repeats {
        spec.repeats = r;
    }
    if config.truth.file.is_some() {
        return Err(config_error("sweeps draw their truth from `truth.seed`; remove `truth.file`"));
    }
    if spec.repeats == 0 {
        return Err(config_error("a sweep needs at least one repeat"));
    }
    if let SweepAxis::Noise { levels } = &spec.axis {
        if levels.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(config_error("noise levels must be finite and nonnegative"));
        }
    }
    let outcomes = run_sweep(&config, &spec, args.workers).map_err(|e| config_error(e.to_string()))?;
    let failed: usize = outcomes.iter().map(|o| o.repeats.iter().filter(|r| r.is_err()).count()).sum();
    if failed > 0 {
        log::warn!("{failed} sweep jobs failed; see {}", io::FAILURES_FILE);
    }
    let mut files = io::write_sweep(&args.out, &outcomes)?;
    io::write_json(&args.out.join("sweep.json"), &spec)?;
    files.push("sweep.json".into());
    let source = TruthSource::Seed { seed: config.truth.seed };
    finish(&args.out, RunManifest::new("sweep", &config, source), files)
}
