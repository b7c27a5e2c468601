//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime
//! numerical failure (including any failed trial row).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{render_table, run_experiment_with, CoverageReport, ExperimentConfig, RunOptions, TrialEvent, TrialObserver};
use crate::generator::build_generator;
use crate::population::{split_train_test, GALLERY_FORMAT_VERSION};
use crate::rng::{self, Domain};
use crate::search::Strategy;

pub const OUT_DIR_ENV: &str = "MASTERPRINT_OUT";

#[derive(Debug, Parser)]
#[command(name = "masterprint", version, about = "Diversity and novelty dictionary-attack search on a synthetic verifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test galleries and the generator for trial 0 of a seed.
    Gen(GenArgs),
    /// Run the experiment matrix and write the coverage report.
    Run(RunArgs),
    /// Render a coverage report CSV as a table on standard output.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Experiment configuration (JSON).
    pub config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// random, single, diversity, novelty or all; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
    /// Target FMR as a fraction (0.01 is 1%); repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fmr: Vec<f64>,
    /// Number of independent trials; overrides the configuration.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for running trials concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Write per-generation optimizer traces.
    #[arg(long)]
    pub trace: bool,
    /// Write every evolved dictionary as JSON.
    #[arg(long)]
    pub save_dicts: bool,
    /// Suppress progress output on standard error.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A report.csv written by `run`.
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Serialize)]
struct Versions {
    masterprint: &'static str,
    gallery_format: u32,
    report_format: u32,
}

const VERSIONS: Versions = Versions {
    masterprint: env!("CARGO_PKG_VERSION"),
    gallery_format: GALLERY_FORMAT_VERSION,
    report_format: crate::eval::REPORT_FORMAT_VERSION,
};

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'static str,
    config: &'a ExperimentConfig,
    versions: &'a Versions,
    files: Vec<String>,
    timings_seconds: Vec<(String, f64)>,
}

/// Writes through a temporary sibling and renames into place.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, contents)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn finish(mut self, command: &'static str, config: &ExperimentConfig, timings: Vec<(String, f64)>) -> Result<()> {
        self.files.push("manifest.json".into());
        let manifest = RunManifest { command, config, versions: &VERSIONS, files: self.files.clone(), timings_seconds: timings };
        write_atomic(&self.dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = load_config(Some(&args.config))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let seed = cfg.trial_seed(0);
    let (train, test) = split_train_test(&cfg.gallery, seed)?;
    let generator = build_generator(cfg.gallery.feature_dim, cfg.latent_dim, rng::derive(seed, Domain::Generator, 0), &train)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("gallery_train.json", &train.to_json()?)?;
    out.write("gallery_test.json", &test.to_json()?)?;
    out.write("generator.json", &generator.to_json()?)?;
    out.finish("gen", &cfg, vec![("total".into(), start.elapsed().as_secs_f64())])
}

fn parse_strategies(raw: &[String]) -> Result<Option<Vec<Strategy>>> {
    if raw.is_empty() || raw.iter().any(|s| s == "all") {
        return Ok(if raw.is_empty() { None } else { Some(Strategy::ALL.to_vec()) });
    }
    raw.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>().map(Some)
}

struct Progress;

impl TrialObserver for Progress {
    fn on_event(&self, event: TrialEvent) {
        if let TrialEvent::DictionaryFinalized { trial, strategy, fmr } = event {
            eprintln!("trial {trial}: {strategy} at FMR {fmr} done");
        }
    }
}

fn fmr_tag(fmr: f64) -> String {
    format!("{fmr}").replace('.', "p")
}

/// Runs the experiment and writes its files. Returns whether any trial row
/// failed.
fn cmd_run(args: &RunArgs) -> Result<bool> {
    let start = Instant::now();
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = parse_strategies(&args.strategy)? {
        cfg.strategies = s;
    }
    if !args.fmr.is_empty() {
        cfg.fmr_levels = args.fmr.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    cfg.validate()?;

    let opts = RunOptions { keep_dictionaries: args.save_dicts || args.trace, trace: args.trace };
    let observer: Option<&dyn TrialObserver> = if args.quiet { None } else { Some(&Progress) };
    if !args.quiet {
        eprintln!("running {} trial(s), strategies {:?}, FMR {:?}", cfg.trials, cfg.strategies, cfg.fmr_levels);
    }
    let output = match args.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run_experiment_with(&cfg, &opts, observer))?,
        None => run_experiment_with(&cfg, &opts, observer)?,
    };
    let elapsed = start.elapsed().as_secs_f64();

    let report = &output.report;
    let mut out = Outputs::new(&args.out)?;
    out.write("report.csv", &report.to_csv()?)?;
    match (render_table(report), report.summary_csv()) {
        (Ok(table), Ok(summary)) => {
            out.write("table.txt", &(report.header_block()? + &table))?;
            out.write("summary.csv", &summary)?;
            if !args.quiet {
                eprint!("{table}");
            }
        }
        (Err(Error::NothingToRender), _) | (_, Err(Error::NothingToRender)) => {
            eprintln!("no successful trials to summarize");
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    }
    for td in &output.dictionaries {
        let d = &td.dictionary;
        let stem = format!("trial{}_{}_fmr{}", td.trial, d.strategy, fmr_tag(td.fmr));
        if args.save_dicts {
            out.write(&format!("dictionaries/{stem}.json"), &d.to_json()?)?;
        }
        if args.trace {
            let mut csv = report.header_block()?;
            csv.push_str(&format!("# dictionary: trial {} {} fmr {} seed {}\n", td.trial, d.strategy, td.fmr, d.seed));
            csv.push_str("print,generation,best_fitness,sigma,mean_norm\n");
            for (i, e) in d.entries.iter().enumerate() {
                for r in &e.trace {
                    csv.push_str(&format!("{i},{},{},{},{}\n", r.generation, r.best_fitness, r.sigma, r.mean_norm));
                }
            }
            out.write(&format!("trace/{stem}.csv"), &csv)?;
        }
    }
    out.finish("run", &cfg, vec![("experiment".into(), elapsed), ("total".into(), start.elapsed().as_secs_f64())])?;

    let failed: Vec<_> = report.failures().collect();
    for f in &failed {
        eprintln!("trial {} {} at FMR {} failed: {}", f.trial, f.strategy, f.fmr, f.message);
    }
    Ok(!failed.is_empty())
}

fn cmd_report(args: &ReportArgs) -> Result<String> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::Malformed(format!("cannot read {}: {e}", args.input.display())))?;
    let report = CoverageReport::from_csv(&text)?;
    render_table(&report)
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| 0),
        Command::Run(a) => cmd_run(a).map(|failed| if failed { 3 } else { 0 }),
        Command::Report(a) => cmd_report(a).map(|table| {
            print!("{table}");
            0
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    })
}
