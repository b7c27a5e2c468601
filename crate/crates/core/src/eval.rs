//! Multi-trial coverage experiment and report rendering.
//!
//! Seeds: trial `t` uses `derive(master_seed, Trial, t)`. Within a trial the
//! generator seed is `derive(trial_seed, Generator, 0)`, the calibration seed
//! for FMR level `f` is `derive(trial_seed, Calibration, f)` and the strategy
//! seed is `derive(trial_seed, Strategy, 16 * f + strategy_index)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmaes::CmaesParams;
use crate::error::{config, Error, Result};
use crate::generator::{build_generator, Generator, GeneratorParams};
use crate::matcher::{calibrate, FmrCalibration, MatchVector};
use crate::population::{generate_half, Gallery, GalleryConfig, Partition};
use crate::rng::{self, Domain};
use crate::search::{
    dictionary_match_vectors, evolve_diversity_dictionary, evolve_novelty_dictionary, evolve_single_print,
    prefix_coverages, random_dictionary, PrintDictionary, SearchContext, Strategy, DEFAULT_SIGMA0,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;
const REPORT_MAGIC: &str = "# masterprint coverage report";
const CONFIG_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gallery: GalleryConfig,
    pub latent_dim: usize,
    /// Target false match rates as fractions (0.01 is 1%).
    pub fmr_levels: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub trials: usize,
    pub max_dict_size: usize,
    pub per_print_generations: usize,
    pub single_print_generations: usize,
    pub sigma0: f64,
    pub lambda: Option<usize>,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            gallery: GalleryConfig::default(),
            latent_dim: 16,
            fmr_levels: vec![0.01, 0.001, 0.0001],
            strategies: Strategy::ALL.to_vec(),
            trials: 10,
            max_dict_size: 10,
            per_print_generations: 1000,
            single_print_generations: 10000,
            sigma0: DEFAULT_SIGMA0,
            lambda: None,
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gallery.validate()?;
        if !self.gallery.user_count.is_multiple_of(2) {
            return config("gallery.user_count must be even (train and test halves)");
        }
        if self.latent_dim < 2 || self.latent_dim > self.gallery.feature_dim {
            return config(format!("latent_dim must be in 2..={}", self.gallery.feature_dim));
        }
        if self.fmr_levels.is_empty() || self.fmr_levels.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return config("fmr_levels must be non-empty and inside (0, 1]");
        }
        if self.strategies.is_empty() {
            return config("at least one strategy is required");
        }
        if self.trials < 1 {
            return config("trials must be at least 1");
        }
        if self.max_dict_size < 1 || self.per_print_generations < 1 || self.single_print_generations < 1 {
            return config("dictionary size and generation budgets must be positive");
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return config("sigma0 must be positive");
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        rng::derive(self.master_seed, Domain::Trial, trial as u64)
    }

    /// Strategies in canonical R, D, I, N order without duplicates.
    fn ordered_strategies(&self) -> Vec<Strategy> {
        Strategy::ALL.into_iter().filter(|s| self.strategies.contains(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One (strategy, FMR, trial) cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub strategy: Strategy,
    pub fmr: f64,
    pub trial: usize,
    pub trial_seed: u64,
    pub status: RowStatus,
    pub train_coverage: f64,
    pub test_coverage: f64,
    pub dict_size: usize,
    pub evaluations: usize,
    pub overlap: usize,
    pub threshold: f64,
    pub achieved_fmr: f64,
    pub impostor_pairs: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Test => "Test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fmr: f64,
    pub split: Split,
    pub strategy: Strategy,
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialRow>,
}

/// Sample mean and (n - 1) standard deviation; zero spread for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CoverageReport {
    pub fn failures(&self) -> impl Iterator<Item = &TrialRow> {
        self.rows.iter().filter(|r| r.status == RowStatus::Failed)
    }

    /// FMR levels in first-appearance order.
    pub fn fmr_levels(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.fmr) {
                out.push(r.fmr);
            }
        }
        out
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        Strategy::ALL.into_iter().filter(|s| self.rows.iter().any(|r| r.strategy == *s)).collect()
    }

    /// Mean and spread of successful trials per (FMR, split, strategy).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for fmr in self.fmr_levels() {
            for split in [Split::Train, Split::Test] {
                for strategy in self.strategies() {
                    let values: Vec<f64> = self
                        .rows
                        .iter()
                        .filter(|r| r.fmr == fmr && r.strategy == strategy && r.status == RowStatus::Ok)
                        .map(|r| match split {
                            Split::Train => r.train_coverage,
                            Split::Test => r.test_coverage,
                        })
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    let (mean, std) = mean_std(&values);
                    out.push(SummaryRow { fmr, split, strategy, mean, std, trials: values.len() });
                }
            }
        }
        out
    }

    pub fn mean(&self, fmr: f64, split: Split, strategy: Strategy) -> Option<f64> {
        self.summary().into_iter().find(|s| s.fmr == fmr && s.split == split && s.strategy == strategy).map(|s| s.mean)
    }

    /// Commented lines carrying the configuration, optimizer constants and
    /// trial seeds; every output file starts with them.
    pub fn header_block(&self) -> Result<String> {
        let params = CmaesParams::new(self.config.latent_dim, self.config.lambda)?;
        let mut h = String::new();
        writeln!(h, "{REPORT_MAGIC} v{REPORT_FORMAT_VERSION}").unwrap();
        writeln!(h, "{CONFIG_PREFIX}{}", serde_json::to_string(&self.config)?).unwrap();
        writeln!(h, "# cmaes: {}", serde_json::to_string(&params)?).unwrap();
        let seeds: Vec<String> = (0..self.config.trials).map(|t| self.config.trial_seed(t).to_string()).collect();
        writeln!(h, "# trial_seeds: {}", seeds.join(" ")).unwrap();
        if self.config.strategies.contains(&Strategy::Novelty) {
            writeln!(h, "# novelty_rank: nearest-archive Hamming distance, ties broken by matched-user count then candidate order").unwrap();
        }
        Ok(h)
    }

    /// Per-trial rows as CSV behind a commented header block carrying the
    /// configuration, optimizer constants and seeds.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(self.header_block()? + &body)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let malformed = |m: &str| Error::Malformed(m.to_string());
        if !text.starts_with(REPORT_MAGIC) {
            return Err(malformed("missing report header"));
        }
        let config_line = text
            .lines()
            .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
            .ok_or_else(|| malformed("missing config line"))?;
        let config: ExperimentConfig =
            serde_json::from_str(config_line).map_err(|e| Error::Malformed(format!("config: {e}")))?;
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<TrialRow>, _>>()
            .map_err(|e| Error::Malformed(format!("row: {e}")))?;
        Ok(CoverageReport { config, rows })
    }

    /// Summary as CSV (percentages with two decimals) behind the same header.
    pub fn summary_csv(&self) -> Result<String> {
        let summary = self.summary();
        if summary.is_empty() {
            return Err(Error::NothingToRender);
        }
        let mut out = self.header_block()?;
        out.push_str("fmr,split,strategy,mean,std,trials\n");
        for s in summary {
            writeln!(
                out,
                "{},{},{},{:.2},{:.2},{}",
                s.fmr,
                s.split.label().to_lowercase(),
                s.strategy,
                100.0 * s.mean,
                100.0 * s.std,
                s.trials
            )
            .unwrap();
        }
        Ok(out)
    }
}

/// `0.01` renders as `1.0`, `0.001` as `0.1`: the FMR in percent.
fn fmr_label(fmr: f64) -> String {
    let pct = format!("{:.6}", fmr * 100.0);
    let trimmed = pct.trim_end_matches('0');
    if trimmed.ends_with('.') {
        format!("{trimmed}0")
    } else {
        trimmed.to_string()
    }
}

/// Fixed-width table of mean coverage percentages: one row per (FMR, split),
/// one column per strategy (R, D, I, N).
pub fn render_table(report: &CoverageReport) -> Result<String> {
    let strategies = report.strategies();
    let summary = report.summary();
    if strategies.is_empty() || summary.is_empty() {
        return Err(Error::NothingToRender);
    }
    let cell: BTreeMap<(u64, Split, Strategy), f64> =
        summary.iter().map(|s| ((s.fmr.to_bits(), s.split, s.strategy), s.mean)).collect();
    let mut out = String::new();
    write!(out, "{:<10}{:<7}", "FMR (%)", "Split").unwrap();
    for s in &strategies {
        write!(out, "{:>9}", s.letter()).unwrap();
    }
    out.push('\n');
    for fmr in report.fmr_levels() {
        for split in [Split::Train, Split::Test] {
            let label = if split == Split::Train { fmr_label(fmr) } else { String::new() };
            write!(out, "{:<10}{:<7}", label, split.label()).unwrap();
            for s in &strategies {
                match cell.get(&(fmr.to_bits(), split, *s)) {
                    Some(m) => write!(out, "{:>9.2}", 100.0 * m).unwrap(),
                    None => write!(out, "{:>9}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Events a trial emits, for auditing the order of data access.
#[derive(Debug, Clone, PartialEq)]
pub enum TrialEvent {
    DictionaryFinalized { trial: usize, strategy: Strategy, fmr: f64 },
    TestGalleryRead { trial: usize },
}

pub trait TrialObserver: Sync {
    fn on_event(&self, event: TrialEvent);
}

struct Silent;

impl TrialObserver for Silent {
    fn on_event(&self, _: TrialEvent) {}
}

/// Test gallery drawn on first access; every access is reported.
struct HeldOutGallery<'a> {
    config: &'a GalleryConfig,
    seed: u64,
    trial: usize,
    observer: &'a dyn TrialObserver,
    cell: OnceLock<Result<Gallery, String>>,
}

impl HeldOutGallery<'_> {
    fn get(&self) -> Result<&Gallery> {
        self.observer.on_event(TrialEvent::TestGalleryRead { trial: self.trial });
        self.cell
            .get_or_init(|| generate_half(self.config, self.seed, Partition::Test).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Numerical(e.clone()))
    }
}

/// A finished dictionary together with where it came from.
#[derive(Debug, Clone)]
pub struct TrialDictionary {
    pub trial: usize,
    pub fmr: f64,
    pub dictionary: PrintDictionary,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub keep_dictionaries: bool,
    pub trace: bool,
}

pub struct ExperimentOutput {
    pub report: CoverageReport,
    pub dictionaries: Vec<TrialDictionary>,
    /// Trial galleries and generators, for re-evaluating kept dictionaries.
    pub artifacts: Vec<Option<TrialArtifacts>>,
}

#[derive(Debug, Clone)]
pub struct TrialArtifacts {
    pub train: Gallery,
    pub test: Gallery,
    pub generator: GeneratorParams,
    pub calibrations: Vec<FmrCalibration>,
}

fn failed_row(strategy: Strategy, fmr: f64, trial: usize, seed: u64, message: String) -> TrialRow {
    TrialRow {
        strategy,
        fmr,
        trial,
        trial_seed: seed,
        status: RowStatus::Failed,
        train_coverage: 0.0,
        test_coverage: 0.0,
        dict_size: 0,
        evaluations: 0,
        overlap: 0,
        threshold: f64::NAN,
        achieved_fmr: f64::NAN,
        impostor_pairs: 0,
        message,
    }
}

fn run_strategy(
    cfg: &ExperimentConfig,
    ctx: &SearchContext,
    strategy: Strategy,
) -> Result<PrintDictionary> {
    match strategy {
        Strategy::Random => random_dictionary(ctx, cfg.max_dict_size, ctx.seed),
        Strategy::Single => evolve_single_print(ctx, cfg.single_print_generations),
        Strategy::Diversity => evolve_diversity_dictionary(ctx, cfg.per_print_generations, cfg.max_dict_size),
        Strategy::Novelty => evolve_novelty_dictionary(ctx, cfg.per_print_generations, cfg.max_dict_size),
    }
}

fn is_non_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
}

/// Coverage of every dictionary prefix must not shrink, and tightening the
/// threshold must never add matches.
fn check_invariants(
    d: &PrintDictionary,
    generator: &dyn Generator,
    gallery: &Gallery,
    calibrations: &[FmrCalibration],
) -> Result<()> {
    let mut cals: Vec<&FmrCalibration> = calibrations.iter().collect();
    cals.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    let mut looser: Option<Vec<MatchVector>> = None;
    for cal in cals {
        let vectors = dictionary_match_vectors(d, generator, gallery, cal)?;
        let prefixes = prefix_coverages(&vectors, gallery.user_count(), cal.target_fmr)?;
        if !is_non_decreasing(&prefixes) {
            return Err(Error::Numerical("union coverage decreased along the dictionary".into()));
        }
        if let Some(prev) = &looser {
            for (tight, loose) in vectors.iter().zip(prev) {
                if !tight.is_subset_of(loose)? {
                    return Err(Error::Numerical("a stricter threshold matched an extra user".into()));
                }
            }
        }
        looser = Some(vectors);
    }
    Ok(())
}

struct TrialResult {
    rows: Vec<TrialRow>,
    dictionaries: Vec<TrialDictionary>,
    artifacts: Option<TrialArtifacts>,
}

fn run_trial(cfg: &ExperimentConfig, trial: usize, opts: &RunOptions, observer: &dyn TrialObserver) -> TrialResult {
    let seed = cfg.trial_seed(trial);
    let strategies = cfg.ordered_strategies();
    let fail_all = |msg: String| TrialResult {
        rows: cfg
            .fmr_levels
            .iter()
            .flat_map(|&f| strategies.iter().map(move |&s| (s, f)))
            .map(|(s, f)| failed_row(s, f, trial, seed, msg.clone()))
            .collect(),
        dictionaries: Vec::new(),
        artifacts: None,
    };

    let setup = (|| {
        let train = generate_half(&cfg.gallery, seed, Partition::Train)?;
        let generator = build_generator(
            cfg.gallery.feature_dim,
            cfg.latent_dim,
            rng::derive(seed, Domain::Generator, 0),
            &train,
        )?;
        let cals = cfg
            .fmr_levels
            .iter()
            .enumerate()
            .map(|(i, &f)| calibrate(&train, f, rng::derive(seed, Domain::Calibration, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>((train, generator, cals))
    })();
    let (train, generator, cals) = match setup {
        Ok(v) => v,
        Err(e) => return fail_all(e.to_string()),
    };

    // Evolve every dictionary on train data before the test gallery exists.
    let mut finished: Vec<(Strategy, usize, Result<PrintDictionary>)> = Vec::new();
    for (fi, cal) in cals.iter().enumerate() {
        for &strategy in &strategies {
            let strategy_seed = rng::derive(seed, Domain::Strategy, 16 * fi as u64 + strategy as u64);
            let mut ctx = SearchContext::new(&train, &generator, *cal, strategy_seed);
            ctx.sigma0 = cfg.sigma0;
            ctx.lambda = cfg.lambda;
            ctx.trace = opts.trace;
            let d = run_strategy(cfg, &ctx, strategy)
                .and_then(|d| check_invariants(&d, &generator, &train, &cals).map(|_| d));
            observer.on_event(TrialEvent::DictionaryFinalized { trial, strategy, fmr: cal.target_fmr });
            finished.push((strategy, fi, d));
        }
    }

    let held_out = HeldOutGallery { config: &cfg.gallery, seed, trial, observer, cell: OnceLock::new() };
    let mut rows = Vec::new();
    let mut dictionaries = Vec::new();
    for (strategy, fi, d) in finished {
        let cal = &cals[fi];
        let evaluated = d.and_then(|d| {
            let train_cov = crate::search::union_coverage(&d, &generator, &train, cal)?;
            let test = held_out.get()?;
            check_invariants(&d, &generator, test, &cals)?;
            let test_cov = crate::search::union_coverage(&d, &generator, test, cal)?;
            Ok((d, train_cov, test_cov))
        });
        match evaluated {
            Ok((d, train_coverage, test_coverage)) => {
                rows.push(TrialRow {
                    strategy,
                    fmr: cal.target_fmr,
                    trial,
                    trial_seed: seed,
                    status: RowStatus::Ok,
                    train_coverage,
                    test_coverage,
                    dict_size: d.len(),
                    evaluations: d.evaluations_used(),
                    overlap: d.entries.iter().map(|e| e.overlap).sum(),
                    threshold: cal.threshold,
                    achieved_fmr: cal.achieved_fmr,
                    impostor_pairs: cal.impostor_pair_count,
                    message: String::new(),
                });
                if opts.keep_dictionaries {
                    dictionaries.push(TrialDictionary { trial, fmr: cal.target_fmr, dictionary: d });
                }
            }
            Err(e) => rows.push(failed_row(strategy, cal.target_fmr, trial, seed, e.to_string())),
        }
    }
    let artifacts = if opts.keep_dictionaries {
        held_out.get().ok().map(|test| TrialArtifacts {
            train: train.clone(),
            test: test.clone(),
            generator: generator.clone(),
            calibrations: cals.clone(),
        })
    } else {
        None
    };
    TrialResult { rows, dictionaries, artifacts }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<CoverageReport> {
    Ok(run_experiment_with(config, &RunOptions::default(), None)?.report)
}

/// Runs every trial (in parallel on the current rayon pool) and assembles
/// the report in trial order. Component failures become failed rows.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    opts: &RunOptions,
    observer: Option<&dyn TrialObserver>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let observer = observer.unwrap_or(&Silent);
    let results: Vec<TrialResult> =
        (0..config.trials).into_par_iter().map(|t| run_trial(config, t, opts, observer)).collect();
    let mut rows = Vec::new();
    let mut dictionaries = Vec::new();
    let mut artifacts = Vec::new();
    for r in results {
        rows.extend(r.rows);
        dictionaries.extend(r.dictionaries);
        artifacts.push(r.artifacts);
    }
    // Canonical order: FMR level, strategy, trial.
    let fmr_rank = |f: f64| config.fmr_levels.iter().position(|x| *x == f).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (fmr_rank(r.fmr), r.strategy, r.trial));
    Ok(ExperimentOutput { report: CoverageReport { config: config.clone(), rows }, dictionaries, artifacts })
}
