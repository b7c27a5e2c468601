//! Attack strategies and the dictionaries they build.
//!
//! * [`random_dictionary`]: unevolved genomes, the baseline.
//! * [`evolve_single_print`]: one print maximizing total train coverage.
//! * [`evolve_diversity_dictionary`]: sequential searches, each scored on the
//!   users no earlier print has matched (`u_i / U`).
//! * [`evolve_novelty_dictionary`]: sequential searches scored by the minimum
//!   Hamming distance between the candidate's match vector and the
//!   dictionary so far.
//!
//! Every evolved print is the best candidate seen over its whole run, found by
//! a freshly initialized CMA-ES.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmaes::{CmaesState, TraceRow};
use crate::error::{usage, Error, Result};
use crate::generator::Generator;
use crate::matcher::{match_vector, FmrCalibration, MatchVector};
use crate::population::Gallery;
use crate::rng::{self, Domain};

/// Minimal criterion: candidates matching fewer users score zero novelty.
pub const NOVELTY_MIN_MATCHES: usize = 1;
pub const DEFAULT_SIGMA0: f64 = 0.5;
pub const DEFAULT_MAX_DICT_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Single,
    Diversity,
    Novelty,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Random, Strategy::Single, Strategy::Diversity, Strategy::Novelty];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Single => "single",
            Strategy::Diversity => "diversity",
            Strategy::Novelty => "novelty",
        }
    }

    /// Column letter in the rendered table.
    pub fn letter(self) -> char {
        match self {
            Strategy::Random => 'R',
            Strategy::Single => 'D',
            Strategy::Diversity => 'I',
            Strategy::Novelty => 'N',
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown strategy {s:?}")))
    }
}

/// Everything a strategy needs: the train gallery, the generator, the
/// calibrated matcher and the optimizer settings.
pub struct SearchContext<'a> {
    pub train: &'a Gallery,
    pub generator: &'a dyn Generator,
    pub calibration: FmrCalibration,
    pub sigma0: f64,
    pub lambda: Option<usize>,
    pub seed: u64,
    pub trace: bool,
}

impl<'a> SearchContext<'a> {
    pub fn new(train: &'a Gallery, generator: &'a dyn Generator, calibration: FmrCalibration, seed: u64) -> Self {
        SearchContext { train, generator, calibration, sigma0: DEFAULT_SIGMA0, lambda: None, seed, trace: false }
    }

    /// Match vector of the print generated from `z`. A degenerate (zero)
    /// generator output matches nobody.
    pub fn evaluate(&self, z: &[f64]) -> Result<MatchVector> {
        match self.generator.generate(z) {
            Ok(t) => match_vector(&t, self.train, &self.calibration),
            Err(Error::DegenerateOutput) => Ok(MatchVector::zeros(self.train.user_count(), self.calibration.target_fmr)),
            Err(e) => Err(e),
        }
    }

    fn fmr(&self) -> f64 {
        self.calibration.target_fmr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub genome: Vec<f64>,
    pub match_train: MatchVector,
    pub fitness: f64,
    pub strategy: Strategy,
    pub generation_budget: usize,
    pub optimizer_seed: u64,
    pub evaluations: usize,
    /// Generation at which the kept candidate was sampled.
    pub best_generation: usize,
    /// Matched users already covered by earlier entries.
    pub overlap: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrintDictionary {
    pub strategy: Strategy,
    pub fmr: f64,
    pub max_size: usize,
    pub seed: u64,
    pub entries: Vec<DictionaryEntry>,
}

impl PrintDictionary {
    pub fn new(strategy: Strategy, fmr: f64, max_size: usize, seed: u64) -> Self {
        PrintDictionary { strategy, fmr, max_size, seed, entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evaluations_used(&self) -> usize {
        self.entries.iter().map(|e| e.evaluations).sum()
    }

    /// Union of the stored train match vectors.
    pub fn covered_train(&self, users: usize) -> MatchVector {
        let mut acc = MatchVector::zeros(users, self.fmr);
        for e in &self.entries {
            acc.union_with(&e.match_train).expect("dictionary vectors share a length");
        }
        acc
    }

    fn push(&mut self, mut entry: DictionaryEntry) -> Result<()> {
        if self.entries.len() >= self.max_size {
            return usage(format!("dictionary is full ({} entries)", self.max_size));
        }
        if let Some(first) = self.entries.first() {
            if first.match_train.len() != entry.match_train.len() {
                return usage("match vector length differs from the dictionary's");
            }
        }
        entry.overlap = self.covered_train(entry.match_train.len()).intersection_count(&entry.match_train)?;
        self.entries.push(entry);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() > self.max_size {
            return Err(Error::Malformed(format!("{} entries exceed max size {}", self.entries.len(), self.max_size)));
        }
        let len = self.entries.first().map(|e| e.match_train.len());
        for e in &self.entries {
            if Some(e.match_train.len()) != len || e.match_train.fmr() != self.fmr {
                return Err(Error::Malformed("dictionary match vectors disagree in length or FMR".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: PrintDictionary = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }
}

/// Users of the train gallery no earlier print has matched.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityState {
    unseen: MatchVector,
    total_users: usize,
}

impl DiversityState {
    pub fn new(total_users: usize, fmr: f64) -> Self {
        let mut unseen = MatchVector::zeros(total_users, fmr);
        (0..total_users).for_each(|i| unseen.set(i, true));
        DiversityState { unseen, total_users }
    }

    pub fn from_unseen(total_users: usize, unseen_ids: &[usize], fmr: f64) -> Result<Self> {
        let mut unseen = MatchVector::zeros(total_users, fmr);
        for &id in unseen_ids {
            if id >= total_users {
                return usage(format!("user id {id} outside gallery of {total_users}"));
            }
            unseen.set(id, true);
        }
        Ok(DiversityState { unseen, total_users })
    }

    pub fn remaining(&self) -> usize {
        self.unseen.count_ones()
    }

    pub fn total_users(&self) -> usize {
        self.total_users
    }

    pub fn unseen_ids(&self) -> Vec<usize> {
        self.unseen.ones().collect()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == 0
    }

    /// Removes every user `matched` covers from the pool.
    pub fn remove_matched(&mut self, matched: &MatchVector) -> Result<()> {
        self.unseen.difference_with(matched)
    }
}

/// `u_i / U`: the fraction of the unseen pool the candidate matches.
pub fn diversity_fitness(x: &MatchVector, state: &DiversityState) -> Result<f64> {
    let pool = state.remaining();
    if pool == 0 {
        return Err(Error::PoolExhausted);
    }
    Ok(x.intersection_count(&state.unseen)? as f64 / pool as f64)
}

/// Distance from `x` to the nearest dictionary vector, or to the zero vector
/// when the dictionary is empty. Zero below the minimal criterion.
pub fn novelty_score(x: &MatchVector, d: &PrintDictionary) -> Result<f64> {
    let mut nearest = if d.is_empty() { x.count_ones() } else { usize::MAX };
    for e in &d.entries {
        nearest = nearest.min(x.hamming(&e.match_train)?);
    }
    if x.count_ones() < NOVELTY_MIN_MATCHES {
        return Ok(0.0);
    }
    Ok(nearest as f64)
}

struct Evolved {
    genome: Vec<f64>,
    matched: MatchVector,
    fitness: f64,
    evaluations: usize,
    best_generation: usize,
    seed: u64,
    trace: Vec<TraceRow>,
}

/// Runs one CMA-ES search. `objective` maps a match vector to
/// `(rank_key, reported_fitness)`; the optimizer and best-ever selection use
/// the key, earlier candidates win ties. `generations = 0` evaluates only the
/// initial batch. Stops early once the key reaches `ceiling`.
fn evolve(
    ctx: &SearchContext,
    generations: usize,
    print_index: usize,
    ceiling: Option<f64>,
    mut objective: impl FnMut(&MatchVector) -> Result<(f64, f64)>,
) -> Result<Evolved> {
    let seed = rng::derive(ctx.seed, Domain::Print, print_index as u64);
    let n = ctx.generator.latent_dim();
    let mut es = CmaesState::new(&vec![0.0; n], ctx.sigma0, ctx.lambda, seed)?;
    let mut best: Option<(f64, Evolved)> = None;
    let mut evaluations = 0;
    let mut trace = Vec::new();
    for generation in 0..generations.max(1) {
        let candidates = es.ask()?;
        let mut keys = Vec::with_capacity(candidates.len());
        for z in &candidates {
            let matched = ctx.evaluate(z)?;
            let (key, fitness) = objective(&matched)?;
            evaluations += 1;
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                let genome = z.clone();
                best = Some((
                    key,
                    Evolved { genome, matched, fitness, evaluations: 0, best_generation: generation, seed, trace: Vec::new() },
                ));
            }
            keys.push(key);
        }
        es.tell(&candidates, &keys)?;
        if ctx.trace {
            trace.push(es.trace_row(keys.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
        }
        if let (Some(c), Some((k, _))) = (ceiling, &best) {
            if *k >= c {
                break;
            }
        }
    }
    let (_, mut out) = best.expect("at least one batch is evaluated");
    out.evaluations = evaluations;
    out.trace = trace;
    Ok(out)
}

fn entry(e: Evolved, strategy: Strategy, budget: usize) -> DictionaryEntry {
    DictionaryEntry {
        genome: e.genome,
        match_train: e.matched,
        fitness: e.fitness,
        strategy,
        generation_budget: budget,
        optimizer_seed: e.seed,
        evaluations: e.evaluations,
        best_generation: e.best_generation,
        overlap: 0,
        trace: e.trace,
    }
}

/// One print maximizing the fraction of all train users matched.
pub fn evolve_single_print(ctx: &SearchContext, generations: usize) -> Result<PrintDictionary> {
    let users = ctx.train.user_count() as f64;
    let e = evolve(ctx, generations, 0, Some(1.0), |x| {
        let f = x.count_ones() as f64 / users;
        Ok((f, f))
    })?;
    let mut d = PrintDictionary::new(Strategy::Single, ctx.fmr(), 1, ctx.seed);
    d.push(entry(e, Strategy::Single, generations))?;
    Ok(d)
}

/// Sequential prints, each maximizing coverage of the users still unmatched.
/// Stops when the pool is empty or the dictionary is full.
pub fn evolve_diversity_dictionary(ctx: &SearchContext, per_print_generations: usize, max_size: usize) -> Result<PrintDictionary> {
    let mut d = PrintDictionary::new(Strategy::Diversity, ctx.fmr(), max_size, ctx.seed);
    let mut pool = DiversityState::new(ctx.train.user_count(), ctx.fmr());
    for i in 0..max_size {
        if pool.is_exhausted() {
            break;
        }
        let e = evolve(ctx, per_print_generations, i, Some(1.0), |x| {
            let f = diversity_fitness(x, &pool)?;
            Ok((f, f))
        })?;
        pool.remove_matched(&e.matched)?;
        d.push(entry(e, Strategy::Diversity, per_print_generations))?;
    }
    Ok(d)
}

/// Sequential prints, each maximizing novelty against the dictionary so far.
/// Ties in novelty go to the candidate matching more users.
pub fn evolve_novelty_dictionary(ctx: &SearchContext, per_print_generations: usize, max_size: usize) -> Result<PrintDictionary> {
    let mut d = PrintDictionary::new(Strategy::Novelty, ctx.fmr(), max_size, ctx.seed);
    let tie_scale = 1.0 / (ctx.train.user_count() as f64 + 1.0);
    for i in 0..max_size {
        let e = evolve(ctx, per_print_generations, i, None, |x| {
            let novelty = novelty_score(x, &d)?;
            Ok((novelty + x.count_ones() as f64 * tie_scale, novelty))
        })?;
        d.push(entry(e, Strategy::Novelty, per_print_generations))?;
    }
    Ok(d)
}

/// `size` unevolved prints with standard normal genomes.
pub fn random_dictionary(ctx: &SearchContext, size: usize, seed: u64) -> Result<PrintDictionary> {
    if size == 0 {
        return usage("random dictionary size must be at least 1");
    }
    let mut rng = rng::stream(seed, Domain::RandomGenomes, 0);
    let n = ctx.generator.latent_dim();
    let users = ctx.train.user_count() as f64;
    let mut d = PrintDictionary::new(Strategy::Random, ctx.fmr(), size, seed);
    for _ in 0..size {
        let genome: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let matched = ctx.evaluate(&genome)?;
        let fitness = matched.count_ones() as f64 / users;
        d.push(DictionaryEntry {
            genome,
            match_train: matched,
            fitness,
            strategy: Strategy::Random,
            generation_budget: 0,
            optimizer_seed: seed,
            evaluations: 1,
            best_generation: 0,
            overlap: 0,
            trace: Vec::new(),
        })?;
    }
    Ok(d)
}

/// Match vectors of every entry recomputed against `gallery`.
pub fn dictionary_match_vectors(
    d: &PrintDictionary,
    generator: &dyn Generator,
    gallery: &Gallery,
    cal: &FmrCalibration,
) -> Result<Vec<MatchVector>> {
    d.entries
        .iter()
        .map(|e| match generator.generate(&e.genome) {
            Ok(t) => match_vector(&t, gallery, cal),
            Err(Error::DegenerateOutput) => Ok(MatchVector::zeros(gallery.user_count(), cal.target_fmr)),
            Err(err) => Err(err),
        })
        .collect()
}

/// Coverage of each prefix of the dictionary: element `j` is the fraction of
/// users matched by at least one of the first `j + 1` entries.
pub fn prefix_coverages(vectors: &[MatchVector], users: usize, fmr: f64) -> Result<Vec<f64>> {
    let mut acc = MatchVector::zeros(users, fmr);
    vectors
        .iter()
        .map(|v| {
            acc.union_with(v)?;
            Ok(acc.count_ones() as f64 / users as f64)
        })
        .collect()
}

/// Fraction of `gallery` users matched by at least one dictionary print.
pub fn union_coverage(d: &PrintDictionary, generator: &dyn Generator, gallery: &Gallery, cal: &FmrCalibration) -> Result<f64> {
    let vectors = dictionary_match_vectors(d, generator, gallery, cal)?;
    Ok(prefix_coverages(&vectors, gallery.user_count(), cal.target_fmr)?.last().copied().unwrap_or(0.0))
}
