//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use masterprint::cmaes::CmaesState;
use masterprint::eval::{run_experiment_with, ExperimentConfig, ExperimentOutput, RowStatus, RunOptions, Split};
use masterprint::matcher::{calibrate, impostor_scores, pass_rate, score, MatchVector};
use masterprint::population::{generate_half, GalleryConfig, Partition};
use masterprint::search::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORDERING_MARGIN: f64 = 0.05;
const FMR_1_REL_TOL: f64 = 0.20;
const FMR_01_REL_TOL: f64 = 0.50;
const MIN_FRESH_PAIRS: usize = 100_000;
const FRESH_PAIRS: usize = 200_000;
const ORACLE_INSTANCES: usize = 1000;
const SPHERE_DIM: usize = 10;
const SPHERE_TARGET: f64 = -1e-10;
const SPHERE_MAX_EVALS: usize = 20_000;
const SPHERE_SEEDS: u64 = 10;

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// The default configuration restricted to FMR 1%.
fn criterion_one_config() -> ExperimentConfig {
    ExperimentConfig { fmr_levels: vec![0.01], ..Default::default() }
}

fn run_reference() -> ExperimentOutput {
    let opts = RunOptions { keep_dictionaries: true, trace: false };
    run_experiment_with(&criterion_one_config(), &opts, None).expect("reference run")
}

fn means(out: &ExperimentOutput, split: Split) -> [f64; 4] {
    Strategy::ALL.map(|s| out.report.mean(0.01, split, s).unwrap_or(f64::NAN))
}

fn ordering(out: &ExperimentOutput) -> Outcome {
    let [r, s, d, n] = means(out, Split::Train);
    let pass = r + ORDERING_MARGIN <= s && s + ORDERING_MARGIN <= d && s + ORDERING_MARGIN <= n;
    outcome(pass, format!("train means R {r:.4} D {s:.4} I {d:.4} N {n:.4}, margin {ORDERING_MARGIN}"))
}

fn generalization(out: &ExperimentOutput) -> Outcome {
    let [_, s, d, n] = means(out, Split::Test);
    let pass = s + ORDERING_MARGIN <= d && s + ORDERING_MARGIN <= n;
    outcome(pass, format!("test means D {s:.4} I {d:.4} N {n:.4}, margin {ORDERING_MARGIN}"))
}

/// Impostor scores of independent pairs: every pair is two users drawn fresh
/// from the trial's population, one impression each.
fn independent_impostor_scores(cfg: &ExperimentConfig, seed: u64) -> Vec<f64> {
    let population = GalleryConfig { user_count: 4 * FRESH_PAIRS, impressions_per_user: 1, ..cfg.gallery.clone() };
    let fresh = generate_half(&population, seed, Partition::Test).unwrap();
    fresh.users.chunks(2).map(|p| score(&p[0].impressions[0], &p[1].impressions[0]).unwrap()).collect()
}

fn calibration() -> Outcome {
    let cfg = criterion_one_config();
    let mut worst = [0.0f64; 2];
    let mut worst_gallery = [0.0f64; 2];
    let mut fewest_pairs = usize::MAX;
    for trial in 0..cfg.trials {
        let seed = cfg.trial_seed(trial);
        let train = generate_half(&cfg.gallery, seed, Partition::Train).unwrap();
        let test = generate_half(&cfg.gallery, seed, Partition::Test).unwrap();
        let fresh = independent_impostor_scores(&cfg, seed);
        let gallery_pairs = impostor_scores(&test, 1_000_000, seed);
        fewest_pairs = fewest_pairs.min(fresh.len());
        for (slot, target) in [0.01, 0.001].into_iter().enumerate() {
            let cal = calibrate(&train, target, seed).unwrap();
            worst[slot] = worst[slot].max((pass_rate(&fresh, &cal) - target).abs() / target);
            worst_gallery[slot] = worst_gallery[slot].max((pass_rate(&gallery_pairs, &cal) - target).abs() / target);
        }
    }
    let pass = fewest_pairs >= MIN_FRESH_PAIRS && worst[0] <= FMR_1_REL_TOL && worst[1] <= FMR_01_REL_TOL;
    outcome(
        pass,
        format!(
            "worst relative error {:.3} at 1% (tol {FMR_1_REL_TOL}), {:.3} at 0.1% (tol {FMR_01_REL_TOL}) over {fewest_pairs} independent pairs; \
             on the {}-user test gallery {:.3} and {:.3}",
            worst[0], worst[1], cfg.gallery.user_count / 2, worst_gallery[0], worst_gallery[1]
        ),
    )
}

fn random_bits(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    (0..len).map(|_| rng.random()).collect()
}

fn entry(bits: &[bool]) -> DictionaryEntry {
    DictionaryEntry {
        genome: vec![],
        match_train: MatchVector::from_bools(bits, 0.01),
        fitness: 0.0,
        strategy: Strategy::Novelty,
        generation_budget: 0,
        optimizer_seed: 0,
        evaluations: 0,
        best_generation: 0,
        overlap: 0,
        trace: vec![],
    }
}

fn novelty_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut empty_cases = 0;
    for _ in 0..ORACLE_INSTANCES {
        let users = rng.random_range(1..=8);
        let entries = rng.random_range(0..=4);
        let x = random_bits(&mut rng, users);
        let dict_bits: Vec<Vec<bool>> = (0..entries).map(|_| random_bits(&mut rng, users)).collect();
        let mut d = PrintDictionary::new(Strategy::Novelty, 0.01, 4, 0);
        d.entries.extend(dict_bits.iter().map(|b| entry(b)));

        let popcount = x.iter().filter(|b| **b).count();
        let expected = if popcount < NOVELTY_MIN_MATCHES {
            0
        } else if dict_bits.is_empty() {
            empty_cases += 1;
            popcount
        } else {
            let mut best = usize::MAX;
            for s in &dict_bits {
                let mut dist = 0;
                for i in 0..users {
                    if s[i] != x[i] {
                        dist += 1;
                    }
                }
                best = best.min(dist);
            }
            best
        };
        if novelty_score(&MatchVector::from_bools(&x, 0.01), &d).unwrap() != expected as f64 {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in {ORACLE_INSTANCES} instances ({empty_cases} with empty dictionary)"))
}

fn diversity_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..ORACLE_INSTANCES {
        let users = rng.random_range(1..=64);
        let x = random_bits(&mut rng, users);
        let mut unseen = random_bits(&mut rng, users);
        if !unseen.contains(&true) {
            unseen[rng.random_range(0..users)] = true;
        }
        let ids: Vec<usize> = (0..users).filter(|&i| unseen[i]).collect();
        let state = DiversityState::from_unseen(users, &ids, 0.01).unwrap();
        let mut u = 0;
        let mut pool = 0;
        for i in 0..users {
            if unseen[i] {
                pool += 1;
                if x[i] {
                    u += 1;
                }
            }
        }
        if diversity_fitness(&MatchVector::from_bools(&x, 0.01), &state).unwrap() != u as f64 / pool as f64 {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in {ORACLE_INSTANCES} instances"))
}

fn is_spd(es: &CmaesState) -> bool {
    let c = es.covariance();
    let scale = c.amax();
    let symmetric = (c - c.transpose()).amax() <= 1e-12 * scale;
    symmetric && c.clone().cholesky().is_some()
}

fn sphere_run(seed: u64) -> (f64, usize, bool) {
    let mut es = CmaesState::new(&[3.0; SPHERE_DIM], 1.0, None, seed).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut evals = 0;
    let mut spd = is_spd(&es);
    while evals < SPHERE_MAX_EVALS && best < SPHERE_TARGET {
        let xs = es.ask().unwrap();
        let fs: Vec<f64> = xs.iter().map(|x| -x.iter().map(|v| v * v).sum::<f64>()).collect();
        evals += xs.len();
        best = fs.iter().copied().fold(best, f64::max);
        es.tell(&xs, &fs).unwrap();
        spd &= is_spd(&es);
    }
    (best, evals, spd)
}

fn cmaes_sphere() -> Outcome {
    let runs: Vec<(f64, usize, bool)> = (0..SPHERE_SEEDS).map(sphere_run).collect();
    let solved = runs.iter().filter(|(b, e, _)| *b >= SPHERE_TARGET && *e <= SPHERE_MAX_EVALS).count();
    let spd = runs.iter().all(|r| r.2);
    let worst_evals = runs.iter().map(|r| r.1).max().unwrap();
    outcome(
        solved as u64 == SPHERE_SEEDS && spd,
        format!("{solved}/{SPHERE_SEEDS} seeds reached {SPHERE_TARGET:e}, at most {worst_evals} evaluations, covariance SPD throughout: {spd}"),
    )
}

fn invariants(out: &ExperimentOutput) -> Outcome {
    let failed = out.report.rows.iter().filter(|r| r.status == RowStatus::Failed).count();
    let mut violations = 0;
    let mut checked = 0;
    for td in &out.dictionaries {
        let art = out.artifacts[td.trial].as_ref().unwrap();
        let base = &art.calibrations[0];
        let stricter = [calibrate(&art.train, 0.001, 1).unwrap(), calibrate(&art.train, 0.0001, 1).unwrap()];
        for gallery in [&art.train, &art.test] {
            let mut looser: Option<Vec<MatchVector>> = None;
            for cal in std::iter::once(base).chain(stricter.iter()) {
                let vs = dictionary_match_vectors(&td.dictionary, &art.generator, gallery, cal).unwrap();
                let prefix = prefix_coverages(&vs, gallery.user_count(), cal.target_fmr).unwrap();
                if prefix.windows(2).any(|w| w[0] > w[1]) {
                    violations += 1;
                }
                if let Some(prev) = &looser {
                    violations += vs.iter().zip(prev).filter(|(t, l)| !t.is_subset_of(l).unwrap()).count();
                }
                looser = Some(vs);
            }
        }
        checked += 1;
    }
    outcome(
        failed == 0 && violations == 0 && checked == out.report.rows.len(),
        format!("{checked} dictionaries rechecked, {violations} violations, {failed} failed rows"),
    )
}

fn determinism(first: &ExperimentOutput) -> Outcome {
    let a = first.report.to_csv().unwrap();
    let b = run_reference().report.to_csv().unwrap();
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let reference = run_reference();
    eprintln!("reference run finished in {:.1}s", start.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Check)> = vec![
        ("1 strategy ordering at FMR 1% (train)", Box::new(|| ordering(&reference))),
        ("2 generalization at FMR 1% (test)", Box::new(|| generalization(&reference))),
        ("3 held-out FMR calibration", Box::new(calibration)),
        ("4 novelty score oracle", Box::new(novelty_oracle)),
        ("5 diversity fitness oracle", Box::new(diversity_oracle)),
        ("6 CMA-ES sphere convergence", Box::new(cmaes_sphere)),
        ("7 union and threshold monotonicity", Box::new(|| invariants(&reference))),
        ("8 byte-identical reports", Box::new(|| determinism(&reference))),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
