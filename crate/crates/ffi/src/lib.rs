//! C ABI over the `masterprint` library.
//!
//! Every fallible call returns an [`MpStatus`]; on anything other than
//! `MP_STATUS_OK` a description is available from [`mp_last_error`] on the
//! same thread. Objects are handed out as opaque pointers and released with
//! their `*_free` function. Strings returned through `char **` out-parameters
//! belong to the caller and must be released with [`mp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use masterprint::cmaes::CmaesState;
use masterprint::eval::{run_experiment, ExperimentConfig};
use masterprint::generator::{build_generator, Generator, GeneratorParams};
use masterprint::matcher::{calibrate, match_vector, FmrCalibration, MatchVector};
use masterprint::population::{split_train_test, Gallery, GalleryConfig};
use masterprint::search::{diversity_fitness, novelty_score, DictionaryEntry, DiversityState, PrintDictionary, Strategy};
use masterprint::template::Template;
use masterprint::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    PoolExhausted = 4,
    Io = 5,
    Panic = 6,
}

impl From<&Error> for MpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Numerical(_) | Error::DegenerateOutput | Error::Calibration(_) => MpStatus::Numerical,
            Error::PoolExhausted => MpStatus::PoolExhausted,
            Error::Io(_) => MpStatus::Io,
            _ => MpStatus::InvalidArgument,
        }
    }
}

/// Threshold of a calibrated matcher, passed by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpCalibration {
    pub target_fmr: f64,
    pub threshold: f64,
    pub impostor_pair_count: u64,
    pub achieved_fmr: f64,
}

impl From<&FmrCalibration> for MpCalibration {
    fn from(c: &FmrCalibration) -> Self {
        MpCalibration {
            target_fmr: c.target_fmr,
            threshold: c.threshold,
            impostor_pair_count: c.impostor_pair_count as u64,
            achieved_fmr: c.achieved_fmr,
        }
    }
}

impl From<&MpCalibration> for FmrCalibration {
    fn from(c: &MpCalibration) -> Self {
        FmrCalibration {
            target_fmr: c.target_fmr,
            threshold: c.threshold,
            impostor_pair_count: c.impostor_pair_count as usize,
            achieved_fmr: c.achieved_fmr,
        }
    }
}

pub struct MpGallery(Gallery);

pub struct MpGenerator(GeneratorParams);

pub struct MpCmaes(CmaesState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MpStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn fail<T>(status: MpStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any error or panic and converts it to a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            MpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().map_or_else(|| fail(MpStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().map_or_else(|| fail(MpStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MpStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(MpStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(MpStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(MpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn json_arg<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> FfiResult<T> {
    serde_json::from_str(s).map_err(|e| Failure(MpStatus::InvalidArgument, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let slot = deref_mut(out, "output pointer")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let slot = deref_mut(out, "output pointer")?;
    let c = CString::new(s).map_err(|_| Failure(MpStatus::InvalidArgument, "string contains NUL".into()))?;
    *slot = c.into_raw();
    Ok(())
}

fn check_len(got: usize, want: usize, what: &str) -> FfiResult<()> {
    if got != want {
        return fail(MpStatus::InvalidArgument, format!("{what} has length {got}, expected {want}"));
    }
    Ok(())
}

fn bits(raw: &[u8]) -> MatchVector {
    let b: Vec<bool> = raw.iter().map(|&v| v != 0).collect();
    MatchVector::from_bools(&b, 0.0)
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates disjoint train and test galleries. `config_json` is a gallery
/// configuration object; missing fields take their defaults.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `train` and `test` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_split(
    config_json: *const c_char,
    seed: u64,
    train: *mut *mut MpGallery,
    test: *mut *mut MpGallery,
) -> MpStatus {
    guard(|| {
        let cfg: GalleryConfig = json_arg(text(config_json, "config_json")?, "gallery config")?;
        deref_mut(train, "train")?;
        deref_mut(test, "test")?;
        let (a, b) = split_train_test(&cfg, seed)?;
        put(train, MpGallery(a))?;
        put(test, MpGallery(b))
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_from_json(json: *const c_char, out: *mut *mut MpGallery) -> MpStatus {
    guard(|| {
        let g = Gallery::from_json(text(json, "json")?)?;
        put(out, MpGallery(g))
    })
}

/// # Safety
/// `gallery` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_to_json(gallery: *const MpGallery, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let json = deref(gallery, "gallery")?.0.to_json()?;
        put_string(out, json)
    })
}

/// Number of users, or 0 for a NULL handle.
///
/// # Safety
/// `gallery` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_user_count(gallery: *const MpGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.0.user_count())
}

/// Feature dimension, or 0 for a NULL handle.
///
/// # Safety
/// `gallery` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_feature_dim(gallery: *const MpGallery) -> usize {
    gallery.as_ref().map_or(0, |g| g.0.feature_dim)
}

/// # Safety
/// `gallery` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_gallery_free(gallery: *mut MpGallery) {
    if !gallery.is_null() {
        drop(Box::from_raw(gallery));
    }
}

/// Builds a generator from latent dimension `latent_dim` into the gallery's
/// feature space, seeded with the gallery's cluster centers.
///
/// # Safety
/// `gallery` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_generator_build(
    gallery: *const MpGallery,
    latent_dim: usize,
    seed: u64,
    out: *mut *mut MpGenerator,
) -> MpStatus {
    guard(|| {
        let g = &deref(gallery, "gallery")?.0;
        let params = build_generator(g.feature_dim, latent_dim, seed, g)?;
        put(out, MpGenerator(params))
    })
}

/// # Safety
/// `generator` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_generator_latent_dim(generator: *const MpGenerator) -> usize {
    generator.as_ref().map_or(0, |g| g.0.latent_dim())
}

/// Maps a genome of `latent_len` values to a unit template of `out_len`
/// values.
///
/// # Safety
/// `genome` must hold `latent_len` doubles and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mp_generator_generate(
    generator: *const MpGenerator,
    genome: *const f64,
    latent_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MpStatus {
    guard(|| {
        let g = &deref(generator, "generator")?.0;
        let z = input(genome, latent_len, "genome")?;
        check_len(latent_len, g.latent_dim(), "genome")?;
        check_len(out_len, g.feature_dim(), "output")?;
        let t = g.generate(z)?;
        output(out, out_len, "output")?.copy_from_slice(t.as_slice());
        Ok(())
    })
}

/// # Safety
/// `generator` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_generator_free(generator: *mut MpGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Calibrates the threshold realizing `target_fmr` on the gallery's impostor
/// pairs.
///
/// # Safety
/// `gallery` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_calibrate(
    gallery: *const MpGallery,
    target_fmr: f64,
    seed: u64,
    out: *mut MpCalibration,
) -> MpStatus {
    guard(|| {
        let cal = calibrate(&deref(gallery, "gallery")?.0, target_fmr, seed)?;
        *deref_mut(out, "out")? = MpCalibration::from(&cal);
        Ok(())
    })
}

/// Writes one byte per user: 1 when the template matches that user.
///
/// # Safety
/// `template` must hold `dim` doubles and `out` room for `users` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_match_vector(
    template: *const f64,
    dim: usize,
    gallery: *const MpGallery,
    calibration: *const MpCalibration,
    out: *mut u8,
    users: usize,
) -> MpStatus {
    guard(|| {
        let g = &deref(gallery, "gallery")?.0;
        let cal = FmrCalibration::from(deref(calibration, "calibration")?);
        check_len(dim, g.feature_dim, "template")?;
        check_len(users, g.user_count(), "output")?;
        let t = Template::normalized(input(template, dim, "template")?.to_vec())?;
        let v = match_vector(&t, g, &cal)?;
        for (i, slot) in output(out, users, "output")?.iter_mut().enumerate() {
            *slot = u8::from(v.get(i));
        }
        Ok(())
    })
}

/// Novelty of `x` against `entries` stored match vectors laid out row-major in
/// `dictionary` (`entries * users` bytes, nonzero meaning matched).
///
/// # Safety
/// `x` must hold `users` bytes and `dictionary` `entries * users` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_novelty_score(
    x: *const u8,
    users: usize,
    dictionary: *const u8,
    entries: usize,
    out: *mut f64,
) -> MpStatus {
    guard(|| {
        let xv = bits(input(x, users, "x")?);
        let total = entries
            .checked_mul(users)
            .ok_or_else(|| Failure(MpStatus::InvalidArgument, "dictionary size overflows".into()))?;
        let raw = input(dictionary, total, "dictionary")?;
        let mut d = PrintDictionary::new(Strategy::Novelty, 0.0, entries, 0);
        for row in raw.chunks(users.max(1)).take(entries) {
            d.entries.push(DictionaryEntry {
                genome: Vec::new(),
                match_train: bits(row),
                fitness: 0.0,
                strategy: Strategy::Novelty,
                generation_budget: 0,
                optimizer_seed: 0,
                evaluations: 0,
                best_generation: 0,
                overlap: 0,
                trace: Vec::new(),
            });
        }
        *deref_mut(out, "out")? = novelty_score(&xv, &d)?;
        Ok(())
    })
}

/// Fraction of the unseen users that `x` matches. Returns
/// `MP_STATUS_POOL_EXHAUSTED` when no user is unseen.
///
/// # Safety
/// `x` and `unseen` must each hold `users` bytes.
#[no_mangle]
pub unsafe extern "C" fn mp_diversity_fitness(x: *const u8, unseen: *const u8, users: usize, out: *mut f64) -> MpStatus {
    guard(|| {
        let xv = bits(input(x, users, "x")?);
        let ids: Vec<usize> = input(unseen, users, "unseen")?.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| i).collect();
        let state = DiversityState::from_unseen(users, &ids, 0.0)?;
        *deref_mut(out, "out")? = diversity_fitness(&xv, &state)?;
        Ok(())
    })
}

/// Creates an optimizer at `mean0` (`dim` values). `lambda = 0` selects the
/// default population size.
///
/// # Safety
/// `mean0` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_new(
    mean0: *const f64,
    dim: usize,
    sigma0: f64,
    lambda: usize,
    seed: u64,
    out: *mut *mut MpCmaes,
) -> MpStatus {
    guard(|| {
        let m = input(mean0, dim, "mean0")?;
        let es = CmaesState::new(m, sigma0, (lambda > 0).then_some(lambda), seed)?;
        put(out, MpCmaes(es))
    })
}

/// # Safety
/// `es` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_lambda(es: *const MpCmaes) -> usize {
    es.as_ref().map_or(0, |e| e.0.lambda())
}

/// # Safety
/// `es` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_dim(es: *const MpCmaes) -> usize {
    es.as_ref().map_or(0, |e| e.0.dim())
}

/// Current step size, or NaN for a NULL handle.
///
/// # Safety
/// `es` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_sigma(es: *const MpCmaes) -> f64 {
    es.as_ref().map_or(f64::NAN, |e| e.0.sigma())
}

/// Copies the current mean into `out` (`len` must equal the dimension).
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_mean(es: *const MpCmaes, out: *mut f64, len: usize) -> MpStatus {
    guard(|| {
        let e = &deref(es, "es")?.0;
        check_len(len, e.dim(), "output")?;
        output(out, len, "output")?.copy_from_slice(e.mean());
        Ok(())
    })
}

/// Samples a generation into `out`, row-major `lambda * dim`.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_ask(es: *mut MpCmaes, out: *mut f64, len: usize) -> MpStatus {
    guard(|| {
        let e = &mut deref_mut(es, "es")?.0;
        check_len(len, e.lambda() * e.dim(), "output")?;
        let xs = e.ask()?;
        for (row, x) in output(out, len, "output")?.chunks_mut(e.dim()).zip(&xs) {
            row.copy_from_slice(x);
        }
        Ok(())
    })
}

/// Updates the optimizer with `lambda` candidates (row-major, as written by
/// [`mp_cmaes_ask`]) and their fitnesses; larger is better.
///
/// # Safety
/// `candidates` must hold `lambda * dim` doubles and `fitness` `lambda`.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_tell(es: *mut MpCmaes, candidates: *const f64, fitness: *const f64, lambda: usize) -> MpStatus {
    guard(|| {
        let e = &mut deref_mut(es, "es")?.0;
        check_len(lambda, e.lambda(), "population")?;
        let n = e.dim();
        let xs: Vec<Vec<f64>> = input(candidates, lambda * n, "candidates")?.chunks(n).map(<[f64]>::to_vec).collect();
        let fs = input(fitness, lambda, "fitness")?;
        e.tell(&xs, fs)?;
        Ok(())
    })
}

/// # Safety
/// `es` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mp_cmaes_free(es: *mut MpCmaes) {
    if !es.is_null() {
        drop(Box::from_raw(es));
    }
}

/// Runs the experiment described by `config_json` (missing fields take their
/// defaults) and returns the coverage report CSV through `out_csv`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_run_experiment(config_json: *const c_char, out_csv: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let cfg: ExperimentConfig = json_arg(text(config_json, "config_json")?, "experiment config")?;
        deref_mut(out_csv, "out_csv")?;
        let report = run_experiment(&cfg)?;
        put_string(out_csv, report.to_csv()?)
    })
}
