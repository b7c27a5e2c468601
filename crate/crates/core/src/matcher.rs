//! Similarity matcher with empirical FMR calibration.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::population::{Gallery, UserRecord};
use crate::rng::{self, Domain};
use crate::template::{dot, Template};

/// Calibrations on fewer impostor pairs than this are refused.
pub const MIN_IMPOSTOR_PAIRS: usize = 1000;
/// Cap on impostor pairs; larger sets are subsampled with the seed.
pub const MAX_IMPOSTOR_PAIRS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FmrCalibration {
    pub target_fmr: f64,
    pub threshold: f64,
    pub impostor_pair_count: usize,
    pub achieved_fmr: f64,
}

impl FmrCalibration {
    /// A calibration with a fixed threshold, for tests and degenerate runs.
    pub fn with_threshold(threshold: f64) -> Self {
        FmrCalibration { target_fmr: 1.0, threshold, impostor_pair_count: 0, achieved_fmr: f64::NAN }
    }
}

pub fn score(a: &Template, b: &Template) -> Result<f64> {
    if a.dim() != b.dim() {
        return usage(format!("cannot score {}-d template against {}-d template", a.dim(), b.dim()));
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

/// Picks the smallest observed score `t` with `#{s >= t} / N <= target`.
///
/// Returns `(threshold, achieved_fmr)`. When even the largest score passes too
/// often, the threshold is placed just above it and nothing passes.
pub fn threshold_for_scores(scores: &[f64], target_fmr: f64) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::Calibration("no impostor scores".into()));
    }
    if !(target_fmr > 0.0 && target_fmr <= 1.0) {
        return Err(Error::Config(format!("target FMR {target_fmr} outside (0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite impostor score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = sorted.len() as f64;
    let mut best = None;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i];
        let mut end = i + 1;
        while end < sorted.len() && sorted[end] == value {
            end += 1;
        }
        let fraction = end as f64 / n;
        if fraction > target_fmr {
            break;
        }
        best = Some((value, fraction));
        i = end;
    }
    Ok(best.unwrap_or((sorted[0].next_up(), 0.0)))
}

fn impostor_pair_total(gallery: &Gallery) -> usize {
    let users = gallery.user_count();
    let k = gallery.impressions_per_user;
    users * (users - 1) / 2 * k * k
}

/// Impostor scores over cross-user impression pairs: every pair when there
/// are at most `max_pairs`, otherwise `max_pairs` uniform draws (with
/// replacement) from the stream `(seed, Calibration)`.
pub fn impostor_scores(gallery: &Gallery, max_pairs: usize, seed: u64) -> Vec<f64> {
    let users = &gallery.users;
    let total = impostor_pair_total(gallery);
    if total <= max_pairs {
        let mut out = Vec::with_capacity(total);
        for (i, a) in users.iter().enumerate() {
            for b in &users[i + 1..] {
                for ta in &a.impressions {
                    for tb in &b.impressions {
                        out.push(dot(ta.as_slice(), tb.as_slice()));
                    }
                }
            }
        }
        return out;
    }
    let mut rng = rng::stream(seed, Domain::Calibration, 0);
    let (u, k) = (users.len(), gallery.impressions_per_user);
    (0..max_pairs)
        .map(|_| {
            let i = rng.random_range(0..u);
            let j = (i + rng.random_range(1..u)) % u;
            let a = &users[i].impressions[rng.random_range(0..k)];
            let b = &users[j].impressions[rng.random_range(0..k)];
            dot(a.as_slice(), b.as_slice())
        })
        .collect()
}

pub fn calibrate(gallery: &Gallery, target_fmr: f64, seed: u64) -> Result<FmrCalibration> {
    if gallery.user_count() < 2 {
        return Err(Error::Calibration("at least two users are needed for impostor pairs".into()));
    }
    let total = impostor_pair_total(gallery);
    if total < MIN_IMPOSTOR_PAIRS {
        return Err(Error::Calibration(format!(
            "only {total} impostor pairs available, need at least {MIN_IMPOSTOR_PAIRS}"
        )));
    }
    let scores = impostor_scores(gallery, MAX_IMPOSTOR_PAIRS, seed);
    let (threshold, achieved_fmr) = threshold_for_scores(&scores, target_fmr)?;
    Ok(FmrCalibration { target_fmr, threshold, impostor_pair_count: scores.len(), achieved_fmr })
}

/// Fraction of `scores` at or above the calibrated threshold.
pub fn pass_rate(scores: &[f64], cal: &FmrCalibration) -> f64 {
    scores.iter().filter(|&&s| s >= cal.threshold).count() as f64 / scores.len() as f64
}

fn best_score(t: &[f64], u: &UserRecord) -> f64 {
    u.impressions.iter().map(|imp| dot(t, imp.as_slice())).fold(f64::NEG_INFINITY, f64::max)
}

/// Any-impression rule: the user matches when its best impression clears the
/// threshold.
pub fn match_user(t: &Template, u: &UserRecord, cal: &FmrCalibration) -> Result<bool> {
    if let Some(imp) = u.impressions.iter().find(|imp| imp.dim() != t.dim()) {
        return usage(format!("cannot match {}-d template against {}-d impression", t.dim(), imp.dim()));
    }
    Ok(best_score(t.as_slice(), u) >= cal.threshold)
}

pub fn match_vector(t: &Template, gallery: &Gallery, cal: &FmrCalibration) -> Result<MatchVector> {
    if t.dim() != gallery.feature_dim {
        return usage(format!("cannot match {}-d template against {}-d gallery", t.dim(), gallery.feature_dim));
    }
    let mut bits = MatchVector::zeros(gallery.user_count(), cal.target_fmr);
    let ts = t.as_slice();
    for (i, u) in gallery.users.iter().enumerate() {
        if u.impressions.iter().any(|imp| dot(ts, imp.as_slice()) >= cal.threshold) {
            bits.set(i, true);
        }
    }
    Ok(bits)
}

/// Which users of a gallery a print matches, in user-id order.
#[derive(Clone, PartialEq, Eq)]
pub struct MatchVector {
    words: Vec<u64>,
    len: usize,
    fmr_bits: u64,
}

impl MatchVector {
    pub fn zeros(len: usize, fmr: f64) -> Self {
        MatchVector { words: vec![0; len.div_ceil(64)], len, fmr_bits: fmr.to_bits() }
    }

    pub fn from_bools(bits: &[bool], fmr: f64) -> Self {
        let mut v = Self::zeros(bits.len(), fmr);
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    /// Parses a string of `0`/`1` characters.
    pub fn from_bitstring(s: &str, fmr: f64) -> Result<Self> {
        let bools = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Malformed(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bools(&bools, fmr))
    }

    pub fn to_bitstring(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fmr(&self) -> f64 {
        f64::from_bits(self.fmr_bits)
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(|&i| self.get(i))
    }

    fn check_len(&self, other: &MatchVector) -> Result<()> {
        if self.len != other.len {
            return usage(format!("match vectors of length {} and {}", self.len, other.len));
        }
        Ok(())
    }

    pub fn hamming(&self, other: &MatchVector) -> Result<usize> {
        self.check_len(other)?;
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum())
    }

    pub fn intersection_count(&self, other: &MatchVector) -> Result<usize> {
        self.check_len(other)?;
        Ok(self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum())
    }

    pub fn union_with(&mut self, other: &MatchVector) -> Result<()> {
        self.check_len(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
        Ok(())
    }

    pub fn difference_with(&mut self, other: &MatchVector) -> Result<()> {
        self.check_len(other)?;
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= !b);
        Ok(())
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MatchVector) -> Result<bool> {
        self.check_len(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0))
    }
}

impl fmt::Debug for MatchVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatchVector({} @ fmr {})", self.to_bitstring(), self.fmr())
    }
}

#[derive(Serialize, Deserialize)]
struct MatchVectorRepr {
    fmr: f64,
    bits: String,
}

impl Serialize for MatchVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatchVectorRepr { fmr: self.fmr(), bits: self.to_bitstring() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatchVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MatchVectorRepr::deserialize(d)?;
        MatchVector::from_bitstring(&r.bits, r.fmr).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{generate_gallery, GalleryConfig, Partition};

    fn t(v: &[f64]) -> Template {
        Template::normalized(v.to_vec()).unwrap()
    }

    fn hand_gallery(users: Vec<Vec<Template>>) -> Gallery {
        let dim = users[0][0].dim();
        let k = users[0].len();
        Gallery {
            version: crate::population::GALLERY_FORMAT_VERSION,
            feature_dim: dim,
            cluster_count: 1,
            impressions_per_user: k,
            seed: 0,
            cluster_spread: 0.0,
            impression_noise: 0.0,
            partition: Partition::Train,
            cluster_centers: vec![users[0][0].clone()],
            users: users
                .into_iter()
                .enumerate()
                .map(|(user_id, impressions)| UserRecord { user_id, cluster: 0, impressions })
                .collect(),
        }
    }

    #[test]
    fn score_basics() {
        let a = t(&[0.3, -0.4, 1.2]);
        assert!((score(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((score(&a, &-&a).unwrap() + 1.0).abs() < 1e-9);
        assert_eq!(score(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(score(&t(&[1.0, 0.0]), &t(&[1.0, 0.0, 0.0])), Err(Error::Usage(_))));
    }

    #[test]
    fn threshold_hand_enumeration() {
        // Candidates 0.9, 0.5, 0.1, -0.2 pass 1/4, 2/4, 3/4, 4/4 of the scores.
        let scores = [0.9, 0.5, 0.1, -0.2];
        assert_eq!(threshold_for_scores(&scores, 0.25).unwrap(), (0.9, 0.25));
        assert_eq!(threshold_for_scores(&scores, 1.0).unwrap(), (-0.2, 1.0));
        assert_eq!(threshold_for_scores(&scores, 0.6).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn threshold_ties_stay_conservative() {
        // 0.7 appears twice: admitting it would pass 3/5 > 0.5.
        let scores = [0.9, 0.7, 0.7, 0.1, 0.0];
        assert_eq!(threshold_for_scores(&scores, 0.5).unwrap(), (0.9, 0.2));
    }

    #[test]
    fn threshold_above_max_when_target_unreachable() {
        let (th, achieved) = threshold_for_scores(&[0.9, 0.5], 0.1).unwrap();
        assert!(th > 0.9);
        assert_eq!(achieved, 0.0);
    }

    #[test]
    fn calibration_refuses_small_galleries() {
        let cfg = GalleryConfig { user_count: 10, impressions_per_user: 1, ..Default::default() };
        let g = generate_gallery(&cfg, 1).unwrap();
        assert!(matches!(calibrate(&g, 0.01, 0), Err(Error::Calibration(_))));
        let one = generate_gallery(&GalleryConfig { user_count: 1, ..cfg }, 1).unwrap();
        assert!(matches!(calibrate(&one, 0.01, 0), Err(Error::Calibration(_))));
    }

    #[test]
    fn calibration_is_exact_on_its_own_impostors() {
        let g = generate_gallery(&GalleryConfig { user_count: 60, ..Default::default() }, 3).unwrap();
        let scores = impostor_scores(&g, MAX_IMPOSTOR_PAIRS, 0);
        assert_eq!(scores.len(), 60 * 59 / 2 * 16);
        for target in [0.01, 0.001, 0.2] {
            let cal = calibrate(&g, target, 0).unwrap();
            assert_eq!(pass_rate(&scores, &cal), cal.achieved_fmr);
            assert!(cal.achieved_fmr <= target);
        }
    }

    #[test]
    fn subsampled_calibration_is_deterministic() {
        let g = generate_gallery(&GalleryConfig { user_count: 40, ..Default::default() }, 3).unwrap();
        let a = impostor_scores(&g, 5000, 9);
        assert_eq!(a.len(), 5000);
        assert_eq!(a, impostor_scores(&g, 5000, 9));
        assert_ne!(a, impostor_scores(&g, 5000, 10));
    }

    #[test]
    fn match_user_rules() {
        let e1 = t(&[1.0, 0.0]);
        let u = UserRecord { user_id: 0, cluster: 0, impressions: vec![e1.clone()] };
        assert!(match_user(&e1, &u, &FmrCalibration::with_threshold(1.0 - 1e-12)).unwrap());
        assert!(!match_user(&e1, &u, &FmrCalibration::with_threshold(1.0 + 1e-9)).unwrap());

        // Probe scores 0.3 and 0.7 against the two impressions; max 0.7 >= 0.5.
        let probe = t(&[1.0, 0.0, 0.0]);
        let a = t(&[0.3, (1.0f64 - 0.09).sqrt(), 0.0]);
        let b = t(&[0.7, 0.0, (1.0f64 - 0.49).sqrt()]);
        let u = UserRecord { user_id: 0, cluster: 0, impressions: vec![a, b] };
        assert!(match_user(&probe, &u, &FmrCalibration::with_threshold(0.5)).unwrap());
        assert!(!match_user(&probe, &u, &FmrCalibration::with_threshold(0.71)).unwrap());
    }

    #[test]
    fn match_vector_extremes_and_hand_case() {
        let g = generate_gallery(&GalleryConfig { user_count: 7, ..Default::default() }, 2).unwrap();
        let probe = g.users[0].impressions[0].clone();
        assert_eq!(match_vector(&probe, &g, &FmrCalibration::with_threshold(1.5)).unwrap().count_ones(), 0);
        assert_eq!(match_vector(&probe, &g, &FmrCalibration::with_threshold(-1.0)).unwrap().count_ones(), 7);

        // Best scores against the probe e1: user0 0.8, user1 0.2, user2 0.6.
        let h = hand_gallery(vec![
            vec![t(&[0.8, 0.6, 0.0]), t(&[0.1, 0.0, 0.99])],
            vec![t(&[0.2, 0.0, 0.96]), t(&[-0.5, 0.5, 0.0])],
            vec![t(&[0.0, 1.0, 0.0]), t(&[0.6, 0.8, 0.0])],
        ]);
        let mv = match_vector(&t(&[1.0, 0.0, 0.0]), &h, &FmrCalibration::with_threshold(0.5)).unwrap();
        assert_eq!(mv.to_bitstring(), "101");
    }

    #[test]
    fn threshold_monotonicity() {
        let (train, _) = crate::population::split_train_test(&GalleryConfig::default(), 5).unwrap();
        let loose = calibrate(&train, 0.01, 0).unwrap();
        let tight = calibrate(&train, 0.0001, 0).unwrap();
        assert!(tight.threshold >= loose.threshold);
        for u in &train.users {
            let probe = &u.impressions[1];
            let a = match_vector(probe, &train, &tight).unwrap();
            let b = match_vector(probe, &train, &loose).unwrap();
            assert!(a.is_subset_of(&b).unwrap());
        }
    }

    #[test]
    fn bit_operations() {
        let a = MatchVector::from_bitstring("1100", 0.01).unwrap();
        let b = MatchVector::from_bitstring("0110", 0.01).unwrap();
        assert_eq!(a.hamming(&b).unwrap(), 2);
        assert_eq!(a.intersection_count(&b).unwrap(), 1);
        let mut c = a.clone();
        c.union_with(&b).unwrap();
        assert_eq!(c.to_bitstring(), "1110");
        c.difference_with(&b).unwrap();
        assert_eq!(c.to_bitstring(), "1000");
        assert!(MatchVector::from_bitstring("10x", 0.1).is_err());
        assert!(a.hamming(&MatchVector::zeros(5, 0.01)).is_err());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<MatchVector>(&json).unwrap(), a);
    }
}
