//! Synthetic enrolled populations.
//!
//! Users are drawn from a mixture of `C` directions on the unit sphere in
//! `R^m`. Each user owns `k` noisy impressions of a private center, so a single
//! template can cover most of one cluster but rarely several.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::rng::{self, Domain};
use crate::template::{Template, UNIT_NORM_TOL};

pub const GALLERY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GalleryConfig {
    pub feature_dim: usize,
    pub cluster_count: usize,
    /// Total users; split evenly between train and test by [`split_train_test`].
    pub user_count: usize,
    pub impressions_per_user: usize,
    pub cluster_spread: f64,
    pub impression_noise: f64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            cluster_count: 5,
            user_count: 400,
            impressions_per_user: 4,
            cluster_spread: 0.25,
            impression_noise: 0.1,
        }
    }
}

impl GalleryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 {
            return config("feature_dim must be at least 2");
        }
        if self.cluster_count < 1 {
            return config("cluster_count must be at least 1");
        }
        if self.user_count < 1 {
            return config("user_count must be at least 1");
        }
        if self.impressions_per_user < 1 {
            return config("impressions_per_user must be at least 1");
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return config("cluster_spread must be finite and non-negative");
        }
        if !(self.impression_noise >= 0.0 && self.impression_noise.is_finite()) {
            return config("impression_noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: usize,
    /// Index of the mixture component the user was drawn from.
    pub cluster: usize,
    pub impressions: Vec<Template>,
}

/// Which half of a split a gallery's users were drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
}

impl Partition {
    fn index(self) -> u64 {
        match self {
            Partition::Train => 0,
            Partition::Test => 1,
        }
    }
}

/// An enrolled population. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gallery {
    pub version: u32,
    pub feature_dim: usize,
    pub cluster_count: usize,
    pub impressions_per_user: usize,
    pub seed: u64,
    pub cluster_spread: f64,
    pub impression_noise: f64,
    pub partition: Partition,
    pub cluster_centers: Vec<Template>,
    pub users: Vec<UserRecord>,
}

fn normal_vec(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `normalize(center + spread * g)`; returns `center` untouched when the
/// spread is zero so noiseless draws are bit-exact copies.
fn perturb(center: &Template, spread: f64, rng: &mut rng::Rng) -> Result<Template> {
    let g = normal_vec(rng, center.dim());
    if spread == 0.0 {
        return Ok(center.clone());
    }
    let v = center.as_slice().iter().zip(&g).map(|(c, e)| c + spread * e).collect();
    Template::normalized(v).map_err(|_| Error::Numerical("zero-norm perturbed center".into()))
}

pub fn cluster_centers(cfg: &GalleryConfig, seed: u64) -> Result<Vec<Template>> {
    let mut rng = rng::stream(seed, Domain::ClusterCenters, 0);
    (0..cfg.cluster_count)
        .map(|_| loop {
            if let Ok(t) = Template::normalized(normal_vec(&mut rng, cfg.feature_dim)) {
                break Ok(t);
            }
        })
        .collect()
}

fn draw_users(
    cfg: &GalleryConfig,
    seed: u64,
    centers: &[Template],
    partition: Partition,
    count: usize,
) -> Result<Vec<UserRecord>> {
    (0..count)
        .map(|user_id| {
            let user_seed = rng::derive(seed, Domain::User, (partition.index() << 32) | user_id as u64);
            let mut rng = rng::stream(user_seed, Domain::User, 0);
            let cluster = rng.random_range(0..cfg.cluster_count);
            let center = perturb(&centers[cluster], cfg.cluster_spread, &mut rng)?;
            let impressions = (0..cfg.impressions_per_user)
                .map(|j| {
                    let mut imp_rng = rng::stream(user_seed, Domain::Impression, j as u64);
                    perturb(&center, cfg.impression_noise, &mut imp_rng)
                })
                .collect::<Result<_>>()?;
            Ok(UserRecord { user_id, cluster, impressions })
        })
        .collect()
}

fn assemble(cfg: &GalleryConfig, seed: u64, centers: Vec<Template>, partition: Partition, users: Vec<UserRecord>) -> Gallery {
    Gallery {
        version: GALLERY_FORMAT_VERSION,
        feature_dim: cfg.feature_dim,
        cluster_count: cfg.cluster_count,
        impressions_per_user: cfg.impressions_per_user,
        seed,
        cluster_spread: cfg.cluster_spread,
        impression_noise: cfg.impression_noise,
        partition,
        cluster_centers: centers,
        users,
    }
}

/// Draws `cfg.user_count` users. Equivalent to the train half of a split
/// whose total is twice as large.
pub fn generate_gallery(cfg: &GalleryConfig, seed: u64) -> Result<Gallery> {
    cfg.validate()?;
    let centers = cluster_centers(cfg, seed)?;
    let users = draw_users(cfg, seed, &centers, Partition::Train, cfg.user_count)?;
    Ok(assemble(cfg, seed, centers, Partition::Train, users))
}

/// Train and test halves sharing cluster centers but with disjoint users.
pub fn split_train_test(cfg: &GalleryConfig, seed: u64) -> Result<(Gallery, Gallery)> {
    Ok((generate_half(cfg, seed, Partition::Train)?, generate_half(cfg, seed, Partition::Test)?))
}

/// One half of [`split_train_test`], drawn on its own.
pub fn generate_half(cfg: &GalleryConfig, seed: u64, partition: Partition) -> Result<Gallery> {
    cfg.validate()?;
    if !cfg.user_count.is_multiple_of(2) {
        return config(format!("user_count must be even to split, got {}", cfg.user_count));
    }
    let centers = cluster_centers(cfg, seed)?;
    let users = draw_users(cfg, seed, &centers, partition, cfg.user_count / 2)?;
    Ok(assemble(cfg, seed, centers, partition, users))
}

impl Gallery {
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn config(&self) -> GalleryConfig {
        GalleryConfig {
            feature_dim: self.feature_dim,
            cluster_count: self.cluster_count,
            user_count: self.users.len(),
            impressions_per_user: self.impressions_per_user,
            cluster_spread: self.cluster_spread,
            impression_noise: self.impression_noise,
        }
    }

    /// Checks every structural invariant; run on load.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Malformed(m));
        if self.version != GALLERY_FORMAT_VERSION {
            return bad(format!("unsupported gallery version {}", self.version));
        }
        if self.users.is_empty() || self.impressions_per_user == 0 {
            return bad("gallery has no users or no impressions".into());
        }
        if self.cluster_centers.len() != self.cluster_count {
            return bad("cluster center count mismatch".into());
        }
        let all = self.cluster_centers.iter().chain(self.users.iter().flat_map(|u| &u.impressions));
        for t in all {
            if t.dim() != self.feature_dim {
                return bad(format!("template of dimension {} in a {}-d gallery", t.dim(), self.feature_dim));
            }
            if (t.norm() - 1.0).abs() > UNIT_NORM_TOL {
                return bad(format!("template norm {} is not 1", t.norm()));
            }
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.user_id != i {
                return bad(format!("user at position {i} has id {}", u.user_id));
            }
            if u.impressions.len() != self.impressions_per_user {
                return bad(format!("user {i} has {} impressions", u.impressions.len()));
            }
            if u.cluster >= self.cluster_count {
                return bad(format!("user {i} references cluster {}", u.cluster));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Gallery = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }
}
