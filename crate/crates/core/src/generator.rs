//! Latent-to-template maps.
//!
//! [`GeneratorParams`] is a fixed smooth map `z -> normalize(P tanh(z) + b)`
//! whose leading columns lean toward the gallery's cluster centers, so the
//! reachable templates cover the enrolled population the way a decoder trained
//! on it would.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Error, Result};
use crate::population::Gallery;
use crate::rng::{self, Domain};
use crate::template::{norm, Template};

/// Weight of the cluster center in a biased column.
pub const CENTER_BLEND: f64 = 0.7;
/// Weight of the Gaussian draw in a biased column.
pub const NOISE_BLEND: f64 = 0.3;

const MAX_RANK_ATTEMPTS: u64 = 64;

/// Any pure map from a latent vector to a template.
pub trait Generator: Sync {
    fn latent_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn generate(&self, z: &[f64]) -> Result<Template>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub feature_dim: usize,
    pub latent_dim: usize,
    /// `feature_dim x latent_dim`, row-major.
    pub projection: Vec<f64>,
    pub offset: Vec<f64>,
    pub seed: u64,
}

fn draw_columns(m: usize, n: usize, centers: &[Template], rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|j| {
            let g: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            let mut col: Vec<f64> = match centers.get(j) {
                Some(c) => c.as_slice().iter().zip(&g).map(|(c, e)| CENTER_BLEND * c + NOISE_BLEND * e).collect(),
                None => g,
            };
            let len = norm(&col);
            col.iter_mut().for_each(|x| *x /= len);
            col
        })
        .collect()
}

fn full_column_rank(m: usize, n: usize, cols: &[Vec<f64>]) -> bool {
    let mat = DMatrix::from_fn(m, n, |i, j| cols[j][i]);
    let sv = mat.singular_values();
    let max = sv.max();
    max.is_finite() && sv.iter().all(|&s| s.is_finite() && s > max * 1e-10)
}

/// Builds the projection map for `gallery`.
///
/// The first `min(C, n)` columns are `normalize(0.7 c_i + 0.3 g_i)`, the rest
/// are normalized Gaussian draws. Draws that come out rank deficient are
/// rejected and redrawn from the next keystream.
pub fn build_generator(m: usize, n: usize, seed: u64, gallery: &Gallery) -> Result<GeneratorParams> {
    if n < 2 {
        return config(format!("latent dimension must be at least 2, got {n}"));
    }
    if n > m {
        return config(format!("latent dimension {n} exceeds feature dimension {m}"));
    }
    if gallery.feature_dim != m {
        return config(format!("gallery is {}-d but generator was asked for {m}-d output", gallery.feature_dim));
    }
    for attempt in 0..MAX_RANK_ATTEMPTS {
        let mut rng = rng::stream(seed, Domain::Generator, attempt);
        let cols = draw_columns(m, n, &gallery.cluster_centers, &mut rng);
        if !full_column_rank(m, n, &cols) {
            continue;
        }
        let projection = (0..m).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        return Ok(GeneratorParams { feature_dim: m, latent_dim: n, projection, offset: vec![0.0; m], seed });
    }
    Err(Error::Numerical(format!("no full-rank projection after {MAX_RANK_ATTEMPTS} draws")))
}

impl GeneratorParams {
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.feature_dim).map(|i| self.projection[i * self.latent_dim + j]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.projection.len() == self.feature_dim * self.latent_dim
            && self.offset.len() == self.feature_dim
            && self.projection.iter().chain(&self.offset).all(|x| x.is_finite());
        if !ok {
            return Err(Error::Malformed("generator shape or values invalid".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: GeneratorParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

impl Generator for GeneratorParams {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn generate(&self, z: &[f64]) -> Result<Template> {
        if z.len() != self.latent_dim {
            return usage(format!("latent vector has {} entries, generator expects {}", z.len(), self.latent_dim));
        }
        let squashed: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let out = self
            .projection
            .chunks_exact(self.latent_dim)
            .zip(&self.offset)
            .map(|(row, b)| crate::template::dot(row, &squashed) + b)
            .collect();
        Template::normalized(out)
    }
}
