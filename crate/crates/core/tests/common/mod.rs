#![allow(dead_code)]

use masterprint::population::{Gallery, Partition, UserRecord, GALLERY_FORMAT_VERSION};
use masterprint::template::Template;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// A gallery whose clusters sit exactly on the given directions, with
/// `users_per` users each and small isotropic impression noise.
pub fn clustered_gallery(centers: &[Vec<f64>], users_per: usize, k: usize, noise: f64, seed: u64) -> Gallery {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Template> = centers.iter().map(|c| Template::normalized(c.clone()).unwrap()).collect();
    let dim = centers[0].dim();
    let mut users = Vec::new();
    for (ci, c) in centers.iter().enumerate() {
        for _ in 0..users_per {
            let impressions = (0..k)
                .map(|_| {
                    let v = c.as_slice().iter().map(|x| x + noise * rng.sample::<f64, _>(StandardNormal)).collect();
                    Template::normalized(v).unwrap()
                })
                .collect();
            users.push(UserRecord { user_id: users.len(), cluster: ci, impressions });
        }
    }
    Gallery {
        version: GALLERY_FORMAT_VERSION,
        feature_dim: dim,
        cluster_count: centers.len(),
        impressions_per_user: k,
        seed,
        cluster_spread: 0.0,
        impression_noise: noise,
        partition: Partition::Train,
        cluster_centers: centers,
        users,
    }
}

pub fn basis(dim: usize, i: usize, sign: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = sign;
    v
}
