//! Covariance matrix adaptation evolution strategy (maximization).
//!
//! Weighted recombination of the best `mu` of `lambda` samples, cumulative
//! step-size adaptation and rank-one plus rank-mu covariance updates, with the
//! standard default learning rates. Selection is rank based: only the order of
//! fitness values matters, ties keep candidate order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Error, Result};
use crate::rng::{self, Domain};

/// Floor applied to covariance eigenvalues after every update.
pub const EIGENVALUE_FLOOR: f64 = 1e-14;

/// Strategy constants. Derived from `n` and `lambda` alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    /// E||N(0, I)||.
    pub chi_n: f64,
}

pub fn default_lambda(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

impl CmaesParams {
    pub fn new(n: usize, lambda: Option<usize>) -> Result<Self> {
        if n < 1 {
            return config("CMA-ES dimension must be at least 1");
        }
        let lambda = lambda.unwrap_or_else(|| default_lambda(n));
        if lambda < 2 {
            return config(format!("population size must be at least 2, got {lambda}"));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(CmaesParams { dim: n, lambda, mu, weights, mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n })
    }
}

/// One row of the optional per-generation trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    pub best_fitness: f64,
    pub sigma: f64,
    pub mean_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CmaesState {
    params: CmaesParams,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns).
    basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,
    rng_seed: u64,
    rng: rng::Rng,
}

impl CmaesState {
    pub fn new(mean0: &[f64], sigma0: f64, lambda: Option<usize>, seed: u64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return config(format!("initial step size must be positive and finite, got {sigma0}"));
        }
        if mean0.iter().any(|x| !x.is_finite()) {
            return config("initial mean must be finite");
        }
        let n = mean0.len();
        let params = CmaesParams::new(n, lambda)?;
        Ok(CmaesState {
            params,
            mean: DVector::from_column_slice(mean0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            rng_seed: seed,
            rng: rng::stream(seed, Domain::Optimizer, 0),
        })
    }

    pub fn params(&self) -> &CmaesParams {
        &self.params
    }

    pub fn lambda(&self) -> usize {
        self.params.lambda
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn dump(&self) -> String {
        format!(
            "generation {} sigma {} mean {:?} covariance diag {:?}",
            self.generation,
            self.sigma,
            self.mean.as_slice(),
            self.cov.diagonal().as_slice()
        )
    }

    /// Samples `lambda` candidates `m + sigma * B * D * g`.
    pub fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        if !self.scales.iter().all(|d| d.is_finite() && *d > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Numerical(format!("invalid covariance decomposition: {}", self.dump())));
        }
        let n = self.dim();
        let bd = &self.basis * DMatrix::from_diagonal(&self.scales);
        let mut out = Vec::with_capacity(self.lambda());
        for _ in 0..self.lambda() {
            let g = DVector::from_iterator(n, (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
            let x = &self.mean + (&bd * g) * self.sigma;
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }

    /// Indices of `fitnesses` sorted best first; ties keep index order.
    pub fn ranking(fitnesses: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..fitnesses.len()).collect();
        order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]));
        order
    }

    pub fn tell(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) -> Result<()> {
        let (n, lambda) = (self.dim(), self.lambda());
        if candidates.len() != lambda || fitnesses.len() != lambda {
            return usage(format!(
                "expected {lambda} candidates and fitnesses, got {} and {}",
                candidates.len(),
                fitnesses.len()
            ));
        }
        if candidates.iter().any(|c| c.len() != n) {
            return usage(format!("candidate dimension differs from {n}"));
        }
        if fitnesses.iter().any(|f| f.is_nan()) {
            return usage("NaN fitness");
        }
        let p = &self.params;
        let order = Self::ranking(fitnesses);

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut step_w = DVector::zeros(n);
        let mut new_mean = DVector::zeros(n);
        for (w, &i) in p.weights.iter().zip(&order[..p.mu]) {
            new_mean += DVector::from_column_slice(&candidates[i]) * *w;
        }
        for (w, y) in p.weights.iter().zip(&steps) {
            step_w += y * *w;
        }

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt_step = &self.basis * (self.basis.transpose() * &step_w).component_div(&self.scales);
        self.p_sigma = &self.p_sigma * (1.0 - p.c_sigma) + inv_sqrt_step * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();

        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - p.c_sigma).powi(2 * (self.generation as i32 + 1));
        let h_sigma = ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - p.c_c) + &step_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in p.weights.iter().zip(&steps) {
            rank_mu += (y * y.transpose()) * *w;
        }
        let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
        self.cov = &self.cov * (1.0 - p.c_1 - p.c_mu)
            + (&self.p_c * self.p_c.transpose() + &self.cov * delta_h) * p.c_1
            + rank_mu * p.c_mu;

        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.mean = new_mean;
        self.generation += 1;

        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Numerical(format!("step size degenerated: {}", self.dump())));
        }
        self.decompose()
    }

    /// Symmetrizes the covariance, floors its spectrum and caches `B`, `D`.
    fn decompose(&mut self) -> Result<()> {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        if sym.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite covariance: {}", self.dump())));
        }
        let eig = SymmetricEigen::new(sym.clone());
        let mut values = eig.eigenvalues.clone();
        let repaired = values.iter().any(|&v| v < EIGENVALUE_FLOOR);
        values.iter_mut().for_each(|v| *v = v.max(EIGENVALUE_FLOOR));
        self.cov = if repaired {
            let c = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
            (&c + c.transpose()) * 0.5
        } else {
            sym
        };
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        Ok(())
    }

    pub fn trace_row(&self, best_fitness: f64) -> TraceRow {
        TraceRow { generation: self.generation, best_fitness, sigma: self.sigma, mean_norm: self.mean.norm() }
    }
}
