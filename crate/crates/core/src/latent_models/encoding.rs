use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Encoder output for one beat. `log_var` is `None` for deterministic
/// models (AE, PCA), in which case `z == mu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentEncoding {
    pub mu: Vec<f64>,
    pub log_var: Option<Vec<f64>>,
    pub z: Vec<f64>,
    pub epsilon_seed: u64,
}

impl LatentEncoding {
    pub fn deterministic(mu: Vec<f64>, epsilon_seed: u64) -> Self {
        Self { z: mu.clone(), mu, log_var: None, epsilon_seed }
    }

    /// Samples `z` with noise drawn from `epsilon_seed`.
    pub fn sampled(mu: Vec<f64>, log_var: Vec<f64>, epsilon_seed: u64) -> Self {
        let z = reparameterize(&mu, &log_var, &mut ChaCha8Rng::seed_from_u64(epsilon_seed));
        Self { mu, log_var: Some(log_var), z, epsilon_seed }
    }

    pub fn is_deterministic(&self) -> bool {
        self.log_var.is_none()
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Standard-normal noise of length `dim`.
pub fn standard_normal<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `z = mu + exp(½·log_var) ⊙ ε`, ε ~ N(0, I) from `rng`.
pub fn reparameterize<R: Rng>(mu: &[f64], log_var: &[f64], rng: &mut R) -> Vec<f64> {
    let eps = standard_normal(rng, mu.len());
    mu.iter().zip(log_var).zip(eps).map(|((m, l), e)| m + (0.5 * l).exp() * e).collect()
}
