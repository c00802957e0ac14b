use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::preprocess::{Segment, XyzBeat, SEGMENT_LEN};

/// Per-segment weights of the reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub theta_p: f64,
    pub theta_qrs: f64,
    pub theta_t: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { theta_p: 20.0, theta_qrs: 10.0, theta_t: 15.0 }
    }
}

impl LossWeights {
    pub fn of(&self, segment: Segment) -> f64 {
        match segment {
            Segment::P => self.theta_p,
            Segment::Qrs => self.theta_qrs,
            Segment::T => self.theta_t,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        [("theta_p", self.theta_p), ("theta_qrs", self.theta_qrs), ("theta_t", self.theta_t)]
            .into_iter()
            .filter(|(_, v)| !(*v >= 0.0 && v.is_finite()))
            .map(|(n, v)| format!("loss weight {n} must be finite and >= 0, got {v}"))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_qrs: f64,
    pub l_t: f64,
    pub l_e: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills `l_e` and `total` from the components.
    pub fn assemble(l_p: f64, l_qrs: f64, l_t: f64, kl: f64, beta: f64, w: &LossWeights) -> Self {
        let l_e = w.theta_p * l_p + w.theta_qrs * l_qrs + w.theta_t * l_t;
        Self { l_p, l_qrs, l_t, l_e, kl, beta, total: l_e + beta * kl }
    }
}

/// `−½ Σ (1 + lv − μ² − e^lv)` over the latent dimensions of one sample.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> Result<f64, LatentError> {
    if mu.len() != log_var.len() {
        return Err(LatentError::Shape { what: "log_var".into(), expected: mu.len(), got: log_var.len() });
    }
    if !mu.iter().chain(log_var).all(|v| v.is_finite()) {
        return Err(LatentError::NonFinite("latent statistics".into()));
    }
    // Each term is e^l − 1 − l + μ² ≥ 0; clamp rounding noise.
    Ok(mu.iter().zip(log_var).map(|(m, l)| 0.5 * (m * m + l.exp_m1() - l)).sum::<f64>().max(0.0))
}

/// Segment MSEs per lead × sample and their weighted sum; `kl`, `beta` are 0.
pub fn weighted_reconstruction_loss(x: &XyzBeat, x_prime: &XyzBeat, weights: &LossWeights) -> LossBreakdown {
    let mut seg = [0.0; 3];
    for (s, acc) in Segment::ALL.iter().zip(seg.iter_mut()) {
        let mut sum = 0.0;
        for lead in 0..3 {
            for (a, b) in x.lead(lead)[s.range()].iter().zip(&x_prime.lead(lead)[s.range()]) {
                sum += (a - b) * (a - b);
            }
        }
        *acc = sum / (3 * SEGMENT_LEN) as f64;
    }
    LossBreakdown::assemble(seg[0], seg[1], seg[2], 0.0, 0.0, weights)
}

/// `L_E + β·KL`.
pub fn elbo_loss(
    x: &XyzBeat,
    x_prime: &XyzBeat,
    mu: &[f64],
    log_var: &[f64],
    beta: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown, LatentError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(LatentError::InvalidConfig(vec![format!("beta must be finite and >= 0, got {beta}")]));
    }
    let r = weighted_reconstruction_loss(x, x_prime, weights);
    let kl = kl_divergence(mu, log_var)?;
    Ok(LossBreakdown::assemble(r.l_p, r.l_qrs, r.l_t, kl, beta, weights))
}
