use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::schedule::{BetaSchedule, ScheduleKind};
use super::LatentError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "SAE")]
    Sae,
    #[serde(rename = "VAE")]
    Vae,
    #[serde(rename = "BetaVAE")]
    BetaVae,
    #[serde(rename = "CyclicalBetaVAE")]
    CyclicalBetaVae,
    #[serde(rename = "AnnealedBetaVAE")]
    AnnealedBetaVae,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Ae, Variant::Sae, Variant::Vae, Variant::BetaVae, Variant::CyclicalBetaVae, Variant::AnnealedBetaVae];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ae => "AE",
            Variant::Sae => "SAE",
            Variant::Vae => "VAE",
            Variant::BetaVae => "BetaVAE",
            Variant::CyclicalBetaVae => "CyclicalBetaVAE",
            Variant::AnnealedBetaVae => "AnnealedBetaVAE",
        }
    }

    pub fn default_schedule(self) -> BetaSchedule {
        match self {
            Variant::Ae | Variant::Sae => BetaSchedule::constant(0.0),
            Variant::Vae => BetaSchedule::constant(1.0),
            Variant::BetaVae => BetaSchedule::constant(3.0),
            Variant::CyclicalBetaVae => BetaSchedule::cyclical(),
            Variant::AnnealedBetaVae => BetaSchedule::annealed(),
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != Variant::Ae
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = LatentError;

    /// Accepts the canonical names plus dashed/lowercase spellings
    /// (`beta-vae`, `cbeta-vae`, `abeta-vae`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "ae" => Variant::Ae,
            "sae" => Variant::Sae,
            "vae" => Variant::Vae,
            "betavae" | "bvae" => Variant::BetaVae,
            "cyclicalbetavae" | "cbetavae" | "cbvae" => Variant::CyclicalBetaVae,
            "annealedbetavae" | "abetavae" | "abvae" => Variant::AnnealedBetaVae,
            _ => return Err(LatentError::InvalidConfig(vec![format!("unknown variant {s:?}")])),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub schedule: BetaSchedule,
    pub stochastic: bool,
    /// Multiplier on the full-size filter and dense widths.
    pub scale: f64,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
}

impl VariantConfig {
    /// Desk-scale defaults: scale 1/16, 50 epochs, batch 32, lr 1e-3.
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            schedule: variant.default_schedule(),
            stochastic: variant.is_stochastic(),
            scale: 1.0 / 16.0,
            latent_dim: 30,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.schedule.violations();
        out.extend(self.weights.violations());
        if self.stochastic != self.variant.is_stochastic() {
            out.push(format!("{} requires stochastic = {}", self.variant, self.variant.is_stochastic()));
        }
        let s = &self.schedule;
        let schedule_ok = match self.variant {
            Variant::Ae | Variant::Sae => s.kind == ScheduleKind::Constant && s.constant_value == 0.0,
            Variant::Vae => s.kind == ScheduleKind::Constant && s.constant_value == 1.0,
            Variant::BetaVae => s.kind == ScheduleKind::Constant && s.constant_value == 3.0,
            Variant::CyclicalBetaVae => s.kind == ScheduleKind::Cyclical,
            Variant::AnnealedBetaVae => s.kind == ScheduleKind::Annealed,
        };
        if !schedule_ok {
            out.push(format!("schedule {:?} does not match variant {}", s.kind, self.variant));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            out.push(format!("scale must be > 0, got {}", self.scale));
        }
        if self.latent_dim < 1 {
            out.push("latent_dim must be >= 1".into());
        }
        if self.batch_size < 2 {
            out.push("batch_size must be >= 2 (batch normalisation)".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        out
    }

    pub fn validate(&self) -> Result<(), LatentError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(LatentError::InvalidConfig(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_models::beta_at;

    #[test]
    fn defaults_satisfy_invariants() {
        for v in Variant::ALL {
            let c = VariantConfig::new(v);
            c.validate().unwrap();
            assert_eq!(c.stochastic, v != Variant::Ae);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(beta_at(&VariantConfig::new(Variant::Sae).schedule, 7), 0.0);
        assert_eq!(beta_at(&VariantConfig::new(Variant::Vae).schedule, 7), 1.0);
        assert_eq!(beta_at(&VariantConfig::new(Variant::BetaVae).schedule, 7), 3.0);
    }

    #[test]
    fn aliases_parse() {
        assert_eq!("beta-vae".parse::<Variant>().unwrap(), Variant::BetaVae);
        assert_eq!("Abeta-VAE".parse::<Variant>().unwrap(), Variant::AnnealedBetaVae);
        assert!("pca".parse::<Variant>().is_err());
    }

    #[test]
    fn every_violation_is_reported() {
        let c = VariantConfig {
            stochastic: true,
            schedule: BetaSchedule::constant(2.0),
            scale: 0.0,
            batch_size: 1,
            ..VariantConfig::new(Variant::Ae)
        };
        let LatentError::InvalidConfig(v) = c.validate().unwrap_err() else { panic!() };
        assert_eq!(v.len(), 4, "{v:?}");
    }
}
