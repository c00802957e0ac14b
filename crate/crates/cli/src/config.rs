//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use ecglatent_core::latent_models::{LossWeights, Variant, VariantConfig};
use ecglatent_core::signal_io::CorpusParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Model selector: one of the six autoencoder variants or PCA.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Vae(Variant),
    Pca,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Pca,
        ModelKind::Vae(Variant::Ae),
        ModelKind::Vae(Variant::Sae),
        ModelKind::Vae(Variant::Vae),
        ModelKind::Vae(Variant::BetaVae),
        ModelKind::Vae(Variant::CyclicalBetaVae),
        ModelKind::Vae(Variant::AnnealedBetaVae),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Vae(v) => v.name(),
            ModelKind::Pca => "PCA",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("pca") {
            return Ok(ModelKind::Pca);
        }
        s.parse::<Variant>().map(ModelKind::Vae).map_err(|e| e.to_string())
    }
}

impl TryFrom<String> for ModelKind {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.name().to_string()
    }
}

/// `model.variant`: a single model or `all` seven.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Selection {
    One(ModelKind),
    All,
}

impl Selection {
    pub fn models(self) -> Vec<ModelKind> {
        match self {
            Selection::One(m) => vec![m],
            Selection::All => ModelKind::ALL.to_vec(),
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            Ok(Selection::All)
        } else {
            s.parse().map(Selection::One)
        }
    }
}

impl TryFrom<String> for Selection {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Selection> for String {
    fn from(s: Selection) -> String {
        match s {
            Selection::One(m) => m.into(),
            Selection::All => "all".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Directory holding every artifact of the run.
    pub out: PathBuf,
    /// Record dataset consumed by `preprocess` (defaults to the `synth` output).
    pub input: Option<PathBuf>,
    /// 3×8 lead transform matrix (defaults to the built-in Kors matrix).
    pub kors_matrix: Option<PathBuf>,
    /// Checkpoint used by `encode`/`reconstruct` instead of `<out>/models/<variant>.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub count: usize,
    pub noise_std_uv: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        let d = CorpusParams::default();
        Self { count: d.count, noise_std_uv: d.noise_std_uv, duration_s: d.duration_s, sample_rate_hz: d.sample_rate_hz }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub variant: Selection,
    pub scale: f64,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Mini-batch size of the incremental PCA fit.
    pub pca_batch: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let v = VariantConfig::new(Variant::Sae);
        Self {
            variant: Selection::One(ModelKind::Vae(Variant::Sae)),
            scale: v.scale,
            latent_dim: v.latent_dim,
            epochs: v.epochs,
            batch_size: v.batch_size,
            learning_rate: v.learning_rate,
            weights: v.weights,
            pca_batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Fraction of the training split used by `train` and `probe`.
    pub train_fraction: f64,
    /// Ridge penalty of the linear probes.
    pub probe_l2: f64,
    /// Ridge penalty of the logistic probes (keeps separable data bounded).
    pub logistic_l2: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { train_fraction: 1.0, probe_l2: 1e-6, logistic_l2: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// Number of held-out beats drawn as SVG plots by `reconstruct`.
    pub plots: usize,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { plots: 3 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub model: ModelSection,
    pub evaluation: EvaluationSection,
    pub export: ExportSection,
}

/// Values given on the command line; each one wins over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Selection>,
    pub train_fraction: Option<f64>,
    pub out: Option<PathBuf>,
    pub kors_matrix: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    /// Reads `path` (if any), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(vec![format!("cannot read config {}: {e}", p.display())]))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if let Some(f) = o.train_fraction {
            self.evaluation.train_fraction = f;
        }
        if let Some(p) = &o.out {
            self.paths.out = p.clone();
        }
        if let Some(p) = &o.kors_matrix {
            self.paths.kors_matrix = Some(p.clone());
        }
    }

    pub fn corpus_params(&self) -> CorpusParams {
        CorpusParams {
            count: self.corpus.count,
            seed: self.seed,
            noise_std_uv: self.corpus.noise_std_uv,
            duration_s: self.corpus.duration_s,
            sample_rate_hz: self.corpus.sample_rate_hz,
        }
    }

    /// Training configuration of one autoencoder variant.
    pub fn variant_config(&self, variant: Variant) -> VariantConfig {
        let m = &self.model;
        VariantConfig {
            scale: m.scale,
            latent_dim: m.latent_dim,
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            weights: m.weights,
            ..VariantConfig::new(variant)
        }
    }

    /// Every problem with the configuration, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.paths.out.as_os_str().is_empty() {
            out.push("paths.out must be set (or pass --out)".to_string());
        }
        for (name, p) in [("paths.input", &self.paths.input), ("paths.kors_matrix", &self.paths.kors_matrix)] {
            if let Some(p) = p {
                if !p.is_file() {
                    out.push(format!("{name}: {} does not exist", p.display()));
                }
            }
        }
        let c = &self.corpus;
        if c.count == 0 {
            out.push("corpus.count must be >= 1".into());
        }
        if !(c.noise_std_uv >= 0.0 && c.noise_std_uv.is_finite()) {
            out.push(format!("corpus.noise_std_uv must be finite and >= 0, got {}", c.noise_std_uv));
        }
        if !(c.duration_s > 0.0 && c.duration_s.is_finite()) {
            out.push(format!("corpus.duration_s must be > 0, got {}", c.duration_s));
        }
        if !(c.sample_rate_hz > 0.0 && c.sample_rate_hz.is_finite()) {
            out.push(format!("corpus.sample_rate_hz must be > 0, got {}", c.sample_rate_hz));
        }
        let f = self.evaluation.train_fraction;
        if !(f > 0.0 && f <= 1.0) {
            out.push(format!("evaluation.train_fraction must be in (0, 1], got {f}"));
        }
        for (name, v) in [("probe_l2", self.evaluation.probe_l2), ("logistic_l2", self.evaluation.logistic_l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("evaluation.{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.model.pca_batch == 0 {
            out.push("model.pca_batch must be >= 1".into());
        }
        // Variant-independent checks are the same for every variant; use the
        // selected one (or SAE for PCA) to report them.
        let probe = match self.model.variant {
            Selection::One(ModelKind::Vae(v)) => v,
            _ => Variant::Sae,
        };
        out.extend(self.variant_config(probe).violations().into_iter().map(|v| format!("model: {v}")));
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    /// The output directory is left out: where results land does not change them.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.out = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_then_flags_win() {
        let cfg = RunConfig::from_toml(
            "seed = 3\n[paths]\nout = \"a\"\n[model]\nvariant = \"VAE\"\nepochs = 4\n[evaluation]\ntrain_fraction = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.variant, Selection::One(ModelKind::Vae(Variant::Vae)));
        assert_eq!(cfg.model.epochs, 4);
        let mut cfg2 = cfg.clone();
        cfg2.apply(&Overrides { seed: Some(9), variant: Some(Selection::All), train_fraction: Some(0.1), ..Default::default() });
        assert_eq!((cfg2.seed, cfg2.model.variant, cfg2.evaluation.train_fraction), (9, Selection::All, 0.1));
        assert_eq!(cfg2.paths.out, PathBuf::from("a"));
        assert_ne!(cfg.digest(), cfg2.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3\n").is_err());
        assert!(RunConfig::from_toml("[model]\nepoch = 3\n").is_err());
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = RunConfig::default();
        cfg.corpus.count = 0;
        cfg.corpus.duration_s = -1.0;
        cfg.evaluation.train_fraction = 0.0;
        cfg.model.batch_size = 0;
        let v = cfg.violations();
        assert!(v.iter().any(|s| s.contains("paths.out")));
        assert!(v.iter().any(|s| s.contains("corpus.count")));
        assert!(v.iter().any(|s| s.contains("duration_s")));
        assert!(v.iter().any(|s| s.contains("train_fraction")));
        assert!(v.iter().any(|s| s.contains("batch")), "{v:?}");
        assert!(v.len() >= 5);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::default();
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert_eq!(a.digest().len(), 64);
        let mut b = a.clone();
        b.paths.out = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.model.learning_rate *= 2.0;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn model_names_parse() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert_eq!("pca".parse::<ModelKind>().unwrap(), ModelKind::Pca);
        assert!("nope".parse::<ModelKind>().is_err());
        assert_eq!("ALL".parse::<Selection>().unwrap().models().len(), 7);
        let toml = "[model]\nvariant = \"all\"\n";
        assert_eq!(RunConfig::from_toml(toml).unwrap().model.variant, Selection::All);
    }
}
