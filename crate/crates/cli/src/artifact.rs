//! On-disk artifacts: atomic writes, the binary envelope that carries run
//! metadata, checkpoints and CSV tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use ecglatent_core::latent_models::{model_from_bytes, model_to_bytes, LatentModel, TrainingLog};
use ecglatent_core::preprocess::ScalingParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

const ENVELOPE_MAGIC: &[u8; 4] = b"ECGA";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata block stored in front of every binary artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub kind: String,
    pub command: String,
    pub config_digest: String,
    pub created_by: String,
    /// Checkpoints only: SHA-256 of the training-log CSV body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_log_digest: Option<String>,
}

impl Meta {
    pub fn new(kind: &str, command: &str, config_digest: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            created_by: format!("ecglatent {}", env!("CARGO_PKG_VERSION")),
            training_log_digest: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Reads an upstream artifact, pointing at the producing command if absent.
pub fn read_upstream(path: &Path, producer: &str) -> Result<Vec<u8>, CliError> {
    if !path.exists() {
        return Err(CliError::MissingArtifact { path: path.to_path_buf(), command: producer.to_string() });
    }
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn envelope(meta: &Meta, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(meta).expect("meta serializes");
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(ENVELOPE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    out
}

pub fn open_envelope<'a>(bytes: &'a [u8], path: &Path) -> Result<(Meta, &'a [u8]), CliError> {
    let bad = |why: &str| CliError::Artifact(format!("{}: {why}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != ENVELOPE_MAGIC {
        return Err(bad("not an ecglatent artifact"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let header = bytes.get(8..8 + len).ok_or_else(|| bad("truncated metadata"))?;
    let meta: Meta = serde_json::from_slice(header).map_err(|e| bad(&format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", meta.format_version)));
    }
    Ok((meta, &bytes[8 + len..]))
}

/// Reads an enveloped artifact of the expected `kind`.
pub fn read_artifact(path: &Path, kind: &str, producer: &str) -> Result<(Meta, Vec<u8>), CliError> {
    let bytes = read_upstream(path, producer)?;
    let (meta, payload) = open_envelope(&bytes, path)?;
    if meta.kind != kind {
        return Err(CliError::Artifact(format!("{}: expected a {kind} artifact, found {}", path.display(), meta.kind)));
    }
    Ok((meta, payload.to_vec()))
}

/// A trained model with its scaling and provenance.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: Meta,
    pub model: LatentModel,
    pub scaling: ScalingParams,
}

pub const CHECKPOINT_KIND: &str = "checkpoint";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        envelope(&self.meta, &model_to_bytes(&self.model, &self.scaling))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CliError> {
        let (meta, payload) = open_envelope(bytes, path)?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(CliError::Artifact(format!("{}: not a checkpoint ({})", path.display(), meta.kind)));
        }
        let (model, scaling) = model_from_bytes(payload)?;
        Ok(Self { meta, model, scaling })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_bytes(&read_upstream(path, "train")?, path)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_bytes())
    }
}

/// CSV text preceded by a `# config_digest=…` metadata line.
pub fn csv_with_digest(config_digest: &str, command: &str, header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    let body = w.into_inner().expect("in-memory flush");
    let mut out = format!("# ecglatent {command} config_digest={config_digest}\n").into_bytes();
    out.extend_from_slice(&body);
    out
}

/// Parses a CSV written by [`csv_with_digest`], returning header and rows.
pub fn read_csv(bytes: &[u8], path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(false).from_reader(bytes);
    let bad = |e: csv::Error| CliError::Artifact(format!("{}: {e}", path.display()));
    let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(bad)?;
    Ok((header, rows))
}

/// Training-log table: one row per epoch.
pub fn training_log_rows(log: &TrainingLog) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["epoch", "beta", "l_p", "l_qrs", "l_t", "l_e", "kl", "l2", "total"].map(String::from).to_vec();
    let rows = log
        .epochs
        .iter()
        .map(|e| {
            let l = &e.loss;
            vec![
                e.epoch.to_string(),
                l.beta.to_string(),
                l.l_p.to_string(),
                l.l_qrs.to_string(),
                l.l_t.to_string(),
                l.l_e.to_string(),
                l.kl.to_string(),
                e.l2.to_string(),
                l.total.to_string(),
            ]
        })
        .collect();
    (header, rows)
}

/// Layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn corpus(&self) -> PathBuf {
        self.0.join("corpus.ecgl")
    }
    pub fn beats(&self) -> PathBuf {
        self.0.join("beats.ecgl")
    }
    pub fn scaling(&self) -> PathBuf {
        self.0.join("scaling.json")
    }
    pub fn rejected(&self) -> PathBuf {
        self.0.join("rejected.csv")
    }
    pub fn models(&self) -> PathBuf {
        self.0.join("models")
    }
    pub fn checkpoint(&self, model: &str) -> PathBuf {
        self.models().join(format!("{model}.ckpt"))
    }
    pub fn training_log(&self, model: &str) -> PathBuf {
        self.models().join(format!("{model}_log.csv"))
    }
    pub fn encodings(&self, model: &str) -> PathBuf {
        self.0.join("encodings").join(format!("{model}.csv"))
    }
    pub fn reconstructions(&self, model: &str) -> PathBuf {
        self.0.join("reconstructions").join(format!("{model}.ecgl"))
    }
    pub fn reconstruction_report(&self, model: &str) -> PathBuf {
        self.0.join("reconstructions").join(format!("{model}_metrics.csv"))
    }
    pub fn plot(&self, model: &str, id: &str) -> PathBuf {
        self.0.join("plots").join(format!("{model}_{id}.svg"))
    }
    pub fn evaluation(&self) -> PathBuf {
        self.0.join("evaluation.csv")
    }
    pub fn probe(&self) -> PathBuf {
        self.0.join("probe.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_round_trip_and_rejections() {
        let meta = Meta::new("dataset", "synth", "abc");
        let bytes = envelope(&meta, b"payload");
        let p = Path::new("x");
        let (m, body) = open_envelope(&bytes, p).unwrap();
        assert_eq!(m, meta);
        assert_eq!(body, b"payload");
        assert!(open_envelope(b"ECG", p).is_err());
        assert!(open_envelope(&bytes[..10], p).is_err());
        let mut other = bytes.clone();
        other[0] = b'X';
        assert!(open_envelope(&other, p).is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"first version").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        let leftovers = std::fs::read_dir(p.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn missing_upstream_names_the_command() {
        let err = read_upstream(Path::new("/nonexistent/beats.ecgl"), "preprocess").unwrap_err();
        assert!(err.to_string().contains("run `ecglatent preprocess` first"), "{err}");
    }

    #[test]
    fn csv_carries_digest_and_parses_back() {
        let header = vec!["id".to_string(), "v".to_string()];
        let rows = vec![vec!["a".to_string(), "1.5".to_string()], vec!["b,c".to_string(), String::new()]];
        let bytes = csv_with_digest("d1g", "encode", &header, &rows);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("# ecglatent encode config_digest=d1g\nid,v\n"));
        let (h, r) = read_csv(&bytes, Path::new("t.csv")).unwrap();
        assert_eq!(h, header);
        assert_eq!(r, rows);
    }
}
