use std::path::Path;

use serde::{Deserialize, Serialize};

use super::beat::{BeatMatrix, XyzBeat, BEAT_LEN};
use super::PreprocessError;
use crate::signal_io::INDEPENDENT_LEADS;

/// 3×8 map from (I, II, V1–V6) to (X, Y, Z), row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KorsMatrix(pub [[f64; 8]; 3]);

/// Shipped coefficient file.
pub const DEFAULT_KORS_TEXT: &str = include_str!("../../data/kors.txt");

impl Default for KorsMatrix {
    fn default() -> Self {
        Self::parse(DEFAULT_KORS_TEXT).expect("bundled matrix parses")
    }
}

impl KorsMatrix {
    /// Parses 24 whitespace-separated decimals, row-major.
    pub fn parse(text: &str) -> Result<Self, PreprocessError> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| PreprocessError::KorsMatrix(format!("not a number: {t:?}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != 24 {
            return Err(PreprocessError::KorsMatrix(format!("expected 24 coefficients, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::KorsMatrix("non-finite coefficient".into()));
        }
        let mut m = [[0.0; 8]; 3];
        for (i, v) in values.into_iter().enumerate() {
            m[i / 8][i % 8] = v;
        }
        Ok(Self(m))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PreprocessError::KorsMatrix(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|r| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ") + "\n").collect()
    }
}

/// Picks the eight independent leads in canonical order, dropping any
/// derived limb leads.
pub fn derive_missing_leads(beat: &BeatMatrix) -> Result<BeatMatrix, PreprocessError> {
    let mut data = Vec::with_capacity(8 * BEAT_LEN);
    for name in INDEPENDENT_LEADS {
        let i = beat
            .leads
            .iter()
            .position(|l| l.eq_ignore_ascii_case(name))
            .ok_or_else(|| PreprocessError::MissingLead(name.to_string()))?;
        data.extend_from_slice(beat.row(i));
    }
    Ok(BeatMatrix { leads: INDEPENDENT_LEADS.iter().map(|s| s.to_string()).collect(), data })
}

/// `xyz = matrix × beat` for a beat with rows (I, II, V1..V6).
pub fn kors_transform(beat: &BeatMatrix, matrix: &KorsMatrix, source_id: &str) -> Result<XyzBeat, PreprocessError> {
    if beat.data.len() != 8 * BEAT_LEN || beat.leads.len() != 8 {
        return Err(PreprocessError::Shape { what: "lead transform input".into(), expected: 8 * BEAT_LEN, got: beat.data.len() });
    }
    let mut out = vec![0.0; 3 * BEAT_LEN];
    for (r, coeffs) in matrix.0.iter().enumerate() {
        let dst = &mut out[r * BEAT_LEN..(r + 1) * BEAT_LEN];
        for (c, &k) in coeffs.iter().enumerate() {
            for (d, s) in dst.iter_mut().zip(beat.row(c)) {
                *d += k * s;
            }
        }
    }
    XyzBeat::new(source_id, out)
}
