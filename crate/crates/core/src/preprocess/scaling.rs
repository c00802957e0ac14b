use serde::{Deserialize, Serialize};

use super::beat::{XyzBeat, BEAT_LEN};
use super::PreprocessError;

/// Dataset-wide normalisation: divide by `abs_max`, then subtract the
/// per-lead mean of the divided data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub abs_max: f64,
    pub per_lead_mean: [f64; 3],
}

impl ScalingParams {
    pub fn fit(beats: &[XyzBeat]) -> Result<Self, PreprocessError> {
        if beats.is_empty() {
            return Err(PreprocessError::EmptyDataset);
        }
        let abs_max = beats.iter().flat_map(|b| b.samples()).fold(0.0f64, |m, v| m.max(v.abs()));
        if !(abs_max > 0.0) {
            return Err(PreprocessError::DegenerateScale);
        }
        let mut per_lead_mean = [0.0; 3];
        for (l, m) in per_lead_mean.iter_mut().enumerate() {
            let total: f64 = beats.iter().map(|b| b.lead(l).iter().map(|v| v / abs_max).sum::<f64>()).sum();
            *m = total / (beats.len() * BEAT_LEN) as f64;
        }
        Ok(Self { abs_max, per_lead_mean })
    }

    /// µV → normalised units.
    pub fn apply(&self, beat: &XyzBeat) -> XyzBeat {
        beat.map(|lead, v| v / self.abs_max - self.per_lead_mean[lead])
    }

    /// Normalised units → µV.
    pub fn invert(&self, beat: &XyzBeat) -> XyzBeat {
        beat.map(|lead, v| (v + self.per_lead_mean[lead]) * self.abs_max)
    }
}

/// Fits [`ScalingParams`] on `beats` and applies them.
pub fn scale_dataset(beats: &[XyzBeat]) -> Result<(Vec<XyzBeat>, ScalingParams), PreprocessError> {
    let params = ScalingParams::fit(beats)?;
    Ok((beats.iter().map(|b| params.apply(b)).collect(), params))
}
