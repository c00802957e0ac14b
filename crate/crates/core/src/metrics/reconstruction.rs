use serde::{Deserialize, Serialize};

use super::{dtw_distance, MetricsError};
use crate::preprocess::{Segment, XyzBeat, BEAT_LEN, SEGMENT_LEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeadReport {
    pub mae: f64,
    pub dtw: f64,
}

/// Fidelity of one reconstruction, in µV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub mae_p: f64,
    pub mae_qrs: f64,
    pub mae_t: f64,
    pub mae_full: f64,
    pub mse_full: f64,
    /// Sum of the per-lead DTW distances.
    pub dtw_full: f64,
    /// X, Y, Z.
    pub per_lead: [LeadReport; 3],
}

pub fn reconstruction_metrics(x: &XyzBeat, x_prime: &XyzBeat) -> Result<ReconstructionReport, MetricsError> {
    let (a, b) = (x.samples(), x_prime.samples());
    if a.len() != b.len() {
        return Err(MetricsError::Shape { what: "reconstruction".into(), expected: a.len(), got: b.len() });
    }
    let mut seg = [0.0; 3];
    for (s, out) in Segment::ALL.iter().zip(seg.iter_mut()) {
        let sum: f64 = (0..3).map(|l| x.lead(l)[s.range()].iter().zip(&x_prime.lead(l)[s.range()]).map(|(p, q)| (p - q).abs()).sum::<f64>()).sum();
        *out = sum / (3 * SEGMENT_LEN) as f64;
    }
    let n = a.len() as f64;
    let mae_full = a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
    let mse_full = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
    let mut per_lead = [LeadReport::default(); 3];
    for (l, r) in per_lead.iter_mut().enumerate() {
        let (p, q) = (x.lead(l), x_prime.lead(l));
        r.mae = p.iter().zip(q).map(|(u, v)| (u - v).abs()).sum::<f64>() / BEAT_LEN as f64;
        r.dtw = dtw_distance(p, q)?;
    }
    Ok(ReconstructionReport {
        mae_p: seg[0],
        mae_qrs: seg[1],
        mae_t: seg[2],
        mae_full,
        mse_full,
        dtw_full: per_lead.iter().map(|r| r.dtw).sum(),
        per_lead,
    })
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for n < 2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        Self { mean, sd }
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(2);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.sd)
    }
}

/// Per-beat reports averaged over a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    pub beats: usize,
    pub mae_p: MeanSd,
    pub mae_qrs: MeanSd,
    pub mae_t: MeanSd,
    pub mae_full: MeanSd,
    pub mse_full: MeanSd,
    pub dtw_full: MeanSd,
    pub lead_mae: [MeanSd; 3],
    pub lead_dtw: [MeanSd; 3],
}

impl ReconstructionSummary {
    pub fn of(reports: &[ReconstructionReport]) -> Self {
        let f = |g: fn(&ReconstructionReport) -> f64| MeanSd::of(reports.iter().map(g));
        Self {
            beats: reports.len(),
            mae_p: f(|r| r.mae_p),
            mae_qrs: f(|r| r.mae_qrs),
            mae_t: f(|r| r.mae_t),
            mae_full: f(|r| r.mae_full),
            mse_full: f(|r| r.mse_full),
            dtw_full: f(|r| r.dtw_full),
            lead_mae: [0, 1, 2].map(|l| MeanSd::of(reports.iter().map(|r| r.per_lead[l].mae))),
            lead_dtw: [0, 1, 2].map(|l| MeanSd::of(reports.iter().map(|r| r.per_lead[l].dtw))),
        }
    }
}
