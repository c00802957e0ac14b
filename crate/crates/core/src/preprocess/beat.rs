use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::signal_io::EcgRecord;

/// Samples in a representative beat (750 ms on the 1000 Hz beat grid).
pub const BEAT_LEN: usize = 750;
/// Sample rate of the beat grid.
pub const BEAT_RATE_HZ: f64 = 1000.0;
/// Window start relative to the QRS onset.
pub const PRE_ONSET_MS: f64 = 275.0;
/// QRS onset position inside every extracted window.
pub const ONSET_SAMPLE: usize = 275;
pub const SEGMENT_LEN: usize = 250;
pub const XYZ_LEADS: [&str; 3] = ["X", "Y", "Z"];

/// One of the three equal-length waveform segments of a beat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    P,
    Qrs,
    T,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::P, Segment::Qrs, Segment::T];

    /// Sample range `[start, end)` within a beat.
    pub fn range(self) -> std::ops::Range<usize> {
        let i = self as usize;
        i * SEGMENT_LEN..(i + 1) * SEGMENT_LEN
    }
}

/// Representative beat of any lead set, `leads × 750` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatMatrix {
    pub leads: Vec<String>,
    pub data: Vec<f64>,
}

impl BeatMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * BEAT_LEN..(i + 1) * BEAT_LEN]
    }
}

/// A 3 × 750 X/Y/Z representative beat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XyzBeat {
    pub source_id: String,
    samples: Vec<f64>,
}

impl XyzBeat {
    pub const LEN: usize = 3 * BEAT_LEN;

    pub fn new(source_id: impl Into<String>, samples: Vec<f64>) -> Result<Self, PreprocessError> {
        let source_id = source_id.into();
        if samples.len() != Self::LEN {
            return Err(PreprocessError::Shape { what: format!("beat {source_id}"), expected: Self::LEN, got: samples.len() });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite(source_id));
        }
        Ok(Self { source_id, samples })
    }

    pub fn zeros(source_id: impl Into<String>) -> Self {
        Self { source_id: source_id.into(), samples: vec![0.0; Self::LEN] }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn lead(&self, i: usize) -> &[f64] {
        &self.samples[i * BEAT_LEN..(i + 1) * BEAT_LEN]
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        let samples = self.samples.iter().enumerate().map(|(i, v)| f(i / BEAT_LEN, *v)).collect();
        Self { source_id: self.source_id.clone(), samples }
    }

    /// As a three-lead record at the beat grid rate (for the dataset container).
    pub fn to_record(&self) -> Result<EcgRecord, PreprocessError> {
        let rows = (0..3).map(|l| self.lead(l).iter().map(|v| *v as f32).collect()).collect();
        Ok(EcgRecord::new(
            self.source_id.clone(),
            BEAT_RATE_HZ,
            XYZ_LEADS.iter().map(|s| s.to_string()).collect(),
            rows,
            Some(vec![ONSET_SAMPLE]),
        )?)
    }

    pub fn from_record(record: &EcgRecord) -> Result<Self, PreprocessError> {
        if record.leads() != XYZ_LEADS || record.num_samples() != BEAT_LEN {
            return Err(PreprocessError::Shape {
                what: format!("beat record {}", record.id()),
                expected: Self::LEN,
                got: record.signal().len(),
            });
        }
        Self::new(record.id(), record.signal().iter().map(|v| *v as f64).collect())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the 750 ms windows starting 275 ms before each onset,
/// resampled onto the 1000 Hz grid by linear interpolation. Windows that do
/// not fit inside the record are skipped.
pub fn extract_representative_beat(record: &EcgRecord, onsets: &[usize]) -> Result<BeatMatrix, PreprocessError> {
    let fs = record.sample_rate_hz();
    let last = record.num_samples() as f64 - 1.0;
    let step = fs / BEAT_RATE_HZ;
    let starts: Vec<f64> = onsets
        .iter()
        .map(|&o| o as f64 - PRE_ONSET_MS * fs / 1000.0)
        .filter(|&s| s >= 0.0 && s + (BEAT_LEN - 1) as f64 * step <= last + 1e-9)
        .collect();
    if starts.is_empty() {
        return Err(PreprocessError::NoCompleteWindow(record.id().to_string()));
    }
    let mut data = vec![0.0; record.num_leads() * BEAT_LEN];
    let mut column = vec![0.0; starts.len()];
    for l in 0..record.num_leads() {
        let lead = record.lead(l);
        for j in 0..BEAT_LEN {
            for (c, s) in column.iter_mut().zip(&starts) {
                let pos = s + j as f64 * step;
                let i0 = (pos.floor() as usize).min(lead.len() - 1);
                let frac = pos - i0 as f64;
                let a = lead[i0] as f64;
                *c = if frac > 0.0 && i0 + 1 < lead.len() { a + frac * (lead[i0 + 1] as f64 - a) } else { a };
            }
            data[l * BEAT_LEN + j] = median(&mut column);
        }
    }
    Ok(BeatMatrix { leads: record.leads().to_vec(), data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{generate_synthetic_ecg, SyntheticBeatParams};

    #[test]
    fn single_beat_record_is_its_own_window() {
        let rows: Vec<Vec<f32>> = (0..2).map(|l| (0..750).map(|i| (i * (l + 1)) as f32).collect()).collect();
        let rec = EcgRecord::new("one", 1000.0, vec!["I".into(), "II".into()], rows.clone(), None).unwrap();
        let beat = extract_representative_beat(&rec, &[275]).unwrap();
        for l in 0..2 {
            assert!(beat.row(l).iter().zip(&rows[l]).all(|(a, b)| *a == *b as f64));
        }
    }

    #[test]
    fn periodic_record_median_equals_single_window() {
        let rec = generate_synthetic_ecg(&SyntheticBeatParams::default(), 10.0).unwrap();
        let onsets = rec.fiducials().unwrap().to_vec();
        let all = extract_representative_beat(&rec, &onsets).unwrap();
        let one = extract_representative_beat(&rec, &onsets[3..4]).unwrap();
        for (a, b) in all.data.iter().zip(&one.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn median_rejects_a_single_corrupted_window() {
        let p = SyntheticBeatParams::default();
        let clean = generate_synthetic_ecg(&p, 5.0).unwrap();
        let onsets = clean.fiducials().unwrap().to_vec();
        assert_eq!(onsets.len(), 5);
        let spike_at = onsets[2] - 275 + 400;
        let rows: Vec<Vec<f32>> = (0..clean.num_leads())
            .map(|l| {
                let mut r = clean.lead(l).to_vec();
                r[spike_at] += 10_000.0;
                r
            })
            .collect();
        let dirty = EcgRecord::new("dirty", 1000.0, clean.leads().to_vec(), rows, None).unwrap();
        let a = extract_representative_beat(&clean, &onsets).unwrap();
        let b = extract_representative_beat(&dirty, &onsets).unwrap();
        for l in 0..clean.num_leads() {
            assert!((a.row(l)[400] - b.row(l)[400]).abs() < 1e-6);
        }
    }

    #[test]
    fn resampling_500hz_record_places_onset_at_275() {
        let p = SyntheticBeatParams { sample_rate_hz: 500.0, ..Default::default() };
        let rec = generate_synthetic_ecg(&p, 4.0).unwrap();
        let beat = extract_representative_beat(&rec, rec.fiducials().unwrap()).unwrap();
        // QRS center sits 2.5 widths (25 ms) after the onset; the 500 Hz
        // fiducial itself is only resolved to 2 ms.
        let row = beat.row(0);
        let peak = (0..BEAT_LEN).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!(peak.abs_diff(ONSET_SAMPLE + 25) <= 1, "{peak}");
    }

    #[test]
    fn no_complete_window_is_an_error() {
        let rec = EcgRecord::new("short", 1000.0, vec!["I".into()], vec![vec![0.0; 700]], None).unwrap();
        assert!(matches!(
            extract_representative_beat(&rec, &[300]),
            Err(PreprocessError::NoCompleteWindow(id)) if id == "short"
        ));
    }

    #[test]
    fn segments_tile_the_beat() {
        assert_eq!(Segment::P.range(), 0..250);
        assert_eq!(Segment::Qrs.range(), 250..500);
        assert_eq!(Segment::T.range(), 500..750);
        assert!(Segment::Qrs.range().contains(&ONSET_SAMPLE));
    }
}
