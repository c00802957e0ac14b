//! Energy-based QRS onset detection in the style of Pan–Tompkins.

use std::collections::VecDeque;

use crate::signal_io::EcgRecord;

const LOWPASS_S: f64 = 0.02;
const DIFF_HALF_SPAN_S: f64 = 0.01;
const INTEGRATION_S: f64 = 0.12;
const ROLLING_PEAK_S: f64 = 2.0;
const REFRACTORY_S: f64 = 0.2;
const THRESHOLD_FRACTION: f64 = 0.4;
/// Detections must also exceed this fraction of the record-wide peak.
const GLOBAL_FLOOR_FRACTION: f64 = 0.05;
const ONSET_FRACTION: f64 = 0.1;
const ONSET_SEARCH_S: f64 = 0.15;

fn samples(fs: f64, seconds: f64) -> usize {
    ((fs * seconds).round() as usize).max(1)
}

/// Centered moving average with window `w` (shrinks at the edges).
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let half = w / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Centered sliding-window maximum over `±half` samples.
fn rolling_max(x: &[f64], half: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + half).min(x.len() - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| x[b] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&f| f + half < i) {
            dq.pop_front();
        }
        *o = x[*dq.front().expect("window is non-empty")];
    }
    out
}

/// Squared band-passed signal summed across leads.
fn lead_energy(record: &EcgRecord) -> Vec<f64> {
    let fs = record.sample_rate_hz();
    let n = record.num_samples();
    let k = samples(fs, DIFF_HALF_SPAN_S);
    let mut energy = vec![0.0; n];
    for l in 0..record.num_leads() {
        let raw: Vec<f64> = record.lead(l).iter().map(|v| *v as f64).collect();
        let lp = moving_average(&raw, samples(fs, LOWPASS_S));
        for (i, e) in energy.iter_mut().enumerate() {
            let d = lp[(i + k).min(n - 1)] - lp[i.saturating_sub(k)];
            *e += d * d;
        }
    }
    energy
}

/// QRS onset sample indices, ascending. Annotated fiducials are returned
/// unchanged; otherwise the built-in detector runs. An empty result means
/// nothing was detected.
pub fn detect_qrs_onsets(record: &EcgRecord) -> Vec<usize> {
    if let Some(f) = record.fiducials() {
        return f.to_vec();
    }
    if record.num_samples() < 3 || record.num_leads() == 0 {
        return Vec::new();
    }
    let fs = record.sample_rate_hz();
    let energy = lead_energy(record);
    let mwi = moving_average(&energy, samples(fs, INTEGRATION_S));
    let global = mwi.iter().cloned().fold(0.0, f64::max);
    if !(global > 0.0) {
        return Vec::new();
    }
    let rolling = rolling_max(&mwi, samples(fs, ROLLING_PEAK_S / 2.0));
    let refractory = samples(fs, REFRACTORY_S);

    // local maxima above the adaptive threshold, thinned by the refractory period
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..mwi.len() - 1 {
        let threshold = (THRESHOLD_FRACTION * rolling[i]).max(GLOBAL_FLOOR_FRACTION * global);
        if mwi[i] <= threshold || mwi[i] < mwi[i - 1] || mwi[i] < mwi[i + 1] {
            continue;
        }
        match peaks.last_mut() {
            Some(last) if i - *last < refractory => {
                if mwi[i] > mwi[*last] {
                    *last = i;
                }
            }
            _ => peaks.push(i),
        }
    }

    let half_window = samples(fs, INTEGRATION_S / 2.0);
    let search = samples(fs, ONSET_SEARCH_S);
    let mut onsets: Vec<usize> = peaks
        .into_iter()
        .map(|p| {
            let lo = p.saturating_sub(half_window);
            let hi = (p + half_window).min(energy.len() - 1);
            let local = (lo..=hi).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).expect("non-empty range");
            let limit = ONSET_FRACTION * energy[local];
            // walk back to the earliest supra-threshold sample in the search span
            let start = local.saturating_sub(search);
            (start..=local).find(|&i| energy[i] >= limit).unwrap_or(local)
        })
        .collect();
    onsets.dedup();
    onsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{generate_synthetic_ecg, SyntheticBeatParams};

    fn strip(rec: &EcgRecord) -> EcgRecord {
        rec.clone().with_fiducials(None).unwrap()
    }

    #[test]
    fn annotations_take_precedence() {
        let rec = EcgRecord::new("a", 1000.0, vec!["I".into()], vec![vec![0.0; 2000]], Some(vec![500, 1500])).unwrap();
        assert_eq!(detect_qrs_onsets(&rec), vec![500, 1500]);
    }

    #[test]
    fn zero_signal_has_no_detections() {
        let rec = EcgRecord::new("z", 1000.0, vec!["I".into()], vec![vec![0.0; 5000]], None).unwrap();
        assert!(detect_qrs_onsets(&rec).is_empty());
    }

    #[test]
    fn noiseless_sixty_bpm_onsets_within_20ms() {
        let rec = generate_synthetic_ecg(&SyntheticBeatParams::default(), 10.0).unwrap();
        let truth = rec.fiducials().unwrap().to_vec();
        let found = detect_qrs_onsets(&strip(&rec));
        assert_eq!(found.len(), 10, "{found:?}");
        for (f, t) in found.iter().zip(&truth) {
            assert!((*f as i64 - *t as i64).abs() <= 20, "{found:?} vs {truth:?}");
        }
    }

    #[test]
    fn noisy_varied_records_track_truth() {
        use crate::signal_io::{synthetic_corpus, CorpusParams};
        for rec in synthetic_corpus(&CorpusParams { count: 12, seed: 3, ..Default::default() }).unwrap() {
            let truth = rec.fiducials().unwrap().to_vec();
            let found = detect_qrs_onsets(&strip(&rec));
            assert_eq!(found.len(), truth.len(), "{}", rec.id());
            for (f, t) in found.iter().zip(&truth) {
                assert!((*f as i64 - *t as i64).abs() <= 20, "{}: {found:?} vs {truth:?}", rec.id());
            }
        }
    }

    #[test]
    fn rolling_max_matches_brute_force() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 7919) % 31) as f64).collect();
        let fast = rolling_max(&x, 3);
        for i in 0..x.len() {
            let lo = i.saturating_sub(3);
            let hi = (i + 3).min(x.len() - 1);
            assert_eq!(fast[i], x[lo..=hi].iter().cloned().fold(f64::MIN, f64::max));
        }
    }
}
