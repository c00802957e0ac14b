//! Parametric synthetic ECGs built from Gaussian bumps.
//!
//! Each cardiac cycle contributes one bump per wave (P, QRS, T) to every
//! lead, scaled by a per-lead gain. A bump with amplitude `A`, center `c`
//! and width `σ` is `A·exp(−(t − c)² / 2σ²)`; the QRS onset used for the
//! fiducials is `c_QRS − 2.5·σ_QRS`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EcgRecord, SignalError, INDEPENDENT_LEADS};

/// QRS onset offset before the QRS center, in units of the QRS width.
pub const QRS_ONSET_WIDTHS: f64 = 2.5;

/// Bumps are evaluated out to this many widths from their center.
const SUPPORT_WIDTHS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveParams {
    pub amplitude_uv: f64,
    /// Center relative to the start of the cycle.
    pub center_ms: f64,
    /// Gaussian standard deviation.
    pub width_ms: f64,
}

impl WaveParams {
    pub fn new(amplitude_uv: f64, center_ms: f64, width_ms: f64) -> Self {
        Self { amplitude_uv, center_ms, width_ms }
    }

    /// Closed-form bump value at `t_ms` (cycle-relative).
    pub fn value_at(&self, t_ms: f64) -> f64 {
        let u = (t_ms - self.center_ms) / self.width_ms;
        self.amplitude_uv * (-0.5 * u * u).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBeatParams {
    pub p: WaveParams,
    pub qrs: WaveParams,
    pub t: WaveParams,
    pub heart_rate_bpm: f64,
    pub noise_std_uv: f64,
    pub rng_seed: u64,
    pub sample_rate_hz: f64,
    pub leads: Vec<String>,
    /// Per-lead multipliers for the (P, QRS, T) bumps.
    pub lead_gains: Vec<[f64; 3]>,
}

impl Default for SyntheticBeatParams {
    fn default() -> Self {
        Self {
            p: WaveParams::new(150.0, 120.0, 20.0),
            qrs: WaveParams::new(1000.0, 300.0, 10.0),
            t: WaveParams::new(300.0, 560.0, 40.0),
            heart_rate_bpm: 60.0,
            noise_std_uv: 0.0,
            rng_seed: 0,
            sample_rate_hz: 1000.0,
            leads: INDEPENDENT_LEADS.iter().map(|s| s.to_string()).collect(),
            lead_gains: vec![[1.0; 3]; INDEPENDENT_LEADS.len()],
        }
    }
}

impl SyntheticBeatParams {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: String| Err(SignalError::InvalidParams(m));
        for (name, w) in [("P", &self.p), ("QRS", &self.qrs), ("T", &self.t)] {
            if !(w.width_ms > 0.0) || !w.width_ms.is_finite() {
                return bad(format!("{name} width must be > 0"));
            }
            if !w.amplitude_uv.is_finite() || !w.center_ms.is_finite() {
                return bad(format!("{name} amplitude and center must be finite"));
            }
        }
        if !(self.p.center_ms < self.qrs.center_ms && self.qrs.center_ms < self.t.center_ms) {
            return bad("wave centers must be ordered P < QRS < T".into());
        }
        if !(30.0..=220.0).contains(&self.heart_rate_bpm) {
            return bad(format!("heart rate {} outside [30, 220] bpm", self.heart_rate_bpm));
        }
        if !(self.noise_std_uv >= 0.0) || !self.noise_std_uv.is_finite() {
            return bad("noise std must be >= 0".into());
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return bad("sample rate must be > 0".into());
        }
        if self.leads.is_empty() || self.lead_gains.len() != self.leads.len() {
            return bad("one gain triple per lead is required".into());
        }
        Ok(())
    }

    pub fn period_ms(&self) -> f64 {
        60_000.0 / self.heart_rate_bpm
    }

    /// QRS onset relative to the start of a cycle.
    pub fn qrs_onset_ms(&self) -> f64 {
        self.qrs.center_ms - QRS_ONSET_WIDTHS * self.qrs.width_ms
    }
}

/// Renders `duration_s` seconds of the beat train described by `params`.
pub fn generate_synthetic_ecg(params: &SyntheticBeatParams, duration_s: f64) -> Result<EcgRecord, SignalError> {
    params.validate()?;
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(SignalError::InvalidParams(format!("duration {duration_s} s must be > 0")));
    }
    let fs = params.sample_rate_hz;
    let n = (duration_s * fs).round() as usize;
    let dt_ms = 1000.0 / fs;
    let period = params.period_ms();
    let total_ms = n as f64 * dt_ms;
    let waves = [params.p, params.qrs, params.t];

    let mut clean = vec![vec![0.0f64; n]; params.leads.len()];
    // one extra cycle on either side catches bumps that spill over the edges
    let first = -((waves.iter().map(|w| w.center_ms + SUPPORT_WIDTHS * w.width_ms).fold(0.0, f64::max) / period).ceil() as i64);
    let mut k = first;
    let mut fiducials = Vec::new();
    while (k as f64) * period < total_ms {
        let start = k as f64 * period;
        let onset = start + params.qrs_onset_ms();
        if onset >= 0.0 {
            let idx = (onset / dt_ms).round() as usize;
            if idx < n {
                fiducials.push(idx);
            }
        }
        for (wi, w) in waves.iter().enumerate() {
            let c = start + w.center_ms;
            let lo = ((c - SUPPORT_WIDTHS * w.width_ms) / dt_ms).floor().max(0.0) as usize;
            let hi = (((c + SUPPORT_WIDTHS * w.width_ms) / dt_ms).ceil().max(0.0) as usize).min(n);
            for i in lo..hi {
                let v = w.value_at(i as f64 * dt_ms - start);
                for (row, gains) in clean.iter_mut().zip(&params.lead_gains) {
                    row[i] += gains[wi] * v;
                }
            }
        }
        k += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let noise = Normal::new(0.0, params.noise_std_uv).map_err(|e| SignalError::InvalidParams(e.to_string()))?;
    let rows: Vec<Vec<f32>> = clean
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|v| if params.noise_std_uv > 0.0 { (v + noise.sample(&mut rng)) as f32 } else { v as f32 })
                .collect()
        })
        .collect();
    EcgRecord::new(format!("synth-{}", params.rng_seed), fs, params.leads.clone(), rows, Some(fiducials))
}

/// Approximate spatial axes of the eight independent leads (x: right→left,
/// y: cranial→caudal, z: anterior→posterior).
const LEAD_AXES: [[f64; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.5, 0.87, 0.0],
    [-0.3, 0.1, -0.95],
    [0.0, 0.15, -1.0],
    [0.35, 0.2, -0.85],
    [0.65, 0.2, -0.6],
    [0.85, 0.15, -0.35],
    [0.95, 0.1, -0.1],
];

/// Settings for a corpus of records with randomly drawn morphologies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    pub count: usize,
    pub seed: u64,
    pub noise_std_uv: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self { count: 100, seed: 0, noise_std_uv: 10.0, duration_s: 10.0, sample_rate_hz: 1000.0 }
    }
}

fn random_direction<R: Rng>(rng: &mut R, nominal: [f64; 3], spread: f64) -> [f64; 3] {
    let n = Normal::new(0.0, spread).expect("positive spread");
    let v = [nominal[0] + n.sample(rng), nominal[1] + n.sample(rng), nominal[2] + n.sample(rng)];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
    [v[0] / norm, v[1] / norm, v[2] / norm]
}

/// Draws one random morphology: wave amplitudes, timings and dipole axes.
pub fn random_beat_params<R: Rng>(rng: &mut R, noise_std_uv: f64, sample_rate_hz: f64) -> SyntheticBeatParams {
    let p = WaveParams::new(rng.random_range(60.0..220.0), rng.random_range(100.0..170.0), rng.random_range(14.0..28.0));
    let qrs = WaveParams::new(rng.random_range(600.0..1800.0), rng.random_range(280.0..320.0), rng.random_range(6.0..16.0));
    let t = WaveParams::new(rng.random_range(150.0..500.0), rng.random_range(520.0..620.0), rng.random_range(30.0..55.0));
    let axes = [
        random_direction(rng, [0.6, 0.6, -0.3], 0.25),
        random_direction(rng, [0.7, 0.5, -0.4], 0.2),
        random_direction(rng, [0.6, 0.5, -0.3], 0.6),
    ];
    let lead_gains = LEAD_AXES
        .iter()
        .map(|l| {
            let mut g = [0.0; 3];
            for (gi, axis) in g.iter_mut().zip(&axes) {
                *gi = l[0] * axis[0] + l[1] * axis[1] + l[2] * axis[2];
            }
            g
        })
        .collect();
    SyntheticBeatParams {
        p,
        qrs,
        t,
        heart_rate_bpm: rng.random_range(50.0..78.0),
        noise_std_uv,
        rng_seed: rng.random(),
        sample_rate_hz,
        leads: INDEPENDENT_LEADS.iter().map(|s| s.to_string()).collect(),
        lead_gains,
    }
}

/// A corpus of `count` records with mixed morphologies, ids `rec-00000`….
pub fn synthetic_corpus(params: &CorpusParams) -> Result<Vec<EcgRecord>, SignalError> {
    synthetic_corpus_iter(params).collect()
}

/// Lazily generated [`synthetic_corpus`], one record at a time.
pub fn synthetic_corpus_iter(params: &CorpusParams) -> impl Iterator<Item = Result<EcgRecord, SignalError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let params = params.clone();
    (0..params.count).map(move |i| {
        let beat = random_beat_params(&mut rng, params.noise_std_uv, params.sample_rate_hz);
        let rec = generate_synthetic_ecg(&beat, params.duration_s)?;
        Ok(rec.with_id(format!("rec-{i:05}")))
    })
}
