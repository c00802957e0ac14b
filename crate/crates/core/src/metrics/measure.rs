use serde::{Deserialize, Serialize};

use crate::preprocess::{Segment, XyzBeat, BEAT_RATE_HZ};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub qrs_duration_ms: f64,
    pub amplitude_qrs_3d_uv: f64,
    pub vti_qrs_3d_uvs: f64,
}

/// Leading samples used for the noise floor (50 ms).
pub const NOISE_FLOOR_SAMPLES: usize = 50;
/// QRS extent threshold as a fraction of the peak magnitude.
pub const PEAK_FRACTION: f64 = 0.05;

/// Magnitude-based QRS measurements of an unscaled (µV) beat.
///
/// The QRS extent is the contiguous run of samples around the peak of
/// `|xyz|` (searched in the QRS segment) that exceed
/// `5% · peak + 2 · median(|xyz| over the first 50 ms)`.
pub fn measure_beat(beat: &XyzBeat) -> MeasurementSet {
    let (x, y, z) = (beat.lead(0), beat.lead(1), beat.lead(2));
    let mag: Vec<f64> = (0..x.len()).map(|i| (x[i] * x[i] + y[i] * y[i] + z[i] * z[i]).sqrt()).collect();
    let window = Segment::Qrs.range();
    let (peak_at, peak) = window
        .clone()
        .map(|i| (i, mag[i]))
        .fold((window.start, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if !(peak > 0.0) {
        return MeasurementSet::default();
    }
    let mut head: Vec<f64> = mag[..NOISE_FLOOR_SAMPLES].to_vec();
    head.sort_by(f64::total_cmp);
    let mid = head.len() / 2;
    let noise = if head.len() % 2 == 0 { 0.5 * (head[mid - 1] + head[mid]) } else { head[mid] };
    let threshold = PEAK_FRACTION * peak + 2.0 * noise;

    let mut first = peak_at;
    while first > window.start && mag[first - 1] > threshold {
        first -= 1;
    }
    let mut last = peak_at;
    while last + 1 < window.end && mag[last + 1] > threshold {
        last += 1;
    }
    let dt = 1.0 / BEAT_RATE_HZ;
    let vti = (first..last).map(|i| 0.5 * (mag[i] + mag[i + 1]) * dt).sum();
    MeasurementSet {
        qrs_duration_ms: (last - first) as f64 * dt * 1000.0,
        amplitude_qrs_3d_uv: peak,
        vti_qrs_3d_uvs: vti,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::BEAT_LEN;

    fn bump(amp: f64, center: f64, sigma: f64, dir: [f64; 3]) -> XyzBeat {
        let s = (0..3)
            .flat_map(|l| (0..BEAT_LEN).map(move |t| dir[l] * amp * (-0.5 * ((t as f64 - center) / sigma).powi(2)).exp()))
            .collect();
        XyzBeat::new("bump", s).unwrap()
    }

    #[test]
    fn zero_beat_measures_zero() {
        assert_eq!(measure_beat(&XyzBeat::zeros("z")), MeasurementSet::default());
    }

    #[test]
    fn gaussian_bump_on_x() {
        let m = measure_beat(&bump(1000.0, 375.0, 10.0, [1.0, 0.0, 0.0]));
        assert!((m.amplitude_qrs_3d_uv - 1000.0).abs() < 10.0);
        let half_width = 10.0 * (2.0 * 20f64.ln()).sqrt();
        assert!((m.qrs_duration_ms - 2.0 * half_width).abs() < 0.15 * 2.0 * half_width);
        // ∫ A·exp(−t²/2σ²) over ±half_width, in µV·s.
        let vti = 1000.0 * 10.0 * (2.0 * std::f64::consts::PI).sqrt() * statrs::function::erf::erf(20f64.ln().sqrt()) * 1e-3;
        assert!((m.vti_qrs_3d_uvs - vti).abs() < 0.05 * vti);
    }

    #[test]
    fn doubling_scales_amplitude_and_vti_only() {
        let b = bump(700.0, 360.3, 12.0, [0.6, 0.0, 0.8]);
        let (m1, m2) = (measure_beat(&b), measure_beat(&b.map(|_, v| 2.0 * v)));
        assert_eq!(m2.qrs_duration_ms, m1.qrs_duration_ms);
        assert_eq!(m2.amplitude_qrs_3d_uv, 2.0 * m1.amplitude_qrs_3d_uv);
        assert_eq!(m2.vti_qrs_3d_uvs, 2.0 * m1.vti_qrs_3d_uvs);
    }

    #[test]
    fn extent_is_bounded_by_segment() {
        let b = XyzBeat::new("flat", vec![100.0; XyzBeat::LEN]).unwrap();
        let m = measure_beat(&b);
        assert!(m.qrs_duration_ms <= 250.0);
    }
}
