use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{MeanSd, MetricsError};

/// Smallest accepted `λ_min / λ_max` of the normal equations.
const MIN_RCOND: f64 = 1e-12;
const NEWTON_TOLERANCE: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 200;
const NEWTON_DECREMENT: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Ridge regression with an unpenalised intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
}

/// L2-regularised logistic regression with an unpenalised intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Probe {
    Linear(LinearProbe),
    Logistic(LogisticProbe),
}

impl Probe {
    pub fn kind(&self) -> TaskKind {
        match self {
            Probe::Linear(_) => TaskKind::Regression,
            Probe::Logistic(_) => TaskKind::Classification,
        }
    }

    /// Predicted value, or positive-class probability.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Probe::Linear(p) => p.bias + dot(&p.weights, x),
            Probe::Logistic(p) => sigmoid(p.bias + dot(&p.weights, x)),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^f)` without overflow.
fn softplus(f: f64) -> f64 {
    f.max(0.0) + (-f.abs()).exp().ln_1p()
}

fn check_design(x: &[Vec<f64>], n_targets: usize, l2: f64) -> Result<usize, MetricsError> {
    if x.len() != n_targets {
        return Err(MetricsError::Shape { what: "probe targets".into(), expected: x.len(), got: n_targets });
    }
    let dim = x.first().map_or(0, Vec::len);
    if dim == 0 || x.len() <= dim {
        return Err(MetricsError::InsufficientSamples { samples: x.len(), dim });
    }
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(MetricsError::Shape { what: "probe features".into(), expected: dim, got: bad.len() });
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(MetricsError::InvalidArgument(format!("l2 must be finite and >= 0, got {l2}")));
    }
    if !x.iter().flatten().all(|v| v.is_finite()) {
        return Err(MetricsError::InvalidArgument("non-finite probe features".into()));
    }
    Ok(dim)
}

fn rcond(a: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, MetricsError> {
    let r = rcond(&a);
    if !(r > MIN_RCOND) {
        return Err(MetricsError::Conditioning(r));
    }
    let chol = a.cholesky().ok_or(MetricsError::Conditioning(r))?;
    Ok(chol.solve(b))
}

pub fn fit_linear_probe(x: &[Vec<f64>], y: &[f64], l2: f64) -> Result<LinearProbe, MetricsError> {
    let dim = check_design(x, y.len(), l2)?;
    let n = x.len() as f64;
    let x_mean: Vec<f64> = (0..dim).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let xc = DMatrix::from_fn(x.len(), dim, |i, j| x[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let mut a = xc.transpose() * &xc;
    for j in 0..dim {
        a[(j, j)] += l2;
    }
    let w = solve_spd(a, &(xc.transpose() * yc))?;
    let weights: Vec<f64> = w.iter().copied().collect();
    Ok(LinearProbe { bias: y_mean - dot(&weights, &x_mean), weights, l2 })
}

pub fn fit_logistic_probe(x: &[Vec<f64>], labels: &[bool], l2: f64) -> Result<LogisticProbe, MetricsError> {
    let dim = check_design(x, labels.len(), l2)?;
    let n = x.len();
    let design = DMatrix::from_fn(n, dim + 1, |i, j| if j == dim { 1.0 } else { x[i][j] });
    let y = DVector::from_iterator(n, labels.iter().map(|&l| f64::from(u8::from(l))));
    let objective = |theta: &DVector<f64>| -> f64 {
        let f = &design * theta;
        let data: f64 = f.iter().zip(y.iter()).map(|(f, y)| softplus(*f) - y * f).sum::<f64>() / n as f64;
        data + 0.5 * l2 * theta.rows(0, dim).norm_squared()
    };
    let mut theta = DVector::<f64>::zeros(dim + 1);
    for iter in 0..NEWTON_MAX_ITER {
        let f = &design * &theta;
        let p = f.map(sigmoid);
        let mut grad = design.transpose() * (&p - &y) / n as f64;
        for j in 0..dim {
            grad[j] += l2 * theta[j];
        }
        let done = |theta: &DVector<f64>, iter| {
            let weights = theta.rows(0, dim).iter().copied().collect();
            Ok(LogisticProbe { weights, bias: theta[dim], l2, iterations: iter })
        };
        if grad.norm() < NEWTON_TOLERANCE {
            return done(&theta, iter);
        }
        let s = p.map(|v| v * (1.0 - v));
        let weighted = DMatrix::from_fn(n, dim + 1, |i, j| design[(i, j)] * s[i]);
        let mut h = design.transpose() * weighted / n as f64;
        for j in 0..dim {
            h[(j, j)] += l2;
        }
        let step = solve_spd(h, &grad)?;
        let slope = grad.dot(&step);
        // Half the squared Newton decrement bounds the remaining objective gap.
        if slope < NEWTON_DECREMENT {
            return done(&theta, iter);
        }
        // Backtracking keeps early steps from overshooting on separable data.
        let base = objective(&theta);
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            if objective(&cand) <= base - 1e-4 * t * slope {
                theta = cand;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                // No representable decrease left along the Newton direction.
                return done(&theta, iter);
            }
        }
    }
    Err(MetricsError::NotConverged(NEWTON_MAX_ITER))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: TaskKind,
    pub samples: usize,
    pub r2: Option<f64>,
    pub mae: Option<MeanSd>,
    pub auroc: Option<f64>,
    pub sensitivity_at_spec90: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Values(&'a [f64]),
    Labels(&'a [bool]),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Labels(v) => v.len(),
        }
    }
}

pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if !(ss_tot > 0.0) {
        return Err(MetricsError::InvalidArgument("R² undefined for constant targets".into()));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn evaluate_probe(probe: &Probe, x: &[Vec<f64>], targets: Targets<'_>) -> Result<ProbeReport, MetricsError> {
    if x.len() != targets.len() {
        return Err(MetricsError::Shape { what: "probe targets".into(), expected: x.len(), got: targets.len() });
    }
    if x.is_empty() {
        return Err(MetricsError::InsufficientSamples { samples: 0, dim: 0 });
    }
    let scores: Vec<f64> = x.iter().map(|r| probe.predict(r)).collect();
    let mut report =
        ProbeReport { kind: probe.kind(), samples: x.len(), r2: None, mae: None, auroc: None, sensitivity_at_spec90: None };
    match (probe.kind(), targets) {
        (TaskKind::Regression, Targets::Values(y)) => {
            report.r2 = Some(r_squared(&scores, y)?);
            report.mae = Some(MeanSd::of(scores.iter().zip(y).map(|(p, a)| (p - a).abs())));
        }
        (TaskKind::Classification, Targets::Labels(l)) => {
            report.auroc = Some(auroc(&scores, l)?);
            report.sensitivity_at_spec90 = Some(sensitivity_at_specificity(&scores, l, 0.9)?);
        }
        _ => return Err(MetricsError::InvalidArgument("target type does not match probe kind".into())),
    }
    Ok(report)
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Shape { what: "labels".into(), expected: scores.len(), got: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((pos, neg))
}

/// Rank-sum AUROC with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Sensitivity at the threshold (`score ≥ t` ⇒ positive) whose specificity
/// is the smallest value not below `target`; ties go to higher sensitivity.
pub fn sensitivity_at_specificity(scores: &[f64], labels: &[bool], target: f64) -> Result<f64, MetricsError> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best: Option<(f64, f64)> = None;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **l && **s >= t).count();
        let tn = scores.iter().zip(labels).filter(|(s, l)| !**l && **s < t).count();
        let (spec, sens) = (tn as f64 / neg as f64, tp as f64 / pos as f64);
        if spec >= target && best.is_none_or(|(bs, bsens)| spec < bs || (spec == bs && sens > bsens)) {
            best = Some((spec, sens));
        }
    }
    Ok(best.map_or(0.0, |(_, sens)| sens))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn hand_counted_auroc() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(MetricsError::SingleClass)));
    }

    #[test]
    fn perfect_separation() {
        let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(sensitivity_at_specificity(&scores, &labels, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn specificity_is_approached_from_above() {
        // Negatives at 0..9, positives at 7.5 and 20: t = 9 is the only cut
        // with specificity 0.9 (t = 8 gives 0.8).
        let mut scores: Vec<f64> = (0..10).map(f64::from).collect();
        scores.extend([7.5, 20.0]);
        let labels: Vec<bool> = (0..12).map(|i| i >= 10).collect();
        assert_eq!(sensitivity_at_specificity(&scores, &labels, 0.9).unwrap(), 0.5);
    }

    #[test]
    fn auroc_is_invariant_under_monotone_maps() {
        let x = features(200, 1, 3);
        let labels: Vec<bool> = x.iter().enumerate().map(|(i, r)| r[0] + 0.3 * ((i * 7919) % 13) as f64 / 13.0 > 0.2).collect();
        let s: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let a = auroc(&s, &labels).unwrap();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        assert_eq!(a, auroc(&t, &labels).unwrap());
    }

    #[test]
    fn exact_linear_targets_are_recovered() {
        let x = features(80, 30, 1);
        let w: Vec<f64> = (0..30).map(|j| j as f64 * 0.1 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 + dot(&w, r)).collect();
        let p = Probe::Linear(fit_linear_probe(&x, &y, 0.0).unwrap());
        let r = evaluate_probe(&p, &x, Targets::Values(&y)).unwrap();
        assert!(r.r2.unwrap() > 1.0 - 1e-12);
        assert!(r.mae.unwrap().mean < 1e-10);
    }

    #[test]
    fn rank_deficient_unregularised_fit_is_rejected() {
        let mut x = features(60, 5, 2);
        for r in &mut x {
            r[4] = 2.0 * r[1];
        }
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        assert!(matches!(fit_linear_probe(&x, &y, 0.0), Err(MetricsError::Conditioning(_))));
        assert!(fit_linear_probe(&x, &y, 1e-3).is_ok());
        assert!(matches!(fit_linear_probe(&x[..5], &y[..5], 1e-3), Err(MetricsError::InsufficientSamples { .. })));
    }

    #[test]
    fn logistic_separates_on_one_coordinate() {
        let x = features(100, 30, 4);
        let labels: Vec<bool> = x.iter().map(|r| r[7] > 0.1).collect();
        let fit = fit_logistic_probe(&x, &labels, 1e-3).unwrap();
        let p = Probe::Logistic(fit.clone());
        let r = evaluate_probe(&p, &x, Targets::Labels(&labels)).unwrap();
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(fit, fit_logistic_probe(&x, &labels, 1e-3).unwrap());
    }

    #[test]
    fn random_labels_give_chance_auroc() {
        // One 100-beat test split has AUROC SD ≈ 0.058 under the null, so
        // average 20 independent draws (SD ≈ 0.013).
        let draws: Vec<f64> = (0..20)
            .map(|seed| {
                let x = features(1000, 30, 100 + seed);
                let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
                let labels: Vec<bool> = (0..1000).map(|_| rng.random_bool(0.5)).collect();
                let p = Probe::Logistic(fit_logistic_probe(&x[..900], &labels[..900], 1e-3).unwrap());
                evaluate_probe(&p, &x[900..], Targets::Labels(&labels[900..])).unwrap().auroc.unwrap()
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn gradient_is_small_at_the_solution() {
        let x = features(120, 3, 8);
        let labels: Vec<bool> = x.iter().map(|r| (r[0] - r[2] > 0.0) ^ (r[1] > 0.8)).collect();
        let f = fit_logistic_probe(&x, &labels, 0.01).unwrap();
        let mut g = [0.0; 4];
        for (r, &l) in x.iter().zip(&labels) {
            let e = sigmoid(f.bias + dot(&f.weights, r)) - f64::from(u8::from(l));
            for j in 0..3 {
                g[j] += e * r[j] / 120.0;
            }
            g[3] += e / 120.0;
        }
        for j in 0..3 {
            g[j] += 0.01 * f.weights[j];
        }
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn logistic_fit_converges_on_nearly_constant_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..200).map(|_| (0..30).map(|j| 3.0 + j as f64 + 1e-7 * rng.random::<f64>()).collect()).collect();
        let labels: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let f = fit_logistic_probe(&x, &labels, 1e-2).unwrap();
        let rate = Probe::Logistic(f).predict(&x[0]);
        assert!((rate - 1.0 / 3.0).abs() < 0.01, "{rate}");
    }
}
