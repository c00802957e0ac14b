use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::encoding::LatentEncoding;
use super::LatentError;
use crate::preprocess::XyzBeat;

/// Incremental PCA by merge-SVD.
///
/// Up to `max_rank` right singular vectors are carried between batches so
/// that merging stays exact while the data rank is below that cap; only the
/// leading `n_components` are exposed.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    n_components: usize,
    max_rank: usize,
    dim: usize,
    mean: Vec<f64>,
    /// `rank × dim`, orthonormal rows.
    basis: Vec<f64>,
    singular_values: Vec<f64>,
    samples_seen: usize,
}

/// Header fields of a serialized model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct PcaMeta {
    pub n_components: usize,
    pub max_rank: usize,
    pub dim: usize,
    pub samples_seen: usize,
}

impl PcaModel {
    pub const DEFAULT_MAX_RANK: usize = 256;

    pub fn new(n_components: usize, dim: usize) -> Self {
        Self::with_max_rank(n_components, dim, Self::DEFAULT_MAX_RANK.max(n_components))
    }

    pub fn with_max_rank(n_components: usize, dim: usize, max_rank: usize) -> Self {
        assert!(n_components >= 1 && max_rank >= n_components && dim >= 1);
        Self { n_components, max_rank, dim, mean: vec![0.0; dim], basis: Vec::new(), singular_values: Vec::new(), samples_seen: 0 }
    }

    /// 30 components over flattened X/Y/Z beats.
    pub fn for_beats() -> Self {
        Self::new(30, XyzBeat::LEN)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn exposed(&self) -> usize {
        self.n_components.min(self.singular_values.len())
    }

    /// Leading components, `k × dim` row-major.
    pub fn components(&self) -> &[f64] {
        &self.basis[..self.exposed() * self.dim]
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.basis[i * self.dim..(i + 1) * self.dim]
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values[..self.exposed()]
    }

    pub fn explained_variance(&self) -> Vec<f64> {
        let denom = self.samples_seen.saturating_sub(1).max(1) as f64;
        self.singular_values().iter().map(|s| s * s / denom).collect()
    }

    pub fn partial_fit<S: AsRef<[f64]>>(&mut self, batch: &[S]) -> Result<(), LatentError> {
        let n = batch.len();
        if n == 0 {
            return Err(LatentError::EmptyBatch);
        }
        for row in batch {
            let row = row.as_ref();
            if row.len() != self.dim {
                return Err(LatentError::Shape { what: "PCA sample".into(), expected: self.dim, got: row.len() });
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(LatentError::NonFinite("PCA sample".into()));
            }
        }
        let d = self.dim;
        let mut batch_mean = vec![0.0; d];
        for row in batch {
            for (m, v) in batch_mean.iter_mut().zip(row.as_ref()) {
                *m += v;
            }
        }
        batch_mean.iter_mut().for_each(|m| *m /= n as f64);

        let seen = self.samples_seen;
        let total = seen + n;
        let rank = self.singular_values.len();
        let extra = usize::from(seen > 0);
        let rows = rank + n + extra;
        let mut stacked = DMatrix::<f64>::zeros(rows, d);
        for r in 0..rank {
            let s = self.singular_values[r];
            for (c, v) in self.component(r).iter().enumerate() {
                stacked[(r, c)] = s * v;
            }
        }
        for (i, row) in batch.iter().enumerate() {
            for (c, (v, m)) in row.as_ref().iter().zip(&batch_mean).enumerate() {
                stacked[(rank + i, c)] = v - m;
            }
        }
        if seen > 0 {
            let k = ((seen * n) as f64 / total as f64).sqrt();
            for c in 0..d {
                stacked[(rows - 1, c)] = k * (self.mean[c] - batch_mean[c]);
            }
        }

        let (singular, basis) = right_singular_pairs(&stacked, self.max_rank);
        for (m, b) in self.mean.iter_mut().zip(&batch_mean) {
            *m = (seen as f64 * *m + n as f64 * b) / total as f64;
        }
        self.basis = basis;
        self.singular_values = singular;
        self.samples_seen = total;
        Ok(())
    }

    fn require_fitted(&self) -> Result<(), LatentError> {
        if self.samples_seen < self.n_components || self.singular_values.len() < self.n_components {
            return Err(LatentError::NotFitted { seen: self.samples_seen, needed: self.n_components });
        }
        Ok(())
    }

    /// `components × (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, LatentError> {
        self.require_fitted()?;
        if x.len() != self.dim {
            return Err(LatentError::Shape { what: "PCA sample".into(), expected: self.dim, got: x.len() });
        }
        Ok((0..self.n_components)
            .map(|i| self.component(i).iter().zip(x).zip(&self.mean).map(|((c, v), m)| c * (v - m)).sum())
            .collect())
    }

    /// `componentsᵀ × code + mean`.
    pub fn inverse(&self, code: &[f64]) -> Result<Vec<f64>, LatentError> {
        self.require_fitted()?;
        if code.len() != self.n_components {
            return Err(LatentError::Shape { what: "PCA code".into(), expected: self.n_components, got: code.len() });
        }
        let mut out = self.mean.clone();
        for (i, &a) in code.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(i)) {
                *o += a * c;
            }
        }
        Ok(out)
    }

    pub fn encode(&self, beat: &XyzBeat) -> Result<LatentEncoding, LatentError> {
        Ok(LatentEncoding::deterministic(self.transform(beat.samples())?, 0))
    }

    pub fn decode(&self, code: &[f64]) -> Result<XyzBeat, LatentError> {
        Ok(XyzBeat::new("decoded", self.inverse(code)?)?)
    }

    pub fn reconstruct(&self, beat: &XyzBeat) -> Result<XyzBeat, LatentError> {
        let mut out = self.decode(&self.transform(beat.samples())?)?;
        out.source_id = beat.source_id.clone();
        Ok(out)
    }

    /// Fits on `beats` in chunks of `batch_size`.
    pub fn fit_beats(&mut self, beats: &[XyzBeat], batch_size: usize) -> Result<(), LatentError> {
        for chunk in beats.chunks(batch_size.max(1)) {
            let rows: Vec<&[f64]> = chunk.iter().map(|b| b.samples()).collect();
            self.partial_fit(&rows)?;
        }
        Ok(())
    }

    pub(crate) fn meta(&self) -> PcaMeta {
        PcaMeta { n_components: self.n_components, max_rank: self.max_rank, dim: self.dim, samples_seen: self.samples_seen }
    }

    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let rank = self.singular_values.len();
        vec![
            ("mean".into(), vec![self.dim], self.mean.clone()),
            ("basis".into(), vec![rank, self.dim], self.basis.clone()),
            ("singular_values".into(), vec![rank], self.singular_values.clone()),
        ]
    }

    pub(crate) fn from_parts(meta: PcaMeta, tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self, LatentError> {
        let bad = |m: &str| LatentError::Format(format!("PCA payload: {m}"));
        if meta.n_components < 1 || meta.max_rank < meta.n_components || meta.dim < 1 {
            return Err(bad("invalid dimensions"));
        }
        let [(n0, _, mean), (n1, s1, basis), (n2, _, singular_values)]: [_; 3] =
            tensors.try_into().map_err(|_| bad("expected 3 tensors"))?;
        if (n0.as_str(), n1.as_str(), n2.as_str()) != ("mean", "basis", "singular_values") {
            return Err(bad("unexpected tensor names"));
        }
        let rank = singular_values.len();
        if mean.len() != meta.dim || s1 != [rank, meta.dim] || basis.len() != rank * meta.dim || rank > meta.max_rank {
            return Err(bad("inconsistent shapes"));
        }
        Ok(Self {
            n_components: meta.n_components,
            max_rank: meta.max_rank,
            dim: meta.dim,
            mean,
            basis,
            singular_values,
            samples_seen: meta.samples_seen,
        })
    }
}

/// Leading singular values and right singular vectors (rows, orthonormal,
/// sign-normalised) of `m`, from the eigendecomposition of `m mᵀ`.
///
/// The small Gram matrix keeps the factorisation accurate when `m` is
/// rank-deficient, which a centered batch always is. Directions whose
/// singular value is below `1e-7 · s_max` are numerically null and dropped.
fn right_singular_pairs(m: &DMatrix<f64>, max_rank: usize) -> (Vec<f64>, Vec<f64>) {
    let d = m.ncols();
    let eig = SymmetricEigen::new(m * m.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s_max = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let mut singular = Vec::new();
    let mut basis: Vec<f64> = Vec::new();
    for &i in &order {
        let s = eig.eigenvalues[i].max(0.0).sqrt();
        if singular.len() == max_rank || !(s > 1e-7 * s_max) {
            break;
        }
        let mut v: Vec<f64> = (m.transpose() * eig.eigenvectors.column(i)).iter().map(|x| x / s).collect();
        // One re-orthogonalisation pass against the accepted rows.
        for q in basis.chunks_exact(d) {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let lead = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        basis.extend(v.iter().map(|x| sign * x / norm));
        singular.push(s);
    }
    (singular, basis)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    /// Top-`k` principal directions by one-sided Jacobi rotations on the
    /// centered samples: once pairwise orthogonal, the rotated samples are
    /// the right singular vectors scaled by the singular values.
    fn jacobi_oracle(data: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
        let (n, d) = (data.len(), data[0].len());
        let mean: Vec<f64> = (0..d).map(|c| data.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
        let mut cols: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for _ in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (alpha, beta, gamma) = (dot(&cols[p], &cols[p]), dot(&cols[q], &cols[q]), dot(&cols[p], &cols[q]));
                    if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let (lo, hi) = cols.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (a, b) = (*x, *y);
                        *x = c * a - s * b;
                        *y = s * a + c * b;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        cols.sort_by(|a, b| dot(b, b).total_cmp(&dot(a, a)));
        cols.truncate(k);
        cols.into_iter().map(|c| {
            let norm = dot(&c, &c).sqrt();
            c.iter().map(|v| v / norm).collect()
        }).collect()
    }

    /// Largest principal angle between row spaces of orthonormal `a` and `b`,
    /// via the residual of projecting `a` onto `b`.
    fn max_principal_angle(a: &[&[f64]], b: &[Vec<f64>]) -> f64 {
        let mut residual = DMatrix::<f64>::zeros(a.len(), a[0].len());
        for (i, row) in a.iter().enumerate() {
            let mut r = row.to_vec();
            for q in b {
                let dot: f64 = row.iter().zip(q).map(|(x, y)| x * y).sum();
                r.iter_mut().zip(q).for_each(|(x, y)| *x -= dot * y);
            }
            residual.row_mut(i).iter_mut().zip(r).for_each(|(x, y)| *x = y);
        }
        residual.singular_values().max().min(1.0).asin()
    }

    fn orthonormality_error(m: &PcaModel) -> f64 {
        let k = m.components().len() / m.dim();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = m.component(i).iter().zip(m.component(j)).map(|(a, b)| a * b).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    #[test]
    fn single_batch_matches_jacobi_oracle() {
        let data = random(80, 300, 1);
        let mut m = PcaModel::new(10, 300);
        m.partial_fit(&data).unwrap();
        let rows: Vec<&[f64]> = (0..10).map(|i| m.component(i)).collect();
        assert!(max_principal_angle(&rows, &jacobi_oracle(&data, 10)) < 1e-6);
        assert!(orthonormality_error(&m) < 1e-8);
    }

    #[test]
    fn incremental_matches_single_batch() {
        let data = random(120, 200, 2);
        let mut one = PcaModel::new(10, 200);
        one.partial_fit(&data).unwrap();
        let mut inc = PcaModel::new(10, 200);
        for chunk in data.chunks(30) {
            inc.partial_fit(chunk).unwrap();
        }
        for (a, b) in one.explained_variance().iter().zip(inc.explained_variance()) {
            assert!((a - b).abs() <= 1e-6 * a);
        }
        for (a, b) in one.mean().iter().zip(inc.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
        let rows: Vec<&[f64]> = (0..10).map(|i| inc.component(i)).collect();
        let oracle: Vec<Vec<f64>> = (0..10).map(|i| one.component(i).to_vec()).collect();
        assert!(max_principal_angle(&rows, &oracle) < 1e-6);
        assert!(max_principal_angle(&rows, &jacobi_oracle(&data, 10)) < 1e-6);
    }

    #[test]
    fn merged_factors_reproduce_the_scatter_matrix() {
        let data = random(90, 60, 4);
        let mut m = PcaModel::new(5, 60);
        for (k, chunk) in data.chunks(30).enumerate() {
            m.partial_fit(chunk).unwrap();
            let seen = &data[..(k + 1) * 30];
            let mean: Vec<f64> = (0..60).map(|c| seen.iter().map(|r| r[c]).sum::<f64>() / seen.len() as f64).collect();
            let x = DMatrix::from_fn(seen.len(), 60, |r, c| seen[r][c] - mean[c]);
            let rank = m.singular_values.len();
            let b = DMatrix::from_fn(rank, 60, |i, c| m.basis[i * 60 + c] * m.singular_values[i]);
            let err = (b.transpose() * &b - x.transpose() * &x).abs().max();
            assert!(err < 1e-10, "batch {k}: {err}");
        }
    }

    #[test]
    fn exact_affine_subspace_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (dim, k) = (120, 30);
        let basis = random(k, dim, 6);
        let offset: Vec<f64> = (0..dim).map(|i| i as f64 * 0.01).collect();
        let data: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let coef: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
                (0..dim).map(|c| offset[c] + (0..k).map(|j| coef[j] * basis[j][c]).sum::<f64>()).collect()
            })
            .collect();
        let mut m = PcaModel::new(k, dim);
        m.partial_fit(&data[..50]).unwrap();
        m.partial_fit(&data[50..]).unwrap();
        for x in &data {
            let back = m.inverse(&m.transform(x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(back) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn reconstruction_error_decreases_with_rank() {
        let data = random(60, 50, 8);
        let mut m = PcaModel::new(20, 50);
        m.partial_fit(&data).unwrap();
        let x = &data[3];
        let code = m.transform(x).unwrap();
        let mut last = f64::INFINITY;
        for keep in 0..=20 {
            let mut c = code.clone();
            c[keep..].iter_mut().for_each(|v| *v = 0.0);
            let r = m.inverse(&c).unwrap();
            let err: f64 = x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn sign_convention_and_ordering() {
        let mut m = PcaModel::new(5, 40);
        m.partial_fit(&random(30, 40, 9)).unwrap();
        for i in 0..5 {
            let c = m.component(i);
            let lead = c.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(lead > 0.0);
        }
        let ev = m.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transform_before_fitting_is_rejected() {
        let mut m = PcaModel::new(30, 10);
        assert!(matches!(m.transform(&[0.0; 10]), Err(LatentError::NotFitted { .. })));
        m.partial_fit(&random(5, 10, 0)).unwrap();
        assert!(matches!(m.transform(&[0.0; 10]), Err(LatentError::NotFitted { seen: 5, needed: 30 })));
        assert!(m.partial_fit(&[vec![0.0; 3]]).is_err());
        assert!(m.partial_fit::<Vec<f64>>(&[]).is_err());
    }
}
