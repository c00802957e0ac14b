//! Central finite-difference verification of tape gradients.

use super::{AutodiffError, Network, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Gradient magnitudes below this are compared absolutely rather than relatively.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter tensor.
    pub max_entries_per_param: Option<usize>,
    /// Seed for the training tape (fixes dropout masks across evaluations).
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, floor: 1e-6, max_entries_per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the largest error.
    pub worst_param: Option<String>,
    pub pass: bool,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn failing(&self, tolerance: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error >= tolerance)
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of `objective` against central differences
/// for every trainable parameter in `store`. The store is left unchanged
/// apart from its gradient buffers, which hold the analytic gradient.
pub fn gradient_check<F>(store: &mut ParamStore, mut objective: F, cfg: &GradCheckConfig) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &mut ParamStore) -> Result<Var, AutodiffError>,
{
    let pristine = store.clone();
    let eval = |store: &mut ParamStore, objective: &mut F| -> Result<f64, AutodiffError> {
        let mut tape = Tape::training(cfg.seed);
        let loss = objective(&mut tape, store)?;
        Ok(tape.scalar(loss))
    };

    let mut tape = Tape::training(cfg.seed);
    let loss = objective(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad.clone()).collect();
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();

    let mut params = Vec::new();
    for id in ids {
        let len = store.get(id).value.len();
        let count = cfg.max_entries_per_param.map_or(len, |m| m.min(len));
        let mut check = ParamCheck { name: store.get(id).name.clone(), checked: 0, max_rel_error: 0.0, worst_index: 0 };
        for j in 0..count {
            let idx = j * len / count;
            let original = pristine.get(id).value.data()[idx];
            *store = pristine.clone();
            store.get_mut(id).value.data_mut()[idx] = original + cfg.step;
            let plus = eval(store, &mut objective)?;
            *store = pristine.clone();
            store.get_mut(id).value.data_mut()[idx] = original - cfg.step;
            let minus = eval(store, &mut objective)?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(analytic[id.index()][idx], numeric, cfg.floor);
            if !(err <= check.max_rel_error) {
                check.max_rel_error = err;
                check.worst_index = idx;
            }
            check.checked += 1;
        }
        params.push(check);
    }
    *store = pristine;
    for (p, g) in store.iter_mut().zip(analytic) {
        p.grad = g;
    }

    let worst = params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let max_rel_error = worst.map_or(0.0, |w| w.max_rel_error);
    Ok(GradCheckReport {
        max_rel_error,
        worst_param: worst.map(|w| w.name.clone()),
        pass: max_rel_error < cfg.tolerance,
        params,
    })
}

/// Gradient check of `network` under the loss `½·Σ output²` on `input`.
pub fn gradient_check_network(
    network: &Network,
    store: &mut ParamStore,
    input: &Tensor,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, AutodiffError> {
    gradient_check(
        store,
        |tape, store| {
            let x = tape.input(input.clone());
            let y = network.forward(tape, store, x)?;
            let sq = tape.mul(y, y)?;
            let s = tape.sum(sq);
            Ok(tape.scale(s, 0.5))
        },
        cfg,
    )
}
