use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamId, ParamStore, Tape, Var};

/// One layer of a sequential network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { filters: usize, kernel: usize, stride: usize },
    /// `out_len` is the target output length; it must satisfy
    /// `ceil(out_len / stride) == input length`.
    ConvTranspose { filters: usize, kernel: usize, stride: usize, out_len: usize },
    Dense { units: usize, l2: f64 },
    Tanh,
    BatchNorm { momentum: f64, eps: f64 },
    Dropout { rate: f64 },
    /// Reshape the per-sample shape (batch axis untouched).
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm { momentum: 0.99, eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<(), AutodiffError> {
        let bad = |msg: &str| Err(AutodiffError::InvalidSpec(msg.to_string()));
        match self {
            LayerSpec::Conv { filters, kernel, stride } | LayerSpec::ConvTranspose { filters, kernel, stride, .. } => {
                if *kernel < 1 {
                    return bad("kernel width must be >= 1");
                }
                if *stride < 1 {
                    return bad("stride must be >= 1");
                }
                if *filters < 1 {
                    return bad("filter count must be >= 1");
                }
            }
            LayerSpec::Dense { units, l2 } => {
                if *units < 1 {
                    return bad("dense units must be >= 1");
                }
                if !(*l2 >= 0.0) {
                    return bad("L2 coefficient must be >= 0");
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return bad("dropout rate must be in [0, 1)");
                }
            }
            LayerSpec::BatchNorm { momentum, eps } => {
                if !(0.0..=1.0).contains(momentum) || !(*eps > 0.0) {
                    return bad("batchnorm momentum must be in [0, 1] and eps > 0");
                }
            }
            LayerSpec::Tanh | LayerSpec::Reshape { .. } => {}
        }
        Ok(())
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Tanh => "tanh",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    spec: LayerSpec,
    label: String,
    /// Trainable tensors (weight, bias) or (gamma, beta).
    params: Vec<ParamId>,
    /// Batchnorm running (mean, var).
    buffers: Vec<ParamId>,
    /// Per-sample output shape.
    out_shape: Vec<usize>,
}

/// A sequential stack of layers whose tensors live in a shared [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds the network, registering its parameters in `store`.
    /// `input_shape` excludes the batch axis.
    pub fn new<R: Rng>(
        name: &str,
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let label = format!("{name}.{i}.{}", spec.name());
            let mismatch = |expected: Vec<usize>, got: &[usize]| AutodiffError::Shape {
                layer: label.clone(),
                expected,
                got: got.to_vec(),
            };
            let mut params = Vec::new();
            let mut buffers = Vec::new();
            let out_shape = match spec {
                LayerSpec::Conv { filters, kernel, stride } => {
                    let [c_in, len] = shape[..] else { return Err(mismatch(vec![0, 0], &shape)) };
                    params.push(store.add_glorot(
                        format!("{label}.weight"),
                        vec![*filters, c_in, *kernel],
                        c_in * kernel,
                        filters * kernel,
                        rng,
                    ));
                    params.push(store.add(format!("{label}.bias"), super::Tensor::zeros(vec![*filters]), true));
                    vec![*filters, len.div_ceil(*stride)]
                }
                LayerSpec::ConvTranspose { filters, kernel, stride, out_len } => {
                    let [c_in, len] = shape[..] else { return Err(mismatch(vec![0, 0], &shape)) };
                    if out_len.div_ceil(*stride) != len {
                        return Err(mismatch(vec![c_in, out_len.div_ceil(*stride)], &shape));
                    }
                    params.push(store.add_glorot(
                        format!("{label}.weight"),
                        vec![c_in, *filters, *kernel],
                        c_in * kernel,
                        filters * kernel,
                        rng,
                    ));
                    params.push(store.add(format!("{label}.bias"), super::Tensor::zeros(vec![*filters]), true));
                    vec![*filters, *out_len]
                }
                LayerSpec::Dense { units, .. } => {
                    let [inp] = shape[..] else { return Err(mismatch(vec![0], &shape)) };
                    params.push(store.add_glorot(format!("{label}.weight"), vec![*units, inp], inp, *units, rng));
                    params.push(store.add(format!("{label}.bias"), super::Tensor::zeros(vec![*units]), true));
                    vec![*units]
                }
                LayerSpec::BatchNorm { .. } => {
                    let ch = *shape.first().ok_or_else(|| mismatch(vec![0], &shape))?;
                    params.push(store.add(format!("{label}.gamma"), super::Tensor::filled(vec![ch], 1.0), true));
                    params.push(store.add(format!("{label}.beta"), super::Tensor::zeros(vec![ch]), true));
                    buffers.push(store.add(format!("{label}.running_mean"), super::Tensor::zeros(vec![ch]), false));
                    buffers.push(store.add(format!("{label}.running_var"), super::Tensor::filled(vec![ch], 1.0), false));
                    shape.clone()
                }
                LayerSpec::Reshape { shape: target } => {
                    if target.iter().product::<usize>() != shape.iter().product::<usize>() {
                        return Err(mismatch(target.clone(), &shape));
                    }
                    target.clone()
                }
                LayerSpec::Tanh | LayerSpec::Dropout { .. } => shape.clone(),
            };
            layers.push(Layer { spec: spec.clone(), label, params, buffers, out_shape: out_shape.clone() });
            shape = out_shape;
        }
        Ok(Self { name: name.to_string(), input_shape, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map(|l| l.out_shape.as_slice()).unwrap_or(&self.input_shape)
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    /// Runs the stack on `x` (`[batch, ..input_shape]`). In training mode the
    /// batchnorm running statistics in `store` are updated.
    pub fn forward(&self, tape: &mut Tape, store: &mut ParamStore, x: Var) -> Result<Var, AutodiffError> {
        let got = tape.shape(x);
        if got.len() != self.input_shape.len() + 1 || got[1..] != self.input_shape[..] {
            let mut expected = vec![got.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(AutodiffError::Shape { layer: format!("{}.input", self.name), expected, got: got.to_vec() });
        }
        let batch = got[0];
        let mut h = x;
        for layer in &self.layers {
            h = self.apply(layer, tape, store, h, batch).map_err(|e| match e {
                AutodiffError::Shape { expected, got, .. } => {
                    AutodiffError::Shape { layer: layer.label.clone(), expected, got }
                }
                other => other,
            })?;
        }
        Ok(h)
    }

    fn apply(
        &self,
        layer: &Layer,
        tape: &mut Tape,
        store: &mut ParamStore,
        h: Var,
        batch: usize,
    ) -> Result<Var, AutodiffError> {
        match &layer.spec {
            LayerSpec::Conv { stride, .. } => {
                let (w, b) = (tape.param(store, layer.params[0]), tape.param(store, layer.params[1]));
                tape.conv1d(h, w, b, *stride)
            }
            LayerSpec::ConvTranspose { stride, out_len, .. } => {
                let (w, b) = (tape.param(store, layer.params[0]), tape.param(store, layer.params[1]));
                tape.conv_transpose1d(h, w, b, *stride, *out_len)
            }
            LayerSpec::Dense { .. } => {
                let (w, b) = (tape.param(store, layer.params[0]), tape.param(store, layer.params[1]));
                tape.dense(h, w, b)
            }
            LayerSpec::Tanh => Ok(tape.tanh(h)),
            LayerSpec::Dropout { rate } => Ok(tape.dropout(h, *rate)),
            LayerSpec::Reshape { shape } => {
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                tape.reshape(h, full)
            }
            LayerSpec::BatchNorm { momentum, eps } => {
                let (g, b) = (tape.param(store, layer.params[0]), tape.param(store, layer.params[1]));
                let (mean_id, var_id) = (layer.buffers[0], layer.buffers[1]);
                if tape.is_training() {
                    let (out, stats) = tape.batch_norm(h, g, b, *eps, None)?;
                    let stats = stats.expect("training batchnorm reports statistics");
                    for (id, fresh) in [(mean_id, &stats.mean), (var_id, &stats.var)] {
                        let buf = store.get_mut(id).value.data_mut();
                        for (r, f) in buf.iter_mut().zip(fresh) {
                            *r = momentum * *r + (1.0 - momentum) * f;
                        }
                    }
                    Ok(out)
                } else {
                    let mean = store.get(mean_id).value.data().to_vec();
                    let var = store.get(var_id).value.data().to_vec();
                    Ok(tape.batch_norm(h, g, b, *eps, Some((&mean, &var)))?.0)
                }
            }
        }
    }

    /// Sum of the L2 penalties of all dense layers, on the tape.
    pub fn l2_penalty(&self, tape: &mut Tape, store: &ParamStore) -> Option<Var> {
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            if let LayerSpec::Dense { l2, .. } = layer.spec {
                if l2 > 0.0 {
                    let w = tape.param(store, layer.params[0]);
                    let p = tape.l2_penalty(w, l2);
                    total = Some(match total {
                        Some(t) => tape.add(t, p).expect("scalars"),
                        None => p,
                    });
                }
            }
        }
        total
    }

    /// Parameter ids owned by this network, trainable first then buffers.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params.iter().chain(&l.buffers).copied()).collect()
    }
}
