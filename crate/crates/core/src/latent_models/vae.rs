use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{standard_normal, LatentEncoding};
use super::loss::LossBreakdown;
use super::schedule::beta_at;
use super::variant::VariantConfig;
use super::LatentError;
use crate::autodiff::{adam_step, Adam, AdamState, LayerSpec, Network, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{Segment, XyzBeat, BEAT_LEN, SEGMENT_LEN};

const ENCODER_FILTERS: [usize; 4] = [256, 256, 512, 512];
const DECODER_FILTERS: [usize; 3] = [512, 256, 128];
const DENSE_WIDTH: usize = 256;
const KERNEL: usize = 9;
const STRIDE: usize = 2;
const DENSE_L2: f64 = 0.01;
const DROPOUT: f64 = 0.25;
/// Initial log-variance bias of stochastic models trained without a KL
/// term. Starting at σ ≈ 0.05 keeps the sampled noise below the spread of
/// μ; at σ ≈ 1 the decoder learns to ignore z before the encoder has
/// separated the beats, and nothing ever pulls σ back down.
pub const LOG_VAR_BIAS_INIT: f64 = -6.0;

fn scaled(n: usize, scale: f64) -> usize {
    ((n as f64 * scale).ceil() as usize).max(1)
}

/// Layer stacks of the four sub-networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub encoder: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub encoder_filters: [usize; 4],
    pub decoder_filters: [usize; 4],
}

pub fn architecture(config: &VariantConfig) -> Architecture {
    let s = config.scale;
    let enc_f = ENCODER_FILTERS.map(|f| scaled(f, s));
    let dec_f = [scaled(DECODER_FILTERS[0], s), scaled(DECODER_FILTERS[1], s), scaled(DECODER_FILTERS[2], s), 3];
    let dense = scaled(DENSE_WIDTH, s);

    let mut lens = vec![BEAT_LEN];
    let mut encoder = Vec::new();
    for &filters in &enc_f {
        encoder.push(LayerSpec::Conv { filters, kernel: KERNEL, stride: STRIDE });
        encoder.push(LayerSpec::batch_norm());
        encoder.push(LayerSpec::Tanh);
        lens.push(lens.last().unwrap().div_ceil(STRIDE));
    }
    let bottom = *lens.last().unwrap();
    encoder.push(LayerSpec::Reshape { shape: vec![enc_f[3] * bottom] });
    for _ in 0..2 {
        encoder.push(LayerSpec::Dense { units: dense, l2: DENSE_L2 });
        encoder.push(LayerSpec::Tanh);
        encoder.push(LayerSpec::Dropout { rate: DROPOUT });
    }

    let head = vec![LayerSpec::Dense { units: config.latent_dim, l2: 0.0 }];

    let mut decoder = vec![
        LayerSpec::Dense { units: dense, l2: 0.0 },
        LayerSpec::Tanh,
        LayerSpec::Dense { units: dec_f[0] * bottom, l2: 0.0 },
        LayerSpec::Tanh,
        LayerSpec::Reshape { shape: vec![dec_f[0], bottom] },
    ];
    for (i, &filters) in dec_f.iter().enumerate() {
        let out_len = lens[3 - i];
        decoder.push(LayerSpec::ConvTranspose { filters, kernel: KERNEL, stride: STRIDE, out_len });
        if i < 3 {
            decoder.push(LayerSpec::batch_norm());
            decoder.push(LayerSpec::Tanh);
        }
    }
    Architecture { encoder, head, decoder, encoder_filters: enc_f, decoder_filters: dec_f }
}

/// Nodes of one recorded forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    /// `L_E + β·KL + L2`.
    pub loss: Var,
    pub reconstruction: Var,
    pub mu: Var,
    pub log_var: Option<Var>,
    pub kl: Option<Var>,
    pub l2: Option<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch-size-weighted means over the epoch.
    pub loss: LossBreakdown,
    pub l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

/// Encoder, latent heads and decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct VaeModel {
    config: VariantConfig,
    store: ParamStore,
    encoder: Network,
    mu_head: Network,
    log_var_head: Network,
    decoder: Network,
}

/// Builds an initialised model for `config`; weights are drawn from `seed`.
pub fn build_network(config: &VariantConfig, seed: u64) -> Result<VaeModel, LatentError> {
    config.validate()?;
    let arch = architecture(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let encoder = Network::new("encoder", vec![3, BEAT_LEN], &arch.encoder, &mut store, &mut rng)?;
    let features = encoder.output_shape().to_vec();
    let mu_head = Network::new("mu", features.clone(), &arch.head, &mut store, &mut rng)?;
    let log_var_head = Network::new("log_var", features, &arch.head, &mut store, &mut rng)?;
    if config.stochastic && config.schedule.is_zero() {
        if let Some(bias) = log_var_head.param_ids().into_iter().find(|&id| store.get(id).name.ends_with(".bias")) {
            store.get_mut(bias).value.data_mut().fill(LOG_VAR_BIAS_INIT);
        }
    }
    let decoder = Network::new("decoder", vec![config.latent_dim], &arch.decoder, &mut store, &mut rng)?;
    debug_assert_eq!(decoder.output_shape(), [3, BEAT_LEN]);
    Ok(VaeModel { config: config.clone(), store, encoder, mu_head, log_var_head, decoder })
}

/// Per-element weights turning a squared-error sum into the batch mean of
/// the segment-weighted MSE.
fn segment_coefficients(config: &VariantConfig, batch: usize) -> Vec<f64> {
    let mut one = vec![0.0; 3 * BEAT_LEN];
    for lead in 0..3 {
        for seg in Segment::ALL {
            let c = config.weights.of(seg) / (3 * SEGMENT_LEN * batch) as f64;
            for i in seg.range() {
                one[lead * BEAT_LEN + i] = c;
            }
        }
    }
    one.repeat(batch)
}

fn stack(beats: &[&XyzBeat]) -> Tensor {
    let data = beats.iter().flat_map(|b| b.samples().iter().copied()).collect();
    Tensor::new(vec![beats.len(), 3, BEAT_LEN], data).expect("beats have fixed length")
}

impl VaeModel {
    pub fn config(&self) -> &VariantConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    /// Records the full training objective on `tape` for `batch`
    /// (`[B, 3, 750]`), reading weights from `store`.
    pub fn objective(&self, tape: &mut Tape, store: &mut ParamStore, batch: &Tensor, beta: f64) -> Result<ForwardPass, LatentError> {
        let b = batch.shape()[0];
        let x = tape.input(batch.clone());
        let h = self.encoder.forward(tape, store, x)?;
        let mu = self.mu_head.forward(tape, store, h)?;
        let (z, log_var, kl) = if self.config.stochastic {
            let lv = self.log_var_head.forward(tape, store, h)?;
            let eps = standard_normal(tape.rng(), b * self.config.latent_dim);
            let z = tape.reparameterize(mu, lv, eps)?;
            let kl = tape.kl_divergence(mu, lv)?;
            (z, Some(lv), Some(kl))
        } else {
            (mu, None, None)
        };
        let reconstruction = self.decoder.forward(tape, store, z)?;
        let mut loss = tape.weighted_square_error(reconstruction, batch, segment_coefficients(&self.config, b))?;
        if let Some(kl) = kl {
            if beta != 0.0 {
                let weighted = tape.scale(kl, beta);
                loss = tape.add(loss, weighted)?;
            }
        }
        let l2 = match (self.encoder.l2_penalty(tape, store), self.decoder.l2_penalty(tape, store)) {
            (Some(a), Some(b)) => Some(tape.add(a, b)?),
            (a, b) => a.or(b),
        };
        if let Some(p) = l2 {
            loss = tape.add(loss, p)?;
        }
        Ok(ForwardPass { loss, reconstruction, mu, log_var, kl, l2 })
    }

    /// Trains for `config.epochs` epochs; shuffling, dropout and sampling
    /// noise are all derived from `seed`.
    pub fn train(&mut self, data: &[XyzBeat], seed: u64) -> Result<TrainingLog, LatentError> {
        self.train_with(data, seed, |_| {})
    }

    pub fn train_with(
        &mut self,
        data: &[XyzBeat],
        seed: u64,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<TrainingLog, LatentError> {
        self.config.validate()?;
        let mut log = TrainingLog::default();
        if self.config.epochs == 0 {
            return Ok(log);
        }
        if data.len() < 2 {
            return Err(LatentError::EmptyBatch);
        }
        let adam = Adam::with_lr(self.config.learning_rate);
        let mut state = AdamState::new(&self.store);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 0..self.config.epochs {
            let beta = beta_at(&self.config.schedule, epoch);
            order.shuffle(&mut rng);
            let mut sums = [0.0f64; 5];
            let mut seen = 0usize;
            for (bi, idx) in order.chunks(self.config.batch_size).enumerate() {
                // Batch statistics are undefined for a single sample.
                if idx.len() < 2 {
                    continue;
                }
                let beats: Vec<&XyzBeat> = idx.iter().map(|&i| &data[i]).collect();
                let batch = stack(&beats);
                let mut tape = Tape::training(rng.next_u64());
                let mut store = std::mem::take(&mut self.store);
                let pass = self.objective(&mut tape, &mut store, &batch, beta);
                self.store = store;
                let pass = pass?;
                let loss = tape.scalar(pass.loss);
                if !loss.is_finite() {
                    return Err(LatentError::Diverged { epoch, batch: bi, detail: format!("loss = {loss}") });
                }
                tape.backward(pass.loss, &mut self.store)?;
                adam_step(&mut self.store, &mut state, &adam)
                    .map_err(|e| LatentError::Diverged { epoch, batch: bi, detail: e.to_string() })?;

                let segs = segment_losses(tape.value(pass.reconstruction).data(), batch.data(), idx.len());
                let n = idx.len() as f64;
                sums[0] += n * segs[0];
                sums[1] += n * segs[1];
                sums[2] += n * segs[2];
                sums[3] += n * pass.kl.map_or(0.0, |k| tape.scalar(k));
                sums[4] += n * pass.l2.map_or(0.0, |k| tape.scalar(k));
                seen += idx.len();
            }
            let m = sums.map(|s| s / seen as f64);
            let entry = EpochLog {
                epoch,
                loss: LossBreakdown::assemble(m[0], m[1], m[2], m[3], beta, &self.config.weights),
                l2: m[4],
            };
            on_epoch(&entry);
            log.epochs.push(entry);
        }
        Ok(log)
    }

    fn check(&self, beat: &XyzBeat) -> Result<(), LatentError> {
        if !beat.samples().iter().all(|v| v.is_finite()) {
            return Err(LatentError::NonFinite(beat.source_id.clone()));
        }
        Ok(())
    }

    /// Inference-mode encoder pass: dropout off, running batchnorm statistics.
    pub fn encode(&self, beat: &XyzBeat, epsilon_seed: u64) -> Result<LatentEncoding, LatentError> {
        self.check(beat)?;
        let mut tape = Tape::inference();
        let mut store = self.store.clone();
        let x = tape.input(stack(&[beat]));
        let h = self.encoder.forward(&mut tape, &mut store, x)?;
        let mu_v = self.mu_head.forward(&mut tape, &mut store, h)?;
        let mu = tape.value(mu_v).data().to_vec();
        if !self.config.stochastic {
            return Ok(LatentEncoding::deterministic(mu, epsilon_seed));
        }
        let lv_v = self.log_var_head.forward(&mut tape, &mut store, h)?;
        Ok(LatentEncoding::sampled(mu, tape.value(lv_v).data().to_vec(), epsilon_seed))
    }

    pub fn decode(&self, z: &[f64]) -> Result<XyzBeat, LatentError> {
        if z.len() != self.config.latent_dim {
            return Err(LatentError::Shape { what: "latent vector".into(), expected: self.config.latent_dim, got: z.len() });
        }
        let mut tape = Tape::inference();
        let mut store = self.store.clone();
        let zv = tape.input(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let out = self.decoder.forward(&mut tape, &mut store, zv)?;
        Ok(XyzBeat::new("decoded", tape.value(out).data().to_vec())?)
    }

    /// `decode(mu)`, keeping the source id.
    pub fn reconstruct(&self, beat: &XyzBeat) -> Result<XyzBeat, LatentError> {
        let enc = self.encode(beat, 0)?;
        let mut out = self.decode(&enc.mu)?;
        out.source_id = beat.source_id.clone();
        Ok(out)
    }

    /// Rebuilds the model for `config` and overwrites every tensor by name.
    pub(crate) fn from_tensors(config: &VariantConfig, tensors: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self, LatentError> {
        let mut model = build_network(config, 0)?;
        if tensors.len() != model.store.len() {
            return Err(LatentError::Format(format!("expected {} tensors, found {}", model.store.len(), tensors.len())));
        }
        for (name, shape, data) in tensors {
            let id = model.store.find(&name).ok_or_else(|| LatentError::Format(format!("unknown tensor {name}")))?;
            let p = model.store.get_mut(id);
            if p.value.shape() != shape.as_slice() {
                return Err(LatentError::Format(format!("tensor {name}: shape {shape:?} != {:?}", p.value.shape())));
            }
            p.value = Tensor::new(shape, data)?;
        }
        Ok(model)
    }
}

/// Batch-mean segment MSEs (P, QRS, T) of `[B, 3, 750]` arrays.
fn segment_losses(pred: &[f64], target: &[f64], batch: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (s, seg) in Segment::ALL.iter().enumerate() {
        let mut sum = 0.0;
        for row in 0..batch * 3 {
            let base = row * BEAT_LEN;
            for i in seg.range() {
                let d = pred[base + i] - target[base + i];
                sum += d * d;
            }
        }
        out[s] = sum / (3 * SEGMENT_LEN * batch) as f64;
    }
    out
}
