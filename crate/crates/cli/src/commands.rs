//! The seven subcommands. Each reads its upstream artifacts from the run
//! directory, writes its outputs atomically and returns what it wrote.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use ecglatent_core::latent_models::{build_network, LatentEncoding, LatentModel, PcaModel, TrainingLog};
use ecglatent_core::metrics::{
    evaluate_probe, fit_linear_probe, fit_logistic_probe, is_held_out, measure_beat, reconstruction_metrics,
    MeasurementSet, Probe, ProbeReport, ReconstructionReport, ReconstructionSummary, Table, Targets,
};
use ecglatent_core::preprocess::{preprocess_record, KorsMatrix, ScalingParams, XyzBeat};
use ecglatent_core::signal_io::{decode_dataset, encode_dataset, synthetic_corpus};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{
    csv_with_digest, read_artifact, read_upstream, sha256_hex, training_log_rows, write_atomic, Checkpoint, Meta,
    RunDir, CHECKPOINT_KIND,
};
use crate::config::{ModelKind, RunConfig};
use crate::{svg, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    Preprocess,
    Train,
    Encode,
    Reconstruct,
    Evaluate,
    Probe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Train => "train",
            Command::Encode => "encode",
            Command::Reconstruct => "reconstruct",
            Command::Evaluate => "evaluate",
            Command::Probe => "probe",
        }
    }
}

/// Files written by a command plus an optional human-readable summary.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub summary: Option<String>,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

const DATASET_KIND: &str = "records";
const BEATS_KIND: &str = "beats";

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let ctx = Ctx { cfg, digest: cfg.digest(), dir: RunDir(cfg.paths.out.clone()), command };
    match command {
        Command::Synth => ctx.synth(),
        Command::Preprocess => ctx.preprocess(),
        Command::Train => ctx.train(),
        Command::Encode => ctx.encode(),
        Command::Reconstruct => ctx.reconstruct(),
        Command::Evaluate => ctx.evaluate(),
        Command::Probe => ctx.probe(),
    }
}

#[derive(Serialize, Deserialize)]
struct ScalingFile {
    config_digest: String,
    scaling: ScalingParams,
}

/// Unscaled (µV) beats with their split membership.
pub struct BeatSet {
    pub beats: Vec<XyzBeat>,
    pub scaling: ScalingParams,
}

impl BeatSet {
    pub fn held_out(&self) -> Vec<&XyzBeat> {
        self.beats.iter().filter(|b| is_held_out(&b.source_id)).collect()
    }

    pub fn training(&self) -> Vec<&XyzBeat> {
        self.beats.iter().filter(|b| !is_held_out(&b.source_id)).collect()
    }
}

/// Deterministic subset holding `fraction` of `items` (at least two), in
/// their original order.
pub fn training_subset<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if fraction >= 1.0 {
        return items.to_vec();
    }
    let keep = ((items.len() as f64 * fraction).ceil() as usize).clamp(2.min(items.len()), items.len());
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e_6672_6163));
    let mut chosen = idx[..keep].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

/// Per-beat noise seed for stochastic encoders, independent of beat order.
pub fn epsilon_seed(seed: u64, id: &str) -> u64 {
    let h = sha256_hex(format!("{seed}:{id}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digits")
}

/// Applies `job` to every item on at most `available_parallelism` threads;
/// results keep the order of `items`.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], job: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(job).collect();
    }
    let next = AtomicUsize::new(0);
    let mut done: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(item) = items.get(i) else { break };
                        out.push((i, job(item)));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
    });
    done.sort_by_key(|(i, _)| *i);
    done.into_iter().map(|(_, r)| r).collect()
}

fn f(v: f64) -> String {
    v.to_string()
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    digest: String,
    dir: RunDir,
    command: Command,
}

impl Ctx<'_> {
    fn meta(&self, kind: &str) -> Meta {
        Meta::new(kind, self.command.name(), &self.digest)
    }

    fn csv(&self, header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
        csv_with_digest(&self.digest, self.command.name(), header, rows)
    }

    fn kors(&self) -> Result<KorsMatrix, CliError> {
        Ok(match &self.cfg.paths.kors_matrix {
            Some(p) => KorsMatrix::from_file(p)?,
            None => KorsMatrix::default(),
        })
    }

    fn synth(&self) -> Result<Outcome, CliError> {
        let records = synthetic_corpus(&self.cfg.corpus_params())?;
        let mut out = Outcome::default();
        out.write(self.dir.corpus(), &crate::artifact::envelope(&self.meta(DATASET_KIND), &encode_dataset(&records)?))?;
        out.summary = Some(format!("{} records", records.len()));
        Ok(out)
    }

    fn preprocess(&self) -> Result<Outcome, CliError> {
        let input = self.cfg.paths.input.clone().unwrap_or_else(|| self.dir.corpus());
        let (_, payload) = read_artifact(&input, DATASET_KIND, "synth")?;
        let records = decode_dataset(&payload)?;
        let kors = self.kors()?;
        let mut beats = Vec::new();
        let mut rejected = Vec::new();
        for r in &records {
            match preprocess_record(r, &kors) {
                Ok(b) => beats.push(b),
                Err(e) => rejected.push(vec![r.id().to_string(), e.to_string()]),
            }
        }
        let scaling = ScalingParams::fit(&beats)?;
        let beat_records = beats.iter().map(XyzBeat::to_record).collect::<Result<Vec<_>, _>>()?;
        let mut out = Outcome::default();
        out.write(self.dir.beats(), &crate::artifact::envelope(&self.meta(BEATS_KIND), &encode_dataset(&beat_records)?))?;
        let scaling_json = serde_json::to_vec_pretty(&ScalingFile { config_digest: self.digest.clone(), scaling })
            .expect("scaling serializes");
        out.write(self.dir.scaling(), &scaling_json)?;
        out.write(self.dir.rejected(), &self.csv(&["id".into(), "reason".into()], &rejected))?;
        out.summary = Some(format!("{} beats, {} rejected", beats.len(), rejected.len()));
        Ok(out)
    }

    fn beat_set(&self) -> Result<BeatSet, CliError> {
        let (_, payload) = read_artifact(&self.dir.beats(), BEATS_KIND, "preprocess")?;
        let beats = decode_dataset(&payload)?.iter().map(XyzBeat::from_record).collect::<Result<Vec<_>, _>>()?;
        let path = self.dir.scaling();
        let file: ScalingFile = serde_json::from_slice(&read_upstream(&path, "preprocess")?)
            .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
        Ok(BeatSet { beats, scaling: file.scaling })
    }

    fn checkpoint_path(&self, model: ModelKind) -> PathBuf {
        match (&self.cfg.paths.checkpoint, self.cfg.model.variant) {
            (Some(p), crate::Selection::One(_)) => p.clone(),
            _ => self.dir.checkpoint(model.name()),
        }
    }

    fn train(&self) -> Result<Outcome, CliError> {
        let set = self.beat_set()?;
        let training: Vec<XyzBeat> = set.training().into_iter().map(|b| set.scaling.apply(b)).collect();
        let subset = training_subset(&training, self.cfg.evaluation.train_fraction, self.cfg.seed);
        let models = self.cfg.model.variant.models();
        let results = parallel_map(&models, |&m| self.fit(m, &subset));
        let mut out = Outcome::default();
        let mut lines = Vec::new();
        for (m, r) in models.iter().zip(results) {
            let (model, log) = r?;
            let mut meta = self.meta(CHECKPOINT_KIND);
            if let Some(log) = &log {
                let (h, rows) = training_log_rows(log);
                let bytes = self.csv(&h, &rows);
                meta.training_log_digest = Some(sha256_hex(&bytes));
                out.write(self.dir.training_log(m.name()), &bytes)?;
                if let Some(last) = log.epochs.last() {
                    lines.push(format!("{m}: final loss {:.6}", last.loss.total));
                }
            } else {
                lines.push(format!("{m}: fitted"));
            }
            let ckpt = Checkpoint { meta, model, scaling: set.scaling };
            let path = self.dir.checkpoint(m.name());
            ckpt.save(&path)?;
            out.written.push(path);
        }
        lines.push(format!("trained on {} of {} training beats", subset.len(), training.len()));
        out.summary = Some(lines.join("\n"));
        Ok(out)
    }

    fn fit(&self, model: ModelKind, data: &[XyzBeat]) -> Result<(LatentModel, Option<TrainingLog>), CliError> {
        match model {
            ModelKind::Pca => {
                let mut pca = PcaModel::new(self.cfg.model.latent_dim, XyzBeat::LEN);
                pca.fit_beats(data, self.cfg.model.pca_batch)?;
                Ok((LatentModel::Pca(pca), None))
            }
            ModelKind::Vae(v) => {
                let vc = self.cfg.variant_config(v);
                let mut net = build_network(&vc, self.cfg.seed)?;
                let log = net.train(data, self.cfg.seed.wrapping_add(1))?;
                Ok((LatentModel::Vae(net), Some(log)))
            }
        }
    }

    fn encode(&self) -> Result<Outcome, CliError> {
        let set = self.beat_set()?;
        let mut out = Outcome::default();
        for m in self.cfg.model.variant.models() {
            let ckpt = Checkpoint::load(&self.checkpoint_path(m))?;
            let d = ckpt.model.latent_dim();
            let mut header = vec!["id".to_string()];
            for part in ["mu", "log_var", "z"] {
                header.extend((0..d).map(|i| format!("{part}_{i}")));
            }
            let mut rows = Vec::with_capacity(set.beats.len());
            for b in &set.beats {
                let enc = ckpt.model.encode(&ckpt.scaling.apply(b), epsilon_seed(self.cfg.seed, &b.source_id))?;
                rows.push(encoding_row(&b.source_id, &enc));
            }
            out.write(self.dir.encodings(m.name()), &self.csv(&header, &rows))?;
        }
        Ok(out)
    }

    fn reconstruct(&self) -> Result<Outcome, CliError> {
        let set = self.beat_set()?;
        let held_out = set.held_out();
        let mut out = Outcome::default();
        let mut lines = Vec::new();
        for m in self.cfg.model.variant.models() {
            let ckpt = Checkpoint::load(&self.checkpoint_path(m))?;
            let (recs, reports) = reconstruct_all(&ckpt, &held_out)?;
            let header = [
                "id", "mae_p", "mae_qrs", "mae_t", "mae_full", "mse_full", "dtw_full", "mae_x", "mae_y", "mae_z", "dtw_x",
                "dtw_y", "dtw_z",
            ]
            .map(String::from);
            let rows: Vec<Vec<String>> = held_out.iter().zip(&reports).map(|(b, r)| report_row(&b.source_id, r)).collect();
            out.write(self.dir.reconstruction_report(m.name()), &self.csv(&header, &rows))?;
            let records = recs.iter().map(XyzBeat::to_record).collect::<Result<Vec<_>, _>>()?;
            out.write(
                self.dir.reconstructions(m.name()),
                &crate::artifact::envelope(&self.meta(BEATS_KIND), &encode_dataset(&records)?),
            )?;
            for (b, r) in held_out.iter().zip(&recs).take(self.cfg.export.plots) {
                let title = format!("{m} {}", b.source_id);
                out.write(self.dir.plot(m.name(), &b.source_id), svg::beat_comparison(&title, b, r).as_bytes())?;
            }
            let s = ReconstructionSummary::of(&reports);
            lines.push(format!("{m}: full-signal MAE {} µV over {} held-out beats", s.mae_full, s.beats));
        }
        out.summary = Some(lines.join("\n"));
        Ok(out)
    }

    /// Checkpoints present in the run directory, in canonical model order.
    fn checkpoints(&self) -> Result<Vec<(ModelKind, Checkpoint)>, CliError> {
        let mut found = Vec::new();
        for m in ModelKind::ALL {
            let p = self.dir.checkpoint(m.name());
            if p.exists() {
                found.push((m, Checkpoint::load(&p)?));
            }
        }
        if found.is_empty() {
            return Err(CliError::MissingArtifact { path: self.dir.models().join("*.ckpt"), command: "train".into() });
        }
        Ok(found)
    }

    fn evaluate(&self) -> Result<Outcome, CliError> {
        let set = self.beat_set()?;
        let held_out = set.held_out();
        let ckpts = self.checkpoints()?;
        let summaries =
            parallel_map(&ckpts, |(_, c)| reconstruct_all(c, &held_out).map(|(_, r)| ReconstructionSummary::of(&r)));
        let mut table = Table::new(EVALUATION_COLUMNS);
        for ((m, _), s) in ckpts.iter().zip(summaries) {
            let s = s?;
            table.push([
                m.name().to_string(),
                s.mae_p.to_string(),
                s.mae_qrs.to_string(),
                s.mae_t.to_string(),
                s.mae_full.to_string(),
                s.mse_full.to_string(),
                s.dtw_full.to_string(),
            ])?;
        }
        let mut out = Outcome::default();
        out.write(self.dir.evaluation(), &self.csv(&table.columns, &table.rows))?;
        out.summary = Some(table.to_pretty());
        Ok(out)
    }

    fn probe(&self) -> Result<Outcome, CliError> {
        let set = self.beat_set()?;
        let ckpts = self.checkpoints()?;
        let train = training_subset(&set.training(), self.cfg.evaluation.train_fraction, self.cfg.seed);
        let test = set.held_out();
        let m_train: Vec<MeasurementSet> = train.iter().map(|b| measure_beat(b)).collect();
        let m_test: Vec<MeasurementSet> = test.iter().map(|b| measure_beat(b)).collect();
        let mut table = Table::new(PROBE_COLUMNS);
        for (m, ckpt) in &ckpts {
            let x_train = features(ckpt, &train)?;
            let x_test = features(ckpt, &test)?;
            let tasks = probe_tasks(&x_train, &m_train, &x_test, &m_test, self.cfg.evaluation.probe_l2, self.cfg.evaluation.logistic_l2)?;
            for (target, report) in tasks {
                table.push(probe_row(m.name(), &target, train.len(), &report))?;
            }
        }
        let mut out = Outcome::default();
        out.write(self.dir.probe(), &self.csv(&table.columns, &table.rows))?;
        out.summary = Some(table.to_pretty());
        Ok(out)
    }
}

pub const EVALUATION_COLUMNS: [&str; 7] =
    ["Model", "P-wave MAE", "QRS MAE", "T-wave MAE", "Full signal MAE", "Full signal MSE", "Full signal DTW"];

pub const PROBE_COLUMNS: [&str; 9] =
    ["Model", "Target", "Task", "Train samples", "Test samples", "R2", "MAE", "AUROC", "Sens@Spec0.9"];

fn encoding_row(id: &str, enc: &LatentEncoding) -> Vec<String> {
    let mut row = vec![id.to_string()];
    row.extend(enc.mu.iter().map(|v| f(*v)));
    match &enc.log_var {
        Some(lv) => row.extend(lv.iter().map(|v| f(*v))),
        None => row.extend(std::iter::repeat_n(String::new(), enc.dim())),
    }
    row.extend(enc.z.iter().map(|v| f(*v)));
    row
}

fn report_row(id: &str, r: &ReconstructionReport) -> Vec<String> {
    let mut row = vec![id.to_string()];
    row.extend([r.mae_p, r.mae_qrs, r.mae_t, r.mae_full, r.mse_full, r.dtw_full].map(f));
    row.extend(r.per_lead.iter().map(|l| f(l.mae)));
    row.extend(r.per_lead.iter().map(|l| f(l.dtw)));
    row
}

/// Reconstructs unscaled beats through a checkpoint; results are in µV.
pub fn reconstruct_all(
    ckpt: &Checkpoint,
    beats: &[&XyzBeat],
) -> Result<(Vec<XyzBeat>, Vec<ReconstructionReport>), CliError> {
    let mut recs = Vec::with_capacity(beats.len());
    let mut reports = Vec::with_capacity(beats.len());
    for b in beats {
        let r = ckpt.scaling.invert(&ckpt.model.reconstruct(&ckpt.scaling.apply(b))?);
        reports.push(reconstruction_metrics(b, &r)?);
        recs.push(r);
    }
    Ok((recs, reports))
}

/// Probe features: the posterior mean (the deterministic part of the encoding).
pub fn features(ckpt: &Checkpoint, beats: &[&XyzBeat]) -> Result<Vec<Vec<f64>>, CliError> {
    beats.iter().map(|b| Ok(ckpt.model.encode(&ckpt.scaling.apply(b), 0)?.mu)).collect()
}

/// Regression probes for the three measurements and a classification probe
/// for "VTI above the training median".
pub fn probe_tasks(
    x_train: &[Vec<f64>],
    m_train: &[MeasurementSet],
    x_test: &[Vec<f64>],
    m_test: &[MeasurementSet],
    l2: f64,
    logistic_l2: f64,
) -> Result<Vec<(String, ProbeReport)>, CliError> {
    type Get = fn(&MeasurementSet) -> f64;
    let targets: [(&str, Get); 3] = [
        ("vti_qrs_3d_uvs", |m| m.vti_qrs_3d_uvs),
        ("amplitude_qrs_3d_uv", |m| m.amplitude_qrs_3d_uv),
        ("qrs_duration_ms", |m| m.qrs_duration_ms),
    ];
    let mut out = Vec::new();
    for (name, get) in targets {
        let y: Vec<f64> = m_train.iter().map(get).collect();
        let yt: Vec<f64> = m_test.iter().map(get).collect();
        let probe = Probe::Linear(fit_linear_probe(x_train, &y, l2)?);
        out.push((name.to_string(), evaluate_probe(&probe, x_test, Targets::Values(&yt))?));
    }
    let mut vti: Vec<f64> = m_train.iter().map(|m| m.vti_qrs_3d_uvs).collect();
    vti.sort_by(f64::total_cmp);
    let median = if vti.len() % 2 == 1 { vti[vti.len() / 2] } else { 0.5 * (vti[vti.len() / 2 - 1] + vti[vti.len() / 2]) };
    let labels: Vec<bool> = m_train.iter().map(|m| m.vti_qrs_3d_uvs > median).collect();
    let labels_t: Vec<bool> = m_test.iter().map(|m| m.vti_qrs_3d_uvs > median).collect();
    let probe = Probe::Logistic(fit_logistic_probe(x_train, &labels, logistic_l2)?);
    out.push(("vti_above_median".to_string(), evaluate_probe(&probe, x_test, Targets::Labels(&labels_t))?));
    Ok(out)
}

fn probe_row(model: &str, target: &str, n_train: usize, r: &ProbeReport) -> Vec<String> {
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    vec![
        model.to_string(),
        target.to_string(),
        format!("{:?}", r.kind).to_lowercase(),
        n_train.to_string(),
        r.samples.to_string(),
        opt(r.r2),
        r.mae.map(|m| m.to_string()).unwrap_or_default(),
        opt(r.auroc),
        opt(r.sensitivity_at_spec90),
    ]
}

/// Loads a checkpoint by path (for callers outside a run directory).
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path)
}
