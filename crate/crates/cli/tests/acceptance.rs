//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release -p ecglatent-cli --test acceptance -- 1 4 11`.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use ecglatent_cli::artifact::{read_artifact, Checkpoint, RunDir};
use ecglatent_cli::commands::{epsilon_seed, training_subset};
use ecglatent_cli::{run, Command, ModelKind, RunConfig, Selection};
use ecglatent_core::autodiff::{gradient_check, GradCheckConfig, Tensor};
use ecglatent_core::latent_models::{
    beta_at, build_network, elbo_loss, kl_divergence, BetaSchedule, LatentModel, LossWeights, PcaModel, Variant,
    VariantConfig,
};
use ecglatent_core::metrics::{
    auroc, dtw_distance, evaluate_probe, fit_linear_probe, fit_logistic_probe, is_held_out, measure_beat,
    reconstruction_metrics, sensitivity_at_specificity, MeasurementSet, Probe, Targets,
};
use ecglatent_core::preprocess::{scale_dataset, ScalingParams, XyzBeat, BEAT_LEN};
use ecglatent_core::signal_io::decode_dataset;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<(bool, String), String>;

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failures += 1;
        }
        println!("[{}] criterion {n:>2} {name} ({secs:.1} s): {detail}", if ok { "PASS" } else { "FAIL" });
    };

    report(1, "gradient correctness", &mut gradient_correctness);
    report(2, "loss algebra", &mut loss_algebra);
    report(3, "schedule contract", &mut schedule_contract);
    report(4, "DTW oracle", &mut dtw_oracle);
    report(5, "PCA oracle", &mut pca_oracle);

    let mut trained: Option<Result<Trained, String>> = None;
    let mut fixture = || trained.get_or_insert_with(train_desk_scale).clone();
    if wanted(6) {
        report(6, "pipeline convergence", &mut || convergence(&fixture()?));
    }
    if wanted(7) {
        report(7, "downstream probe", &mut || downstream_probe(&fixture()?));
    }
    if wanted(8) {
        report(8, "data efficiency", &mut || data_efficiency(&fixture()?));
    }

    report(9, "measurement oracle", &mut measurement_oracle);
    report(10, "determinism and persistence", &mut determinism);
    report(11, "classification metrics", &mut classification_metrics);

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn bump_beats(n: usize) -> Vec<XyzBeat> {
    let raw: Vec<XyzBeat> = (0..n)
        .map(|k| {
            let amp = 700.0 + 90.0 * k as f64;
            let s = (0..XyzBeat::LEN)
                .map(|i| {
                    let (lead, t) = (i / BEAT_LEN, (i % BEAT_LEN) as f64);
                    let g = [1.0, -0.5, 0.4][lead];
                    g * amp * (-0.5 * ((t - 310.0 - 7.0 * k as f64) / 9.0).powi(2)).exp()
                        + 0.15 * amp * (-0.5 * ((t - 100.0) / 25.0).powi(2)).exp()
                        + 0.25 * amp * (-0.5 * ((t - 580.0) / 40.0).powi(2)).exp()
                })
                .collect();
            XyzBeat::new(format!("g{k}"), s).unwrap()
        })
        .collect();
    scale_dataset(&raw).unwrap().0
}

fn gradient_correctness() -> Outcome {
    let config = VariantConfig { scale: 1.0 / 16.0, ..VariantConfig::new(Variant::Vae) };
    let model = build_network(&config, 3).map_err(err)?;
    let beats = bump_beats(2);
    let data = beats.iter().flat_map(|b| b.samples().iter().copied()).collect();
    let batch = Tensor::new(vec![2, 3, BEAT_LEN], data).map_err(err)?;
    let mut store = model.store().clone();
    let cfg = GradCheckConfig { max_entries_per_param: Some(150), seed: 9, ..Default::default() };
    let start = Instant::now();
    let report = gradient_check(&mut store, |tape, s| Ok(model.objective(tape, s, &batch, 1.0).unwrap().loss), &cfg)
        .map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let checked: usize = report.params.iter().map(|p| p.checked).sum();
    let ok = report.max_rel_error < 1e-4 && secs < 60.0;
    Ok((
        ok,
        format!(
            "{} trainable parameters, {checked} entries over {} tensors, max relative error {:.2e} (worst {}), {secs:.1} s",
            store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.data().len()).sum::<usize>(),
            report.params.len(),
            report.max_rel_error,
            report.worst_param.as_deref().unwrap_or("-")
        ),
    ))
}

fn loss_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = LossWeights::default();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    let mut kl_min = f64::INFINITY;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..XyzBeat::LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xp: Vec<f64> = (0..XyzBeat::LEN).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu: Vec<f64> = (0..30).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let lv: Vec<f64> = (0..30).map(|_| rng.random_range(-4.0..3.0)).collect();
        let beta = rng.random_range(0.0..10.0);
        let b = elbo_loss(&XyzBeat::new("x", x.clone()).unwrap(), &XyzBeat::new("y", xp.clone()).unwrap(), &mu, &lv, beta, &w)
            .map_err(err)?;

        // Independent recomputation.
        let seg = |k: usize| -> f64 {
            let mut s = 0.0;
            for lead in 0..3 {
                for t in 250 * k..250 * (k + 1) {
                    let d = x[lead * BEAT_LEN + t] - xp[lead * BEAT_LEN + t];
                    s += d * d;
                }
            }
            s / 750.0
        };
        let (lp, lq, lt) = (seg(0), seg(1), seg(2));
        let kl = -0.5 * mu.iter().zip(&lv).map(|(m, l)| 1.0 + l - m * m - l.exp()).sum::<f64>();
        for (a, b) in [
            (b.total, b.l_e + b.beta * b.kl),
            (b.l_e, 20.0 * b.l_p + 10.0 * b.l_qrs + 15.0 * b.l_t),
            (b.l_p, lp),
            (b.l_qrs, lq),
            (b.l_t, lt),
            (b.kl, kl),
            (b.total, 20.0 * lp + 10.0 * lq + 15.0 * lt + beta * kl),
        ] {
            worst = worst.max(rel(a, b));
        }
        kl_min = kl_min.min(b.kl);
    }
    let kl0 = kl_divergence(&[0.0; 30], &[0.0; 30]).map_err(err)?;
    let ok = worst <= 1e-12 && kl_min >= 0.0 && kl0 == 0.0;
    Ok((ok, format!("1000 tuples, max relative deviation {worst:.1e}, min KL {kl_min:.3e}, KL(0,0) = {kl0}")))
}

fn schedule_contract() -> Outcome {
    let cyc: Vec<f64> = [0, 5, 10, 15, 20, 30].iter().map(|&e| beta_at(&BetaSchedule::cyclical(), e)).collect();
    let ann: Vec<f64> = [0, 25, 50, 60].iter().map(|&e| beta_at(&BetaSchedule::annealed(), e)).collect();
    let constants: Vec<f64> =
        [Variant::Sae, Variant::Vae, Variant::BetaVae].iter().map(|&v| beta_at(&VariantConfig::new(v).schedule, 7)).collect();
    let ok = cyc == [0.0, 2.5, 5.0, 2.5, 0.0, 5.0] && ann == [10.0, 5.0, 0.0, 0.0] && constants == [0.0, 1.0, 3.0];
    Ok((ok, format!("cyclical {cyc:?}, annealed {ann:?}, SAE/VAE/β-VAE {constants:?}")))
}

/// Minimum over every monotone alignment path, enumerated recursively.
fn brute_dtw(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
    let acc = acc + (a[i] - b[j]).abs();
    if i + 1 == a.len() && j + 1 == b.len() {
        *best = best.min(acc);
        return;
    }
    if i + 1 < a.len() {
        brute_dtw(a, b, i + 1, j, acc, best);
    }
    if j + 1 < b.len() {
        brute_dtw(a, b, i, j + 1, acc, best);
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        brute_dtw(a, b, i + 1, j + 1, acc, best);
    }
}

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..500 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut best = f64::INFINITY;
        brute_dtw(&a, &b, 0, 0, 0.0, &mut best);
        if dtw_distance(&a, &b).map_err(err)? != best {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((mismatches == 0 && secs < 10.0, format!("500 pairs, {mismatches} mismatches, {secs:.2} s")))
}

/// Right singular vectors of `rows` (n × d), by one-sided Jacobi on the
/// columns of its transpose. Returned in decreasing singular-value order.
fn jacobi_axes(rows: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
    let mut cols: Vec<Vec<f64>> = rows.to_vec();
    let n = cols.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = (dot(&cols[p], &cols[p]), dot(&cols[q], &cols[q]), dot(&cols[p], &cols[q]));
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                for (u, v) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                    let (a, b) = (*u, *v);
                    *u = c * a - s * b;
                    *v = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut out: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|c| {
            let norm = dot(&c, &c).sqrt();
            (norm, c.iter().map(|v| v / norm.max(f64::MIN_POSITIVE)).collect())
        })
        .collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    out
}

fn pca_oracle() -> Outcome {
    const D: usize = 2250;
    const K: usize = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<Vec<f64>> = (0..200).map(|_| (0..D).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let mut pca = PcaModel::new(K, D);
    for chunk in data.chunks(50) {
        pca.partial_fit(chunk).map_err(err)?;
    }
    let mean: Vec<f64> = (0..D).map(|c| data.iter().map(|r| r[c]).sum::<f64>() / 200.0).collect();
    let centred: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let axes = jacobi_axes(&centred);

    let q1 = DMatrix::from_row_slice(K, D, pca.components());
    let q2 = DMatrix::from_fn(K, D, |i, j| axes[i].1[j]);
    let residual = &q1 - (&q1 * q2.transpose()) * &q2;
    let gram = &residual * residual.transpose();
    let sin2 = gram.symmetric_eigen().eigenvalues.max().max(0.0);
    let angle = sin2.sqrt().min(1.0).asin();
    let ortho = (&q1 * q1.transpose() - DMatrix::<f64>::identity(K, K)).abs().max();
    let ev = pca.explained_variance();
    let nonincreasing = ev.windows(2).all(|w| w[1] <= w[0]);
    let ev_rel = ev
        .iter()
        .zip(&axes)
        .map(|(e, (s, _))| (e - s * s / 199.0).abs() / e)
        .fold(0.0, f64::max);
    let ok = angle < 1e-6 && ortho < 1e-8 && nonincreasing && ev.len() == K;
    Ok((
        ok,
        format!(
            "largest principal angle {angle:.2e} rad, orthonormality error {ortho:.2e}, explained variance nonincreasing: {nonincreasing} (max rel. deviation from oracle {ev_rel:.1e})"
        ),
    ))
}

const VAE_VARIANTS: [Variant; 6] =
    [Variant::Ae, Variant::Sae, Variant::Vae, Variant::BetaVae, Variant::CyclicalBetaVae, Variant::AnnealedBetaVae];

#[derive(Clone)]
struct Trained {
    _dir: std::sync::Arc<tempfile::TempDir>,
    beats: Vec<XyzBeat>,
    scaling: ScalingParams,
    models: Vec<(ModelKind, LatentModel)>,
    cfg: RunConfig,
    train_time: Duration,
}

impl Trained {
    fn model(&self, kind: ModelKind) -> &LatentModel {
        &self.models.iter().find(|(k, _)| *k == kind).expect("trained model").1
    }

    fn split(&self) -> (Vec<&XyzBeat>, Vec<&XyzBeat>) {
        self.beats.iter().partition(|b| !is_held_out(&b.source_id))
    }
}

/// 2,000-record corpus, every model trained at desk scale through the CLI.
fn train_desk_scale() -> Result<Trained, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::default();
    cfg.seed = 2024;
    cfg.paths.out = dir.path().to_path_buf();
    cfg.corpus.count = 2000;
    cfg.corpus.noise_std_uv = 10.0;
    cfg.model.variant = Selection::All;
    cfg.model.scale = 1.0 / 16.0;
    cfg.model.epochs = 200;
    cfg.model.batch_size = 32;
    run(Command::Synth, &cfg).map_err(err)?;
    run(Command::Preprocess, &cfg).map_err(err)?;
    let start = Instant::now();
    run(Command::Train, &cfg).map_err(err)?;
    let train_time = start.elapsed();

    let rd = RunDir(dir.path().to_path_buf());
    let (_, payload) = read_artifact(&rd.beats(), "beats", "preprocess").map_err(err)?;
    let beats = decode_dataset(&payload)
        .map_err(err)?
        .iter()
        .map(XyzBeat::from_record)
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let mut models = Vec::new();
    let mut scaling = None;
    for kind in ModelKind::ALL {
        let ckpt = Checkpoint::load(&rd.checkpoint(kind.name())).map_err(err)?;
        scaling = Some(ckpt.scaling);
        models.push((kind, ckpt.model));
    }
    Ok(Trained {
        _dir: std::sync::Arc::new(dir),
        beats,
        scaling: scaling.ok_or("no checkpoints")?,
        models,
        cfg,
        train_time,
    })
}

fn held_out_mae(model: &LatentModel, scaling: &ScalingParams, beats: &[&XyzBeat]) -> Result<f64, String> {
    let mut total = 0.0;
    for b in beats {
        let r = scaling.invert(&model.reconstruct(&scaling.apply(b)).map_err(err)?);
        total += reconstruction_metrics(b, &r).map_err(err)?.mae_full;
    }
    Ok(total / beats.len() as f64)
}

fn convergence(t: &Trained) -> Outcome {
    let (_, held_out) = t.split();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut trained_mae = std::collections::HashMap::new();
    for v in VAE_VARIANTS {
        let untrained = build_network(&t.cfg.variant_config(v), t.cfg.seed).map_err(err)?;
        let before = held_out_mae(&LatentModel::Vae(untrained), &t.scaling, &held_out)?;
        let after = held_out_mae(t.model(ModelKind::Vae(v)), &t.scaling, &held_out)?;
        let ratio = after / before;
        ok &= ratio < 0.25;
        trained_mae.insert(v, after);
        lines.push(format!("{}: {after:.1} µV ({:.3} of untrained {before:.1})", v.name(), ratio));
    }
    let reference = trained_mae[&Variant::BetaVae];
    for v in [Variant::Sae, Variant::AnnealedBetaVae, Variant::Ae] {
        ok &= trained_mae[&v] <= 1.10 * reference;
    }
    let pca = held_out_mae(t.model(ModelKind::Pca), &t.scaling, &held_out)?;
    let minutes = t.train_time.as_secs_f64() / 60.0;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    ok &= minutes < 30.0;
    Ok((
        ok,
        format!(
            "{} beats ({} held out); {}; PCA {pca:.1} µV; SAE/Aβ-VAE/AE within 1.10 × β-VAE: {}; training wall time {minutes:.1} min on {cores} core(s)",
            t.beats.len(),
            held_out.len(),
            lines.join(", "),
            [Variant::Sae, Variant::AnnealedBetaVae, Variant::Ae].iter().all(|v| trained_mae[v] <= 1.10 * reference)
        ),
    ))
}

fn mu_features(model: &LatentModel, scaling: &ScalingParams, beats: &[&XyzBeat]) -> Result<Vec<Vec<f64>>, String> {
    beats.iter().map(|b| Ok(model.encode(&scaling.apply(b), 0).map_err(err)?.mu)).collect()
}

struct ProbeScores {
    r2: f64,
    auroc: f64,
}

fn vti_probes(x_train: &[Vec<f64>], m_train: &[MeasurementSet], x_test: &[Vec<f64>], m_test: &[MeasurementSet]) -> Result<ProbeScores, String> {
    let y: Vec<f64> = m_train.iter().map(|m| m.vti_qrs_3d_uvs).collect();
    let yt: Vec<f64> = m_test.iter().map(|m| m.vti_qrs_3d_uvs).collect();
    let linear = Probe::Linear(fit_linear_probe(x_train, &y, 1e-6).map_err(err)?);
    let r2 = evaluate_probe(&linear, x_test, Targets::Values(&yt)).map_err(err)?.r2.ok_or("no R²")?;
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let h = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[h] } else { 0.5 * (sorted[h - 1] + sorted[h]) };
    let labels: Vec<bool> = y.iter().map(|v| *v > median).collect();
    let labels_t: Vec<bool> = yt.iter().map(|v| *v > median).collect();
    let logistic = Probe::Logistic(fit_logistic_probe(x_train, &labels, 1e-2).map_err(err)?);
    let auroc = evaluate_probe(&logistic, x_test, Targets::Labels(&labels_t)).map_err(err)?.auroc.ok_or("no AUROC")?;
    Ok(ProbeScores { r2, auroc })
}

fn downstream_probe(t: &Trained) -> Outcome {
    let (train, test) = t.split();
    let m_train: Vec<MeasurementSet> = train.iter().map(|b| measure_beat(b)).collect();
    let m_test: Vec<MeasurementSet> = test.iter().map(|b| measure_beat(b)).collect();
    let mut r2 = Vec::new();
    for kind in [ModelKind::Vae(Variant::Sae), ModelKind::Pca] {
        let model = t.model(kind);
        let s = vti_probes(
            &mu_features(model, &t.scaling, &train)?,
            &m_train,
            &mu_features(model, &t.scaling, &test)?,
            &m_test,
        )?;
        r2.push(s.r2);
    }
    let ok = r2[0] >= 0.8 && (r2[1] - r2[0]).abs() <= 0.15;
    Ok((ok, format!("VTI R²: SAE {:.3}, PCA {:.3} (difference {:.3})", r2[0], r2[1], r2[1] - r2[0])))
}

fn data_efficiency(t: &Trained) -> Outcome {
    let (train, test) = t.split();
    let small = training_subset(&train, 0.1, t.cfg.seed);
    let measure = |bs: &[&XyzBeat]| bs.iter().map(|b| measure_beat(b)).collect::<Vec<_>>();
    let (m_full, m_small, m_test) = (measure(&train), measure(&small), measure(&test));
    let mut ok = true;
    let mut lines = Vec::new();
    for kind in [ModelKind::Vae(Variant::Sae), ModelKind::Pca] {
        let model = t.model(kind);
        let x_test = mu_features(model, &t.scaling, &test)?;
        let full = vti_probes(&mu_features(model, &t.scaling, &train)?, &m_full, &x_test, &m_test)?;
        let part = vti_probes(&mu_features(model, &t.scaling, &small)?, &m_small, &x_test, &m_test)?;
        let (dr2, dauc) = (full.r2 - part.r2, full.auroc - part.auroc);
        ok &= dr2 <= 0.15 && dauc <= 0.10;
        lines.push(format!(
            "{kind}: R² {:.3} → {:.3} (loss {dr2:.3}), AUROC {:.3} → {:.3} (loss {dauc:.3})",
            full.r2, part.r2, full.auroc, part.auroc
        ));
    }
    Ok((ok, format!("{} vs {} training beats; {}", train.len(), small.len(), lines.join("; "))))
}

fn measurement_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut amp_err, mut vti_err, mut dur_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let amp = rng.random_range(300.0..2500.0);
        let centre = rng.random_range(300.0..360.0);
        let sigma = rng.random_range(4.0..16.0);
        let dir: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let s = (0..3)
            .flat_map(|l| {
                (0..BEAT_LEN).map(move |t| dir[l] / norm * amp * (-0.5 * ((t as f64 - centre) / sigma).powi(2)).exp())
            })
            .collect();
        let m = measure_beat(&XyzBeat::new("bump", s).map_err(err)?);
        // Peak amplitude A, area A·σ·√(2π) (ms → s), width where the bump
        // crosses 5 % of its peak.
        let vti = amp * sigma * (2.0 * std::f64::consts::PI).sqrt() * 1e-3;
        let duration = 2.0 * sigma * (2.0 * (1.0 / 0.05f64).ln()).sqrt();
        amp_err = amp_err.max((m.amplitude_qrs_3d_uv - amp).abs() / amp);
        vti_err = vti_err.max((m.vti_qrs_3d_uvs - vti).abs() / vti);
        dur_err = dur_err.max((m.qrs_duration_ms - duration).abs() / duration);
    }
    let ok = amp_err < 0.01 && vti_err < 0.05 && dur_err < 0.15;
    Ok((
        ok,
        format!(
            "100 draws, max relative error: amplitude {:.2}%, VTI {:.2}%, duration {:.2}%",
            100.0 * amp_err,
            100.0 * vti_err,
            100.0 * dur_err
        ),
    ))
}

fn small_run(out: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.paths.out = out.to_path_buf();
    cfg.corpus.count = 40;
    cfg.model.variant = Selection::All;
    cfg.model.epochs = 2;
    cfg.model.pca_batch = 36;
    cfg
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let steps = [Command::Synth, Command::Preprocess, Command::Train, Command::Encode];
    for dir in [&a, &b] {
        let cfg = small_run(dir.path(), 17);
        for c in steps {
            run(c, &cfg).map_err(|e| format!("{}: {e}", c.name()))?;
        }
    }
    let (ra, rb) = (RunDir(a.path().into()), RunDir(b.path().into()));
    let mut differing = Vec::new();
    for kind in ModelKind::ALL {
        if std::fs::read(ra.encodings(kind.name())).map_err(err)? != std::fs::read(rb.encodings(kind.name())).map_err(err)? {
            differing.push(kind.name());
        }
    }

    let (_, payload) = read_artifact(&ra.beats(), "beats", "preprocess").map_err(err)?;
    let beats = decode_dataset(&payload)
        .map_err(err)?
        .iter()
        .map(XyzBeat::from_record)
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut not_preserved = Vec::new();
    for kind in ModelKind::ALL {
        let ckpt = Checkpoint::load(&ra.checkpoint(kind.name())).map_err(err)?;
        let copy = a.path().join("copy.ckpt");
        ckpt.save(&copy).map_err(err)?;
        let loaded = Checkpoint::load(&copy).map_err(err)?;
        for beat in &beats {
            let scaled = ckpt.scaling.apply(beat);
            let seed = epsilon_seed(17, &beat.source_id);
            let (x, y) = (ckpt.model.encode(&scaled, seed).map_err(err)?, loaded.model.encode(&scaled, seed).map_err(err)?);
            let same = bits(&x.mu) == bits(&y.mu)
                && bits(&x.z) == bits(&y.z)
                && x.log_var.as_deref().map(bits) == y.log_var.as_deref().map(bits);
            if !same {
                not_preserved.push(kind.name());
                break;
            }
        }
    }
    let ok = differing.is_empty() && not_preserved.is_empty();
    Ok((
        ok,
        format!(
            "{} models × {} beats; encodings differing between runs: {differing:?}; checkpoints not preserving encodings: {not_preserved:?}",
            ModelKind::ALL.len(),
            beats.len()
        ),
    ))
}

fn classification_metrics() -> Outcome {
    let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(err)?;
    let s = sensitivity_at_specificity(&[0.1, 0.2, 0.3, 0.7, 0.8, 0.9], &[false, false, false, true, true, true], 0.9)
        .map_err(err)?;
    Ok((a == 0.75 && s == 1.0, format!("AUROC {a}, sensitivity at specificity 0.9: {s}")))
}
