//! MSE objective, AdamW optimizer, the training loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, SignalPair};
use crate::error::{Error, Result};
use crate::layers::{bind_params, collect_grads, GradMap, ParamSet};
use crate::metrics::{aggregate, MetricReport, MetricSummary, SampleMetrics};
use crate::model::BandRouteNet;
use crate::spectral::{band_decompose, BandSpec, WelchConfig};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Numeric precision of a training or inference run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F32
    }
}

fn default_lr() -> f64 {
    1e-3
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_epochs() -> usize {
    15
}

fn default_batch_size() -> usize {
    32
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// Optimizer and loop settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Global-norm gradient clipping; off by default.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            seed: 0,
            grad_clip: None,
            precision: Precision::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("train: {name} must be positive")));
            }
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config("train: weight_decay must be >= 0".into()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("train: betas must be < 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "train: epochs and batch_size must be positive".into(),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("train: grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Mean squared error over all elements.
pub fn mse_loss<E: Element>(tape: &mut Tape<E>, yhat: Var, y: Var) -> Result<Var> {
    let diff = tape.sub(yhat, y)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean_all(sq)
}

/// AdamW state: first and second moments per parameter plus the step
/// counter. The update is decoupled weight decay:
///
/// ```text
/// m <- b1 m + (1 - b1) g        v <- b2 v + (1 - b2) g^2
/// m_hat = m / (1 - b1^t)        v_hat = v / (1 - b2^t)
/// theta <- theta - lr m_hat / (sqrt(v_hat) + eps) - lr wd theta
/// ```
pub struct AdamW<E> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    step: u64,
}

impl<E: Element> AdamW<E> {
    pub fn new(ps: &ParamSet<E>) -> Self {
        AdamW {
            m: ps.iter().map(|(_, t)| vec![E::zero(); t.numel()]).collect(),
            v: ps.iter().map(|(_, t)| vec![E::zero(); t.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient this step are
    /// left untouched. A non-finite gradient aborts, naming the
    /// parameter.
    pub fn step(
        &mut self,
        ps: &mut ParamSet<E>,
        grads: &GradMap<E>,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let lr = E::from_f64(cfg.lr);
        let wd = E::from_f64(cfg.weight_decay);
        let b1 = E::from_f64(cfg.beta1);
        let b2 = E::from_f64(cfg.beta2);
        let eps = E::from_f64(cfg.eps);
        let one = E::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for id in ps.ids().collect::<Vec<_>>() {
            let Some(grad) = grads.get(id) else { continue };
            if !grad.data().iter().all(|g| g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "adamw: non-finite gradient for parameter '{}'",
                    ps.name(id)
                )));
            }
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let theta = ps.get_mut(id).data_mut();
            for ((p, &g), (m_i, v_i)) in theta
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m_i = b1 * *m_i + (one - b1) * g;
                *v_i = b2 * *v_i + (one - b2) * g * g;
                let m_hat = *m_i / bc1;
                let v_hat = *v_i / bc2;
                let update = lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *p;
                *p = *p - update;
            }
        }
        Ok(())
    }
}

/// A standardized, band-decomposed sample ready for the network.
pub struct PreparedSample<E> {
    pub noisy: Tensor<E>,
    pub clean: Tensor<E>,
    pub bands: Vec<Tensor<E>>,
    pub noisy_f64: Vec<f64>,
    pub clean_f64: Vec<f64>,
    pub snr_db: f64,
}

/// Standardizes and band-decomposes every pair (decompositions are
/// static per sample, so this runs once up front).
pub fn prepare<E: Element>(
    pairs: &[SignalPair],
    spec: &BandSpec,
) -> Result<Vec<PreparedSample<E>>> {
    pairs
        .par_iter()
        .map(|pair| {
            let std_pair = standardize(pair)?;
            let t_len = std_pair.noisy.len();
            let rows = band_decompose(&std_pair.noisy, spec)?;
            let bands = rows
                .iter()
                .map(|row| Tensor::from_f64_slice(&[1, 1, t_len], row))
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedSample {
                noisy: Tensor::from_f64_slice(&[1, 1, t_len], &std_pair.noisy)?,
                clean: Tensor::from_f64_slice(&[1, 1, t_len], &std_pair.clean)?,
                bands,
                noisy_f64: std_pair.noisy,
                clean_f64: std_pair.clean,
                snr_db: std_pair.snr_db,
            })
        })
        .collect()
}

fn train_step<E: Element>(
    model: &BandRouteNet,
    ps: &ParamSet<E>,
    sample: &PreparedSample<E>,
) -> Result<(f64, GradMap<E>)> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, ps, true);
    let x = tape.leaf(sample.noisy.clone(), false);
    let bands: Vec<Var> = sample
        .bands
        .iter()
        .map(|b| tape.leaf(b.clone(), false))
        .collect();
    let out = model.forward(&mut tape, &pv, x, &bands)?;
    let target = tape.leaf(sample.clean.clone(), false);
    let loss = mse_loss(&mut tape, out.y_hat, target)?;
    let loss_value = tape.value(loss).data()[0].as_f64();
    tape.backward(loss)?;
    Ok((loss_value, collect_grads(&tape, &pv)))
}

/// Runs the model over one prepared sample and returns the denoised
/// signal (first batch row).
pub fn infer_sample<E: Element>(
    model: &BandRouteNet,
    ps: &ParamSet<E>,
    sample: &PreparedSample<E>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, ps, false);
    let x = tape.leaf(sample.noisy.clone(), false);
    let bands: Vec<Var> = sample
        .bands
        .iter()
        .map(|b| tape.leaf(b.clone(), false))
        .collect();
    let out = model.forward(&mut tape, &pv, x, &bands)?;
    Ok(tape.value(out.y_hat).to_f64_vec())
}

/// One epoch's record in the training history.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val: MetricSummary,
}

/// Everything `fit` produces: the per-epoch history and the best
/// checkpoint by validation RRMSE_t.
pub struct FitOutcome<E> {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val: MetricSummary,
    pub best_params: ParamSet<E>,
}

/// Trains with seeded shuffling, recording per-epoch train loss and
/// validation metrics and retaining the best-validation parameters.
/// `ps` holds the final (last-epoch) parameters afterwards.
pub fn fit<E: Element>(
    model: &BandRouteNet,
    ps: &mut ParamSet<E>,
    train_pairs: &[SignalPair],
    val_pairs: &[SignalPair],
    cfg: &TrainConfig,
    welch: &WelchConfig,
) -> Result<FitOutcome<E>> {
    cfg.validate()?;
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Data("fit: empty train or validation set".into()));
    }
    let spec = &model.config().band_spec;
    let train_set = prepare::<E>(train_pairs, spec)?;
    let val_set = prepare::<E>(val_pairs, spec)?;

    let mut optimizer = AdamW::new(ps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x7E41);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, MetricSummary, ParamSet<E>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<Result<(f64, GradMap<E>)>> = batch
                .par_iter()
                .map(|&i| train_step(model, ps, &train_set[i]))
                .collect();
            let mut accumulated: Option<GradMap<E>> = None;
            for r in results {
                let (loss, grads) = r.map_err(|e| {
                    Error::Numeric(format!("epoch {epoch} batch {batch_idx}: {e}"))
                })?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "epoch {epoch} batch {batch_idx}: non-finite loss"
                    )));
                }
                loss_sum += loss;
                match accumulated.as_mut() {
                    Some(acc) => acc.accumulate(&grads),
                    None => accumulated = Some(grads),
                }
            }
            let mut grads = accumulated.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = cfg.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            optimizer.step(ps, &grads, cfg)?;
        }
        let train_mse = loss_sum / train_set.len() as f64;
        let val_report = evaluate_prepared(model, ps, &val_set, welch)?;
        let val = val_report.overall.clone();
        let is_best = best
            .as_ref()
            .map_or(true, |(_, summary, _)| val.rrmse_t < summary.rrmse_t);
        if is_best {
            best = Some((epoch, val.clone(), ps.snapshot()));
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val,
        });
    }
    let (best_epoch, best_val, best_params) = best.expect("at least one epoch");
    Ok(FitOutcome {
        history,
        best_epoch,
        best_val,
        best_params,
    })
}

fn clip_global_norm<E: Element>(grads: &mut GradMap<E>, max_norm: f64) {
    let mut total = 0.0f64;
    for g in grads.grads.iter().flatten() {
        total += g.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
}

/// Forward plus metrics over already-prepared samples.
pub fn evaluate_prepared<E: Element>(
    model: &BandRouteNet,
    ps: &ParamSet<E>,
    samples: &[PreparedSample<E>],
    welch: &WelchConfig,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluate: no samples".into()));
    }
    let metrics: Vec<Result<SampleMetrics>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let denoised = infer_sample(model, ps, s)?;
            SampleMetrics::compute(i, s.snr_db, &s.clean_f64, &s.noisy_f64, &denoised, welch)
        })
        .collect();
    aggregate(metrics.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Standardizes, decomposes, runs the model and aggregates metrics over
/// a test set.
pub fn evaluate<E: Element>(
    model: &BandRouteNet,
    ps: &ParamSet<E>,
    pairs: &[SignalPair],
    welch: &WelchConfig,
) -> Result<MetricReport> {
    let prepared = prepare::<E>(pairs, &model.config().band_spec)?;
    evaluate_prepared(model, ps, &prepared, welch)
}

/// History CSV: `epoch,train_mse,val_rrmse_t,val_rrmse_s,val_cc,val_snr_imp`.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_mse,val_rrmse_t,val_rrmse_s,val_cc,val_snr_imp\n");
    for h in history {
        out.push_str(&format!(
            "{},{:.10},{:.8},{:.8},{:.8},{:.8}\n",
            h.epoch, h.train_mse, h.val.rrmse_t, h.val.rrmse_s, h.val.cc, h.val.snr_imp
        ));
    }
    out
}
