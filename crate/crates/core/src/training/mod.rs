//! Composite loss and the optimization loop.
//!
//! Per window: `l_total = l_speed + l_spacing + α·l_courtesy` where
//! `l_speed` and `l_spacing` are mean squared errors over the horizon and
//! `l_courtesy` is the squared difference between the discourtesy of the
//! predicted speeds and the event label. A batch loss is the mean of its
//! window losses.

mod adam;

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::courtesy::{discourtesy_differentiable, label_event, CourtesyKind, DiscourtesyLabel};
use crate::models::{windows, FollowerModel, ModelConfig, ModelInput, Standardizer, Window};
use crate::rollout::integrate_spacing_on_tape;
use crate::trajectory::{SplitAssignment, SplitBucket, TrajectoryEvent};
use crate::{Error, Result};

pub use adam::{clip_grad_norm, Adam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_speed: f64,
    pub l_spacing: f64,
    pub l_courtesy: f64,
    pub l_total: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    /// `l_total − (l_speed + l_spacing + α·l_courtesy)`.
    pub fn residual(&self) -> f64 {
        self.l_total - (self.l_speed + self.l_spacing + self.alpha * self.l_courtesy)
    }

    pub fn is_finite(&self) -> bool {
        self.l_speed.is_finite()
            && self.l_spacing.is_finite()
            && self.l_courtesy.is_finite()
            && self.l_total.is_finite()
    }

    /// Component-wise mean. Panics on an empty slice.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        assert!(!items.is_empty(), "mean of no losses");
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            l_speed: sum(|l| l.l_speed),
            l_spacing: sum(|l| l.l_spacing),
            l_courtesy: sum(|l| l.l_courtesy),
            l_total: sum(|l| l.l_total),
            alpha: items[0].alpha,
        }
    }
}

/// Loss terms recorded on a tape.
pub struct TapeLoss<'t> {
    pub l_speed: Var<'t>,
    pub l_spacing: Var<'t>,
    pub l_courtesy: Var<'t>,
    pub l_total: Var<'t>,
    pub alpha: f64,
}

impl TapeLoss<'_> {
    pub fn values(&self) -> LossBreakdown {
        LossBreakdown {
            l_speed: self.l_speed.item(),
            l_spacing: self.l_spacing.item(),
            l_courtesy: self.l_courtesy.item(),
            l_total: self.l_total.item(),
            alpha: self.alpha,
        }
    }
}

/// Composite loss of one predicted window against the recorded one.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss<'t>(
    tape: &'t Tape,
    speeds: Var<'t>,
    spacing: Var<'t>,
    v_true: &[f64],
    s_true: &[f64],
    label: DiscourtesyLabel,
    alpha: f64,
    dt: f64,
) -> Result<TapeLoss<'t>> {
    if speeds.len() != v_true.len() || spacing.len() != s_true.len() || v_true.len() != s_true.len() {
        return Err(Error::Invalid(format!(
            "length mismatch: predicted {} speeds / {} spacings, truth {} / {}",
            speeds.len(),
            spacing.len(),
            v_true.len(),
            s_true.len()
        )));
    }
    let v_true = tape.constant(&Tensor::vector(v_true.to_vec()));
    let s_true = tape.constant(&Tensor::vector(s_true.to_vec()));
    let l_speed = speeds.sub(v_true)?.square()?.mean()?;
    let l_spacing = spacing.sub(s_true)?.square()?.mean()?;
    let behaved = discourtesy_differentiable(speeds, dt, label.kind)?;
    let l_courtesy = behaved.offset(-label.value)?.square()?;
    let l_total = l_speed.add(l_spacing)?.add(l_courtesy.scale(alpha)?)?;
    Ok(TapeLoss {
        l_speed,
        l_spacing,
        l_courtesy,
        l_total,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the courtesy term.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Discourtesy kind used for labels, conditioning and the courtesy loss.
    pub courtesy: CourtesyKind,
    pub model: ModelConfig,
    /// Window stride in samples; defaults to half the horizon.
    pub stride: Option<usize>,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            patience: 10,
            seed: 0,
            courtesy: CourtesyKind::Speed,
            model: ModelConfig::default(),
            stride: None,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Invalid(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Invalid("batch size and epochs must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Invalid("gradient clip must be positive".into()));
        }
        if self.stride == Some(0) {
            return Err(Error::Invalid("stride must be positive".into()));
        }
        self.model.validate()
    }

    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.model.horizon / 2).max(1))
    }
}

/// One training or validation window with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Index of the source event.
    pub event: usize,
    pub window: Window,
    pub input: ModelInput,
    pub v_true: Vec<f64>,
    pub s_true: Vec<f64>,
    pub label: DiscourtesyLabel,
}

/// Windows of every event whose id is in `ids`, in event order.
pub fn build_samples(
    model: &FollowerModel,
    events: &[TrajectoryEvent],
    labels: &[DiscourtesyLabel],
    ids: &[String],
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if events.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} events but {} labels",
            events.len(),
            labels.len()
        )));
    }
    let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let cfg = &model.config;
    let mut out = Vec::new();
    for (i, (ev, label)) in events.iter().zip(labels).enumerate() {
        if !keep.contains(ev.event_id.as_str()) {
            continue;
        }
        for w in windows(ev, cfg.history, cfg.horizon, stride) {
            let range = w.horizon_range();
            out.push(WindowSample {
                event: i,
                window: w,
                input: model.input_for(ev, Some(*label), w)?,
                v_true: ev.points[range.clone()].iter().map(|p| p.v_fv).collect(),
                s_true: ev.points[range].iter().map(|p| p.spacing).collect(),
                label: *label,
            });
        }
    }
    Ok(out)
}

/// Loss of one window and, when `with_grad`, the flat parameter gradient.
pub fn window_loss(
    model: &FollowerModel,
    sample: &WindowSample,
    alpha: f64,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape, with_grad);
    let pred = model.forward(&tape, &bound, &sample.input)?;
    let (spacing, _) = integrate_spacing_on_tape(
        &tape,
        sample.input.anchor,
        &sample.input.future_lv,
        pred.speeds,
        sample.input.dt,
    )?;
    let loss = composite_loss(
        &tape,
        pred.speeds,
        spacing,
        &sample.v_true,
        &sample.s_true,
        sample.label,
        alpha,
        sample.input.dt,
    )?;
    let values = loss.values();
    if !with_grad {
        return Ok((values, None));
    }
    tape.backward(loss.l_total)?;
    let grads = bound
        .grads()
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();
    Ok((values, Some(grads)))
}

/// Mean loss over `samples` without gradients.
pub fn mean_loss(model: &FollowerModel, samples: &[WindowSample], alpha: f64) -> Result<LossBreakdown> {
    let losses = samples
        .par_iter()
        .map(|s| window_loss(model, s, alpha, false).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    if losses.is_empty() {
        return Err(Error::Invalid("no windows to evaluate".into()));
    }
    Ok(LossBreakdown::mean(&losses))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistorySplit {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: HistorySplit,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss.
    pub model: FollowerModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Batch losses of every optimizer step, in order.
    pub steps: Vec<LossBreakdown>,
    pub train_windows: usize,
    pub val_windows: usize,
    /// Events dropped because their label could not be computed.
    pub skipped_events: usize,
}

impl TrainOutcome {
    pub fn val_history(&self) -> impl Iterator<Item = &EpochRecord> {
        self.history.iter().filter(|r| r.split == HistorySplit::Val)
    }

    pub fn train_history(&self) -> impl Iterator<Item = &EpochRecord> {
        self.history.iter().filter(|r| r.split == HistorySplit::Train)
    }
}

/// Event-level labels; events whose label is undefined are dropped.
pub fn labeled_events(
    events: &[TrajectoryEvent],
    kind: CourtesyKind,
) -> (Vec<TrajectoryEvent>, Vec<DiscourtesyLabel>, usize) {
    let mut kept = Vec::with_capacity(events.len());
    let mut labels = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for ev in events {
        match label_event(ev, kind) {
            Ok(l) => {
                kept.push(ev.clone());
                labels.push(l);
            }
            Err(e) => {
                log::warn!("skipping event {}: {e}", ev.event_id);
                skipped += 1;
            }
        }
    }
    (kept, labels, skipped)
}

/// Labels the events, fits feature statistics on the training split,
/// initializes a model from `config.seed` and trains it.
pub fn train(
    events: &[TrajectoryEvent],
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (events, labels, skipped) = labeled_events(events, config.courtesy);
    let train_ids: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let (fit_events, fit_psi): (Vec<&TrajectoryEvent>, Vec<f64>) = events
        .iter()
        .zip(&labels)
        .filter(|(e, _)| train_ids.contains(e.event_id.as_str()))
        .map(|(e, l)| (e, l.value))
        .unzip();
    let standardizer = Standardizer::fit(fit_events, &fit_psi)?;
    let courtesy = config.model.conditioned.then_some(config.courtesy);
    let model = FollowerModel::new(config.model, standardizer, courtesy, config.seed)?;
    let mut out = train_model(model, &events, &labels, split, config)?;
    out.skipped_events = skipped;
    Ok(out)
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    if e.is_numerical() {
        Error::Divergence {
            epoch,
            batch,
            reason: e.to_string(),
        }
    } else {
        e
    }
}

/// Trains `model` in place of a fresh initialization. `labels[i]` belongs to
/// `events[i]`. The model's own configuration and standardizer are used;
/// `config.model` is ignored.
pub fn train_model(
    mut model: FollowerModel,
    events: &[TrajectoryEvent],
    labels: &[DiscourtesyLabel],
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if let Some(kind) = model.courtesy {
        if kind != config.courtesy {
            return Err(Error::Invalid(format!(
                "model is conditioned on {kind} but training uses {}",
                config.courtesy
            )));
        }
    }
    if let Some(l) = labels.iter().find(|l| l.kind != config.courtesy) {
        return Err(Error::Invalid(format!(
            "label kind {} does not match training kind {}",
            l.kind, config.courtesy
        )));
    }
    let stride = config.stride();
    let train_set = build_samples(&model, events, labels, split.ids(SplitBucket::Train), stride)?;
    let val_set = build_samples(&model, events, labels, split.ids(SplitBucket::Val), stride)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Invalid(format!(
            "need training and validation windows, got {} and {} (history {}, horizon {})",
            train_set.len(),
            val_set.len(),
            model.config.history,
            model.config.horizon
        )));
    }

    let alpha = config.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut flat = model.params.flatten();
    let mut adam = Adam::new(flat.len(), config.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut steps = Vec::new();
    let mut best: Option<(f64, usize, crate::models::ParamSet)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::with_capacity(train_set.len());
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let results = chunk
                .par_iter()
                .map(|&i| window_loss(&model, &train_set[i], alpha, true))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| diverged(epoch, b, e))?;
            let mut grad = vec![0.0; flat.len()];
            let mut batch = Vec::with_capacity(results.len());
            for (loss, g) in results {
                let g = g.expect("gradient requested");
                for (acc, x) in grad.iter_mut().zip(&g) {
                    *acc += x;
                }
                batch.push(loss);
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            let step_loss = LossBreakdown::mean(&batch);
            if !step_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    reason: format!("non-finite loss {step_loss:?}"),
                });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    reason: "non-finite gradient".into(),
                });
            }
            clip_grad_norm(&mut grad, config.grad_clip);
            adam.step(&mut flat, &grad);
            model.params.assign_flat(&flat)?;
            steps.push(step_loss);
            epoch_losses.extend(batch);
        }
        let train_loss = LossBreakdown::mean(&epoch_losses);
        let val_loss = mean_loss(&model, &val_set, alpha).map_err(|e| diverged(epoch, 0, e))?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                reason: "non-finite validation loss".into(),
            });
        }
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6} (speed {:.4}, spacing {:.4}, courtesy {:.6})",
            train_loss.l_total,
            val_loss.l_total,
            val_loss.l_speed,
            val_loss.l_spacing,
            val_loss.l_courtesy
        );
        history.push(EpochRecord {
            epoch,
            split: HistorySplit::Train,
            loss: train_loss,
        });
        history.push(EpochRecord {
            epoch,
            split: HistorySplit::Val,
            loss: val_loss,
        });
        if best.as_ref().is_none_or(|(v, _, _)| val_loss.l_total < *v) {
            best = Some((val_loss.l_total, epoch, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
        steps,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
        skipped_events: 0,
    })
}

#[derive(Serialize, Deserialize)]
struct HistoryRow {
    epoch: usize,
    l_speed: f64,
    l_spacing: f64,
    l_courtesy: f64,
    l_total: f64,
    split: HistorySplit,
}

/// Writes `epoch,l_speed,l_spacing,l_courtesy,l_total,split`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in history {
        w.serialize(HistoryRow {
            epoch: r.epoch,
            l_speed: r.loss.l_speed,
            l_spacing: r.loss.l_spacing,
            l_courtesy: r.loss.l_courtesy,
            l_total: r.loss.l_total,
            split: r.split,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a history CSV back; `alpha` is not stored and must be supplied.
pub fn read_history(path: &Path, alpha: f64) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<HistoryRow>()
        .map(|row| {
            let row = row?;
            Ok(EpochRecord {
                epoch: row.epoch,
                split: row.split,
                loss: LossBreakdown {
                    l_speed: row.l_speed,
                    l_spacing: row.l_spacing,
                    l_courtesy: row.l_courtesy,
                    l_total: row.l_total,
                    alpha,
                },
            })
        })
        .collect()
}
