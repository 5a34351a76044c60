//! Metrics over closed-loop rollouts and the controllability sweep.
//!
//! Every window of every event is rolled out once. Spacing and speed MSE are
//! averaged over the horizon of each window and then over windows. The
//! behaved discourtesy of a window is the discourtesy of its predicted
//! speeds; courtesy MSE and correlation compare it with the event label.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::courtesy::{discourtesy_differentiable, CourtesyKind, DiscourtesyLabel};
use crate::models::{windows, FollowerModel, SpeedPredictor, Window};
use crate::rollout::{rollout, RolloutResult};
use crate::trajectory::TrajectoryEvent;
use crate::{Error, Result};

/// Pearson correlation; `None` when fewer than two points or either series
/// has zero variance. Spread below 1e-12 of a series' magnitude counts as
/// zero, so rounding noise on a constant series is not correlated.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let flat = |ss: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        ss <= n * (1e-12 * scale).powi(2)
    };
    if flat(sxx, x) || flat(syy, y) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Median of a non-empty sample.
pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Discourtesy of a predicted speed series, computed exactly as in training.
pub fn behaved_discourtesy(kind: CourtesyKind, speeds: &[f64], dt: f64) -> Result<f64> {
    let tape = Tape::new();
    let v = tape.constant(&Tensor::vector(speeds.to_vec()));
    Ok(discourtesy_differentiable(v, dt, kind)?.item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
    pub kind: CourtesyKind,
}

impl EvalConfig {
    /// Window sizes of `model`, stride of half a horizon.
    pub fn for_model(model: &FollowerModel, kind: CourtesyKind) -> Self {
        Self {
            history: model.config.history,
            horizon: model.config.horizon,
            stride: (model.config.horizon / 2).max(1),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub spacing_mse: f64,
    pub speed_mse: f64,
    pub courtesy_mse: f64,
    /// `None` when either series has zero variance.
    pub courtesy_corr: Option<f64>,
    pub n_events: usize,
    pub n_windows: usize,
    pub collision_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub event_id: String,
    pub window: Window,
    /// ψ given to the model (the event label, possibly scaled).
    pub desired_psi: f64,
    pub label_psi: f64,
    pub behaved_psi: f64,
    pub spacing_mse: f64,
    pub speed_mse: f64,
    pub rollout: RolloutResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub windows: Vec<WindowOutcome>,
}

struct Job<'a> {
    event: &'a TrajectoryEvent,
    label: DiscourtesyLabel,
    window: Window,
}

fn jobs<'a>(
    events: &'a [TrajectoryEvent],
    labels: &[DiscourtesyLabel],
    cfg: &EvalConfig,
) -> Result<Vec<Job<'a>>> {
    if events.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} events but {} labels",
            events.len(),
            labels.len()
        )));
    }
    if cfg.stride == 0 {
        return Err(Error::Invalid("stride must be positive".into()));
    }
    if let Some(l) = labels.iter().find(|l| l.kind != cfg.kind) {
        return Err(Error::Invalid(format!(
            "label kind {} does not match evaluation kind {}",
            l.kind, cfg.kind
        )));
    }
    let mut out = Vec::new();
    for (ev, label) in events.iter().zip(labels) {
        for window in windows(ev, cfg.history, cfg.horizon, cfg.stride) {
            out.push(Job {
                event: ev,
                label: *label,
                window,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!(
            "no event is long enough for history {} + horizon {}",
            cfg.history, cfg.horizon
        )));
    }
    Ok(out)
}

fn run_window(
    model: &dyn SpeedPredictor,
    job: &Job<'_>,
    scale: f64,
    kind: CourtesyKind,
) -> Result<WindowOutcome> {
    let desired = job.label.scaled(scale);
    let psi = model.is_conditioned().then_some(desired);
    let r = rollout(model, job.event, psi, job.window)?;
    let range = job.window.horizon_range();
    let v_true: Vec<f64> = job.event.points[range.clone()].iter().map(|p| p.v_fv).collect();
    let s_true: Vec<f64> = job.event.points[range].iter().map(|p| p.spacing).collect();
    Ok(WindowOutcome {
        event_id: job.event.event_id.clone(),
        window: job.window,
        desired_psi: desired.value,
        label_psi: job.label.value,
        behaved_psi: behaved_discourtesy(kind, &r.v_fv_pred, job.event.dt)?,
        spacing_mse: mse(&r.spacing_pred, &s_true),
        speed_mse: mse(&r.v_fv_pred, &v_true),
        rollout: r,
    })
}

fn summarize(name: &str, n_events: usize, outcomes: &[WindowOutcome]) -> EvalReport {
    let behaved: Vec<f64> = outcomes.iter().map(|o| o.behaved_psi).collect();
    let label: Vec<f64> = outcomes.iter().map(|o| o.label_psi).collect();
    let spacing: Vec<f64> = outcomes.iter().map(|o| o.spacing_mse).collect();
    let speed: Vec<f64> = outcomes.iter().map(|o| o.speed_mse).collect();
    let courtesy: Vec<f64> = behaved.iter().zip(&label).map(|(b, l)| (b - l) * (b - l)).collect();
    let collisions = outcomes.iter().filter(|o| o.rollout.collision_flag).count();
    EvalReport {
        model: name.to_string(),
        spacing_mse: mean(&spacing),
        speed_mse: mean(&speed),
        courtesy_mse: mean(&courtesy),
        courtesy_corr: pearson(&behaved, &label),
        n_events,
        n_windows: outcomes.len(),
        collision_rate: collisions as f64 / outcomes.len() as f64,
    }
}

/// Rolls out every window of `events`; `labels[i]` is the label of `events[i]`.
pub fn evaluate(
    model: &dyn SpeedPredictor,
    name: &str,
    events: &[TrajectoryEvent],
    labels: &[DiscourtesyLabel],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if events.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one event".into()));
    }
    let jobs = jobs(events, labels, cfg)?;
    let windows = jobs
        .par_iter()
        .map(|j| run_window(model, j, 1.0, cfg.kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: summarize(name, events.len(), &windows),
        windows,
    })
}

/// Upper edge (s) of the last time-gap histogram bin; larger gaps land in it.
pub const TIME_GAP_MAX: f64 = 6.0;
pub const TIME_GAP_BINS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: f64,
    pub mean_time_gap: f64,
    pub median_time_gap: f64,
    /// Fractions per bin of width `TIME_GAP_MAX / TIME_GAP_BINS`, summing to 1.
    pub histogram: Vec<f64>,
    pub mean_behaved_psi: f64,
    pub mean_desired_psi: f64,
    /// Pearson correlation of desired and behaved ψ over windows.
    pub psi_corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub model: String,
    pub scales: Vec<ScaleSummary>,
    /// Window outcomes per scale, in the order of `scales`.
    pub windows: Vec<Vec<WindowOutcome>>,
}

fn histogram(values: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; TIME_GAP_BINS];
    let width = TIME_GAP_MAX / TIME_GAP_BINS as f64;
    for v in values {
        let i = ((v / width).floor().max(0.0) as usize).min(TIME_GAP_BINS - 1);
        h[i] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Reruns every window with ψ multiplied by each scale.
pub fn controllability(
    model: &dyn SpeedPredictor,
    name: &str,
    events: &[TrajectoryEvent],
    labels: &[DiscourtesyLabel],
    cfg: &EvalConfig,
    scales: &[f64],
) -> Result<ControllabilityReport> {
    if !model.is_conditioned() {
        return Err(Error::Invalid(
            "controllability requires a ψ-conditioned model".into(),
        ));
    }
    if let Some(k) = scales.iter().find(|k| !(**k > 0.0) || !k.is_finite()) {
        return Err(Error::Invalid(format!("scales must be positive, got {k}")));
    }
    let jobs = jobs(events, labels, cfg)?;
    let mut summaries = Vec::with_capacity(scales.len());
    let mut all = Vec::with_capacity(scales.len());
    for &scale in scales {
        let outcomes = jobs
            .par_iter()
            .map(|j| run_window(model, j, scale, cfg.kind))
            .collect::<Result<Vec<_>>>()?;
        let gaps: Vec<f64> = outcomes
            .iter()
            .flat_map(|o| o.rollout.time_gap.iter().copied())
            .collect();
        let behaved: Vec<f64> = outcomes.iter().map(|o| o.behaved_psi).collect();
        let desired: Vec<f64> = outcomes.iter().map(|o| o.desired_psi).collect();
        summaries.push(ScaleSummary {
            scale,
            mean_time_gap: mean(&gaps),
            median_time_gap: median(&gaps),
            histogram: histogram(&gaps),
            mean_behaved_psi: mean(&behaved),
            mean_desired_psi: mean(&desired),
            psi_corr: pearson(&desired, &behaved),
        });
        all.push(outcomes);
    }
    Ok(ControllabilityReport {
        model: name.to_string(),
        scales: summaries,
        windows: all,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Aligned text table, one row per model.
pub fn metrics_table(reports: &[EvalReport]) -> String {
    let header = [
        "Model",
        "Spacing MSE",
        "Speed MSE",
        "Courtesy MSE",
        "Courtesy Metric Correlation",
        "Collision Rate",
    ];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                format!("{:.4}", r.spacing_mse),
                format!("{:.4}", r.speed_mse),
                format!("{:.6}", r.courtesy_mse),
                fmt_opt(r.courtesy_corr),
                format!("{:.4}", r.collision_rate),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&header);
    out.push('\n');
    for row in &rows {
        out.push_str(&line(&row.each_ref().map(String::as_str)));
        out.push('\n');
    }
    out
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut f = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    f.flush().map_err(|e| Error::io(path, e))
}

const METRICS_HEADER: [&str; 8] = [
    "model",
    "spacing_mse",
    "speed_mse",
    "courtesy_mse",
    "courtesy_corr",
    "n_events",
    "n_windows",
    "collision_rate",
];

/// `model,spacing_mse,speed_mse,courtesy_mse,courtesy_corr,n_events,n_windows,collision_rate`;
/// an undefined correlation is written as an empty field.
pub fn write_metrics(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv_writer(path, &METRICS_HEADER)?;
    for r in reports {
        w.serialize(r)?;
    }
    finish(path, w)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EvalReport>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != METRICS_HEADER {
        return Err(Error::Schema(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| Ok(row?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    scale: f64,
    mean_time_gap: f64,
    median_time_gap: f64,
    mean_desired_psi: f64,
    mean_behaved_psi: f64,
    psi_corr: Option<f64>,
}

const SUMMARY_HEADER: [&str; 6] = [
    "scale",
    "mean_time_gap",
    "median_time_gap",
    "mean_desired_psi",
    "mean_behaved_psi",
    "psi_corr",
];

/// Per-scale summary `scale,mean_time_gap,median_time_gap,mean_desired_psi,mean_behaved_psi,psi_corr`.
pub fn write_controllability_summary(path: &Path, report: &ControllabilityReport) -> Result<()> {
    let mut w = csv_writer(path, &SUMMARY_HEADER)?;
    for s in &report.scales {
        w.serialize(SummaryRow {
            scale: s.scale,
            mean_time_gap: s.mean_time_gap,
            median_time_gap: s.median_time_gap,
            mean_desired_psi: s.mean_desired_psi,
            mean_behaved_psi: s.mean_behaved_psi,
            psi_corr: s.psi_corr,
        })?;
    }
    finish(path, w)
}

/// Parses a summary CSV back; histograms are not part of it and come back empty.
pub fn read_controllability_summary(path: &Path) -> Result<Vec<ScaleSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<SummaryRow>()
        .map(|row| {
            let row = row?;
            Ok(ScaleSummary {
                scale: row.scale,
                mean_time_gap: row.mean_time_gap,
                median_time_gap: row.median_time_gap,
                histogram: Vec::new(),
                mean_behaved_psi: row.mean_behaved_psi,
                mean_desired_psi: row.mean_desired_psi,
                psi_corr: row.psi_corr,
            })
        })
        .collect()
}

/// Long-format histograms `scale,bin_lo,bin_hi,fraction`.
pub fn write_time_gap_histograms(path: &Path, report: &ControllabilityReport) -> Result<()> {
    let mut w = csv_writer(path, &["scale", "bin_lo", "bin_hi", "fraction"])?;
    let width = TIME_GAP_MAX / TIME_GAP_BINS as f64;
    for s in &report.scales {
        for (i, f) in s.histogram.iter().enumerate() {
            w.serialize((s.scale, i as f64 * width, (i + 1) as f64 * width, f))?;
        }
    }
    finish(path, w)
}

/// Desired-vs-behaved scatter `scale,event_id,window_start,desired_psi,behaved_psi`.
pub fn write_psi_scatter(path: &Path, report: &ControllabilityReport) -> Result<()> {
    let mut w = csv_writer(
        path,
        &["scale", "event_id", "window_start", "desired_psi", "behaved_psi"],
    )?;
    for (s, outcomes) in report.scales.iter().zip(&report.windows) {
        for o in outcomes {
            w.serialize((s.scale, &o.event_id, o.window.start, o.desired_psi, o.behaved_psi))?;
        }
    }
    finish(path, w)
}

/// Per-window metrics `event_id,window_start,label_psi,behaved_psi,spacing_mse,speed_mse,collision`.
pub fn write_window_metrics(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut w = csv_writer(
        path,
        &[
            "event_id",
            "window_start",
            "label_psi",
            "behaved_psi",
            "spacing_mse",
            "speed_mse",
            "collision",
        ],
    )?;
    for o in &eval.windows {
        w.serialize((
            &o.event_id,
            o.window.start,
            o.label_psi,
            o.behaved_psi,
            o.spacing_mse,
            o.speed_mse,
            o.rollout.collision_flag,
        ))?;
    }
    finish(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::courtesy::label_event;
    use crate::models::SpeedForecast;
    use crate::synthcorpus::{generate, ScenarioSpec};

    struct Oracle;

    impl SpeedPredictor for Oracle {
        fn forecast(&self, ev: &TrajectoryEvent, _: Option<DiscourtesyLabel>, w: Window) -> Result<SpeedForecast> {
            Ok(SpeedForecast {
                speeds: ev.points[w.horizon_range()].iter().map(|p| p.v_fv).collect(),
                idm: None,
                spacing_floored: false,
            })
        }
        fn is_conditioned(&self) -> bool {
            true
        }
    }

    struct Constant;

    impl SpeedPredictor for Constant {
        fn forecast(&self, ev: &TrajectoryEvent, _: Option<DiscourtesyLabel>, w: Window) -> Result<SpeedForecast> {
            Ok(SpeedForecast {
                speeds: vec![ev.points[w.anchor()].v_fv; w.horizon],
                idm: None,
                spacing_floored: false,
            })
        }
        fn is_conditioned(&self) -> bool {
            false
        }
    }

    fn corpus(n: usize) -> (Vec<TrajectoryEvent>, Vec<DiscourtesyLabel>) {
        let c = generate(&ScenarioSpec::default(), n).unwrap();
        (c.events, c.labels)
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            history: 20,
            horizon: 50,
            stride: 50,
            kind: CourtesyKind::Speed,
        }
    }

    #[test]
    fn oracle_scores_perfectly() {
        let (events, labels) = corpus(20);
        let e = evaluate(&Oracle, "oracle", &events, &labels, &cfg()).unwrap();
        assert!(e.report.spacing_mse < 1e-6, "{}", e.report.spacing_mse);
        assert!(e.report.speed_mse == 0.0);
        assert!(e.report.courtesy_corr.unwrap() > 0.95);
        assert_eq!(e.report.collision_rate, 0.0);
        assert_eq!(e.report.n_events, 20);
    }

    #[test]
    fn constant_model_has_undefined_correlation() {
        let (events, labels) = corpus(10);
        let e = evaluate(&Constant, "constant", &events, &labels, &cfg()).unwrap();
        assert_eq!(e.report.courtesy_corr, None);
        assert!(e.report.speed_mse > 0.0);
    }

    #[test]
    fn event_order_does_not_matter() {
        let (events, labels) = corpus(12);
        let a = evaluate(&Oracle, "o", &events, &labels, &cfg()).unwrap().report;
        let (mut ev2, mut lb2) = (events.clone(), labels.clone());
        ev2.reverse();
        lb2.reverse();
        let b = evaluate(&Oracle, "o", &ev2, &lb2, &cfg()).unwrap().report;
        assert!((a.spacing_mse - b.spacing_mse).abs() < 1e-12);
        assert!((a.courtesy_mse - b.courtesy_mse).abs() < 1e-12);
        assert!((a.courtesy_corr.unwrap() - b.courtesy_corr.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pearson_properties() {
        let x = [1.0, 2.0, 3.0, 5.0, 8.0];
        let y = [2.0, 1.0, 4.0, 3.0, 7.0];
        let r = pearson(&x, &y).unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 0.5 * v + 100.0).collect();
        assert!((pearson(&x2, &y2).unwrap() - r).abs() < 1e-12);
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&x, &[1.0; 5]), None);
        assert_eq!(pearson(&[1.0], &[2.0]), None);
    }

    #[test]
    fn controllability_requires_conditioning() {
        let (events, labels) = corpus(3);
        let err = controllability(&Constant, "c", &events, &labels, &cfg(), &[1.0]).unwrap_err();
        assert!(err.to_string().contains("ψ-conditioned"));
        assert!(controllability(&Oracle, "o", &events, &labels, &cfg(), &[0.0]).is_err());
    }

    #[test]
    fn unit_scale_matches_evaluate() {
        let (events, labels) = corpus(6);
        let e = evaluate(&Oracle, "o", &events, &labels, &cfg()).unwrap();
        let c = controllability(&Oracle, "o", &events, &labels, &cfg(), &[0.5, 1.0]).unwrap();
        assert_eq!(c.windows[1], e.windows);
        let total: f64 = c.scales[0].histogram.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn behaved_matches_label_on_full_series() {
        let (events, _) = corpus(3);
        for ev in &events {
            let l = label_event(ev, CourtesyKind::Speed).unwrap();
            let b = behaved_discourtesy(CourtesyKind::Speed, &ev.fv_speeds(), ev.dt).unwrap();
            assert!((l.value - b).abs() < 1e-12);
        }
    }

    #[test]
    fn table_columns_in_order() {
        let r = EvalReport {
            model: "Edit_LSTM_IDM".into(),
            spacing_mse: 1.0,
            speed_mse: 0.5,
            courtesy_mse: 0.001,
            courtesy_corr: Some(0.9),
            n_events: 3,
            n_windows: 9,
            collision_rate: 0.0,
        };
        let t = metrics_table(&[r]);
        let head = t.lines().next().unwrap();
        let pos: Vec<usize> = ["Spacing MSE", "Speed MSE", "Courtesy MSE", "Courtesy Metric Correlation"]
            .iter()
            .map(|h| head.find(h).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(t.contains("Edit_LSTM_IDM"));
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![
            EvalReport {
                model: "a".into(),
                spacing_mse: 1.234567890123,
                speed_mse: 0.1,
                courtesy_mse: 1e-5,
                courtesy_corr: None,
                n_events: 4,
                n_windows: 8,
                collision_rate: 0.125,
            },
            EvalReport {
                model: "b".into(),
                spacing_mse: 2.0,
                speed_mse: 0.3,
                courtesy_mse: 2e-5,
                courtesy_corr: Some(-0.25),
                n_events: 4,
                n_windows: 8,
                collision_rate: 0.0,
            },
        ];
        let p = dir.path().join("m.csv");
        write_metrics(&p, &reports).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), reports);

        let (events, labels) = corpus(4);
        let c = controllability(&Oracle, "o", &events, &labels, &cfg(), &[0.5, 1.5]).unwrap();
        let p = dir.path().join("s.csv");
        write_controllability_summary(&p, &c).unwrap();
        let back = read_controllability_summary(&p).unwrap();
        for (a, b) in back.iter().zip(&c.scales) {
            assert!((a.median_time_gap - b.median_time_gap).abs() < 1e-9);
            assert!((a.mean_behaved_psi - b.mean_behaved_psi).abs() < 1e-9);
        }

        let empty = controllability(&Oracle, "o", &events, &labels, &cfg(), &[]).unwrap();
        let p = dir.path().join("h.csv");
        write_time_gap_histograms(&p, &empty).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "scale,bin_lo,bin_hi,fraction\n");
    }
}
