use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use editfollower::courtesy::{label_events, write_labels, CourtesyKind, DiscourtesyLabel, LabelRecord};
use editfollower::evaluation::{
    controllability, evaluate, metrics_table, write_controllability_summary, write_metrics, write_psi_scatter,
    write_time_gap_histograms, write_window_metrics, EvalConfig,
};
use editfollower::models::checkpoint::Checkpoint;
use editfollower::models::{windows, Architecture, FollowerModel, ModelConfig, SpeedPredictor};
use editfollower::rollout::{rollout, write_rollouts};
use editfollower::synthcorpus::{generate, ScenarioSpec};
use editfollower::training::{labeled_events, train, write_history, TrainConfig};
use editfollower::trajectory::{
    extract_events, load_events, split, write_events, CsvSchema, SplitBucket, TrajectoryEvent,
};

use crate::config::{load_section, merge_fields, parent_dir, required, write_snapshot, UsageError};

const CHECKPOINT_FILE: &str = "checkpoint.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_kind(s: &str) -> Result<CourtesyKind> {
    s.parse().map_err(|e: editfollower::Error| usage(e.to_string()))
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractOpts {
    /// Raw trajectory CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where to write the extracted events
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Events must last strictly longer than this many seconds
    #[arg(long)]
    pub min_duration: Option<f64>,
    /// Resampling interval in seconds
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub event_id_column: Option<String>,
    #[arg(long)]
    pub t_column: Option<String>,
    #[arg(long)]
    pub lv_id_column: Option<String>,
    #[arg(long)]
    pub v_lv_column: Option<String>,
    #[arg(long)]
    pub v_fv_column: Option<String>,
    #[arg(long)]
    pub spacing_column: Option<String>,
    /// Treat the whole file as one recording without an event id column
    #[arg(long)]
    pub single_recording: Option<bool>,
}

pub fn extract(mut o: ExtractOpts, config: Option<&Path>) -> Result<()> {
    let mut f: ExtractOpts = load_section(config, "extract")?;
    merge_fields!(o, f; input, output, min_duration, dt, event_id_column, t_column, lv_id_column,
        v_lv_column, v_fv_column, spacing_column, single_recording);
    required(&o.input, "input")?;
    required(&o.output, "output")?;
    let d = CsvSchema::default();
    o.min_duration.get_or_insert(15.0);
    o.dt.get_or_insert(editfollower::DEFAULT_DT);
    o.single_recording.get_or_insert(false);
    let schema = CsvSchema {
        event_id: (!o.single_recording.unwrap())
            .then(|| o.event_id_column.get_or_insert(d.event_id.clone().unwrap()).clone()),
        t: o.t_column.get_or_insert(d.t).clone(),
        lv_id: o.lv_id_column.get_or_insert(d.lv_id).clone(),
        v_lv: o.v_lv_column.get_or_insert(d.v_lv).clone(),
        v_fv: o.v_fv_column.get_or_insert(d.v_fv).clone(),
        spacing: o.spacing_column.get_or_insert(d.spacing).clone(),
    };
    let output = o.output.clone().unwrap();
    write_snapshot(&parent_dir(&output), "extract", &o)?;
    let raw = load_events(o.input.as_ref().unwrap(), &schema, o.dt.unwrap())?;
    let found = extract_events(raw, o.min_duration.unwrap());
    write_events(&output, &found.events)?;
    println!(
        "kept {} events, rejected {} shorter than {} s",
        found.events.len(),
        found.rejected,
        o.min_duration.unwrap()
    );
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelOpts {
    /// Events CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Labels CSV `event_id,kind,psi`
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// speed, accel or jerk
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
}

pub fn label(mut o: LabelOpts, config: Option<&Path>) -> Result<()> {
    let mut f: LabelOpts = load_section(config, "label")?;
    merge_fields!(o, f; input, output, kind, dt);
    required(&o.input, "input")?;
    required(&o.output, "output")?;
    let kind = parse_kind(o.kind.get_or_insert("speed".into()))?;
    let dt = *o.dt.get_or_insert(editfollower::DEFAULT_DT);
    let output = o.output.clone().unwrap();
    write_snapshot(&parent_dir(&output), "label", &o)?;
    let events = load_events(o.input.as_ref().unwrap(), &CsvSchema::default(), dt)?;
    let labels = label_events(&events, kind)?;
    write_labels(&output, &labels)?;
    println!("labelled {} events with {kind} discourtesy", labels.len());
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOpts {
    /// Scenario TOML; overrides the `scenario` table of the config file
    #[arg(long)]
    #[serde(skip_serializing)]
    pub spec: Option<PathBuf>,
    /// Number of events
    #[arg(long)]
    pub n: Option<usize>,
    /// Corpus CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Labels sidecar (default: next to the corpus, `.labels.csv`)
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Root seed; overrides the scenario seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub scenario: Option<ScenarioSpec>,
}

pub fn synth(mut o: SynthOpts, config: Option<&Path>) -> Result<()> {
    let mut f: SynthOpts = load_section(config, "synth")?;
    merge_fields!(o, f; spec, n, out, labels, seed, scenario);
    required(&o.out, "out")?;
    if let Some(path) = o.spec.take() {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        o.scenario = Some(toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let mut scenario = o.scenario.take().unwrap_or_default();
    scenario.seed = *o.seed.get_or_insert(scenario.seed);
    o.scenario = Some(scenario);
    let n = *o.n.get_or_insert(2000);
    let out = o.out.clone().unwrap();
    let labels_path = o
        .labels
        .get_or_insert_with(|| out.with_extension("labels.csv"))
        .clone();
    write_snapshot(&parent_dir(&out), "synth", &o)?;
    let corpus = generate(&scenario, n)?;
    write_events(&out, &corpus.events)?;
    let records: Vec<LabelRecord> = corpus
        .events
        .iter()
        .zip(&corpus.labels)
        .map(|(e, l)| LabelRecord {
            event_id: e.event_id.clone(),
            kind: l.kind,
            psi: l.value,
        })
        .collect();
    write_labels(&labels_path, &records)?;
    println!("generated {n} events into {}", out.display());
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOpts {
    /// Events CSV (all splits)
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Output directory for the checkpoint and loss history
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// lstm, lstm_idm or transformer
    #[arg(long)]
    pub arch: Option<String>,
    /// speed, accel or jerk; `none` trains the unconditioned baseline
    /// (its courtesy loss term then uses speed discourtesy)
    #[arg(long)]
    pub courtesy: Option<String>,
    /// Weight of the courtesy loss
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Root seed for initialization and shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the train/val/test split (default: the root seed)
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// History length in samples
    #[arg(long)]
    pub history: Option<usize>,
    /// Prediction horizon in samples
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Window stride in samples (default: horizon / 2)
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

pub fn train_cmd(mut o: TrainOpts, config: Option<&Path>) -> Result<()> {
    let mut f: TrainOpts = load_section(config, "train")?;
    merge_fields!(o, f; events, out, arch, courtesy, alpha, lr, batch_size, epochs, patience, seed,
        split_seed, hidden, layers, heads, history, horizon, stride, grad_clip, dt);
    required(&o.events, "events")?;
    required(&o.out, "out")?;
    let dt_default = TrainConfig::default();
    let dm = ModelConfig::default();
    let arch: Architecture = o
        .arch
        .get_or_insert(dm.arch.as_str().into())
        .parse()
        .map_err(|e: editfollower::Error| usage(e.to_string()))?;
    let courtesy = o.courtesy.get_or_insert("speed".into()).clone();
    let (conditioned, kind) = match courtesy.as_str() {
        "none" => (false, CourtesyKind::Speed),
        other => (true, parse_kind(other)?),
    };
    let seed = *o.seed.get_or_insert(dt_default.seed);
    let split_seed = *o.split_seed.get_or_insert(seed);
    let horizon = *o.horizon.get_or_insert(dm.horizon);
    let cfg = TrainConfig {
        alpha: *o.alpha.get_or_insert(dt_default.alpha),
        lr: *o.lr.get_or_insert(dt_default.lr),
        batch_size: *o.batch_size.get_or_insert(dt_default.batch_size),
        epochs: *o.epochs.get_or_insert(dt_default.epochs),
        patience: *o.patience.get_or_insert(dt_default.patience),
        seed,
        courtesy: kind,
        model: ModelConfig {
            arch,
            conditioned,
            hidden: *o.hidden.get_or_insert(dm.hidden),
            layers: *o.layers.get_or_insert(dm.layers),
            heads: *o.heads.get_or_insert(dm.heads),
            history: *o.history.get_or_insert(dm.history),
            horizon,
            dt: *o.dt.get_or_insert(dm.dt),
        },
        stride: Some(*o.stride.get_or_insert((horizon / 2).max(1))),
        grad_clip: *o.grad_clip.get_or_insert(dt_default.grad_clip),
    };
    cfg.validate()?;
    let out = o.out.clone().unwrap();
    write_snapshot(&out, "train", &o)?;
    let events = load_events(o.events.as_ref().unwrap(), &CsvSchema::default(), cfg.model.dt)?;
    let assignment = split(&events, split_seed)?;
    let outcome = train(&events, &assignment, &cfg)?;
    Checkpoint::from_model(&outcome.model, split_seed).save(&out.join(CHECKPOINT_FILE))?;
    write_history(&out.join("history.csv"), &outcome.history)?;
    let best = outcome
        .val_history()
        .find(|r| r.epoch == outcome.best_epoch)
        .map(|r| r.loss.l_total)
        .unwrap_or(f64::NAN);
    println!(
        "{}: best epoch {} (val l_total {best:.6}) on {} training windows; checkpoint in {}",
        outcome.model.name(),
        outcome.best_epoch,
        outcome.train_windows,
        out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(FollowerModel, u64)> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let ck = Checkpoint::load(&file)?;
    let seed = ck.split_seed;
    Ok((ck.into_model()?, seed))
}

/// Events of `split_name` (`all`, `train`, `val` or `test`) under the split
/// recorded in the checkpoint.
fn select_events(events: Vec<TrajectoryEvent>, split_name: &str, split_seed: u64) -> Result<Vec<TrajectoryEvent>> {
    if split_name == "all" {
        return Ok(events);
    }
    let bucket: SplitBucket = split_name
        .parse()
        .map_err(|e: editfollower::Error| usage(e.to_string()))?;
    let assignment = split(&events, split_seed)?;
    let chosen = assignment.select(&events, bucket).into_iter().cloned().collect::<Vec<_>>();
    if chosen.is_empty() {
        bail!("the {split_name} split is empty");
    }
    Ok(chosen)
}

fn courtesy_kind(model: &FollowerModel, requested: &Option<String>) -> Result<CourtesyKind> {
    match (model.courtesy, requested) {
        (Some(k), Some(r)) if parse_kind(r)? != k => Err(usage(format!(
            "model is conditioned on {k} discourtesy, --kind {r} conflicts"
        ))),
        (Some(k), _) => Ok(k),
        (None, Some(r)) => parse_kind(r),
        (None, None) => Ok(CourtesyKind::Speed),
    }
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOpts {
    /// Checkpoint file or training output directory
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Factor applied to each event's ψ before it is fed to the model
    #[arg(long)]
    pub psi_scale: Option<f64>,
    /// Per-step rollout CSV
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// all, train, val or test
    #[arg(long)]
    pub split: Option<String>,
}

pub fn simulate(mut o: SimulateOpts, config: Option<&Path>) -> Result<()> {
    let mut f: SimulateOpts = load_section(config, "simulate")?;
    merge_fields!(o, f; model, events, psi_scale, output, split);
    required(&o.model, "model")?;
    required(&o.events, "events")?;
    required(&o.output, "output")?;
    let scale = *o.psi_scale.get_or_insert(1.0);
    if !(scale > 0.0) {
        return Err(usage(format!("--psi-scale must be positive, got {scale}")));
    }
    let split_name = o.split.get_or_insert("all".into()).clone();
    let output = o.output.clone().unwrap();
    write_snapshot(&parent_dir(&output), "simulate", &o)?;
    let (model, split_seed) = load_model(o.model.as_ref().unwrap())?;
    let all = load_events(o.events.as_ref().unwrap(), &CsvSchema::default(), model.config.dt)?;
    let events = select_events(all, &split_name, split_seed)?;
    let kind = courtesy_kind(&model, &None)?;
    let (events, labels, _) = labeled_events(&events, kind);
    let cfg = model.config;
    let mut rollouts = Vec::new();
    for (ev, l) in events.iter().zip(&labels) {
        let psi: Option<DiscourtesyLabel> = model.is_conditioned().then(|| l.scaled(scale));
        for w in windows(ev, cfg.history, cfg.horizon, cfg.horizon) {
            rollouts.push((ev, w, rollout(&model, ev, psi, w)?));
        }
    }
    write_rollouts(&output, &rollouts)?;
    let collisions = rollouts.iter().filter(|r| r.2.collision_flag).count();
    println!(
        "simulated {} windows over {} events ({collisions} with collisions)",
        rollouts.len(),
        events.len()
    );
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateOpts {
    /// Checkpoint file or training directory; repeat to compare models
    #[arg(long)]
    pub model: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// all, train, val or test
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Discourtesy kind for unconditioned models
    #[arg(long)]
    pub kind: Option<String>,
}

pub fn evaluate_cmd(mut o: EvaluateOpts, config: Option<&Path>) -> Result<()> {
    let mut f: EvaluateOpts = load_section(config, "evaluate")?;
    merge_fields!(o, f; model, events, split, report, kind);
    required(&o.model, "model")?;
    required(&o.events, "events")?;
    required(&o.report, "report")?;
    let split_name = o.split.get_or_insert("test".into()).clone();
    let report_dir = o.report.clone().unwrap();
    write_snapshot(&report_dir, "evaluate", &o)?;
    let mut reports = Vec::new();
    for path in o.model.as_ref().unwrap() {
        let (model, split_seed) = load_model(path)?;
        let kind = courtesy_kind(&model, &o.kind)?;
        let all = load_events(o.events.as_ref().unwrap(), &CsvSchema::default(), model.config.dt)?;
        let events = select_events(all, &split_name, split_seed)?;
        let (events, labels, _) = labeled_events(&events, kind);
        let cfg = EvalConfig::for_model(&model, kind);
        let name = model.name();
        let eval = evaluate(&model, &name, &events, &labels, &cfg)?;
        write_window_metrics(&report_dir.join(format!("windows_{name}.csv")), &eval)?;
        reports.push(eval.report);
    }
    write_metrics(&report_dir.join("metrics.csv"), &reports)?;
    print!("{}", metrics_table(&reports));
    Ok(())
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllabilityOpts {
    /// Checkpoint of a ψ-conditioned model
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// all, train, val or test
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated ψ multipliers
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Output directory
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn controllability_cmd(mut o: ControllabilityOpts, config: Option<&Path>) -> Result<()> {
    let mut f: ControllabilityOpts = load_section(config, "controllability")?;
    merge_fields!(o, f; model, events, split, scales, report);
    required(&o.model, "model")?;
    required(&o.events, "events")?;
    required(&o.report, "report")?;
    let split_name = o.split.get_or_insert("test".into()).clone();
    let scales = o.scales.get_or_insert(vec![0.5, 1.0, 1.5]).clone();
    let report_dir = o.report.clone().unwrap();
    write_snapshot(&report_dir, "controllability", &o)?;
    let (model, split_seed) = load_model(o.model.as_ref().unwrap())?;
    let kind = courtesy_kind(&model, &None)?;
    let all = load_events(o.events.as_ref().unwrap(), &CsvSchema::default(), model.config.dt)?;
    let events = select_events(all, &split_name, split_seed)?;
    let (events, labels, _) = labeled_events(&events, kind);
    let cfg = EvalConfig::for_model(&model, kind);
    let report = controllability(&model, &model.name(), &events, &labels, &cfg, &scales)?;
    write_controllability_summary(&report_dir.join("controllability.csv"), &report)?;
    write_time_gap_histograms(&report_dir.join("time_gap_histograms.csv"), &report)?;
    write_psi_scatter(&report_dir.join("psi_scatter.csv"), &report)?;
    println!("scale  mean_gap  median_gap  desired_psi  behaved_psi  corr");
    for s in &report.scales {
        let corr = s.psi_corr.map_or("undefined".to_string(), |c| format!("{c:.4}"));
        println!(
            "{:<5}  {:<8.4}  {:<10.4}  {:<11.5}  {:<11.5}  {corr}",
            s.scale, s.mean_time_gap, s.median_time_gap, s.mean_desired_psi, s.mean_behaved_psi
        );
    }
    Ok(())
}
