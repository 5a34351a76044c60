#![allow(dead_code)]

use editfollower::courtesy::{label_event, CourtesyKind};
use editfollower::models::{Architecture, FollowerModel, ModelConfig, Standardizer, Window};
use editfollower::synthcorpus::{generate, Corpus, ScenarioSpec};
use editfollower::training::{build_samples, window_loss, WindowSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn tiny_config(arch: Architecture, conditioned: bool) -> ModelConfig {
    ModelConfig {
        arch,
        conditioned,
        hidden: 8,
        layers: 1,
        heads: 2,
        history: 4,
        horizon: 3,
        dt: 0.1,
    }
}

pub fn small_corpus(n: usize, seed: u64) -> Corpus {
    let spec = ScenarioSpec {
        seed,
        ..ScenarioSpec::default()
    };
    generate(&spec, n).unwrap()
}

/// A tiny model with fitted statistics and one random window of `corpus`.
pub fn tiny_instance(
    arch: Architecture,
    conditioned: bool,
    kind: CourtesyKind,
    corpus: &Corpus,
    seed: u64,
) -> (FollowerModel, WindowSample) {
    let horizon = kind.min_len().max(3);
    let cfg = ModelConfig {
        horizon,
        ..tiny_config(arch, conditioned)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i = rng.random_range(0..corpus.events.len());
    let ev = &corpus.events[i];
    let label = label_event(ev, kind).unwrap();
    let norm = Standardizer::fit([ev], &[label.value, label.value * 1.5]).unwrap();
    let model = FollowerModel::new(cfg, norm, conditioned.then_some(kind), seed).unwrap();
    let start = rng.random_range(0..ev.len() - cfg.history - cfg.horizon);
    let w = Window {
        start,
        history: cfg.history,
        horizon: cfg.horizon,
    };
    let all = build_samples(&model, std::slice::from_ref(ev), &[label], &[ev.event_id.clone()], 1).unwrap();
    let sample = all.into_iter().find(|s| s.window == w).unwrap();
    (model, sample)
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` of the composite window
/// loss with respect to every model parameter.
pub fn model_grad_error(model: &FollowerModel, sample: &WindowSample, alpha: f64) -> f64 {
    let (_, grad) = window_loss(model, sample, alpha, true).unwrap();
    let grad = grad.unwrap();
    let flat = model.params.flatten();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] = flat[i] + FD_STEP;
        probe.params.assign_flat(&p).unwrap();
        let up = window_loss(&probe, sample, alpha, false).unwrap().0.l_total;
        p[i] = flat[i] - FD_STEP;
        probe.params.assign_flat(&p).unwrap();
        let down = window_loss(&probe, sample, alpha, false).unwrap().0.l_total;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(1.0));
    }
    worst
}
