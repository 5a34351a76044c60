//! Synthetic car-following corpus.
//!
//! A leader follows a speed profile and a follower is simulated with the IDM.
//! Each event draws its own follower parameters from a latent aggressiveness
//! `u ∈ [−h, h]`: larger `u` means a shorter desired time headway and
//! stronger acceleration and braking, which makes the follower track leader
//! oscillations more closely and so raises its discourtesy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::courtesy::{label_event, CourtesyKind, DiscourtesyLabel};
use crate::models::idm::{idm_accel, IdmParams, BOUNDS};
use crate::rollout::update_spacing;
use crate::trajectory::{TrajectoryEvent, TrajectoryPoint};
use crate::{Error, Result};

const MAX_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LvProfile {
    Constant,
    /// `base + amplitude·sin(2π·t/period + φ)` with a random phase per event.
    Sine,
    /// Linear ramps between random speeds in `base ± amplitude`, one knot per period.
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub profile: LvProfile,
    /// Leader mean speed (m/s).
    pub base_speed: f64,
    /// Leader speed amplitude (m/s).
    pub amplitude: f64,
    /// Profile period (s).
    pub period: f64,
    /// Recorded duration per event (s).
    pub duration: f64,
    /// Simulated time before recording starts (s).
    pub warmup: f64,
    pub dt: f64,
    /// Nominal follower parameters.
    pub follower: IdmParams,
    /// Spread of the latent aggressiveness, 0 gives every event the nominal follower.
    pub heterogeneity: f64,
    /// Independent log-scale jitter applied to each parameter.
    pub jitter: f64,
    /// Spacing at the start of the warmup; equilibrium spacing when unset.
    pub initial_spacing: Option<f64>,
    /// Log-scale spread of a random factor applied to the initial spacing.
    pub initial_spacing_spread: f64,
    /// Standard deviation of Gaussian noise on recorded follower speeds.
    pub noise_std: f64,
    /// Kind of the labels returned with the corpus.
    pub label_kind: CourtesyKind,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            profile: LvProfile::Sine,
            base_speed: 25.0,
            amplitude: 2.0,
            period: 5.0,
            duration: 20.0,
            warmup: 20.0,
            dt: crate::DEFAULT_DT,
            follower: IdmParams::default(),
            heterogeneity: 1.0,
            jitter: 0.05,
            initial_spacing: None,
            initial_spacing_spread: 0.0,
            noise_std: 0.0,
            label_kind: CourtesyKind::Speed,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(self.duration > 15.0) {
            return bad(format!("duration must exceed 15 s, got {}", self.duration));
        }
        if !(self.base_speed > 0.0) {
            return bad(format!("base speed must be positive, got {}", self.base_speed));
        }
        if !(self.amplitude >= 0.0 && self.amplitude < self.base_speed) {
            return bad(format!(
                "amplitude {} must be in [0, base speed {})",
                self.amplitude, self.base_speed
            ));
        }
        if self.profile != LvProfile::Constant && !(self.period > 0.0) {
            return bad(format!("period must be positive, got {}", self.period));
        }
        if !(self.dt > 0.0) || !(self.warmup >= 0.0) {
            return bad("dt must be positive and warmup non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) || !(self.jitter >= 0.0) {
            return bad("heterogeneity must be in [0, 1] and jitter non-negative".into());
        }
        if !(self.initial_spacing_spread >= 0.0) {
            return bad("initial spacing spread must be non-negative".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise std must be non-negative, got {}", self.noise_std));
        }
        if let Some(s) = self.initial_spacing {
            if !(s > 0.0) {
                return bad(format!("initial spacing must be positive, got {s}"));
            }
        }
        self.follower.validate()
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds / self.dt).round() as usize
    }
}

/// Generated events with their labels and the follower that produced each.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub events: Vec<TrajectoryEvent>,
    pub labels: Vec<DiscourtesyLabel>,
    pub followers: Vec<IdmParams>,
    /// Latent aggressiveness per event.
    pub aggressiveness: Vec<f64>,
}

/// Follower parameters for latent aggressiveness `u`, before jitter.
pub fn follower_for(nominal: &IdmParams, u: f64) -> IdmParams {
    let p = IdmParams {
        t_headway: nominal.t_headway * 3f64.powf(-u),
        a_max: nominal.a_max * 2f64.powf(u),
        b_comfort: nominal.b_comfort * 2f64.powf(u),
        ..*nominal
    };
    clamp_to_bounds(p)
}

fn clamp_to_bounds(p: IdmParams) -> IdmParams {
    let mut a = p.to_array();
    for (x, (lo, hi)) in a.iter_mut().zip(BOUNDS) {
        *x = x.clamp(lo, hi);
    }
    IdmParams::from_array(a)
}

struct Profile {
    kind: LvProfile,
    base: f64,
    amplitude: f64,
    period: f64,
    phase: f64,
    knots: Vec<f64>,
}

impl Profile {
    fn draw(spec: &ScenarioSpec, total: f64, rng: &mut ChaCha8Rng) -> Self {
        let phase = rng.random_range(0.0..2.0 * PI);
        let knots = if spec.profile == LvProfile::Piecewise {
            let n = (total / spec.period).ceil() as usize + 2;
            (0..n)
                .map(|_| spec.base_speed + spec.amplitude * rng.random_range(-1.0..=1.0))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            kind: spec.profile,
            base: spec.base_speed,
            amplitude: spec.amplitude,
            period: spec.period,
            phase,
            knots,
        }
    }

    fn speed(&self, t: f64) -> f64 {
        match self.kind {
            LvProfile::Constant => self.base,
            LvProfile::Sine => self.base + self.amplitude * (2.0 * PI * t / self.period + self.phase).sin(),
            LvProfile::Piecewise => {
                let x = t / self.period;
                let i = (x.floor() as usize).min(self.knots.len() - 2);
                let w = x - i as f64;
                self.knots[i] * (1.0 - w) + self.knots[i + 1] * w
            }
        }
    }
}

/// Simulates one follower; `None` when the follower collides.
fn simulate(
    spec: &ScenarioSpec,
    p: &IdmParams,
    profile: &Profile,
    gap_factor: f64,
) -> Option<Vec<TrajectoryPoint>> {
    let dt = spec.dt;
    let warm = spec.samples(spec.warmup);
    let n = spec.samples(spec.duration) + 1;
    let mut v_lv = profile.speed(0.0);
    let mut v = v_lv;
    let mut s = spec.initial_spacing.unwrap_or_else(|| p.equilibrium_spacing(v)) * gap_factor;
    if !s.is_finite() || s <= 0.0 {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..warm + n {
        if k >= warm {
            out.push(TrajectoryPoint {
                t: (k - warm) as f64 * dt,
                v_lv,
                v_fv: v,
                spacing: s,
            });
            if out.len() == n {
                break;
            }
        }
        let a = idm_accel(v, v - v_lv, s, p).ok()?;
        let v_next = (v + a * dt).max(0.0);
        let lv_next = profile.speed((k + 1) as f64 * dt);
        s = update_spacing(s, v_lv - v, lv_next - v_next, dt);
        if s <= 0.0 {
            return None;
        }
        v = v_next;
        v_lv = lv_next;
    }
    Some(out)
}

fn generate_one(spec: &ScenarioSpec, index: usize) -> Result<(TrajectoryEvent, IdmParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let total = spec.warmup + spec.duration + spec.dt;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    for _ in 0..MAX_DRAWS {
        let u = spec.heterogeneity * rng.random_range(-1.0..=1.0);
        let mut p = follower_for(&spec.follower, u);
        if spec.jitter > 0.0 {
            let mut a = p.to_array();
            for x in a.iter_mut() {
                *x *= (spec.jitter * rng.random_range(-1.0..=1.0)).exp();
            }
            p = clamp_to_bounds(IdmParams::from_array(a));
        }
        let profile = Profile::draw(spec, total, &mut rng);
        let gap_factor = if spec.initial_spacing_spread > 0.0 {
            (spec.initial_spacing_spread * rng.random_range(-1.0..=1.0)).exp()
        } else {
            1.0
        };
        let Some(mut points) = simulate(spec, &p, &profile, gap_factor) else {
            continue;
        };
        if spec.noise_std > 0.0 {
            for pt in &mut points {
                pt.v_fv = (pt.v_fv + noise.sample(&mut rng)).max(0.0);
            }
        }
        let event = TrajectoryEvent {
            event_id: format!("syn{index:05}"),
            lv_id: format!("lv{index:05}"),
            points,
            dt: spec.dt,
        };
        return Ok((event, p, u));
    }
    Err(Error::Degenerate(format!(
        "event {index}: every one of {MAX_DRAWS} follower draws collided"
    )))
}

/// Generates `n_events` events. Each event uses its own random stream, so
/// the result does not depend on the number of worker threads.
pub fn generate(spec: &ScenarioSpec, n_events: usize) -> Result<Corpus> {
    spec.validate()?;
    if n_events == 0 {
        return Err(Error::Invalid("n_events must be at least 1".into()));
    }
    let drawn = (0..n_events)
        .into_par_iter()
        .map(|i| generate_one(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let mut corpus = Corpus {
        events: Vec::with_capacity(n_events),
        labels: Vec::with_capacity(n_events),
        followers: Vec::with_capacity(n_events),
        aggressiveness: Vec::with_capacity(n_events),
    };
    for (ev, p, u) in drawn {
        corpus.labels.push(label_event(&ev, spec.label_kind)?);
        corpus.events.push(ev);
        corpus.followers.push(p);
        corpus.aggressiveness.push(u);
    }
    Ok(corpus)
}
