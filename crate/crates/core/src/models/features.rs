use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::courtesy::DiscourtesyLabel;
use crate::trajectory::TrajectoryEvent;
use crate::{Error, Result};

/// Per-step feature order: spacing, leader speed, follower speed, relative
/// speed, and ψ for conditioned models.
pub const FEATURE_NAMES: [&str; 5] = ["spacing", "v_lv", "v_fv", "delta_v", "psi"];
pub(crate) const V_LV: usize = 1;
pub(crate) const V_FV: usize = 2;
pub(crate) const PSI: usize = 4;

/// Feature means and standard deviations from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

impl Default for Standardizer {
    fn default() -> Self {
        Self {
            mean: [0.0; 5],
            std: [1.0; 5],
        }
    }
}

/// Zero spread maps to unit scale so constant features standardize to zero.
fn spread(var: f64) -> f64 {
    let s = var.max(0.0).sqrt();
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

impl Standardizer {
    /// Fits kinematic statistics over every point of `events` and ψ statistics
    /// over the per-event labels.
    pub fn fit<'a>(
        events: impl IntoIterator<Item = &'a TrajectoryEvent>,
        psi: &[f64],
    ) -> Result<Self> {
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        let mut n = 0usize;
        for ev in events {
            for p in &ev.points {
                let f = [p.spacing, p.v_lv, p.v_fv, p.delta_v()];
                for i in 0..4 {
                    sum[i] += f[i];
                    sq[i] += f[i] * f[i];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Invalid("cannot fit standardizer on zero points".into()));
        }
        let mut out = Self::default();
        for i in 0..4 {
            let m = sum[i] / n as f64;
            out.mean[i] = m;
            out.std[i] = spread(sq[i] / n as f64 - m * m);
        }
        if !psi.is_empty() {
            let m = psi.iter().sum::<f64>() / psi.len() as f64;
            let v = psi.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / psi.len() as f64;
            out.mean[PSI] = m;
            out.std[PSI] = spread(v);
        }
        Ok(out)
    }

    pub fn apply(&self, feature: usize, x: f64) -> f64 {
        (x - self.mean[feature]) / self.std[feature]
    }

    pub fn invert(&self, feature: usize, z: f64) -> f64 {
        z * self.std[feature] + self.mean[feature]
    }
}

/// History / horizon window within an event. History covers
/// `[start, start + history)`; predictions cover the next `horizon` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub history: usize,
    pub horizon: usize,
}

impl Window {
    /// Index of the last observed sample, where rollouts start.
    pub fn anchor(&self) -> usize {
        self.start + self.history - 1
    }

    pub fn end(&self) -> usize {
        self.start + self.history + self.horizon
    }

    pub fn check(&self, event: &TrajectoryEvent) -> Result<()> {
        if self.history == 0 || self.horizon == 0 || self.end() > event.len() {
            return Err(Error::Invalid(format!(
                "window {}..{} (history {}, horizon {}) does not fit event {} of length {}",
                self.start,
                self.end(),
                self.history,
                self.horizon,
                event.event_id,
                event.len()
            )));
        }
        Ok(())
    }

    pub fn horizon_range(&self) -> std::ops::Range<usize> {
        self.start + self.history..self.end()
    }
}

/// Window starts `0, stride, 2·stride, …` that fit inside `event`.
pub fn windows(event: &TrajectoryEvent, history: usize, horizon: usize, stride: usize) -> Vec<Window> {
    let span = history + horizon;
    if event.len() < span || stride == 0 {
        return Vec::new();
    }
    (0..=event.len() - span)
        .step_by(stride)
        .map(|start| Window {
            start,
            history,
            horizon,
        })
        .collect()
}

/// Raw state at the last observed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub v_fv: f64,
    pub v_lv: f64,
    pub spacing: f64,
}

/// Everything a follower model sees for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Standardized history features, `[history × F]` with F = 4 or 5.
    pub history: Tensor,
    /// Leader speeds over the horizon (m/s).
    pub future_lv: Vec<f64>,
    /// Commanded discourtesy (conditioned models only).
    pub psi: Option<DiscourtesyLabel>,
    pub anchor: Anchor,
    pub dt: f64,
}

impl ModelInput {
    pub fn horizon(&self) -> usize {
        self.future_lv.len()
    }

    pub fn features(&self) -> usize {
        self.history.shape()[1]
    }

    /// Builds the input for `window` of `event`. ψ is appended as a history
    /// column when `conditioned`.
    pub fn from_event(
        event: &TrajectoryEvent,
        window: Window,
        psi: Option<DiscourtesyLabel>,
        conditioned: bool,
        norm: &Standardizer,
    ) -> Result<Self> {
        window.check(event)?;
        let psi = if conditioned {
            Some(psi.ok_or_else(|| {
                Error::Invalid("conditioned model requires a discourtesy value".into())
            })?)
        } else {
            None
        };
        let f = if conditioned { 5 } else { 4 };
        let mut data = Vec::with_capacity(window.history * f);
        for p in &event.points[window.start..window.start + window.history] {
            let raw = [p.spacing, p.v_lv, p.v_fv, p.delta_v()];
            data.extend(raw.iter().enumerate().map(|(i, x)| norm.apply(i, *x)));
            if let Some(psi) = psi {
                data.push(norm.apply(PSI, psi.value));
            }
        }
        let a = event.points[window.anchor()];
        Ok(Self {
            history: Tensor::matrix(window.history, f, data)?,
            future_lv: event.points[window.horizon_range()]
                .iter()
                .map(|p| p.v_lv)
                .collect(),
            psi,
            anchor: Anchor {
                v_fv: a.v_fv,
                v_lv: a.v_lv,
                spacing: a.spacing,
            },
            dt: event.dt,
        })
    }
}
