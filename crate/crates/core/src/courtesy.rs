//! Discourtesy level ψ: the dispersion-to-magnitude ratio of the follower's
//! speed, acceleration or jerk.
//!
//! All three kinds use the population standard deviation. The denominator is
//! `|mean(v)|` for speed and `mean(|x|)` for acceleration and jerk, floored at
//! [`EPSILON`]. A signed mean of acceleration or jerk is close to zero over any
//! oscillating episode, so the absolute-value mean is used instead.

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Var};
use crate::trajectory::{forward_difference, TrajectoryEvent};
use crate::{Error, Result};

/// Denominator floor (m/s, m/s², m/s³ depending on kind).
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CourtesyKind {
    Speed,
    #[serde(rename = "accel")]
    Acceleration,
    Jerk,
}

impl CourtesyKind {
    pub const ALL: [CourtesyKind; 3] = [Self::Speed, Self::Acceleration, Self::Jerk];

    /// Minimum number of speed samples the metric needs.
    pub fn min_len(self) -> usize {
        match self {
            Self::Speed => 2,
            Self::Acceleration => 3,
            Self::Jerk => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Speed => "speed",
            Self::Acceleration => "accel",
            Self::Jerk => "jerk",
        }
    }
}

impl std::fmt::Display for CourtesyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CourtesyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speed" => Ok(Self::Speed),
            "accel" | "acceleration" => Ok(Self::Acceleration),
            "jerk" => Ok(Self::Jerk),
            other => Err(Error::Invalid(format!(
                "unknown courtesy kind {other:?} (expected speed, accel or jerk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscourtesyLabel {
    pub value: f64,
    pub kind: CourtesyKind,
}

impl DiscourtesyLabel {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            ..self
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation, computed on values shifted by the first
/// sample so that a constant series gives exactly zero.
fn pop_std(x: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().map(|v| v - x[0]).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / d.len() as f64;
    var.sqrt()
}

fn check_len(kind: CourtesyKind, n: usize) -> Result<()> {
    if n < kind.min_len() {
        return Err(Error::TooShort {
            what: match kind {
                CourtesyKind::Speed => "speed discourtesy",
                CourtesyKind::Acceleration => "acceleration discourtesy",
                CourtesyKind::Jerk => "jerk discourtesy",
            },
            required: kind.min_len(),
            actual: n,
        });
    }
    Ok(())
}

fn degenerate_speed(m: f64) -> Error {
    Error::Degenerate(format!(
        "mean speed {m:e} m/s is below {EPSILON:e}; speed discourtesy is undefined"
    ))
}

pub fn discourtesy_speed(fv_speeds: &[f64]) -> Result<DiscourtesyLabel> {
    check_len(CourtesyKind::Speed, fv_speeds.len())?;
    let m = mean(fv_speeds).abs();
    if m <= EPSILON {
        return Err(degenerate_speed(m));
    }
    Ok(DiscourtesyLabel {
        value: pop_std(fv_speeds) / m.max(EPSILON),
        kind: CourtesyKind::Speed,
    })
}

fn ratio_of_abs(x: &[f64]) -> f64 {
    let mean_abs = x.iter().map(|v| v.abs()).sum::<f64>() / x.len() as f64;
    pop_std(x) / mean_abs.max(EPSILON)
}

pub fn discourtesy_accel(fv_speeds: &[f64], dt: f64) -> Result<DiscourtesyLabel> {
    check_len(CourtesyKind::Acceleration, fv_speeds.len())?;
    let a = forward_difference(fv_speeds, dt);
    Ok(DiscourtesyLabel {
        value: ratio_of_abs(&a),
        kind: CourtesyKind::Acceleration,
    })
}

pub fn discourtesy_jerk(fv_speeds: &[f64], dt: f64) -> Result<DiscourtesyLabel> {
    check_len(CourtesyKind::Jerk, fv_speeds.len())?;
    let a = forward_difference(fv_speeds, dt);
    let j = forward_difference(&a, dt);
    Ok(DiscourtesyLabel {
        value: ratio_of_abs(&j),
        kind: CourtesyKind::Jerk,
    })
}

pub fn discourtesy(kind: CourtesyKind, fv_speeds: &[f64], dt: f64) -> Result<DiscourtesyLabel> {
    match kind {
        CourtesyKind::Speed => discourtesy_speed(fv_speeds),
        CourtesyKind::Acceleration => discourtesy_accel(fv_speeds, dt),
        CourtesyKind::Jerk => discourtesy_jerk(fv_speeds, dt),
    }
}

fn diff_var<'t>(x: Var<'t>, dt: Var<'t>) -> std::result::Result<Var<'t>, AdError> {
    let n = x.len();
    x.slice(1, n - 1)?.sub(x.slice(0, n - 1)?)?.div(dt)
}

fn pop_std_var(x: Var<'_>) -> std::result::Result<Var<'_>, AdError> {
    let d = x.sub(x.index(0)?.detach())?;
    let dev = d.sub(d.mean()?)?;
    let var = dev.square()?.mean()?;
    if var.item() == 0.0 {
        // std has no derivative at zero spread; use the zero-gradient branch
        Ok(var)
    } else {
        var.sqrt()
    }
}

/// Tape version of [`discourtesy`]; evaluates the same arithmetic in the
/// same order, so values agree with the plain functions.
pub fn discourtesy_differentiable<'t>(
    fv_speeds: Var<'t>,
    dt: f64,
    kind: CourtesyKind,
) -> Result<Var<'t>> {
    check_len(kind, fv_speeds.len())?;
    let tape = fv_speeds.tape();
    let dt = tape.scalar(dt);
    let out = match kind {
        CourtesyKind::Speed => {
            // no degenerate-mean error here: predicted speeds may all be zero
            let m = fv_speeds.mean()?;
            pop_std_var(fv_speeds)?.div(m.abs()?.floor_at(EPSILON)?)?
        }
        CourtesyKind::Acceleration | CourtesyKind::Jerk => {
            let mut x = diff_var(fv_speeds, dt)?;
            if kind == CourtesyKind::Jerk {
                x = diff_var(x, dt)?;
            }
            let denom = x.abs()?.mean()?.floor_at(EPSILON)?;
            pop_std_var(x)?.div(denom)?
        }
    };
    Ok(out)
}

/// Event-level label over the full follower speed series.
pub fn label_event(event: &TrajectoryEvent, kind: CourtesyKind) -> Result<DiscourtesyLabel> {
    discourtesy(kind, &event.fv_speeds(), event.dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub event_id: String,
    pub kind: CourtesyKind,
    pub psi: f64,
}

pub fn label_events(events: &[TrajectoryEvent], kind: CourtesyKind) -> Result<Vec<LabelRecord>> {
    events
        .iter()
        .map(|ev| {
            Ok(LabelRecord {
                event_id: ev.event_id.clone(),
                kind,
                psi: label_event(ev, kind)?.value,
            })
        })
        .collect()
}

/// Writes `event_id,kind,psi`.
pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for rec in labels {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 0.1;

    fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(5.0..30.0)).collect()
    }

    #[test]
    fn constant_speed_is_zero() {
        assert_eq!(discourtesy_speed(&[12.0; 10]).unwrap().value, 0.0);
    }

    #[test]
    fn speed_hand_value() {
        let psi = discourtesy_speed(&[10.0, 20.0]).unwrap().value;
        assert!((psi - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accel_hand_value() {
        // a = [1, 3] m/s²
        let v = [0.0, 0.1, 0.4];
        let psi = discourtesy_accel(&v, DT).unwrap().value;
        assert!((psi - 0.5).abs() < 1e-12, "{psi}");
    }

    #[test]
    fn jerk_hand_value() {
        // a = [0, 0, 0.2] m/s² gives j = [0, 2] m/s³
        let v = [1.0, 1.0, 1.0, 1.02];
        let psi = discourtesy_jerk(&v, DT).unwrap().value;
        assert!((psi - 1.0).abs() < 1e-9, "{psi}");
    }

    #[test]
    fn linear_ramp_and_quadratic_profile_are_zero() {
        let ramp: Vec<f64> = (0..30).map(|k| 10.0 + 0.5 * k as f64).collect();
        assert!(discourtesy_accel(&ramp, 1.0).unwrap().value < 1e-12);
        let quad: Vec<f64> = (0..30).map(|k| 10.0 + 0.5 * (k * k) as f64).collect();
        assert!(discourtesy_jerk(&quad, 1.0).unwrap().value < 1e-12);
    }

    #[test]
    fn reversed_constant_magnitude_accel() {
        let v = [10.0, 11.0, 10.0, 11.0, 10.0, 11.0];
        let mut rev = v;
        rev.reverse();
        let a = discourtesy_accel(&v, DT).unwrap().value;
        let b = discourtesy_accel(&rev, DT).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn length_and_degenerate_errors() {
        assert!(matches!(
            discourtesy_speed(&[1.0]),
            Err(Error::TooShort { required: 2, .. })
        ));
        assert!(matches!(
            discourtesy_accel(&[1.0, 2.0], DT),
            Err(Error::TooShort { required: 3, .. })
        ));
        assert!(matches!(
            discourtesy_jerk(&[1.0, 2.0, 3.0], DT),
            Err(Error::TooShort { required: 4, .. })
        ));
        assert!(matches!(discourtesy_speed(&[0.0; 5]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn translation_changes_only_speed_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_series(&mut rng, 40);
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.0).collect();
        let s0 = discourtesy_speed(&v).unwrap().value;
        let s1 = discourtesy_speed(&shifted).unwrap().value;
        assert!((s0 - s1).abs() > 1e-3);
        for kind in [CourtesyKind::Acceleration, CourtesyKind::Jerk] {
            let a = discourtesy(kind, &v, DT).unwrap().value;
            let b = discourtesy(kind, &shifted, DT).unwrap().value;
            assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn differentiable_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(4..60);
            let v = random_series(&mut rng, n);
            for kind in CourtesyKind::ALL {
                let plain = discourtesy(kind, &v, DT).unwrap().value;
                let tape = Tape::new();
                let x = tape.vector(&v);
                let d = discourtesy_differentiable(x, DT, kind).unwrap().item();
                assert!((plain - d).abs() < 1e-12, "{kind}: {plain} vs {d}");
            }
        }
    }

    #[test]
    fn differentiable_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let v = random_series(&mut rng, 12);
            for kind in CourtesyKind::ALL {
                let r = grad_check(
                    |_, x| Ok(discourtesy_differentiable(x, DT, kind).map_err(|e| match e {
                        Error::Autodiff(a) => a,
                        other => panic!("{other}"),
                    })?),
                    &Tensor::vector(v.clone()),
                    1e-6,
                    1e-5,
                )
                .unwrap();
                assert!(r.passed(), "{kind}: {r:?}");
            }
        }
    }

    #[test]
    fn constant_series_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![15.0; 8]));
        for kind in CourtesyKind::ALL {
            tape.zero_grad();
            let psi = discourtesy_differentiable(x, DT, kind).unwrap();
            assert_eq!(psi.item(), 0.0);
            tape.backward(psi).unwrap();
            assert!(tape.grad(x).data().iter().all(|g| *g == 0.0), "{kind}");
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let recs = vec![
            LabelRecord { event_id: "a".into(), kind: CourtesyKind::Jerk, psi: 0.125 },
            LabelRecord { event_id: "b".into(), kind: CourtesyKind::Jerk, psi: 1.0 / 3.0 },
        ];
        write_labels(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("event_id,kind,psi\na,jerk,0.125\n"));
        assert_eq!(read_labels(&path).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn scale_invariant_and_nonnegative(
            v in prop::collection::vec(1.0f64..40.0, 4..50),
            k in prop::sample::select(vec![0.5, 2.0, 10.0]),
        ) {
            let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
            for kind in CourtesyKind::ALL {
                let a = discourtesy(kind, &v, DT).unwrap().value;
                let b = discourtesy(kind, &scaled, DT).unwrap().value;
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} {} {}", kind, a, b);
            }
        }
    }
}
