//! Closed-loop simulation: follower speeds come from a model, spacing is
//! integrated from relative speed with the trapezoidal rule
//!
//! ΔV(t+1) = V_LV(t+1) − V_FV(t+1)
//! S(t+1)  = S(t) + (ΔV(t) + ΔV(t+1)) / 2 · ΔT

use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, AdError, Tape, Var};
use crate::courtesy::DiscourtesyLabel;
use crate::models::{Anchor, IdmParams, SpeedPredictor, Window};
use crate::trajectory::TrajectoryEvent;
use crate::{Error, Result};

/// Spacing used in place of a non-positive simulated gap.
pub const SPACING_FLOOR: f64 = 0.1;
/// Speed floor (m/s) in the time-gap denominator.
pub const TIME_GAP_SPEED_FLOOR: f64 = 0.1;

/// One trapezoidal spacing step. May return a negative gap.
pub fn update_spacing(s_t: f64, dv_t: f64, dv_t1: f64, dt: f64) -> f64 {
    s_t + (dv_t + dv_t1) / 2.0 * dt
}

pub fn time_gap(spacing: f64, v_fv: f64) -> f64 {
    spacing / v_fv.max(TIME_GAP_SPEED_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub v_fv_pred: Vec<f64>,
    pub spacing_pred: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub collision_flag: bool,
    pub time_gap: Vec<f64>,
    /// IDM parameters chosen by the model, when it has any.
    pub idm: Option<IdmParams>,
}

/// Spacing series produced by integrating `fv` against `lv` from `anchor`.
pub fn integrate_spacing(anchor: Anchor, lv: &[f64], fv: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>, bool) {
    let mut s = anchor.spacing;
    let mut dv_prev = anchor.v_lv - anchor.v_fv;
    let mut collision = false;
    let mut spacing = Vec::with_capacity(fv.len());
    let mut delta_v = Vec::with_capacity(fv.len());
    for (&u, &v) in lv.iter().zip(fv) {
        let dv = u - v;
        let next = update_spacing(s, dv_prev, dv, dt);
        if next <= 0.0 {
            collision = true;
        }
        s = next.max(SPACING_FLOOR);
        spacing.push(s);
        delta_v.push(dv);
        dv_prev = dv;
    }
    (spacing, delta_v, collision)
}

/// Tape counterpart of [`integrate_spacing`], evaluated in the same order.
pub fn integrate_spacing_on_tape<'t>(
    tape: &'t Tape,
    anchor: Anchor,
    lv: &[f64],
    fv: Var<'t>,
    dt: f64,
) -> std::result::Result<(Var<'t>, bool), AdError> {
    let dt_var = tape.scalar(dt);
    let mut s = tape.scalar(anchor.spacing);
    let mut dv_prev = tape.scalar(anchor.v_lv - anchor.v_fv);
    let mut collision = false;
    let mut out = Vec::with_capacity(lv.len());
    for (k, &u) in lv.iter().enumerate() {
        let dv = tape.scalar(u).sub(fv.index(k)?)?;
        let next = s.add(dv_prev.add(dv)?.scale(0.5)?.mul(dt_var)?)?;
        if next.item() <= 0.0 {
            collision = true;
        }
        s = next.floor_at(SPACING_FLOOR)?;
        out.push(s);
        dv_prev = dv;
    }
    Ok((concat(&out)?, collision))
}

/// Simulates the follower over `window` of `event`, starting from the
/// recorded state at the window's last history sample.
pub fn rollout(
    model: &dyn SpeedPredictor,
    event: &TrajectoryEvent,
    psi: Option<DiscourtesyLabel>,
    window: Window,
) -> Result<RolloutResult> {
    window.check(event)?;
    let forecast = model.forecast(event, psi, window)?;
    let a = event.points[window.anchor()];
    let anchor = Anchor {
        v_fv: a.v_fv,
        v_lv: a.v_lv,
        spacing: a.spacing,
    };
    let lv: Vec<f64> = event.points[window.horizon_range()]
        .iter()
        .map(|p| p.v_lv)
        .collect();
    let (spacing_pred, delta_v, collision) =
        integrate_spacing(anchor, &lv, &forecast.speeds, event.dt);
    let time_gap = spacing_pred
        .iter()
        .zip(&forecast.speeds)
        .map(|(s, v)| time_gap(*s, *v))
        .collect();
    Ok(RolloutResult {
        v_fv_pred: forecast.speeds,
        spacing_pred,
        delta_v,
        collision_flag: collision || forecast.spacing_floored,
        time_gap,
        idm: forecast.idm,
    })
}

/// Writes per-step rows `event_id,t,v_fv_pred,spacing_pred,time_gap`.
pub fn write_rollouts(
    path: &std::path::Path,
    rollouts: &[(&TrajectoryEvent, Window, RolloutResult)],
) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["event_id", "t", "v_fv_pred", "spacing_pred", "time_gap"])?;
    for (event, window, r) in rollouts {
        let times = event.points[window.horizon_range()].iter().map(|p| p.t);
        for (k, t) in times.enumerate() {
            w.serialize((
                &event.event_id,
                t,
                r.v_fv_pred[k],
                r.spacing_pred[k],
                r.time_gap[k],
            ))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::models::SpeedForecast;
    use crate::trajectory::TrajectoryPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn update_spacing_examples() {
        assert_eq!(update_spacing(10.0, 1.0, 1.0, 0.1), 10.1);
        assert_eq!(update_spacing(7.5, 0.0, 0.0, 0.1), 7.5);
        assert!((update_spacing(20.0, -2.0, -4.0, 0.1) - 19.7).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_exact_for_affine_relative_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (c0, c1) = (rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0));
            let dt = 0.1;
            let dv = |t: f64| c0 + c1 * t;
            let mut s = 30.0;
            for k in 0..50 {
                let t = k as f64 * dt;
                s = update_spacing(s, dv(t), dv(t + dt), dt);
            }
            let t_end: f64 = 50.0 * dt;
            let exact = 30.0 + c0 * t_end + 0.5 * c1 * t_end * t_end;
            assert!((s - exact).abs() < 1e-12, "{s} vs {exact}");
        }
    }

    #[test]
    fn negated_relative_speed_negates_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let inc = update_spacing(0.0, a, b, 0.1);
            assert_eq!(update_spacing(0.0, -a, -b, 0.1), -inc);
        }
    }

    #[test]
    fn tape_integration_matches_plain_bitwise() {
        let anchor = Anchor { v_fv: 12.0, v_lv: 13.0, spacing: 15.0 };
        let lv = [13.0, 13.5, 14.0, 13.0];
        let fv = [12.5, 13.7, 15.0, 16.0];
        let (plain, _, _) = integrate_spacing(anchor, &lv, &fv, 0.1);
        let tape = Tape::new();
        let fv_var = tape.leaf(&Tensor::vector(fv.to_vec()));
        let (s, _) = integrate_spacing_on_tape(&tape, anchor, &lv, fv_var, 0.1).unwrap();
        assert_eq!(s.to_vec(), plain);
    }

    struct Replay;

    impl SpeedPredictor for Replay {
        fn forecast(&self, ev: &TrajectoryEvent, _: Option<DiscourtesyLabel>, w: Window) -> Result<SpeedForecast> {
            Ok(SpeedForecast {
                speeds: ev.points[w.horizon_range()].iter().map(|p| p.v_fv).collect(),
                idm: None,
                spacing_floored: false,
            })
        }
        fn is_conditioned(&self) -> bool {
            false
        }
    }

    struct CopyLeader;

    impl SpeedPredictor for CopyLeader {
        fn forecast(&self, ev: &TrajectoryEvent, _: Option<DiscourtesyLabel>, w: Window) -> Result<SpeedForecast> {
            Ok(SpeedForecast {
                speeds: ev.points[w.horizon_range()].iter().map(|p| p.v_lv).collect(),
                idm: None,
                spacing_floored: false,
            })
        }
        fn is_conditioned(&self) -> bool {
            false
        }
    }

    struct Faster(f64);

    impl SpeedPredictor for Faster {
        fn forecast(&self, ev: &TrajectoryEvent, _: Option<DiscourtesyLabel>, w: Window) -> Result<SpeedForecast> {
            Ok(SpeedForecast {
                speeds: ev.points[w.horizon_range()].iter().map(|p| p.v_lv + self.0).collect(),
                idm: None,
                spacing_floored: false,
            })
        }
        fn is_conditioned(&self) -> bool {
            false
        }
    }

    fn sine_event(n: usize) -> TrajectoryEvent {
        let dt = 0.1;
        // follower matches the leader's speed so spacing is constant
        let points = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                let v = 20.0 + 2.0 * (0.5 * t).sin();
                TrajectoryPoint { t, v_lv: v, v_fv: v, spacing: 25.0 }
            })
            .collect();
        TrajectoryEvent { event_id: "s".into(), lv_id: "L".into(), points, dt }
    }

    #[test]
    fn copying_leader_keeps_spacing() {
        let ev = sine_event(200);
        let w = Window { start: 10, history: 20, horizon: 50 };
        let r = rollout(&CopyLeader, &ev, None, w).unwrap();
        assert!(r.spacing_pred.iter().all(|s| (s - 25.0).abs() < 1e-9));
        assert!(!r.collision_flag);
        let r2 = rollout(&Replay, &ev, None, w).unwrap();
        assert_eq!(r2.spacing_pred, r.spacing_pred);
    }

    #[test]
    fn persistent_overspeed_collides() {
        let ev = sine_event(400);
        let w = Window { start: 0, history: 10, horizon: 300 };
        let r = rollout(&Faster(1.0), &ev, None, w).unwrap();
        assert!(r.collision_flag);
        assert!(r.spacing_pred.iter().all(|s| *s >= SPACING_FLOOR));
        assert_eq!(r.time_gap.len(), r.spacing_pred.len());
    }

    #[test]
    fn rollout_csv_rows() {
        let ev = sine_event(40);
        let w = Window { start: 0, history: 10, horizon: 5 };
        let r = rollout(&CopyLeader, &ev, None, w).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rollout.csv");
        write_rollouts(&path, &[(&ev, w, r)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "event_id,t,v_fv_pred,spacing_pred,time_gap");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("s,1.0,"));
    }

    #[test]
    fn window_out_of_range() {
        let ev = sine_event(50);
        let w = Window { start: 10, history: 20, horizon: 50 };
        assert!(rollout(&Replay, &ev, None, w).is_err());
    }
}
