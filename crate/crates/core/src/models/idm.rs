//! Intelligent Driver Model in plain and tape-valued form.
//!
//! a = a₀·[1 − (v/ṽ)^λ − (s*/s)²],  s* = S₀ + max(0, v·T̃ + v·Δv/(2√(a₀·b)))
//!
//! with Δv = v_fv − v_lv (approach rate). Output is clipped to
//! [`ACCEL_MIN`, `ACCEL_MAX`].

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Var};
use crate::{Error, Result};

pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 5.0;

/// Floor applied to simulated spacing so the interaction term stays finite.
pub const SPACING_FLOOR: f64 = 0.1;

/// Lower and upper bound of each parameter, in [`IdmParams::to_array`] order.
pub const BOUNDS: [(f64, f64); 6] = [
    (1.0, 45.0),
    (0.3, 5.0),
    (0.3, 5.0),
    (0.3, 6.0),
    (1.0, 10.0),
    (0.5, 10.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed ṽ (m/s).
    pub v_desired: f64,
    /// Desired time headway T̃ (s).
    pub t_headway: f64,
    /// Maximum acceleration a₀ (m/s²).
    pub a_max: f64,
    /// Comfortable deceleration b (m/s²).
    pub b_comfort: f64,
    /// Free-road exponent λ.
    pub beta: f64,
    /// Jam spacing S₀ (m).
    pub s_jam: f64,
}

impl IdmParams {
    pub const NAMES: [&'static str; 6] =
        ["v_desired", "t_headway", "a_max", "b_comfort", "beta", "s_jam"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.v_desired,
            self.t_headway,
            self.a_max,
            self.b_comfort,
            self.beta,
            self.s_jam,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            v_desired: a[0],
            t_headway: a[1],
            a_max: a[2],
            b_comfort: a[3],
            beta: a[4],
            s_jam: a[5],
        }
    }

    pub fn within_bounds(&self) -> bool {
        self.to_array()
            .iter()
            .zip(BOUNDS)
            .all(|(x, (lo, hi))| *x >= lo && *x <= hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.within_bounds() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("IDM parameters out of bounds: {self:?}")))
        }
    }

    /// Gap at which a follower at speed `v` behind an equal-speed leader has
    /// zero acceleration. Requires `v < v_desired`.
    pub fn equilibrium_spacing(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.v_desired).powf(self.beta);
        (self.s_jam + v * self.t_headway) / free.sqrt()
    }

    /// Raw head outputs for which [`squash`] returns these parameters.
    pub fn to_raw(&self) -> [f64; 6] {
        let mut raw = [0.0; 6];
        for (i, (x, (lo, hi))) in self.to_array().into_iter().zip(BOUNDS).enumerate() {
            let u = ((x - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
            raw[i] = (u / (1.0 - u)).ln();
        }
        raw
    }
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v_desired: 33.0,
            t_headway: 1.5,
            a_max: 1.0,
            b_comfort: 1.5,
            beta: 4.0,
            s_jam: 2.0,
        }
    }
}

/// Unclipped IDM acceleration.
fn raw_accel(v_fv: f64, approach: f64, spacing: f64, p: &IdmParams) -> f64 {
    let dynamic = v_fv * p.t_headway + v_fv * approach / (2.0 * (p.a_max * p.b_comfort).sqrt());
    let s_star = p.s_jam + dynamic.max(0.0);
    let free = (v_fv / p.v_desired).powf(p.beta);
    p.a_max * (1.0 - free - (s_star / spacing).powi(2))
}

/// Follower acceleration (m/s²) for speed `v_fv`, approach rate
/// `approach = v_fv − v_lv` and gap `spacing`.
pub fn idm_accel(v_fv: f64, approach: f64, spacing: f64, p: &IdmParams) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::Invalid(format!(
            "collision state: spacing {spacing} m is not positive"
        )));
    }
    Ok(raw_accel(v_fv, approach, spacing, p).clamp(ACCEL_MIN, ACCEL_MAX))
}

/// Tape-valued IDM parameters (each a scalar).
#[derive(Debug, Clone, Copy)]
pub struct IdmVars<'t> {
    pub v_desired: Var<'t>,
    pub t_headway: Var<'t>,
    pub a_max: Var<'t>,
    pub b_comfort: Var<'t>,
    pub beta: Var<'t>,
    pub s_jam: Var<'t>,
    /// 2·√(a₀·b), shared by every step of a rollout.
    two_sqrt_ab: Var<'t>,
}

impl<'t> IdmVars<'t> {
    pub fn new(p: [Var<'t>; 6]) -> std::result::Result<Self, AdError> {
        let two_sqrt_ab = p[2].mul(p[3])?.sqrt()?.scale(2.0)?;
        Ok(Self {
            v_desired: p[0],
            t_headway: p[1],
            a_max: p[2],
            b_comfort: p[3],
            beta: p[4],
            s_jam: p[5],
            two_sqrt_ab,
        })
    }

    pub fn values(&self) -> IdmParams {
        IdmParams {
            v_desired: self.v_desired.item(),
            t_headway: self.t_headway.item(),
            a_max: self.a_max.item(),
            b_comfort: self.b_comfort.item(),
            beta: self.beta.item(),
            s_jam: self.s_jam.item(),
        }
    }

    /// Clipped acceleration on the tape. `spacing` must already be positive.
    pub fn accel(
        &self,
        v_fv: Var<'t>,
        approach: Var<'t>,
        spacing: Var<'t>,
    ) -> std::result::Result<Var<'t>, AdError> {
        let dynamic = v_fv
            .mul(self.t_headway)?
            .add(v_fv.mul(approach)?.div(self.two_sqrt_ab)?)?;
        let s_star = self.s_jam.add(dynamic.relu()?)?;
        let ratio = v_fv.div(self.v_desired)?.floor_at(1e-9)?;
        let free = ratio.pow_var(self.beta)?;
        let interaction = s_star.div(spacing)?.square()?;
        let one = v_fv.tape().scalar(1.0);
        one.sub(free)?
            .sub(interaction)?
            .mul(self.a_max)?
            .clamp(ACCEL_MIN, ACCEL_MAX)
    }
}

/// Maps six unconstrained values into [`BOUNDS`] with a scaled sigmoid.
pub fn squash<'t>(raw: Var<'t>) -> std::result::Result<[Var<'t>; 6], AdError> {
    let s = raw.sigmoid()?;
    let mut out = Vec::with_capacity(6);
    for (i, (lo, hi)) in BOUNDS.into_iter().enumerate() {
        out.push(s.index(i)?.scale(hi - lo)?.offset(lo)?);
    }
    Ok(out.try_into().expect("six parameters"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn params(v: f64, t: f64, s0: f64) -> IdmParams {
        IdmParams {
            v_desired: v,
            t_headway: t,
            a_max: 1.2,
            b_comfort: 2.0,
            beta: 4.0,
            s_jam: s0,
        }
    }

    #[test]
    fn free_road_at_desired_speed_is_still() {
        let p = params(30.0, 1.5, 2.0);
        let a = idm_accel(30.0, 0.0, 1e9, &p).unwrap();
        assert!(a.abs() < 1e-12);
    }

    #[test]
    fn standstill_accelerates_when_gap_exceeds_jam() {
        let p = params(30.0, 1.5, 2.0);
        for s in [2.0, 3.0, 10.0, 50.0] {
            let a = idm_accel(0.0, 0.0, s, &p).unwrap();
            let expect = p.a_max * (1.0 - (p.s_jam / s).powi(2));
            assert!((a - expect).abs() < 1e-15);
            assert!(a >= 0.0);
        }
    }

    #[test]
    fn equilibrium_spacing_has_zero_accel() {
        let p = params(30.0, 1.5, 2.0);
        let s_eq = p.equilibrium_spacing(20.0);
        let expect = (2.0 + 20.0 * 1.5) / (1.0f64 - (20.0f64 / 30.0).powi(4)).sqrt();
        assert!((s_eq - expect).abs() < 1e-12);
        assert!(idm_accel(20.0, 0.0, s_eq, &p).unwrap().abs() < 1e-9);
    }

    #[test]
    fn rejects_collision_state() {
        let p = IdmParams::default();
        assert!(idm_accel(10.0, 0.0, 0.0, &p).is_err());
        assert!(idm_accel(10.0, 0.0, -1.0, &p).is_err());
    }

    #[test]
    fn output_is_clipped() {
        let p = IdmParams::default();
        assert_eq!(idm_accel(20.0, 10.0, 0.5, &p).unwrap(), ACCEL_MIN);
    }

    #[test]
    fn tape_matches_plain() {
        let p = params(28.0, 1.2, 2.5);
        for (v, dv, s) in [(10.0, 1.0, 25.0), (20.0, -3.0, 30.0), (5.0, 0.5, 8.0)] {
            let tape = Tape::new();
            let pv: [Var<'_>; 6] = p.to_array().map(|x| tape.scalar(x));
            let vars = IdmVars::new(pv).unwrap();
            let a = vars
                .accel(tape.scalar(v), tape.scalar(dv), tape.scalar(s))
                .unwrap()
                .item();
            let b = idm_accel(v, dv, s, &p).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn squash_respects_bounds_and_inverts() {
        let tape = Tape::new();
        let raw = tape.vector(&[-50.0, -1.0, 0.0, 1.0, 50.0, 3.0]);
        let out = squash(raw).unwrap();
        for (v, (lo, hi)) in out.iter().zip(BOUNDS) {
            assert!(v.item() >= lo && v.item() <= hi);
        }
        let p = params(25.0, 1.1, 3.0);
        let raw = tape.vector(&p.to_raw());
        let back = squash(raw).unwrap().map(|v| v.item());
        for (a, b) in back.iter().zip(p.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
