//! LSTM encoder–decoder. The decoder runs closed loop: each step consumes its
//! own previous speed prediction, the recorded leader speed and (when
//! conditioned) ψ.

use crate::autodiff::{concat, AdError, Tape, Var};
use crate::Error;

use super::features::{ModelInput, Standardizer, PSI, V_FV, V_LV};
use super::params::{BoundParams, ParamSpec};
use super::{ModelConfig, Prediction};

pub(crate) fn decoder_inputs(conditioned: bool) -> usize {
    2 + usize::from(conditioned)
}

/// Parameter layout shared by the recurrent stacks.
pub(crate) fn stack_specs(prefix: &str, input: usize, hidden: usize, layers: usize) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    for l in 0..layers {
        let fan_in = if l == 0 { input } else { hidden } + hidden;
        specs.push(ParamSpec::new(format!("{prefix}{l}.w"), &[4 * hidden, fan_in], fan_in));
        specs.push(ParamSpec::new(format!("{prefix}{l}.b"), &[4 * hidden], fan_in));
    }
    specs
}

pub(crate) fn specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let h = cfg.hidden;
    let mut specs = stack_specs("enc", cfg.input_features(), h, cfg.layers);
    specs.extend(stack_specs("dec", decoder_inputs(cfg.conditioned), h, cfg.layers));
    specs.push(ParamSpec::new("head.w", &[1, h], h));
    specs.push(ParamSpec::new("head.b", &[1], h));
    specs
}

/// Recurrent state per layer.
pub(crate) struct StackState<'t> {
    pub h: Vec<Var<'t>>,
    pub c: Vec<Var<'t>>,
}

impl<'t> StackState<'t> {
    pub fn zeros(tape: &'t Tape, hidden: usize, layers: usize) -> Self {
        let z = vec![0.0; hidden];
        Self {
            h: (0..layers).map(|_| tape.vector(&z)).collect(),
            c: (0..layers).map(|_| tape.vector(&z)).collect(),
        }
    }

    pub fn top(&self) -> Var<'t> {
        *self.h.last().expect("at least one layer")
    }
}

/// One LSTM cell update; gate order is input, forget, candidate, output.
pub(crate) fn cell<'t>(
    w: Var<'t>,
    b: Var<'t>,
    x: Var<'t>,
    h: Var<'t>,
    c: Var<'t>,
) -> Result<(Var<'t>, Var<'t>), AdError> {
    let hidden = h.len();
    let z = w.matmul(concat(&[x, h])?)?.add(b)?;
    let gates = z.sigmoid()?;
    let i = gates.slice(0, hidden)?;
    let f = gates.slice(hidden, hidden)?;
    let o = gates.slice(3 * hidden, hidden)?;
    let g = z.slice(2 * hidden, hidden)?.tanh()?;
    let c = f.mul(c)?.add(i.mul(g)?)?;
    let h = o.mul(c.tanh()?)?;
    Ok((h, c))
}

pub(crate) fn step_stack<'t>(
    p: &BoundParams<'t>,
    prefix: &str,
    state: &mut StackState<'t>,
    x: Var<'t>,
    step: usize,
) -> Result<(), Error> {
    let wrap = |e: AdError| Error::Step { step, source: e };
    let mut input = x;
    for l in 0..state.h.len() {
        let w = p.get(&format!("{prefix}{l}.w"))?;
        let b = p.get(&format!("{prefix}{l}.b"))?;
        let (h, c) = cell(w, b, input, state.h[l], state.c[l]).map_err(wrap)?;
        state.h[l] = h;
        state.c[l] = c;
        input = h;
    }
    Ok(())
}

/// Runs the encoder over every history row.
pub(crate) fn encode<'t>(
    tape: &'t Tape,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
    input: &ModelInput,
) -> Result<StackState<'t>, Error> {
    let history = tape.constant(&input.history);
    let mut state = StackState::zeros(tape, cfg.hidden, cfg.layers);
    for t in 0..input.history.shape()[0] {
        let x = history.row(t)?;
        step_stack(p, "enc", &mut state, x, t)?;
    }
    Ok(state)
}

pub(crate) fn standardize<'t>(v: Var<'t>, norm: &Standardizer, feature: usize) -> Result<Var<'t>, AdError> {
    v.offset(-norm.mean[feature])?.scale(1.0 / norm.std[feature])
}

pub(crate) fn forward<'t>(
    tape: &'t Tape,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
    norm: &Standardizer,
    input: &ModelInput,
) -> Result<Prediction<'t>, Error> {
    let mut state = encode(tape, p, cfg, input)?;
    let head_w = p.get("head.w")?;
    let head_b = p.get("head.b")?;
    let dt = tape.scalar(input.dt);
    let psi = input
        .psi
        .map(|psi| tape.scalar(norm.apply(PSI, psi.value)))
        .filter(|_| cfg.conditioned);
    let history_len = input.history.shape()[0];
    let mut v_prev = tape.scalar(input.anchor.v_fv);
    let mut speeds = Vec::with_capacity(input.horizon());
    for (k, &lv) in input.future_lv.iter().enumerate() {
        let step = history_len + k;
        let wrap = |e: AdError| Error::Step { step, source: e };
        let mut parts = vec![
            standardize(v_prev, norm, V_FV).map_err(wrap)?,
            tape.scalar(norm.apply(V_LV, lv)),
        ];
        parts.extend(psi);
        let x = concat(&parts).map_err(wrap)?;
        step_stack(p, "dec", &mut state, x, step)?;
        let accel = head_w.matmul(state.top()).and_then(|a| a.add(head_b)).map_err(wrap)?;
        let v = v_prev
            .add(accel.mul(dt).and_then(|d| d.index(0)).map_err(wrap)?)
            .and_then(|v| v.relu())
            .map_err(wrap)?;
        speeds.push(v);
        v_prev = v;
    }
    Ok(Prediction {
        speeds: concat(&speeds)?,
        idm: None,
        spacing_floored: false,
    })
}
