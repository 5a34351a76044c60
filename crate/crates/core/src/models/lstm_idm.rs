//! LSTM encoder whose final state is mapped to IDM parameters; speeds come
//! from rolling the IDM forward against the recorded leader.

use crate::autodiff::{concat, AdError, Tape};
use crate::Error;

use super::features::{ModelInput, Standardizer, PSI};
use super::idm::{self, IdmVars, SPACING_FLOOR};
use super::lstm::{encode, stack_specs};
use super::params::{BoundParams, ParamSpec};
use super::{ModelConfig, Prediction};

pub(crate) fn head_inputs(cfg: &ModelConfig) -> usize {
    cfg.hidden + usize::from(cfg.conditioned)
}

pub(crate) fn specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = stack_specs("enc", cfg.input_features(), cfg.hidden, cfg.layers);
    let fan_in = head_inputs(cfg);
    specs.push(ParamSpec::new("head.w", &[6, fan_in], fan_in));
    specs.push(ParamSpec::new("head.b", &[6], fan_in));
    specs
}

pub(crate) fn forward<'t>(
    tape: &'t Tape,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
    norm: &Standardizer,
    input: &ModelInput,
) -> Result<Prediction<'t>, Error> {
    let state = encode(tape, p, cfg, input)?;
    let mut head_in = state.top();
    if cfg.conditioned {
        let psi = input
            .psi
            .ok_or_else(|| Error::Invalid("conditioned model requires ψ".into()))?;
        head_in = concat(&[head_in, tape.scalar(norm.apply(PSI, psi.value))])?;
    }
    let raw = p.get("head.w")?.matmul(head_in)?.add(p.get("head.b")?)?;
    let params = IdmVars::new(idm::squash(raw)?)?;

    let dt = tape.scalar(input.dt);
    let history_len = input.history.shape()[0];
    let mut v = tape.scalar(input.anchor.v_fv);
    let mut s = tape.scalar(input.anchor.spacing);
    let mut lv_prev = tape.scalar(input.anchor.v_lv);
    let mut floored = false;
    let mut speeds = Vec::with_capacity(input.horizon());
    for (k, &lv) in input.future_lv.iter().enumerate() {
        let step = history_len + k;
        let wrap = |e: AdError| Error::Step { step, source: e };
        let lv_next = tape.scalar(lv);
        let next = (|| {
            let accel = params.accel(v, v.sub(lv_prev)?, s)?;
            let v_next = v.add(accel.mul(dt)?)?.relu()?;
            let dv_now = lv_prev.sub(v)?;
            let dv_next = lv_next.sub(v_next)?;
            let s_next = s.add(dv_now.add(dv_next)?.scale(0.5)?.mul(dt)?)?;
            Ok::<_, AdError>((v_next, s_next))
        })()
        .map_err(wrap)?;
        let (v_next, s_next) = next;
        if s_next.item() <= 0.0 {
            floored = true;
        }
        s = s_next.floor_at(SPACING_FLOOR).map_err(wrap)?;
        v = v_next;
        lv_prev = lv_next;
        speeds.push(v);
    }
    Ok(Prediction {
        speeds: concat(&speeds)?,
        idm: Some(params.values()),
        spacing_floored: floored,
    })
}
