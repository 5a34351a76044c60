//! Encoder–decoder Transformer. The encoder attends over the embedded
//! history; the decoder embeds the recorded leader speeds (and ψ) of the
//! horizon, attends causally over them and cross-attends to the encoder.
//!
//! Heads use separate projection matrices and their outputs are summed
//! through per-head output projections, which is the same map as
//! concatenating heads before a single output projection.

use crate::autodiff::{AdError, Dims, Tape, Tensor, Var};
use crate::Error;

use super::features::{ModelInput, Standardizer, PSI, V_FV, V_LV};
use super::params::{BoundParams, ParamSpec};
use super::{ModelConfig, Prediction};

const MASKED: f64 = -1e9;

pub(crate) fn decoder_inputs(conditioned: bool) -> usize {
    1 + usize::from(conditioned)
}

fn attention_specs(prefix: &str, d: usize, heads: usize, specs: &mut Vec<ParamSpec>) {
    let dk = d / heads;
    for h in 0..heads {
        for m in ["q", "k", "v"] {
            specs.push(ParamSpec::new(format!("{prefix}.{m}{h}"), &[d, dk], d));
        }
        specs.push(ParamSpec::new(format!("{prefix}.o{h}"), &[dk, d], d));
    }
    specs.push(ParamSpec::new(format!("{prefix}.bo"), &[d], d));
}

fn ffn_specs(prefix: &str, d: usize, specs: &mut Vec<ParamSpec>) {
    specs.push(ParamSpec::new(format!("{prefix}.ff1.w"), &[d, 2 * d], d));
    specs.push(ParamSpec::new(format!("{prefix}.ff1.b"), &[2 * d], d));
    specs.push(ParamSpec::new(format!("{prefix}.ff2.w"), &[2 * d, d], 2 * d));
    specs.push(ParamSpec::new(format!("{prefix}.ff2.b"), &[d], 2 * d));
}

pub(crate) fn specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.hidden;
    let f = cfg.input_features();
    let fd = decoder_inputs(cfg.conditioned);
    let mut specs = vec![
        ParamSpec::new("emb_enc.w", &[f, d], f),
        ParamSpec::new("emb_enc.b", &[d], f),
    ];
    for l in 0..cfg.layers {
        attention_specs(&format!("enc{l}.self"), d, cfg.heads, &mut specs);
        ffn_specs(&format!("enc{l}"), d, &mut specs);
    }
    specs.push(ParamSpec::new("emb_dec.w", &[fd, d], fd));
    specs.push(ParamSpec::new("emb_dec.b", &[d], fd));
    for l in 0..cfg.layers {
        attention_specs(&format!("dec{l}.self"), d, cfg.heads, &mut specs);
        attention_specs(&format!("dec{l}.cross"), d, cfg.heads, &mut specs);
        ffn_specs(&format!("dec{l}"), d, &mut specs);
    }
    specs.push(ParamSpec::new("head.w", &[d, 1], d));
    specs.push(ParamSpec::new("head.b", &[1], d));
    specs
}

/// Sinusoidal position table `[n × d]`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(n, d, data).expect("consistent shape")
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASKED;
        }
    }
    Tensor::matrix(n, n, data).expect("consistent shape")
}

fn attention<'t>(
    p: &BoundParams<'t>,
    prefix: &str,
    heads: usize,
    query: Var<'t>,
    memory: Var<'t>,
    mask: Option<Var<'t>>,
) -> Result<Var<'t>, Error> {
    let mut out: Option<Var<'t>> = None;
    for h in 0..heads {
        let wq = p.get(&format!("{prefix}.q{h}"))?;
        let dk = match wq.dims() {
            Dims::Matrix(_, c) => c,
            _ => unreachable!("projection is a matrix"),
        };
        let q = query.matmul(wq)?;
        let k = memory.matmul(p.get(&format!("{prefix}.k{h}"))?)?;
        let v = memory.matmul(p.get(&format!("{prefix}.v{h}"))?)?;
        let mut scores = q.matmul(k.transpose()?)?.scale(1.0 / (dk as f64).sqrt())?;
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        let head = scores
            .softmax_rows()?
            .matmul(v)?
            .matmul(p.get(&format!("{prefix}.o{h}"))?)?;
        out = Some(match out {
            Some(acc) => acc.add(head)?,
            None => head,
        });
    }
    let out = out.ok_or_else(|| Error::Invalid("attention needs at least one head".into()))?;
    Ok(out.add_row(p.get(&format!("{prefix}.bo"))?)?)
}

fn ffn<'t>(p: &BoundParams<'t>, prefix: &str, x: Var<'t>) -> Result<Var<'t>, Error> {
    let h = x
        .matmul(p.get(&format!("{prefix}.ff1.w"))?)?
        .add_row(p.get(&format!("{prefix}.ff1.b"))?)?
        .relu()?;
    Ok(h.matmul(p.get(&format!("{prefix}.ff2.w"))?)?
        .add_row(p.get(&format!("{prefix}.ff2.b"))?)?)
}

pub(crate) fn forward<'t>(
    tape: &'t Tape,
    p: &BoundParams<'t>,
    cfg: &ModelConfig,
    norm: &Standardizer,
    input: &ModelInput,
) -> Result<Prediction<'t>, Error> {
    let d = cfg.hidden;
    let h_len = input.history.shape()[0];
    let horizon = input.horizon();

    let history = tape.constant(&input.history);
    let mut mem = history
        .matmul(p.get("emb_enc.w")?)?
        .add_row(p.get("emb_enc.b")?)?
        .add(tape.constant(&positional_encoding(h_len, d)))?;
    for l in 0..cfg.layers {
        let a = attention(p, &format!("enc{l}.self"), cfg.heads, mem, mem, None)?;
        mem = mem.add(a)?;
        mem = mem.add(ffn(p, &format!("enc{l}"), mem)?)?;
    }

    let fd = decoder_inputs(cfg.conditioned);
    let mut dec_in = Vec::with_capacity(horizon * fd);
    for &lv in &input.future_lv {
        dec_in.push(norm.apply(V_LV, lv));
        if cfg.conditioned {
            let psi = input
                .psi
                .ok_or_else(|| Error::Invalid("conditioned model requires ψ".into()))?;
            dec_in.push(norm.apply(PSI, psi.value));
        }
    }
    let dec_in = tape.constant(&Tensor::matrix(horizon, fd, dec_in)?);
    let mask = tape.constant(&causal_mask(horizon));
    let mut y = dec_in
        .matmul(p.get("emb_dec.w")?)?
        .add_row(p.get("emb_dec.b")?)?
        .add(tape.constant(&positional_encoding(horizon, d)))?;
    for l in 0..cfg.layers {
        let a = attention(p, &format!("dec{l}.self"), cfg.heads, y, y, Some(mask))?;
        y = y.add(a)?;
        let c = attention(p, &format!("dec{l}.cross"), cfg.heads, y, mem, None)?;
        y = y.add(c)?;
        y = y.add(ffn(p, &format!("dec{l}"), y)?)?;
    }
    let out = y
        .matmul(p.get("head.w")?)?
        .add_row(p.get("head.b")?)?
        .reshape(Dims::Vector(horizon))?;
    // offsets from the last observed follower speed, in units of its spread
    let speeds = out
        .scale(norm.std[V_FV])?
        .offset(input.anchor.v_fv)?
        .relu()
        .map_err(|e: AdError| Error::Step {
            step: h_len,
            source: e,
        })?;
    Ok(Prediction {
        speeds,
        idm: None,
        spacing_floored: false,
    })
}
