//! Follower models. Each architecture comes in a ψ-conditioned variant
//! (history feature width 5) and a baseline variant without the ψ column
//! (width 4).

pub mod checkpoint;
mod features;
pub mod idm;
mod lstm;
mod lstm_idm;
mod params;
pub mod transformer;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Dims, Tape, Tensor, Var};
use crate::courtesy::{CourtesyKind, DiscourtesyLabel};
use crate::trajectory::TrajectoryEvent;
use crate::{Error, Result};

pub use features::{windows, Anchor, ModelInput, Standardizer, Window, FEATURE_NAMES};
pub use idm::{idm_accel, IdmParams};
pub use params::{BoundParams, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Lstm,
    LstmIdm,
    Transformer,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Self::Lstm, Self::LstmIdm, Self::Transformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lstm => "lstm",
            Self::LstmIdm => "lstm_idm",
            Self::Transformer => "transformer",
        }
    }

    /// Table label, e.g. `Edit_LSTM_IDM` or `LSTM_IDM`.
    pub fn display_name(self, conditioned: bool) -> String {
        let base = match self {
            Self::Lstm => "LSTM",
            Self::LstmIdm => "LSTM_IDM",
            Self::Transformer => "Transformer",
        };
        if conditioned {
            format!("Edit_{base}")
        } else {
            base.to_string()
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::UnknownArchitecture {
                name: s.to_string(),
                valid: Self::ALL.map(|a| a.as_str()).join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Architecture,
    /// Whether ψ is part of the input.
    pub conditioned: bool,
    /// LSTM state width, or model width for the Transformer.
    pub hidden: usize,
    pub layers: usize,
    /// Attention heads (Transformer only); must divide `hidden`.
    pub heads: usize,
    /// History length H in samples.
    pub history: usize,
    /// Prediction horizon P in samples.
    pub horizon: usize,
    pub dt: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::LstmIdm,
            conditioned: true,
            hidden: 64,
            layers: 1,
            heads: 4,
            history: 50,
            horizon: 50,
            dt: crate::DEFAULT_DT,
        }
    }
}

impl ModelConfig {
    pub fn input_features(&self) -> usize {
        4 + usize::from(self.conditioned)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.history == 0 || self.horizon == 0 {
            return Err(Error::Invalid(
                "hidden, layers, history and horizon must be positive".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.arch == Architecture::Transformer
            && (self.heads == 0 || self.hidden % self.heads != 0)
        {
            return Err(Error::Invalid(format!(
                "transformer width {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Deterministic initial parameters for `config`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let specs = match config.arch {
        Architecture::Lstm => lstm::specs(config),
        Architecture::LstmIdm => lstm_idm::specs(config),
        Architecture::Transformer => transformer::specs(config),
    };
    ParamSet::init(&specs, seed)
}

/// Output of a forward pass on a tape.
pub struct Prediction<'t> {
    /// Follower speeds over the horizon (m/s, ≥ 0).
    pub speeds: Var<'t>,
    /// IDM parameters chosen by the LSTM_IDM head.
    pub idm: Option<IdmParams>,
    /// Set when the internal IDM rollout had to floor a non-positive spacing.
    pub spacing_floored: bool,
}

/// Detached forward-pass result.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedForecast {
    pub speeds: Vec<f64>,
    pub idm: Option<IdmParams>,
    pub spacing_floored: bool,
}

/// Anything that can forecast follower speeds for a window of an event.
pub trait SpeedPredictor: Sync {
    fn forecast(
        &self,
        event: &TrajectoryEvent,
        psi: Option<DiscourtesyLabel>,
        window: Window,
    ) -> Result<SpeedForecast>;

    fn is_conditioned(&self) -> bool;
}

/// A follower model together with its feature statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerModel {
    pub config: ModelConfig,
    pub standardizer: Standardizer,
    pub params: ParamSet,
    /// Kind of ψ the model was conditioned on, if any.
    pub courtesy: Option<CourtesyKind>,
}

impl FollowerModel {
    pub fn new(
        config: ModelConfig,
        standardizer: Standardizer,
        courtesy: Option<CourtesyKind>,
        seed: u64,
    ) -> Result<Self> {
        if config.conditioned != courtesy.is_some() {
            return Err(Error::Invalid(
                "a courtesy kind is required exactly when the model is conditioned".into(),
            ));
        }
        Ok(Self {
            params: init_params(&config, seed)?,
            config,
            standardizer,
            courtesy,
        })
    }

    pub fn name(&self) -> String {
        self.config.arch.display_name(self.config.conditioned)
    }

    pub fn input_for(
        &self,
        event: &TrajectoryEvent,
        psi: Option<DiscourtesyLabel>,
        window: Window,
    ) -> Result<ModelInput> {
        ModelInput::from_event(event, window, psi, self.config.conditioned, &self.standardizer)
    }

    /// Forward pass with parameters already recorded on `tape`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &BoundParams<'t>,
        input: &ModelInput,
    ) -> Result<Prediction<'t>> {
        if input.features() != self.config.input_features() {
            return Err(Error::Invalid(format!(
                "model expects {} history features, input has {}",
                self.config.input_features(),
                input.features()
            )));
        }
        if input.horizon() == 0 {
            return Err(Error::Invalid("horizon must be at least one step".into()));
        }
        let cfg = &self.config;
        let norm = &self.standardizer;
        match cfg.arch {
            Architecture::Lstm => lstm::forward(tape, params, cfg, norm, input),
            Architecture::LstmIdm => lstm_idm::forward(tape, params, cfg, norm, input),
            Architecture::Transformer => transformer::forward(tape, params, cfg, norm, input),
        }
    }

    /// Forward pass without gradient bookkeeping for the parameters.
    pub fn predict(&self, input: &ModelInput) -> Result<SpeedForecast> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let pred = self.forward(&tape, &bound, input)?;
        Ok(SpeedForecast {
            speeds: pred.speeds.to_vec(),
            idm: pred.idm,
            spacing_floored: pred.spacing_floored,
        })
    }

    /// Baseline model sharing every weight except those that read ψ.
    pub fn unconditioned_counterpart(&self) -> Result<Self> {
        if !self.config.conditioned {
            return Ok(self.clone());
        }
        let cfg = ModelConfig {
            conditioned: false,
            ..self.config
        };
        let mut params = init_params(&cfg, 0)?;
        for (name, t) in self.params.iter() {
            let target = params
                .get_mut(name)
                .ok_or_else(|| Error::Invalid(format!("unexpected parameter {name}")))?;
            *target = if t.shape() == target.shape() {
                t.clone()
            } else {
                drop_psi_slot(self.config.arch, name, t, self.config.hidden)?
            };
        }
        Ok(Self {
            config: cfg,
            standardizer: self.standardizer,
            params,
            courtesy: None,
        })
    }
}

fn drop_column(t: &Tensor, col: usize) -> Result<Tensor> {
    let Dims::Matrix(r, c) = t.dims() else {
        return Err(Error::Invalid("expected a matrix".into()));
    };
    let data = t
        .data()
        .chunks(c)
        .flat_map(|row| row.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, x)| *x))
        .collect();
    Ok(Tensor::matrix(r, c - 1, data)?)
}

fn drop_row(t: &Tensor, row: usize) -> Result<Tensor> {
    let Dims::Matrix(r, c) = t.dims() else {
        return Err(Error::Invalid("expected a matrix".into()));
    };
    let data = t
        .data()
        .chunks(c)
        .enumerate()
        .filter(|(i, _)| *i != row)
        .flat_map(|(_, r)| r.iter().copied())
        .collect();
    Ok(Tensor::matrix(r - 1, c, data)?)
}

/// Removes the weights that multiply the ψ input of `name`.
fn drop_psi_slot(arch: Architecture, name: &str, t: &Tensor, hidden: usize) -> Result<Tensor> {
    match (arch, name) {
        (Architecture::Lstm | Architecture::LstmIdm, "enc0.w") => drop_column(t, 4),
        (Architecture::Lstm, "dec0.w") => drop_column(t, 2),
        (Architecture::LstmIdm, "head.w") => drop_column(t, hidden),
        (Architecture::Transformer, "emb_enc.w") => drop_row(t, 4),
        (Architecture::Transformer, "emb_dec.w") => drop_row(t, 1),
        _ => Err(Error::Invalid(format!("no ψ weights in parameter {name}"))),
    }
}

impl SpeedPredictor for FollowerModel {
    fn forecast(
        &self,
        event: &TrajectoryEvent,
        psi: Option<DiscourtesyLabel>,
        window: Window,
    ) -> Result<SpeedForecast> {
        let input = self.input_for(event, psi, window)?;
        self.predict(&input)
    }

    fn is_conditioned(&self) -> bool {
        self.config.conditioned
    }
}
