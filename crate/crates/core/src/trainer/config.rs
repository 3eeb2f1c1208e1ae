//! Training configuration and its `key=value` file format.

use crate::error::{Error, Result};
use crate::losses::{LossWeights, MuLawParams};
use crate::network::NetConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step decay: the rate is multiplied by `factor` every `period` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    pub factor: f64,
    pub period: usize,
}

impl Default for Decay {
    fn default() -> Self {
        Self {
            factor: 0.5,
            period: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay: Decay,
    pub seed: u64,
    pub net: NetConfig,
    pub loss: LossWeights,
    pub mu: MuLawParams,
    /// Square side every training image is resized to.
    pub resize: usize,
    pub adam: AdamConfig,
    /// Camera response exponent used for bracketing.
    pub gamma: f64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 2,
            epochs: 20,
            decay: Decay::default(),
            seed: 0,
            net: NetConfig::default(),
            loss: LossWeights::default(),
            mu: MuLawParams::default(),
            resize: 64,
            adam: AdamConfig::default(),
            gamma: crate::exposure::DEFAULT_GAMMA,
            checkpoint_every: 0,
        }
    }
}

/// Every key accepted by [`TrainConfig::parse`], with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("learning_rate", "initial Adam step size"),
    ("batch_size", "pairs per optimizer step"),
    ("epochs", "passes over the training split"),
    ("decay_factor", "multiplier applied every decay_period epochs, in (0, 1]"),
    ("decay_period", "epochs between decays"),
    ("seed", "seed for initialization, splitting and shuffling"),
    ("iterations", "feedback iterations T"),
    ("channels", "feature width C"),
    ("growth", "dense-block growth rate g"),
    ("dilation", "dense-layer dilation"),
    ("skip1", "use the first-level EV0 skip (true/false)"),
    ("skip2", "use the second-level EV0 skip (true/false)"),
    ("lambda1", "weight of the L1 term"),
    ("lambda2", "weight of the perceptual term"),
    ("mu", "mu-law compression constant"),
    ("resize", "side length images are resized to"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_epsilon", "Adam denominator floor"),
    ("gamma", "camera response exponent for bracketing"),
    ("checkpoint_every", "epochs between checkpoints, 0 for end only"),
];

fn parse_value<V: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<V> {
    raw.parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {raw:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.decay.factor > 0.0 && self.decay.factor <= 1.0) {
            return Err(Error::Config("decay_factor must be in (0, 1]".into()));
        }
        if self.decay.period == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "decay_period, batch_size and epochs must be positive".into(),
            ));
        }
        if self.resize < 8 {
            return Err(Error::Config("resize must be at least 8".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config("Adam betas must be in [0, 1) and epsilon > 0".into()));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        self.net.validate()?;
        self.loss.validate()?;
        self.mu.validate()
    }

    /// Applies `key=value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            c.set(i + 1, k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "learning_rate" => self.learning_rate = parse_value(line, key, v)?,
            "batch_size" => self.batch_size = parse_value(line, key, v)?,
            "epochs" => self.epochs = parse_value(line, key, v)?,
            "decay_factor" => self.decay.factor = parse_value(line, key, v)?,
            "decay_period" => self.decay.period = parse_value(line, key, v)?,
            "seed" => self.seed = parse_value(line, key, v)?,
            "iterations" => self.net.iterations = parse_value(line, key, v)?,
            "channels" => self.net.channels = parse_value(line, key, v)?,
            "growth" => self.net.growth = parse_value(line, key, v)?,
            "dilation" => self.net.dilation = parse_value(line, key, v)?,
            "skip1" => self.net.skip1 = parse_value(line, key, v)?,
            "skip2" => self.net.skip2 = parse_value(line, key, v)?,
            "lambda1" => self.loss.lambda1 = parse_value(line, key, v)?,
            "lambda2" => self.loss.lambda2 = parse_value(line, key, v)?,
            "mu" => self.mu.mu = parse_value(line, key, v)?,
            "resize" => self.resize = parse_value(line, key, v)?,
            "beta1" => self.adam.beta1 = parse_value(line, key, v)?,
            "beta2" => self.adam.beta2 = parse_value(line, key, v)?,
            "adam_epsilon" => self.adam.epsilon = parse_value(line, key, v)?,
            "gamma" => self.gamma = parse_value(line, key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(line, key, v)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every field in [`CONFIG_KEYS`] order; `parse` inverts it.
    pub fn to_text(&self) -> String {
        let values = [
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.decay.factor.to_string(),
            self.decay.period.to_string(),
            self.seed.to_string(),
            self.net.iterations.to_string(),
            self.net.channels.to_string(),
            self.net.growth.to_string(),
            self.net.dilation.to_string(),
            self.net.skip1.to_string(),
            self.net.skip2.to_string(),
            self.loss.lambda1.to_string(),
            self.loss.lambda2.to_string(),
            self.mu.mu.to_string(),
            self.resize.to_string(),
            self.adam.beta1.to_string(),
            self.adam.beta2.to_string(),
            self.adam.epsilon.to_string(),
            self.gamma.to_string(),
            self.checkpoint_every.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|((k, _), v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// `base · factor^floor(epoch / period)`.
pub fn lr_schedule(base_lr: f64, epoch: usize, decay: Decay) -> f64 {
    base_lr * decay.factor.powi((epoch / decay.period.max(1)) as i32)
}
