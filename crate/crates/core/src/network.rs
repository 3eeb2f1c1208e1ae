//! Feedback HDR reconstruction network.
//!
//! Data path for one input stack:
//!
//! ```text
//! EV−2, EV0, EV+2 ─▶ three 3-layer conv branches ─▶ sum = fe_all
//! for t in 1..=T:
//!     fb_t  = feedback(fe_all, fb_{t−1})       (fb_0 absent)
//!     frs_t = fe0_level1 + fe0_level2 + fb_t   (either skip switchable)
//!     out_t = reconstruction(frs_t)            (tanh, in (−1, 1))
//! ```
//!
//! `fe0_level1` / `fe0_level2` are the first and second conv outputs of the
//! EV0 branch. Feedback and reconstruction weights are shared across
//! iterations.
//!
//! Parameter namespace (each entry has `.weight` and `.bias`):
//!
//! | name | kernel | in → out | activation |
//! |---|---|---|---|
//! | `fu.branch{0,1,2}.conv1` | 3×3 | 3 → C | ReLU |
//! | `fu.branch{0,1,2}.conv{2,3}` | 3×3 | C → C | ReLU |
//! | `fbu.fuse` | 1×1 | 2C → C | ReLU, used for t > 1 |
//! | `fbu.entry` | 1×1 | C → C | ReLU |
//! | `fbu.block{1,2,3}.compress_in` | 1×1 | C → C | ReLU |
//! | `fbu.block{1,2,3}.dense{1..4}` | 3×3, dilated | C + (i−1)g → g | ReLU |
//! | `fbu.block{1,2,3}.compress_out` | 1×1 | C + 4g → C | none, then + block input |
//! | `fbu.exit` | 3×3 | C → C | none |
//! | `ru.conv{1,2}` | 3×3 | C → C | ReLU |
//! | `ru.conv3` | 3×3 | C → 3 | tanh |
//!
//! Branch 0 sees EV−2, branch 1 EV0, branch 2 EV+2. Summing the table gives
//! `param_count = 90C² + 128C + 120Cg + 162g² + 12g + 3`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::exposure::ExposureStack;
use crate::image::{stack_batch, tensor_to_interleaved, HdrImage};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Scalar, Tensor};

pub const NUM_DILATED_BLOCKS: usize = 3;
pub const LAYERS_PER_BLOCK: usize = 4;
pub const INPUT_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = 3;
pub const DEFAULT_MU: f64 = 5000.0;

/// Structural hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Working feature width C.
    pub channels: usize,
    /// Feedback iterations T.
    pub iterations: usize,
    pub dilation: usize,
    /// Dense-block growth rate g.
    pub growth: usize,
    /// Route `fe0_level1` into the reconstruction input.
    pub skip1: bool,
    /// Route `fe0_level2` into the reconstruction input.
    pub skip2: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            iterations: 4,
            dilation: 3,
            growth: 16,
            skip1: true,
            skip2: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("channels", self.channels),
            ("iterations", self.iterations),
            ("dilation", self.dilation),
            ("growth", self.growth),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        Ok(())
    }

    /// Stores the config under `net.*` keys.
    pub fn write_to(&self, c: &mut Container) {
        c.set("net.channels", self.channels);
        c.set("net.iterations", self.iterations);
        c.set("net.dilation", self.dilation);
        c.set("net.growth", self.growth);
        c.set("net.skip1", self.skip1);
        c.set("net.skip2", self.skip2);
    }

    pub fn read_from(c: &Container) -> Result<Self> {
        let cfg = Self {
            channels: c.get("net.channels")?,
            iterations: c.get("net.iterations")?,
            dilation: c.get("net.dilation")?,
            growth: c.get("net.growth")?,
            skip1: c.get("net.skip1")?,
            skip2: c.get("net.skip2")?,
        };
        cfg.validate().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(cfg)
    }
}

/// One conv layer of the namespace: (prefix, out, in, kernel).
type LayerSpec = (String, usize, usize, usize);

fn layer_specs(cfg: &NetConfig) -> Vec<LayerSpec> {
    let (c, g) = (cfg.channels, cfg.growth);
    let mut v = Vec::new();
    for b in 0..3 {
        v.push((format!("fu.branch{b}.conv1"), c, INPUT_CHANNELS, 3));
        v.push((format!("fu.branch{b}.conv2"), c, c, 3));
        v.push((format!("fu.branch{b}.conv3"), c, c, 3));
    }
    v.push(("fbu.fuse".into(), c, 2 * c, 1));
    v.push(("fbu.entry".into(), c, c, 1));
    for k in 1..=NUM_DILATED_BLOCKS {
        v.push((format!("fbu.block{k}.compress_in"), c, c, 1));
        for i in 1..=LAYERS_PER_BLOCK {
            v.push((format!("fbu.block{k}.dense{i}"), g, c + (i - 1) * g, 3));
        }
        v.push((format!("fbu.block{k}.compress_out"), c, c + LAYERS_PER_BLOCK * g, 1));
    }
    v.push(("fbu.exit".into(), c, c, 3));
    v.push(("ru.conv1".into(), c, c, 3));
    v.push(("ru.conv2".into(), c, c, 3));
    v.push(("ru.conv3".into(), OUTPUT_CHANNELS, c, 3));
    v
}

/// Every parameter name with its shape, in initialization order.
pub fn param_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    layer_specs(cfg)
        .into_iter()
        .flat_map(|(p, o, i, k)| {
            [
                (format!("{p}.weight"), vec![o, i, k, k]),
                (format!("{p}.bias"), vec![o]),
            ]
        })
        .collect()
}

/// Closed-form scalar parameter count.
pub fn param_count(cfg: &NetConfig) -> usize {
    let (c, g) = (cfg.channels, cfg.growth);
    90 * c * c + 128 * c + 120 * c * g + 162 * g * g + 12 * g + 3
}

/// Fan-in-scaled normal weights and zero biases drawn from a ChaCha8 stream.
pub fn init_params<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for (prefix, o, i, k) in layer_specs(cfg) {
        set.insert_conv(&prefix, o, i, k, &mut rng)?;
    }
    Ok(set)
}

/// Appends every parameter of `params` to `c`.
pub fn params_to_container(params: &ParamSet<f32>, c: &mut Container) {
    for p in params.iter() {
        c.tensors.push((p.name.clone(), p.value.clone()));
    }
}

/// Rebuilds the parameter set of `cfg` from `c`, requiring every name of the
/// namespace with its exact shape. Tensors outside the namespace whose name
/// does not start with one of `extra_prefixes` are rejected.
pub fn params_from_container(
    c: &Container,
    cfg: &NetConfig,
    extra_prefixes: &[&str],
) -> Result<ParamSet<f32>> {
    let shapes = param_shapes(cfg);
    let mut set = ParamSet::new();
    for (name, shape) in &shapes {
        let t = c
            .tensor(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Validation(format!(
                "parameter {name} has shape {:?}, config implies {shape:?}",
                t.shape()
            )));
        }
        set.insert(name.clone(), t.clone())?;
    }
    for (name, _) in &c.tensors {
        let known = set.get(name).is_some() || extra_prefixes.iter().any(|p| name.starts_with(p));
        if !known {
            return Err(Error::Validation(format!(
                "checkpoint parameter {name} is not part of the configured network"
            )));
        }
    }
    Ok(set)
}

/// Handles to every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub fe_minus2: Var,
    pub fe_0: Var,
    pub fe_plus2: Var,
    pub fe_all: Var,
    pub fe0_level1: Var,
    pub fe0_level2: Var,
    pub fb: Vec<Var>,
    pub frs: Vec<Var>,
    /// Raw tanh outputs, one per iteration; the last is the prediction.
    pub outputs: Vec<Var>,
}

fn conv(tape: &mut Tape<impl Scalar>, b: &Bound, name: &str, x: Var, dilation: usize) -> Result<Var> {
    let w = b.var(&format!("{name}.weight"))?;
    let bias = b.var(&format!("{name}.bias"))?;
    tape.conv2d(x, w, bias, dilation)
}

fn conv_relu(tape: &mut Tape<impl Scalar>, b: &Bound, name: &str, x: Var, dilation: usize) -> Result<Var> {
    let y = conv(tape, b, name, x, dilation)?;
    Ok(tape.relu(y))
}

fn channels_of<T: Scalar>(tape: &Tape<T>, v: Var) -> Result<usize> {
    Ok(tape.value(v).dims4()?.1)
}

/// One exposure branch: three conv+ReLU stages, returning all three outputs.
pub fn feature_unit<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    branch: usize,
    input: Var,
) -> Result<(Var, Var, Var)> {
    if branch > 2 {
        return Err(Error::Contract(format!("branch index {branch} out of range 0..3")));
    }
    let fe1 = conv_relu(tape, b, &format!("fu.branch{branch}.conv1"), input, 1)?;
    let fe2 = conv_relu(tape, b, &format!("fu.branch{branch}.conv2"), fe1, 1)?;
    let fe3 = conv_relu(tape, b, &format!("fu.branch{branch}.conv3"), fe2, 1)?;
    Ok((fe1, fe2, fe3))
}

pub fn fuse_features<T: Scalar>(tape: &mut Tape<T>, fe_m2: Var, fe_0: Var, fe_p2: Var) -> Result<Var> {
    let s = tape.add(fe_m2, fe_0)?;
    tape.add(s, fe_p2)
}

/// Dilated dense block `k` (1-based) with a residual connection.
pub fn dilated_block<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &NetConfig,
    k: usize,
    x: Var,
) -> Result<Var> {
    let h = conv_relu(tape, b, &format!("fbu.block{k}.compress_in"), x, 1)?;
    let mut feats = h;
    for i in 1..=LAYERS_PER_BLOCK {
        let d = conv_relu(tape, b, &format!("fbu.block{k}.dense{i}"), feats, cfg.dilation)?;
        feats = tape.concat_channels(feats, d)?;
    }
    let out = conv(tape, b, &format!("fbu.block{k}.compress_out"), feats, 1)?;
    tape.add(out, x)
}

/// Feedback step `t` (1-based). `fb_prev` must be absent exactly when `t == 1`.
pub fn feedback_unit<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &NetConfig,
    fe_all: Var,
    fb_prev: Option<Var>,
    t: usize,
) -> Result<Var> {
    if channels_of(tape, fe_all)? != cfg.channels {
        return Err(Error::Contract(format!(
            "fe_all has {} channels, expected {}",
            channels_of(tape, fe_all)?,
            cfg.channels
        )));
    }
    let x = match (t, fb_prev) {
        (0, _) => return Err(Error::Contract("iterations are numbered from 1".into())),
        (1, None) => fe_all,
        (1, Some(_)) => {
            return Err(Error::Contract(
                "the first iteration takes fe_all only; a previous state was supplied".into(),
            ))
        }
        (_, None) => {
            return Err(Error::Contract(format!(
                "iteration {t} needs the previous feedback state"
            )))
        }
        (_, Some(prev)) => {
            let cat = tape.concat_channels(fe_all, prev)?;
            conv_relu(tape, b, "fbu.fuse", cat, 1)?
        }
    };
    let mut x = conv_relu(tape, b, "fbu.entry", x, 1)?;
    for k in 1..=NUM_DILATED_BLOCKS {
        x = dilated_block(tape, b, cfg, k, x)?;
    }
    conv(tape, b, "fbu.exit", x, 1)
}

/// `fe0_level1 + fe0_level2 + fb_t`, dropping whichever skip is disabled.
pub fn skip_merge<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &NetConfig,
    fe0_level1: Var,
    fe0_level2: Var,
    fb_t: Var,
) -> Result<Var> {
    let skips = match (cfg.skip1, cfg.skip2) {
        (true, true) => Some(tape.add(fe0_level1, fe0_level2)?),
        (true, false) => Some(fe0_level1),
        (false, true) => Some(fe0_level2),
        (false, false) => None,
    };
    match skips {
        Some(s) => tape.add(s, fb_t),
        None => Ok(fb_t),
    }
}

pub fn reconstruction_unit<T: Scalar>(tape: &mut Tape<T>, b: &Bound, frs: Var) -> Result<Var> {
    let h = conv_relu(tape, b, "ru.conv1", frs, 1)?;
    let h = conv_relu(tape, b, "ru.conv2", h, 1)?;
    let y = conv(tape, b, "ru.conv3", h, 1)?;
    Ok(tape.tanh(y))
}

/// Full pass over branch inputs ordered EV−2, EV0, EV+2.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bound,
    cfg: &NetConfig,
    inputs: [Var; 3],
) -> Result<ForwardTrace> {
    cfg.validate()?;
    for &v in &inputs {
        if channels_of(tape, v)? != INPUT_CHANNELS {
            return Err(Error::shape(
                "network input",
                tape.value(v).shape(),
                &[0, INPUT_CHANNELS, 0, 0],
            ));
        }
    }
    let (_, _, fe_minus2) = feature_unit(tape, b, 0, inputs[0])?;
    let (fe0_level1, fe0_level2, fe_0) = feature_unit(tape, b, 1, inputs[1])?;
    let (_, _, fe_plus2) = feature_unit(tape, b, 2, inputs[2])?;
    let fe_all = fuse_features(tape, fe_minus2, fe_0, fe_plus2)?;

    let mut fb = Vec::with_capacity(cfg.iterations);
    let mut frs = Vec::with_capacity(cfg.iterations);
    let mut outputs = Vec::with_capacity(cfg.iterations);
    for t in 1..=cfg.iterations {
        let f = feedback_unit(tape, b, cfg, fe_all, fb.last().copied(), t)?;
        let r = skip_merge(tape, cfg, fe0_level1, fe0_level2, f)?;
        outputs.push(reconstruction_unit(tape, b, r)?);
        fb.push(f);
        frs.push(r);
    }
    Ok(ForwardTrace {
        fe_minus2,
        fe_0,
        fe_plus2,
        fe_all,
        fe0_level1,
        fe0_level2,
        fb,
        frs,
        outputs,
    })
}

/// Batched N×3×H×W tensors for the three branches of `stacks`.
pub fn stack_inputs<T: Scalar>(stacks: &[&ExposureStack]) -> Result<[Tensor<T>; 3]> {
    let branch = |k: usize| {
        let items: Vec<Tensor<T>> = stacks.iter().map(|s| s.images()[k].to_tensor()).collect();
        stack_batch(&items)
    };
    Ok([branch(0)?, branch(1)?, branch(2)?])
}

/// Runs the network without recording gradients and returns the raw
/// output of every iteration.
pub fn predict<T: Scalar>(
    params: &ParamSet<T>,
    cfg: &NetConfig,
    stacks: &[&ExposureStack],
) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let b = params.bind_frozen(&mut tape);
    let [m2, e0, p2] = stack_inputs(stacks)?;
    let inputs = [tape.constant(m2), tape.constant(e0), tape.constant(p2)];
    let trace = forward(&mut tape, &b, cfg, inputs)?;
    Ok(trace.outputs.iter().map(|&v| tape.value(v).clone()).collect())
}

/// `inverse_mu_law((x + 1) / 2)` for sample `n` of a raw output; values
/// are clamped to `[−1, 1]` first.
pub fn map_to_hdr<T: Scalar>(raw: &Tensor<T>, n: usize, mu: f64) -> Result<HdrImage> {
    let (w, h, px) = tensor_to_interleaved(raw, n)?;
    let scale = 1.0 + mu;
    let out = px
        .into_iter()
        .map(|x| {
            let y = ((x as f64).clamp(-1.0, 1.0) + 1.0) / 2.0;
            ((scale.powf(y) - 1.0) / mu) as f32
        })
        .collect();
    HdrImage::new(w, h, out)
}
