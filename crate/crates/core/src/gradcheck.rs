//! Full-network gradient verification against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_grad, max_relative_error, GradFault, Tape};
use crate::error::{Error, Result};
use crate::losses::{ExtractorSpec, LossWeights, MuLawParams, PerceptualExtractor, EXTRACTOR_SEED};
use crate::network::{self, NetConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::trainer::{batch_tensors, build_loss, synth_scene, Objective, TrainingPair};

const BIAS_STREAM: u64 = 0xb1a5;
const BIAS_JITTER: f64 = 0.1;
/// Ratio of the refined finite-difference step to `eps`.
const REFINE: f64 = 0.1;
/// Coarse/fine disagreement, in units of rounding noise, that marks a kink.
const KINK_NOISE_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub width: usize,
    pub height: usize,
    pub net: NetConfig,
    pub weights: LossWeights,
    pub mu: MuLawParams,
    /// Use the 2-layer extractor instead of the standard one.
    pub tiny_extractor: bool,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Absolute floor of the relative-error denominator.
    pub floor: f64,
    /// Deliberately corrupt the analytic gradient.
    pub fault: Option<GradFault>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            net: NetConfig {
                channels: 8,
                iterations: 2,
                growth: 4,
                ..NetConfig::default()
            },
            weights: LossWeights::default(),
            mu: MuLawParams::default(),
            tiny_extractor: false,
            seed: 1,
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-8,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
    /// Elements whose finite difference was taken with the refined step.
    pub kinks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compares the analytic gradient of the training loss with respect to
/// every network parameter against finite differences, in float64, on a
/// synthetic scene. Weights follow the usual initialization; biases are
/// drawn uniformly from ±0.1 instead of zero.
pub fn check_network_gradients(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.width < 8 || cfg.height < 8 {
        return Err(Error::Config("gradient check needs extents of at least 8".into()));
    }
    let extractor_owned;
    let extractor = if cfg.tiny_extractor {
        extractor_owned = PerceptualExtractor::seeded(ExtractorSpec::tiny(), EXTRACTOR_SEED)?;
        &extractor_owned
    } else {
        PerceptualExtractor::standard()
    };
    let obj = Objective {
        weights: cfg.weights,
        mu: cfg.mu,
        extractor,
    };
    let scene = synth_scene(cfg.seed, cfg.width, cfg.height)?;
    let pair = TrainingPair::new(&scene.ldr, &scene.hdr, 1.0, crate::exposure::DEFAULT_GAMMA)?;
    let (inputs, gt) = batch_tensors::<f64>(&[&pair])?;
    let mut params: ParamSet<f64> = network::init_params(&cfg.net, cfg.seed)?;
    // Zero biases behind a fully dead layer put every pre-activation exactly
    // on the ReLU kink, where central differences average the two one-sided
    // slopes. Small random biases move the probe point off the kink.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BIAS_STREAM);
    for p in params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-BIAS_JITTER..BIAS_JITTER));
    }

    let loss_of = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let b = ps.bind_frozen(&mut tape);
        let g = build_loss(&mut tape, &b, &cfg.net, &obj, inputs.clone(), gt.clone())?;
        tape.value(g.total).item()
    };

    let mut tape = cfg.fault.map_or_else(Tape::new, Tape::with_fault);
    let bound = params.bind(&mut tape);
    let g = build_loss(&mut tape, &bound, &cfg.net, &obj, inputs.clone(), gt.clone())?;
    let grads = tape.backward(g.total)?;
    let base_loss = tape.value(g.total).item()?;

    let mut checks = Vec::with_capacity(params.len());
    for (p, &var) in params.iter().zip(bound.vars()) {
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let f = |probe: &Tensor<f64>| {
            let mut ps = params.clone();
            ps.set_value(&p.name, probe.clone()).expect("same shape");
            loss_of(&ps).expect("loss evaluated once already")
        };
        let coarse = finite_diff_grad(f, &p.value, cfg.eps);
        let fine = finite_diff_grad(f, &p.value, cfg.eps * REFINE);
        // Where the two steps disagree far beyond rounding noise a ReLU
        // boundary lies within ±eps and the shorter step is the estimate.
        let noise = base_loss.abs() * f64::EPSILON / (cfg.eps * REFINE);
        let mut kinks = 0;
        let mut numeric = coarse;
        for (n, &f) in numeric.data_mut().iter_mut().zip(fine.data()) {
            if (*n - f).abs() > KINK_NOISE_FACTOR * noise {
                *n = f;
                kinks += 1;
            }
        }
        checks.push(ParamCheck {
            name: p.name.clone(),
            numel: p.value.len(),
            max_rel_err: max_relative_error(&analytic, &numeric, cfg.floor),
            kinks,
        });
    }
    let max_rel_err = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        max_rel_err,
        tolerance: cfg.tolerance,
    })
}
