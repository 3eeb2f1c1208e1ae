//! Optimization loop, checkpoints and evaluation.

mod adam;
mod config;
mod data;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamState};
pub use config::{lr_schedule, AdamConfig, Decay, TrainConfig, CONFIG_KEYS};
pub use data::{
    scan_pairs, split_dataset, split_indices, synth_pair, synth_scene, DatasetIndex, IndexEntry,
    Split, SynthScene, SYNTH_GAMMA,
};

use crate::autodiff::{GradFault, Tape, Var};
use crate::checkpoint::{Container, CHECKPOINT_MAGIC};
use crate::codec;
use crate::error::{Error, Result};
use crate::exec;
use crate::exposure::{bracket, ExposureStack};
use crate::image::{stack_batch, HdrImage, LdrImage, Resize};
use crate::losses::{
    l1_loss, perceptual_loss, tone_map_hdr, tone_map_prediction, total_loss, LossWeights,
    MuLawParams, PerceptualExtractor,
};
use crate::metrics::{psnr, ssim, MetricsReport, MetricsRow};
use crate::network::{self, ForwardTrace, NetConfig};
use crate::params::{Bound, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// A bracketed input with its ground truth normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub stack: ExposureStack,
    pub gt: HdrImage,
}

impl TrainingPair {
    /// `hdr` is divided by `peak` and clipped to 1.
    pub fn new(ldr: &LdrImage, hdr: &HdrImage, peak: f64, gamma: f64) -> Result<Self> {
        if (ldr.width(), ldr.height()) != (hdr.width(), hdr.height()) {
            return Err(Error::shape(
                "training pair",
                &[ldr.height(), ldr.width()],
                &[hdr.height(), hdr.width()],
            ));
        }
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::Config(format!("hdr peak must be > 0, got {peak}")));
        }
        let gt = HdrImage::new(
            hdr.width(),
            hdr.height(),
            hdr.pixels()
                .iter()
                .map(|&v| (v as f64 / peak).min(1.0) as f32)
                .collect(),
        )?;
        Ok(Self {
            stack: bracket(ldr, gamma)?,
            gt,
        })
    }
}

/// Everything one loss evaluation puts on a tape.
pub struct LossGraph {
    pub trace: ForwardTrace,
    pub l1: Option<Var>,
    pub per: Option<Var>,
    pub total: Var,
}

/// Objective settings shared by training and gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub weights: LossWeights,
    pub mu: MuLawParams,
    pub extractor: &'a PerceptualExtractor,
}

/// Records forward pass and loss for a batch. Terms with zero weight are
/// not built.
pub fn build_loss<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    net: &NetConfig,
    obj: &Objective,
    inputs: [Tensor<T>; 3],
    gt: Tensor<T>,
) -> Result<LossGraph> {
    let [a, b, c] = inputs;
    let vars = [tape.constant(a), tape.constant(b), tape.constant(c)];
    let trace = network::forward(tape, bound, net, vars)?;
    let gt = tape.constant(gt);
    let gt_tm = tone_map_hdr(tape, gt, obj.mu)?;
    let preds: Vec<_> = trace
        .outputs
        .iter()
        .map(|&o| tone_map_prediction(tape, o))
        .collect();
    let l1 = if obj.weights.lambda1 > 0.0 {
        Some(l1_loss(tape, &preds, gt_tm)?)
    } else {
        None
    };
    let per = if obj.weights.lambda2 > 0.0 {
        Some(perceptual_loss(tape, &preds, gt_tm, obj.extractor)?)
    } else {
        None
    };
    let total = total_loss(tape, l1, per, obj.weights)?;
    Ok(LossGraph {
        trace,
        l1,
        per,
        total,
    })
}

/// Branch inputs and ground truth for a batch.
pub fn batch_tensors<T: Scalar>(batch: &[&TrainingPair]) -> Result<([Tensor<T>; 3], Tensor<T>)> {
    let stacks: Vec<&ExposureStack> = batch.iter().map(|p| &p.stack).collect();
    let inputs = network::stack_inputs(&stacks)?;
    let gts: Vec<Tensor<T>> = batch.iter().map(|p| p.gt.to_tensor()).collect();
    Ok((inputs, stack_batch(&gts)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub l1: Option<f64>,
    pub per: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// `epoch,mean_loss,lr` CSV.
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,mean_loss,lr\n");
    for r in log {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.mean_loss, r.lr));
    }
    s
}

/// Trainable model plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
    /// Epochs completed so far.
    pub epoch: usize,
    /// Radiance that maps to 1 in the normalized training domain.
    pub hdr_peak: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, hdr_peak: f64) -> Result<Self> {
        cfg.validate()?;
        let params = network::init_params(&cfg.net, cfg.seed)?;
        let adam = AdamState::new(&params);
        Ok(Self {
            cfg,
            params,
            adam,
            epoch: 0,
            hdr_peak,
        })
    }

    fn objective(&self) -> Objective<'static> {
        Objective {
            weights: self.cfg.loss,
            mu: self.cfg.mu,
            extractor: PerceptualExtractor::standard(),
        }
    }

    /// Loss of `batch` under the current parameters, without updating.
    pub fn evaluate_loss(&self, batch: &[&TrainingPair]) -> Result<StepReport> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let (inputs, gt) = batch_tensors(batch)?;
        let g = build_loss(&mut tape, &bound, &self.cfg.net, &self.objective(), inputs, gt)?;
        report(&tape, &g)
    }

    /// One forward/backward/Adam update. `batch_index` only labels errors.
    pub fn step(&mut self, batch: &[&TrainingPair], lr: f64, batch_index: usize) -> Result<StepReport> {
        self.step_with(batch, lr, batch_index, None)
    }

    /// As [`Trainer::step`], optionally corrupting gradients (test hook).
    pub fn step_with(
        &mut self,
        batch: &[&TrainingPair],
        lr: f64,
        batch_index: usize,
        fault: Option<GradFault>,
    ) -> Result<StepReport> {
        let fail = |message: String| Error::Training {
            epoch: self.epoch,
            batch: batch_index,
            message,
        };
        let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
        let bound = self.params.bind(&mut tape);
        let (inputs, gt) = batch_tensors(batch)?;
        let g = build_loss(&mut tape, &bound, &self.cfg.net, &self.objective(), inputs, gt)?;
        let rep = report(&tape, &g)?;
        if !rep.loss.is_finite() {
            return Err(fail(format!(
                "non-finite loss {} (l1 {:?}, perceptual {:?})",
                rep.loss, rep.l1, rep.per
            )));
        }
        let grads = tape.backward(g.total)?;
        self.params.zero_grad();
        self.params.accumulate(&grads, &bound);
        match adam_step(&mut self.params, &mut self.adam, lr, &self.cfg.adam) {
            Err(Error::NonFiniteGradient { parameter }) => Err(fail(format!(
                "non-finite gradient for {parameter} (loss {})",
                rep.loss
            ))),
            other => other.map(|()| rep),
        }
    }

    /// One pass over `pairs` in a seeded order, returning the mean loss and
    /// every step's loss.
    pub fn run_epoch(&mut self, pairs: &[TrainingPair]) -> Result<(EpochLog, Vec<f64>)> {
        if pairs.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let lr = lr_schedule(self.cfg.learning_rate, self.epoch, self.cfg.decay);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut epoch_rng(self.cfg.seed, self.epoch));
        let mut losses = Vec::new();
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            losses.push(self.step(&batch, lr, bi)?.loss);
        }
        let log = EpochLog {
            epoch: self.epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            lr,
        };
        self.epoch += 1;
        Ok((log, losses))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(CHECKPOINT_MAGIC);
        for line in self.cfg.to_text().lines() {
            let (k, v) = line.split_once('=').expect("config text is key=value");
            c.set(&format!("train.{k}"), v);
        }
        self.cfg.net.write_to(&mut c);
        c.set("mu", self.cfg.mu.mu);
        c.set("gamma", self.cfg.gamma);
        c.set("hdr_peak", self.hdr_peak);
        c.set("epoch", self.epoch);
        c.set("adam.step", self.adam.step);
        network::params_to_container(&self.params, &mut c);
        for (p, (m, v)) in self.params.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            c.tensors.push((format!("adam.m.{}", p.name), m.clone()));
            c.tensors.push((format!("adam.v.{}", p.name), v.clone()));
        }
        c
    }

    /// Restores a checkpoint written by [`Trainer::to_container`].
    pub fn from_container(c: &Container) -> Result<Self> {
        let text: String = CONFIG_KEYS
            .iter()
            .map(|(k, _)| Ok(format!("{k}={}\n", c.get::<String>(&format!("train.{k}"))?)))
            .collect::<Result<_>>()?;
        let cfg = TrainConfig::parse(&text).map_err(|e| Error::Validation(e.to_string()))?;
        if NetConfig::read_from(c)? != cfg.net {
            return Err(Error::Validation("checkpoint network blocks disagree".into()));
        }
        let params = network::params_from_container(c, &cfg.net, &["adam.m.", "adam.v."])?;
        let mut adam = AdamState::new(&params);
        adam.step = c.get("adam.step")?;
        for (i, p) in params.iter().enumerate() {
            for (slot, kind) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let t = c.tensor(&format!("adam.{kind}.{}", p.name)).ok_or_else(|| {
                    Error::Validation(format!("checkpoint lacks optimizer moment for {}", p.name))
                })?;
                if t.shape() != p.value.shape() {
                    return Err(Error::Validation(format!("optimizer moment shape for {}", p.name)));
                }
                *slot = t.clone();
            }
        }
        Ok(Self {
            cfg,
            params,
            adam,
            epoch: c.get("epoch")?,
            hdr_peak: c.get("hdr_peak")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_container().encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_container(&Container::decode(&bytes, CHECKPOINT_MAGIC)?)
    }

    pub fn model(&self) -> Model {
        Model {
            net: self.cfg.net,
            params: self.params.clone(),
            mu: self.cfg.mu,
            gamma: self.cfg.gamma,
            hdr_peak: self.hdr_peak,
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn report<T: Scalar>(tape: &Tape<T>, g: &LossGraph) -> Result<StepReport> {
    let val = |v: Var| tape.value(v).item().map(|x| x.as_f64());
    Ok(StepReport {
        loss: val(g.total)?,
        l1: g.l1.map(val).transpose()?,
        per: g.per.map(val).transpose()?,
    })
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
}

/// Runs epochs `trainer.epoch..cfg.epochs`. With `checkpoint` set, the
/// trainer is saved every `checkpoint_every` epochs and at the end.
pub fn train(
    mut trainer: Trainer,
    pairs: &[TrainingPair],
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    while trainer.epoch < trainer.cfg.epochs {
        let (row, losses) = trainer.run_epoch(pairs)?;
        log.push(row);
        step_losses.extend(losses);
        let every = trainer.cfg.checkpoint_every;
        if let Some(path) = checkpoint {
            if every > 0 && trainer.epoch % every == 0 && trainer.epoch < trainer.cfg.epochs {
                trainer.save(path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        trainer.save(path)?;
    }
    Ok(TrainOutcome {
        trainer,
        log,
        step_losses,
    })
}

/// Loads every pair, resizes it to `cfg.resize`, normalizes radiance by
/// the peak over all loaded HDR images and brackets the LDR.
pub fn prepare_pairs(
    images: &[(LdrImage, HdrImage)],
    cfg: &TrainConfig,
) -> Result<(Vec<TrainingPair>, f64)> {
    let resized: Vec<(LdrImage, HdrImage)> = images
        .iter()
        .map(|(l, h)| {
            let s = cfg.resize;
            let l = if (l.width(), l.height()) == (s, s) { l.clone() } else { l.resize_bilinear(s, s)? };
            let h = if (h.width(), h.height()) == (s, s) { h.clone() } else { h.resize_bilinear(s, s)? };
            Ok((l, h))
        })
        .collect::<Result<_>>()?;
    let peak = resized.iter().map(|(_, h)| h.peak() as f64).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::Validation("every training HDR image is black".into()));
    }
    let pairs = resized
        .iter()
        .map(|(l, h)| TrainingPair::new(l, h, peak, cfg.gamma))
        .collect::<Result<_>>()?;
    Ok((pairs, peak))
}

/// Inference-only view of a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: NetConfig,
    pub params: ParamSet<f32>,
    pub mu: MuLawParams,
    pub gamma: f64,
    pub hdr_peak: f64,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Trainer::load(path)?.model())
    }

    /// Raw outputs of all iterations for one image.
    pub fn raw_outputs(&self, ldr: &LdrImage) -> Result<Vec<Tensor<f32>>> {
        let stack = bracket(ldr, self.gamma)?;
        network::predict(&self.params, &self.net, &[&stack])
    }

    /// Final-iteration radiance in normalized units (peak 1).
    pub fn predict_normalized(&self, ldr: &LdrImage) -> Result<HdrImage> {
        let outs = self.raw_outputs(ldr)?;
        network::map_to_hdr(outs.last().expect("T >= 1"), 0, self.mu.mu)
    }

    /// Every iteration's radiance in the training data's units.
    pub fn infer_all(&self, ldr: &LdrImage) -> Result<Vec<HdrImage>> {
        self.raw_outputs(ldr)?
            .iter()
            .map(|o| network::map_to_hdr(o, 0, self.mu.mu)?.scaled(self.hdr_peak as f32))
            .collect()
    }
}

/// PSNR of μ-law tone-mapped images and SSIM of linear images, both in
/// normalized units.
pub fn score_pair(pred: &HdrImage, gt: &HdrImage, mu: MuLawParams) -> Result<(f64, f64)> {
    let tm = |img: &HdrImage| crate::losses::mu_law(&img.to_tensor::<f64>(), mu);
    let p = psnr(&tm(pred)?, &tm(gt)?, 1.0)?;
    Ok((p, ssim(pred, gt)?))
}

/// An evaluation input that could not be scored.
#[derive(Debug)]
pub struct Skipped {
    pub name: String,
    pub error: Error,
}

#[derive(Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub skipped: Vec<Skipped>,
}

/// Scores `predict(index, ldr)` (normalized radiance) against each ground
/// truth divided by `hdr_peak`. Items that fail to load or predict are
/// skipped and listed. Images are processed in parallel.
pub fn evaluate_with<F>(
    items: Vec<(String, Result<(LdrImage, HdrImage)>)>,
    hdr_peak: f64,
    mu: MuLawParams,
    predict: F,
) -> Evaluation
where
    F: Fn(usize, &LdrImage) -> Result<HdrImage> + Send + Sync,
{
    let mut skipped = Vec::new();
    let mut loaded = Vec::new();
    for (i, (name, r)) in items.into_iter().enumerate() {
        match r {
            Ok(pair) => loaded.push((i, name, pair)),
            Err(error) => skipped.push(Skipped { name, error }),
        }
    }
    let results = exec::map_indices(loaded.len(), |k| {
        let (i, _, (ldr, hdr)) = &loaded[k];
        let gt = hdr.scaled((1.0 / hdr_peak) as f32)?;
        let pred = predict(*i, ldr)?;
        score_pair(&pred, &gt, mu)
    });
    let mut rows = Vec::new();
    for ((_, name, _), r) in loaded.into_iter().zip(results) {
        match r {
            Ok((psnr_db, ssim)) => rows.push(MetricsRow { name, psnr_db, ssim }),
            Err(error) => skipped.push(Skipped { name, error }),
        }
    }
    Evaluation {
        report: MetricsReport::from_rows(rows),
        skipped,
    }
}

/// Evaluates `model` on file pairs using the final iteration's output.
pub fn evaluate(model: &Model, pairs: &[(PathBuf, PathBuf)]) -> Evaluation {
    let items = pairs
        .iter()
        .map(|(l, h)| {
            let loaded = codec::load_ldr(l).and_then(|ldr| Ok((ldr, codec::load_hdr(h)?)));
            (l.display().to_string(), loaded)
        })
        .collect();
    evaluate_with(items, model.hdr_peak, model.mu, |_, ldr| model.predict_normalized(ldr))
}
