//! μ-law range compression and the training objective.
//!
//! Losses only accept [`ToneMapped`] handles, which can be created either
//! from a raw network output (`(x + 1) / 2`) or from normalized linear
//! radiance through μ-law. Raw radiance never reaches a loss.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{inverse_mu_law_value, mu_law_value, Tape, Var};
use crate::checkpoint::{Container, EXTRACTOR_MAGIC};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuLawParams {
    pub mu: f64,
}

impl Default for MuLawParams {
    fn default() -> Self {
        Self { mu: 5000.0 }
    }
}

impl MuLawParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu.is_finite() && self.mu > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("mu must be finite and > 0, got {}", self.mu)))
        }
    }
}

fn check_unit<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<()> {
    match t.data().iter().find(|v| !(v.as_f64() >= -1e-6 && v.as_f64() <= 1.0 + 1e-6)) {
        Some(v) => Err(Error::Domain(format!("{op} expects values in [0, 1], found {v:?}"))),
        None => Ok(()),
    }
}

/// `ln(1 + μh) / ln(1 + μ)` elementwise.
pub fn mu_law<T: Scalar>(h: &Tensor<T>, p: MuLawParams) -> Result<Tensor<T>> {
    p.validate()?;
    check_unit("mu_law", h)?;
    let mu = T::of(p.mu);
    Ok(h.map(|v| mu_law_value(v, mu)))
}

/// `((1 + μ)^y − 1) / μ` elementwise.
pub fn inverse_mu_law<T: Scalar>(y: &Tensor<T>, p: MuLawParams) -> Result<Tensor<T>> {
    p.validate()?;
    check_unit("inverse_mu_law", y)?;
    let mu = T::of(p.mu);
    Ok(y.map(|v| inverse_mu_law_value(v, mu)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{what} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(Error::Config("at least one loss term must have a positive weight".into()));
        }
        Ok(())
    }

    /// `λ1·l1 + λ2·per`.
    pub fn combine(&self, l1: f64, per: f64) -> f64 {
        self.lambda1 * l1 + self.lambda2 * per
    }
}

/// A tape value known to live in the tone-mapped `[0, 1]` domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToneMapped(Var);

impl ToneMapped {
    pub fn var(self) -> Var {
        self.0
    }
}

/// `(raw + 1) / 2` for a tanh output.
pub fn tone_map_prediction<T: Scalar>(tape: &mut Tape<T>, raw: Var) -> ToneMapped {
    ToneMapped(tape.affine(raw, 0.5, 0.5))
}

/// μ-law of normalized radiance in `[0, 1]`.
pub fn tone_map_hdr<T: Scalar>(tape: &mut Tape<T>, hdr: Var, p: MuLawParams) -> Result<ToneMapped> {
    p.validate()?;
    Ok(ToneMapped(tape.mu_law(hdr, p.mu)?))
}

/// Per-iteration MAE against `gt`, averaged over iterations.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, preds: &[ToneMapped], gt: ToneMapped) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::Contract("l1 loss needs at least one prediction".into()));
    }
    let w = 1.0 / preds.len() as f64;
    let terms = preds
        .iter()
        .map(|p| Ok((tape.mean_abs_diff(p.0, gt.0)?, w)))
        .collect::<Result<Vec<_>>>()?;
    tape.weighted_sum(&terms)
}

/// Layer widths and tap points of a fixed feature stack of 3×3 conv+ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub channels: Vec<usize>,
    /// 1-based layer indices whose outputs are compared.
    pub taps: Vec<usize>,
}

impl ExtractorSpec {
    pub fn standard() -> Self {
        Self {
            channels: vec![16, 32, 32, 64, 64],
            taps: vec![2, 4],
        }
    }

    /// Small stack for fast gradient checks.
    pub fn tiny() -> Self {
        Self {
            channels: vec![4, 4],
            taps: vec![1, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 || self.channels.contains(&0) {
            return Err(Error::Config("extractor needs at least one non-empty layer".into()));
        }
        if self.taps.is_empty() || self.taps.iter().any(|&t| t == 0 || t > n) {
            return Err(Error::Config(format!("extractor taps {:?} outside 1..={n}", self.taps)));
        }
        if self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("extractor taps must be strictly increasing".into()));
        }
        Ok(())
    }

    fn depth(&self) -> usize {
        *self.taps.last().expect("validated")
    }

    /// Pixels from the centre to the edge of the deepest tap's receptive field.
    pub fn receptive_radius(&self) -> usize {
        self.depth()
    }

    /// Smallest image side whose deepest-tap features still see an
    /// interior pixel unaffected by padding on the far side.
    pub fn min_extent(&self) -> usize {
        self.receptive_radius() + 1
    }
}

pub const EXTRACTOR_SEED: u64 = 0x0005_eed0;

static STANDARD: OnceLock<PerceptualExtractor> = OnceLock::new();
const STANDARD_FIXTURE: &[u8] = include_bytes!("../fixtures/perceptual_extractor.ahpx");

/// Frozen feature stack for the perceptual loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualExtractor {
    spec: ExtractorSpec,
    params: ParamSet<f32>,
}

impl PerceptualExtractor {
    /// Draws fan-in-scaled weights and zero biases from `seed`.
    pub fn seeded(spec: ExtractorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut in_ch = 3;
        for (i, &c) in spec.channels.iter().enumerate() {
            params.insert_conv(&format!("px.conv{}", i + 1), c, in_ch, 3, &mut rng)?;
            in_ch = c;
        }
        Ok(Self { spec, params })
    }

    /// The repository's fixed 5-layer extractor, loaded from its fixture file.
    pub fn standard() -> &'static Self {
        STANDARD.get_or_init(|| {
            Self::from_bytes(STANDARD_FIXTURE).expect("embedded extractor fixture is valid")
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut c = Container::new(EXTRACTOR_MAGIC);
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        c.set("channels", join(&self.spec.channels));
        c.set("taps", join(&self.spec.taps));
        c.set("kernel", 3);
        for p in self.params.iter() {
            c.tensors.push((p.name.clone(), p.value.clone()));
        }
        c.encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::decode(bytes, EXTRACTOR_MAGIC)?;
        let list = |key: &str| -> Result<Vec<usize>> {
            let raw: String = c.get(key)?;
            raw.split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Validation(format!("extractor {key} entry {s:?}")))
                })
                .collect()
        };
        let spec = ExtractorSpec {
            channels: list("channels")?,
            taps: list("taps")?,
        };
        spec.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if c.get::<usize>("kernel")? != 3 {
            return Err(Error::Validation("extractor kernel must be 3".into()));
        }
        let mut params = ParamSet::new();
        let mut in_ch = 3;
        for (i, &ch) in spec.channels.iter().enumerate() {
            for (suffix, shape) in [("weight", vec![ch, in_ch, 3, 3]), ("bias", vec![ch])] {
                let name = format!("px.conv{}.{suffix}", i + 1);
                let t = c
                    .tensor(&name)
                    .filter(|t| t.shape() == shape.as_slice())
                    .ok_or_else(|| Error::Validation(format!("extractor {name} missing or misshapen")))?;
                params.insert(name, t.clone())?;
            }
            in_ch = ch;
        }
        if c.tensors.len() != params.len() {
            return Err(Error::Validation("extractor file holds unexpected tensors".into()));
        }
        Ok(Self { spec, params })
    }

    /// Records the frozen weights on `tape`.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> BoundExtractor {
        let cast: ParamSet<T> = self.params.cast();
        BoundExtractor {
            spec: self.spec.clone(),
            bound: cast.bind_frozen(tape),
        }
    }
}

/// An extractor whose weights are already on a tape.
pub struct BoundExtractor {
    spec: ExtractorSpec,
    bound: crate::params::Bound,
}

impl BoundExtractor {
    /// Tap outputs for `x`, computing layers only up to the deepest tap.
    pub fn features<T: Scalar>(&self, tape: &mut Tape<T>, x: ToneMapped) -> Result<Vec<Var>> {
        let mut h = x.0;
        let mut taps = Vec::with_capacity(self.spec.taps.len());
        for layer in 1..=self.spec.depth() {
            let w = self.bound.var(&format!("px.conv{layer}.weight"))?;
            let b = self.bound.var(&format!("px.conv{layer}.bias"))?;
            let y = tape.conv2d(h, w, b, 1)?;
            h = tape.relu(y);
            if self.spec.taps.contains(&layer) {
                taps.push(h);
            }
        }
        Ok(taps)
    }
}

/// Per-iteration mean over taps of feature MAE, averaged over iterations.
pub fn perceptual_loss<T: Scalar>(
    tape: &mut Tape<T>,
    preds: &[ToneMapped],
    gt: ToneMapped,
    extractor: &PerceptualExtractor,
) -> Result<Var> {
    if preds.is_empty() {
        return Err(Error::Contract("perceptual loss needs at least one prediction".into()));
    }
    let (_, _, h, w) = tape.value(gt.0).dims4()?;
    let need = extractor.spec.min_extent();
    if h.min(w) < need {
        return Err(Error::Config(format!(
            "perceptual loss needs images of at least {need}×{need}, got {w}×{h}"
        )));
    }
    let ex = extractor.bind(tape);
    let gt_feats = ex.features(tape, gt)?;
    let weight = 1.0 / (preds.len() * gt_feats.len()) as f64;
    let mut terms = Vec::with_capacity(preds.len() * gt_feats.len());
    for &p in preds {
        let feats = ex.features(tape, p)?;
        for (&f, &g) in feats.iter().zip(&gt_feats) {
            terms.push((tape.mean_abs_diff(f, g)?, weight));
        }
    }
    tape.weighted_sum(&terms)
}

/// `λ1·l1 + λ2·per`; an absent term contributes nothing.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    l1: Option<Var>,
    per: Option<Var>,
    w: LossWeights,
) -> Result<Var> {
    let terms: Vec<(Var, f64)> = [(l1, w.lambda1), (per, w.lambda2)]
        .into_iter()
        .filter_map(|(v, lam)| v.map(|v| (v, lam)))
        .collect();
    tape.weighted_sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_combine() {
        let w = LossWeights::default();
        assert!((w.combine(1.0, 2.0) - 1.1).abs() < 1e-15);
        assert!(LossWeights { lambda1: 0.0, lambda2: 0.0 }.validate().is_err());
        assert!(LossWeights { lambda1: -1.0, lambda2: 0.5 }.validate().is_err());
    }

    #[test]
    fn extent_floor() {
        assert_eq!(ExtractorSpec::standard().receptive_radius(), 4);
        assert_eq!(ExtractorSpec::standard().min_extent(), 5);
        assert!(ExtractorSpec { channels: vec![4], taps: vec![2] }.validate().is_err());
    }
}
