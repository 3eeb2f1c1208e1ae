use fbhdr::autodiff::{finite_diff_grad, max_relative_error, OpKind, Tape};
use fbhdr::losses::{
    inverse_mu_law, l1_loss, mu_law, perceptual_loss, tone_map_hdr, tone_map_prediction,
    total_loss, ExtractorSpec, LossWeights, MuLawParams, PerceptualExtractor, EXTRACTOR_SEED,
};
use fbhdr::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MU: MuLawParams = MuLawParams { mu: 5000.0 };

fn grid(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n], |i| i as f64 / (n - 1) as f64)
}

fn random(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

#[test]
fn mu_law_endpoints_and_midpoint() {
    let ends = Tensor::<f64>::new(vec![2], vec![0.0, 1.0]).unwrap();
    assert_eq!(mu_law(&ends, MU).unwrap().data(), &[0.0, 1.0]);
    assert_eq!(inverse_mu_law(&ends, MU).unwrap().data(), &[0.0, 1.0]);
    let ends32 = Tensor::<f32>::new(vec![2], vec![0.0, 1.0]).unwrap();
    assert_eq!(mu_law(&ends32, MU).unwrap().data(), &[0.0, 1.0]);

    let half = mu_law(&Tensor::<f64>::scalar(0.5), MU).unwrap().item().unwrap();
    assert!((half - 2501f64.ln() / 5001f64.ln()).abs() < 1e-12);
    assert!((half - 0.918_643_271_879_646).abs() < 1e-12);
    let back = inverse_mu_law(&Tensor::<f64>::scalar(0.5), MU).unwrap().item().unwrap();
    assert!((back - (5001f64.sqrt() - 1.0) / 5000.0).abs() < 1e-12);
}

#[test]
fn mu_law_round_trips_on_a_dense_grid() {
    let x = grid(10_000);
    let fwd = mu_law(&x, MU).unwrap();
    let back = inverse_mu_law(&fwd, MU).unwrap();
    assert!(back.max_abs_diff(&x).unwrap() < 1e-6);
    let y = inverse_mu_law(&x, MU).unwrap();
    assert!(mu_law(&y, MU).unwrap().max_abs_diff(&x).unwrap() < 1e-6);
    for w in fwd.data().windows(2) {
        assert!(w[1] > w[0]);
    }
}

#[test]
fn mu_law_slope_at_zero() {
    let expect = 5000.0 / 5001f64.ln();
    let mut tape = Tape::new();
    let x = tape.param(Tensor::<f64>::scalar(0.0));
    let y = tape.mu_law(x, 5000.0).unwrap();
    let g = tape.backward(y).unwrap();
    assert!((g.get(x).unwrap().item().unwrap() - expect).abs() / expect < 1e-12);
    let h = 1e-9;
    let numeric = mu_law(&Tensor::<f64>::scalar(h), MU).unwrap().item().unwrap() / h;
    assert!((numeric - expect).abs() / expect < 1e-5);
}

#[test]
fn mu_law_domain() {
    let bad = Tensor::<f64>::new(vec![2], vec![0.5, 1.1]).unwrap();
    assert!(matches!(mu_law(&bad, MU), Err(Error::Domain(_))));
    assert!(matches!(inverse_mu_law(&bad, MU), Err(Error::Domain(_))));
    let neg = Tensor::<f64>::scalar(-0.01);
    assert!(matches!(mu_law(&neg, MU), Err(Error::Domain(_))));
    assert!(mu_law(&Tensor::<f64>::scalar(1.0 + 5e-7), MU).is_ok());
    assert!(mu_law(&Tensor::<f64>::scalar(0.5), MuLawParams { mu: 0.0 }).is_err());
}

fn tone_mapped_pair(tape: &mut Tape<f64>, pred: Tensor<f64>, gt: Tensor<f64>) -> (fbhdr::losses::ToneMapped, fbhdr::losses::ToneMapped) {
    // `pred` holds tone values; feed the raw tanh output that maps onto them
    let raw = pred.map(|v| 2.0 * v - 1.0);
    let p = tape.param(raw);
    let g = tape.constant(inverse_mu_law(&gt, MU).unwrap());
    (tone_map_prediction(tape, p), tone_map_hdr(tape, g, MU).unwrap())
}

#[test]
fn l1_examples() {
    let gt = random(&[1, 3, 4, 4], 1, 0.0, 0.7);
    let mut tape = Tape::new();
    let (same, g) = tone_mapped_pair(&mut tape, gt.clone(), gt.clone());
    let zero = l1_loss(&mut tape, &[same], g).unwrap();
    assert!(tape.value(zero).item().unwrap().abs() < 1e-12);

    let (off, g) = tone_mapped_pair(&mut tape, gt.map(|v| v + 0.25), gt.clone());
    let l = l1_loss(&mut tape, &[off], g).unwrap();
    assert!((tape.value(l).item().unwrap() - 0.25).abs() < 1e-12);

    let (a, g) = tone_mapped_pair(&mut tape, gt.map(|v| v + 0.1), gt.clone());
    let (b, _) = tone_mapped_pair(&mut tape, gt.map(|v| v + 0.3), gt.clone());
    let l = l1_loss(&mut tape, &[a, b], g).unwrap();
    assert!((tape.value(l).item().unwrap() - 0.2).abs() < 1e-12);

    assert!(matches!(l1_loss(&mut tape, &[], g), Err(Error::Contract(_))));
}

#[test]
fn perceptual_zero_on_equal_inputs_and_extent_check() {
    let ex = PerceptualExtractor::standard();
    assert_eq!(ex.spec().min_extent(), 5);
    let gt = random(&[1, 3, 5, 6], 2, 0.0, 1.0);
    let mut tape = Tape::new();
    let (p, g) = tone_mapped_pair(&mut tape, gt.clone(), gt.clone());
    let l = perceptual_loss(&mut tape, &[p, p], g, ex).unwrap();
    assert!(tape.value(l).item().unwrap().abs() < 1e-9);

    let small = random(&[1, 3, 4, 9], 3, 0.0, 1.0);
    let (p, g) = tone_mapped_pair(&mut tape, small.clone(), small);
    assert!(matches!(perceptual_loss(&mut tape, &[p], g, ex), Err(Error::Config(_))));
}

#[test]
fn perceptual_gradient_matches_finite_differences() {
    let ex = PerceptualExtractor::seeded(ExtractorSpec::tiny(), EXTRACTOR_SEED).unwrap();
    let pred = random(&[1, 3, 5, 5], 4, 0.05, 0.95);
    let gt = random(&[1, 3, 5, 5], 5, 0.0, 1.0);
    let loss_of = |raw: &Tensor<f64>| -> f64 {
        let mut tape = Tape::new();
        let p = tape.constant(raw.clone());
        let g = tape.constant(inverse_mu_law(&gt, MU).unwrap());
        let (p, g) = (tone_map_prediction(&mut tape, p), tone_map_hdr(&mut tape, g, MU).unwrap());
        let l = perceptual_loss(&mut tape, &[p], g, &ex).unwrap();
        tape.value(l).item().unwrap()
    };
    let raw = pred.map(|v| 2.0 * v - 1.0);
    let mut tape = Tape::new();
    let (p, g) = tone_mapped_pair(&mut tape, pred, gt.clone());
    let l = perceptual_loss(&mut tape, &[p], g, &ex).unwrap();
    let grads = tape.backward(l).unwrap();
    let raw_var = tape.vars().find(|&v| tape.requires_grad(v)).unwrap();
    let analytic = grads.get(raw_var).unwrap();
    let numeric = finite_diff_grad(loss_of, &raw, 1e-5);
    assert!(max_relative_error(analytic, &numeric, 1e-8) < 1e-4);
    assert!((tape.value(l).item().unwrap() - loss_of(&raw)).abs() < 1e-15);
}

#[test]
fn extractor_is_frozen_and_reproducible() {
    let ex = PerceptualExtractor::standard();
    assert_eq!(ex.spec(), &ExtractorSpec::standard());
    let regenerated = PerceptualExtractor::seeded(ExtractorSpec::standard(), EXTRACTOR_SEED).unwrap();
    assert_eq!(ex, &regenerated);
    let fixture = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/perceptual_extractor.ahpx")).unwrap();
    assert_eq!(regenerated.to_bytes(), fixture);
    assert_eq!(&PerceptualExtractor::from_bytes(&fixture).unwrap(), ex);

    let x = random(&[1, 3, 6, 6], 6, 0.0, 1.0);
    let feats = || {
        let mut tape = Tape::new();
        let (p, _) = tone_mapped_pair(&mut tape, x.clone(), x.clone());
        let f = ex.bind(&mut tape).features(&mut tape, p).unwrap();
        f.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
    };
    let f = feats();
    assert_eq!(f.len(), 2);
    assert_eq!(f[0].shape(), &[1, 32, 6, 6]);
    assert_eq!(f[1].shape(), &[1, 64, 6, 6]);
    assert_eq!(f, feats());

    let mut corrupt = fixture.clone();
    corrupt[0] = b'X';
    assert!(PerceptualExtractor::from_bytes(&corrupt).is_err());
}

#[test]
fn only_the_prediction_receives_gradient() {
    let ex = PerceptualExtractor::seeded(ExtractorSpec::tiny(), 9).unwrap();
    let mut tape = Tape::new();
    let (p, g) = tone_mapped_pair(&mut tape, random(&[1, 3, 4, 4], 7, 0.0, 1.0), random(&[1, 3, 4, 4], 8, 0.0, 1.0));
    let l = perceptual_loss(&mut tape, &[p], g, &ex).unwrap();
    let grads = tape.backward(l).unwrap();
    let leaves: Vec<_> = tape
        .vars()
        .filter(|&v| tape.kind(v) == &OpKind::Leaf && grads.get(v).is_some())
        .collect();
    assert_eq!(leaves.len(), 1);
    assert_eq!(tape.value(leaves[0]).shape(), &[1, 3, 4, 4]);
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!((w.lambda1, w.lambda2), (0.1, 0.5));
    let mut tape = Tape::<f64>::new();
    let (l1, per) = (tape.param(Tensor::scalar(1.0)), tape.param(Tensor::scalar(2.0)));
    let t = total_loss(&mut tape, Some(l1), Some(per), w).unwrap();
    assert!((tape.value(t).item().unwrap() - 1.1).abs() < 1e-15);
    assert!((w.combine(1.0, 2.0) - 1.1).abs() < 1e-15);

    let l1_only = LossWeights { lambda1: 0.1, lambda2: 0.0 };
    let t = total_loss(&mut tape, Some(l1), Some(per), l1_only).unwrap();
    assert!((tape.value(t).item().unwrap() - 0.1).abs() < 1e-15);

    let none = LossWeights { lambda1: 0.0, lambda2: 0.0 };
    assert_eq!(none.combine(3.0, 4.0), 0.0);
    let t = total_loss(&mut tape, Some(l1), Some(per), none).unwrap();
    assert_eq!(tape.value(t).item().unwrap(), 0.0);
    assert!(none.validate().is_err());
    assert!(LossWeights { lambda1: -0.1, lambda2: 0.5 }.validate().is_err());
}

proptest! {
    #[test]
    fn total_loss_is_homogeneous(l1 in 0.0f64..10.0, per in 0.0f64..10.0, k in 0.0f64..100.0) {
        let w = LossWeights::default();
        let lhs = w.combine(k * l1, k * per);
        prop_assert!((lhs - k * w.combine(l1, per)).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn perceptual_loss_is_non_negative(seed in 0u64..1000) {
        let ex = PerceptualExtractor::seeded(ExtractorSpec::tiny(), EXTRACTOR_SEED).unwrap();
        let mut tape = Tape::new();
        let (p, g) = tone_mapped_pair(&mut tape, random(&[1, 3, 4, 5], seed, 0.0, 1.0), random(&[1, 3, 4, 5], seed + 1, 0.0, 1.0));
        let l = perceptual_loss(&mut tape, &[p], g, &ex).unwrap();
        prop_assert!(tape.value(l).item().unwrap() >= 0.0);
    }

    #[test]
    fn mu_law_stays_in_unit_range(v in 0.0f64..=1.0, mu in 1.0f64..1e5) {
        let y = mu_law(&Tensor::scalar(v), MuLawParams { mu }).unwrap().item().unwrap();
        prop_assert!((0.0..=1.0).contains(&y));
    }
}
