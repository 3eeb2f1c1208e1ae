use fbhdr::exposure::{bracket, synthesize_exposure, DEFAULT_GAMMA};
use fbhdr::LdrImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_ldr(seed: u64, w: usize, h: usize) -> LdrImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LdrImage::new(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap()
}

#[test]
fn stack_ordering_over_random_images() {
    for seed in 0..100 {
        let img = random_ldr(seed, 13, 9);
        let s = bracket(&img, DEFAULT_GAMMA).unwrap();
        assert_eq!(s.ev_0, img);
        for ((lo, mid), hi) in s.ev_minus2.pixels().iter().zip(s.ev_0.pixels()).zip(s.ev_plus2.pixels()) {
            assert!(lo <= mid && mid <= hi, "seed {seed}: {lo} {mid} {hi}");
        }
    }
}

#[test]
fn black_is_a_fixed_point() {
    let black = LdrImage::filled(4, 3, 0.0).unwrap();
    let s = bracket(&black, DEFAULT_GAMMA).unwrap();
    for img in s.images() {
        assert_eq!(img, &black);
    }
}

#[test]
fn non_finite_shift_is_rejected() {
    let img = random_ldr(1, 2, 2);
    assert!(synthesize_exposure(&img, f64::NAN, 2.2).is_err());
    assert!(synthesize_exposure(&img, f64::INFINITY, 2.2).is_err());
    assert!(bracket(&img, 0.0).is_err());
}

proptest! {
    #[test]
    fn shifts_compose_on_unclipped_values(v in 0.0f32..0.5, gamma in 1.0f64..3.0) {
        // v^gamma · 4 < 1 keeps the +2 result unclipped
        prop_assume!((v as f64).powf(gamma) * 4.0 < 1.0);
        let img = LdrImage::filled(1, 1, v).unwrap();
        let twice = synthesize_exposure(&synthesize_exposure(&img, 1.0, gamma).unwrap(), 1.0, gamma).unwrap();
        let once = synthesize_exposure(&img, 2.0, gamma).unwrap();
        prop_assert!((twice.pixels()[0] - once.pixels()[0]).abs() < 1e-6);
    }

    #[test]
    fn outputs_stay_in_unit_range(seed: u64, ev in -8.0f64..8.0, gamma in 0.2f64..5.0) {
        let out = synthesize_exposure(&random_ldr(seed, 5, 4), ev, gamma).unwrap();
        prop_assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn monotone_in_value(a in 0.0f32..=1.0, b in 0.0f32..=1.0, ev in -4.0f64..4.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let img = LdrImage::new(2, 1, vec![lo, lo, lo, hi, hi, hi]).unwrap();
        let out = synthesize_exposure(&img, ev, DEFAULT_GAMMA).unwrap();
        prop_assert!(out.pixels()[0] <= out.pixels()[3]);
    }
}
