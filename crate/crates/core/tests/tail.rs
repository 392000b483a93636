mod common;

use hallsand::tail::{ccdf, fit_alpha, hill_continuous, select_xmin, TailConfig, TailEstimator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn recovers_exponent_two_and_a_half() {
    let samples = common::PowerLawSampler::new(2.5).samples(100_000, 13);
    let alpha = fit_alpha(&samples, 1, TailEstimator::DiscreteMle).unwrap();
    assert!((2.45..=2.55).contains(&alpha), "{alpha}");
}

/// Asymptotic standard error of the discrete MLE, `1/√(n·Var ln X)`, by
/// direct summation over the truncated support.
fn fisher_se(alpha: f64, x_min: usize, n: usize) -> f64 {
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for k in x_min..2_000_000 {
        let w = (k as f64).powf(-alpha);
        let l = (k as f64).ln();
        z += w;
        m1 += w * l;
        m2 += w * l * l;
    }
    let var = m2 / z - (m1 / z).powi(2);
    1.0 / (n as f64 * var).sqrt()
}

#[test]
fn cutoff_selection_on_a_pure_power_law() {
    for (alpha, seed) in [(2.0, 3), (3.0, 4)] {
        let samples = common::PowerLawSampler::new(alpha).samples(20_000, seed);
        let fit = select_xmin(&samples, &TailConfig::default()).unwrap();
        assert!(fit.informative);
        assert!(fit.x_min <= 2, "x_min {}", fit.x_min);
        let se = fisher_se(alpha, fit.x_min, fit.n_tail);
        assert!((fit.alpha.unwrap() - alpha).abs() < 2.0 * se, "{fit:?}");
    }
}

#[test]
fn cutoff_found_at_splice_of_body_and_tail() {
    // Geometric body on 1..=7 below a power-law tail starting at 8.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let tail = common::PowerLawSampler::new(2.5);
    let samples: Vec<usize> = (0..30_000)
        .map(|_| {
            if rng.random::<f64>() < 0.6 {
                let mut x = 1;
                while x < 7 && rng.random::<f64>() < 0.5 {
                    x += 1;
                }
                x
            } else {
                loop {
                    let x = tail.sample(&mut rng);
                    if x >= 8 {
                        break x;
                    }
                }
            }
        })
        .collect();
    let fit = select_xmin(&samples, &TailConfig::default()).unwrap();
    assert!((6..=10).contains(&fit.x_min), "{fit:?}");
    assert!((fit.alpha.unwrap() - 2.5).abs() < 0.15, "{fit:?}");
}

#[test]
fn hill_estimator_on_a_moderate_cutoff() {
    let samples = common::PowerLawSampler::new(2.5).samples(100_000, 5);
    let mle = fit_alpha(&samples, 10, TailEstimator::DiscreteMle).unwrap();
    let hill = fit_alpha(&samples, 10, TailEstimator::Hill).unwrap();
    assert!((mle - 2.5).abs() < 0.1, "{mle}");
    assert!((hill - 2.5).abs() < 0.1, "{hill}");
}

proptest! {
    #[test]
    fn ccdf_matches_recount(samples in prop::collection::vec(1usize..200, 1..300)) {
        let c = ccdf(&samples).unwrap();
        prop_assert_eq!(c[0].1, 1.0);
        for w in c.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 > w[1].1);
        }
        for (x, p) in c {
            let count = samples.iter().filter(|&&s| s >= x).count();
            prop_assert_eq!(p, count as f64 / samples.len() as f64);
        }
    }

    #[test]
    fn hill_is_scale_invariant(
        values in prop::collection::vec(1.0f64..1e4, 2..200),
        scale in 0.1f64..1.0,
        c in 1e-3f64..1e3,
    ) {
        let a = hill_continuous(&values, scale).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let b = hill_continuous(&scaled, scale * c).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn selected_fit_is_well_formed(samples in prop::collection::vec(1usize..500, 1..400)) {
        let fit = select_xmin(&samples, &TailConfig::default()).unwrap();
        prop_assert!(samples.contains(&fit.x_min));
        prop_assert_eq!(fit.n_tail, samples.iter().filter(|&&s| s >= fit.x_min).count());
        if let Some(ks) = fit.ks_distance {
            prop_assert!((0.0..=1.0).contains(&ks));
        }
        if fit.informative {
            prop_assert!(fit.n_tail >= 50 && fit.alpha.unwrap() > 1.0);
        }
    }
}
