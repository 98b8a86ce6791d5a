use proptest::prelude::*;
use satrestore::forward::{
    degrade, evaluate_likelihood, grad_neg_log_likelihood, measure_mtf, neg_log_likelihood,
    psf_from_mtf, simulate_pair, MtfSpec,
};
use satrestore::{ForwardModel, ImageGrid, Kernel, Rng};

fn random_image(rng: &mut Rng, h: usize, w: usize, lo: f64, hi: f64) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| lo + (hi - lo) * rng.uniform())
}

fn blur(mtf: f64, size: usize) -> Kernel {
    psf_from_mtf(&MtfSpec {
        mtf_at_nyquist: mtf,
        kernel_size: size,
    })
    .unwrap()
}

#[test]
fn constant_image_noise_variance() {
    let fm = ForwardModel::new(Kernel::identity(), 1, 0.02, 0.0).unwrap();
    let x = ImageGrid::filled(2, 2, 0.5);
    let root = Rng::new(3);
    let n = 100_000;
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for i in 0..n {
        let y = degrade(&x, &fm, &mut root.substream(i)).unwrap();
        for (k, v) in y.data().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
    }
    for k in 0..4 {
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        assert!((var / (0.02 * 0.02) - 1.0).abs() < 0.03, "pixel {k}: {var}");
        // unbiased within 3 standard errors
        assert!((mean - 0.5).abs() < 3.0 * 0.02 / (n as f64).sqrt());
    }
}

#[test]
fn simulated_noise_matches_variance_field() {
    let fm = ForwardModel::new(blur(0.3, 5), 2, 0.01, 4e-3).unwrap();
    let mut rng = Rng::new(9);
    let clean = random_image(&mut rng, 32, 32, 0.0, 1.0);
    let mut noiseless = None;
    let root = Rng::new(10);
    let n = 40_000;
    let mut sum = vec![0.0; 64];
    let mut sq = vec![0.0; 64];
    for i in 0..n {
        let (target, degraded) = simulate_pair(&clean, &fm, 2, &mut root.substream(i)).unwrap();
        let m = noiseless.get_or_insert_with(|| fm.apply(&target).unwrap());
        for (k, (d, mk)) in degraded.data().iter().zip(m.data()).enumerate() {
            let e = d - mk;
            sum[k] += e;
            sq[k] += e * e;
        }
    }
    let m = noiseless.unwrap();
    for k in 0..64 {
        let v = fm.variance(m.data()[k].max(0.0));
        let mean = sum[k] / n as f64;
        let var = sq[k] / n as f64 - mean * mean;
        // 4 standard errors: 64 pixels are tested at once
        assert!(mean.abs() < 4.0 * (v / n as f64).sqrt(), "pixel {k} biased: {mean}");
        assert!((var / v - 1.0).abs() < 0.03, "pixel {k}: {var} vs {v}");
    }
}

#[test]
fn fixed_variance_gradient_is_weighted_residual() {
    let mut rng = Rng::new(4);
    for scale in [1, 2] {
        let fm = ForwardModel::new(blur(0.2, 7), scale, 0.03, 0.0).unwrap();
        let x = random_image(&mut rng, 12, 12, 0.0, 1.0);
        let y = random_image(&mut rng, 12 / scale, 12 / scale, 0.0, 1.0);
        let g = grad_neg_log_likelihood(&x, &y, &fm).unwrap();
        let r = fm.apply(&x).unwrap().zip_map(&y, |m, y| (m - y) / (0.03 * 0.03)).unwrap();
        let expected = fm.apply_adjoint(&r).unwrap();
        for (a, b) in g.data().iter().zip(expected.data()) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = Rng::new(5);
    for case in 0..10 {
        let scale = 1 + case % 2;
        let fm = ForwardModel::new(blur(0.25, 3), scale, 0.02, 5e-3).unwrap();
        let x = random_image(&mut rng, 8, 8, 0.05, 1.0);
        let y = degrade(&x, &fm, &mut rng).unwrap();
        let g = grad_neg_log_likelihood(&x, &y, &fm).unwrap();
        let h = 1e-5;
        let mut num = Vec::with_capacity(64);
        for i in 0..64 {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp = neg_log_likelihood(&xp, &y, &fm).unwrap();
            let fm_ = neg_log_likelihood(&xm, &y, &fm).unwrap();
            num.push((fp - fm_) / (2.0 * h));
        }
        let diff: f64 = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-5, "case {case}: relative error {}", diff / norm);
    }
}

#[test]
fn gradient_vanishes_at_the_minimizer() {
    let mut rng = Rng::new(6);
    let fm = ForwardModel::new(blur(0.5, 3), 1, 0.05, 0.01).unwrap();
    let truth = random_image(&mut rng, 4, 4, 0.2, 0.8);
    let y = degrade(&truth, &fm, &mut rng).unwrap();
    let mut x = y.clone();
    let mut f = neg_log_likelihood(&x, &y, &fm).unwrap();
    let mut step = 1e-3;
    for _ in 0..200_000 {
        let g = grad_neg_log_likelihood(&x, &y, &fm).unwrap();
        if g.norm_sq().sqrt() < 1e-7 {
            break;
        }
        loop {
            let mut cand = x.clone();
            cand.axpy(-step, &g);
            let fc = neg_log_likelihood(&cand, &y, &fm).unwrap();
            if fc <= f {
                x = cand;
                f = fc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    let g = grad_neg_log_likelihood(&x, &y, &fm).unwrap();
    assert!(g.norm_sq().sqrt() < 1e-6, "gradient norm {}", g.norm_sq().sqrt());
}

#[test]
fn psf_sweep_round_trips() {
    for k in 0..=45 {
        let m = 0.05 + 0.01 * k as f64;
        let h = blur(m, 9);
        let (mx, my) = measure_mtf(&h);
        assert!((mx - m).abs() < 1e-3 && (my - m).abs() < 1e-3, "{m}: {mx} {my}");
        assert!(h.taps().iter().all(|&t| t >= 0.0));
        assert!((h.mass() - 1.0).abs() < 1e-9);
        for r in 0..9 {
            for c in 0..9 {
                let t = h.tap(r, c);
                assert!((t - h.tap(c, r)).abs() < 1e-15);
                assert!((t - h.tap(8 - r, c)).abs() < 1e-15);
                assert!((t - h.tap(r, 8 - c)).abs() < 1e-15);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn likelihood_decreases_along_negative_gradient(seed in any::<u64>(), scale in 1usize..=2) {
        let mut rng = Rng::new(seed);
        let fm = ForwardModel::new(blur(0.3, 3), scale, 0.02, 3e-3).unwrap();
        let x = random_image(&mut rng, 8, 8, 0.0, 1.0);
        let y = random_image(&mut rng, 8 / scale, 8 / scale, 0.0, 1.0);
        let e = evaluate_likelihood(&x, &y, &fm, true).unwrap();
        let g = e.gradient.unwrap();
        let mut x2 = x.clone();
        x2.axpy(-1e-7 / (1.0 + g.norm_sq().sqrt()), &g);
        prop_assert!(neg_log_likelihood(&x2, &y, &fm).unwrap() < e.value);
    }

    #[test]
    fn noiseless_degrade_is_deterministic(seed in any::<u64>()) {
        let fm = ForwardModel::new(blur(0.15, 5), 2, 0.01, 1e-3).unwrap();
        let x = random_image(&mut Rng::new(seed), 10, 10, 0.0, 1.0);
        let a = degrade(&x, &fm, &mut Rng::new(seed)).unwrap();
        let b = degrade(&x, &fm, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
