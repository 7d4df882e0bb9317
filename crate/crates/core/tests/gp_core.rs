use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gpexperts::gp::{fit, lml_and_gradient, log_marginal_likelihood, Dataset, Space, TrainedGP};
use gpexperts::numerics::Hyperparameters;
use gpexperts::optim::OptimizerOptions;

fn sample(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0f64..2.0));
    let y = DVector::from_fn(n, |i, _| {
        x.row(i).iter().map(|v| v.sin()).sum::<f64>() + 0.1 * rng.random_range(-1.0..1.0)
    });
    Dataset::new(x, y).unwrap()
}

#[test]
fn gradient_matches_finite_differences_n20_d3() {
    let data = sample(20, 3, 7);
    let hyp = Hyperparameters::from_natural(&[0.8, 1.3, 0.6], 1.2, 0.15).unwrap();
    let (_, g) = lml_and_gradient(&data, &hyp).unwrap();
    let p = hyp.to_vec();
    for k in 0..p.len() {
        let h = 1e-5;
        let mut up = p.clone();
        let mut dn = p.clone();
        up[k] += h;
        dn[k] -= h;
        let fd = (log_marginal_likelihood(&data, &Hyperparameters::from_slice(&up).unwrap()).unwrap()
            - log_marginal_likelihood(&data, &Hyperparameters::from_slice(&dn).unwrap()).unwrap())
            / (2.0 * h);
        assert!(
            (fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3),
            "param {k}: {fd} vs {}",
            g[k]
        );
    }
}

#[test]
fn lml_against_dense_oracle() {
    // log N(y | 0, K) evaluated with an LU-based determinant and inverse
    let data = sample(12, 2, 3);
    let hyp = Hyperparameters::from_natural(&[0.9, 0.5], 0.8, 0.3).unwrap();
    let mut k = DMatrix::zeros(12, 12);
    for i in 0..12 {
        for j in 0..12 {
            let r2: f64 = (0..2)
                .map(|d| ((data.x()[(i, d)] - data.x()[(j, d)]) / hyp.lengthscales()[d]).powi(2))
                .sum();
            k[(i, j)] = hyp.signal_variance() * (-0.5 * r2).exp();
        }
        k[(i, i)] += hyp.noise_variance();
    }
    let lu = k.clone().lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().unwrap();
    let y = data.y();
    let expected = -0.5 * (y.transpose() * inv * y)[0] - 0.5 * det.ln() - 6.0 * (2.0 * std::f64::consts::PI).ln();
    let got = log_marginal_likelihood(&data, &hyp).unwrap();
    assert!((expected - got).abs() < 1e-9, "{expected} vs {got}");
}

#[test]
fn fit_improves_and_recovers_noise_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 150;
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-3.0f64..3.0));
    let noise = rand_distr::Normal::new(0.0, 0.2).unwrap();
    let y = DVector::from_fn(n, |i, _| {
        x[(i, 0)].sin() + rand_distr::Distribution::sample(&noise, &mut rng)
    });
    let data = Dataset::new(x, y).unwrap();
    let init = Hyperparameters::from_natural(&[3.0], 1.0, 1.0).unwrap();
    let r = fit(&data, &init, &OptimizerOptions::default()).unwrap();
    assert!(r.lml > r.initial_lml);
    assert!(r.lml_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    let sigma = r.hyperparameters.noise_variance().sqrt();
    assert!((sigma - 0.2).abs() < 0.05, "noise std {sigma}");
}

#[test]
fn predictions_interpolate_and_revert() {
    let data = sample(10, 1, 2);
    let hyp = Hyperparameters::from_natural(&[0.3], 1.0, 1e-3).unwrap();
    let gp = TrainedGP::new(&data, &hyp).unwrap();
    assert_eq!(gp.factor().jitter(), 0.0);
    let at_train = gp.predict_batch(data.x(), Space::F).unwrap();
    for (p, y) in at_train.iter().zip(data.y().iter()) {
        assert!((p.mean - y).abs() < 5e-3);
        assert!(p.variance < 1e-4);
    }
    let far = gp.predict(&[100.0], Space::Y).unwrap();
    assert!(far.mean.abs() < 1e-12);
    assert!((far.variance - (1.0 + 1e-6)).abs() < 1e-12);
}
