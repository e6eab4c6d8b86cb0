use dipgd::linalg::{dot, Mat};
use dipgd::network::*;
use dipgd::seeds::{mix_seed, rng_from_seed};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn configs() -> Vec<(usize, usize, usize, Activation, TrainMode, u64)> {
    let mut out = Vec::new();
    for i in 0..20u64 {
        let act = if i % 2 == 0 { Activation::Sigmoid } else { Activation::Tanh };
        let mode = if (i / 2) % 2 == 0 { TrainMode::BothLayers } else { TrainMode::FixedV };
        out.push((2 + (i % 3) as usize, 3 + (i % 4) as usize, 2 + (i % 3) as usize, act, mode, i));
    }
    out
}

#[test]
fn jacobian_matches_central_differences() {
    for (d, k, n, act, mode, seed) in configs() {
        let (net, theta) = init_network(d, k, n, act, mode, seed).unwrap();
        // move off the symmetric init so all terms are exercised
        let mut rng = rng_from_seed(seed + 100);
        let flat: Vec<f64> = theta.flatten(mode).iter().map(|x| x + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta = theta.unflatten(mode, &flat).unwrap();
        let j = net.jacobian(&theta).unwrap();
        let h = 1e-6;
        for p in 0..net.num_params() {
            let mut fp = flat.clone();
            let mut fm = flat.clone();
            fp[p] += h;
            fm[p] -= h;
            let yp = net.forward(&theta.unflatten(mode, &fp).unwrap()).unwrap();
            let ym = net.forward(&theta.unflatten(mode, &fm).unwrap()).unwrap();
            for r in 0..n {
                let fd = (yp[r] - ym[r]) / (2.0 * h);
                assert!(
                    (fd - j[(r, p)]).abs() <= 1e-6 * j[(r, p)].abs().max(1.0),
                    "seed {seed} {mode:?} {act:?}: J[{r},{p}] = {} vs {fd}",
                    j[(r, p)]
                );
            }
        }
    }
}

#[test]
fn gram_and_vjp_agree_with_dense_jacobian() {
    for (d, k, n, act, mode, seed) in configs() {
        let (net, theta) = init_network(d, k, n, act, mode, seed).unwrap();
        let j = net.jacobian(&theta).unwrap();
        let dense = j.gram_rows();
        let closed = net.jacobian_gram(&theta).unwrap();
        assert!(dense.max_abs_diff(&closed) <= 1e-10 * dense.frobenius_norm().max(1.0));
        let r: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
        let jt = j.tr_matvec(&r).unwrap();
        let v = net.vjp(&theta, &r).unwrap();
        for (a, b) in jt.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn moments_match_monte_carlo() {
    let mut rng = rng_from_seed(7);
    let samples = 10_000_000;
    for act in [Activation::Sigmoid, Activation::Tanh] {
        let (c_phi, c_dphi) = act.moments();
        let (mut s0, mut s1) = (0.0, 0.0);
        for _ in 0..samples {
            let z: f64 = rng.sample(StandardNormal);
            s0 += act.eval(z).powi(2);
            s1 += act.deriv(z).powi(2);
        }
        let mc0 = (s0 / samples as f64).sqrt();
        let mc1 = (s1 / samples as f64).sqrt();
        assert!((mc0 - c_phi).abs() < 1e-3, "{act:?}: {mc0} vs {c_phi}");
        assert!((mc1 - c_dphi).abs() < 1e-3, "{act:?}: {mc1} vs {c_dphi}");
    }
}

#[test]
fn sigmoid_moments_by_trapezoid() {
    // independent quadrature against the Gauss-Hermite rule
    let (c_phi, c_dphi) = Activation::Sigmoid.moments();
    let dens = |x: f64| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (mut a, mut b) = (0.0, 0.0);
    let h = 1e-3;
    let mut x: f64 = -12.0;
    while x <= 12.0 {
        let s = 1.0 / (1.0 + (-x).exp());
        a += s * s * dens(x) * h;
        b += (s * (1.0 - s)).powi(2) * dens(x) * h;
        x += h;
    }
    assert!((a.sqrt() - c_phi).abs() < 1e-6);
    assert!((b.sqrt() - c_dphi).abs() < 1e-6);
}

#[test]
fn expected_gram_is_isotropic() {
    let (n, k, seeds) = (3, 4096, 200u64);
    let act = Activation::Sigmoid;
    let (c_phi, c_dphi) = act.moments();
    let target = c_phi * c_phi + c_dphi * c_dphi;
    let mut mean = Mat::zeros(n, n);
    for s in 0..seeds {
        let (net, theta) = init_network(10, k, n, act, TrainMode::BothLayers, mix_seed(99, &[s])).unwrap();
        let g = net.jacobian_gram(&theta).unwrap();
        for i in 0..n {
            for j in 0..n {
                mean[(i, j)] += g[(i, j)] / seeds as f64;
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { target } else { 0.0 };
            assert!((mean[(i, j)] - want).abs() <= 0.05 * target, "E[JJᵀ][{i},{j}] = {}", mean[(i, j)]);
        }
    }
}

#[test]
fn initial_weight_statistics() {
    let (net, theta) = init_network(16, 10_000, 4, Activation::Sigmoid, TrainMode::BothLayers, 5).unwrap();
    let w = theta.w().as_slice();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.02, "var {var}");
    assert!(theta.v().as_slice().iter().all(|x| x.abs() == 1.0));
    assert!((dot(net.input(), net.input()) - 1.0).abs() < 1e-12);
}

#[test]
fn doubling_v_doubles_output_and_hidden_gradient() {
    let (net, theta) = init_network(5, 64, 3, Activation::Tanh, TrainMode::BothLayers, 17).unwrap();
    let doubled = ParamVector::new(theta.w().clone(), theta.v().scaled(2.0)).unwrap();
    let y1 = net.forward(&theta).unwrap();
    let y2 = net.forward(&doubled).unwrap();
    for (a, b) in y1.iter().zip(&y2) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
    let j1 = net.jacobian(&theta).unwrap();
    let j2 = net.jacobian(&doubled).unwrap();
    let wblock = 64 * 5;
    for r in 0..3 {
        for p in 0..net.num_params() {
            let want = if p < wblock { 2.0 * j1[(r, p)] } else { j1[(r, p)] };
            assert!((j2[(r, p)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_activation_with_fixed_v_has_zero_jacobian() {
    let (net, theta) = init_network(4, 32, 3, Activation::Constant(0.7), TrainMode::FixedV, 3).unwrap();
    let (lo, hi) = net.jacobian_sigma_range(&theta).unwrap();
    assert_eq!((lo, hi), (0.0, 0.0));
}

#[test]
fn same_seed_same_network() {
    let a = init_network(6, 20, 3, Activation::Sigmoid, TrainMode::BothLayers, 42).unwrap();
    let b = init_network(6, 20, 3, Activation::Sigmoid, TrainMode::BothLayers, 42).unwrap();
    let c = init_network(6, 20, 3, Activation::Sigmoid, TrainMode::BothLayers, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flatten_round_trip(seed in 0u64..1000, both in any::<bool>()) {
        let mode = if both { TrainMode::BothLayers } else { TrainMode::FixedV };
        let (net, theta) = init_network(3, 7, 2, Activation::Tanh, mode, seed).unwrap();
        let flat = theta.flatten(mode);
        prop_assert_eq!(flat.len(), net.num_params());
        prop_assert_eq!(theta.unflatten(mode, &flat).unwrap(), theta);
    }

    #[test]
    fn forward_is_bounded(seed in 0u64..1000) {
        // |x_r| <= sup|φ| · |V_r|_1 / √k = sup|φ| √k for Rademacher V
        let (net, theta) = init_network(4, 25, 3, Activation::Sigmoid, TrainMode::BothLayers, seed).unwrap();
        for x in net.forward(&theta).unwrap() {
            prop_assert!(x.abs() <= 5.0 + 1e-12);
        }
    }
}
