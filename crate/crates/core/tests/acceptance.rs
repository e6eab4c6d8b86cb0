//! One line per acceptance criterion; the process fails if any criterion does.

use std::time::Instant;

use dipgd::certificates::{bound_series, certify, early_stop_tau, nu_constants, radius_r, Certificate};
use dipgd::experiments::*;
use dipgd::linalg::Mat;
use dipgd::losses::LossModel;
use dipgd::network::{init_network, Activation, DipNetwork, TrainMode};
use dipgd::operators::OperatorKind;
use dipgd::seeds::{mix_seed, rng_from_seed};
use dipgd::trainer::{descent_residuals, gd_train, lip_jacobian_bound, trajectory_csv, LipschitzRule, StepRule, TrainConfig};
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = (bool, String);

fn kl_identity() -> Outcome {
    let mut rng = rng_from_seed(1);
    let y: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
    let loss = LossModel::mse(y);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let v: Vec<f64> = (0..8).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        worst = worst.max((loss.kl_residual(&v).unwrap() - 1.0).abs());
    }
    (worst <= 1e-10, format!("max |residual - 1| = {worst:.2e} over 100 points"))
}

fn jacobian_fd() -> Outcome {
    let mut worst_fd: f64 = 0.0;
    let mut worst_gram: f64 = 0.0;
    for act in [Activation::Sigmoid, Activation::Tanh] {
        for mode in [TrainMode::BothLayers, TrainMode::FixedV] {
            let (net, theta) = init_network(3, 8, 4, act, mode, 21).unwrap();
            let flat = theta.flatten(mode);
            let j = net.jacobian(&theta).unwrap();
            let h = 1e-6;
            let mut fd = Mat::zeros(4, flat.len());
            for p in 0..flat.len() {
                let (mut a, mut b) = (flat.clone(), flat.clone());
                a[p] += h;
                b[p] -= h;
                let ya = net.forward(&theta.unflatten(mode, &a).unwrap()).unwrap();
                let yb = net.forward(&theta.unflatten(mode, &b).unwrap()).unwrap();
                for r in 0..4 {
                    fd[(r, p)] = (ya[r] - yb[r]) / (2.0 * h);
                }
            }
            let diff = Mat::from_fn(4, flat.len(), |r, p| fd[(r, p)] - j[(r, p)]);
            worst_fd = worst_fd.max(diff.frobenius_norm() / j.frobenius_norm());
            let gram = net.jacobian_gram(&theta).unwrap();
            worst_gram = worst_gram.max(gram.max_abs_diff(&j.gram_rows()));
        }
    }
    (
        worst_fd <= 1e-5 && worst_gram <= 1e-10,
        format!("finite-difference rel err {worst_fd:.2e}, Gram identity err {worst_gram:.2e}"),
    )
}

fn nu_values() -> Outcome {
    let mut worst: f64 = 0.0;
    for l in [0.3, 1.0, 7.5, 120.0] {
        let a = nu_constants(1.0 / (2.0 * l), l).unwrap();
        let b = nu_constants(1.0 / l, l).unwrap();
        worst = worst.max((a.nu2 - 6.0 * l).abs() / l).max((b.nu1 - 4.0).abs());
        // γ = 1/(2L) minimizes ν₂ over a fine grid
        for i in 1..=1000 {
            let g = i as f64 / (1000.0 * l);
            if nu_constants(g, l).unwrap().nu2 < a.nu2 - 1e-12 * a.nu2 {
                return (false, format!("ν₂ smaller at γL = {}", g * l));
            }
        }
    }
    (worst <= 1e-12, format!("max deviation {worst:.2e}; γ = 1/(2L) minimizes ν₂"))
}

fn descent_inequality() -> Outcome {
    let mut good = 0;
    for s in 0..40 {
        let t = desk_trial(&DeskSpec::default(), mix_seed(4, &[s])).unwrap();
        let traj = gd_train(&t.net, &t.theta0, &t.inst, &t.loss, &TrainConfig { max_steps: 2000, ..Default::default() }).unwrap();
        let l0 = traj.records[0].loss;
        if descent_residuals(&traj, traj.l_hat.unwrap(), traj.gamma_used).iter().all(|r| *r <= 1e-12 * l0) {
            good += 1;
        }
    }
    (good as f64 >= 0.95 * 40.0, format!("{good}/40 runs satisfy the per-step descent inequality"))
}

fn certified_trials(master: u64, noise_std: f64, count: usize) -> (Vec<(DeskTrial, Certificate)>, usize) {
    let spec = DeskSpec { k: 16384, noise_std, ..Default::default() };
    let mut out = Vec::new();
    let mut tried = 0;
    while out.len() < count && tried < 10 * count {
        let t = desk_trial(&spec, mix_seed(master, &[tried as u64])).unwrap();
        tried += 1;
        let c = certify(&t.net, &t.theta0, &t.inst, &t.loss, StepRule::default(), LipschitzRule::default()).unwrap();
        if c.holds {
            out.push((t, c));
        }
    }
    (out, tried)
}

fn envelope() -> Outcome {
    let (runs, tried) = certified_trials(5, 0.0, 20);
    if runs.len() < 20 {
        return (false, format!("only {} certified runs out of {tried}", runs.len()));
    }
    let mut min_slack = f64::INFINITY;
    for (t, c) in &runs {
        let cfg = TrainConfig { max_steps: 5000, ..Default::default() };
        let first = gd_train(&t.net, &t.theta0, &t.inst, &t.loss, &cfg).unwrap();
        let cfg = TrainConfig { reference_theta: Some(first.theta_final), ..cfg };
        let traj = gd_train(&t.net, &t.theta0, &t.inst, &t.loss, &cfg).unwrap();
        let b = bound_series(c, &t.loss, traj.steps_run, None).unwrap();
        for (rec, row) in traj.records.iter().zip(&b.rows) {
            let slack_loss = row.loss_bound * (1.0 + 1e-9) / rec.loss.max(f64::MIN_POSITIVE);
            let slack_theta = row.theta_bound * (1.0 + 1e-9) / rec.ref_dist.unwrap().max(f64::MIN_POSITIVE);
            min_slack = min_slack.min(slack_loss).min(slack_theta);
        }
    }
    (
        min_slack >= 1.0,
        format!("20 certified runs ({tried} drawn); smallest bound/observed ratio {min_slack:.3}"),
    )
}

fn sigma_concentration() -> Outcome {
    let (cp, cdp) = Activation::Sigmoid.moments();
    let floor = (cp * cp + cdp * cdp).sqrt() / 2.0;
    let mut ok = 0;
    let mut lowest = f64::INFINITY;
    for s in 0..20 {
        let (net, theta) = init_network(10, 16384, 5, Activation::Sigmoid, TrainMode::BothLayers, mix_seed(6, &[s])).unwrap();
        let smin = net.sigma_min_j(&theta).unwrap();
        lowest = lowest.min(smin);
        if smin >= floor {
            ok += 1;
        }
    }
    (ok >= 19, format!("{ok}/20 draws above {floor:.4} (lowest {lowest:.4})"))
}

fn certificate_grid() -> Outcome {
    let ks: Vec<usize> = (4..=12).map(|e| 1usize << e).collect();
    let ms: Vec<usize> = (1..=5).collect();
    let template = DeskSpec { mode: TrainMode::FixedV, operator: OperatorKind::Gaussian, ..Default::default() };
    let g = grid_certificate(&ms, &ks, &template, 50, 7, LipschitzRule::default()).unwrap();
    let mut worst = 0;
    let mut rows = Vec::new();
    for (i, m) in ms.iter().enumerate() {
        let p: Vec<f64> = (0..ks.len()).map(|j| g.cell(i, j).probability()).collect();
        let inv = p.windows(2).filter(|w| w[1] < w[0]).count();
        worst = worst.max(inv);
        rows.push(format!("m={m}: {}", p.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")));
    }
    let spread = g.cells.iter().flatten().any(|c| c.probability() > 0.5) && g.cells.iter().flatten().any(|c| c.probability() < 0.5);
    (worst <= 1 && spread, format!("max inversions per m = {worst}; {}", rows.join(" | ")))
}

fn divergence_trend() -> Outcome {
    let spec = ConvergenceGridSpec {
        n_list: vec![5, 10, 20, 40],
        gamma_list: (0..9).map(|i| 10f64.powf(-2.0 + 0.25 * i as f64)).collect(),
        m_ratio: 0.6,
        steps: 200,
        loss_stop: 1e-4,
        trials: 4,
        divergence_factor: 1.0,
    };
    let template = DeskSpec {
        k: 4096,
        operator: OperatorKind::Gaussian,
        signal: SignalModel::Gaussian { scale: 1.0 },
        ..Default::default()
    };
    let g = grid_convergence(&spec, &template, 8).unwrap();
    let th = divergence_thresholds(&g);
    let ns: Vec<f64> = spec.n_list.iter().map(|&n| n as f64).collect();
    let rho = spearman(&ns, &th);
    let finite = th.iter().any(|t| t.is_finite());
    (
        rho <= 0.0 && finite,
        format!("γ*(n) = {:?}, Spearman ρ = {rho:.3}", th.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>()),
    )
}

fn early_stopping() -> Outcome {
    let (runs, _) = certified_trials(9, 0.01, 1);
    let Some((t, c)) = runs.first() else {
        return (false, "no certified noisy instance".into());
    };
    let eps = t.inst.noise_norm();
    let tau = early_stop_tau(c, &t.loss, eps).unwrap();
    let steps = (tau.ceil() as usize).max(1);
    let traj = gd_train(&t.net, &t.theta0, &t.inst, &t.loss, &TrainConfig { max_steps: steps, loss_stop: 0.0, ..Default::default() }).unwrap();
    let r = traj.records[tau.ceil() as usize].clean_residual;
    (r <= 2.0 * eps, format!("τ* = {tau:.1}; |y_τ - ȳ| = {r:.3e} vs 2|ε| = {:.3e}", 2.0 * eps))
}

fn radius_fixed_point() -> Outcome {
    let mut rng = rng_from_seed(10);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let n = rng.random_range(1..50);
        let k = rng.random_range(1..1_000_000);
        let mode = if i % 2 == 0 { TrainMode::BothLayers } else { TrainMode::FixedV };
        let act = if i % 3 == 0 { Activation::Tanh } else { Activation::Sigmoid };
        let net = DipNetwork::new(n, k, act, vec![1.0], mode, rng.random_range(0.5..2.0)).unwrap();
        let sigma = rng.random_range(0.01..3.0);
        let r = radius_r(sigma, &net);
        worst = worst.max((2.0 * r * lip_jacobian_bound(&net, r) - sigma).abs() / sigma);
    }
    // 2R² + 3R - 2 = 0: D = 1, B = 1/4, σ = 1, k = n
    let hand = radius_r(1.0, &DipNetwork::new(4, 4, Activation::Sigmoid, vec![1.0], TrainMode::BothLayers, 1.0).unwrap());
    (
        worst <= 1e-10 && (hand - 0.5).abs() <= 1e-12,
        format!("max fixed-point residual {worst:.2e}; hand case R = {hand}"),
    )
}

fn deblur() -> Outcome {
    let crafted = OperatorKind::Crafted { lo: 1.0, hi: 2.0 };
    let clean = deblur_pipeline(&DeblurConfig { operator: crafted, ..Default::default() }).unwrap();
    let a = clean.final_relative_error <= 1e-2;

    let blur = deblur_pipeline(&DeblurConfig { noise_std: 2.5, ..Default::default() }).unwrap();
    let last = blur.obs_residuals.len() - 1;
    let obs_rel = blur.obs_residuals[last] / blur.y_norm;
    let b = blur.final_relative_error >= 10.0 * obs_rel;

    let noisy = deblur_pipeline(&DeblurConfig { operator: crafted, noise_std: 50.0, ..Default::default() }).unwrap();
    let errs = &noisy.signal_errors;
    let min = errs.iter().copied().fold(f64::INFINITY, f64::min);
    let interior = noisy.min_error_step > 0 && noisy.min_error_step < noisy.trajectory.steps_run;
    let c = interior && errs[errs.len() - 1] > min && errs[0] > min;

    (
        a && b && c,
        format!(
            "crafted noiseless rel err {:.2e}; noisy blur image rel err {:.3} vs observation rel residual {obs_rel:.3}; \
             crafted σ=50 error min {min:.3} at step {} of {}, final {:.3}",
            clean.final_relative_error,
            blur.final_relative_error,
            noisy.min_error_step,
            noisy.trajectory.steps_run,
            errs[errs.len() - 1]
        ),
    )
}

fn determinism() -> Outcome {
    let template = DeskSpec { mode: TrainMode::FixedV, operator: OperatorKind::Gaussian, ..Default::default() };
    let grid = || grid_certificate(&[1, 3, 5], &[16, 256, 4096], &template, 8, 12, LipschitzRule::default()).unwrap().csv();
    let a = grid();
    let b = grid();
    let c = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(grid);
    let d = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(grid);
    let t = desk_trial(&DeskSpec::default(), 12).unwrap();
    let traj = || trajectory_csv(&gd_train(&t.net, &t.theta0, &t.inst, &t.loss, &TrainConfig { max_steps: 200, record_sigma_every: 50, ..Default::default() }).unwrap());
    let same = a == b && a == c && a == d && traj() == traj();
    (same, format!("grid CSV identical across reruns and 1/4-thread pools ({} bytes); trajectory CSV identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("KL identity for the squared loss", kl_identity),
        ("Jacobian finite differences and Gram identity", jacobian_fd),
        ("ν-constant endpoint values", nu_values),
        ("descent inequality on desk runs", descent_inequality),
        ("loss and parameter envelopes on certified runs", envelope),
        ("σmin(J₀) concentration", sigma_concentration),
        ("certificate probability increases with width", certificate_grid),
        ("divergence threshold decreases with n", divergence_trend),
        ("early stopping event", early_stopping),
        ("radius fixed point", radius_fixed_point),
        ("deblurring qualitative behaviour", deblur),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = f();
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {:2} {verdict}: {name} [{:.1}s] {detail}", i + 1, start.elapsed().as_secs_f64());
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 12 acceptance criteria passed");
}
