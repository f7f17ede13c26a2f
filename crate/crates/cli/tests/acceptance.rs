//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use cpn_thermal::canonical::{self, McOptions};
use cpn_thermal::fokker_planck::{energy, entropy, solve, Density1D, FpOperator, FpParams};
use cpn_thermal::geometry::{sample_uniform, uniform_average};
use cpn_thermal::moments::{estimate_moments, liouville_rhs, verify_liouville};
use cpn_thermal::rng::stream;
use cpn_thermal::sde::{simulate_ensemble, simulate_theta, step, EnsembleOptions, InitialLaw, SdeParams};
use cpn_thermal::stats::{ks_two_sample, RunningStats};
use cpn_thermal::{expectation, variance, DensityMatrix, HermitianOperator, PureState, Spectrum, C64};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Shared by criteria 1 and 8: the spin-1/2 thermalisation run.
fn spin_half_run() -> (cpn_thermal::EnsembleSeries, HermitianOperator, SdeParams, f64) {
    let h = HermitianOperator::from_diagonal(&[1.0, -1.0]);
    let params = SdeParams {
        beta: 1.0,
        kappa: 0.5,
        dt: 1e-3,
        steps: 40_000,
        ensemble_size: 10_000,
        master_seed: 20_240_601,
        record_stride: 50,
    };
    let options = EnsembleOptions {
        track_moments: true,
        time_average_from: Some(30.0),
        workers: None,
    };
    let psi0 = PureState::from_real(&[1.0, 1.0]).unwrap();
    let start = Instant::now();
    let series = simulate_ensemble(&InitialLaw::Fixed(psi0), &h, &params, &options).unwrap();
    (series, h, params, start.elapsed().as_secs_f64())
}

fn criterion_1(series: &cpn_thermal::EnsembleSeries, seconds: f64) -> Outcome {
    let target = 1.0 - 1.0 / 1f64.tanh();
    let est = series.time_averaged_energy.unwrap();
    let z = est.z_score(target);
    outcome(
        z.abs() <= 3.0,
        format!(
            "late-time U = {:.5} ± {:.5} vs {:.5} (z = {:.2}); ensemble run {:.0} s",
            est.value, est.std_error, target, z, seconds
        ),
    )
}

fn random_hermitian(n: usize, seed: u64) -> HermitianOperator {
    let mut rng = stream(seed, 0);
    let mut rows = vec![vec![C64::new(0.0, 0.0); n]; n];
    for a in 0..n {
        rows[a][a] = C64::new(rng.sample(StandardNormal), 0.0);
        for b in a + 1..n {
            let z = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 0.5;
            rows[a][b] = z;
            rows[b][a] = z.conj();
        }
    }
    HermitianOperator::from_rows(&rows).unwrap()
}

fn criterion_2() -> Outcome {
    let cases: Vec<(HermitianOperator, PureState, f64, f64)> = vec![
        (
            HermitianOperator::from_diagonal(&[1.0, -1.0]),
            PureState::from_real(&[1.0, 1.0]).unwrap(),
            1.0,
            0.5,
        ),
        (
            HermitianOperator::from_diagonal(&[1.0, -1.0]),
            PureState::spin_half(PI / 3.0, 0.4),
            2.0,
            1.0,
        ),
        (random_hermitian(3, 1), sample_uniform(3, &mut stream(2, 0)).unwrap(), 1.0, 0.8),
        (random_hermitian(4, 3), sample_uniform(4, &mut stream(4, 0)).unwrap(), 0.0, 0.6),
        (random_hermitian(4, 5), PureState::basis(4, 2).unwrap(), 1.5, 0.7),
    ];
    let reps = 100_000;
    let dt = 1e-3;
    let mut worst = 0.0f64;
    for (i, (h, psi, beta, kappa)) in cases.iter().enumerate() {
        let n = h.dim();
        let params = SdeParams::new(*beta, *kappa, dt);
        let e0 = expectation(h, psi).unwrap();
        let v0 = variance(h, psi).unwrap();
        let drift = kappa * kappa / 2.0 * (n as f64 * (uniform_average(h) - e0) - beta * v0);
        let diffusion = kappa * kappa * v0;
        let mut rng = stream(100 + i as u64, 0);
        let mut deltas = Vec::with_capacity(reps);
        let mut dw = vec![0.0; 2 * n];
        for _ in 0..reps {
            for x in dw.iter_mut() {
                *x = dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            let next = step(psi, h, &params, &dw).unwrap();
            deltas.push(expectation(h, &next).unwrap() - e0);
        }
        let mut first = RunningStats::new();
        deltas.iter().for_each(|d| first.push(d / dt));
        let mean = first.mean() * dt;
        let mut second = RunningStats::new();
        deltas.iter().for_each(|d| second.push((d - mean).powi(2) / dt));
        let z_drift = (first.mean() - drift) / first.std_error();
        let z_diff = if diffusion > 0.0 {
            (second.mean() - diffusion) / second.std_error()
        } else {
            // An eigenstate has no diffusion; the increments are O(dt²).
            if second.mean() < 1e-6 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        worst = worst.max(z_drift.abs()).max(z_diff.abs());
    }
    outcome(
        worst <= 4.0,
        format!("5 pairs x {reps} replicates: largest |z| over drift and diffusion = {worst:.2}"),
    )
}

fn criterion_3() -> Outcome {
    let spectra: [&[f64]; 3] = [&[1.0, -1.0], &[-1.0, 0.3, 1.0], &[-1.2, -0.1, 0.4, 1.5]];
    let mut details = Vec::new();
    let mut pass = true;
    for (i, levels) in spectra.iter().enumerate() {
        let h = HermitianOperator::from_diagonal(levels);
        let n = levels.len();
        let top = levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let k_top = levels.iter().position(|&e| e == top).unwrap();
        let params = SdeParams {
            beta: 1.5,
            kappa: 1.0,
            dt: 1e-3 / n as f64,
            steps: 3000 * n,
            ensemble_size: 4000,
            master_seed: 300 + i as u64,
            record_stride: 50 * n,
        };
        let law = InitialLaw::Fixed(PureState::basis(n, k_top).unwrap());
        let series = simulate_ensemble(&law, &h, &params, &EnsembleOptions::default()).unwrap();
        let interval = params.record_interval();
        let u = &series.mean_energy;
        let mut within = 0;
        let mut total = 0;
        for b in &series.energy_balance {
            let k = (b.time / interval).round() as usize;
            let bias = if k >= 2 && k + 2 < u.len() {
                let wide = (u[k + 2] - u[k - 2]) / (4.0 * interval);
                (wide - b.du_dt).abs() / 3.0
            } else {
                0.0
            };
            let err = (b.residual_se.powi(2) + bias * bias).sqrt();
            total += 1;
            if (b.du_dt - b.rhs).abs() <= 3.0 * err {
                within += 1;
            }
        }
        let frac = within as f64 / total as f64;
        pass &= frac >= 0.9;
        details.push(format!("N={n}: {within}/{total}"));
    }
    outcome(pass, format!("records within 3 combined SE: {}", details.join(", ")))
}

fn random_spectrum(dim: usize, seed: u64) -> Spectrum {
    let mut rng = stream(seed, 0);
    let levels: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    Spectrum::from_levels(&levels).unwrap()
}

fn criterion_4() -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..10u64 {
        let dim = 2 + (s as usize % 6);
        let spec = random_spectrum(dim, 400 + s);
        for (j, beta) in [0.3, 1.0, 3.0].into_iter().enumerate() {
            let exact = canonical::partition_function(&spec, beta).unwrap();
            let mc = canonical::partition_function_mc(&spec, beta, 1_000_000, 500 + 3 * s + j as u64, None).unwrap();
            worst = worst.max(mc.z_score(exact).abs());
        }
    }
    let mut closed = 0.0f64;
    for (h, beta) in [(1.0, 1.0), (0.3, 2.0), (2.0, 0.7), (1.5, 3.0)] {
        let spec = Spectrum::from_levels(&[-h, h]).unwrap();
        let x: f64 = beta * h;
        closed = closed.max((canonical::partition_function(&spec, beta).unwrap() - x.sinh() / x).abs());
    }
    outcome(
        worst <= 4.0 && closed <= 1e-12,
        format!("30 Monte Carlo comparisons, largest |z| = {worst:.2}; spin-1/2 closed form error {closed:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let spectra: [&[f64]; 3] = [&[-1.0, 1.0], &[-1.0, 0.2, 1.0], &[0.0, 1.0, 2.0, 5.0]];
    let mut worst = 0.0f64;
    for levels in spectra {
        let spec = Spectrum::from_levels(levels).unwrap();
        for beta in [0.5, 1.0, 2.0] {
            worst = worst.max(canonical::verify_capacity_identity(&spec, beta).unwrap());
        }
    }
    let t2c = canonical::heat_capacity(&Spectrum::from_levels(&[-1.0, 1.0]).unwrap(), 1.0).unwrap();
    outcome(
        worst <= 1e-4 && (t2c - 0.27593).abs() < 5e-5,
        format!("largest identity residual {worst:.1e}; spin-1/2 T^2 C = {t2c:.5}"),
    )
}

fn criterion_6() -> Outcome {
    let cells = 800;
    let mut worst_step = 0.0f64;
    for (h, beta, kappa) in [(1.0, 1.0, 0.5), (1.0, 3.0, 1.0), (0.5, 0.0, 1.0), (2.0, 2.0, 0.7)] {
        let rho = Density1D::stationary(cells, h, beta).unwrap();
        let op = FpOperator::new(cells, h, beta, kappa).unwrap();
        let next = op.step(&rho, op.max_dt()).unwrap();
        for (a, b) in rho.values().iter().zip(next.values()) {
            worst_step = worst_step.max((a - b).abs() / a);
        }
    }
    // βh = 3 gives a spectral gap of 1.89 κ², enough for 1e-6 by t = 10/κ².
    let (h, beta, kappa) = (1.0, 3.0, 1.0);
    let initial = Density1D::gaussian(cells, 0.5, 0.2).unwrap();
    let params = FpParams {
        h,
        beta,
        kappa,
        dt: None,
        t_max: 10.0 / (kappa * kappa),
        record_stride: 20_000,
    };
    let run = solve(&initial, &params).unwrap();
    let equilibrium = Density1D::stationary(cells, h, beta).unwrap();
    let l1 = run.final_density.l1_distance(&equilibrium).unwrap();
    let monotone = run.series.l1_distance.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        worst_step <= 1e-12 && l1 < 1e-6 && monotone,
        format!(
            "stationary drift per step {worst_step:.1e}; L1 at t = 10/kappa^2 (beta h = 3) = {l1:.2e}, monotone {monotone}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let cells = 800;
    let (h, beta, kappa) = (1.0, 2.0, 1.0);
    let initial = Density1D::gaussian(cells, 0.6, 0.15).unwrap();
    let op = FpOperator::new(cells, h, beta, kappa).unwrap();
    let dt = 0.9 * op.max_dt();
    let t_max = 3.0;
    // Every step: one-sided rates of S and U.
    let mut cur = initial.clone();
    let mut s0 = entropy(&cur);
    let mut u0 = energy(&cur, h);
    let mut min_rate = f64::INFINITY;
    let steps = (t_max / dt).round() as usize;
    for _ in 0..steps {
        cur = op.step(&cur, dt).unwrap();
        let (s1, u1) = (entropy(&cur), energy(&cur, h));
        min_rate = min_rate.min((s1 - s0) / dt - beta * (u1 - u0) / dt);
        s0 = s1;
        u0 = u1;
    }
    let params = FpParams {
        h,
        beta,
        kappa,
        dt: Some(dt),
        t_max,
        record_stride: 5000,
    };
    let series = solve(&initial, &params).unwrap().series;
    let mut worst = 0.0f64;
    for k in 0..series.len() {
        if series.times[k] < 0.1 {
            continue;
        }
        let scale = series.entropy_rate[k].abs().max(series.production[k]).max(1e-8);
        worst = worst.max(series.residual[k].abs() / scale);
    }
    outcome(
        min_rate >= -1e-6 && worst <= 1e-4,
        format!("min dS/dt - beta dU/dt over {steps} steps = {min_rate:.2e}; largest relative equality residual {worst:.1e}"),
    )
}

fn criterion_8(series: &cpn_thermal::EnsembleSeries, h2: &HermitianOperator, params: &SdeParams) -> Outcome {
    // Algebraic identities on random valid inputs.
    let mut worst_trace = 0.0f64;
    let mut worst_herm = 0.0f64;
    for s in 0..50u64 {
        let n = 2 + (s as usize % 4);
        let h = random_hermitian(n, 800 + s);
        let mut rng = stream(900 + s, 0);
        let states: Vec<PureState> = (0..1 + s as usize % 7).map(|_| sample_uniform(n, &mut rng).unwrap()).collect();
        let snap = estimate_moments(&states).unwrap();
        let beta = rng.random_range(0.0..4.0);
        let kappa = rng.random_range(0.1..2.0);
        let rhs = liouville_rhs(&snap.rho, &snap.r2, &h, beta, kappa).unwrap();
        worst_trace = worst_trace.max(rhs.trace().norm());
        worst_herm = worst_herm.max((&rhs - rhs.adjoint()).camax());
    }
    // Finite-difference residuals on the spin-1/2 run.
    let report = verify_liouville(series.moments.as_ref().unwrap(), h2, params.beta, params.kappa).unwrap();
    // Equilibrium moments: batch means of the Monte Carlo right-hand side.
    let h = random_hermitian(3, 77);
    let (beta, kappa) = (1.2, 0.8);
    let batches = 20;
    let mut stats = vec![[RunningStats::new(); 2]; 9];
    for b in 0..batches {
        let options = McOptions {
            samples: 50_000,
            seed: 1000 + b,
            workers: None,
        };
        let mc = canonical::equilibrium_moments_mc(&h, beta, &options).unwrap();
        let rho = DensityMatrix::new(mc.rho.clone()).unwrap();
        let rhs = liouville_rhs(&rho, &mc.r2, &h, beta, kappa).unwrap();
        for (k, z) in rhs.iter().enumerate() {
            stats[k][0].push(z.re);
            stats[k][1].push(z.im);
        }
    }
    let mut worst_eq = 0.0f64;
    for s in stats.iter().flatten() {
        if s.std_error() > 0.0 {
            worst_eq = worst_eq.max(s.mean().abs() / s.std_error());
        }
    }
    let pass = worst_trace <= 1e-12 && worst_herm <= 1e-12 && report.fraction_within_3 >= 0.95 && worst_eq <= 4.0;
    outcome(
        pass,
        format!(
            "trace {worst_trace:.1e}, hermiticity {worst_herm:.1e}; FD residuals within 3: {:.1}%; equilibrium rhs largest |z| = {worst_eq:.2}",
            100.0 * report.fraction_within_3
        ),
    )
}

fn criterion_9() -> Outcome {
    let h = 1.0;
    let theta0 = PI / 3.0;
    let op = HermitianOperator::from_diagonal(&[h, -h]);
    let samples = 4000;
    let mut details = Vec::new();
    let mut pass = true;
    for (i, (beta, kappa, t)) in [(0.0, 0.5, 2.0), (1.0, 0.5, 5.0), (2.0, 1.0, 5.0)].into_iter().enumerate() {
        let dt = 1e-3;
        let steps = (t / dt) as usize;
        let params = SdeParams {
            beta,
            kappa,
            dt,
            steps,
            ensemble_size: samples,
            master_seed: 1200 + i as u64,
            record_stride: steps,
        };
        let law = InitialLaw::Fixed(PureState::spin_half(theta0, 0.0));
        let ambient = simulate_ensemble(&law, &op, &params, &EnsembleOptions::default())
            .unwrap()
            .final_energies;
        let theta = simulate_theta(&vec![theta0; samples], h, beta, kappa, dt, steps, 1300 + i as u64, None);
        let oracle: Vec<f64> = theta.iter().map(|t| h * t.cos()).collect();
        let ks = ks_two_sample(&ambient, &oracle);
        pass &= !ks.rejected_at(0.01);
        details.push(format!("({beta},{kappa},{t}): p = {:.3}", ks.p_value));
    }
    outcome(pass, format!("KS two-sample {}", details.join(", ")))
}

fn criterion_10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_cpn-thermal");
    let dir = tempfile::tempdir().unwrap();
    let studies: [&[&str]; 5] = [
        &["--mode", "simulate", "--spectrum=-1,0.5,1", "--beta", "1", "--kappa", "0.7", "--dt", "1e-3", "--steps", "400", "--ensemble", "300", "--record-stride", "20", "--seed", "5"],
        &["--mode", "verify-liouville", "--spectrum=-1,1", "--beta", "1", "--kappa", "0.5", "--dt", "1e-3", "--steps", "300", "--ensemble", "200", "--record-stride", "30", "--seed", "6", "--initial", "equal"],
        &["--mode", "sample", "--spectrum=-1,0,1", "--beta", "2", "--samples", "30000", "--seed", "7"],
        &["--mode", "equilibrium", "--spectrum=-1,0.3,1", "--beta-grid", "0.5,1,2"],
        &["--mode", "fp", "--beta", "1", "--kappa", "1", "--grid", "100", "--t-max", "0.2", "--initial", "gaussian", "--center", "0.3", "--width", "0.2"],
    ];
    let mut pass = true;
    let mut checked = 0;
    for (i, args) in studies.iter().enumerate() {
        let mut outputs = Vec::new();
        for (j, threads) in ["1", "4", "8", "4"].iter().enumerate() {
            let path = dir.path().join(format!("out_{i}_{j}"));
            let status = Command::new(bin)
                .args(*args)
                .args(["--threads", threads, "--out"])
                .arg(&path)
                .status()
                .unwrap();
            pass &= status.success();
            outputs.push(std::fs::read(&path).unwrap_or_default());
        }
        pass &= outputs.windows(2).all(|w| w[0] == w[1] && !w[0].is_empty());
        checked += 1;
    }
    outcome(pass, format!("{checked} studies x threads {{1,4,8}} plus a repeat: outputs byte-identical"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("[{tag}] criterion {id:>2} {name}: {}", o.detail);
    };
    let (series, h2, params, seconds) = spin_half_run();
    report(1, "spin-1/2 equilibrium energy", criterion_1(&series, seconds));
    report(2, "generator drift and diffusion", criterion_2());
    report(3, "energy ODE", criterion_3());
    report(4, "canonical partition function", criterion_4());
    report(5, "heat-capacity identity", criterion_5());
    report(6, "Fokker-Planck stationarity and convergence", criterion_6());
    report(7, "entropy production", criterion_7());
    report(8, "density-operator law", criterion_8(&series, &h2, &params));
    report(9, "ambient vs polar-angle oracle", criterion_9());
    report(10, "determinism", criterion_10());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
