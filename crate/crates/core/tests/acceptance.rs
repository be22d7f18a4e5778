//! End-to-end acceptance criteria. Run with
//! `cargo test -p brwlab --test acceptance`; pass criterion numbers as extra
//! arguments to run a subset.

use std::time::{Duration, Instant};

use brwlab::asymptotics::{killed_convolve, Tail, TailedFunction};
use brwlab::moment_solver::{
    choose_truncation, fit_growth, fit_series, solve_moments, GrowthModel, MomentOptions,
    MomentTrajectory, Variant,
};
use brwlab::montecarlo::{ratio_difference, sample_limit_law, simulate, SimulationOptions, Simulator};
use brwlab::spectral::{beta_critical, classify, critical_law, lambda0, lambda0_with, SpectralOptions};
use brwlab::walk_kernel::{build_kernel, KernelSpec};
use brwlab::{Error, Execution, OffspringLaw, Result, WalkKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Result<Check> {
    Ok(Check { pass, detail })
}

fn srw(d: usize) -> WalkKernel {
    build_kernel(&KernelSpec::simple_symmetric(d, 1.0)).unwrap()
}

fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..300 {
        term *= (x / 2.0) * (x / 2.0) / (k as f64 * k as f64);
        sum += term;
    }
    sum
}

/// Solves, doubling the radius while the box leaks.
fn solve_growing(kernel: &WalkKernel, law: &OffspringLaw, mut opts: MomentOptions) -> Result<Vec<MomentTrajectory>> {
    loop {
        match solve_moments(kernel, law, &opts) {
            Err(Error::TruncationTooSmall { .. }) if opts.radius < 4096 => opts.radius *= 2,
            other => return other,
        }
    }
}

fn doubling_radius(kernel: &WalkKernel, law: &OffspringLaw, variant: &Variant, horizon: f64) -> Result<usize> {
    Ok(choose_truncation(kernel, law, variant, horizon, 8, 4096, 1e-6, Execution::default())?.radius)
}

/// `m(t) e^{b_0 t}` on the output grid.
fn undo_death(traj: &MomentTrajectory, site: &[i64], b0: f64) -> Vec<f64> {
    traj.series(site)
        .unwrap()
        .iter()
        .zip(&traj.times)
        .map(|(v, t)| v * (b0 * t).exp())
        .collect()
}

fn pure_walk_closed_form() -> Result<Check> {
    let k = srw(1);
    let law = OffspringLaw::death_only(0.5)?;
    let traj = solve_moments(&k, &law, &MomentOptions::new(40, 1, 5.0, Variant::local_origin(1)))?;
    let m1 = &traj[0];
    let mut worst: f64 = 0.0;
    for (t, v) in m1.times.iter().zip(m1.series(&[0]).unwrap()) {
        let exact = (-0.5 * t).exp() * (-t).exp() * bessel_i0(*t);
        worst = worst.max((v - exact).abs() / exact);
    }
    check(
        worst < 1e-6,
        format!("max relative error {worst:.2e} over {} times in [0, 5]", m1.times.len()),
    )
}

fn eigenvalue_residual() -> Result<Check> {
    let k = srw(3);
    let beta_c = beta_critical(&k)?;
    let o = [0, 0, 0];
    let mut last = 0.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for factor in [1.5, 2.0, 4.0] {
        let beta = factor * beta_c;
        let (l, _) = lambda0_with(&k, beta, &SpectralOptions::default())?.expect("supercritical");
        let residual = (beta * k.green_with(Execution::default(), l, &o, &o, 1e-11)? - 1.0).abs();
        pass &= residual < 1e-8 && l > last;
        last = l;
        parts.push(format!("{factor}: lambda_0 = {l:.9} residual {residual:.1e}"));
    }
    check(pass, parts.join("; "))
}

fn supercritical_growth() -> Result<Check> {
    let k = srw(1);
    let law = OffspringLaw::binary(1.0, 0.1)?;
    let lambda_e = classify(&k, &law)?.lambda_e.expect("supercritical");
    let radius = doubling_radius(&k, &law, &Variant::Total, 30.0)?;
    let traj = solve_growing(&k, &law, MomentOptions::new(radius, 2, 30.0, Variant::Total))?;
    let mut pass = true;
    let mut parts = vec![format!("L = {}", traj[0].metadata.radius)];
    for (n, t) in traj.iter().enumerate() {
        let target = (n + 1) as f64 * lambda_e;
        let fit = fit_growth(t, &[0], (10.0, 30.0), GrowthModel::default())?;
        let err = (fit.rho - target).abs() / target;
        pass &= err <= 0.02;
        parts.push(format!("rho_{} = {:.5} vs {target:.5} ({:.2}%)", n + 1, fit.rho, 100.0 * err));
    }
    check(pass, parts.join("; "))
}

fn critical_regime() -> Result<Check> {
    let k = srw(1);
    let law = critical_law(&k, &OffspringLaw::binary(1.0, 0.0)?)?;
    let variant = Variant::local_origin(1);
    let radius = doubling_radius(&k, &law, &variant, 100.0)?;
    let traj = solve_growing(&k, &law, MomentOptions::new(radius, 3, 100.0, variant))?;
    let window: Vec<f64> = traj[0]
        .times
        .iter()
        .zip(traj[0].series(&[0]).unwrap())
        .filter(|(t, _)| (30.0..=100.0).contains(*t))
        .map(|(_, v)| v)
        .collect();
    let max = window.iter().cloned().fold(f64::MIN, f64::max);
    let min = window.iter().cloned().fold(f64::MAX, f64::min);
    let variation = (max - min) / min;
    let k2 = fit_growth(&traj[1], &[0], (30.0, 100.0), GrowthModel::default())?.kappa;
    let k3 = fit_growth(&traj[2], &[0], (30.0, 100.0), GrowthModel::default())?.kappa;
    check(
        variation < 0.01 && (0.9..=1.1).contains(&k2) && (1.8..=2.2).contains(&k3),
        format!(
            "L = {}; m_1 variation {variation:.1e}; kappa_2 = {k2:.3}; kappa_3 = {k3:.3}",
            traj[0].metadata.radius
        ),
    )
}

fn subcritical_eigen() -> Result<Check> {
    let k = srw(1);
    let l0 = lambda0(&k, 1.0)?.expect("supercritical branching");
    let law = OffspringLaw::binary(1.0, l0 + 0.2)?;
    let lambda_e = classify(&k, &law)?.lambda_e.expect("eigenvalue exists");
    let variant = Variant::local_origin(1);
    let radius = doubling_radius(&k, &law, &variant, 100.0)?;
    let traj = solve_growing(&k, &law, MomentOptions::new(radius, 2, 100.0, variant))?;
    let rho = fit_growth(&traj[1], &[0], (30.0, 100.0), GrowthModel::default())?.rho;
    let err = (rho - lambda_e).abs() / lambda_e.abs();
    let err_double = (rho - 2.0 * lambda_e).abs() / (2.0 * lambda_e).abs();
    check(
        err <= 0.05 && err_double > 0.05,
        format!(
            "rho_2 = {rho:.5}; {:.2}% from lambda_E = {lambda_e:.5}, {:.0}% from 2 lambda_E",
            100.0 * err,
            100.0 * err_double
        ),
    )
}

fn weak_finite_variance() -> Result<Check> {
    let k = srw(3);
    let b0 = 0.3;
    let law = OffspringLaw::binary(0.5 * beta_critical(&k)?, b0)?;
    let o = [0, 0, 0];
    let local = Variant::local_origin(3);
    let radius = doubling_radius(&k, &law, &local, 60.0)?;
    let l = solve_growing(&k, &law, MomentOptions::new(radius, 1, 60.0, local))?;
    let fit_l = fit_series(&l[0].times, &undo_death(&l[0], &o, b0), (10.0, 60.0), GrowthModel::default())?;
    let t = solve_growing(&k, &law, MomentOptions::new(radius, 1, 60.0, Variant::Total))?;
    let fit_t = fit_series(&t[0].times, &undo_death(&t[0], &o, b0), (10.0, 60.0), GrowthModel::default())?;
    check(
        fit_l.rho.abs() < 1e-3 && (fit_l.kappa + 1.5).abs() <= 0.15 && fit_t.kappa.abs() <= 0.1,
        format!(
            "local (L = {}): rho = {:.1e}, kappa = {:.3}; total (L = {}): kappa = {:.3}",
            l[0].metadata.radius, fit_l.rho, fit_l.kappa, t[0].metadata.radius, fit_t.kappa
        ),
    )
}

fn weak_heavy_tail() -> Result<Check> {
    let k = build_kernel(&KernelSpec::heavy_tail(1, 0.5))?;
    let b0 = 0.3;
    let law = OffspringLaw::binary(0.5 * beta_critical(&k)?, b0)?;
    let variant = Variant::local_origin(1);
    let choice = choose_truncation(&k, &law, &variant, 60.0, 256, 1 << 15, 1e-3, Execution::default())?;
    let mut opts = MomentOptions::new(choice.radius, 1, 60.0, variant);
    opts.leak_tol = 1.0;
    opts.tracked = Some(vec![vec![0]]);
    let traj = solve_moments(&k, &law, &opts)?;
    let fit = fit_series(&traj[0].times, &undo_death(&traj[0], &[0], b0), (10.0, 60.0), GrowthModel::default())?;
    check(
        (fit.kappa + 2.0).abs() <= 0.2,
        format!(
            "L = {} (doubling change {:.1e}); kappa = {:.3}, rho = {:.1e}",
            choice.radius, choice.change, fit.kappa, fit.rho
        ),
    )
}

fn monte_carlo_agreement() -> Result<Check> {
    let k1 = srw(1);
    let k3 = srw(3);
    let l0 = lambda0(&k1, 1.0)?.expect("supercritical branching");
    let fixtures = [
        ("supercritical", &k1, OffspringLaw::binary(1.0, 0.1)?),
        ("critical", &k1, OffspringLaw::binary(1.0, l0)?),
        ("subcritical eigen", &k1, OffspringLaw::binary(1.0, l0 + 0.2)?),
        ("weak d=3", &k3, OffspringLaw::binary(0.5 * beta_critical(&k3)?, 0.3)?),
    ];
    let times = [1.0, 2.0, 5.0];
    let mut worst: f64 = 0.0;
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, k, law)) in fixtures.iter().enumerate() {
        let d = k.dimension();
        let mut opts = MomentOptions::new(if d == 1 { 32 } else { 12 }, 2, 5.0, Variant::Total);
        opts.extra_times = times.to_vec();
        let ode = solve_growing(k, law, opts)?;
        let origin = vec![0; d];
        let sim = simulate(k, law, &SimulationOptions::new(d, times.to_vec(), 100_000, 100 + i as u64))?;
        let mut local_worst: f64 = 0.0;
        for c in &sim.checkpoints {
            for n in 0..2 {
                let exact = ode[n].value(c.time, &origin).expect("checkpoint on the grid");
                let z = (c.total[n].mean - exact).abs() / c.total[n].std_error;
                local_worst = local_worst.max(z);
            }
        }
        pass &= local_worst <= 3.0 && sim.truncated_replicas == 0;
        worst = worst.max(local_worst);
        parts.push(format!("{name} {local_worst:.2}"));
    }
    check(pass, format!("largest |error| / SE per fixture: {}", parts.join(", ")))
}

fn limit_law() -> Result<Check> {
    let k = srw(1);
    let law = OffspringLaw::binary(1.0, 0.1)?;
    let lambda_e = classify(&k, &law)?.lambda_e.expect("supercritical");
    let mut opts = MomentOptions::new(32, 1, 60.0, Variant::Total);
    opts.extra_times = vec![50.0];
    let ode = solve_growing(&k, &law, opts)?;
    let limit = ode[0].value(60.0, &[0]).unwrap() * (-lambda_e * 60.0).exp();
    let earlier = ode[0].value(50.0, &[0]).unwrap() * (-lambda_e * 50.0).exp();
    let sim_opts = SimulationOptions::new(1, vec![10.0, 15.0], 20_000, 2024);
    let sample = sample_limit_law(&k, &law, &sim_opts, &SpectralOptions::default())?;
    let last = sample.summary[1];
    let mean_ok = last.mean.agrees_with(limit, 3.0);
    let nondegenerate = last.variance > 0.0 && last.mass_at_zero > 0.0 && last.mass_at_zero < 1.0;
    let drift = ratio_difference(
        (&sample.local[0][0], &sample.total[0]),
        (&sample.local[1][0], &sample.total[1]),
    );
    let ratio_ok = drift.mean.abs() <= 3.0 * drift.std_error;
    check(
        mean_ok && nondegenerate && ratio_ok && sample.truncated_replicas == 0,
        format!(
            "mean {:.4} ± {:.4} vs ODE limit {limit:.4} (t=50: {earlier:.4}); variance {:.3}; P(0) = {:.4}; ratio change {:.2e} ± {:.2e}",
            last.mean.mean, last.mean.std_error, last.variance, last.mass_at_zero, drift.mean, drift.std_error
        ),
    )
}

fn smoothed_phi(t: f64) -> f64 {
    if t < 1.0 {
        (-t).exp()
    } else {
        t.powf(-0.5) * (-t).exp()
    }
}

fn smoothed_chi(t: f64) -> f64 {
    if t < 1.0 {
        (-2.0 * t).exp()
    } else {
        (-2.0 * t).exp() / t
    }
}

/// `E_1(1)` from its power series.
fn e1_at_one() -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..40 {
        term *= -1.0 / k as f64;
        sum += term / k as f64;
    }
    -0.577_215_664_901_532_9 - sum
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn convolution_oracle() -> Result<Check> {
    let mut parts = Vec::new();
    let exp_phi = TailedFunction::new(|t: f64| (-t).exp(), Tail::new(-1.0, 0.0, 0.0));
    let exp_chi = TailedFunction::new(|t: f64| (-2.0 * t).exp(), Tail::new(-2.0, 0.0, 0.0));
    let times = [0.5, 1.0, 5.0, 20.0];
    let c = killed_convolve(&exp_phi, &exp_chi, 1.0, &times)?;
    let mut closed: f64 = (c.w0 - 1.0).abs();
    for (t, w) in times.iter().zip(&c.w) {
        let exact = (-t).exp() - (-2.0 * t).exp();
        closed = closed.max((w - exact).abs() / exact);
    }
    let first = closed < 1e-9;
    parts.push(format!("exponential pair error {closed:.1e}"));

    let phi = TailedFunction::new(smoothed_phi, Tail::new(-1.0, -0.5, 0.0));
    let chi = TailedFunction::new(smoothed_chi, Tail::new(-2.0, -1.0, 0.0));
    let c = killed_convolve(&phi, &chi, 1.0, &[50.0])?;
    let w0_exact = 1.0 - (-1.0f64).exp() + e1_at_one();
    let direct = simpson(|s| smoothed_phi(50.0 - s) * smoothed_chi(s), 0.0, 1.0, 20_000)
        + simpson(|s| smoothed_phi(50.0 - s) * smoothed_chi(s), 1.0, 49.0, 400_000)
        + simpson(|s| smoothed_phi(50.0 - s) * smoothed_chi(s), 49.0, 50.0, 20_000);
    let w_err = (c.w[0] - direct).abs() / direct;
    let ratio_err = (c.ratio[0] / c.w0 - 1.0).abs();
    let second = (c.w0 - w0_exact).abs() < 1e-9 && w_err < 1e-6 && ratio_err < 0.01;
    parts.push(format!(
        "W0 = {:.12} vs {w0_exact:.12}, W(50) error {w_err:.1e}, ratio off by {:.2}%",
        c.w0,
        100.0 * ratio_err
    ));

    let slow = TailedFunction::new(|t: f64| (1.0 + t).powf(-0.5) * (-t).exp(), Tail::new(-1.0, -0.5, 0.0));
    let third = matches!(killed_convolve(&phi, &slow, 1.0, &[10.0]), Err(Error::TailUnbounded(_)));
    parts.push(format!("slow tail rejected: {third}"));

    let base = killed_convolve(&phi, &chi, 1.0, &[])?.w0;
    let mut worst_ulps: f64 = 0.0;
    for scale in [1e-3, 0.37, 2.0, 7.5, 1e4] {
        let scaled = TailedFunction::new(move |t| scale * smoothed_chi(t), Tail::new(-2.0, -1.0, 0.0));
        let w = killed_convolve(&phi, &scaled, 1.0, &[])?.w0;
        worst_ulps = worst_ulps.max((w - scale * base).abs() / (f64::EPSILON * scale * base));
    }
    let fourth = worst_ulps <= 4.0;
    parts.push(format!("scaling error {worst_ulps:.1} eps"));
    check(first && second && third && fourth, parts.join("; "))
}

/// `P(Poisson(mean) >= n)` by direct summation of the upper tail.
fn poisson_tail(mean: f64, n: usize) -> f64 {
    let mut term = (-mean).exp();
    for k in 1..=n {
        term *= mean / k as f64;
    }
    let mut sum = 0.0;
    let mut k = n;
    while term > 1e-300 && k < n + 1000 {
        sum += term;
        k += 1;
        term *= mean / k as f64;
    }
    sum
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `g_n` by summing over ordered compositions of `n`.
fn g_by_compositions(law: &OffspringLaw, n: usize, m: &[f64]) -> f64 {
    fn walk(n: usize, r: usize, acc: f64, m: &[f64], out: &mut f64) {
        if r == 0 {
            if n == 0 {
                *out += acc;
            }
            return;
        }
        for i in 1..=(n + 1).saturating_sub(r) {
            walk(n - i, r - 1, acc * m[i - 1] / factorial(i), m, out);
        }
    }
    (2..=n)
        .map(|r| {
            let mut inner = 0.0;
            walk(n, r, factorial(n), m, &mut inner);
            law.factorial_moment(r) / factorial(r) * inner
        })
        .sum()
}

fn invariant_suites() -> Result<Check> {
    let mut failures = Vec::new();
    let k1 = srw(1);

    let mut ck: f64 = 0.0;
    for (s, t) in [(0.5, 1.0), (2.0, 2.0), (1.0, 0.25), (2.0, 0.5)] {
        let z = (1..).find(|&z| poisson_tail(s, z) < 1e-9).unwrap() as i64;
        for y in [0i64, 1, 3] {
            let lhs = k1.transition_probability(s + t, &[0], &[y])?;
            let mut rhs = 0.0;
            for x in -z..=z {
                rhs += k1.transition_probability(s, &[0], &[x])? * k1.transition_probability(t, &[x], &[y])?;
            }
            ck = ck.max((lhs - rhs).abs());
        }
    }
    if ck >= 1e-6 {
        failures.push(format!("Chapman-Kolmogorov {ck:.1e}"));
    }

    let k3 = srw(3);
    let heavy = build_kernel(&KernelSpec::heavy_tail(1, 0.5))?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut green_ok = true;
    for _ in 0..6 {
        let x: Vec<i64> = (0..3).map(|_| rng.random_range(-3..=3)).collect();
        let lambda = rng.random_range(0.01..2.0);
        let a = k3.green(lambda, &x, &[0, 1, 0])?;
        let b = k3.green(lambda, &[0, 1, 0], &x)?;
        green_ok &= (a - b).abs() <= 1e-12 * a;
        let h = rng.random_range(-20i64..=20);
        let a = heavy.green(lambda, &[h], &[2])?;
        let b = heavy.green(lambda, &[2], &[h])?;
        green_ok &= (a - b).abs() <= 1e-12 * a;
    }
    for k in [&k3, &heavy] {
        let o = vec![0; k.dimension()];
        let values: Vec<f64> = [0.0, 0.05, 0.3, 1.0, 4.0]
            .iter()
            .map(|&l| k.green(l, &o, &o))
            .collect::<Result<_>>()?;
        green_ok &= values.windows(2).all(|w| w[1] < w[0]);
    }
    if !green_ok {
        failures.push("Green symmetry/monotonicity".into());
    }

    let mut g_err: f64 = 0.0;
    for _ in 0..20 {
        let mut branching = Vec::new();
        for n in 2..=6 {
            if rng.random_bool(0.7) {
                branching.push((n, rng.random_range(0.0..1.0)));
            }
        }
        let law = OffspringLaw::new(rng.random_range(0.0..1.0), &branching)?;
        for n in 2..=6 {
            let m: Vec<f64> = (1..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let exact = g_by_compositions(&law, n, &m);
            let got = law.g(n, &m)?;
            g_err = g_err.max((got - exact).abs() / exact.abs().max(1e-300));
        }
    }
    if g_err > 1e-12 {
        failures.push(format!("g_n brute force {g_err:.1e}"));
    }

    let k2 = srw(2);
    let law = OffspringLaw::new(0.4, &[(2, 0.8), (3, 0.3)])?;
    let mut jensen = true;
    for variant in [Variant::local_origin(2), Variant::Total] {
        let mut opts = MomentOptions::new(12, 2, 4.0, variant);
        opts.leak_tol = 1.0;
        let traj = solve_moments(&k2, &law, &opts)?;
        for (r1, r2) in traj[0].values.iter().zip(&traj[1].values) {
            jensen &= r1.iter().zip(r2).all(|(m1, m2)| *m2 >= m1 * m1 * (1.0 - 1e-9));
        }
    }
    if !jensen {
        failures.push("Jensen".into());
    }

    let (a, b) = (vec![0, 0], vec![2, -1]);
    let run = |variant: Variant| -> Result<Vec<f64>> {
        let mut opts = MomentOptions::new(10, 1, 3.0, variant);
        opts.leak_tol = 1.0;
        Ok(solve_moments(&k2, &law, &opts)?.remove(0).final_values)
    };
    let sum = run(Variant::Set { sites: vec![a.clone(), b.clone()] })?;
    let one = run(Variant::Local { site: a })?;
    let two = run(Variant::Local { site: b })?;
    let scale = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let linear = (0..sum.len()).map(|i| (sum[i] - one[i] - two[i]).abs()).fold(0.0, f64::max) / scale;
    if linear > 1e-7 {
        failures.push(format!("superposition {linear:.1e}"));
    }

    let law = OffspringLaw::new(0.2, &[(2, 0.6), (3, 0.3)])?;
    let sim = Simulator::new(&heavy, &law)?;
    let mut opts = SimulationOptions::new(1, vec![1.0, 3.0], 400, 42);
    opts.tracked = vec![vec![0], vec![1], vec![-7]];
    opts.execution = Execution::Sequential;
    let seq = sim.run(&opts);
    opts.execution = Execution::Parallel;
    let par = sim.run(&opts);
    let single = sim.replica(&opts, 123);
    opts.seed = 43;
    let other = sim.run(&opts);
    if seq != par || single != seq[123] || other == seq {
        failures.push("simulation determinism".into());
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("Chapman-Kolmogorov {ck:.1e}, g_n {g_err:.1e}, superposition {linear:.1e}; symmetry, Jensen and determinism hold")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

type Criterion = (usize, &'static str, u64, fn() -> Result<Check>);

const CRITERIA: [Criterion; 11] = [
    (1, "pure-walk closed form", 5, pure_walk_closed_form),
    (2, "eigenvalue residual", 30, eigenvalue_residual),
    (3, "supercritical growth", 120, supercritical_growth),
    (4, "critical regime", 300, critical_regime),
    (5, "subcritical with eigenvalue", 120, subcritical_eigen),
    (6, "weak subcritical, finite variance", 300, weak_finite_variance),
    (7, "weak subcritical, heavy tail", 600, weak_heavy_tail),
    (8, "Monte Carlo vs ODE", 600, monte_carlo_agreement),
    (9, "limit law", 900, limit_law),
    (10, "convolution oracle", 60, convolution_oracle),
    (11, "invariant suites", 300, invariant_suites),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, run) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok(c) => (c.pass && in_time, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {detail} [{:.1} s of {budget} s{}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
