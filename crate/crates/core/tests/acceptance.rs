//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The fast tier runs under a plain `cargo test`. The slow tier (long
//! bifurcation ladders, Lyapunov maps and cross-correlation ensembles) runs
//! with `KSERIES_SLOW=1` in the environment or `-- --slow` on the command
//! line. Any failing criterion makes the process exit nonzero.

use std::time::Instant;

use kernel_series::analysis::{
    cross_correlation, distance_scaling, fit_slope, refine_bifurcation, scan, BifurcationKind, CrossCorrelationSettings,
    Multiplicity, Solver, SystemFamily,
};
use kernel_series::integrate::{integrate_chain_sampled, integrate_dde_sampled, integrate_ode, ChainIntegrator, Sampling};
use kernel_series::kernels::GammaKernel;
use kernel_series::stability::{
    chain_poly, chain_spectrum, dde_characteristic, hopf_analytic, hopf_chain, hopf_perturbation,
    perturbation_coefficient, relative_deviation,
};
use kernel_series::systems::{
    build_chain, init_chain_state, mackey_glass_fixpoints, DelaySystem, InitialHistory, MackeyGlassParams,
};
use num_complex::Complex64;
use statrs::distribution::{Continuous, Gamma};

const A: f64 = 0.4;
const B: f64 = 0.1;

type Outcome = Result<(bool, String), String>;

struct Suite {
    slow: bool,
    failures: Vec<String>,
    passes: usize,
    skips: usize,
}

impl Suite {
    fn run(&mut self, id: &str, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{} [{id}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passes += 1;
        } else {
            self.failures.push(format!("[{id}] {name}"));
        }
    }

    fn run_slow(&mut self, id: &str, name: &str, f: impl FnOnce() -> Outcome) {
        if self.slow {
            self.run(id, name, f);
        } else {
            println!("SKIP [{id}] {name}: slow tier (set KSERIES_SLOW=1)");
            self.skips += 1;
        }
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn mg(solver: Solver) -> SystemFamily {
    SystemFamily::mackey_glass(MackeyGlassParams::default(), solver).unwrap()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn criterion_1() -> Outcome {
    let t = hopf_analytic(A, B).map_err(e)?.delay;
    Ok((within(t, 4.708, 0.001), format!("T_Hopf = {t:.6}, target 4.708 +- 0.001")))
}

fn criterion_2() -> Outcome {
    let k1 = perturbation_coefficient(A, B).map_err(e)?;
    let base = hopf_analytic(A, B).map_err(e)?.delay;
    // the estimate must be exactly base + k1 / N
    let consistent = [10usize, 100, 1000]
        .iter()
        .all(|&n| hopf_perturbation(A, B, n).is_ok_and(|h| within(h.delay, base + k1 / n as f64, 1e-12)));
    Ok((
        within(k1, 9.458, 0.001) && consistent,
        format!("k1 = {k1:.6}, target 9.458 +- 0.001; T(N) = {base:.4} + k1/N: {consistent}"),
    ))
}

fn first_order_below(threshold: f64, range: std::ops::RangeInclusive<usize>) -> Result<Option<usize>, String> {
    let reference = hopf_analytic(A, B).map_err(e)?.delay;
    for n in range {
        let t = hopf_chain(A, B, n).map_err(e)?.delay;
        if relative_deviation(reference, t).map_err(e)? <= threshold {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

fn criterion_3() -> Outcome {
    let reference = hopf_analytic(A, B).map_err(e)?.delay;
    let orders = [30usize, 50, 100, 225, 500, 1000, 3000];
    let mut pts = Vec::new();
    for &n in &orders {
        let t = hopf_chain(A, B, n).map_err(e)?.delay;
        pts.push(((n as f64).ln(), relative_deviation(reference, t).map_err(e)?.ln()));
    }
    let slope = fit_slope(&pts);
    let mu = |n: usize| -> Result<f64, String> {
        relative_deviation(reference, hopf_chain(A, B, n).map_err(e)?.delay).map_err(e)
    };
    // "by N = n0 +- tol": the threshold is met once N reaches n0 + tol
    let mu5 = mu(39 + 5)?;
    let mu1 = mu(225 + 20)?;
    let first5 = first_order_below(0.05, 20..=80)?;
    let first1 = first_order_below(0.01, 150..=300)?;
    Ok((
        within(slope, -1.0, 0.1) && mu5 <= 0.05 && mu1 <= 0.01,
        format!(
            "slope {slope:.4} (-1 +- 0.1); mu(44) = {mu5:.4} <= 0.05; mu(245) = {mu1:.5} <= 0.01; \
             first N with mu <= 5%: {first5:?}, with mu <= 1%: {first1:?}"
        ),
    ))
}

fn criterion_4() -> Outcome {
    Ok(match hopf_chain(A, B, 1) {
        Err(kernel_series::Error::NoHopf { .. }) => (true, "no crossing for T in (0, 50]".into()),
        Ok(h) => (false, format!("unexpected crossing at T = {}", h.delay)),
        Err(err) => return Err(e(err)),
    })
}

fn criterion_5() -> Outcome {
    let p = MackeyGlassParams::default();
    let formula = (p.alpha / p.beta - 1.0).powf(1.0 / p.gamma);
    let x_star = mackey_glass_fixpoints(&p).1.unwrap_or(f64::NAN);
    let history = InitialHistory::Constant(1.0);
    let sys = DelaySystem::mackey_glass(p, 17.5).map_err(e)?;

    let chain = build_chain(&sys, 500).map_err(e)?;
    let y0 = init_chain_state(&chain, &history).map_err(e)?;
    let traj = integrate_chain_sampled(&chain, &y0, 100.0, 0.01, &Sampling::default()).map_err(e)?;
    let chain_dev = (0..traj.len())
        .flat_map(|i| traj.row(i).to_vec())
        .fold(0.0f64, |m, v| m.max((v - 1.0).abs()));

    let traj = integrate_dde_sampled(&sys, &history, 100.0, 0.01, &Sampling::default()).map_err(e)?;
    let dde_dev = traj.column(0).iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    Ok((
        formula == 1.0 && x_star == 1.0 && chain_dev <= 1e-9 && dde_dev <= 1e-9,
        format!("x* = {formula}; max drift over 100 time units: N=500 {chain_dev:.1e}, direct {dde_dev:.1e} (<= 1e-9)"),
    ))
}

/// Narrow bracket used where the comparison is finer than the default width.
const FINE: f64 = 1e-3;

fn dde_ladder(width: f64) -> Result<(f64, f64), String> {
    let dde = mg(Solver::Dde);
    let pd1 = refine_bifurcation(&dde, BifurcationKind::PeriodDoubling1, 12.5, 14.5, width).map_err(e)?;
    let pd2 = refine_bifurcation(&dde, BifurcationKind::PeriodDoubling2, 15.0, 16.5, width).map_err(e)?;
    Ok((pd1.delay, pd2.delay))
}

fn criterion_6() -> Outcome {
    let (pd1, pd2) = dde_ladder(0.01)?;
    let dde = mg(Solver::Dde);
    let chaos = refine_bifurcation(&dde, BifurcationKind::ChaosOnset, 16.0, 17.0, 0.01).map_err(e)?.delay;
    Ok((
        within(pd1, 13.39, 0.1) && within(pd2, 15.95, 0.1) && within(chaos, 16.5, 0.2),
        format!("PD1 = {pd1:.4} (13.39 +- 0.1), PD2 = {pd2:.4} (15.95 +- 0.1), chaos onset = {chaos:.4} (16.5 +- 0.2)"),
    ))
}

fn chain_threshold(kind: BifurcationKind, order: usize, bracket: (f64, f64), reference: f64, bound: f64) -> Outcome {
    let fam = mg(Solver::Chain(order));
    let t = refine_bifurcation(&fam, kind, bracket.0, bracket.1, FINE).map_err(e)?.delay;
    let mu = relative_deviation(reference, t).map_err(e)?;
    Ok((
        mu < bound,
        format!("N = {order}: T = {t:.4} vs direct {reference:.4}, mu = {mu:.5} (< {bound})"),
    ))
}

fn criterion_8() -> Outcome {
    let cases = [
        (Solver::Chain(300), 16.3, Multiplicity::Periodic(2)),
        (Solver::Chain(500), 16.3, Multiplicity::Periodic(4)),
        (Solver::Chain(500), 14.0, Multiplicity::Periodic(2)),
        (Solver::Dde, 14.0, Multiplicity::Periodic(2)),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (solver, t, want) in cases {
        let got = mg(solver).multiplicity(t).map_err(e)?;
        pass &= got == want;
        detail.push(format!("N={solver} T={t}: {got} (want {want})"));
    }
    Ok((pass, detail.join("; ")))
}

fn criterion_9() -> Outcome {
    let dde = mg(Solver::Dde).lyapunov(17.5).map_err(e)?;
    let n500 = mg(Solver::Chain(500));
    let l500 = n500.lyapunov(17.5).map_err(e)?;
    let onset = refine_bifurcation(&n500, BifurcationKind::ChaosOnset, 16.4, 17.2, 0.01).map_err(e)?.delay;
    let n100 = mg(Solver::Chain(100)).lyapunov(17.5).map_err(e)?;
    // a neutral exponent is estimated as zero plus noise: require it not to
    // be significantly positive
    let n100_ok = n100.lambda <= 2.0 * n100.std_error;
    Ok((
        dde.lambda > 0.0 && l500.lambda > 0.0 && within(onset, 16.8, 0.2) && n100_ok,
        format!(
            "direct {:.5} +- {:.5} (> 0); N=500 {:.5} +- {:.5} (> 0), onset {onset:.4} (16.8 +- 0.2); \
             N=100 {:.6} +- {:.6} (not significantly > 0)",
            dde.lambda, dde.std_error, l500.lambda, l500.std_error, n100.lambda, n100.std_error
        ),
    ))
}

fn criterion_10() -> Outcome {
    let settings = CrossCorrelationSettings {
        delta: 1e-6,
        pairs: 100,
        ..Default::default()
    };
    let below = |solver| -> Result<Option<f64>, String> {
        Ok(cross_correlation(&mg(solver), 17.5, &settings).map_err(e)?.time_below(0.1))
    };
    let dde = below(Solver::Dde)?;
    let n500 = below(Solver::Chain(500))?;
    let n300 = below(Solver::Chain(300))?;
    let slower = match (n500, n300) {
        (Some(a), Some(b)) => b > a,
        (Some(_), None) => true,
        _ => false,
    };
    let show = |t: Option<f64>| t.map_or(format!("> {}", settings.horizon), |t| format!("{t}"));
    Ok((
        dde.is_some() && n500.is_some() && slower,
        format!(
            "time to C12 < 0.1: direct {}, N=500 {}, N=300 {}",
            show(dde),
            show(n500),
            show(n300)
        ),
    ))
}

fn kernel_moments() -> Outcome {
    let mut worst = 0.0f64;
    for &(m, n, t) in &[(1usize, 1usize, 2.0), (3, 10, 10.0), (50, 100, 10.0), (500, 500, 17.5)] {
        let k = GammaKernel::new(m, n, t).map_err(e)?;
        let oracle = Gamma::new(m as f64, n as f64 / t).map_err(e)?;
        let h = 1e-3 * t / (n as f64).sqrt();
        let end = k.truncation_horizon();
        let steps = (end / h).ceil() as usize;
        let (mut mass, mut mean, mut second) = (0.0, 0.0, 0.0);
        for i in 0..=steps {
            let tau = i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 } * h;
            let d = k.density(tau).map_err(e)?;
            worst = worst.max((d - oracle.pdf(tau)).abs() / oracle.pdf(k.mode()).max(1e-300));
            mass += w * d;
            mean += w * d * tau;
            second += w * d * tau * tau;
        }
        let var = second - mean * mean;
        let (km, kv) = k.moments();
        let tn = t / n as f64;
        worst = worst
            .max((mass - 1.0).abs())
            .max((mean - m as f64 * tn).abs() / (m as f64 * tn))
            .max((var - m as f64 * tn * tn).abs() / (m as f64 * tn * tn))
            .max((km - m as f64 * tn).abs() / km)
            .max((kv - m as f64 * tn * tn).abs() / kv);
    }
    Ok((worst <= 1e-6, format!("worst relative error {worst:.2e} (<= 1e-6)")))
}

fn chain_vs_quadrature() -> Outcome {
    let (n, t) = (100usize, 10.0);
    let sys = DelaySystem::mackey_glass(MackeyGlassParams::default(), t).map_err(e)?;
    let chain = build_chain(&sys, n).map_err(e)?;
    let y0 = init_chain_state(&chain, &InitialHistory::Constant(0.9)).map_err(e)?;
    let dt = 0.01;
    let traj = integrate_chain_sampled(&chain, &y0, 100.0, dt, &Sampling::components(0.0, 1, vec![0, n])).map_err(e)?;
    let x0 = traj.column(0);
    let xn = traj.column(1);
    let kernel = Gamma::new(n as f64, n as f64 / t).map_err(e)?;
    let mut worst = 0.0f64;
    for at in [3000usize, 5000, 7500, 10_000] {
        // trapezoid over the recorded past; the kernel mass beyond it is nil
        let h: f64 = (0..=at)
            .map(|k| {
                let w = if k == 0 || k == at { 0.5 } else { 1.0 };
                w * dt * x0[at - k] * kernel.pdf(k as f64 * dt)
            })
            .sum();
        worst = worst.max((h - xn[at]).abs());
    }
    Ok((worst <= 1e-4, format!("N=100, T=10: max |x_N - quadrature| = {worst:.2e} (<= 1e-4)")))
}

fn dissipativity() -> Outcome {
    let p = MackeyGlassParams::default();
    let (n, t) = (500usize, 17.5);
    let sys = DelaySystem::mackey_glass(p, t).map_err(e)?;
    let chain = build_chain(&sys, n).map_err(e)?;
    let y0 = init_chain_state(&chain, &InitialHistory::Constant(0.9)).map_err(e)?;
    let mut run = ChainIntegrator::new(&chain, y0, 0.01).map_err(e)?;
    let expected = -p.beta - (n * n) as f64 / t;
    let (mut max_div, mut worst) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..10_000 {
        run.advance(50).map_err(e)?;
        let d = kernel_series::systems::ChainSystem::divergence(&chain, run.time(), run.state());
        max_div = max_div.max(d);
        worst = worst.max((d - expected).abs() / expected.abs());
    }
    Ok((
        max_div < 0.0 && worst < 1e-12,
        format!("10^4 states on the N=500 attractor: max divergence {max_div:.3} < 0, matches -beta - N^2/T"),
    ))
}

fn rk4_order() -> Outcome {
    let sys = DelaySystem::mackey_glass(MackeyGlassParams::default(), 10.0).map_err(e)?;
    let chain = build_chain(&sys, 10).map_err(e)?;
    let y0 = init_chain_state(&chain, &InitialHistory::Constant(0.5)).map_err(e)?;
    let end = |dt: f64| -> Result<f64, String> {
        Ok(integrate_ode(&chain, &y0, 20.0, dt, &Sampling::default()).map_err(e)?.final_state()[0])
    };
    let (a, b, c) = (end(0.2)?, end(0.1)?, end(0.05)?);
    let ratio = (a - b) / (b - c);
    Ok((within(ratio, 16.0, 1.0), format!("step-halving ratio {ratio:.3} (16 +- 1)")))
}

fn poly_converges() -> Outcome {
    let t = 6.0;
    let mut ok = true;
    let mut detail = Vec::new();
    for lambda in [Complex64::new(0.05, 0.4), Complex64::new(-0.2, 1.3)] {
        let target = dde_characteristic(A, B, t, lambda);
        let err = |n: usize| -> Result<f64, String> {
            let scale = (n as f64 * (1.0 + lambda * t / n as f64).ln()).exp();
            Ok((chain_poly(A, B, t, n, lambda).map_err(e)? / scale - target).norm())
        };
        let (e1, e2, far) = (err(1000)?, err(2000)?, err(1_000_000)?);
        let ratio = e1 / e2;
        // still on the 1/N line a thousandfold further out
        let far_ratio = e1 / far / 1000.0;
        ok &= within(ratio, 2.0, 0.05) && within(far_ratio, 1.0, 0.05);
        detail.push(format!(
            "lambda {lambda}: error ratio N=1000/2000 {ratio:.3}, N=1000/1e6 {:.1}",
            1000.0 * far_ratio
        ));
    }
    Ok((ok, format!("{} (1/N convergence)", detail.join("; "))))
}

fn poly_vs_eigen() -> Outcome {
    let mut worst = 0.0f64;
    for n in [2usize, 5, 10, 25, 50] {
        for t in [3.0, 4.708, 8.0] {
            let mut eig = chain_spectrum(A, B, t, n).map_err(e)?;
            eig.sort_by(|x, y| y.re.total_cmp(&x.re));
            let tn = t / n as f64;
            for &z0 in eig.iter().take(4) {
                // Newton on the polynomial, started from the eigenvalue
                let mut z = z0;
                for _ in 0..50 {
                    let base = 1.0 + tn * z;
                    let p = (B + z) * base.powu(n as u32) + A;
                    let dp = base.powu(n as u32) + (B + z) * n as f64 * tn * base.powu(n as u32 - 1);
                    z -= p / dp;
                }
                worst = worst.max((z - z0).norm());
            }
        }
    }
    Ok((worst <= 1e-8, format!("max |eigenvalue - polynomial root| = {worst:.1e} (<= 1e-8)")))
}

fn limit_cycle_scaling() -> Outcome {
    let settings = CrossCorrelationSettings {
        pairs: 10,
        horizon: 2000.0,
        reference_time: 5000.0,
        ..Default::default()
    };
    let slope = distance_scaling(&mg(Solver::Dde), 14.0, &[1e-6, 1e-5, 1e-4], &settings).map_err(e)?;
    Ok((
        within(slope, 1.0, 0.15),
        format!("T=14: log-log slope of D12 against delta = {slope:.3} (1 +- 0.15)"),
    ))
}

fn determinism() -> Outcome {
    let fam = mg(Solver::Chain(20));
    let settings = |workers| CrossCorrelationSettings {
        pairs: 8,
        horizon: 300.0,
        reference_time: 2000.0,
        workers,
        ..Default::default()
    };
    let a = cross_correlation(&fam, 17.5, &settings(Some(1))).map_err(e)?;
    let b = cross_correlation(&fam, 17.5, &settings(Some(4))).map_err(e)?;
    let c = cross_correlation(&fam, 17.5, &settings(Some(4))).map_err(e)?;
    let delays = [13.0, 14.0, 15.0, 16.0];
    let fam = mg(Solver::Dde);
    let s1 = scan(&fam, &delays, false, true, Some(1)).map_err(e)?;
    let s4 = scan(&fam, &delays, false, true, Some(4)).map_err(e)?;
    let ok = a == b && b == c && s1 == s4;
    Ok((ok, "cross-correlation and scan bit-identical across 1 and 4 workers and repeats".into()))
}

fn main() {
    let slow = std::env::var("KSERIES_SLOW").is_ok_and(|v| v != "0")
        || std::env::args().any(|a| a == "--slow" || a == "--ignored" || a == "--include-ignored");
    let mut s = Suite {
        slow,
        failures: Vec::new(),
        passes: 0,
        skips: 0,
    };
    println!("acceptance suite ({} tier)", if slow { "fast + slow" } else { "fast" });

    s.run("1", "analytic Hopf point", criterion_1);
    s.run("2", "perturbation coefficient", criterion_2);
    s.run("3", "1/N law of the Hopf point", criterion_3);
    s.run("4", "single link has no Hopf crossing", criterion_4);
    s.run("5", "Mackey-Glass fixpoint stationarity", criterion_5);
    s.run_slow("6", "direct-solver bifurcation ladder", criterion_6);

    let refs = dde_ladder(FINE);
    let with_refs = |f: &dyn Fn(f64, f64) -> Outcome| match &refs {
        Ok((pd1, pd2)) => f(*pd1, *pd2),
        Err(err) => Err(format!("direct-solver reference: {err}")),
    };
    s.run("7a", "PD1 within 5% at N = 160", || {
        with_refs(&|pd1, _| chain_threshold(BifurcationKind::PeriodDoubling1, 160, (13.2, 14.6), pd1, 0.05))
    });
    s.run("7b", "PD2 within 5% at N = 220", || {
        with_refs(&|_, pd2| chain_threshold(BifurcationKind::PeriodDoubling2, 220, (15.6, 17.0), pd2, 0.05))
    });
    s.run_slow("7c", "PD1 within 1% at N = 720", || {
        with_refs(&|pd1, _| chain_threshold(BifurcationKind::PeriodDoubling1, 720, (13.1, 13.7), pd1, 0.01))
    });
    s.run_slow("7d", "PD2 within 1% at N = 1030", || {
        with_refs(&|_, pd2| chain_threshold(BifurcationKind::PeriodDoubling2, 1030, (15.7, 16.3), pd2, 0.01))
    });

    s.run("8", "period multiplicities of the stroboscopic panels", criterion_8);
    s.run_slow("9", "Lyapunov chaos map", criterion_9);
    s.run_slow("10", "cross-correlation decay ordering", criterion_10);

    s.run("11a", "kernel normalization and moments", kernel_moments);
    s.run("11b", "chain against quadrature", chain_vs_quadrature);
    s.run("11c", "dissipativity", dissipativity);
    s.run("11d", "RK4 order", rk4_order);
    s.run("11e", "characteristic polynomial limit", poly_converges);
    s.run("11f", "polynomial against eigensolve", poly_vs_eigen);
    s.run("11g", "limit-cycle distance scaling", limit_cycle_scaling);
    s.run("11h", "determinism", determinism);

    println!(
        "acceptance: {} passed, {} failed, {} skipped",
        s.passes,
        s.failures.len(),
        s.skips
    );
    if !s.failures.is_empty() {
        println!("failed: {}", s.failures.join(", "));
        std::process::exit(1);
    }
}
