//! Subcommand implementations.

use std::path::PathBuf;

use kernel_series::analysis::{
    classify_with, cross_correlation, refine_bifurcation, scan as scan_delays, stroboscopic, BifurcationKind,
    CrossCorrelationSettings, Multiplicity, RunSettings, ScanRow, Solver, SystemFamily, DEFAULT_HISTORY,
    LYAPUNOV_TOLERANCE,
};
use kernel_series::config::SystemSpec;
use kernel_series::integrate::{integrate_chain_sampled, integrate_dde_sampled, Sampling, Trajectory};
use kernel_series::stability::{hopf_analytic, hopf_table};
use kernel_series::systems::{init_chain_state, InitialHistory, DEFAULT_STEP};
use kernel_series::Error;
use serde_json::json;

pub use crate::options::Failure;
use crate::options::Invocation;
use crate::output::{config_json, header, json_path, num, opt, write_json, Table};

/// Prints the header instead of running when `--print-config` was given.
fn finish_config(inv: &Invocation) -> Result<bool, Failure> {
    inv.finish()?;
    if inv.print_config {
        print!("{}", header(inv));
        return Ok(true);
    }
    Ok(false)
}

fn system_spec(inv: &mut Invocation) -> Result<SystemSpec, Failure> {
    let spec = SystemSpec::from_map(&mut inv.map)?;
    for (k, v) in spec.to_pairs() {
        inv.record(&k, v);
    }
    Ok(spec)
}

/// A single-delay family with run settings taken from the configuration.
fn family(inv: &mut Invocation, spec: &SystemSpec) -> Result<SystemFamily, Failure> {
    if !spec.is_single_delay() {
        return Err(Failure::Config(format!("'{}' needs a single-delay system", inv.command)));
    }
    let solver = match &spec.orders {
        None => Solver::Dde,
        Some(o) => Solver::Chain(o[0]),
    };
    let history = inv.value("history", DEFAULT_HISTORY)?;
    let d = RunSettings::default();
    let settings = RunSettings {
        dt: inv.value("dt", d.dt)?,
        transient_delays: inv.value("transient_delays", d.transient_delays)?,
        window_delays: inv.value("window_delays", d.window_delays)?,
        averaging_time: inv.value("averaging_time", d.averaging_time)?,
        renorm_interval: inv.value("renorm_interval", d.renorm_interval)?,
    };
    Ok(SystemFamily::new(spec.model.model(), solver)?
        .with_history(InitialHistory::Constant(history))
        .with_settings(settings))
}

/// `(t, x0[, xN...])` for one run.
pub fn simulate(mut inv: Invocation) -> Result<(), Failure> {
    let spec = system_spec(&mut inv)?;
    let history = InitialHistory::Constant(inv.value("history", DEFAULT_HISTORY)?);
    let chain = spec.chain()?;
    let default_dt = chain.as_ref().map_or(DEFAULT_STEP, |c| DEFAULT_STEP.min(c.step_hint()));
    let dt = inv.value("dt", default_dt)?;
    let t_end = inv.value("t_end", 1000.0)?;
    let transient = inv.value("transient", 0.0)?;
    let stride = inv.value("stride", 1usize)?;
    if finish_config(&inv)? {
        return Ok(());
    }
    let traj = match &chain {
        Some(c) => {
            let mut comps = vec![0];
            comps.extend((0..c.orders().len()).map(|j| c.terminal_index(j)));
            let y0 = init_chain_state(c, &history)?;
            integrate_chain_sampled(c, &y0, t_end, dt, &Sampling::components(transient, stride, comps))?
        }
        None => {
            let sampling = Sampling::components(transient, stride, vec![0]);
            integrate_dde_sampled(&spec.delay_system()?, &history, t_end, dt, &sampling)?
        }
    };
    write_trajectory(&inv, &traj)
}

fn write_trajectory(inv: &Invocation, traj: &Trajectory) -> Result<(), Failure> {
    let mut cols = vec!["t"];
    cols.extend(traj.names().iter().map(String::as_str));
    let mut table = Table::create(inv, &cols)?;
    for i in 0..traj.len() {
        let mut row = vec![num(traj.time(i))];
        row.extend(traj.row(i).iter().map(|&v| num(v)));
        table.row(&row)?;
    }
    table.finish()
}

const DEFAULT_HOPF_ORDERS: &str = "1, 2, 3, 30, 39, 50, 100, 225, 500, 1000, 3000";

/// `(N, T_hopf, mu, T_perturbation, mu_perturbation)` for a list of orders.
pub fn hopf(mut inv: Invocation) -> Result<(), Failure> {
    let a = inv.value("a", 0.4)?;
    let b = inv.value("b", 0.1)?;
    if !inv.map.contains("N") {
        inv.map.set("N", DEFAULT_HOPF_ORDERS);
    }
    let orders: Vec<usize> = inv.map.take_list("N")?.unwrap_or_default();
    if orders.contains(&0) {
        return Err(Error::InvalidOrder(0).into());
    }
    let listed: Vec<String> = orders.iter().map(usize::to_string).collect();
    inv.record("N", listed.join(", "));
    if finish_config(&inv)? {
        return Ok(());
    }
    let reference = hopf_analytic(a, b)?.delay;
    let rows = hopf_table(a, b, &orders)?;
    let mut table = Table::create(&inv, &["N", "T_hopf", "mu", "T_perturbation", "mu_perturbation"])?;
    table.row(&["inf".into(), num(reference), num(0.0), num(reference), num(0.0)])?;
    for r in rows {
        let mu_pert = (r.perturbation - reference) / reference;
        let (t, mu) = match r.chain {
            Some(h) => (num(h.delay), opt(r.deviation)),
            None => ("no-hopf".into(), "no-hopf".into()),
        };
        table.row(&[r.order.to_string(), t, mu, num(r.perturbation), num(mu_pert)])?;
    }
    table.finish()
}

fn multiplicity_cell(m: Option<Multiplicity>) -> String {
    m.map(|m| m.to_string()).unwrap_or_else(|| "stationary".into())
}

/// Bracket for `kind` from the first grid transition of its diagnostic, or
/// the full range when that diagnostic was not scanned.
fn grid_bracket(kind: BifurcationKind, rows: &[ScanRow], range: (f64, f64)) -> Option<(f64, f64)> {
    // rows without a multiplicity settled onto a fixpoint
    let past = |r: &ScanRow| -> bool {
        match kind {
            BifurcationKind::PeriodDoubling1 => r.multiplicity.is_some_and(|m| m.level() >= 2),
            BifurcationKind::PeriodDoubling2 => r.multiplicity.is_some_and(|m| m.level() >= 4),
            _ => r.lambda_max.is_some_and(|l| l > LYAPUNOV_TOLERANCE),
        }
    };
    let scanned = match kind {
        BifurcationKind::Hopf => false,
        BifurcationKind::ChaosOnset => rows.iter().any(|r| r.lambda_max.is_some()),
        _ => rows.iter().any(|r| r.multiplicity.is_some()),
    };
    if !scanned {
        return Some(range);
    }
    rows.windows(2)
        .find(|w| !past(&w[0]) && past(&w[1]))
        .map(|w| (w[0].delay, w[1].delay))
}

/// Grid scan of `(T, lambda_max, multiplicity)` plus refined bifurcations.
pub fn scan(mut inv: Invocation, json: Option<PathBuf>) -> Result<(), Failure> {
    if inv.map.contains("T") {
        return Err(Failure::Config("scan takes t_min, t_max and t_step instead of T".into()));
    }
    let t_min = inv.value("t_min", 12.0)?;
    let t_max = inv.value("t_max", 18.0)?;
    let t_step = inv.value("t_step", 0.1)?;
    if !(t_min > 0.0 && t_max > t_min && t_step > 0.0) {
        return Err(Failure::Config(format!("bad grid: t_min {t_min}, t_max {t_max}, t_step {t_step}")));
    }
    inv.map.set("T", num(t_min));
    let spec = system_spec(&mut inv)?;
    inv.resolved.retain(|(k, _)| k != "T");
    let family = family(&mut inv, &spec)?;
    let lyapunov = inv.value("lyapunov", true)?;
    let multiplicity = inv.value("multiplicity", true)?;
    let refine = inv.map.take("refine").unwrap_or_default();
    let kinds = refine
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(BifurcationKind::parse)
        .collect::<Result<Vec<_>, _>>()?;
    let listed: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
    inv.record("refine", listed.join(", "));
    let width = inv.value("bracket_width", 0.01)?;
    if finish_config(&inv)? {
        return Ok(());
    }

    let steps = ((t_max - t_min) / t_step).round() as usize;
    let delays: Vec<f64> = (0..=steps).map(|i| t_min + i as f64 * t_step).collect();
    let rows = scan_delays(&family, &delays, lyapunov, multiplicity, inv.workers)?;
    let mut table = Table::create(&inv, &["T", "lambda_max", "lambda_std_error", "multiplicity"])?;
    for r in &rows {
        let m = if multiplicity { multiplicity_cell(r.multiplicity) } else { String::new() };
        table.row(&[num(r.delay), opt(r.lambda_max), opt(r.lambda_std_error), m])?;
    }
    table.finish()?;

    let mut found = Vec::new();
    let mut failed = Vec::new();
    for kind in kinds {
        let result = match grid_bracket(kind, &rows, (t_min, t_max)) {
            None => Err(Error::BadBracket(format!("no {} transition on the grid", kind.as_str()))),
            Some((lo, hi)) => refine_bifurcation(&family, kind, lo, hi, width),
        };
        match result {
            Ok(p) => found.push(json!({ "kind": kind.as_str(), "point": p })),
            Err(e @ Error::BadBracket(_)) | Err(e @ Error::NoHopf { .. }) => {
                failed.push(kind.as_str());
                found.push(json!({ "kind": kind.as_str(), "error": e.to_string() }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(path) = json_path(json, &inv) {
        write_json(&path, &json!({ "config": config_json(&inv), "bifurcations": found }))?;
    }
    if !failed.is_empty() {
        return Err(Failure::Diagnostic(format!("could not refine: {}", failed.join(", "))));
    }
    Ok(())
}

/// `(t, C12, D12)` averaged over pairs, plus a verdict.
pub fn crosscorr(mut inv: Invocation, json: Option<PathBuf>) -> Result<(), Failure> {
    let spec = system_spec(&mut inv)?;
    let delay = spec.delays[0];
    let family = family(&mut inv, &spec)?;
    let d = CrossCorrelationSettings::default();
    let settings = CrossCorrelationSettings {
        delta: inv.value("delta", d.delta)?,
        pairs: inv.value("pairs", d.pairs)?,
        horizon: inv.value("horizon", d.horizon)?,
        sample_interval: inv.value("sample_interval", d.sample_interval)?,
        reference_time: inv.value("reference_time", d.reference_time)?,
        seed: inv.value("seed", d.seed)?,
        workers: inv.workers,
    };
    let verdict = inv.value("verdict", true)?;
    if finish_config(&inv)? {
        return Ok(());
    }
    let cc = cross_correlation(&family, delay, &settings)?;
    let mut table = Table::create(&inv, &["t", "C12", "D12"])?;
    for ((t, c), d) in cc.times.iter().zip(&cc.c12).zip(&cc.d12) {
        table.row(&[num(*t), num(*c), num(*d)])?;
    }
    table.finish()?;

    if let Some(path) = json_path(json, &inv) {
        let mut out = json!({
            "config": config_json(&inv),
            "mean": cc.mean,
            "variance": cc.variance,
            "seeds": cc.seeds,
            "time_below_0.1": cc.time_below(0.1),
            "c12_tail": cc.c12_tail(),
        });
        if verdict {
            let est = family.lyapunov(delay)?;
            let v = classify_with(&family, delay, &settings, &est, &cc)?;
            out["verdict"] = serde_json::to_value(v).map_err(|e| Failure::Io(e.to_string()))?;
        }
        write_json(&path, &out)?;
    }
    Ok(())
}

/// Stroboscopic point cloud `(t, x0(t), xN(t - T))`.
pub fn project(mut inv: Invocation) -> Result<(), Failure> {
    let spec = system_spec(&mut inv)?;
    let delay = spec.delays[0];
    let family = family(&mut inv, &spec)?;
    let window = inv.value("window", 100.0 * delay)?;
    let stride = inv.value("stride", 10usize)?;
    if finish_config(&inv)? {
        return Ok(());
    }
    let transient = family.settings().transient_delays * delay;
    let dt = family.step(delay)?;
    let t_end = transient + window;
    let traj = match family.chain(delay)? {
        Some(c) => {
            let y0 = init_chain_state(&c, family.history())?;
            let comps = vec![0, c.terminal_index(0)];
            integrate_chain_sampled(&c, &y0, t_end, dt, &Sampling::components(transient, stride, comps))?
        }
        None => {
            let sampling = Sampling::components(transient, stride, vec![0]);
            integrate_dde_sampled(&family.system(delay)?, family.history(), t_end, dt, &sampling)?
        }
    };
    let pairs = stroboscopic(&traj, delay)?;
    let first = traj.len() - pairs.len();
    let mut table = Table::create(&inv, &["t", "x0", "x_lagged"])?;
    for (k, (x, lagged)) in pairs.iter().enumerate() {
        table.row(&[num(traj.time(first + k)), num(*x), num(*lagged)])?;
    }
    table.finish()
}
