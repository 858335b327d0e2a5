//! Diagnostics of the long-term dynamics: period multiplicity of the
//! oscillation, bifurcation points refined by bisection in the delay,
//! stroboscopic projections, and the cross-correlation test for chaos.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{
    integrate_chain_sampled, integrate_dde_sampled, lyapunov_max, lyapunov_max_dde, step_count, ChainIntegrator,
    DdeIntegrator, LyapunovEstimate, LyapunovSettings, Sampling, Trajectory,
};
use crate::stability::{hopf_analytic, hopf_chain};
use crate::systems::{
    build_chain, init_chain_state, linearize_at_fixpoint, ChainSystem, DelayModel, DelaySystem, InitialHistory,
    MackeyGlassParams, DEFAULT_STEP,
};

/// Peak heights closer than this belong to the same cluster.
pub const CLUSTER_TOLERANCE: f64 = 1e-3;

/// Largest multiplicity reported before an orbit counts as aperiodic.
pub const MAX_MULTIPLICITY: usize = 64;

/// Fewest peaks accepted by the period detector.
pub const MIN_PEAKS: usize = 8;

/// Fewest peaks per residue class when testing a candidate period.
const MIN_CLASS_LEN: usize = 8;

/// Successive peak changes below this count as settled.
const SETTLED: f64 = 0.1 * CLUSTER_TOLERANCE;

/// Largest relative misfit of the geometric convergence model.
const GEOMETRIC_MISFIT: f64 = 0.2;

/// Largest extrapolation applied to a converging class.
const MAX_EXTRAPOLATION: f64 = 0.05;

/// Lyapunov exponents within this band of zero count as neutral.
pub const LYAPUNOV_TOLERANCE: f64 = 0.002;

/// Target width of a refined bifurcation bracket.
pub const BRACKET_WIDTH: f64 = 0.01;

/// Attractor variance below which the dynamics count as stationary.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Default constant initial function for Mackey-Glass runs.
pub const DEFAULT_HISTORY: f64 = 0.9;

/// Number of period doublings seen in an oscillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplicity {
    Periodic(usize),
    Aperiodic,
}

impl Multiplicity {
    /// Ordering key; aperiodic ranks above every period.
    pub fn level(&self) -> usize {
        match self {
            Multiplicity::Periodic(k) => *k,
            Multiplicity::Aperiodic => usize::MAX,
        }
    }
}

impl fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplicity::Periodic(k) => write!(f, "{k}"),
            Multiplicity::Aperiodic => f.write_str("aperiodic"),
        }
    }
}

/// Local maxima of a uniformly sampled series as `(position, height)`, with
/// position in fractional sample units. Each is refined by a parabola
/// through the three samples around it.
pub fn local_maxima(x: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
        if b > a && b >= c {
            let curv = a - 2.0 * b + c;
            if curv < 0.0 {
                let offset = 0.5 * (a - c) / curv;
                out.push((i as f64 + offset, b - 0.25 * (a - c) * offset));
            } else {
                out.push((i as f64, b));
            }
        }
    }
    out
}

/// Highest maximum of every complete excursion above the series mean.
///
/// Excursions run between successive upward crossings of the mean, so small
/// shoulders riding on a large swing do not count as separate peaks.
pub fn excursion_peaks(x: &[f64]) -> Vec<f64> {
    if x.len() < 3 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let crossings: Vec<usize> = (1..x.len()).filter(|&i| x[i - 1] < mean && x[i] >= mean).collect();
    let maxima = local_maxima(x);
    let mut peaks = Vec::with_capacity(crossings.len());
    let mut k = 0;
    for w in crossings.windows(2) {
        let (start, end) = (w[0] as f64, w[1] as f64);
        while k < maxima.len() && maxima[k].0 < start {
            k += 1;
        }
        let mut best: Option<f64> = None;
        while k < maxima.len() && maxima[k].0 < end {
            let h = maxima[k].1;
            best = Some(best.map_or(h, |b: f64| b.max(h)));
            k += 1;
        }
        if let Some(h) = best {
            peaks.push(h);
        }
    }
    peaks
}

/// Smallest per-peak decay rate of an alternation that counts as dying out.
const MIN_DECAY: f64 = 1e-4;

/// Limit of a residue class of peak heights, if the class has settled,
/// converges geometrically, or alternates with an amplitude that dies out.
fn class_limit(s: &[f64]) -> Option<f64> {
    let keep = (s.len() / 2).max(MIN_CLASS_LEN).min(s.len());
    let tail = &s[s.len() - keep..];
    let last = *tail.last()?;
    let d: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let largest = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sxx: f64 = d[..d.len() - 1].iter().map(|v| v * v).sum();
    let sxy: f64 = d.windows(2).map(|w| w[0] * w[1]).sum();
    let ratio = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let misfit = {
        let res: f64 = d.windows(2).map(|w| (w[1] - ratio * w[0]).powi(2)).sum();
        (res / sxx.max(f64::MIN_POSITIVE)).sqrt()
    };
    let geometric = ratio > 0.0 && ratio < 1.0 && misfit <= GEOMETRIC_MISFIT;
    let correction = if geometric {
        d[d.len() - 1] * ratio / (1.0 - ratio)
    } else {
        0.0
    };
    if largest < SETTLED {
        return Some(last + if correction.abs() <= MAX_EXTRAPOLATION { correction } else { 0.0 });
    }
    if geometric && correction.abs() <= MAX_EXTRAPOLATION {
        return Some(last + correction);
    }
    if d.windows(2).all(|w| w[0] * w[1] < 0.0) && alternation_decays(&d) {
        return Some(0.5 * (tail[keep - 1] + tail[keep - 2]));
    }
    None
}

/// Whether an alternating difference sequence dies out.
///
/// Near a period doubling the alternation amplitude `a` obeys
/// `a' = a (1 - e - c a^2)`; a least-squares fit of the relative decrement
/// against `a^2` gives the linear rate `e`, which is positive below the
/// doubling and negative above it, however slow the approach.
fn alternation_decays(d: &[f64]) -> bool {
    let a: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let pts: Vec<(f64, f64)> = a.windows(2).map(|w| (w[0] * w[0], 1.0 - w[1] / w[0])).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 {
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx
    } else {
        0.0
    };
    let rate = my - slope * mx;
    let res: f64 = a
        .windows(2)
        .map(|w| (w[1] - w[0] * (1.0 - rate - slope * w[0] * w[0])).powi(2))
        .sum();
    let scale: f64 = a.iter().map(|v| v * v).sum();
    rate > MIN_DECAY && (res / scale).sqrt() <= GEOMETRIC_MISFIT && a[a.len() - 1] < a[0]
}

/// Number of clusters among `values` under single linkage at `tol`.
pub fn count_clusters(values: &[f64], tol: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    1 + v.windows(2).filter(|w| w[1] - w[0] > tol).count()
}

/// Period multiplicity of a peak sequence.
///
/// The smallest lag `p` is sought for which every residue class of peaks
/// (indices congruent mod `p`) converges; the class limits are then
/// clustered. Slowly decaying alternation near a period doubling therefore
/// resolves to the orbit it decays to rather than the transient it shows.
pub fn multiplicity_of_peaks(peaks: &[f64]) -> Result<Multiplicity> {
    if peaks.len() < MIN_PEAKS {
        return Err(Error::InsufficientData {
            found: peaks.len(),
            required: MIN_PEAKS,
        });
    }
    let max_lag = (peaks.len() / MIN_CLASS_LEN).clamp(1, MAX_MULTIPLICITY);
    'lag: for p in 1..=max_lag {
        let mut limits = Vec::with_capacity(p);
        for r in 0..p {
            let class: Vec<f64> = peaks[r..].iter().step_by(p).copied().collect();
            match class_limit(&class) {
                Some(l) => limits.push(l),
                None => continue 'lag,
            }
        }
        let k = count_clusters(&limits, CLUSTER_TOLERANCE);
        return Ok(if k > MAX_MULTIPLICITY {
            Multiplicity::Aperiodic
        } else {
            Multiplicity::Periodic(k)
        });
    }
    Ok(Multiplicity::Aperiodic)
}

/// Period multiplicity of a uniformly sampled primary variable.
pub fn series_multiplicity(x: &[f64]) -> Result<Multiplicity> {
    multiplicity_of_peaks(&excursion_peaks(x))
}

/// Period multiplicity of the first recorded column of a trajectory, which
/// must already exclude the transient.
pub fn period_multiplicity(traj: &Trajectory) -> Result<Multiplicity> {
    series_multiplicity(&traj.column(0))
}

/// Stroboscopic projection `(x_0(t), x_N(t - T))` of a chain trajectory.
///
/// The trajectory's first column is `x_0` and its last column the end of
/// the chain. A single-column trajectory from the direct solver is projected
/// as `(x(t), x(t - 2T))`, since the chain end trails the primary variable
/// by one delay. Lagged values are interpolated linearly between samples;
/// one pair is emitted per sample that has a full delay of record behind it.
pub fn stroboscopic(traj: &Trajectory, delay: f64) -> Result<Vec<(f64, f64)>> {
    if !(delay > 0.0) {
        return Err(Error::Domain(format!("delay must be positive, got {delay}")));
    }
    let (lag_col, lag) = if traj.width() >= 2 {
        (traj.width() - 1, delay)
    } else {
        (0, 2.0 * delay)
    };
    let shift = lag / traj.dt();
    let span = (traj.len().saturating_sub(1)) as f64;
    if span < shift {
        return Err(Error::InsufficientHistory(format!(
            "record spans {:.3} time units, projection needs {:.3}",
            span * traj.dt(),
            lag
        )));
    }
    let head = traj.column(0);
    let tail = traj.column(lag_col);
    let first = shift.ceil() as usize;
    Ok((first..traj.len())
        .map(|i| {
            let s = i as f64 - shift;
            let j = (s.floor() as usize).min(traj.len() - 1);
            let w = s - j as f64;
            let lagged = if w > 0.0 && j + 1 < traj.len() {
                (1.0 - w) * tail[j] + w * tail[j + 1]
            } else {
                tail[j]
            };
            (head[i], lagged)
        })
        .collect())
}

/// How a delay system is realized numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Method of steps on the sharp delay.
    Dde,
    /// Chain of the given order.
    Chain(usize),
}

impl Solver {
    pub fn order(&self) -> Option<usize> {
        match self {
            Solver::Dde => None,
            Solver::Chain(n) => Some(*n),
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Solver::Dde => f.write_str("dde"),
            Solver::Chain(n) => write!(f, "{n}"),
        }
    }
}

/// Run lengths shared by all probes of a family, in units of the delay
/// where noted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Upper bound on the step; chains use the smaller of this and their hint.
    pub dt: f64,
    /// Discarded transient, in delays.
    pub transient_delays: f64,
    /// Analysis window for period detection, in delays.
    pub window_delays: f64,
    /// Lyapunov averaging time.
    pub averaging_time: f64,
    pub renorm_interval: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dt: DEFAULT_STEP,
            transient_delays: 10.0,
            window_delays: 300.0,
            averaging_time: 2.0e4,
            renorm_interval: 1.0,
        }
    }
}

/// A single-delay system parameterized by its delay, together with the
/// solver and initial function used to probe it.
#[derive(Debug, Clone)]
pub struct SystemFamily {
    model: Arc<dyn DelayModel>,
    solver: Solver,
    history: InitialHistory,
    settings: RunSettings,
}

impl SystemFamily {
    pub fn new(model: Arc<dyn DelayModel>, solver: Solver) -> Result<Self> {
        if solver == Solver::Chain(0) {
            return Err(Error::InvalidOrder(0));
        }
        Ok(Self {
            model,
            solver,
            history: InitialHistory::Constant(DEFAULT_HISTORY),
            settings: RunSettings::default(),
        })
    }

    pub fn mackey_glass(params: MackeyGlassParams, solver: Solver) -> Result<Self> {
        params.validate()?;
        Self::new(Arc::new(params), solver)
    }

    pub fn with_history(mut self, history: InitialHistory) -> Self {
        self.history = history;
        self
    }

    pub fn with_settings(mut self, settings: RunSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn model(&self) -> &Arc<dyn DelayModel> {
        &self.model
    }

    pub fn solver(&self) -> Solver {
        self.solver
    }

    pub fn history(&self) -> &InitialHistory {
        &self.history
    }

    pub fn settings(&self) -> &RunSettings {
        &self.settings
    }

    pub fn system(&self, delay: f64) -> Result<DelaySystem> {
        DelaySystem::single(self.model.clone(), delay)
    }

    pub fn chain(&self, delay: f64) -> Result<Option<ChainSystem>> {
        match self.solver {
            Solver::Dde => Ok(None),
            Solver::Chain(n) => Ok(Some(build_chain(&self.system(delay)?, n)?)),
        }
    }

    /// Integration step used at this delay.
    pub fn step(&self, delay: f64) -> Result<f64> {
        Ok(match self.chain(delay)? {
            Some(c) => self.settings.dt.min(c.step_hint()),
            None => self.settings.dt,
        })
    }

    /// Primary variable sampled every step over `window` time units after
    /// the configured transient.
    pub fn primary_series(&self, delay: f64, window: f64) -> Result<Vec<f64>> {
        let transient = self.settings.transient_delays * delay;
        let sampling = Sampling::components(transient, 1, vec![0]);
        let sys = self.system(delay)?;
        let traj = match self.solver {
            Solver::Dde => integrate_dde_sampled(&sys, &self.history, transient + window, self.settings.dt, &sampling)?,
            Solver::Chain(n) => {
                let chain = build_chain(&sys, n)?;
                let y0 = init_chain_state(&chain, &self.history)?;
                let dt = self.settings.dt.min(chain.step_hint());
                integrate_chain_sampled(&chain, &y0, transient + window, dt, &sampling)?
            }
        };
        Ok(traj.column(0))
    }

    /// Period multiplicity after the transient, over the configured window.
    pub fn multiplicity(&self, delay: f64) -> Result<Multiplicity> {
        let x = self.primary_series(delay, self.settings.window_delays * delay)?;
        series_multiplicity(&x)
    }

    pub fn lyapunov_settings(&self, delay: f64) -> Result<LyapunovSettings> {
        Ok(LyapunovSettings {
            dt: self.step(delay)?,
            transient: self.settings.transient_delays * delay,
            averaging_time: self.settings.averaging_time,
            renorm_interval: self.settings.renorm_interval,
        })
    }

    /// Maximal Lyapunov exponent at this delay.
    pub fn lyapunov(&self, delay: f64) -> Result<LyapunovEstimate> {
        let settings = self.lyapunov_settings(delay)?;
        let sys = self.system(delay)?;
        match self.solver {
            Solver::Dde => lyapunov_max_dde(&sys, &self.history, &settings),
            Solver::Chain(n) => {
                let chain = build_chain(&sys, n)?;
                let y0 = init_chain_state(&chain, &self.history)?;
                lyapunov_max(&chain, &y0, &settings)
            }
        }
    }

    /// Hopf point of the linearization about the nontrivial fixpoint.
    pub fn hopf_delay(&self) -> Result<f64> {
        let lin = linearize_at_fixpoint(&self.system(1.0)?)?;
        Ok(match self.solver {
            Solver::Dde => hopf_analytic(lin.a, lin.b)?.delay,
            Solver::Chain(n) => hopf_chain(lin.a, lin.b, n)?.delay,
        })
    }
}

/// Kinds of bifurcation located in the delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BifurcationKind {
    Hopf,
    #[serde(rename = "PD1")]
    PeriodDoubling1,
    #[serde(rename = "PD2")]
    PeriodDoubling2,
    ChaosOnset,
}

impl BifurcationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BifurcationKind::Hopf => "hopf",
            BifurcationKind::PeriodDoubling1 => "pd1",
            BifurcationKind::PeriodDoubling2 => "pd2",
            BifurcationKind::ChaosOnset => "chaos",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hopf" => Ok(BifurcationKind::Hopf),
            "pd1" => Ok(BifurcationKind::PeriodDoubling1),
            "pd2" => Ok(BifurcationKind::PeriodDoubling2),
            "chaos" | "chaos-onset" => Ok(BifurcationKind::ChaosOnset),
            other => Err(Error::Config(format!("unknown bifurcation kind '{other}'"))),
        }
    }
}

/// Diagnostic value at one end of a bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Multiplicity(Multiplicity),
    /// The trajectory settled onto a fixpoint (too few peaks to count).
    Stationary,
    Lyapunov(f64),
    GrowthRate(f64),
}

/// A bifurcation delay refined by bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub kind: BifurcationKind,
    pub delay: f64,
    pub solver: Solver,
    pub bracket: (f64, f64),
    pub bracket_width: f64,
    pub below: Option<Probe>,
    pub above: Option<Probe>,
}

fn multiplicity_probe(family: &SystemFamily, delay: f64) -> Result<Probe> {
    match family.multiplicity(delay) {
        Ok(m) => Ok(Probe::Multiplicity(m)),
        Err(Error::InsufficientData { .. }) => Ok(Probe::Stationary),
        Err(e) => Err(e),
    }
}

fn probe(family: &SystemFamily, kind: BifurcationKind, delay: f64) -> Result<(Probe, bool)> {
    Ok(match kind {
        BifurcationKind::Hopf => unreachable!("Hopf points are computed from the linearization"),
        BifurcationKind::PeriodDoubling1 | BifurcationKind::PeriodDoubling2 => {
            let target = if kind == BifurcationKind::PeriodDoubling1 { 2 } else { 4 };
            let p = multiplicity_probe(family, delay)?;
            let past = matches!(p, Probe::Multiplicity(m) if m.level() >= target);
            (p, past)
        }
        BifurcationKind::ChaosOnset => {
            let l = family.lyapunov(delay)?.lambda;
            (Probe::Lyapunov(l), l > LYAPUNOV_TOLERANCE)
        }
    })
}

/// Locates a bifurcation of `family` inside `[lo, hi]`.
///
/// Period doublings are detected by the multiplicity reaching 2 or 4 and the
/// chaos onset by the maximal Lyapunov exponent exceeding
/// [`LYAPUNOV_TOLERANCE`]; each probe is a fresh run with the transient
/// discarded. The Hopf point comes from the linearization instead and only
/// has to fall inside the bracket.
pub fn find_bifurcation(family: &SystemFamily, kind: BifurcationKind, lo: f64, hi: f64) -> Result<BifurcationPoint> {
    refine_bifurcation(family, kind, lo, hi, BRACKET_WIDTH)
}

/// [`find_bifurcation`] with an explicit final bracket width.
pub fn refine_bifurcation(
    family: &SystemFamily,
    kind: BifurcationKind,
    lo: f64,
    hi: f64,
    width: f64,
) -> Result<BifurcationPoint> {
    if !(width > 0.0) {
        return Err(Error::Config(format!("bracket width must be positive, got {width}")));
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::BadBracket(format!("invalid bracket [{lo}, {hi}]")));
    }
    if kind == BifurcationKind::Hopf {
        let delay = family.hopf_delay()?;
        if delay < lo || delay > hi {
            return Err(Error::BadBracket(format!("Hopf point {delay:.6} outside [{lo}, {hi}]")));
        }
        return Ok(BifurcationPoint {
            kind,
            delay,
            solver: family.solver(),
            bracket: (delay, delay),
            bracket_width: 0.0,
            below: None,
            above: None,
        });
    }
    let (mut lo, mut hi) = (lo, hi);
    let (mut p_lo, past_lo) = probe(family, kind, lo)?;
    let (mut p_hi, past_hi) = probe(family, kind, hi)?;
    if past_lo == past_hi {
        return Err(Error::BadBracket(format!("{} at {lo}: {p_lo:?}, at {hi}: {p_hi:?}", kind.as_str())));
    }
    let increasing = past_hi;
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        let (p, past) = probe(family, kind, mid)?;
        if past == increasing {
            hi = mid;
            p_hi = p;
        } else {
            lo = mid;
            p_lo = p;
        }
    }
    Ok(BifurcationPoint {
        kind,
        delay: 0.5 * (lo + hi),
        solver: family.solver(),
        bracket: (lo, hi),
        bracket_width: hi - lo,
        below: Some(p_lo),
        above: Some(p_hi),
    })
}

/// One grid point of a delay scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub delay: f64,
    pub lambda_max: Option<f64>,
    pub lambda_std_error: Option<f64>,
    pub multiplicity: Option<Multiplicity>,
}

/// Runs `f` over `items` on a pool of `workers` threads (the global pool
/// when `None`), returning results in input order.
pub fn parallel_map<T, R, F>(items: &[T], workers: Option<usize>, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let run = || items.par_iter().map(&f).collect::<Vec<_>>();
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    results.into_iter().collect()
}

/// Lyapunov exponent and multiplicity on a delay grid.
pub fn scan(
    family: &SystemFamily,
    delays: &[f64],
    lyapunov: bool,
    multiplicity: bool,
    workers: Option<usize>,
) -> Result<Vec<ScanRow>> {
    parallel_map(delays, workers, |&delay| {
        let est = if lyapunov { Some(family.lyapunov(delay)?) } else { None };
        let m = if multiplicity {
            match family.multiplicity(delay) {
                Ok(m) => Some(m),
                Err(Error::InsufficientData { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(ScanRow {
            delay,
            lambda_max: est.map(|e| e.lambda),
            lambda_std_error: est.map(|e| e.std_error),
            multiplicity: m,
        })
    })
}

/// Settings of the cross-correlation ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelationSettings {
    /// Initial distance between the two initial functions (sup norm).
    pub delta: f64,
    pub pairs: usize,
    /// Time over which each pair is followed.
    pub horizon: f64,
    /// Spacing of the recorded correlation samples.
    pub sample_interval: f64,
    /// Length of the reference run that fixes the attractor mean and variance.
    pub reference_time: f64,
    /// Seed of pair 0; pair `i` uses `seed + i`.
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for CrossCorrelationSettings {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            pairs: 100,
            horizon: 5000.0,
            sample_interval: 1.0,
            reference_time: 2.0e4,
            seed: 1,
            workers: None,
        }
    }
}

/// Ensemble-averaged distance and correlation of initially close pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelation {
    pub times: Vec<f64>,
    /// Mean squared distance of the pair, averaged over the ensemble.
    pub d12: Vec<f64>,
    /// `1 - D12 / (2 s^2)`, clamped to `[-1, 1]`.
    pub c12: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub seeds: Vec<u64>,
    pub delta: f64,
}

impl CrossCorrelation {
    /// Mean of the last tenth of the correlation series.
    pub fn c12_tail(&self) -> f64 {
        tail_mean(&self.c12)
    }

    pub fn d12_tail(&self) -> f64 {
        tail_mean(&self.d12)
    }

    /// First recorded time at which the correlation falls below `level`.
    pub fn time_below(&self, level: f64) -> Option<f64> {
        self.c12.iter().position(|&c| c < level).map(|i| self.times[i])
    }
}

fn tail_mean(v: &[f64]) -> f64 {
    let n = (v.len() / 10).max(1).min(v.len());
    v[v.len() - n..].iter().sum::<f64>() / n as f64
}

/// Mean and variance of the primary variable on the attractor, from the
/// second half of a run of `time` units after the transient.
pub fn attractor_moments(family: &SystemFamily, delay: f64, time: f64) -> Result<(f64, f64)> {
    let full = family.primary_series(delay, time)?;
    let x = &full[full.len() / 2..];
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

/// Two copies of one numerical realization, stepped in lockstep.
enum Pair<'a> {
    Chain(ChainIntegrator<'a>, ChainIntegrator<'a>),
    Dde(Box<DdeIntegrator>, Box<DdeIntegrator>),
}

impl Pair<'_> {
    fn advance(&mut self, steps: usize) -> Result<()> {
        match self {
            Pair::Chain(a, b) => {
                a.advance(steps)?;
                b.advance(steps)
            }
            Pair::Dde(a, b) => {
                a.advance(steps)?;
                b.advance(steps)
            }
        }
    }

    fn gap(&self) -> f64 {
        match self {
            Pair::Chain(a, b) => a.x() - b.x(),
            Pair::Dde(a, b) => a.x() - b.x(),
        }
    }
}

/// Squared distance series of one pair. The base initial function is a
/// random constant near the attractor; after the transient, the second copy
/// is offset by `+-delta` in every component of its state (its whole stored
/// history for the direct solver), so the two initial functions are `delta`
/// apart in sup norm.
fn pair_distances(
    family: &SystemFamily,
    chain: Option<&ChainSystem>,
    delay: f64,
    reference: (f64, f64),
    settings: &CrossCorrelationSettings,
    seed: u64,
    samples: usize,
    per_sample: usize,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mean, var) = reference;
    let sd = var.sqrt();
    let level = mean + sd * rng.gen_range(-1.0..1.0);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let offset = sign * settings.delta;
    let history = InitialHistory::Constant(level);
    let dt = family.step(delay)?;
    let transient = step_count(family.settings.transient_delays * delay, dt);
    let mut pair = match chain {
        Some(chain) => {
            let y0 = init_chain_state(chain, &history)?;
            let mut a = ChainIntegrator::new(chain, y0, dt)?;
            a.advance(transient)?;
            let mut b = a.clone();
            b.state_mut().iter_mut().for_each(|v| *v += offset);
            Pair::Chain(a, b)
        }
        None => {
            let mut a = DdeIntegrator::new(&family.system(delay)?, &history, dt)?;
            a.advance(transient)?;
            let mut b = a.clone();
            b.shift_history(offset);
            Pair::Dde(Box::new(a), Box::new(b))
        }
    };
    let mut out = Vec::with_capacity(samples);
    out.push(pair.gap().powi(2));
    for _ in 1..samples {
        pair.advance(per_sample)?;
        out.push(pair.gap().powi(2));
    }
    Ok(out)
}

/// Cross-correlation `C12(t)` of initially close trajectories at one delay.
///
/// Pairs run in parallel but are reduced in pair order, so the result does
/// not depend on the number of workers.
pub fn cross_correlation(family: &SystemFamily, delay: f64, settings: &CrossCorrelationSettings) -> Result<CrossCorrelation> {
    if !(settings.delta > 0.0) {
        return Err(Error::Domain("initial distance must be positive".into()));
    }
    if settings.pairs == 0 {
        return Err(Error::Config("at least one pair is required".into()));
    }
    let dt = family.step(delay)?;
    let per_sample = step_count(settings.sample_interval, dt).max(1);
    let interval = per_sample as f64 * dt;
    let samples = (settings.horizon / interval).floor() as usize + 1;
    let times: Vec<f64> = (0..samples).map(|i| i as f64 * interval).collect();
    let seeds: Vec<u64> = (0..settings.pairs as u64).map(|i| settings.seed.wrapping_add(i)).collect();

    let (mean, variance) = attractor_moments(family, delay, settings.reference_time)?;
    if variance < DEGENERATE_VARIANCE {
        return Ok(CrossCorrelation {
            d12: vec![0.0; samples],
            c12: vec![1.0; samples],
            times,
            mean,
            variance,
            seeds,
            delta: settings.delta,
        });
    }

    let chain = family.chain(delay)?;
    let runs = parallel_map(&seeds, settings.workers, |&seed| {
        pair_distances(family, chain.as_ref(), delay, (mean, variance), settings, seed, samples, per_sample)
    })?;
    let mut d12 = vec![0.0; samples];
    for run in &runs {
        for (acc, v) in d12.iter_mut().zip(run) {
            *acc += v;
        }
    }
    let n = runs.len() as f64;
    d12.iter_mut().for_each(|v| *v /= n);
    let c12 = d12.iter().map(|d| (1.0 - d / (2.0 * variance)).clamp(-1.0, 1.0)).collect();
    Ok(CrossCorrelation {
        times,
        d12,
        c12,
        mean,
        variance,
        seeds,
        delta: settings.delta,
    })
}

/// Log-log slope of the asymptotic pair distance against the initial
/// distance, by least squares over `deltas`.
pub fn distance_scaling(family: &SystemFamily, delay: f64, deltas: &[f64], settings: &CrossCorrelationSettings) -> Result<f64> {
    if deltas.len() < 2 {
        return Err(Error::InsufficientData {
            found: deltas.len(),
            required: 2,
        });
    }
    let mut pts = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let cc = cross_correlation(family, delay, &CrossCorrelationSettings { delta, ..*settings })?;
        pts.push((delta.ln(), cc.d12_tail().max(f64::MIN_POSITIVE).ln()));
    }
    Ok(fit_slope(&pts))
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// The four attractor classes of the cross-correlation test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorClass {
    Fixpoint,
    LimitCycle,
    Chaos,
    PartiallyPredictableChaos,
    /// The evidence fits none of the classes.
    Unclassified,
}

/// Evidence behind a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub lambda_max: f64,
    pub lambda_std_error: f64,
    pub variance: f64,
    /// Log-log slope of the asymptotic distance against the initial distance;
    /// only measured when the exponent is neutral.
    pub d12_slope: Option<f64>,
    pub d12_tail: f64,
    pub c12_tail: f64,
    /// First time the correlation drops below 0.05.
    pub decorrelation_time: Option<f64>,
    /// Time for an initial distance to grow to the attractor size.
    pub exponential_window: Option<f64>,
    /// Lowest correlation over ten Lyapunov times after the exponential window.
    pub plateau_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosVerdict {
    pub class: AttractorClass,
    pub evidence: Evidence,
}

/// Correlation below which a pair counts as decorrelated.
pub const DECORRELATED: f64 = 0.05;

/// Correlation a partially predictable plateau stays above.
pub const PLATEAU: f64 = 0.2;

/// Classifies the attractor at one delay.
///
/// Decision table: vanishing variance or a clearly negative exponent gives
/// a fixpoint; a neutral exponent with the pair distance growing as a power
/// of the initial distance gives a limit cycle; a positive exponent gives
/// partially predictable chaos when the correlation holds above 0.2 for ten
/// Lyapunov times past the exponential window, and chaos when it has decayed
/// below 0.05. Anything else is unclassified.
pub fn classify(family: &SystemFamily, delay: f64, settings: &CrossCorrelationSettings) -> Result<ChaosVerdict> {
    let est = family.lyapunov(delay)?;
    let cc = cross_correlation(family, delay, settings)?;
    classify_with(family, delay, settings, &est, &cc)
}

/// [`classify`] from an exponent and ensemble already at hand; `cc` must
/// have been computed with `settings`.
pub fn classify_with(
    family: &SystemFamily,
    delay: f64,
    settings: &CrossCorrelationSettings,
    est: &LyapunovEstimate,
    cc: &CrossCorrelation,
) -> Result<ChaosVerdict> {
    let mut evidence = Evidence {
        lambda_max: est.lambda,
        lambda_std_error: est.std_error,
        variance: cc.variance,
        d12_slope: None,
        d12_tail: cc.d12_tail(),
        c12_tail: cc.c12_tail(),
        decorrelation_time: cc.time_below(DECORRELATED),
        exponential_window: None,
        plateau_min: None,
    };
    let lambda = est.lambda;
    let class = if cc.variance < DEGENERATE_VARIANCE || lambda < -LYAPUNOV_TOLERANCE {
        AttractorClass::Fixpoint
    } else if lambda <= LYAPUNOV_TOLERANCE {
        let deltas = [settings.delta, 10.0 * settings.delta, 100.0 * settings.delta];
        let slope = distance_scaling(family, delay, &deltas, settings)?;
        evidence.d12_slope = Some(slope);
        let unsaturated = evidence.d12_tail < 0.1 * 2.0 * cc.variance;
        if unsaturated && slope > 0.5 && slope < 2.5 {
            AttractorClass::LimitCycle
        } else {
            AttractorClass::Unclassified
        }
    } else {
        let window = (cc.variance.sqrt() / settings.delta).ln() / lambda;
        evidence.exponential_window = Some(window);
        let plateau_end = window + 10.0 / lambda;
        let plateau: Vec<f64> = cc
            .times
            .iter()
            .zip(&cc.c12)
            .filter(|(t, _)| **t >= window && **t <= plateau_end)
            .map(|(_, c)| *c)
            .collect();
        let covered = cc.times.last().is_some_and(|t| *t >= plateau_end);
        let plateau_min = plateau.iter().copied().fold(f64::INFINITY, f64::min);
        if covered && !plateau.is_empty() {
            evidence.plateau_min = Some(plateau_min);
        }
        if covered && plateau_min > PLATEAU {
            AttractorClass::PartiallyPredictableChaos
        } else if evidence.c12_tail < DECORRELATED {
            AttractorClass::Chaos
        } else {
            AttractorClass::Unclassified
        }
    };
    Ok(ChaosVerdict { class, evidence })
}
