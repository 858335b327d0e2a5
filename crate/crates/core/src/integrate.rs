//! Fixed-step integration: classical Runge-Kutta for chain systems, a
//! method-of-steps solver for single-delay equations, and Benettin-style
//! Lyapunov estimators for both.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::{ChainSystem, DelaySystem, InitialHistory};

/// An autonomous or time-dependent ODE right-hand side.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

/// Wraps a closure as a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.f)(t, y, dy)
    }
}

/// Scratch space for the classical fourth-order Runge-Kutta step.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn step<V: VectorField + ?Sized>(&mut self, field: &V, t: f64, y: &mut [f64], dt: f64) {
        let half = 0.5 * dt;
        field.eval(t, y, &mut self.k1);
        for ((tmp, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k1) {
            *tmp = y + half * k;
        }
        field.eval(t + half, &self.tmp, &mut self.k2);
        for ((tmp, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k2) {
            *tmp = y + half * k;
        }
        field.eval(t + half, &self.tmp, &mut self.k3);
        for ((tmp, y), k) in self.tmp.iter_mut().zip(y.iter()).zip(&self.k3) {
            *tmp = y + dt * k;
        }
        field.eval(t + dt, &self.tmp, &mut self.k4);
        let sixth = dt / 6.0;
        for i in 0..y.len() {
            y[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }
}

/// Number of fixed steps covering `span`.
pub fn step_count(span: f64, dt: f64) -> usize {
    if span <= 0.0 {
        return 0;
    }
    let r = span / dt;
    let rounded = r.round();
    if (r - rounded).abs() < 1e-9 * r.max(1.0) {
        rounded as usize
    } else {
        r.ceil() as usize
    }
}

/// Which samples of a run are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    /// Leading time span that is integrated but not recorded.
    pub transient: f64,
    /// Record every `stride`-th step.
    pub stride: usize,
    /// State indices to record; `None` records the full state.
    pub components: Option<Vec<usize>>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            transient: 0.0,
            stride: 1,
            components: None,
        }
    }
}

impl Sampling {
    pub fn components(transient: f64, stride: usize, components: Vec<usize>) -> Self {
        Self {
            transient,
            stride,
            components: Some(components),
        }
    }
}

/// Uniformly sampled time series of selected state components.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    names: Vec<String>,
    indices: Vec<usize>,
    data: Vec<f64>,
    transient: f64,
    final_state: Vec<f64>,
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Spacing between recorded samples.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn transient(&self) -> f64 {
        self.transient
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// State index behind each recorded column.
    pub fn state_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.width()).copied().collect()
    }

    /// Column recording state index `state_index`, if present.
    pub fn column_of(&self, state_index: usize) -> Option<Vec<f64>> {
        self.indices
            .iter()
            .position(|&i| i == state_index)
            .map(|j| self.column(j))
    }

    /// Full state at the end of the run.
    pub fn final_state(&self) -> &[f64] {
        &self.final_state
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }
}

struct Recorder {
    names: Vec<String>,
    indices: Vec<usize>,
    data: Vec<f64>,
    skip: usize,
    stride: usize,
}

impl Recorder {
    fn new(dim: usize, sampling: &Sampling, dt: f64, names: impl Fn(usize) -> String) -> Result<Self> {
        if sampling.stride == 0 {
            return Err(Error::Config("sampling stride must be >= 1".into()));
        }
        let indices: Vec<usize> = match &sampling.components {
            Some(c) => c.clone(),
            None => (0..dim).collect(),
        };
        if indices.is_empty() {
            return Err(Error::Config("no components selected for recording".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::Config(format!("component {bad} out of range for dimension {dim}")));
        }
        Ok(Self {
            names: indices.iter().map(|&i| names(i)).collect(),
            indices,
            data: Vec::new(),
            skip: step_count(sampling.transient, dt),
            stride: sampling.stride,
        })
    }

    fn offer(&mut self, step: usize, y: &[f64]) {
        if step >= self.skip && (step - self.skip) % self.stride == 0 {
            self.data.extend(self.indices.iter().map(|&i| y[i]));
        }
    }

    fn finish(self, dt: f64, transient_steps: usize, final_state: Vec<f64>) -> Result<Trajectory> {
        let width = self.indices.len();
        let rows = self.data.len() / width;
        if rows < 2 {
            return Err(Error::InsufficientData {
                found: rows,
                required: 2,
            });
        }
        Ok(Trajectory {
            t0: transient_steps as f64 * dt,
            dt: dt * self.stride as f64,
            names: self.names,
            indices: self.indices,
            data: self.data,
            transient: transient_steps as f64 * dt,
            final_state,
        })
    }
}

fn check_step(dt: f64, t_end: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("step must be positive, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Domain(format!("end time must be positive, got {t_end}")));
    }
    Ok(())
}

/// Integrates any [`VectorField`] from `t = 0` to `t_end`.
pub fn integrate_ode<V: VectorField + ?Sized>(
    field: &V,
    initial: &[f64],
    t_end: f64,
    dt: f64,
    sampling: &Sampling,
) -> Result<Trajectory> {
    check_step(dt, t_end)?;
    let dim = field.dim();
    if initial.len() != dim {
        return Err(Error::Config(format!(
            "initial state has {} entries, system dimension is {dim}",
            initial.len()
        )));
    }
    let mut rec = Recorder::new(dim, sampling, dt, |i| format!("x{i}"))?;
    let steps = step_count(t_end, dt);
    let mut y = initial.to_vec();
    let mut rk = Rk4::new(dim);
    rec.offer(0, &y);
    for n in 0..steps {
        rk.step(field, n as f64 * dt, &mut y, dt);
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                time: (n + 1) as f64 * dt,
            });
        }
        rec.offer(n + 1, &y);
    }
    let skip = rec.skip;
    rec.finish(dt, skip, y)
}

/// Integrates a chain with full-state output at every step.
pub fn integrate_chain(chain: &ChainSystem, initial: &[f64], t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_chain_sampled(chain, initial, t_end, dt, &Sampling::default())
}

/// Integrates a chain, discarding a transient and keeping selected components.
pub fn integrate_chain_sampled(
    chain: &ChainSystem,
    initial: &[f64],
    t_end: f64,
    dt: f64,
    sampling: &Sampling,
) -> Result<Trajectory> {
    if dt > chain.step_hint() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "step {dt} exceeds the chain step hint {}",
            chain.step_hint()
        )));
    }
    integrate_ode(chain, initial, t_end, dt, sampling)
}

/// A chain integration in progress, for callers that interleave stepping
/// with inspection or perturbation of the state.
#[derive(Debug, Clone)]
pub struct ChainIntegrator<'a> {
    chain: &'a ChainSystem,
    y: Vec<f64>,
    rk: Rk4,
    dt: f64,
    steps: usize,
}

impl<'a> ChainIntegrator<'a> {
    pub fn new(chain: &'a ChainSystem, initial: Vec<f64>, dt: f64) -> Result<Self> {
        check_step(dt, 1.0)?;
        if initial.len() != chain.dimension() {
            return Err(Error::Config("initial state has the wrong dimension".into()));
        }
        Ok(Self {
            chain,
            rk: Rk4::new(chain.dimension()),
            y: initial,
            dt,
            steps: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    pub fn state_mut(&mut self) -> &mut [f64] {
        &mut self.y
    }

    pub fn x(&self) -> f64 {
        self.y[0]
    }

    pub fn step(&mut self) -> Result<()> {
        self.rk.step(self.chain, self.time(), &mut self.y, self.dt);
        self.steps += 1;
        if self.y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { time: self.time() })
        }
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }
}

type VecInit = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// State of a method-of-steps integration: the current value plus a ring
/// buffer of past nodes `(y_k, f_k)` spanning one delay, from which delayed
/// values are read by cubic Hermite interpolation.
#[derive(Clone)]
pub struct DdeState {
    dim: usize,
    delay: f64,
    dt: f64,
    n: usize,
    y: Vec<f64>,
    cap: usize,
    vals: Vec<f64>,
    ders: Vec<f64>,
    initial: Arc<VecInit>,
    init_scale: Vec<f64>,
    init_shift: Vec<f64>,
    // node n is stored together with f(t_n, y_n, y(t_n - delay))
    primed: bool,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
    lag: Vec<f64>,
}

impl std::fmt::Debug for DdeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DdeState")
            .field("dim", &self.dim)
            .field("delay", &self.delay)
            .field("dt", &self.dt)
            .field("t", &self.time())
            .field("y", &self.y)
            .finish_non_exhaustive()
    }
}

impl DdeState {
    /// `initial(s, out)` fills the history for `s <= 0`; the value at `s = 0`
    /// becomes the starting state.
    pub fn new(
        dim: usize,
        delay: f64,
        dt: f64,
        initial: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        check_step(dt, delay)?;
        if delay < dt * (1.0 - 1e-12) {
            return Err(Error::Domain(format!("delay {delay} shorter than the step {dt}")));
        }
        let cap = (delay / dt).ceil() as usize + 3;
        let mut y = vec![0.0; dim];
        initial(0.0, &mut y);
        Ok(Self {
            dim,
            delay,
            dt,
            n: 0,
            y,
            cap,
            vals: vec![0.0; cap * dim],
            ders: vec![0.0; cap * dim],
            initial: Arc::new(initial),
            init_scale: vec![1.0; dim],
            init_shift: vec![0.0; dim],
            primed: false,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            lag: vec![0.0; dim],
        })
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    /// Value at past time `s` (`s <= t`), interpolated from stored nodes.
    pub fn value_at(&self, s: f64, out: &mut [f64]) {
        if s < 0.0 {
            (self.initial)(s, out);
            for c in 0..self.dim {
                out[c] = self.init_scale[c] * out[c] + self.init_shift[c];
            }
            return;
        }
        let r = s / self.dt;
        let j = r.floor() as usize;
        if j >= self.n {
            out.copy_from_slice(&self.y);
            return;
        }
        let oldest = (self.n + 1).saturating_sub(self.cap);
        debug_assert!(j >= oldest, "history node {j} already discarded");
        let j = j.max(oldest);
        let theta = r - j as f64;
        let (a, b) = ((j % self.cap) * self.dim, ((j + 1) % self.cap) * self.dim);
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        for c in 0..self.dim {
            out[c] = h00 * self.vals[a + c]
                + h10 * self.dt * self.ders[a + c]
                + h01 * self.vals[b + c]
                + h11 * self.dt * self.ders[b + c];
        }
    }

    /// One RK4 step of `dy/dt = f(t, y(t), y(t - delay))`.
    pub fn step<F>(&mut self, f: &F) -> Result<()>
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + ?Sized,
    {
        let dt = self.dt;
        let t = self.time();
        let half = 0.5 * dt;
        let mut lag = std::mem::take(&mut self.lag);
        let mut k = std::mem::take(&mut self.k);
        let mut tmp = std::mem::take(&mut self.tmp);

        let slot = (self.n % self.cap) * self.dim;
        if self.primed {
            k[0].copy_from_slice(&self.ders[slot..slot + self.dim]);
        } else {
            self.value_at(t - self.delay, &mut lag);
            f(t, &self.y, &lag, &mut k[0]);
            self.vals[slot..slot + self.dim].copy_from_slice(&self.y);
            self.ders[slot..slot + self.dim].copy_from_slice(&k[0]);
        }

        self.value_at(t + half - self.delay, &mut lag);
        for c in 0..self.dim {
            tmp[c] = self.y[c] + half * k[0][c];
        }
        f(t + half, &tmp, &lag, &mut k[1]);
        for c in 0..self.dim {
            tmp[c] = self.y[c] + half * k[1][c];
        }
        f(t + half, &tmp, &lag, &mut k[2]);
        self.value_at(t + dt - self.delay, &mut lag);
        for c in 0..self.dim {
            tmp[c] = self.y[c] + dt * k[2][c];
        }
        f(t + dt, &tmp, &lag, &mut k[3]);
        for c in 0..self.dim {
            self.y[c] += dt / 6.0 * (k[0][c] + 2.0 * (k[1][c] + k[2][c]) + k[3][c]);
        }
        // store node n+1; its delayed argument is the one used by the last stage
        let next = ((self.n + 1) % self.cap) * self.dim;
        f(t + dt, &self.y, &lag, &mut tmp);
        self.vals[next..next + self.dim].copy_from_slice(&self.y);
        self.ders[next..next + self.dim].copy_from_slice(&tmp);
        self.primed = true;
        self.n += 1;
        self.lag = lag;
        self.k = k;
        self.tmp = tmp;
        if self.y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Divergence { time: self.time() })
        }
    }

    /// Applies `y -> scale * y + shift` to component `c` across the whole
    /// stored history, the initial function and the current value.
    pub fn affine_component(&mut self, c: usize, scale: f64, shift: f64) {
        self.y[c] = scale * self.y[c] + shift;
        for slot in 0..self.cap {
            let i = slot * self.dim + c;
            self.vals[i] = scale * self.vals[i] + shift;
            self.ders[i] *= scale;
        }
        self.init_scale[c] *= scale;
        self.init_shift[c] = scale * self.init_shift[c] + shift;
        if shift != 0.0 {
            // the stored derivative at the present no longer matches f
            self.primed = false;
        }
    }

    /// Root mean square of component `c` over the stored nodes within one
    /// delay of the present, including the present value.
    pub fn history_rms(&self, c: usize) -> f64 {
        let span = (self.delay / self.dt).ceil() as usize;
        let first = self.n.saturating_sub(span);
        let mut acc = self.y[c] * self.y[c];
        for j in first..self.n {
            let v = self.vals[(j % self.cap) * self.dim + c];
            acc += v * v;
        }
        (acc / (self.n - first + 1) as f64).sqrt()
    }
}

/// Method-of-steps integration of a scalar single-delay system.
#[derive(Debug, Clone)]
pub struct DdeIntegrator {
    sys: DelaySystem,
    state: DdeState,
}

impl DdeIntegrator {
    pub fn new(sys: &DelaySystem, history: &InitialHistory, dt: f64) -> Result<Self> {
        if sys.delays().len() != 1 || sys.channels() != 1 {
            return Err(Error::Config("the direct solver handles single-delay systems only".into()));
        }
        let phi = history.clone();
        let state = DdeState::new(1, sys.delays()[0].mean, dt, move |s, out| out[0] = phi.eval(s))?;
        Ok(Self {
            sys: sys.clone(),
            state,
        })
    }

    pub fn time(&self) -> f64 {
        self.state.time()
    }

    pub fn x(&self) -> f64 {
        self.state.y[0]
    }

    pub fn state(&self) -> &DdeState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut DdeState {
        &mut self.state
    }

    pub fn step(&mut self) -> Result<()> {
        let model = self.sys.model().clone();
        self.state
            .step(&|t: f64, y: &[f64], lag: &[f64], dy: &mut [f64]| dy[0] = model.rhs(t, y[0], &lag[..1]))
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        let model = self.sys.model().clone();
        let f = |t: f64, y: &[f64], lag: &[f64], dy: &mut [f64]| dy[0] = model.rhs(t, y[0], &lag[..1]);
        for _ in 0..steps {
            self.state.step(&f)?;
        }
        Ok(())
    }

    /// Adds `delta` to the current value and the entire stored history.
    pub fn shift_history(&mut self, delta: f64) {
        self.state.affine_component(0, 1.0, delta);
    }
}

/// Method-of-steps solution with every step recorded.
pub fn integrate_dde(sys: &DelaySystem, history: &InitialHistory, t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_dde_sampled(sys, history, t_end, dt, &Sampling::default())
}

pub fn integrate_dde_sampled(
    sys: &DelaySystem,
    history: &InitialHistory,
    t_end: f64,
    dt: f64,
    sampling: &Sampling,
) -> Result<Trajectory> {
    check_step(dt, t_end)?;
    let mut solver = DdeIntegrator::new(sys, history, dt)?;
    let mut rec = Recorder::new(1, sampling, dt, |_| "x0".to_string())?;
    let steps = step_count(t_end, dt);
    rec.offer(0, &[solver.x()]);
    for n in 0..steps {
        solver.step()?;
        rec.offer(n + 1, &[solver.x()]);
    }
    let skip = rec.skip;
    rec.finish(dt, skip, vec![solver.x()])
}

/// Settings for Lyapunov estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSettings {
    pub dt: f64,
    /// Integrated (with tangent alignment) before averaging starts.
    pub transient: f64,
    pub averaging_time: f64,
    pub renorm_interval: f64,
}

impl LyapunovSettings {
    /// Defaults for delay `T`: step 0.01, transient `10 T`, averaging over
    /// `2e4` time units with renormalization every time unit.
    pub fn for_delay(delay: f64) -> Self {
        Self {
            dt: crate::systems::DEFAULT_STEP,
            transient: 10.0 * delay,
            averaging_time: 2.0e4,
            renorm_interval: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        check_step(self.dt, self.averaging_time)?;
        if self.renorm_interval < 2.0 * self.dt {
            return Err(Error::Config("renormalization interval must exceed the step".into()));
        }
        if self.transient < 0.0 {
            return Err(Error::Config("transient must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Number of blocks the averaging window is split into for the error estimate.
pub const LYAPUNOV_BLOCKS: usize = 10;

/// Block standard error above which an estimate is flagged as unreliable.
pub const LYAPUNOV_NOISE_LIMIT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Time-averaged growth rate (1/time).
    pub lambda: f64,
    /// Standard error from block averages.
    pub std_error: f64,
    pub averaging_time: f64,
    pub renormalizations: usize,
    /// Set when `std_error` exceeds [`LYAPUNOV_NOISE_LIMIT`].
    pub unreliable: bool,
}

fn summarize(logs: &[f64], interval: f64) -> LyapunovEstimate {
    let total: f64 = logs.iter().sum();
    let time = logs.len() as f64 * interval;
    let per_block = logs.len() / LYAPUNOV_BLOCKS;
    let std_error = if per_block == 0 {
        f64::INFINITY
    } else {
        let means: Vec<f64> = logs
            .chunks(per_block)
            .take(LYAPUNOV_BLOCKS)
            .map(|c| c.iter().sum::<f64>() / (c.len() as f64 * interval))
            .collect();
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
        (var / means.len() as f64).sqrt()
    };
    LyapunovEstimate {
        lambda: total / time,
        std_error,
        averaging_time: time,
        renormalizations: logs.len(),
        unreliable: !(std_error <= LYAPUNOV_NOISE_LIMIT),
    }
}

/// Flow plus `k` tangent vectors, laid out `[x, v_1, ..., v_k]`.
struct TangentField<'a> {
    chain: &'a ChainSystem,
    k: usize,
}

impl VectorField for TangentField<'_> {
    fn dim(&self) -> usize {
        self.chain.dimension() * (1 + self.k)
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.chain.dimension();
        let (x, vs) = y.split_at(n);
        let (dx, dvs) = dy.split_at_mut(n);
        self.chain.eval(t, x, dx);
        for (v, dv) in vs.chunks(n).zip(dvs.chunks_mut(n)) {
            self.chain.jvp(t, x, v, dv);
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Modified Gram-Schmidt on the tangent block; returns the norms removed.
fn orthonormalize(vs: &mut [f64], n: usize) -> Vec<f64> {
    let k = vs.len() / n;
    let mut norms = Vec::with_capacity(k);
    for i in 0..k {
        for j in 0..i {
            let (head, tail) = vs.split_at_mut(i * n);
            let vj = &head[j * n..(j + 1) * n];
            let vi = &mut tail[..n];
            let dot: f64 = vi.iter().zip(vj).map(|(a, b)| a * b).sum();
            for (a, b) in vi.iter_mut().zip(vj) {
                *a -= dot * b;
            }
        }
        let vi = &mut vs[i * n..(i + 1) * n];
        let r = norm(vi);
        for a in vi.iter_mut() {
            *a /= r;
        }
        norms.push(r);
    }
    norms
}

/// Leading `k` Lyapunov exponents of a chain by repeated orthonormalization
/// of `k` tangent vectors integrated with the analytic chain Jacobian.
pub fn lyapunov_spectrum(
    chain: &ChainSystem,
    initial: &[f64],
    k: usize,
    settings: &LyapunovSettings,
) -> Result<Vec<LyapunovEstimate>> {
    settings.validate()?;
    if k == 0 || k > chain.dimension() {
        return Err(Error::Config(format!("cannot track {k} exponents")));
    }
    if settings.dt > chain.step_hint() * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "step {} exceeds the chain step hint {}",
            settings.dt,
            chain.step_hint()
        )));
    }
    let n = chain.dimension();
    let field = TangentField { chain, k };
    let mut y = vec![0.0; n * (1 + k)];
    y[..n].copy_from_slice(initial);
    // deterministic, generic starting directions
    for i in 0..k {
        for c in 0..n {
            y[n * (1 + i) + c] = 1.0 + ((c * (i + 1)) % 7) as f64 * 0.1 * i as f64 + (i == c) as u8 as f64;
        }
    }
    orthonormalize(&mut y[n..], n);
    let mut rk = Rk4::new(field.dim());
    let dt = settings.dt;
    let per_renorm = step_count(settings.renorm_interval, dt);
    let interval = per_renorm as f64 * dt;
    let warm = step_count(settings.transient, dt) / per_renorm;
    let rounds = step_count(settings.averaging_time, dt) / per_renorm;
    let mut logs = vec![Vec::with_capacity(rounds); k];
    let mut steps = 0usize;
    for round in 0..warm + rounds {
        for _ in 0..per_renorm {
            rk.step(&field, steps as f64 * dt, &mut y, dt);
            steps += 1;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                time: steps as f64 * dt,
            });
        }
        let norms = orthonormalize(&mut y[n..], n);
        if round >= warm {
            for (l, r) in logs.iter_mut().zip(norms) {
                l.push(r.ln());
            }
        }
    }
    Ok(logs.iter().map(|l| summarize(l, interval)).collect())
}

/// Maximal Lyapunov exponent of a chain.
pub fn lyapunov_max(chain: &ChainSystem, initial: &[f64], settings: &LyapunovSettings) -> Result<LyapunovEstimate> {
    Ok(lyapunov_spectrum(chain, initial, 1, settings)?[0])
}

/// Maximal Lyapunov exponent of a single-delay system from the linearized
/// delay equation integrated alongside the flow; the tangent history is
/// renormalized in root-mean-square norm over one delay.
pub fn lyapunov_max_dde(
    sys: &DelaySystem,
    history: &InitialHistory,
    settings: &LyapunovSettings,
) -> Result<LyapunovEstimate> {
    settings.validate()?;
    if sys.delays().len() != 1 || sys.channels() != 1 {
        return Err(Error::Config("the direct solver handles single-delay systems only".into()));
    }
    let phi = history.clone();
    let mut state = DdeState::new(2, sys.delays()[0].mean, settings.dt, move |s, out| {
        out[0] = phi.eval(s);
        out[1] = 1.0;
    })?;
    let model = sys.model().clone();
    let f = move |t: f64, y: &[f64], lag: &[f64], dy: &mut [f64]| {
        let mut dh = [0.0];
        dy[0] = model.rhs(t, y[0], &lag[..1]);
        let dx = model.partials(t, y[0], &lag[..1], &mut dh);
        dy[1] = dx * y[1] + dh[0] * lag[1];
    };
    let dt = settings.dt;
    let per_renorm = step_count(settings.renorm_interval, dt);
    let interval = per_renorm as f64 * dt;
    let warm = step_count(settings.transient, dt) / per_renorm;
    let rounds = step_count(settings.averaging_time, dt) / per_renorm;
    let mut logs = Vec::with_capacity(rounds);
    for round in 0..warm + rounds {
        for _ in 0..per_renorm {
            state.step(&f)?;
        }
        let r = state.history_rms(1);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Divergence { time: state.time() });
        }
        state.affine_component(1, 1.0 / r, 0.0);
        if round >= warm {
            logs.push(r.ln());
        }
    }
    Ok(summarize(&logs, interval))
}
