//! Scalar delay systems and their kernel-series chain realizations.
//!
//! A [`DelaySystem`] couples a right-hand side `F(t, x, h)` to one or more
//! delays. [`build_chain`] and [`build_multi_chain`] replace every delay `T_j`
//! by a chain of `N_j` auxiliary variables relaxing with time constant
//! `T_j / N_j`, which turns the delay system into an ordinary system of
//! dimension `1 + sum N_j`.
//!
//! State layout of a [`ChainSystem`]: index 0 holds `x_0 = x`, followed by one
//! contiguous block per delay in the order the delays were declared. The last
//! entry of a block is that delay's history estimate.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::VectorField;
use crate::kernels::{convolve_history, GammaKernel, SampledHistory};

/// Integration step used when the chain does not force a smaller one.
pub const DEFAULT_STEP: f64 = 0.01;

/// Tolerance on `sum kappa_j = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Step used for finite-difference partial derivatives.
pub const FD_STEP: f64 = 1e-6;

/// Right-hand side `F(t, x, h)` of a scalar delay equation.
///
/// `h` has one entry per history channel: a single weighted history for
/// [`Coupling::Weighted`], one entry per delay for [`Coupling::PerDelay`].
pub trait DelayModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn rhs(&self, t: f64, x: f64, h: &[f64]) -> f64;

    /// Returns `dF/dx` and writes `dF/dh_j` into `dh`.
    ///
    /// The default uses central differences; built-in models override it.
    fn partials(&self, t: f64, x: f64, h: &[f64], dh: &mut [f64]) -> f64 {
        let step = FD_STEP;
        let dx = (self.rhs(t, x + step, h) - self.rhs(t, x - step, h)) / (2.0 * step);
        let mut probe = h.to_vec();
        for j in 0..h.len() {
            probe[j] = h[j] + step;
            let up = self.rhs(t, x, &probe);
            probe[j] = h[j] - step;
            let down = self.rhs(t, x, &probe);
            probe[j] = h[j];
            dh[j] = (up - down) / (2.0 * step);
        }
        dx
    }

    /// Named parameters, echoed into output headers.
    fn params(&self) -> Vec<(String, f64)> {
        Vec::new()
    }

    /// The nontrivial equilibrium `x = h = x*`, when one is known in closed form.
    fn fixpoint(&self) -> Option<f64> {
        None
    }
}

/// `dx/dt = -c - b x(t) - a h(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDelayParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LinearDelayParams {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b, c: 0.0 }
    }
}

impl DelayModel for LinearDelayParams {
    fn name(&self) -> &str {
        "linear"
    }

    fn rhs(&self, _t: f64, x: f64, h: &[f64]) -> f64 {
        -self.c - self.b * x - self.a * h[0]
    }

    fn partials(&self, _t: f64, _x: f64, _h: &[f64], dh: &mut [f64]) -> f64 {
        dh[0] = -self.a;
        -self.b
    }

    fn params(&self) -> Vec<(String, f64)> {
        vec![("a".into(), self.a), ("b".into(), self.b), ("c".into(), self.c)]
    }

    fn fixpoint(&self) -> Option<f64> {
        let s = self.a + self.b;
        (s != 0.0).then(|| -self.c / s)
    }
}

/// `dx/dt = alpha h / (1 + h^gamma) - beta x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MackeyGlassParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MackeyGlassParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 0.1,
            gamma: 10.0,
        }
    }
}

impl MackeyGlassParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl DelayModel for MackeyGlassParams {
    fn name(&self) -> &str {
        "mackey-glass"
    }

    fn rhs(&self, _t: f64, x: f64, h: &[f64]) -> f64 {
        let h = h[0];
        self.alpha * h / (1.0 + h.powf(self.gamma)) - self.beta * x
    }

    fn partials(&self, _t: f64, _x: f64, h: &[f64], dh: &mut [f64]) -> f64 {
        let p = h[0].powf(self.gamma);
        let d = 1.0 + p;
        dh[0] = self.alpha * (1.0 + (1.0 - self.gamma) * p) / (d * d);
        -self.beta
    }

    fn params(&self) -> Vec<(String, f64)> {
        vec![
            ("alpha".into(), self.alpha),
            ("beta".into(), self.beta),
            ("gamma".into(), self.gamma),
        ]
    }

    fn fixpoint(&self) -> Option<f64> {
        mackey_glass_fixpoints(self).1
    }
}

type RhsFn = dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync;

/// A model defined by a closure, e.g. the mixed-delay logistic equation
/// `dx/dt = h_1 (1 - h_2)`.
#[derive(Clone)]
pub struct FnModel {
    name: String,
    f: Arc<RhsFn>,
    fixpoint: Option<f64>,
}

impl FnModel {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            fixpoint: None,
        }
    }

    pub fn with_fixpoint(mut self, x: f64) -> Self {
        self.fixpoint = Some(x);
        self
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel").field("name", &self.name).finish_non_exhaustive()
    }
}

impl DelayModel for FnModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn rhs(&self, t: f64, x: f64, h: &[f64]) -> f64 {
        (self.f)(t, x, h)
    }

    fn fixpoint(&self) -> Option<f64> {
        self.fixpoint
    }
}

/// One discrete delay with its relative weight `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delay {
    pub mean: f64,
    pub weight: f64,
}

/// How the delays enter `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    /// `h = sum_j kappa_j x(t - T_j)`, passed as a single channel.
    Weighted,
    /// Each delay is its own channel; weights are ignored by `F`.
    PerDelay,
}

/// A scalar delay differential equation.
#[derive(Debug, Clone)]
pub struct DelaySystem {
    model: Arc<dyn DelayModel>,
    delays: Vec<Delay>,
    coupling: Coupling,
}

impl DelaySystem {
    pub fn new(model: Arc<dyn DelayModel>, delays: Vec<Delay>, coupling: Coupling) -> Result<Self> {
        if delays.is_empty() {
            return Err(Error::Config("at least one delay is required".into()));
        }
        for d in &delays {
            if !(d.mean > 0.0 && d.mean.is_finite()) {
                return Err(Error::Config(format!("delays must be positive, got {}", d.mean)));
            }
            if !(d.weight >= 0.0 && d.weight.is_finite()) {
                return Err(Error::Config(format!("weights must be nonnegative, got {}", d.weight)));
            }
        }
        if coupling == Coupling::Weighted {
            let sum: f64 = delays.iter().map(|d| d.weight).sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::Config(format!("delay weights sum to {sum}, expected 1")));
            }
        }
        Ok(Self {
            model,
            delays,
            coupling,
        })
    }

    pub fn single(model: Arc<dyn DelayModel>, delay: f64) -> Result<Self> {
        Self::new(
            model,
            vec![Delay {
                mean: delay,
                weight: 1.0,
            }],
            Coupling::Weighted,
        )
    }

    pub fn mackey_glass(params: MackeyGlassParams, delay: f64) -> Result<Self> {
        params.validate()?;
        Self::single(Arc::new(params), delay)
    }

    pub fn linear(params: LinearDelayParams, delay: f64) -> Result<Self> {
        Self::single(Arc::new(params), delay)
    }

    pub fn name(&self) -> &str {
        self.model.name()
    }

    pub fn model(&self) -> &Arc<dyn DelayModel> {
        &self.model
    }

    pub fn delays(&self) -> &[Delay] {
        &self.delays
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    /// Number of entries in the `h` slice handed to `F`.
    pub fn channels(&self) -> usize {
        match self.coupling {
            Coupling::Weighted => 1,
            Coupling::PerDelay => self.delays.len(),
        }
    }

    pub fn max_delay(&self) -> f64 {
        self.delays.iter().map(|d| d.mean).fold(0.0, f64::max)
    }

    /// The same system with every delay replaced by `delay`; only defined
    /// for single-delay systems.
    pub fn with_delay(&self, delay: f64) -> Result<Self> {
        if self.delays.len() != 1 {
            return Err(Error::Config("with_delay requires a single-delay system".into()));
        }
        Self::single(self.model.clone(), delay)
    }

    /// Collapses per-delay values into the channels seen by `F`.
    pub fn fold_channels(&self, per_delay: &[f64], out: &mut [f64]) {
        match self.coupling {
            Coupling::Weighted => {
                out[0] = self
                    .delays
                    .iter()
                    .zip(per_delay)
                    .map(|(d, v)| d.weight * v)
                    .sum();
            }
            Coupling::PerDelay => out.copy_from_slice(per_delay),
        }
    }
}

/// Initial function `phi` on the past, `phi(s)` for `s <= 0`.
#[derive(Clone)]
pub enum InitialHistory {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl InitialHistory {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Function(f) => f(s),
        }
    }
}

impl fmt::Debug for InitialHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// The ordinary-differential-equation realization of a [`DelaySystem`].
#[derive(Debug, Clone)]
pub struct ChainSystem {
    base: DelaySystem,
    orders: Vec<usize>,
    // 1 / T_N per block
    rates: Vec<f64>,
    offsets: Vec<usize>,
    dim: usize,
    step_hint: f64,
}

/// Builds the `(N+1)`-dimensional chain of a single-delay system.
pub fn build_chain(sys: &DelaySystem, order: usize) -> Result<ChainSystem> {
    if sys.delays().len() != 1 {
        return Err(Error::Config(format!(
            "build_chain expects a single delay, system has {}",
            sys.delays().len()
        )));
    }
    build_multi_chain(sys, &[order])
}

/// Builds one chain per delay; orders are given in delay order.
pub fn build_multi_chain(sys: &DelaySystem, orders: &[usize]) -> Result<ChainSystem> {
    if orders.len() != sys.delays().len() {
        return Err(Error::Config(format!(
            "{} orders given for {} delays",
            orders.len(),
            sys.delays().len()
        )));
    }
    if let Some(&bad) = orders.iter().find(|&&n| n == 0) {
        return Err(Error::InvalidOrder(bad));
    }
    let mut offsets = Vec::with_capacity(orders.len());
    let mut next = 1;
    for &n in orders {
        offsets.push(next);
        next += n;
    }
    let rates: Vec<f64> = sys
        .delays()
        .iter()
        .zip(orders)
        .map(|(d, &n)| n as f64 / d.mean)
        .collect();
    let fastest = rates.iter().fold(0.0, |a: f64, &r| a.max(r));
    Ok(ChainSystem {
        base: sys.clone(),
        orders: orders.to_vec(),
        rates,
        offsets,
        dim: next,
        step_hint: DEFAULT_STEP.min(0.5 / fastest),
    })
}

impl ChainSystem {
    pub fn base(&self) -> &DelaySystem {
        &self.base
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// `min(DEFAULT_STEP, T_N / 2)` over all chains.
    pub fn step_hint(&self) -> f64 {
        self.step_hint
    }

    /// Link time `T_j / N_j` of chain `j`.
    pub fn link_time(&self, j: usize) -> f64 {
        1.0 / self.rates[j]
    }

    /// Index range of chain `j` in the state vector.
    pub fn block(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j] + self.orders[j]
    }

    /// Index of the last variable of chain `j`, the delay-`T_j` history estimate.
    pub fn terminal_index(&self, j: usize) -> usize {
        self.offsets[j] + self.orders[j] - 1
    }

    /// Per-delay history estimates folded into the channels of `F`.
    pub fn histories(&self, y: &[f64], out: &mut [f64]) {
        match self.base.coupling() {
            Coupling::Weighted => {
                out[0] = self
                    .base
                    .delays()
                    .iter()
                    .enumerate()
                    .map(|(j, d)| d.weight * y[self.terminal_index(j)])
                    .sum();
            }
            Coupling::PerDelay => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = y[self.terminal_index(j)];
                }
            }
        }
    }

    fn with_histories<R>(&self, y: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let channels = self.base.channels();
        if channels == 1 {
            let mut h = [0.0];
            self.histories(y, &mut h);
            f(&h)
        } else {
            let mut h = vec![0.0; channels];
            self.histories(y, &mut h);
            f(&h)
        }
    }

    /// `d/dt` of every chain variable except `x_0`.
    fn relax(&self, y: &[f64], dy: &mut [f64]) {
        for (j, &rate) in self.rates.iter().enumerate() {
            let block = self.block(j);
            let mut prev = y[0];
            for i in block {
                let cur = y[i];
                dy[i] = (prev - cur) * rate;
                prev = cur;
            }
        }
    }

    /// Jacobian-vector product `J(y) v`.
    pub fn jvp(&self, t: f64, y: &[f64], v: &[f64], out: &mut [f64]) {
        let model = self.base.model();
        let channels = self.base.channels();
        let mut single = [0.0];
        let mut many = Vec::new();
        let dh: &mut [f64] = if channels == 1 {
            &mut single
        } else {
            many.resize(channels, 0.0);
            &mut many
        };
        let dx = self.with_histories(y, |h| model.partials(t, y[0], h, dh));
        let mut acc = dx * v[0];
        match self.base.coupling() {
            Coupling::Weighted => {
                let mut hv = 0.0;
                for (j, d) in self.base.delays().iter().enumerate() {
                    hv += d.weight * v[self.terminal_index(j)];
                }
                acc += dh[0] * hv;
            }
            Coupling::PerDelay => {
                for (j, g) in dh.iter().enumerate() {
                    acc += g * v[self.terminal_index(j)];
                }
            }
        }
        out[0] = acc;
        self.relax(v, out);
    }

    /// Divergence of the flow: `dF/dx_0 - sum_j N_j^2 / T_j`.
    pub fn divergence(&self, t: f64, y: &[f64]) -> f64 {
        let mut dh = vec![0.0; self.base.channels()];
        let dx = self.with_histories(y, |h| self.base.model().partials(t, y[0], h, &mut dh));
        let trace: f64 = self
            .orders
            .iter()
            .zip(&self.rates)
            .map(|(&n, &r)| n as f64 * r)
            .sum();
        dx - trace
    }

    /// Dense Jacobian at `y`; intended for small chains.
    pub fn jacobian(&self, t: f64, y: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            self.jvp(t, y, &e, &mut col);
            for (i, c) in col.iter().enumerate() {
                jac[(i, k)] = *c;
            }
            e[k] = 0.0;
        }
        jac
    }
}

impl VectorField for ChainSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = self.with_histories(y, |h| self.base.model().rhs(t, y[0], h));
        self.relax(y, dy);
    }
}

/// Quadrature resolution, in kernel standard deviations, used when
/// projecting an initial function onto chain variables.
const INIT_POINTS_PER_SIGMA: f64 = 100.0;

/// Chain state at `t = 0` for the initial function `phi`.
///
/// `x_0(0) = phi(0)`; every chain variable is the kernel convolution of `phi`.
pub fn init_chain_state(chain: &ChainSystem, history: &InitialHistory) -> Result<Vec<f64>> {
    if let InitialHistory::Constant(c) = history {
        return Ok(vec![*c; chain.dimension()]);
    }
    let mut state = vec![0.0; chain.dimension()];
    state[0] = history.eval(0.0);
    for (j, d) in chain.base().delays().iter().enumerate() {
        let n = chain.orders()[j];
        for (m, idx) in (1..=n).zip(chain.block(j)) {
            let kernel = GammaKernel::new(m, n, d.mean)?;
            let step = kernel.moments().1.sqrt() / INIT_POINTS_PER_SIGMA;
            let span = kernel.truncation_horizon() + 2.0 * step;
            let sampled = SampledHistory::from_fn(|s| history.eval(s), step, span)?;
            state[idx] = convolve_history(&kernel, &sampled)?;
        }
    }
    Ok(state)
}

/// Fixpoints `(x_1*, x_2*)` of the Mackey-Glass equation; `x_2*` exists iff `alpha > beta`.
pub fn mackey_glass_fixpoints(p: &MackeyGlassParams) -> (f64, Option<f64>) {
    let x2 = (p.alpha > p.beta).then(|| (p.alpha / p.beta - 1.0).powf(1.0 / p.gamma));
    (0.0, x2)
}

/// Linear coefficients `(a, b)` of a single-channel system at its fixpoint,
/// with the sign convention `dx/dt = -b x - a h` of [`LinearDelayParams`].
///
/// Derivatives are Richardson-refined central differences with step [`FD_STEP`].
pub fn linearize_at_fixpoint(sys: &DelaySystem) -> Result<LinearDelayParams> {
    if sys.channels() != 1 {
        return Err(Error::Config("linearization needs a single history channel".into()));
    }
    let model = sys.model();
    let xs = model.fixpoint().ok_or(Error::NoFixpoint)?;
    let d_dx = richardson(|x| model.rhs(0.0, x, &[xs]), xs);
    let d_dh = richardson(|h| model.rhs(0.0, xs, &[h]), xs);
    Ok(LinearDelayParams {
        a: -d_dh,
        b: -d_dx,
        c: 0.0,
    })
}

fn richardson(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let central = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let coarse = central(FD_STEP);
    let fine = central(0.5 * FD_STEP);
    (4.0 * fine - coarse) / 3.0
}
