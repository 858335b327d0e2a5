//! The gamma kernel family `K_m^{(N,T)}` and quadrature against sampled histories.
//!
//! A kernel of index `m` and order `N` with mean full delay `T` is the gamma
//! density with shape `m` and rate `N/T`:
//!
//! ```text
//! K_m(tau) = N^m tau^(m-1) exp(-N tau / T) / ((m-1)! T^m)
//! ```
//!
//! Its mean is `mT/N` and its variance `mT^2/N^2`, so `K_N` concentrates on
//! `tau = T` as `N` grows. Chain variables `x_m(t)` are convolutions of the
//! past trajectory with these kernels; [`convolve_history`] evaluates that
//! convolution directly and serves as the reference for chain dynamics.

use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Number of standard deviations past the mean used as the quadrature horizon.
pub const TRUNCATION_SIGMAS: f64 = 12.0;

/// Tail mass left beyond [`GammaKernel::truncation_horizon`].
pub const HORIZON_TAIL_MASS: f64 = 1e-12;

/// Largest kernel mass allowed to fall outside the sampled history.
pub const MAX_TRUNCATED_MASS: f64 = 1e-10;

/// One member of the gamma kernel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaKernel {
    m: usize,
    order: usize,
    mean_delay: f64,
    // ln((m-1)!)
    ln_norm: f64,
}

impl GammaKernel {
    pub fn new(m: usize, order: usize, mean_delay: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidOrder(order));
        }
        if m == 0 || m > order {
            return Err(Error::Domain(format!(
                "kernel index m = {m} outside 1..={order}"
            )));
        }
        if !(mean_delay > 0.0 && mean_delay.is_finite()) {
            return Err(Error::Domain(format!(
                "mean delay must be positive and finite, got {mean_delay}"
            )));
        }
        Ok(Self {
            m,
            order,
            mean_delay,
            ln_norm: ln_factorial(m - 1),
        })
    }

    /// The last kernel of an order-`N` chain, `K_N^{(N,T)}`, whose mean is `T`.
    pub fn terminal(order: usize, mean_delay: f64) -> Result<Self> {
        Self::new(order, order, mean_delay)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mean_delay(&self) -> f64 {
        self.mean_delay
    }

    /// Relaxation time `T_N = T / N` of one chain link.
    pub fn link_time(&self) -> f64 {
        self.mean_delay / self.order as f64
    }

    /// Natural log of the density; `-inf` where the density vanishes.
    pub fn ln_density(&self, tau: f64) -> Result<f64> {
        if tau < 0.0 || tau.is_nan() {
            return Err(Error::Domain(format!("negative delay tau = {tau}")));
        }
        let rate = 1.0 / self.link_time();
        let u = rate * tau;
        if self.m == 1 {
            return Ok(rate.ln() - u);
        }
        if u == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let k = (self.m - 1) as f64;
        Ok(rate.ln() + k * u.ln() - u - self.ln_norm)
    }

    pub fn density(&self, tau: f64) -> Result<f64> {
        Ok(self.ln_density(tau)?.exp())
    }

    /// `(mean, variance)` of the delay distribution.
    pub fn moments(&self) -> (f64, f64) {
        let tn = self.link_time();
        let m = self.m as f64;
        (m * tn, m * tn * tn)
    }

    /// `sigma / mu = 1 / sqrt(m)`.
    pub fn relative_width(&self) -> f64 {
        1.0 / (self.m as f64).sqrt()
    }

    /// Location of the density maximum, `(m - 1) T / N`.
    pub fn mode(&self) -> f64 {
        (self.m - 1) as f64 * self.link_time()
    }

    /// Quadrature horizon: `mean + 12 sigma`, pushed out further in whole
    /// sigmas until the tail mass drops below [`HORIZON_TAIL_MASS`]. Only
    /// the low-index, strongly skewed kernels need the extension.
    pub fn truncation_horizon(&self) -> f64 {
        let (mean, var) = self.moments();
        let sigma = var.sqrt();
        let mut horizon = mean + TRUNCATION_SIGMAS * sigma;
        while self.tail_mass(horizon) >= HORIZON_TAIL_MASS {
            horizon += sigma;
        }
        horizon
    }

    /// Kernel mass beyond delay `tau`.
    pub fn tail_mass(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 1.0;
        }
        gamma_ur(self.m as f64, tau / self.link_time())
    }
}

/// `ln(n!)` accumulated as a sum of logarithms; exact in the sense of not
/// relying on an asymptotic expansion.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// A past trajectory sampled on a uniform grid, newest first:
/// `values[k] = x(t - k * step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHistory {
    step: f64,
    values: Vec<f64>,
}

impl SampledHistory {
    pub fn new(step: f64, values: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Domain(format!("history step must be positive, got {step}")));
        }
        if values.len() < 2 {
            return Err(Error::InsufficientData {
                found: values.len(),
                required: 2,
            });
        }
        Ok(Self { step, values })
    }

    /// Samples `f(-tau)` for `tau = 0, step, ..., span` (rounded up to whole steps).
    pub fn from_fn(f: impl Fn(f64) -> f64, step: f64, span: f64) -> Result<Self> {
        let n = (span / step).ceil().max(1.0) as usize;
        let values = (0..=n).map(|k| f(-(k as f64) * step)).collect();
        Self::new(step, values)
    }

    /// Builds a history from samples stored oldest first, ending at the present.
    pub fn from_chronological(step: f64, mut samples: Vec<f64>) -> Result<Self> {
        samples.reverse();
        Self::new(step, samples)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Time span reached into the past.
    pub fn coverage(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.step
    }
}

/// `int_0^inf x(t - tau) K(tau) dtau` by composite Simpson on the history grid.
pub fn convolve_history(kernel: &GammaKernel, history: &SampledHistory) -> Result<f64> {
    let coverage = history.coverage();
    let truncated = kernel.tail_mass(coverage);
    if truncated >= MAX_TRUNCATED_MASS {
        return Err(Error::Coverage {
            truncated_mass: truncated,
        });
    }
    let h = history.step;
    let span = kernel.truncation_horizon().min(coverage);
    let intervals = ((span / h).ceil() as usize).clamp(1, history.values.len() - 1);
    let integrand: Vec<f64> = history.values[..=intervals]
        .iter()
        .enumerate()
        .map(|(k, &x)| Ok(x * kernel.density(k as f64 * h)?))
        .collect::<Result<_>>()?;
    Ok(simpson_uniform(&integrand, h))
}

/// Composite Simpson on uniformly spaced samples. An odd interval count is
/// closed with the 3/8 rule on the last three intervals.
pub fn simpson_uniform(y: &[f64], h: f64) -> f64 {
    let n = y.len().saturating_sub(1);
    match n {
        0 => 0.0,
        1 => 0.5 * h * (y[0] + y[1]),
        2 => h / 3.0 * (y[0] + 4.0 * y[1] + y[2]),
        3 => 3.0 * h / 8.0 * (y[0] + 3.0 * y[1] + 3.0 * y[2] + y[3]),
        _ => {
            let even = if n % 2 == 0 { n } else { n - 3 };
            let mut acc = y[0] + y[even];
            for k in 1..even {
                acc += if k % 2 == 1 { 4.0 * y[k] } else { 2.0 * y[k] };
            }
            let mut total = h / 3.0 * acc;
            if even < n {
                let t = &y[even..];
                total += 3.0 * h / 8.0 * (t[0] + 3.0 * t[1] + 3.0 * t[2] + t[3]);
            }
            total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_moment(k: &GammaKernel, power: i32) -> f64 {
        let (_, var) = k.moments();
        let h = var.sqrt() / 200.0;
        let span = k.truncation_horizon();
        let n = 2 * ((span / h / 2.0).ceil() as usize);
        let y: Vec<f64> = (0..=n)
            .map(|i| {
                let tau = i as f64 * h;
                tau.powi(power) * k.density(tau).unwrap()
            })
            .collect();
        simpson_uniform(&y, h)
    }

    #[test]
    fn exponential_density_at_origin() {
        let k = GammaKernel::new(1, 1, 2.0).unwrap();
        assert_eq!(k.density(0.0).unwrap(), 0.5);
    }

    #[test]
    fn higher_index_vanishes_at_origin() {
        let k = GammaKernel::new(2, 2, 1.0).unwrap();
        assert_eq!(k.density(0.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_delay_is_a_domain_error() {
        let k = GammaKernel::new(1, 3, 1.0).unwrap();
        assert!(matches!(k.density(-1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_kernels_rejected() {
        assert!(GammaKernel::new(0, 3, 1.0).is_err());
        assert!(GammaKernel::new(4, 3, 1.0).is_err());
        assert!(matches!(GammaKernel::new(1, 0, 1.0), Err(Error::InvalidOrder(0))));
        assert!(GammaKernel::new(1, 1, 0.0).is_err());
    }

    #[test]
    fn large_order_density_matches_extended_precision() {
        // 50-digit evaluation of N^m tau^(m-1) e^(-N tau/T) / ((m-1)! T^m)
        let reference = 0.891_913_393_475_588_950_46;
        let k = GammaKernel::new(500, 500, 10.0).unwrap();
        let v = k.density(10.0).unwrap();
        assert!(((v - reference) / reference).abs() < 1e-10, "{v}");
    }

    #[test]
    fn very_large_order_is_finite() {
        let k = GammaKernel::new(5000, 5000, 10.0).unwrap();
        let v = k.density(10.0).unwrap();
        assert!(v.is_finite() && v > 0.0);
        // Stirling: peak height approaches N / (T sqrt(2 pi N)).
        let approx = 5000.0 / (10.0 * (2.0 * std::f64::consts::PI * 5000.0).sqrt());
        assert!((v / approx - 1.0).abs() < 1e-3);
    }

    #[test]
    fn moments_examples() {
        for n in [1, 7, 100, 2500] {
            let (mean, var) = GammaKernel::terminal(n, 10.0).unwrap().moments();
            assert!((mean - 10.0).abs() < 1e-12);
            assert!((var - 100.0 / n as f64).abs() < 1e-12);
        }
        assert_eq!(GammaKernel::new(1, 1, 2.0).unwrap().moments(), (2.0, 4.0));
        let k = GammaKernel::new(3, 4, 8.0).unwrap();
        assert_eq!(k.moments(), (6.0, 12.0));
        assert!((quad_moment(&k, 1) - 6.0).abs() < 1e-9);
        assert!((quad_moment(&k, 2) - 36.0 - 12.0).abs() < 1e-8);
    }

    #[test]
    fn normalization_and_moments_by_quadrature() {
        for &(m, n, t) in &[(1, 1, 2.0), (3, 4, 8.0), (10, 50, 1.0), (100, 100, 10.0), (250, 1000, 17.5)] {
            let k = GammaKernel::new(m, n, t).unwrap();
            let (mean, var) = k.moments();
            let mass = quad_moment(&k, 0);
            assert!((mass - 1.0).abs() < 1e-8, "mass {mass} for {m},{n},{t}");
            let q_mean = quad_moment(&k, 1);
            let q_var = quad_moment(&k, 2) - q_mean * q_mean;
            assert!(((q_mean - mean) / mean).abs() < 1e-6);
            assert!(((q_var - var) / var).abs() < 1e-6);
            assert!((k.relative_width() - var.sqrt() / mean).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_is_a_stationary_point() {
        for &(m, n, t) in &[(2, 2, 1.0), (5, 9, 3.0), (400, 500, 10.0)] {
            let k = GammaKernel::new(m, n, t).unwrap();
            let mode = k.mode();
            let h = 1e-5 * t;
            let slope = (k.density(mode + h).unwrap() - k.density(mode - h).unwrap()) / (2.0 * h);
            let scale = k.density(mode).unwrap() / k.moments().1.sqrt();
            assert!(slope.abs() < 1e-6 * scale, "slope {slope} at mode {mode}");
            assert!(k.density(mode).unwrap() > k.density(mode + 10.0 * h).unwrap());
            assert!(k.density(mode).unwrap() > k.density(mode - 10.0 * h).unwrap());
        }
    }

    #[test]
    fn mass_concentrates_around_mean_delay() {
        let t = 10.0;
        let outside = |n: usize| {
            let k = GammaKernel::terminal(n, t).unwrap();
            let w = 5.0 * t / (n as f64).sqrt();
            let below = 1.0 - k.tail_mass(t - w);
            below + k.tail_mass(t + w)
        };
        let masses: Vec<f64> = [100, 400, 1600].iter().map(|&n| outside(n)).collect();
        assert!(masses[0] > masses[1] && masses[1] > masses[2], "{masses:?}");
        assert!(masses[2] < 1e-6);
    }

    #[test]
    fn convolution_of_constant_history() {
        let k = GammaKernel::new(3, 10, 5.0).unwrap();
        let hist = SampledHistory::from_fn(|_| 0.7, 0.01, 20.0).unwrap();
        let v = convolve_history(&k, &hist).unwrap();
        assert!((v - 0.7).abs() < 1e-8, "{v}");
    }

    #[test]
    fn convolution_of_ramp_is_shifted_by_the_mean() {
        // history x(s) = s, evaluated at t = 0: result is -mT/N
        for &(m, n, t) in &[(1, 1, 2.0), (3, 4, 8.0), (50, 100, 10.0)] {
            let k = GammaKernel::new(m, n, t).unwrap();
            let step = (k.moments().1.sqrt() / 40.0).min(0.01);
            let hist = SampledHistory::from_fn(|s| s, step, k.truncation_horizon() + 1.0).unwrap();
            let v = convolve_history(&k, &hist).unwrap();
            assert!((v + k.moments().0).abs() < 1e-7, "{v}");
        }
    }

    #[test]
    fn short_history_reports_truncated_mass() {
        let k = GammaKernel::new(10, 10, 10.0).unwrap();
        let hist = SampledHistory::from_fn(|_| 1.0, 0.01, 12.0).unwrap();
        match convolve_history(&k, &hist) {
            Err(Error::Coverage { truncated_mass }) => assert!(truncated_mass > 0.1),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn simpson_handles_odd_interval_counts() {
        // exact for cubics
        for n in 1..9 {
            let h = 1.0 / n as f64;
            let y: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(3)).collect();
            let expected = if n == 1 { 0.5 } else { 0.25 };
            assert!((simpson_uniform(&y, h) - expected).abs() < 1e-14, "n = {n}");
        }
    }
}
