//! Linear stability of the delayed feedback `x' = -b x - a h`.
//!
//! With a sharp delay the characteristic equation is transcendental,
//! `lambda + b + a exp(-lambda T) = 0`. The chain of order `N` replaces it by
//! the polynomial `(b + lambda)(1 + T_N lambda)^N + a` with `T_N = T / N`.
//! Both are solved for their rightmost root, which decides stability of the
//! fixpoint, and the delay at which that root crosses the imaginary axis
//! (the Hopf point) is located for either description.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Residual below which a root counts as converged.
pub const ROOT_TOLERANCE: f64 = 1e-10;

/// Real-part tolerance for a refined Hopf crossing.
pub const HOPF_TOLERANCE: f64 = 1e-10;

/// Upper end of the delay bracket searched for chain Hopf points.
pub const HOPF_SEARCH_LIMIT: f64 = 50.0;

/// Orders up to which the rightmost root is cross-checked by a full eigensolve.
pub const EIGEN_CHECK_ORDER: usize = 50;

/// Orders up to which a dense eigensolve is used as a fallback.
pub const EIGEN_FALLBACK_ORDER: usize = 2000;

const NEWTON_ITERATIONS: usize = 100;
const SCAN_STEP: f64 = 0.05;

/// A root of a characteristic equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenResult {
    pub lambda: Complex64,
    pub delay: f64,
    /// Chain order, `None` for the sharp delay.
    pub order: Option<usize>,
    pub converged: bool,
    pub residual: f64,
}

impl EigenResult {
    pub fn growth_rate(&self) -> f64 {
        self.lambda.re
    }

    pub fn frequency(&self) -> f64 {
        self.lambda.im
    }
}

/// How a Hopf point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopfMethod {
    Analytic,
    Continuation,
    Perturbation,
}

impl HopfMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            HopfMethod::Analytic => "analytic",
            HopfMethod::Continuation => "continuation",
            HopfMethod::Perturbation => "perturbation",
        }
    }
}

/// A critical delay where the fixpoint loses stability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfResult {
    pub delay: f64,
    /// Angular frequency of the marginal mode.
    pub frequency: f64,
    pub order: Option<usize>,
    pub method: HopfMethod,
}

fn check_hopf_exists(a: f64, b: f64) -> Result<()> {
    if !(a > b.abs()) {
        return Err(Error::NoHopf { order: None });
    }
    Ok(())
}

/// Hopf point of the sharp delay: `T = arccos(-b/a) / sqrt(a^2 - b^2)`.
pub fn hopf_analytic(a: f64, b: f64) -> Result<HopfResult> {
    check_hopf_exists(a, b)?;
    let q = (a * a - b * b).sqrt();
    Ok(HopfResult {
        delay: (-b / a).acos() / q,
        frequency: q,
        order: None,
        method: HopfMethod::Analytic,
    })
}

/// First-order coefficient of the Hopf delay in `1/N`.
pub fn perturbation_coefficient(a: f64, b: f64) -> Result<f64> {
    check_hopf_exists(a, b)?;
    let phase = (-b / a).acos();
    let q2 = a * a - b * b;
    let q = q2.sqrt();
    Ok(phase * phase * (b * q + a * a * phase) / (2.0 * q2 * q))
}

/// Hopf delay of the order-`N` chain to first order in `1/N`.
pub fn hopf_perturbation(a: f64, b: f64, order: usize) -> Result<HopfResult> {
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    let base = hopf_analytic(a, b)?;
    let k1 = perturbation_coefficient(a, b)?;
    Ok(HopfResult {
        delay: base.delay + k1 / order as f64,
        order: Some(order),
        method: HopfMethod::Perturbation,
        ..base
    })
}

/// `|reference - approx| / |reference|`.
pub fn relative_deviation(reference: f64, approx: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((reference - approx).abs() / reference.abs())
}

/// Transcendental characteristic function of the sharp delay.
pub fn dde_characteristic(a: f64, b: f64, delay: f64, lambda: Complex64) -> Complex64 {
    lambda + b + a * (-lambda * delay).exp()
}

/// Newton iteration on the transcendental characteristic equation.
pub fn dde_root(a: f64, b: f64, delay: f64, seed: Complex64) -> EigenResult {
    let mut lambda = seed;
    for _ in 0..NEWTON_ITERATIONS {
        let e = (-lambda * delay).exp();
        let f = lambda + b + a * e;
        let df = Complex64::new(1.0, 0.0) - a * delay * e;
        if !f.is_finite() || df.norm() == 0.0 {
            break;
        }
        let step = f / df;
        lambda -= step;
        if step.norm() <= 1e-15 * (1.0 + lambda.norm()) {
            break;
        }
    }
    let residual = dde_characteristic(a, b, delay, lambda).norm();
    EigenResult {
        lambda,
        delay,
        order: None,
        converged: residual.is_finite() && residual < ROOT_TOLERANCE,
        residual,
    }
}

/// Principal branch of the Lambert W function on the complex plane.
pub fn lambert_w0(z: Complex64) -> Complex64 {
    if z.norm() == 0.0 {
        return z;
    }
    let e = std::f64::consts::E;
    let branch = Complex64::new(2.0 * (e * z + 1.0).re, 2.0 * e * z.im);
    let mut w = if (z + 1.0 / e).norm() < 0.3 {
        let p = branch.sqrt();
        -1.0 + p - p * p / 3.0
    } else if z.norm() < 1.0 {
        z * (1.0 - z)
    } else {
        let l = z.ln();
        l - l.ln()
    };
    // Halley iteration on w e^w = z.
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1.norm() < 1e-14 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.norm() <= 1e-16 * (1.0 + w.norm()) {
            break;
        }
    }
    w
}

/// Rightmost root of the transcendental equation.
///
/// For real coefficients the principal Lambert branch gives the dominant
/// root, `lambda = -b + W0(-a T exp(b T)) / T`; Newton polishes it.
pub fn dde_rightmost(a: f64, b: f64, delay: f64) -> Result<EigenResult> {
    if !(delay > 0.0) {
        return Err(Error::Domain(format!("delay must be positive, got {delay}")));
    }
    let z = Complex64::new(-a * delay * (b * delay).exp(), 0.0);
    let mut w = lambert_w0(z);
    // The conjugate pair is reported with a nonnegative imaginary part.
    if w.im < 0.0 {
        w = w.conj();
    }
    let seed = -b + w / delay;
    Ok(dde_root(a, b, delay, seed))
}

fn link_time(delay: f64, order: usize) -> f64 {
    delay / order as f64
}

/// Characteristic polynomial of the order-`N` chain, evaluated in log form.
pub fn chain_poly(a: f64, b: f64, delay: f64, order: usize, lambda: Complex64) -> Result<Complex64> {
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    let base = 1.0 + link_time(delay, order) * lambda;
    if base.norm() == 0.0 {
        return Err(Error::PoleOfLog);
    }
    Ok((b + lambda) * (order as f64 * base.ln()).exp() + a)
}

fn chain_newton(a: f64, b: f64, delay: f64, order: usize, seed: Complex64) -> EigenResult {
    let tn = link_time(delay, order);
    let n = order as f64;
    let mut lambda = seed;
    for _ in 0..NEWTON_ITERATIONS {
        let base = 1.0 + tn * lambda;
        if base.norm() == 0.0 {
            break;
        }
        let power = (n * base.ln()).exp();
        let f = (b + lambda) * power + a;
        let df = power * (1.0 + (b + lambda) * n * tn / base);
        if !f.is_finite() || !df.is_finite() || df.norm() == 0.0 {
            break;
        }
        let step = f / df;
        lambda -= step;
        if step.norm() <= 1e-15 * (1.0 + lambda.norm()) {
            break;
        }
    }
    let residual = chain_poly(a, b, delay, order, lambda)
        .map(|f| f.norm())
        .unwrap_or(f64::INFINITY);
    EigenResult {
        lambda,
        delay,
        order: Some(order),
        converged: residual.is_finite() && residual < ROOT_TOLERANCE,
        residual,
    }
}

/// Jacobian of the linear chain at the origin, state `(x_0, x_1, .., x_N)`.
pub fn chain_jacobian(a: f64, b: f64, delay: f64, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    let rate = 1.0 / link_time(delay, order);
    let mut jac = DMatrix::zeros(order + 1, order + 1);
    jac[(0, 0)] = -b;
    jac[(0, order)] = -a;
    for m in 1..=order {
        jac[(m, m - 1)] = rate;
        jac[(m, m)] = -rate;
    }
    Ok(jac)
}

/// All eigenvalues of the chain Jacobian, by dense Schur decomposition.
pub fn chain_spectrum(a: f64, b: f64, delay: f64, order: usize) -> Result<Vec<Complex64>> {
    let jac = chain_jacobian(a, b, delay, order)?;
    Ok(jac
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect())
}

fn rightmost_of(values: &[Complex64]) -> Complex64 {
    let mut best = values[0];
    for &z in values {
        if z.re > best.re || (z.re == best.re && z.im > best.im) {
            best = z;
        }
    }
    if best.im < 0.0 {
        best.conj()
    } else {
        best
    }
}

fn eigen_rightmost(a: f64, b: f64, delay: f64, order: usize) -> Result<EigenResult> {
    let spectrum = chain_spectrum(a, b, delay, order)?;
    let seed = rightmost_of(&spectrum);
    let polished = chain_newton(a, b, delay, order, seed);
    if polished.converged && (polished.lambda - seed).norm() < 1e-6 * (1.0 + seed.norm()) {
        return Ok(polished);
    }
    let residual = chain_poly(a, b, delay, order, seed)?.norm();
    Ok(EigenResult {
        lambda: seed,
        delay,
        order: Some(order),
        converged: residual < ROOT_TOLERANCE,
        residual,
    })
}

/// Rightmost root of the chain polynomial.
///
/// Newton is seeded from the sharp-delay root. Small orders are resolved by
/// a full eigensolve of the Jacobian, which also serves as the fallback when
/// Newton leaves its basin.
pub fn chain_rightmost(a: f64, b: f64, delay: f64, order: usize) -> Result<EigenResult> {
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    if !(delay > 0.0) {
        return Err(Error::Domain(format!("delay must be positive, got {delay}")));
    }
    if order <= EIGEN_CHECK_ORDER {
        return eigen_rightmost(a, b, delay, order);
    }
    let seed = dde_rightmost(a, b, delay)?.lambda;
    let root = chain_newton(a, b, delay, order, seed);
    if root.converged {
        let mut root = root;
        if root.lambda.im < 0.0 {
            root.lambda = root.lambda.conj();
        }
        return Ok(root);
    }
    if order <= EIGEN_FALLBACK_ORDER {
        return eigen_rightmost(a, b, delay, order);
    }
    Ok(root)
}

/// Follows the rightmost chain root from a previous solution.
fn chain_track(a: f64, b: f64, delay: f64, order: usize, previous: Complex64) -> Result<EigenResult> {
    if order <= EIGEN_CHECK_ORDER {
        return eigen_rightmost(a, b, delay, order);
    }
    let root = chain_newton(a, b, delay, order, previous);
    if root.converged {
        return Ok(root);
    }
    chain_rightmost(a, b, delay, order)
}

/// Hopf point of the order-`N` chain.
///
/// The rightmost root is continued in `T` from the sharp-delay Hopf point up
/// to [`HOPF_SEARCH_LIMIT`]; the first sign change of its real part is then
/// refined by regula falsi until `|Re lambda| < 1e-10`.
pub fn hopf_chain(a: f64, b: f64, order: usize) -> Result<HopfResult> {
    if order == 0 {
        return Err(Error::InvalidOrder(0));
    }
    let no_hopf = Error::NoHopf { order: Some(order) };
    let start = hopf_analytic(a, b).map_err(|_| no_hopf.clone())?.delay;

    let mut lo = chain_rightmost(a, b, start, order)?;
    if lo.growth_rate() >= 0.0 {
        // The chain is already unstable at the sharp-delay point; this does
        // not happen for the feedback studied here but is reported honestly.
        return Err(no_hopf);
    }
    let mut hi = None;
    let steps = ((HOPF_SEARCH_LIMIT - start) / SCAN_STEP).ceil() as usize;
    for k in 1..=steps {
        let delay = (start + k as f64 * SCAN_STEP).min(HOPF_SEARCH_LIMIT);
        let root = chain_track(a, b, delay, order, lo.lambda)?;
        if root.growth_rate() >= 0.0 {
            hi = Some(root);
            break;
        }
        lo = root;
    }
    let mut hi = hi.ok_or(no_hopf)?;

    let mut side = 0i8;
    let mut root = hi;
    for _ in 0..200 {
        let (flo, fhi) = (lo.growth_rate(), hi.growth_rate());
        let (mut wlo, mut whi) = (1.0, 1.0);
        match side {
            1 => wlo = 0.5,
            -1 => whi = 0.5,
            _ => {}
        }
        let delay = (lo.delay * fhi * whi - hi.delay * flo * wlo) / (fhi * whi - flo * wlo);
        let delay = if delay > lo.delay && delay < hi.delay {
            delay
        } else {
            0.5 * (lo.delay + hi.delay)
        };
        root = chain_track(a, b, delay, order, lo.lambda)?;
        if root.growth_rate().abs() < HOPF_TOLERANCE || hi.delay - lo.delay < 1e-14 {
            break;
        }
        if root.growth_rate() < 0.0 {
            lo = root;
            side = if side == -1 { 1 } else { -1 };
        } else {
            hi = root;
            side = if side == 1 { -1 } else { 1 };
        }
    }
    Ok(HopfResult {
        delay: root.delay,
        frequency: root.frequency().abs(),
        order: Some(order),
        method: HopfMethod::Continuation,
    })
}

/// Rightmost root along a list of delays, for the sharp delay (`order = None`)
/// or a chain.
pub fn trace_rightmost(a: f64, b: f64, order: Option<usize>, delays: &[f64]) -> Result<Vec<EigenResult>> {
    let mut out = Vec::with_capacity(delays.len());
    let mut previous: Option<Complex64> = None;
    for &delay in delays {
        let root = match (order, previous) {
            (None, _) => dde_rightmost(a, b, delay)?,
            (Some(n), None) => chain_rightmost(a, b, delay, n)?,
            (Some(n), Some(p)) => chain_track(a, b, delay, n, p)?,
        };
        previous = Some(root.lambda);
        out.push(root);
    }
    Ok(out)
}

/// One row of the Hopf-point table.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfRow {
    pub order: usize,
    /// `None` when the chain has no crossing.
    pub chain: Option<HopfResult>,
    pub deviation: Option<f64>,
    pub perturbation: f64,
}

/// Chain Hopf points and their deviation from the sharp-delay value.
pub fn hopf_table(a: f64, b: f64, orders: &[usize]) -> Result<Vec<HopfRow>> {
    let reference = hopf_analytic(a, b)?.delay;
    orders
        .iter()
        .map(|&order| {
            let perturbation = hopf_perturbation(a, b, order)?.delay;
            match hopf_chain(a, b, order) {
                Ok(h) => Ok(HopfRow {
                    order,
                    deviation: Some(relative_deviation(reference, h.delay)?),
                    chain: Some(h),
                    perturbation,
                }),
                Err(Error::NoHopf { .. }) => Ok(HopfRow { order, chain: None, deviation: None, perturbation }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: f64 = 0.4;
    const B: f64 = 0.1;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn analytic_hopf_examples() {
        let h = hopf_analytic(A, B).unwrap();
        assert!((h.delay - 4.708).abs() < 1e-3);
        assert!((h.frequency - (A * A - B * B).sqrt()).abs() < 1e-15);
        let h = hopf_analytic(1.0, 0.0).unwrap();
        assert!((h.delay - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let h = hopf_analytic(0.5, 0.3).unwrap();
        let (q, t) = (h.frequency, h.delay);
        assert!((0.3 + 0.5 * (q * t).cos()).abs() < 1e-10);
        assert!((q - 0.5 * (q * t).sin()).abs() < 1e-10);
        assert_eq!(hopf_analytic(0.1, 0.1), Err(Error::NoHopf { order: None }));
        assert!(hopf_analytic(-0.4, 0.1).is_err());
    }

    #[test]
    fn perturbation_coefficient_value() {
        let k1 = perturbation_coefficient(A, B).unwrap();
        assert!((k1 - 9.458).abs() < 1e-3, "{k1}");
        let far = hopf_perturbation(A, B, usize::MAX).unwrap().delay;
        assert!((far - hopf_analytic(A, B).unwrap().delay).abs() < 1e-12);
    }

    #[test]
    fn relative_deviation_examples() {
        assert_eq!(relative_deviation(4.708, 4.708).unwrap(), 0.0);
        assert!((relative_deviation(10.0, 11.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(relative_deviation(0.0, 1.0), Err(Error::UndefinedMetric));
    }

    #[test]
    fn dde_root_examples() {
        let r = dde_rightmost(A, B, 1e-6).unwrap();
        assert!((r.lambda - c(-(A + B), 0.0)).norm() < 1e-5);
        let r = dde_rightmost(A, B, 4.708).unwrap();
        assert!(r.converged);
        assert!(r.lambda.re.abs() < 1e-4);
        assert!((r.lambda.im - (A * A - B * B).sqrt()).abs() < 1e-3);
        let t = hopf_analytic(A, B).unwrap().delay;
        let r = dde_rightmost(A, B, t).unwrap();
        assert!(r.lambda.re.abs() < 1e-6);
        assert!(dde_rightmost(A, B, 6.0).unwrap().lambda.re > 0.0);
    }

    #[test]
    fn lambert_w_inverts() {
        for z in [c(0.5, 0.0), c(-0.3, 0.0), c(-2.0, 0.0), c(-30.0, 0.0), c(3.0, 4.0), c(-0.36, 0.01)] {
            let w = lambert_w0(z);
            assert!((w * w.exp() - z).norm() < 1e-12 * (1.0 + z.norm()), "{z}");
        }
        // Principal branch on the real axis above -1/e is real and > -1.
        let w = lambert_w0(c(-0.2, 0.0));
        assert!(w.im.abs() < 1e-14 && w.re > -1.0);
    }

    #[test]
    fn chain_poly_examples() {
        assert!((chain_poly(A, B, 7.0, 5, c(0.0, 0.0)).unwrap() - c(A + B, 0.0)).norm() < 1e-15);
        let t = 3.0;
        assert_eq!(chain_poly(A, B, t, 1, c(-1.0 / t, 0.0)), Err(Error::PoleOfLog));
        // N = 1 reduces to T l^2 + (1 + b T) l + (a + b).
        let disc = Complex64::new((1.0 + B * t).powi(2) - 4.0 * t * (A + B), 0.0).sqrt();
        for sign in [1.0, -1.0] {
            let root = (-(1.0 + B * t) + sign * disc) / (2.0 * t);
            assert!(chain_poly(A, B, t, 1, root).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn chain_poly_tends_to_transcendental() {
        let lambda = c(0.05, 0.3);
        let target = dde_characteristic(A, B, 6.0, lambda);
        let mut last = f64::INFINITY;
        for n in [10, 100, 1000, 10_000] {
            // Divide out the chain factor so both sides share the normalization.
            let factor = (1.0 + lambda * 6.0 / n as f64).powf(n as f64);
            let d = (chain_poly(A, B, 6.0, n, lambda).unwrap() / factor - target).norm();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn polynomial_roots_match_eigensolve() {
        for n in [2, 3, 10, 25, 50] {
            for t in [2.0, 5.0, 9.0] {
                let spectrum = chain_spectrum(A, B, t, n).unwrap();
                let eig = rightmost_of(&spectrum);
                let newton = chain_newton(A, B, t, n, dde_rightmost(A, B, t).unwrap().lambda);
                if newton.converged && (newton.lambda.re - eig.re).abs() < 1e-3 {
                    let l = if newton.lambda.im < 0.0 { newton.lambda.conj() } else { newton.lambda };
                    assert!((l - eig).norm() < 1e-8, "N={n} T={t}: {l} vs {eig}");
                }
                let r = chain_rightmost(A, B, t, n).unwrap();
                assert!(r.converged);
                assert!((r.lambda - eig).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn exponential_kernel_is_always_stable() {
        for k in 1..=1000 {
            let t = 0.1 * k as f64;
            assert!(chain_rightmost(A, B, t, 1).unwrap().lambda.re < 0.0);
        }
        assert_eq!(hopf_chain(A, B, 1), Err(Error::NoHopf { order: Some(1) }));
    }

    #[test]
    fn large_order_is_marginal_at_the_sharp_hopf_point() {
        let t = hopf_analytic(A, B).unwrap().delay;
        let r = chain_rightmost(A, B, t, 10_000).unwrap();
        assert!(r.converged);
        assert!(r.lambda.re < 0.0 && r.lambda.re > -1e-3);
    }

    #[test]
    fn chain_hopf_lies_above_sharp_value() {
        let t = hopf_analytic(A, B).unwrap().delay;
        let h = hopf_chain(A, B, 10).unwrap();
        assert!(h.delay > t);
        let root = chain_rightmost(A, B, h.delay, 10).unwrap();
        assert!(root.lambda.re.abs() < 1e-8);
    }

    #[test]
    fn defining_pair_at_hopf_points() {
        for (a, b) in [(A, B), (0.5, 0.3), (1.0, -0.2)] {
            let h = hopf_analytic(a, b).unwrap();
            let (q, t) = (h.frequency, h.delay);
            assert!((b + a * (q * t).cos()).abs() < 1e-8);
            assert!((q - a * (q * t).sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn compound_interest_limit_has_second_order_error() {
        // (1 + x/k)^k = e^x (1 - x^2 / 2k) + O(1/k^2)
        for x in [-2.0, -0.5, 0.3, 1.0, 2.5] {
            let err = |k: f64| ((1.0 + x / k).powf(k) - x.exp() * (1.0 - x * x / (2.0 * k))).abs();
            let ratio = err(1000.0) / err(2000.0);
            assert!((ratio - 4.0).abs() < 0.1, "x={x}: {ratio}");
        }
    }

    #[test]
    fn hopf_table_marks_missing_crossings() {
        let rows = hopf_table(A, B, &[1, 40]).unwrap();
        assert!(rows[0].chain.is_none());
        let dev = rows[1].deviation.unwrap();
        assert!(dev > 0.04 && dev < 0.06);
    }
}
