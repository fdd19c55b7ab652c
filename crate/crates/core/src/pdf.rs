//! Probability density kernels: Gaussian, exponential, Poisson, polynomial and
//! coefficient-weighted sums.
//!
//! Every PDF is split into a *prepared* part ([`PdfTerms`]) that depends only on
//! parameters, including the analytic normalization, and a per-event part that
//! depends on the observable. The graph rebuilds the prepared part only when a
//! parameter changes; the per-event part is one inlined expression shared by the
//! scalar path and the batch loops, so both paths perform the same floating-point
//! operations in the same order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::LengthMismatch;
use crate::fastmath::{ExpLog, FastMath, MathProfile, ReferenceMath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdfError {
    #[error("gaussian width must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("poisson mean must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("poisson count must be non-negative, got {0}")]
    NegativeK(f64),
    #[error("poisson count must be an integer, got {0}")]
    NonIntegerK(f64),
    #[error("sum coefficient {index} out of range: {value}")]
    CoefficientOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} sum coefficients for {components} components, got {found}")]
    CoefficientCount {
        components: usize,
        expected: usize,
        found: usize,
    },
    #[error("density is negative at x = {x}")]
    NegativeDensity { x: f64 },
    #[error("normalization integral is not positive: {0}")]
    NonPositiveNormalization(f64),
    #[error("invalid observable range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("expected {expected} input views, got {found}")]
    InputCount { expected: usize, found: usize },
    #[error(transparent)]
    LengthMismatch(#[from] LengthMismatch),
}

/// Finite normalization domain `[lo, hi]` of a continuous observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRange {
    lo: f64,
    hi: f64,
}

impl ObservableRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self, PdfError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(PdfError::InvalidRange { lo, hi })
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Gaussian with parameters folded into multiplication constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianTerms {
    mean: f64,
    inv_sigma: f64,
    inv_norm: f64,
}

impl GaussianTerms {
    pub fn new(mean: f64, sigma: f64, range: ObservableRange) -> Result<Self, PdfError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(PdfError::NonPositiveSigma(sigma));
        }
        let norm = gaussian_integral(mean, sigma, range);
        if !(norm > 0.0) {
            return Err(PdfError::NonPositiveNormalization(norm));
        }
        Ok(Self {
            mean,
            inv_sigma: 1.0 / sigma,
            inv_norm: 1.0 / norm,
        })
    }

    #[inline(always)]
    pub fn density<M: ExpLog>(&self, x: f64) -> f64 {
        let t = (x - self.mean) * self.inv_sigma;
        M::exp(-0.5 * t * t) * self.inv_norm
    }
}

/// `∫_lo^hi exp(-(t - mean)^2 / (2 sigma^2)) dt`, using erfc on the tail side to
/// avoid cancellation when the whole range sits far from the mean.
pub fn gaussian_integral(mean: f64, sigma: f64, range: ObservableRange) -> f64 {
    let scale = sigma * std::f64::consts::SQRT_2;
    let a = (range.lo - mean) / scale;
    let b = (range.hi - mean) / scale;
    let diff = if a >= 0.0 {
        libm::erfc(a) - libm::erfc(b)
    } else if b <= 0.0 {
        libm::erfc(-b) - libm::erfc(-a)
    } else {
        libm::erf(b) - libm::erf(a)
    };
    sigma * (std::f64::consts::PI / 2.0).sqrt() * diff
}

/// `exp(-rate * x)`, evaluated as `exp(-rate * (x - lo))` against the matching integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialTerms {
    rate: f64,
    lo: f64,
    inv_norm: f64,
}

impl ExponentialTerms {
    pub fn new(rate: f64, range: ObservableRange) -> Result<Self, PdfError> {
        let width = range.width();
        // rate = 0 is the uniform limit of -expm1(-rate * w) / rate.
        let norm = if rate == 0.0 {
            width
        } else {
            -libm::expm1(-rate * width) / rate
        };
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(PdfError::NonPositiveNormalization(norm));
        }
        Ok(Self {
            rate,
            lo: range.lo,
            inv_norm: 1.0 / norm,
        })
    }

    #[inline(always)]
    pub fn density<M: ExpLog>(&self, x: f64) -> f64 {
        M::exp(-self.rate * (x - self.lo)) * self.inv_norm
    }
}

/// Poisson mass function evaluated in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonTerms {
    lambda: f64,
    ln_lambda: f64,
}

impl PoissonTerms {
    pub fn new(lambda: f64) -> Result<Self, PdfError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(PdfError::NegativeLambda(lambda));
        }
        Ok(Self {
            lambda,
            ln_lambda: lambda.ln(),
        })
    }

    pub fn check_count(k: f64) -> Result<(), PdfError> {
        if !(k >= 0.0) {
            Err(PdfError::NegativeK(k))
        } else if k.fract() != 0.0 || !k.is_finite() {
            Err(PdfError::NonIntegerK(k))
        } else {
            Ok(())
        }
    }

    /// `k` must already have passed [`PoissonTerms::check_count`].
    #[inline(always)]
    pub fn probability(&self, k: f64) -> f64 {
        if self.lambda == 0.0 {
            // e^0 * 0^k / k!, with 0^0 = 1
            return if k == 0.0 { 1.0 } else { 0.0 };
        }
        (k * self.ln_lambda - self.lambda - libm::lgamma(k + 1.0)).exp()
    }
}

/// Polynomial in `(x - midpoint)` with explicit coefficients from degree 0 upwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTerms {
    coefficients: Vec<f64>,
    midpoint: f64,
    inv_norm: f64,
}

impl PolynomialTerms {
    pub fn new(coefficients: Vec<f64>, range: ObservableRange) -> Result<Self, PdfError> {
        let half = 0.5 * range.width();
        // Odd powers integrate to zero over the symmetric shifted interval.
        let norm: f64 = coefficients
            .iter()
            .enumerate()
            .filter(|(k, _)| k % 2 == 0)
            .map(|(k, c)| c * 2.0 * half.powi(k as i32 + 1) / (k as f64 + 1.0))
            .sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(PdfError::NonPositiveNormalization(norm));
        }
        Ok(Self {
            coefficients,
            midpoint: range.midpoint(),
            inv_norm: 1.0 / norm,
        })
    }

    /// Unnormalized value; may be negative, callers reject that.
    #[inline(always)]
    fn raw(&self, x: f64) -> f64 {
        let u = x - self.midpoint;
        let mut coeffs = self.coefficients.iter().rev();
        let mut acc = coeffs.next().copied().unwrap_or(0.0);
        for &c in coeffs {
            acc = acc * u + c;
        }
        acc
    }

    pub fn density(&self, x: f64) -> Result<f64, PdfError> {
        let v = self.raw(x);
        if v < 0.0 {
            return Err(PdfError::NegativeDensity { x });
        }
        Ok(v * self.inv_norm)
    }
}

/// Fractions of a sum PDF, including the implicit last one.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTerms {
    coefficients: Vec<f64>,
}

impl SumTerms {
    /// `given` holds the first `n - 1` fractions of an `n`-component sum.
    pub fn new(components: usize, given: &[f64]) -> Result<Self, PdfError> {
        if components == 0 || given.len() + 1 != components {
            return Err(PdfError::CoefficientCount {
                components,
                expected: components.saturating_sub(1),
                found: given.len(),
            });
        }
        let mut coefficients = Vec::with_capacity(components);
        let mut rest = 1.0;
        for (index, &c) in given.iter().enumerate() {
            if !(c >= 0.0) {
                return Err(PdfError::CoefficientOutOfRange { index, value: c });
            }
            rest -= c;
            coefficients.push(c);
        }
        if !(rest >= 0.0) {
            return Err(PdfError::CoefficientOutOfRange {
                index: components - 1,
                value: rest,
            });
        }
        coefficients.push(rest);
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    #[inline(always)]
    pub fn combine(&self, densities: impl IntoIterator<Item = f64>) -> f64 {
        let mut terms = self.coefficients.iter().zip(densities);
        let Some((&c0, d0)) = terms.next() else {
            return 0.0;
        };
        let mut acc = c0 * d0;
        for (&c, d) in terms {
            acc += c * d;
        }
        acc
    }
}

/// Parameter-dependent part of a PDF, rebuilt on parameter change.
#[derive(Debug, Clone, PartialEq)]
pub enum PdfTerms {
    Gaussian(GaussianTerms),
    Exponential(ExponentialTerms),
    Poisson(PoissonTerms),
    Polynomial(PolynomialTerms),
    Sum(SumTerms),
}

impl PdfTerms {
    /// Number of per-event input views the batch kernel expects.
    pub fn input_count(&self) -> usize {
        match self {
            PdfTerms::Sum(s) => s.coefficients.len(),
            _ => 1,
        }
    }

    /// Scalar evaluation for one event with reference math. `inputs` is the observable
    /// value, or the component densities for a sum.
    pub fn eval_scalar(&self, inputs: &[f64]) -> Result<f64, PdfError> {
        if inputs.len() != self.input_count() {
            return Err(PdfError::InputCount {
                expected: self.input_count(),
                found: inputs.len(),
            });
        }
        match self {
            PdfTerms::Gaussian(g) => Ok(g.density::<ReferenceMath>(inputs[0])),
            PdfTerms::Exponential(e) => Ok(e.density::<ReferenceMath>(inputs[0])),
            PdfTerms::Poisson(p) => {
                PoissonTerms::check_count(inputs[0])?;
                Ok(p.probability(inputs[0]))
            }
            PdfTerms::Polynomial(p) => p.density(inputs[0]),
            PdfTerms::Sum(s) => Ok(s.combine(inputs.iter().copied())),
        }
    }
}

/// Evaluates a PDF for every event of the input views in one call.
///
/// `inputs` holds one contiguous view per per-event server (the observable column, or
/// one density view per sum component); parameters are already folded into `terms`.
/// The Gaussian, exponential and sum loops are branch-free with no cross-element
/// dependencies. With [`MathProfile::Reference`] each `out[i]` is bit-identical to
/// [`PdfTerms::eval_scalar`] on the same event.
pub fn eval_batch(
    terms: &PdfTerms,
    inputs: &[&[f64]],
    out: &mut [f64],
    profile: MathProfile,
) -> Result<(), PdfError> {
    if inputs.len() != terms.input_count() {
        return Err(PdfError::InputCount {
            expected: terms.input_count(),
            found: inputs.len(),
        });
    }
    for view in inputs {
        LengthMismatch::check(out.len(), view.len())?;
    }
    match profile {
        MathProfile::Reference => eval_batch_with::<ReferenceMath>(terms, inputs, out),
        MathProfile::Fast => eval_batch_with::<FastMath>(terms, inputs, out),
    }
}

fn eval_batch_with<M: ExpLog>(
    terms: &PdfTerms,
    inputs: &[&[f64]],
    out: &mut [f64],
) -> Result<(), PdfError> {
    match terms {
        PdfTerms::Gaussian(g) => {
            for (o, &x) in out.iter_mut().zip(inputs[0]) {
                *o = g.density::<M>(x);
            }
        }
        PdfTerms::Exponential(e) => {
            for (o, &x) in out.iter_mut().zip(inputs[0]) {
                *o = e.density::<M>(x);
            }
        }
        PdfTerms::Poisson(p) => {
            for &k in inputs[0] {
                PoissonTerms::check_count(k)?;
            }
            for (o, &k) in out.iter_mut().zip(inputs[0]) {
                *o = p.probability(k);
            }
        }
        PdfTerms::Polynomial(p) => {
            let xs = inputs[0];
            let mut coeffs = p.coefficients.iter().rev();
            let top = coeffs.next().copied().unwrap_or(0.0);
            out.fill(top);
            for &c in coeffs {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = *o * (x - p.midpoint) + c;
                }
            }
            let mut negative = false;
            for o in out.iter_mut() {
                negative |= *o < 0.0;
                *o *= p.inv_norm;
            }
            if negative {
                let i = out.iter().position(|&v| v < 0.0).unwrap_or(0);
                return Err(PdfError::NegativeDensity { x: xs[i] });
            }
        }
        PdfTerms::Sum(s) => {
            let c0 = s.coefficients[0];
            for (o, &d) in out.iter_mut().zip(inputs[0]) {
                *o = c0 * d;
            }
            for (&c, view) in s.coefficients.iter().zip(inputs).skip(1) {
                for (o, &d) in out.iter_mut().zip(*view) {
                    *o += c * d;
                }
            }
        }
    }
    Ok(())
}

/// Normalized Gaussian density over `range`.
pub fn gaussian_density(x: f64, mean: f64, sigma: f64, range: ObservableRange) -> Result<f64, PdfError> {
    Ok(GaussianTerms::new(mean, sigma, range)?.density::<ReferenceMath>(x))
}

/// Normalized `exp(-rate x)` over `range`; `rate = 0` is uniform.
pub fn exponential_density(x: f64, rate: f64, range: ObservableRange) -> Result<f64, PdfError> {
    Ok(ExponentialTerms::new(rate, range)?.density::<ReferenceMath>(x))
}

/// `e^-λ λ^k / k!`.
pub fn poisson_probability(k: i64, lambda: f64) -> Result<f64, PdfError> {
    if k < 0 {
        return Err(PdfError::NegativeK(k as f64));
    }
    Ok(PoissonTerms::new(lambda)?.probability(k as f64))
}

/// Normalized polynomial `Σ c_k (x - mid)^k` over `range`.
pub fn polynomial_density(x: f64, coefficients: &[f64], range: ObservableRange) -> Result<f64, PdfError> {
    PolynomialTerms::new(coefficients.to_vec(), range)?.density(x)
}

/// `Σ c_i d_i` with the last fraction implied as `1 - Σ others`.
pub fn sum_density(densities: &[f64], coefficients: &[f64]) -> Result<f64, PdfError> {
    let terms = SumTerms::new(densities.len(), coefficients)?;
    Ok(terms.combine(densities.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range(lo: f64, hi: f64) -> ObservableRange {
        ObservableRange::new(lo, hi).unwrap()
    }

    #[test]
    fn gaussian_peak_matches_closed_form() {
        let sigma = 1.7;
        let r = range(2.0 - 8.0 * sigma, 2.0 + 8.0 * sigma);
        let d = gaussian_density(2.0, 2.0, sigma, r).unwrap();
        let exact = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        assert!(((d - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn gaussian_is_symmetric() {
        let r = range(-10.0, 10.0);
        let a = gaussian_density(1.0 + 0.5, 1.0, 0.5, r).unwrap();
        let b = gaussian_density(1.0 - 0.5, 1.0, 0.5, r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_rejects_bad_sigma() {
        let r = range(0.0, 1.0);
        assert_eq!(gaussian_density(0.0, 0.0, 0.0, r), Err(PdfError::NonPositiveSigma(0.0)));
        assert!(matches!(
            gaussian_density(0.0, 0.0, -1.0, r),
            Err(PdfError::NonPositiveSigma(_))
        ));
    }

    #[test]
    fn gaussian_far_tail_range_keeps_precision() {
        // Both range ends 20 sigma above the mean: erf(b) - erf(a) would be exactly 0.
        let r = range(20.0, 21.0);
        let z = gaussian_integral(0.0, 1.0, r);
        assert!(z > 0.0);
        let d = gaussian_density(20.0, 0.0, 1.0, r).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn exponential_uniform_limit() {
        let r = range(0.0, 10.0);
        for x in [0.0, 3.3, 10.0] {
            assert!((exponential_density(x, 0.0, r).unwrap() - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn exponential_wide_range_density_at_zero() {
        let d = exponential_density(0.0, 1.0, range(0.0, 50.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_known_values() {
        assert_eq!(poisson_probability(0, 0.0).unwrap(), 1.0);
        assert_eq!(poisson_probability(3, 0.0).unwrap(), 0.0);
        assert!((poisson_probability(0, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(poisson_probability(-1, 1.0), Err(PdfError::NegativeK(-1.0)));
        assert_eq!(poisson_probability(1, -0.5), Err(PdfError::NegativeLambda(-0.5)));
    }

    #[test]
    fn poisson_rejects_fractional_counts() {
        let p = PdfTerms::Poisson(PoissonTerms::new(2.0).unwrap());
        assert_eq!(p.eval_scalar(&[1.5]), Err(PdfError::NonIntegerK(1.5)));
        let mut out = [0.0; 2];
        assert_eq!(
            eval_batch(&p, &[&[1.0, 2.5]], &mut out, MathProfile::Reference),
            Err(PdfError::NonIntegerK(2.5))
        );
    }

    #[test]
    fn sum_identity_and_convexity() {
        assert_eq!(sum_density(&[0.37], &[]).unwrap(), 0.37);
        let d = 0.123_456;
        assert!((sum_density(&[d, d], &[0.3]).unwrap() - d).abs() <= 1e-15 * d);
        assert!(matches!(
            sum_density(&[1.0, 1.0], &[1.2]),
            Err(PdfError::CoefficientOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            sum_density(&[1.0, 1.0], &[-0.1]),
            Err(PdfError::CoefficientOutOfRange { index: 0, .. })
        ));
        assert!(matches!(sum_density(&[1.0], &[0.5]), Err(PdfError::CoefficientCount { .. })));
    }

    #[test]
    fn polynomial_negative_density_is_an_error() {
        let r = range(-1.0, 1.0);
        // 0.1 + u: negative below u = -0.1, Z = 0.2.
        assert!(polynomial_density(0.5, &[0.1, 1.0], r).is_ok());
        assert_eq!(
            polynomial_density(-0.5, &[0.1, 1.0], r),
            Err(PdfError::NegativeDensity { x: -0.5 })
        );
        let terms = PdfTerms::Polynomial(PolynomialTerms::new(vec![0.1, 1.0], r).unwrap());
        let mut out = [0.0; 3];
        assert!(matches!(
            eval_batch(&terms, &[&[0.0, -0.5, 0.5]], &mut out, MathProfile::Reference),
            Err(PdfError::NegativeDensity { .. })
        ));
    }

    #[test]
    fn polynomial_constant_is_uniform() {
        let r = range(2.0, 6.0);
        assert!((polynomial_density(3.0, &[5.0], r).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_ranges() {
        assert!(ObservableRange::new(1.0, 1.0).is_err());
        assert!(ObservableRange::new(0.0, f64::INFINITY).is_err());
        assert!(ObservableRange::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn batch_length_checks() {
        let g = PdfTerms::Gaussian(GaussianTerms::new(0.0, 1.0, range(-1.0, 1.0)).unwrap());
        let mut out = [0.0; 2];
        assert!(matches!(
            eval_batch(&g, &[&[0.0]], &mut out, MathProfile::Fast),
            Err(PdfError::LengthMismatch(_))
        ));
        assert!(matches!(
            eval_batch(&g, &[], &mut out, MathProfile::Fast),
            Err(PdfError::InputCount { .. })
        ));
        let mut empty: [f64; 0] = [];
        eval_batch(&g, &[&[]], &mut empty, MathProfile::Reference).unwrap();
    }

    #[test]
    fn single_event_batch_is_bit_identical_to_scalar() {
        let r = range(0.0, 10.0);
        let all = [
            PdfTerms::Gaussian(GaussianTerms::new(4.0, 1.3, r).unwrap()),
            PdfTerms::Exponential(ExponentialTerms::new(0.4, r).unwrap()),
            PdfTerms::Poisson(PoissonTerms::new(3.5).unwrap()),
            PdfTerms::Polynomial(PolynomialTerms::new(vec![1.0, 0.1, 0.02], r).unwrap()),
        ];
        for terms in &all {
            let x = 7.0;
            let mut out = [0.0];
            eval_batch(terms, &[&[x]], &mut out, MathProfile::Reference).unwrap();
            assert_eq!(out[0].to_bits(), terms.eval_scalar(&[x]).unwrap().to_bits());
        }
    }
}
