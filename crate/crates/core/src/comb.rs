//! Closed-form algebra over finite sums of complex Gaussian terms.
//!
//! A one-dimensional term is
//!
//! ```text
//! amplitude · exp(−(x − center)² / (2·width²)) · exp(i·wavevector·x)
//! ```
//!
//! and a two-dimensional term is
//!
//! ```text
//! amplitude · exp(−½ (v − center)ᵀ A (v − center)) · exp(i·bᵀv)
//! ```
//!
//! Every operation maps each term to a single term of the same family, so
//! wavefunctions, their Fourier transforms, Wigner functions and
//! Gaussian-channel images all stay finite and exact up to the truncation
//! policy in [`Truncation`]. Integrals against piecewise-constant functions
//! reduce to (complex) error functions evaluated at the breakpoints.

use std::f64::consts::{PI, SQRT_2};

use errorfunctions::{ComplexErrorFunctions, RealErrorFunctions};
use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// √π, the GKP lattice unit.
pub const SQRT_PI: f64 = 1.772_453_850_905_516;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    RealErrorFunctions::erfc(x)
}

/// Truncation policy shared by every operation that drops terms or
/// integration intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Absolute bound on the total discarded contribution.
    pub tolerance: f64,
    /// Upper limit on breakpoints visited for a single term before the
    /// integration is declared non-convergent.
    pub max_breakpoints: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation {
            tolerance: 1e-12,
            max_breakpoints: 20_000_000,
        }
    }
}

impl Truncation {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Truncation {
            tolerance,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    Position,
    Momentum,
}

impl Representation {
    pub fn dual(self) -> Self {
        match self {
            Representation::Position => Representation::Momentum,
            Representation::Momentum => Representation::Position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussTerm1D {
    pub amplitude: Complex64,
    pub center: f64,
    pub width: f64,
    pub wavevector: f64,
}

impl GaussTerm1D {
    pub fn new(amplitude: Complex64, center: f64, width: f64, wavevector: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(invalid("width", width, "must be positive and finite"));
        }
        Ok(GaussTerm1D {
            amplitude,
            center,
            width,
            wavevector,
        })
    }

    /// Real-amplitude term without a phase.
    pub fn real(amplitude: f64, center: f64, width: f64) -> Self {
        GaussTerm1D {
            amplitude: Complex64::new(amplitude, 0.0),
            center,
            width,
            wavevector: 0.0,
        }
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        let u = (x - self.center) / self.width;
        self.amplitude * (-0.5 * u * u).exp() * Complex64::from_polar(1.0, self.wavevector * x)
    }

    pub fn conj(&self) -> Self {
        GaussTerm1D {
            amplitude: self.amplitude.conj(),
            wavevector: -self.wavevector,
            ..*self
        }
    }

    /// Pointwise product of two terms.
    pub fn product(&self, other: &Self) -> Self {
        let v1 = self.width * self.width;
        let v2 = other.width * other.width;
        let precision = 1.0 / v1 + 1.0 / v2;
        let center = (self.center / v1 + other.center / v2) / precision;
        let d = self.center - other.center;
        GaussTerm1D {
            amplitude: self.amplitude * other.amplitude * (-d * d / (2.0 * (v1 + v2))).exp(),
            center,
            width: precision.sqrt().recip(),
            wavevector: self.wavevector + other.wavevector,
        }
    }

    /// Unitary Fourier transform, ψ̃(p) = (2π)^(−1/2) ∫ψ(q) e^(−ipq) dq.
    pub fn fourier(&self) -> Self {
        let phase = Complex64::from_polar(1.0, self.wavevector * self.center);
        GaussTerm1D {
            amplitude: self.amplitude * self.width * phase,
            center: self.wavevector,
            width: self.width.recip(),
            wavevector: -self.center,
        }
    }

    /// Convolution with a centred normal density of the given variance.
    pub fn convolve_gaussian(&self, variance: f64) -> Self {
        if variance == 0.0 {
            return *self;
        }
        let s = self.width * self.width;
        let total = s + variance;
        let k = self.wavevector;
        let k_out = k * s / total;
        let damping = (s / total).sqrt() * (-k * k * s * variance / (2.0 * total)).exp();
        GaussTerm1D {
            amplitude: self.amplitude
                * damping
                * Complex64::from_polar(1.0, (k - k_out) * self.center),
            center: self.center,
            width: total.sqrt(),
            wavevector: k_out,
        }
    }

    /// ∫ x^order · term dx over the real line, for order ≤ 2.
    pub fn moment(&self, order: u32) -> Complex64 {
        let w2 = self.width * self.width;
        let k = self.wavevector;
        let base = self.amplitude
            * SQRT_2PI
            * self.width
            * Complex64::from_polar((-0.5 * k * k * w2).exp(), k * self.center);
        let mu = Complex64::new(self.center, k * w2);
        match order {
            0 => base,
            1 => base * mu,
            2 => base * (mu * mu + w2),
            _ => panic!("moments above second order are not supported"),
        }
    }

    pub fn integral(&self) -> Complex64 {
        self.moment(0)
    }

    /// Upper bound on ∫|term| over the real line.
    pub fn abs_mass(&self) -> f64 {
        self.amplitude.norm() * SQRT_2PI * self.width
    }

    /// Integral of the term against `f`, returning (value, discarded bound).
    fn integrate_step(
        &self,
        f: &PiecewiseSign,
        budget: f64,
        max_breakpoints: usize,
    ) -> Result<(Complex64, f64)> {
        let fmax = f.max_abs();
        let full_bound = self.abs_mass() * fmax;
        if full_bound <= budget || fmax == 0.0 {
            return Ok((Complex64::new(0.0, 0.0), full_bound));
        }
        let ratio = budget / full_bound;
        let mut half = (2.0 * (1.0 / ratio).ln()).sqrt().max(1.0);
        while erfc(half / SQRT_2) > ratio {
            half += 0.25;
        }
        let tail = full_bound * erfc(half / SQRT_2);
        let lo = self.center - half * self.width;
        let hi = self.center + half * self.width;

        let segment = f.segment_length();
        let count = ((hi - lo) / segment).ceil() as usize + 1;
        if count > max_breakpoints {
            return Err(Error::Truncation {
                tail: full_bound,
                tolerance: budget,
            });
        }

        let kernel = StepKernel::new(self);
        // Σ_segments v·(G(right) − G(left)) telescoped onto the breakpoints.
        let mut signs = 0.0;
        let mut tails = Complex64::new(0.0, 0.0);
        let mut add = |weight: f64, x: f64| {
            if weight != 0.0 {
                let (s, t) = kernel.antiderivative(x);
                signs += weight * s;
                tails += weight * t;
            }
        };
        let first_value = f.value_at(lo);
        add(-first_value, lo);
        let mut current = first_value;
        let mut index = f.first_breakpoint_after(lo);
        loop {
            let x = f.breakpoint(index);
            if x >= hi {
                break;
            }
            let next = f.value_on_segment(index);
            add(current - next, x);
            current = next;
            index += 1;
        }
        add(current, hi);

        let value = (kernel.envelope * signs - tails) * ((PI / 2.0).sqrt() * self.width);
        Ok((self.amplitude * value, tail))
    }
}

/// Antiderivative helper for exp(−(x−c)²/(2w²) + ikx).
///
/// The antiderivative is √(π/2)·w·G(x) with G(x) = σ·E − σ·e^{φ(x)}·w(σ·i·u)
/// where σ = sign(x − c), E = e^{ikc − k²w²/2}, φ is the log-integrand and w
/// the Faddeeva function. The argument σ·i·u always lies in the closed upper
/// half-plane, where w is bounded, so no intermediate overflows.
struct StepKernel {
    center: f64,
    width: f64,
    wavevector: f64,
    envelope: Complex64,
}

impl StepKernel {
    fn new(term: &GaussTerm1D) -> Self {
        let k = term.wavevector;
        let w = term.width;
        StepKernel {
            center: term.center,
            width: w,
            wavevector: k,
            envelope: Complex64::from_polar((-0.5 * k * k * w * w).exp(), k * term.center),
        }
    }

    /// Returns (σ, σ·e^{φ(x)}·w(σ·i·u)).
    fn antiderivative(&self, x: f64) -> (f64, Complex64) {
        let t = (x - self.center) / (SQRT_2 * self.width);
        let sigma = if t >= 0.0 { 1.0 } else { -1.0 };
        if self.wavevector == 0.0 {
            return (sigma, Complex64::new(sigma * erfc(t.abs()), 0.0));
        }
        let u = Complex64::new(t, -self.wavevector * self.width / SQRT_2);
        let arg = Complex64::new(0.0, sigma) * u;
        let phi = Complex64::new(-t * t, self.wavevector * x);
        (sigma, sigma * phi.exp() * arg.w())
    }
}

/// A finite or periodic piecewise-constant function.
///
/// The period `[offset + n·period, offset + (n+1)·period)` is split into
/// `pattern.len()` equal segments carrying the pattern values in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseSign {
    pub period: f64,
    pub offset: f64,
    pub pattern: Vec<f64>,
}

impl PiecewiseSign {
    pub fn new(period: f64, offset: f64, pattern: Vec<f64>) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(invalid("period", period, "must be positive and finite"));
        }
        if pattern.is_empty() {
            return Err(invalid("pattern", 0.0, "must not be empty"));
        }
        Ok(PiecewiseSign {
            period,
            offset,
            pattern,
        })
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseSign {
            period: 1.0,
            offset: 0.0,
            pattern: vec![value],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.pattern.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn segment_length(&self) -> f64 {
        self.period / self.pattern.len() as f64
    }

    /// Global index of the segment containing `x`.
    fn segment_index(&self, x: f64) -> i64 {
        ((x - self.offset) / self.segment_length()).floor() as i64
    }

    fn value_on_segment(&self, index: i64) -> f64 {
        let m = self.pattern.len() as i64;
        self.pattern[index.rem_euclid(m) as usize]
    }

    pub fn value_at(&self, x: f64) -> f64 {
        self.value_on_segment(self.segment_index(x))
    }

    /// Left edge of segment `index`.
    fn breakpoint(&self, index: i64) -> f64 {
        self.offset + index as f64 * self.segment_length()
    }

    fn first_breakpoint_after(&self, x: f64) -> i64 {
        let mut i = self.segment_index(x) + 1;
        while self.breakpoint(i) <= x {
            i += 1;
        }
        i
    }
}

/// An integral together with the bound on what truncation discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepIntegral {
    pub value: Complex64,
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comb1D {
    pub terms: Vec<GaussTerm1D>,
    pub representation: Representation,
}

impl Comb1D {
    pub fn new(terms: Vec<GaussTerm1D>, representation: Representation) -> Self {
        Comb1D {
            terms,
            representation,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn conj(&self) -> Self {
        Comb1D::new(
            self.terms.iter().map(GaussTerm1D::conj).collect(),
            self.representation,
        )
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm1D {
                amplitude: t.amplitude * factor,
                ..*t
            })
            .collect();
        Comb1D::new(terms, self.representation)
    }

    /// ψ(x) → ψ(x − shift).
    pub fn shift(&self, shift: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm1D {
                amplitude: t.amplitude * Complex64::from_polar(1.0, -t.wavevector * shift),
                center: t.center + shift,
                ..*t
            })
            .collect();
        Comb1D::new(terms, self.representation)
    }

    /// Termwise product; |a|·|b| terms, no pruning.
    pub fn product(&self, other: &Comb1D) -> Result<Comb1D> {
        if self.representation != other.representation {
            return Err(Error::RepresentationMismatch {
                left: self.representation,
                right: other.representation,
            });
        }
        let mut terms = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(a.product(b));
            }
        }
        Ok(Comb1D::new(terms, self.representation))
    }

    pub fn fourier(&self) -> Comb1D {
        Comb1D::new(
            self.terms.iter().map(GaussTerm1D::fourier).collect(),
            self.representation.dual(),
        )
    }

    pub fn convolve_gaussian(&self, variance: f64) -> Comb1D {
        Comb1D::new(
            self.terms
                .iter()
                .map(|t| t.convolve_gaussian(variance))
                .collect(),
            self.representation,
        )
    }

    /// ∫ conj(self)·other over the real line.
    pub fn inner(&self, other: &Comb1D) -> Result<Complex64> {
        if self.representation != other.representation {
            return Err(Error::RepresentationMismatch {
                left: self.representation,
                right: other.representation,
            });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for a in &self.terms {
            let a = a.conj();
            for b in &other.terms {
                acc += a.product(b).integral();
            }
        }
        Ok(acc)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.inner(self).map(|z| z.re).unwrap_or(0.0)
    }

    pub fn normalized(&self) -> Comb1D {
        let n = self.norm_sqr().sqrt();
        self.scale(Complex64::new(1.0 / n, 0.0))
    }

    pub fn moment(&self, order: u32) -> Complex64 {
        self.terms.iter().map(|t| t.moment(order)).sum()
    }

    pub fn integral(&self) -> Complex64 {
        self.moment(0)
    }

    /// Drops terms whose absolute mass is below `tolerance / len`.
    /// Returns the pruned comb and the bound on what was dropped.
    pub fn pruned(&self, tolerance: f64) -> (Comb1D, f64) {
        let cut = tolerance / self.len().max(1) as f64;
        let mut dropped = 0.0;
        let mut kept = Vec::with_capacity(self.len());
        for t in &self.terms {
            let m = t.abs_mass();
            if m < cut {
                dropped += m;
            } else {
                kept.push(*t);
            }
        }
        (Comb1D::new(kept, self.representation), dropped)
    }

    /// Merges terms sharing (width, center, wavevector) up to rounding.
    pub fn simplified(&self) -> Comb1D {
        const SCALE: f64 = 1e11;
        let key = |t: &GaussTerm1D| {
            (
                (t.width * SCALE).round() as i64,
                (t.center * SCALE).round() as i64,
                (t.wavevector * SCALE).round() as i64,
            )
        };
        let mut keyed: Vec<_> = self.terms.iter().map(|t| (key(t), *t)).collect();
        keyed.sort_by_key(|(k, _)| *k);
        let mut out: Vec<GaussTerm1D> = Vec::with_capacity(keyed.len());
        let mut last = None;
        for (k, t) in keyed {
            if last == Some(k) {
                if let Some(prev) = out.last_mut() {
                    prev.amplitude += t.amplitude;
                }
            } else {
                out.push(t);
                last = Some(k);
            }
        }
        Comb1D::new(out, self.representation)
    }

    /// ∫ self(x)·f(x) dx with the truncation policy applied.
    pub fn integrate_step(&self, f: &PiecewiseSign, trunc: &Truncation) -> Result<StepIntegral> {
        let budget = trunc.tolerance / self.len().max(1) as f64;
        let mut value = Complex64::new(0.0, 0.0);
        let mut tail_bound = 0.0;
        for t in &self.terms {
            let (v, tail) = t.integrate_step(f, budget, trunc.max_breakpoints)?;
            value += v;
            tail_bound += tail;
        }
        Ok(StepIntegral { value, tail_bound })
    }

    /// ∫ self(x) dx over [lo, hi], no truncation.
    pub fn integrate_interval(&self, lo: f64, hi: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| {
                let k = StepKernel::new(t);
                let (sa, ta) = k.antiderivative(lo);
                let (sb, tb) = k.antiderivative(hi);
                t.amplitude * (k.envelope * (sb - sa) - (tb - ta)) * ((PI / 2.0).sqrt() * t.width)
            })
            .sum()
    }

    /// Closed-form Wigner function of the operator |self⟩⟨other|:
    /// W(q,p) = (1/π) ∫ self(q+y)·conj(other(q−y))·e^(−2ipy) dy.
    ///
    /// Every pair of terms must share a width; the cross-Wigner of unequal
    /// widths carries an imaginary q·p coupling outside the 2D term family.
    pub fn wigner_cross(&self, other: &Comb1D) -> Result<Comb2D> {
        let mut terms = Vec::with_capacity(self.len() * other.len());
        for a in &self.terms {
            for b in &other.terms {
                if (a.width - b.width).abs() > 1e-12 * a.width.max(b.width) {
                    return Err(Error::UnequalWidths {
                        left: a.width,
                        right: b.width,
                    });
                }
                let w = a.width;
                let dc = a.center - b.center;
                let q0 = 0.5 * (a.center + b.center);
                let p0 = 0.5 * (a.wavevector + b.wavevector);
                let amplitude = a.amplitude * b.amplitude.conj() * (w / PI.sqrt())
                    * Complex64::from_polar(1.0, dc * p0);
                terms.push(GaussTerm2D {
                    amplitude,
                    center: Vector2::new(q0, p0),
                    quadratic: Matrix2::new(2.0 / (w * w), 0.0, 0.0, 2.0 * w * w),
                    phase_vector: Vector2::new(a.wavevector - b.wavevector, -dc),
                });
            }
        }
        Ok(Comb2D { terms })
    }
}

/// Integrates conj(a)·b·f over the real line.
pub fn integrate_against_step(
    a: &Comb1D,
    b: &Comb1D,
    f: &PiecewiseSign,
    trunc: &Truncation,
) -> Result<StepIntegral> {
    let density = a.conj().product(b)?.simplified();
    density.integrate_step(f, trunc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussTerm2D {
    pub amplitude: Complex64,
    pub center: Vector2<f64>,
    pub quadratic: Matrix2<f64>,
    pub phase_vector: Vector2<f64>,
}

impl GaussTerm2D {
    pub fn new(
        amplitude: Complex64,
        center: Vector2<f64>,
        quadratic: Matrix2<f64>,
        phase_vector: Vector2<f64>,
    ) -> Result<Self> {
        let asym = (quadratic[(0, 1)] - quadratic[(1, 0)]).abs();
        if asym > 1e-14 * quadratic.abs().max() {
            return Err(invalid("quadratic", asym, "must be symmetric"));
        }
        let det = quadratic.determinant();
        if !(quadratic[(0, 0)] > 0.0 && det > 0.0) {
            return Err(invalid("quadratic", det, "must be positive definite"));
        }
        Ok(GaussTerm2D {
            amplitude,
            center,
            quadratic,
            phase_vector,
        })
    }

    /// Normalized Wigner term of a Gaussian state with covariance `cov`.
    pub fn gaussian_state(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self> {
        let det = cov.determinant();
        let quadratic = cov
            .try_inverse()
            .ok_or(invalid("covariance", det, "must be invertible"))?;
        GaussTerm2D::new(
            Complex64::new(1.0 / (2.0 * PI * det.sqrt()), 0.0),
            mean,
            quadratic,
            Vector2::zeros(),
        )
    }

    pub fn eval(&self, q: f64, p: f64) -> Complex64 {
        let v = Vector2::new(q, p);
        let u = v - self.center;
        let quad = u.dot(&(self.quadratic * u));
        self.amplitude * Complex64::from_polar((-0.5 * quad).exp(), self.phase_vector.dot(&v))
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        self.quadratic
            .try_inverse()
            .expect("quadratic form is positive definite")
    }

    /// ∬ term dq dp.
    pub fn integral(&self) -> Complex64 {
        let cov = self.covariance();
        let b = self.phase_vector;
        let damping = (-0.5 * b.dot(&(cov * b))).exp();
        self.amplitude
            * (2.0 * PI / self.quadratic.determinant().sqrt())
            * Complex64::from_polar(damping, b.dot(&self.center))
    }

    pub fn product(&self, other: &Self) -> Self {
        let a = self.quadratic + other.quadratic;
        let cov = a.try_inverse().expect("sum of positive-definite forms");
        let rhs = self.quadratic * self.center + other.quadratic * other.center;
        let center = cov * rhs;
        let c1 = self.center.dot(&(self.quadratic * self.center));
        let c2 = other.center.dot(&(other.quadratic * other.center));
        let c = center.dot(&(a * center));
        GaussTerm2D {
            amplitude: self.amplitude * other.amplitude * (-0.5 * (c1 + c2 - c)).exp(),
            center,
            quadratic: a,
            phase_vector: self.phase_vector + other.phase_vector,
        }
    }

    /// Integrates out one coordinate (0 = q, 1 = p) and returns the 1D term
    /// in the remaining coordinate.
    pub fn marginal(&self, integrate_out: usize) -> GaussTerm1D {
        let (keep, drop) = match integrate_out {
            0 => (1, 0),
            _ => (0, 1),
        };
        let a = &self.quadratic;
        let akk = a[(keep, keep)];
        let add = a[(drop, drop)];
        let akd = a[(keep, drop)];
        let b = self.phase_vector;
        let precision = akk - akd * akd / add;
        let k = b[keep] - b[drop] * akd / add;
        let c = self.center;
        let factor = (2.0 * PI / add).sqrt() * (-b[drop] * b[drop] / (2.0 * add)).exp();
        let phase = b.dot(&c) - k * c[keep];
        GaussTerm1D {
            amplitude: self.amplitude * Complex64::from_polar(factor, phase),
            center: c[keep],
            width: precision.sqrt().recip(),
            wavevector: k,
        }
    }

    fn channel(&self, scale: &Matrix2<f64>, scale_inv: &Matrix2<f64>, det: f64, noise: &Matrix2<f64>) -> Self {
        // Phase-space rescaling: W(S⁻¹v)/|det S|.
        let center = scale * self.center;
        let quadratic = scale_inv.transpose() * self.quadratic * scale_inv;
        let b = scale_inv.transpose() * self.phase_vector;
        let amplitude = self.amplitude / det.abs();
        if noise.iter().all(|x| *x == 0.0) {
            return GaussTerm2D {
                amplitude,
                center,
                quadratic,
                phase_vector: b,
            };
        }
        // Convolution with N(0, noise), keeping the center real by moving the
        // phase into a damped phase vector.
        let cov = quadratic.try_inverse().expect("positive definite");
        let cov_out = cov + noise;
        let quadratic_out = cov_out.try_inverse().expect("positive definite");
        let sb = cov * b;
        let b_out = quadratic_out * sb;
        let log_mag = -0.5 * b.dot(&sb) + 0.5 * sb.dot(&(quadratic_out * sb));
        let ratio = (cov.determinant() / cov_out.determinant()).sqrt();
        let phase = (b - b_out).dot(&center);
        GaussTerm2D {
            amplitude: amplitude * Complex64::from_polar(ratio * log_mag.exp(), phase),
            center,
            quadratic: symmetrize(quadratic_out),
            phase_vector: b_out,
        }
    }
}

fn symmetrize(m: Matrix2<f64>) -> Matrix2<f64> {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Finite sum of 2D Gaussian terms, used for Wigner functions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comb2D {
    pub terms: Vec<GaussTerm2D>,
}

impl Comb2D {
    pub fn new(terms: Vec<GaussTerm2D>) -> Self {
        Comb2D { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, q: f64, p: f64) -> Complex64 {
        self.terms.iter().map(|t| t.eval(q, p)).sum()
    }

    pub fn integral(&self) -> Complex64 {
        self.terms.iter().map(GaussTerm2D::integral).sum()
    }

    /// ∬ self·other dq dp.
    pub fn overlap(&self, other: &Comb2D) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for a in &self.terms {
            for b in &other.terms {
                acc += a.product(b).integral();
            }
        }
        acc
    }

    /// Marginal density in q (`Representation::Position`) or p.
    pub fn marginal(&self, keep: Representation) -> Comb1D {
        let drop = match keep {
            Representation::Position => 1,
            Representation::Momentum => 0,
        };
        Comb1D::new(self.terms.iter().map(|t| t.marginal(drop)).collect(), keep)
    }

    /// Gaussian channel v → scale·v followed by convolution with N(0, noise).
    pub fn apply_gaussian_channel(&self, scale: &Matrix2<f64>, noise: &Matrix2<f64>) -> Result<Comb2D> {
        let det = scale.determinant();
        let scale_inv = match scale.try_inverse() {
            Some(inv) if det.abs() > 1e-300 => inv,
            _ => return Err(Error::SingularScale { det }),
        };
        let eig = noise.symmetric_eigenvalues();
        if eig.iter().any(|e| *e < -1e-14) {
            return Err(invalid("noise", eig.min(), "must be positive semi-definite"));
        }
        Ok(Comb2D::new(
            self.terms
                .iter()
                .map(|t| t.channel(scale, &scale_inv, det, noise))
                .collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_comb(rng: &mut ChaCha8Rng, n: usize) -> Comb1D {
        let terms = (0..n)
            .map(|_| GaussTerm1D {
                amplitude: Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                center: rng.gen_range(-3.0..3.0),
                width: rng.gen_range(0.3..1.5),
                wavevector: rng.gen_range(-2.0..2.0),
            })
            .collect();
        Comb1D::new(terms, Representation::Position)
    }

    fn riemann<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    /// Midpoint rule on each constant segment of `f`, so no cell straddles
    /// a jump.
    fn piecewise_quadrature<G: Fn(f64) -> f64>(g: G, f: &PiecewiseSign, lo: f64, hi: f64) -> f64 {
        let seg = f.segment_length();
        let mut edges = vec![lo];
        let mut i = f.first_breakpoint_after(lo);
        while f.breakpoint(i) < hi {
            edges.push(f.breakpoint(i));
            i += 1;
        }
        edges.push(hi);
        edges
            .windows(2)
            .map(|e| riemann(&g, e[0], e[1], (20_000.0 * (e[1] - e[0]) / seg).ceil() as usize))
            .sum()
    }

    fn vacuum() -> Comb1D {
        Comb1D::new(
            vec![GaussTerm1D::real(PI.powf(-0.25), 0.0, 1.0)],
            Representation::Position,
        )
    }

    #[test]
    fn term_at_center_is_amplitude_times_phase() {
        let t = GaussTerm1D::new(Complex64::new(0.3, -0.7), 1.25, 0.4, 2.0).unwrap();
        let expect = t.amplitude * Complex64::from_polar(1.0, 2.0 * 1.25);
        assert_eq!(t.eval(1.25), expect);
        assert!(GaussTerm1D::new(Complex64::new(1.0, 0.0), 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn product_of_identical_unit_gaussians() {
        let g = Comb1D::new(vec![GaussTerm1D::real(1.0, 0.0, 1.0)], Representation::Position);
        let p = g.product(&g).unwrap();
        assert_eq!(p.len(), 1);
        assert_abs_diff_eq!(p.terms[0].width, 1.0 / SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(0.0).re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn product_with_zero_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_comb(&mut rng, 3);
        let z = Comb1D::new(vec![GaussTerm1D::real(0.0, 0.5, 1.0)], Representation::Position);
        assert!(a.product(&z).unwrap().terms.iter().all(|t| t.amplitude == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn product_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_comb(&mut rng, 2);
        let b = random_comb(&mut rng, 3);
        let p = a.product(&b).unwrap();
        assert_eq!(p.len(), 6);
        for _ in 0..50 {
            let x = rng.gen_range(-4.0..4.0);
            let expect = a.eval(x) * b.eval(x);
            assert!((p.eval(x) - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn product_rejects_mixed_representations() {
        let a = vacuum();
        let b = a.fourier();
        assert!(matches!(a.product(&b), Err(Error::RepresentationMismatch { .. })));
    }

    #[test]
    fn vacuum_is_fourier_invariant() {
        let v = vacuum();
        let f = v.fourier();
        assert_eq!(f.representation, Representation::Momentum);
        for x in [-2.0, -0.3, 0.0, 0.7, 1.9] {
            assert_abs_diff_eq!((f.eval(x) - v.eval(x)).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn double_fourier_is_parity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_comb(&mut rng, 4);
        let ff = a.fourier().fourier();
        for _ in 0..50 {
            let x = rng.gen_range(-4.0..4.0);
            assert!((ff.eval(x) - a.eval(-x)).norm() < 1e-12);
        }
    }

    #[test]
    fn fourier_matches_numerical_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_comb(&mut rng, 3);
        let f = a.fourier();
        for p in [-1.3, 0.0, 0.4, 2.2] {
            let re = riemann(|q| (a.eval(q) * Complex64::from_polar(1.0, -p * q)).re, -15.0, 15.0, 60_000);
            let im = riemann(|q| (a.eval(q) * Complex64::from_polar(1.0, -p * q)).im, -15.0, 15.0, 60_000);
            let expect = Complex64::new(re, im) / SQRT_2PI;
            assert!((f.eval(p) - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn parseval_on_random_combs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_comb(&mut rng, 5).normalized();
            assert_abs_diff_eq!(a.norm_sqr(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a.fourier().norm_sqr(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn moments_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_comb(&mut rng, 3);
        for order in 0..=2 {
            let m = a.moment(order);
            let re = riemann(|x| x.powi(order as i32) * a.eval(x).re, -20.0, 20.0, 80_000);
            let im = riemann(|x| x.powi(order as i32) * a.eval(x).im, -20.0, 20.0, 80_000);
            assert!((m - Complex64::new(re, im)).norm() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn convolution_matches_quadrature() {
        let t = GaussTerm1D::new(Complex64::new(0.8, 0.2), 0.7, 0.5, 3.0).unwrap();
        let var = 0.3;
        let c = t.convolve_gaussian(var);
        for x in [-1.0, 0.2, 0.7, 1.9] {
            let kernel = |y: f64| (-(x - y) * (x - y) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt();
            let re = riemann(|y| t.eval(y).re * kernel(y), -10.0, 10.0, 80_000);
            let im = riemann(|y| t.eval(y).im * kernel(y), -10.0, 10.0, 80_000);
            assert!((c.eval(x) - Complex64::new(re, im)).norm() < 1e-10);
        }
    }

    fn gkp_sign() -> PiecewiseSign {
        PiecewiseSign::new(2.0 * SQRT_PI, -0.5 * SQRT_PI, vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn sign_function_layout() {
        let z = gkp_sign();
        assert_eq!(z.value_at(0.0), 1.0);
        assert_eq!(z.value_at(SQRT_PI), -1.0);
        assert_eq!(z.value_at(-SQRT_PI), -1.0);
        assert_eq!(z.value_at(2.0 * SQRT_PI), 1.0);
        assert_eq!(z.value_at(0.49 * SQRT_PI), 1.0);
        assert_eq!(z.value_at(0.51 * SQRT_PI), -1.0);
    }

    #[test]
    fn narrow_gaussian_in_central_and_odd_bins() {
        let trunc = Truncation::default();
        let w = 0.1;
        let amp = (PI * w * w).powf(-0.25);
        for (center, expect) in [(0.0, 1.0), (SQRT_PI, -1.0)] {
            let g = Comb1D::new(vec![GaussTerm1D::real(amp, center, w)], Representation::Position);
            let r = integrate_against_step(&g, &g, &gkp_sign(), &trunc).unwrap();
            assert_abs_diff_eq!(r.value.re, expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_step_is_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trunc = Truncation::default();
        for _ in 0..10 {
            let a = random_comb(&mut rng, 4);
            let b = random_comb(&mut rng, 3);
            let r = integrate_against_step(&a, &b, &PiecewiseSign::constant(1.0), &trunc).unwrap();
            let direct = a.inner(&b).unwrap();
            assert!((r.value - direct).norm() < 1e-10);
        }
    }

    #[test]
    fn oscillating_terms_match_quadrature() {
        // Complex-erf path: wavevectors up to a few units.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let trunc = Truncation::default();
        let f = gkp_sign();
        for _ in 0..20 {
            let a = random_comb(&mut rng, 3);
            let b = random_comb(&mut rng, 2);
            let r = integrate_against_step(&a, &b, &f, &trunc).unwrap();
            let g = |x: f64| a.eval(x).conj() * b.eval(x) * f.value_at(x);
            let re = piecewise_quadrature(|x| g(x).re, &f, -16.0, 16.0);
            let im = piecewise_quadrature(|x| g(x).im, &f, -16.0, 16.0);
            assert!((r.value - Complex64::new(re, im)).norm() < 1e-7, "{:?} vs {re} {im}", r.value);
        }
    }

    #[test]
    fn large_wavevectors_do_not_overflow() {
        let t = GaussTerm1D::new(Complex64::new(1.0, 0.0), 0.0, 8.0, 60.0).unwrap();
        let c = Comb1D::new(vec![t], Representation::Momentum);
        let r = c.integrate_step(&gkp_sign(), &Truncation::default()).unwrap();
        assert!(r.value.re.is_finite() && r.value.im.is_finite());
        assert!(r.value.norm() < 1.0);
    }

    #[test]
    fn truncation_error_when_breakpoints_exceed_budget() {
        let t = GaussTerm1D::real(1.0, 0.0, 1e6);
        let c = Comb1D::new(vec![t], Representation::Position);
        let trunc = Truncation {
            tolerance: 1e-12,
            max_breakpoints: 1000,
        };
        assert!(matches!(c.integrate_step(&gkp_sign(), &trunc), Err(Error::Truncation { .. })));
    }

    #[test]
    fn truncation_tail_bound_is_sound() {
        // Loose tolerance so the discarded mass is large enough to measure.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let f = gkp_sign();
        let trunc = Truncation::with_tolerance(1e-4);
        for _ in 0..20 {
            let a = Comb1D::new(
                (0..3)
                    .map(|_| GaussTerm1D::real(rng.gen_range(0.1..1.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.3..1.2)))
                    .collect(),
                Representation::Position,
            );
            let r = a.integrate_step(&f, &trunc).unwrap();
            let exact = piecewise_quadrature(|x| a.eval(x).re * f.value_at(x), &f, -20.0, 20.0);
            let discarded = (r.value.re - exact).abs();
            assert!(r.tail_bound + 1e-9 >= discarded, "bound {} < discarded {}", r.tail_bound, discarded);
        }
    }

    #[test]
    fn identity_channel_is_identity() {
        let w = vacuum().wigner_cross(&vacuum()).unwrap();
        let out = w.apply_gaussian_channel(&Matrix2::identity(), &Matrix2::zeros()).unwrap();
        for (a, b) in w.terms.iter().zip(&out.terms) {
            assert!((a.amplitude - b.amplitude).norm() < 1e-14);
            assert!((a.center - b.center).norm() < 1e-14);
            assert!((a.quadratic - b.quadratic).norm() < 1e-14);
        }
    }

    #[test]
    fn vacuum_is_fixed_point_of_loss() {
        let w = vacuum().wigner_cross(&vacuum()).unwrap();
        assert_abs_diff_eq!(w.eval(0.0, 0.0).re, 1.0 / PI, epsilon = 1e-15);
        for eta in [0.1, 0.5, 0.93] {
            let out = w
                .apply_gaussian_channel(&(Matrix2::identity() * f64::sqrt(eta)), &(Matrix2::identity() * (0.5 * (1.0 - eta))))
                .unwrap();
            for (q, p) in [(0.0, 0.0), (0.5, -0.3), (1.2, 0.8)] {
                assert_abs_diff_eq!((out.eval(q, p) - w.eval(q, p)).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn singular_scale_is_rejected() {
        let w = vacuum().wigner_cross(&vacuum()).unwrap();
        let r = w.apply_gaussian_channel(&Matrix2::new(1.0, 0.0, 0.0, 0.0), &Matrix2::zeros());
        assert!(matches!(r, Err(Error::SingularScale { .. })));
    }

    #[test]
    fn displaced_vacuum_moments_under_loss() {
        // Oracle: first and second moments by dense 2D quadrature.
        let term = GaussTerm2D::gaussian_state(Vector2::new(2.0, 0.0), Matrix2::identity() * 0.5).unwrap();
        let w = Comb2D::new(vec![term]);
        let eta: f64 = 0.49;
        let out = w
            .apply_gaussian_channel(&(Matrix2::identity() * eta.sqrt()), &(Matrix2::identity() * (0.5 * (1.0 - eta))))
            .unwrap();
        let n = 400;
        let (lo, hi) = (-6.0, 8.0);
        let h = (hi - lo) / n as f64;
        let (mut m0, mut mq, mut mp, mut vq, mut vp) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let q = lo + (i as f64 + 0.5) * h;
            for j in 0..n {
                let p = lo + (j as f64 + 0.5) * h;
                let v = out.eval(q, p).re * h * h;
                m0 += v;
                mq += q * v;
                mp += p * v;
                vq += q * q * v;
                vp += p * p * v;
            }
        }
        assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(mq, 1.4, epsilon = 1e-8);
        assert_abs_diff_eq!(mp, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(vq - mq * mq, 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(vp - mp * mp, 0.5, epsilon = 1e-7);
    }

    #[test]
    fn wigner_cross_matches_quadrature() {
        let a = Comb1D::new(
            vec![GaussTerm1D::new(Complex64::new(0.7, 0.1), 0.4, 0.6, 0.5).unwrap()],
            Representation::Position,
        );
        let b = Comb1D::new(
            vec![GaussTerm1D::new(Complex64::new(-0.2, 0.9), -0.8, 0.6, -1.1).unwrap()],
            Representation::Position,
        );
        let w = a.wigner_cross(&b).unwrap();
        for (q, p) in [(0.0, 0.0), (0.3, -0.7), (-1.1, 1.4)] {
            let f = |y: f64| a.eval(q + y) * b.eval(q - y).conj() * Complex64::from_polar(1.0, -2.0 * p * y);
            let re = riemann(|y| f(y).re, -10.0, 10.0, 100_000) / PI;
            let im = riemann(|y| f(y).im, -10.0, 10.0, 100_000) / PI;
            assert!((w.eval(q, p) - Complex64::new(re, im)).norm() < 1e-10);
        }
        // Trace of |a⟩⟨b| is ⟨b|a⟩.
        let tr = w.integral();
        assert!((tr - b.inner(&a).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn marginals_match_quadrature() {
        let t = GaussTerm2D::new(
            Complex64::new(0.4, -0.3),
            Vector2::new(0.5, -0.2),
            Matrix2::new(2.0, 0.6, 0.6, 1.5),
            Vector2::new(0.7, -1.3),
        )
        .unwrap();
        let mq = t.marginal(1);
        let mp = t.marginal(0);
        for x in [-0.9, 0.1, 1.3] {
            let fq = |p: f64| t.eval(x, p);
            let fp = |q: f64| t.eval(q, x);
            let q_re = riemann(|p| fq(p).re, -12.0, 12.0, 100_000);
            let q_im = riemann(|p| fq(p).im, -12.0, 12.0, 100_000);
            let p_re = riemann(|q| fp(q).re, -12.0, 12.0, 100_000);
            let p_im = riemann(|q| fp(q).im, -12.0, 12.0, 100_000);
            assert!((mq.eval(x) - Complex64::new(q_re, q_im)).norm() < 1e-10);
            assert!((mp.eval(x) - Complex64::new(p_re, p_im)).norm() < 1e-10);
        }
    }

    #[test]
    fn channel_pointwise_matches_quadrature() {
        let t = GaussTerm2D::new(
            Complex64::new(1.0, 0.0),
            Vector2::new(0.3, 0.1),
            Matrix2::new(3.0, 0.5, 0.5, 2.0),
            Vector2::new(1.5, -0.8),
        )
        .unwrap();
        let w = Comb2D::new(vec![t]);
        let scale = Matrix2::new(0.9, 0.1, -0.2, 0.8);
        let noise = Matrix2::new(0.2, 0.05, 0.05, 0.1);
        let out = w.apply_gaussian_channel(&scale, &noise).unwrap();
        let inv = scale.try_inverse().unwrap();
        let det = scale.determinant();
        let noise_inv = noise.try_inverse().unwrap();
        let norm = 1.0 / (2.0 * PI * noise.determinant().sqrt());
        let n = 500;
        let (lo, hi) = (-5.0, 5.0);
        let h = (hi - lo) / n as f64;
        for (q, p) in [(0.0, 0.0), (0.4, -0.5)] {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let y0 = lo + (i as f64 + 0.5) * h;
                for j in 0..n {
                    let y1 = lo + (j as f64 + 0.5) * h;
                    let y = Vector2::new(y0, y1);
                    let src = inv * (Vector2::new(q, p) - y);
                    let g = norm * (-0.5 * y.dot(&(noise_inv * y))).exp();
                    acc += w.eval(src[0], src[1]) / det.abs() * g * h * h;
                }
            }
            assert!((out.eval(q, p) - acc).norm() < 1e-8, "{:?} vs {:?}", out.eval(q, p), acc);
        }
    }

    #[test]
    fn simplify_merges_duplicates() {
        let t = GaussTerm1D::real(1.0, 0.5, 0.3);
        let c = Comb1D::new(vec![t, t, GaussTerm1D::real(2.0, 0.7, 0.3)], Representation::Position);
        let s = c.simplified();
        assert_eq!(s.len(), 2);
        assert_abs_diff_eq!((s.eval(0.6) - c.eval(0.6)).norm(), 0.0, epsilon = 1e-15);
    }
}
