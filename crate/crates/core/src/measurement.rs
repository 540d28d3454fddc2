//! Homodyne measurement, error-correction binning and logical observables.

use serde::{Deserialize, Serialize};

use crate::codec::{codeword_pair, CodeParams, LogicalLabel, LogicalMatrix};
use crate::comb::{integrate_against_step, Comb1D, GaussTerm1D, PiecewiseSign, Representation, Truncation, SQRT_PI};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrature {
    Q,
    P,
}

/// Homodyne measurement of one quadrature, rounded to the nearest multiple
/// of `bin_spacing`; bin k reports (−1)^k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedObservable {
    pub quadrature: Quadrature,
    pub bin_spacing: f64,
}

impl BinnedObservable {
    /// Logical Z̄: q-homodyne.
    pub fn z() -> Self {
        BinnedObservable {
            quadrature: Quadrature::Q,
            bin_spacing: SQRT_PI,
        }
    }

    /// Logical X̄: p-homodyne on the same √π lattice.
    pub fn x() -> Self {
        BinnedObservable {
            quadrature: Quadrature::P,
            bin_spacing: SQRT_PI,
        }
    }

    pub fn with_spacing(self, bin_spacing: f64) -> Self {
        BinnedObservable { bin_spacing, ..self }
    }

    pub fn outcome_rule(bin: i64) -> i8 {
        if bin.rem_euclid(2) == 0 {
            1
        } else {
            -1
        }
    }

    /// ±1 function equal to the outcome reported for each value.
    pub fn sign_function(&self) -> PiecewiseSign {
        self.periodic(vec![1.0, -1.0])
    }

    /// Indicator of the values that report `outcome` (±1).
    pub fn indicator(&self, outcome: i8) -> PiecewiseSign {
        if outcome > 0 {
            self.periodic(vec![1.0, 0.0])
        } else {
            self.periodic(vec![0.0, 1.0])
        }
    }

    fn periodic(&self, pattern: Vec<f64>) -> PiecewiseSign {
        PiecewiseSign {
            period: 2.0 * self.bin_spacing,
            offset: -0.5 * self.bin_spacing,
            pattern,
        }
    }

    pub fn representation(&self) -> Representation {
        match self.quadrature {
            Quadrature::Q => Representation::Position,
            Quadrature::P => Representation::Momentum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomodyneSample {
    pub raw_value: f64,
    pub corrected_bin: i64,
    pub logical_outcome: i8,
}

/// Rounds to the nearest multiple of √π; exact half-way values go to the
/// even bin.
pub fn bin_and_correct(raw: f64) -> HomodyneSample {
    bin_and_correct_with(raw, SQRT_PI)
}

pub fn bin_and_correct_with(raw: f64, spacing: f64) -> HomodyneSample {
    let bin = (raw / spacing).round_ties_even() as i64;
    HomodyneSample {
        raw_value: raw,
        corrected_bin: bin,
        logical_outcome: BinnedObservable::outcome_rule(bin),
    }
}

/// Outcome density of a homodyne detector with Gaussian acceptance:
/// |ψ|² convolved with a normal kernel of standard deviation `delta_det`.
pub fn povm_density(state: &Comb1D, delta_det: f64) -> Result<Comb1D> {
    if !(delta_det >= 0.0 && delta_det.is_finite()) {
        return Err(invalid("delta_det", delta_det, "must be non-negative and finite"));
    }
    let density = state.conj().product(state)?.simplified();
    Ok(density.convolve_gaussian(delta_det * delta_det))
}

/// ⟨Π_x⟩ for the acceptance-window POVM; `delta_det = 0` is the ideal PVM.
pub fn povm_element_weight(x: f64, state: &Comb1D, delta_det: f64) -> Result<f64> {
    Ok(povm_density(state, delta_det)?.eval(x).re)
}

/// Probability of each bin k in `bins`, bin k covering
/// [(k − ½)·spacing, (k + ½)·spacing).
pub fn bin_probabilities(density: &Comb1D, spacing: f64, bins: std::ops::RangeInclusive<i64>) -> Vec<f64> {
    bins.map(|k| {
        let lo = (k as f64 - 0.5) * spacing;
        density.integrate_interval(lo, lo + spacing).re
    })
    .collect()
}

/// State after a q mod 2√π measurement with acceptance width `delta_det`
/// returns `outcome_x`: the wavefunction times the comb of acceptance
/// windows at outcome_x + 2s√π, renormalized.
pub fn mod_measurement_projection(
    state: &Comb1D,
    outcome_x: f64,
    delta_det: f64,
    trunc: &Truncation,
) -> Result<Comb1D> {
    if !(delta_det > 0.0 && delta_det.is_finite()) {
        return Err(invalid("delta_det", delta_det, "must be positive and finite"));
    }
    if state.representation != Representation::Position {
        return Err(Error::RepresentationMismatch {
            left: state.representation,
            right: Representation::Position,
        });
    }
    let period = 2.0 * SQRT_PI;
    // Windows only matter where the state has support.
    let reach = |t: &GaussTerm1D| 12.0 * (t.width + delta_det);
    let lo = state.terms.iter().map(|t| t.center - reach(t)).fold(f64::INFINITY, f64::min);
    let hi = state.terms.iter().map(|t| t.center + reach(t)).fold(f64::NEG_INFINITY, f64::max);
    let s_lo = ((lo - outcome_x) / period).floor() as i64;
    let s_hi = ((hi - outcome_x) / period).ceil() as i64;
    let windows = Comb1D::new(
        (s_lo..=s_hi)
            .map(|s| GaussTerm1D::real(1.0, outcome_x + s as f64 * period, delta_det))
            .collect(),
        Representation::Position,
    );

    let density = povm_density(state, delta_det)?;
    let probability: f64 = (s_lo..=s_hi)
        .map(|s| density.eval(outcome_x + s as f64 * period).re)
        .sum();
    if probability.is_nan() || probability <= trunc.tolerance {
        return Err(Error::NullEvent { probability });
    }
    let (projected, _) = state.product(&windows)?.simplified().pruned(trunc.tolerance);
    Ok(projected.normalized())
}

/// Codeword pair in the representation `obs` measures.
pub(crate) fn codewords_for(params: &CodeParams, obs: &BinnedObservable) -> [Comb1D; 2] {
    let [zero, one] = codeword_pair(params);
    match obs.quadrature {
        Quadrature::Q => [zero, one],
        Quadrature::P => [zero.fourier(), one.fourier()],
    }
}

pub(crate) fn matrix_against(
    codewords: &[Comb1D; 2],
    f: &PiecewiseSign,
    trunc: &Truncation,
) -> Result<LogicalMatrix> {
    let mut out = LogicalMatrix::zeros();
    for m in 0..2 {
        for n in 0..2 {
            out[(m, n)] = integrate_against_step(&codewords[m], &codewords[n], f, trunc)?.value;
        }
    }
    Ok(out)
}

/// ⟨m̄|O|n̄⟩ for the binned observable O.
pub fn binned_matrix(
    m: LogicalLabel,
    n: LogicalLabel,
    params: &CodeParams,
    obs: &BinnedObservable,
) -> Result<num_complex::Complex64> {
    let cw = codewords_for(params, obs);
    Ok(integrate_against_step(&cw[m.index()], &cw[n.index()], &obs.sign_function(), &params.truncation)?.value)
}

/// All four entries of the binned observable in the codeword basis.
pub fn binned_matrices(params: &CodeParams, obs: &BinnedObservable) -> Result<LogicalMatrix> {
    matrix_against(&codewords_for(params, obs), &obs.sign_function(), &params.truncation)
}

/// Per-outcome POVM matrices [F₊, F₋] from bin indicators.
pub fn outcome_matrices(params: &CodeParams, obs: &BinnedObservable) -> Result<[LogicalMatrix; 2]> {
    let cw = codewords_for(params, obs);
    Ok([
        matrix_against(&cw, &obs.indicator(1), &params.truncation)?,
        matrix_against(&cw, &obs.indicator(-1), &params.truncation)?,
    ])
}
