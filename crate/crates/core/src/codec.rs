//! Approximate GKP codewords, the encoded Bell state and gate metadata.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::comb::{Comb1D, GaussTerm1D, Representation, Truncation, SQRT_PI};
use crate::error::{invalid, Result};

/// 2×2 complex matrix in the logical codeword basis.
pub type LogicalMatrix = Matrix2<Complex64>;

/// Shift implemented by each stabilizer, in q for S_q and in p for S_p.
pub const STABILIZER_SHIFT: f64 = 2.0 * SQRT_PI;

/// How the Gaussian envelope weights the comb peaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Envelope {
    /// Each peak scaled by the envelope sampled at its center.
    #[default]
    PeakSampled,
    /// Pointwise product of envelope and comb; peaks narrow slightly and
    /// their centers contract toward the origin.
    ExactProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub kappa: f64,
    pub delta_state: f64,
    pub delta_det: f64,
    pub envelope: Envelope,
    pub truncation: Truncation,
}

impl CodeParams {
    pub fn new(kappa: f64, delta_state: f64, delta_det: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", kappa, "must be positive and finite"));
        }
        if !(delta_state > 0.0 && delta_state.is_finite()) {
            return Err(invalid("delta_state", delta_state, "must be positive and finite"));
        }
        if !(delta_det >= 0.0 && delta_det.is_finite()) {
            return Err(invalid("delta_det", delta_det, "must be non-negative and finite"));
        }
        Ok(CodeParams {
            kappa,
            delta_state,
            delta_det,
            envelope: Envelope::default(),
            truncation: Truncation::default(),
        })
    }

    /// Δ = κ with an ideal detector.
    pub fn symmetric(kappa: f64) -> Result<Self> {
        CodeParams::new(kappa, kappa, 0.0)
    }

    /// Symmetric parameters at the given squeezing in dB (0 dB is vacuum).
    pub fn from_db(sq_db: f64) -> Result<Self> {
        CodeParams::symmetric(kappa_from_db(sq_db))
    }

    pub fn with_envelope(mut self, envelope: Envelope) -> Self {
        self.envelope = envelope;
        self
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    /// Peak width seen by the binned measurement, detector acceptance
    /// included.
    pub fn delta_eff(&self) -> f64 {
        self.delta_state.hypot(self.delta_det)
    }

    pub fn squeezing_db(&self) -> f64 {
        db_from_kappa(self.kappa)
    }

    /// Set when κ√π ≥ 0.5, outside the regime the closed-form error bound
    /// assumes.
    pub fn wide_envelope_warning(&self) -> bool {
        self.kappa * SQRT_PI >= 0.5
    }

    /// Bit-exact key for memoization.
    pub(crate) fn cache_key(&self) -> [u64; 6] {
        [
            self.kappa.to_bits(),
            self.delta_state.to_bits(),
            self.delta_det.to_bits(),
            self.envelope as u64,
            self.truncation.tolerance.to_bits(),
            self.truncation.max_breakpoints as u64,
        ]
    }
}

pub fn kappa_from_db(sq_db: f64) -> f64 {
    10f64.powf(-sq_db / 20.0)
}

pub fn db_from_kappa(kappa: f64) -> f64 {
    -20.0 * kappa.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicalLabel {
    Zero,
    One,
}

impl LogicalLabel {
    pub const BOTH: [LogicalLabel; 2] = [LogicalLabel::Zero, LogicalLabel::One];

    pub fn index(self) -> usize {
        match self {
            LogicalLabel::Zero => 0,
            LogicalLabel::One => 1,
        }
    }
}

/// The normalized q-representation approximate codeword |j̄⟩.
pub fn approximate_codeword(j: LogicalLabel, params: &CodeParams) -> Comb1D {
    let kappa = params.kappa;
    let width = params.delta_eff();
    // Envelope weight e^{-πκ²n²/2} at the outermost kept peak stays above
    // the truncation tolerance.
    let reach = (2.0 * (1.0 / params.truncation.tolerance).ln() / (PI * kappa * kappa)).sqrt();
    let n_max = reach.ceil() as i64 + 1;
    let parity = j.index() as i64;
    let envelope = GaussTerm1D::real(1.0, 0.0, 1.0 / kappa);
    let terms = (-n_max..=n_max)
        .filter(|n| (n - parity).rem_euclid(2) == 0)
        .map(|n| {
            let center = n as f64 * SQRT_PI;
            match params.envelope {
                Envelope::PeakSampled => {
                    let amp = (-0.5 * PI * kappa * kappa * (n * n) as f64).exp();
                    GaussTerm1D::real(amp, center, width)
                }
                Envelope::ExactProduct => GaussTerm1D::real(1.0, center, width).product(&envelope),
            }
        })
        .collect();
    Comb1D::new(terms, Representation::Position).normalized()
}

/// Vacuum squeezed in p: q-representation width 1/κ, p-variance κ²/2.
pub fn squeezed_vacuum(kappa: f64) -> Comb1D {
    let width = 1.0 / kappa;
    let amp = (PI * width * width).powf(-0.25);
    Comb1D::new(vec![GaussTerm1D::real(amp, 0.0, width)], Representation::Position)
}

/// Both codewords, indexed by [`LogicalLabel::index`].
pub fn codeword_pair(params: &CodeParams) -> [Comb1D; 2] {
    [
        approximate_codeword(LogicalLabel::Zero, params),
        approximate_codeword(LogicalLabel::One, params),
    ]
}

fn gram_of(codewords: &[Comb1D; 2]) -> LogicalMatrix {
    let mut g = LogicalMatrix::zeros();
    for m in 0..2 {
        for n in 0..2 {
            g[(m, n)] = codewords[m]
                .inner(&codewords[n])
                .expect("codewords share a representation");
        }
    }
    g
}

/// G[m][n] = ⟨m̄|n̄⟩.
pub fn gram_matrix(params: &CodeParams) -> LogicalMatrix {
    gram_of(&codeword_pair(params))
}

/// The encoded Bell state (|0̄0̄⟩ + |1̄1̄⟩)·c on Alice's and Bob's modes.
#[derive(Debug, Clone)]
pub struct BellDescriptor {
    pub params_a: CodeParams,
    pub params_b: CodeParams,
    pub codewords_a: [Comb1D; 2],
    pub codewords_b: [Comb1D; 2],
    pub gram_a: LogicalMatrix,
    pub gram_b: LogicalMatrix,
    /// c², fixed by unit trace.
    pub norm_sqr: f64,
    /// Coefficients of ρ in the product codeword basis; index 2·a + b.
    pub coefficients: Matrix4<Complex64>,
}

impl BellDescriptor {
    /// Tr ρ with the non-orthogonal basis accounted for.
    pub fn trace(&self) -> Complex64 {
        let mut t = Complex64::new(0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                let (ia, ib) = (r / 2, r % 2);
                let (ja, jb) = (c / 2, c % 2);
                t += self.coefficients[(r, c)] * self.gram_a[(ja, ia)] * self.gram_b[(jb, ib)];
            }
        }
        t
    }

    /// Same state with the modes exchanged.
    pub fn swapped(&self) -> BellDescriptor {
        let mut coefficients = Matrix4::zeros();
        let swap = |i: usize| 2 * (i % 2) + i / 2;
        for r in 0..4 {
            for c in 0..4 {
                coefficients[(swap(r), swap(c))] = self.coefficients[(r, c)];
            }
        }
        BellDescriptor {
            params_a: self.params_b,
            params_b: self.params_a,
            codewords_a: self.codewords_b.clone(),
            codewords_b: self.codewords_a.clone(),
            gram_a: self.gram_b,
            gram_b: self.gram_a,
            norm_sqr: self.norm_sqr,
            coefficients,
        }
    }
}

pub fn logical_bell_state(params_a: &CodeParams, params_b: &CodeParams) -> BellDescriptor {
    let codewords_a = codeword_pair(params_a);
    let codewords_b = codeword_pair(params_b);
    let gram_a = gram_of(&codewords_a);
    let gram_b = gram_of(&codewords_b);
    let norm_sqr = bell_norm_sqr(&gram_a, &gram_b);
    let mut coefficients = Matrix4::zeros();
    for r in [0, 3] {
        for c in [0, 3] {
            coefficients[(r, c)] = Complex64::new(norm_sqr, 0.0);
        }
    }
    BellDescriptor {
        params_a: *params_a,
        params_b: *params_b,
        codewords_a,
        codewords_b,
        gram_a,
        gram_b,
        norm_sqr,
        coefficients,
    }
}

/// c² = 1 / Σ_ij Ga_ij·Gb_ij.
pub(crate) fn bell_norm_sqr(gram_a: &LogicalMatrix, gram_b: &LogicalMatrix) -> f64 {
    let mut s = Complex64::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            s += gram_a[(i, j)] * gram_b[(i, j)];
        }
    }
    1.0 / s.re
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    H,
    P,
    Z,
    X,
    T,
    Cnot,
}

/// Affine phase-space map v → linear·v + shift on (q₁, p₁[, q₂, p₂]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymplecticMap {
    pub linear: Vec<Vec<f64>>,
    pub shift: Vec<f64>,
}

impl SymplecticMap {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.linear
            .iter()
            .zip(&self.shift)
            .map(|(row, s)| row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>() + s)
            .collect()
    }

    /// Whether the linear part preserves the symplectic form.
    pub fn is_symplectic(&self) -> bool {
        let n = self.linear.len();
        let omega = |i: usize, j: usize| -> f64 {
            match (i / 2 == j / 2, i % 2, j % 2) {
                (true, 0, 1) => 1.0,
                (true, 1, 0) => -1.0,
                _ => 0.0,
            }
        };
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        s += self.linear[k][i] * omega(k, l) * self.linear[l][j];
                    }
                }
                if (s - omega(i, j)).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateMetadata {
    pub name: Gate,
    pub symplectic_map: Option<SymplecticMap>,
    pub clifford: bool,
}

impl GateMetadata {
    pub fn of(gate: Gate) -> Self {
        let single = |linear: [[f64; 2]; 2], shift: [f64; 2]| SymplecticMap {
            linear: linear.iter().map(|r| r.to_vec()).collect(),
            shift: shift.to_vec(),
        };
        let map = match gate {
            Gate::H => Some(single([[0.0, 1.0], [-1.0, 0.0]], [0.0, 0.0])),
            Gate::P => Some(single([[1.0, 0.0], [-1.0, 1.0]], [0.0, 0.0])),
            // e^{iq√π} displaces p; e^{-ip√π} displaces q.
            Gate::Z => Some(single([[1.0, 0.0], [0.0, 1.0]], [0.0, SQRT_PI])),
            Gate::X => Some(single([[1.0, 0.0], [0.0, 1.0]], [SQRT_PI, 0.0])),
            Gate::T => None,
            Gate::Cnot => Some(SymplecticMap {
                linear: vec![
                    vec![1.0, 0.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0, -1.0],
                    vec![1.0, 0.0, 1.0, 0.0],
                    vec![0.0, 0.0, 0.0, 1.0],
                ],
                shift: vec![0.0; 4],
            }),
        };
        GateMetadata {
            name: gate,
            clifford: map.is_some(),
            symplectic_map: map,
        }
    }

    /// The gate's action on the logical qubit (single-mode gates only).
    pub fn logical_unitary(&self) -> Option<LogicalMatrix> {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let h = FRAC_1_SQRT_2;
        Some(match self.name {
            Gate::H => LogicalMatrix::new(c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)),
            Gate::P => LogicalMatrix::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 1.0)),
            Gate::Z => LogicalMatrix::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)),
            Gate::X => LogicalMatrix::new(c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)),
            Gate::T => LogicalMatrix::new(
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                Complex64::from_polar(1.0, PI / 4.0),
            ),
            Gate::Cnot => return None,
        })
    }
}

/// Product of single-mode logical gates, applied right to left.
pub fn compose(gates: &[Gate]) -> LogicalMatrix {
    gates.iter().fold(LogicalMatrix::identity(), |acc, g| {
        acc * GateMetadata::of(*g)
            .logical_unitary()
            .expect("single-mode gate")
    })
}

/// α = PHTHP, the basis change for A1.
pub fn alpha_gate() -> LogicalMatrix {
    compose(&[Gate::P, Gate::H, Gate::T, Gate::H, Gate::P])
}

/// β = ZPHTHP, the basis change for A2.
pub fn beta_gate() -> LogicalMatrix {
    compose(&[Gate::Z, Gate::P, Gate::H, Gate::T, Gate::H, Gate::P])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn riemann<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    fn ideal() -> CodeParams {
        CodeParams::new(0.01, 0.01, 0.0).unwrap()
    }

    #[test]
    fn db_conventions() {
        assert_abs_diff_eq!(kappa_from_db(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kappa_from_db(20.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(db_from_kappa(kappa_from_db(7.3)), 7.3, epsilon = 1e-12);
        let p = CodeParams::new(0.2, 0.3, 0.4).unwrap();
        assert_abs_diff_eq!(p.delta_eff(), 0.5, epsilon = 1e-15);
        assert!(CodeParams::new(0.0, 0.1, 0.0).is_err());
        assert!(CodeParams::new(0.1, 0.1, -1.0).is_err());
        assert!(CodeParams::symmetric(0.3).unwrap().wide_envelope_warning());
        assert!(!CodeParams::symmetric(0.2).unwrap().wide_envelope_warning());
    }

    #[test]
    fn zero_codeword_density_matches_closed_form() {
        let p = CodeParams::symmetric(0.2).unwrap();
        let psi = approximate_codeword(LogicalLabel::Zero, &p);
        let (k, d) = (0.2_f64, 0.2_f64);
        let density = |q: f64| {
            (-40..=40)
                .map(|s| {
                    let s = s as f64;
                    (-4.0 * PI * k * k * s * s).exp()
                        * (-(q - 2.0 * s * SQRT_PI).powi(2) / (d * d)).exp()
                })
                .sum::<f64>()
        };
        // Normalize the closed form numerically, then compare.
        let norm = riemann(density, -40.0, 40.0, 400_000);
        for q in [-3.0, -0.05, 0.0, 0.1, 1.0, 2.0 * SQRT_PI + 0.02, 7.0] {
            let want = density(q) / norm;
            let got = psi.eval(q).norm_sqr();
            assert!((got - want).abs() <= 1e-8 * want.max(1e-300) + 1e-300, "q={q}: {got} vs {want}");
        }
    }

    #[test]
    fn one_codeword_peaks_at_sqrt_pi() {
        let p = CodeParams::symmetric(0.2).unwrap();
        let psi = approximate_codeword(LogicalLabel::One, &p);
        let at = |q: f64| psi.eval(q).norm_sqr();
        assert!(at(SQRT_PI) > at(SQRT_PI - 1e-3) && at(SQRT_PI) > at(SQRT_PI + 1e-3));
        assert!(at(0.0) / at(SQRT_PI) < 1e-6);
    }

    #[test]
    fn near_ideal_codewords_are_orthogonal() {
        let g = gram_matrix(&ideal());
        assert!(g[(0, 1)].norm() < 1e-12);
        assert_abs_diff_eq!(g[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_off_diagonal_matches_quadrature() {
        let p = CodeParams::symmetric(0.3).unwrap();
        let g = gram_matrix(&p);
        let [z, o] = codeword_pair(&p);
        let want = riemann(|q| z.eval(q).re * o.eval(q).re, -50.0, 50.0, 2_000_000);
        assert_abs_diff_eq!(g[(0, 1)].re, want, epsilon = 1e-9);
        assert!(g[(0, 1)].re >= 0.0 && g[(0, 1)].im == 0.0);
        assert!((g[(0, 1)] - g[(1, 0)].conj()).norm() < 1e-12);
    }

    #[test]
    fn gram_off_diagonal_decreases_with_peak_width() {
        let mut last = f64::INFINITY;
        for d in [0.6, 0.5, 0.4, 0.3, 0.2, 0.1] {
            let g = gram_matrix(&CodeParams::new(0.2, d, 0.0).unwrap())[(0, 1)].re;
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn stabilizer_and_logical_shifts() {
        let p = ideal();
        let z = approximate_codeword(LogicalLabel::Zero, &p);
        let o = approximate_codeword(LogicalLabel::One, &p);
        let s = z.shift(STABILIZER_SHIFT);
        let x = z.shift(SQRT_PI);
        for q in [0.0, 0.003, SQRT_PI, 2.0 * SQRT_PI + 0.004] {
            assert!((s.eval(q) - z.eval(q)).norm() < 1e-3 * z.eval(0.0).norm());
            assert!((x.eval(q) - o.eval(q)).norm() < 1e-3 * z.eval(0.0).norm());
        }
    }

    #[test]
    fn exact_envelope_is_close_to_sampled() {
        let p = CodeParams::symmetric(0.15).unwrap();
        let a = approximate_codeword(LogicalLabel::Zero, &p);
        let b = approximate_codeword(LogicalLabel::Zero, &p.with_envelope(Envelope::ExactProduct));
        let overlap = a.inner(&b).unwrap().norm();
        assert!(overlap > 0.999 && overlap <= 1.0 + 1e-12);
    }

    #[test]
    fn bell_state_is_normalized() {
        let i = logical_bell_state(&ideal(), &ideal());
        assert_abs_diff_eq!(i.norm_sqr, 0.5, epsilon = 1e-12);
        for r in 0..4 {
            for c in 0..4 {
                let want = if (r == 0 || r == 3) && (c == 0 || c == 3) { 0.5 } else { 0.0 };
                assert_abs_diff_eq!(i.coefficients[(r, c)].re, want, epsilon = 1e-12);
            }
        }
        let p = CodeParams::symmetric(0.2).unwrap();
        assert_abs_diff_eq!(logical_bell_state(&p, &p).trace().re, 1.0, epsilon = 1e-10);
        let a = CodeParams::from_db(12.0).unwrap();
        let b = CodeParams::from_db(8.0).unwrap();
        let bell = logical_bell_state(&a, &b);
        assert_ne!(bell.codewords_a[0], bell.codewords_b[0]);
        assert_abs_diff_eq!(bell.trace().re, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bell_state_mode_swap() {
        let p = CodeParams::symmetric(0.25).unwrap();
        let bell = logical_bell_state(&p, &p);
        let s = bell.swapped();
        assert_eq!(s.coefficients, bell.coefficients);
        assert_eq!(s.gram_a, bell.gram_a);
    }

    #[test]
    fn gate_metadata_invariants() {
        for g in [Gate::H, Gate::P, Gate::Z, Gate::X, Gate::T, Gate::Cnot] {
            let m = GateMetadata::of(g);
            assert_eq!(m.clifford, m.symplectic_map.is_some());
            if let Some(map) = &m.symplectic_map {
                assert!(map.is_symplectic(), "{g:?}");
            }
        }
        assert!(!GateMetadata::of(Gate::T).clifford);
        let h = GateMetadata::of(Gate::H).symplectic_map.unwrap();
        assert_eq!(h.apply(&[1.0, 2.0]), vec![2.0, -1.0]);
        let p = GateMetadata::of(Gate::P).symplectic_map.unwrap();
        assert_eq!(p.apply(&[1.0, 2.0]), vec![1.0, 1.0]);
        let cx = GateMetadata::of(Gate::Cnot).symplectic_map.unwrap();
        assert_eq!(cx.apply(&[1.0, 2.0, 3.0, 4.0]), vec![1.0, -2.0, 4.0, 4.0]);
        let pp = compose(&[Gate::P, Gate::P]);
        assert!((pp - GateMetadata::of(Gate::Z).logical_unitary().unwrap()).norm() < 1e-15);
    }

    #[test]
    fn alpha_beta_match_appendix_matrices() {
        let (c, s) = ((PI / 8.0).cos(), (PI / 8.0).sin());
        let i = |x: f64| Complex64::new(0.0, x);
        let alpha = LogicalMatrix::new(i(-c), i(-s), i(-s), i(c));
        let beta = LogicalMatrix::new(i(-c), i(-s), i(s), i(-c));
        let phase = Complex64::from_polar(1.0, 5.0 * PI / 8.0);
        assert!((alpha_gate() - alpha * phase).norm() < 1e-14);
        assert!((beta_gate() - beta * phase).norm() < 1e-14);
        let z = GateMetadata::of(Gate::Z).logical_unitary().unwrap();
        let x = GateMetadata::of(Gate::X).logical_unitary().unwrap();
        let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let a = alpha_gate();
        let b = beta_gate();
        assert!((a * z * a.adjoint() - (z + x) * r).norm() < 1e-14);
        assert!((b * z * b.adjoint() - (z - x) * r).norm() < 1e-14);
    }
}
