//! Brute-force number-basis oracle for validating the comb engine.
//!
//! Everything here is computed on its own path: codeword wavefunctions are
//! evaluated from their defining sums, projected onto Hermite functions by
//! panelled Gauss-Legendre quadrature, binned observables are dense matrices,
//! loss acts through Kraus operators, and CHSH correlators are traces over
//! the full two-mode coefficient matrix. Nothing is shared with the comb
//! algebra beyond parameter types.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::chsh::{Correlators, Setting};
use crate::codec::{CodeParams, Envelope, LogicalLabel, LogicalMatrix};
use crate::comb::SQRT_PI;
use crate::error::{invalid, Error, Result};
use crate::loss::{Binning, ChannelParams};
use crate::measurement::BinnedObservable;

/// Cutoff used when a caller has no better estimate.
pub const DEFAULT_CUTOFF: usize = 150;

/// Largest discarded norm a projected codeword may have.
pub const MAX_DISCARDED: f64 = 1e-8;

const NODES_PER_PANEL: usize = 16;
const PANELS_PER_HALF_BIN: usize = 4;

/// Truncated number-basis state with the norm lost to the cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub coefficients: DVector<f64>,
    pub discarded: f64,
}

impl FockVector {
    pub fn n_max(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// ⟨(−1)^n̂⟩.
    pub fn parity(&self) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(n, c)| if n % 2 == 0 { c * c } else { -c * c })
            .sum()
    }

    /// Bound on the change of any matrix element of a norm-1 operator
    /// caused by the cutoff.
    pub fn error_bar(&self) -> f64 {
        2.0 * self.discarded.max(0.0).sqrt()
    }
}

/// Dense operator on the truncated number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    pub matrix: DMatrix<Complex64>,
}

impl FockOperator {
    pub fn n_max(&self) -> usize {
        self.matrix.nrows() - 1
    }

    /// ⟨a|O|b⟩ for real coefficient vectors.
    pub fn between(&self, a: &FockVector, b: &FockVector) -> Complex64 {
        let ac = a.coefficients.map(|x| Complex64::new(x, 0.0));
        let bc = b.coefficients.map(|x| Complex64::new(x, 0.0));
        (ac.transpose() * &self.matrix * bc)[(0, 0)]
    }

    /// Heisenberg-picture loss: Σ_k K_k† O K_k.
    pub fn dual_loss(&self, eta: f64) -> Result<FockOperator> {
        let k = kraus_amplitudes(self.n_max(), eta)?;
        let dim = self.matrix.nrows();
        let mut out = DMatrix::<Complex64>::zeros(dim, dim);
        for l in 0..dim {
            for n in l..dim {
                for m in l..dim {
                    out[(n, m)] += self.matrix[(n - l, m - l)] * (k[(n, l)] * k[(m, l)]);
                }
            }
        }
        Ok(FockOperator { matrix: out })
    }
}

/// a[(n, k)] = √C(n,k)·η^{(n−k)/2}·(1−η)^{k/2}, the amplitude of K_k|n⟩ = a|n−k⟩.
fn kraus_amplitudes(n_max: usize, eta: f64) -> Result<DMatrix<f64>> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", eta, "must lie in (0, 1]"));
    }
    let mut ln_fact = vec![0.0f64; n_max + 1];
    for n in 1..=n_max {
        ln_fact[n] = ln_fact[n - 1] + (n as f64).ln();
    }
    let mut a = DMatrix::zeros(n_max + 1, n_max + 1);
    for n in 0..=n_max {
        for k in 0..=n {
            if k > 0 && eta == 1.0 {
                continue;
            }
            let ln_binom = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
            let loss = if k == 0 { 0.0 } else { 0.5 * k as f64 * (1.0 - eta).ln() };
            a[(n, k)] = (0.5 * ln_binom + 0.5 * (n - k) as f64 * eta.ln() + loss).exp();
        }
    }
    Ok(a)
}

/// Schrödinger-picture pure loss on a density matrix, Σ_k K_k ρ K_k†.
pub fn oracle_loss(rho: &DMatrix<Complex64>, eta: f64) -> Result<DMatrix<Complex64>> {
    let dim = rho.nrows();
    let k = kraus_amplitudes(dim - 1, eta)?;
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for l in 0..dim {
        for n in l..dim {
            for m in l..dim {
                out[(n - l, m - l)] += rho[(n, m)] * (k[(n, l)] * k[(m, l)]);
            }
        }
    }
    Ok(out)
}

/// Quadrature nodes and weights on [−L, L], with panel edges on every
/// half-multiple of `spacing` so bin boundaries never fall inside a panel.
struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    fn new(spacing: f64, n_max: usize) -> Grid {
        // Hermite functions up to n_max live inside |x| ≲ √(2n+1); the
        // extra margin covers their Gaussian tails.
        let reach = ((2 * n_max + 1) as f64).sqrt() + 8.0;
        let half_bins = (reach / (0.5 * spacing)).ceil() as i64;
        let panel = 0.5 * spacing / PANELS_PER_HALF_BIN as f64;
        let rule = GaussLegendre::new(NonZeroUsize::new(NODES_PER_PANEL).unwrap());
        let panels = 2 * half_bins * PANELS_PER_HALF_BIN as i64;
        let start = -(half_bins as f64) * 0.5 * spacing;
        let mut nodes = Vec::with_capacity(panels as usize * NODES_PER_PANEL);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for i in 0..panels {
            let a = start + i as f64 * panel;
            for &(t, w) in rule.as_node_weight_pairs() {
                nodes.push(a + 0.5 * panel * (t + 1.0));
                weights.push(0.5 * panel * w);
            }
        }
        Grid { nodes, weights }
    }

    /// ψ_n(x) at every node, rows = nodes, columns = n.
    fn hermite(&self, n_max: usize) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.nodes.len(), n_max + 1);
        for (i, &x) in self.nodes.iter().enumerate() {
            let mut prev = 0.0;
            let mut cur = PI.powf(-0.25) * (-0.5 * x * x).exp();
            h[(i, 0)] = cur;
            for n in 0..n_max {
                let next = (2.0 / (n + 1) as f64).sqrt() * x * cur - (n as f64 / (n + 1) as f64).sqrt() * prev;
                prev = cur;
                cur = next;
                h[(i, n + 1)] = cur;
            }
        }
        h
    }
}

/// Codeword wavefunction (unnormalized) straight from its defining sum.
fn codeword_wavefunction(j: LogicalLabel, params: &CodeParams, x: f64) -> f64 {
    let kappa = params.kappa;
    let width = (params.delta_state.powi(2) + params.delta_det.powi(2)).sqrt();
    let reach = ((x.abs() + 12.0 * width) / SQRT_PI).ceil() as i64 + 2;
    let parity = j.index() as i64;
    let mut sum = 0.0;
    for n in -reach..=reach {
        if (n - parity).rem_euclid(2) != 0 {
            continue;
        }
        let c = n as f64 * SQRT_PI;
        let peak = (-(x - c).powi(2) / (2.0 * width * width)).exp();
        sum += match params.envelope {
            Envelope::PeakSampled => (-0.5 * PI * kappa * kappa * (n * n) as f64).exp() * peak,
            Envelope::ExactProduct => peak,
        };
    }
    match params.envelope {
        Envelope::PeakSampled => sum,
        Envelope::ExactProduct => sum * (-0.5 * kappa * kappa * x * x).exp(),
    }
}

/// Number-basis coefficients of the normalized codeword |j̄⟩.
pub fn oracle_codeword(j: LogicalLabel, params: &CodeParams, n_max: usize) -> Result<FockVector> {
    let grid = Grid::new(SQRT_PI, n_max);
    let h = grid.hermite(n_max);
    project(j, params, &grid, &h)
}

fn project(j: LogicalLabel, params: &CodeParams, grid: &Grid, h: &DMatrix<f64>) -> Result<FockVector> {
    let n_max = h.ncols() - 1;
    let psi = DVector::from_iterator(grid.nodes.len(), grid.nodes.iter().map(|&x| codeword_wavefunction(j, params, x)));
    let w = DVector::from_column_slice(&grid.weights);
    let norm = psi.component_mul(&psi).dot(&w).sqrt();
    let psi = psi / norm;
    let coefficients = h.tr_mul(&psi.component_mul(&w));
    // Residual norm on the grid, not 1 − Σc², so small discards are not
    // lost to cancellation.
    let residual = &psi - h * &coefficients;
    let discarded = residual.component_mul(&residual).dot(&w);
    if discarded > MAX_DISCARDED {
        return Err(Error::InsufficientCutoff { n_max, discarded });
    }
    Ok(FockVector { coefficients, discarded })
}

/// Dense matrix of a binned q or p observable with outcome (−1)^k on the
/// k-th bin of width `obs.bin_spacing`.
pub fn oracle_binned_operator(obs: &BinnedObservable, n_max: usize) -> FockOperator {
    let grid = Grid::new(obs.bin_spacing, n_max);
    let h = grid.hermite(n_max);
    let fw = DVector::from_iterator(
        grid.nodes.len(),
        grid.nodes.iter().zip(&grid.weights).map(|(&x, &w)| {
            let k = (x / obs.bin_spacing).round() as i64;
            if k.rem_euclid(2) == 0 {
                w
            } else {
                -w
            }
        }),
    );
    let mut weighted = h.clone();
    for (mut row, f) in weighted.row_iter_mut().zip(fw.iter()) {
        row *= *f;
    }
    let real = h.tr_mul(&weighted);
    let matrix = match obs.quadrature {
        crate::measurement::Quadrature::Q => real.map(|x| Complex64::new(x, 0.0)),
        // ⟨p|n⟩ = (−i)^n ψ_n(p), so ⟨n|O_p|m⟩ = i^{n−m}·∫f ψ_n ψ_m.
        crate::measurement::Quadrature::P => DMatrix::from_fn(n_max + 1, n_max + 1, |n, m| {
            real[(n, m)] * Complex64::i().powi(n as i32 - m as i32)
        }),
    };
    FockOperator { matrix }
}

/// A logical matrix with the oracle's cutoff error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMatrix {
    pub matrix: LogicalMatrix,
    pub error_bar: f64,
}

fn measured_operator(
    obs: &BinnedObservable,
    channel: Option<&ChannelParams>,
    binning: Binning,
    n_max: usize,
) -> Result<FockOperator> {
    match channel {
        Some(ch) => oracle_binned_operator(&binning.observable(obs, ch.eta), n_max).dual_loss(ch.eta),
        None => Ok(oracle_binned_operator(obs, n_max)),
    }
}

/// Entry (m, n) is Tr[O·L(|n̄⟩⟨m̄|)], or ⟨m̄|O|n̄⟩ without a channel.
pub fn oracle_binned_matrix(
    params: &CodeParams,
    obs: &BinnedObservable,
    channel: Option<&ChannelParams>,
    binning: Binning,
    n_max: usize,
) -> Result<OracleMatrix> {
    let cw = [
        oracle_codeword(LogicalLabel::Zero, params, n_max)?,
        oracle_codeword(LogicalLabel::One, params, n_max)?,
    ];
    let op = measured_operator(obs, channel, binning, n_max)?;
    let matrix = LogicalMatrix::from_fn(|m, n| op.between(&cw[m], &cw[n]));
    let error_bar = cw.iter().map(FockVector::error_bar).sum();
    Ok(OracleMatrix { matrix, error_bar })
}

/// Oracle CHSH value with its cutoff error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleChsh {
    pub correlators: Correlators,
    pub s: f64,
    pub error_bar: f64,
}

/// S from the full two-mode coefficient matrix Ψ = Σ_j |j̄⟩_A|j̄⟩_B with the
/// channel on Bob's mode: each correlator is Tr[Ψ†·A·Ψ·B'ᵀ].
pub fn oracle_chsh(
    params_a: &CodeParams,
    params_b: &CodeParams,
    channel: Option<&ChannelParams>,
    binning: Binning,
    n_max: usize,
) -> Result<OracleChsh> {
    let codewords = |p: &CodeParams| -> Result<[FockVector; 2]> {
        Ok([oracle_codeword(LogicalLabel::Zero, p, n_max)?, oracle_codeword(LogicalLabel::One, p, n_max)?])
    };
    let ca = codewords(params_a)?;
    let cb = codewords(params_b)?;
    let mut psi = DMatrix::<f64>::zeros(n_max + 1, n_max + 1);
    for (a, b) in ca.iter().zip(&cb) {
        psi += &a.coefficients * b.coefficients.transpose();
    }
    psi /= psi.norm();
    let psi = psi.map(|x| Complex64::new(x, 0.0));

    let za = oracle_binned_operator(&BinnedObservable::z(), n_max);
    let xa = oracle_binned_operator(&BinnedObservable::x(), n_max);
    let zb = measured_operator(&BinnedObservable::z(), channel, binning, n_max)?;
    let xb = measured_operator(&BinnedObservable::x(), channel, binning, n_max)?;
    let setting = |s: Setting, z: &FockOperator, x: &FockOperator| {
        let (u, v) = s.weights();
        &z.matrix * Complex64::new(u, 0.0) + &x.matrix * Complex64::new(v, 0.0)
    };
    let correlator = |a: Setting, b: Setting| {
        let left = psi.adjoint() * setting(a, &za, &xa) * &psi;
        left.component_mul(&setting(b, &zb, &xb)).sum().re
    };
    let correlators = Correlators {
        a1b1: correlator(Setting::A1, Setting::B1),
        a1b2: correlator(Setting::A1, Setting::B2),
        a2b1: correlator(Setting::A2, Setting::B1),
        a2b2: correlator(Setting::A2, Setting::B2),
    };
    let s = correlators.a1b1 + correlators.a1b2 + correlators.a2b1 - correlators.a2b2;
    // Each correlator involves operators of norm ≤ √2 per mode and a state
    // built from four truncated codewords.
    let cutoff: f64 = ca.iter().chain(&cb).map(FockVector::error_bar).sum();
    Ok(OracleChsh {
        correlators,
        s,
        error_bar: 4.0 * 2.0 * cutoff,
    })
}
