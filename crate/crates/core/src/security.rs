//! Error probability, QBER, Holevo bound and Devetak-Winter key rate.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::chsh::{BellEngine, Setting};
use crate::codec::{approximate_codeword, kappa_from_db, CodeParams, LogicalLabel};
use crate::comb::{integrate_against_step, SQRT_PI};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::loss::{Binning, ChannelParams};
use crate::measurement::BinnedObservable;

pub const TSIRELSON: f64 = 2.0 * SQRT_2;

/// Slack allowed above 2√2 before S counts as non-physical.
const S_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorProbability {
    /// Odd-bin mass of |ψ_0̄|² after binning.
    pub exact: f64,
    /// 2Δ²/(κπ)·exp(−π/(4Δ²)).
    pub closed_form_bound: f64,
}

/// Exact misidentification probability of |0̄⟩ under q-binning, with the
/// closed-form bound alongside.
pub fn error_probability(params: &CodeParams) -> Result<ErrorProbability> {
    // Integrating the odd-bin indicator directly avoids the cancellation
    // in (1 − Z₀₀)/2 once P_e drops below machine epsilon.
    let psi = approximate_codeword(LogicalLabel::Zero, params);
    let odd = BinnedObservable::z().indicator(-1);
    let mass = integrate_against_step(&psi, &psi, &odd, &params.truncation)?.value.re;
    Ok(ErrorProbability {
        exact: mass.max(0.0),
        closed_form_bound: closed_form_error_bound(params.kappa, params.delta_eff()),
    })
}

pub fn closed_form_error_bound(kappa: f64, delta: f64) -> f64 {
    2.0 * delta * delta / (kappa * PI) * (-0.25 * PI / (delta * delta)).exp()
}

pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange { value: p });
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    if p == 0.5 {
        return Ok(1.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Upper bound on Eve's Holevo information given the CHSH value.
pub fn holevo_bound(s: f64) -> Result<f64> {
    if s > TSIRELSON + S_SLACK {
        return Err(Error::NonPhysicalChsh { s });
    }
    if s.is_nan() || s < 0.0 {
        return Err(invalid("s", s, "must lie in [0, 2√2]"));
    }
    if s <= 2.0 {
        return Ok(1.0);
    }
    let root = ((0.5 * s).powi(2) - 1.0).max(0.0).sqrt().min(1.0);
    binary_entropy(0.5 * (1.0 + root))
}

/// 1 − h(Q) − χ(S), not floored.
pub fn devetak_winter(s: f64, q: f64) -> Result<f64> {
    Ok(1.0 - binary_entropy(q)? - holevo_bound(s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub s: f64,
    pub p_e: f64,
    pub qber: f64,
    pub chi: f64,
    pub i_ab: f64,
    pub rate: f64,
    pub rate_floored: f64,
}

impl SecurityReport {
    /// Assembles the chain from S and a single-party error probability.
    pub fn from_error_probability(s: f64, p_e: f64) -> Result<Self> {
        SecurityReport::assemble(s, p_e, 2.0 * p_e * (1.0 - p_e))
    }

    /// Assembles the chain from S and an observed QBER; P_e is the
    /// symmetric single-party rate that reproduces it.
    pub fn from_qber(s: f64, qber: f64) -> Result<Self> {
        let p_e = 0.5 * (1.0 - (1.0 - 2.0 * qber).max(0.0).sqrt());
        SecurityReport::assemble(s, p_e, qber)
    }

    fn assemble(s: f64, p_e: f64, qber: f64) -> Result<Self> {
        let chi = holevo_bound(s)?;
        let i_ab = 1.0 - binary_entropy(qber)?;
        let rate = i_ab - chi;
        Ok(SecurityReport {
            s,
            p_e,
            qber,
            chi,
            i_ab,
            rate,
            rate_floored: rate.max(0.0),
        })
    }
}

/// Full chain for the Bell state. Without loss, Q comes from the two
/// parties' exact error probabilities; with loss on Bob's mode, Q is the
/// engine's P(a ≠ b | A0, B1).
pub fn security_report(
    params_a: &CodeParams,
    params_b: &CodeParams,
    channel: Option<&ChannelParams>,
    binning: Binning,
) -> Result<SecurityReport> {
    let lossy = channel.filter(|c| !c.is_identity());
    let engine = BellEngine::new(params_a, params_b, lossy, binning)?;
    let s = engine.chsh().s;
    match lossy {
        None => {
            let pa = error_probability(params_a)?.exact;
            if params_a == params_b {
                SecurityReport::from_error_probability(s, pa)
            } else {
                let pb = error_probability(params_b)?.exact;
                SecurityReport::from_qber(s, pa + pb - 2.0 * pa * pb)
            }
        }
        Some(_) => SecurityReport::from_qber(s, disagreement(&engine)?),
    }
}

fn disagreement(engine: &BellEngine) -> Result<f64> {
    let t = engine.probabilities(Setting::A0, Setting::B1)?;
    Ok(t[0][1] + t[1][0])
}

/// P(a ≠ b | A0, B1) from the engine.
pub fn key_disagreement(params_a: &CodeParams, params_b: &CodeParams, channel: Option<&ChannelParams>) -> Result<f64> {
    disagreement(&BellEngine::new(params_a, params_b, channel, Binning::default())?)
}

/// How Δ follows κ along a curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaRule {
    EqualsKappa,
    Fixed(f64),
}

impl DeltaRule {
    pub fn params(self, sq_db: f64) -> Result<CodeParams> {
        let kappa = kappa_from_db(sq_db);
        match self {
            DeltaRule::EqualsKappa => CodeParams::symmetric(kappa),
            DeltaRule::Fixed(d) => CodeParams::new(kappa, d, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyrateRow {
    pub sq_db: f64,
    pub kappa: f64,
    pub delta_eff: f64,
    pub report: SecurityReport,
}

pub fn keyrate_row(sq_db: f64, rule: DeltaRule, channel: Option<&ChannelParams>) -> Result<KeyrateRow> {
    let p = rule.params(sq_db)?;
    Ok(KeyrateRow {
        sq_db,
        kappa: p.kappa,
        delta_eff: p.delta_eff(),
        report: security_report(&p, &p, channel, Binning::default())?,
    })
}

/// One row per squeezing value, in input order.
pub fn keyrate_curve(
    sq_db: &[f64],
    rule: DeltaRule,
    channel: Option<&ChannelParams>,
    exec: Execution,
) -> Result<Vec<KeyrateRow>> {
    exec.map(sq_db, |&db| keyrate_row(db, rule, channel))
        .into_iter()
        .collect()
}

/// Bisects `f` for a sign change on [lo, hi]; `f(lo)` and `f(hi)` must
/// differ in sign.
fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<Option<f64>> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo.signum() == fhi.signum() {
        return Ok(None);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Squeezing (dB) where S crosses 2 along the rule's curve.
pub fn chsh_threshold_db(rule: DeltaRule, lo: f64, hi: f64, tol: f64) -> Result<Option<f64>> {
    bisect(
        |db| {
            let p = rule.params(db)?;
            Ok(crate::chsh::chsh_value(&p, &p, None)?.s - 2.0)
        },
        lo,
        hi,
        tol,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub sq_db: f64,
    pub qber: f64,
    pub s: f64,
}

/// Where the unfloored rate crosses zero along the rule's curve.
pub fn critical_point(rule: DeltaRule, lo: f64, hi: f64, tol: f64) -> Result<Option<CriticalPoint>> {
    let root = bisect(|db| Ok(keyrate_row(db, rule, None)?.report.rate), lo, hi, tol)?;
    root.map(|db| {
        let r = keyrate_row(db, rule, None)?.report;
        Ok(CriticalPoint {
            sq_db: db,
            qber: r.qber,
            s: r.s,
        })
    })
    .transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundAuditRow {
    pub kappa: f64,
    pub delta: f64,
    pub exact: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Exact P_e against the closed-form bound on a grid, restricted to
/// κ√π < 0.5.
pub fn audit_error_bound(kappas: &[f64], deltas: &[f64], exec: Execution) -> Result<Vec<BoundAuditRow>> {
    let grid: Vec<(f64, f64)> = kappas
        .iter()
        .filter(|k| **k * SQRT_PI < 0.5)
        .flat_map(|&k| deltas.iter().map(move |&d| (k, d)))
        .collect();
    exec.map(&grid, |&(kappa, delta)| {
        let p = CodeParams::new(kappa, delta, 0.0)?;
        let e = error_probability(&p)?;
        Ok(BoundAuditRow {
            kappa,
            delta,
            exact: e.exact,
            bound: e.closed_form_bound,
            holds: e.exact <= e.closed_form_bound,
        })
    })
    .into_iter()
    .collect()
}
