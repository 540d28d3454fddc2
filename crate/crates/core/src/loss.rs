//! Pure-loss channel on Bob's mode, evaluated on Wigner combs.

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codec::{codeword_pair, CodeParams, LogicalLabel, LogicalMatrix};
use crate::comb::{Comb1D, Comb2D, PiecewiseSign};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::measurement::{BinnedObservable, Quadrature};
use crate::security::{security_report, SecurityReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub eta: f64,
    pub distance_km: Option<f64>,
    pub loss_db_per_km: Option<f64>,
}

impl ChannelParams {
    pub fn transmissivity(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid("eta", eta, "must lie in (0, 1]"));
        }
        Ok(ChannelParams {
            eta,
            distance_km: None,
            loss_db_per_km: None,
        })
    }

    /// Fiber of the given length: η = 10^(−distance·loss/10).
    pub fn fiber(distance_km: f64, loss_db_per_km: f64) -> Result<Self> {
        if !(distance_km >= 0.0 && distance_km.is_finite()) {
            return Err(invalid("distance_km", distance_km, "must be non-negative and finite"));
        }
        if !(loss_db_per_km >= 0.0 && loss_db_per_km.is_finite()) {
            return Err(invalid("loss_db_per_km", loss_db_per_km, "must be non-negative and finite"));
        }
        let eta = 10f64.powf(-distance_km * loss_db_per_km / 10.0);
        let mut ch = ChannelParams::transmissivity(eta)?;
        ch.distance_km = Some(distance_km);
        ch.loss_db_per_km = Some(loss_db_per_km);
        Ok(ch)
    }

    pub fn is_identity(&self) -> bool {
        self.eta == 1.0
    }
}

/// How Bob bins after loss has contracted the lattice by √η.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Binning {
    /// Bins stay on the √π lattice.
    #[default]
    Uncorrected,
    /// Bins rescaled to √η·√π. Exploratory; not part of the reference model.
    RescaledSqrtEta,
}

impl Binning {
    pub fn observable(self, obs: &BinnedObservable, eta: f64) -> BinnedObservable {
        match self {
            Binning::Uncorrected => *obs,
            Binning::RescaledSqrtEta => obs.with_spacing(obs.bin_spacing * eta.sqrt()),
        }
    }
}

/// Wigner function of |m̄⟩⟨n̄|.
pub fn wigner_of_pair(m: LogicalLabel, n: LogicalLabel, params: &CodeParams) -> Comb2D {
    let cw = codeword_pair(params);
    wigner_of_codewords(&cw, m, n)
}

fn wigner_of_codewords(cw: &[Comb1D; 2], m: LogicalLabel, n: LogicalLabel) -> Comb2D {
    cw[m.index()]
        .wigner_cross(&cw[n.index()])
        .expect("codeword peaks share one width")
}

/// Beamsplitter loss: v → √η·v plus (1−η)/2 vacuum noise per quadrature.
pub fn apply_loss(w: &Comb2D, ch: &ChannelParams) -> Result<Comb2D> {
    let eta = ch.eta;
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", eta, "must lie in (0, 1]"));
    }
    w.apply_gaussian_channel(
        &(Matrix2::identity() * eta.sqrt()),
        &(Matrix2::identity() * (0.5 * (1.0 - eta))),
    )
}

/// Mean photon number (⟨q²⟩ + ⟨p²⟩ − 1)/2 of a unit-trace Wigner comb.
pub fn mean_photon_number(w: &Comb2D) -> f64 {
    let q2 = w.marginal(crate::comb::Representation::Position).moment(2).re;
    let p2 = w.marginal(crate::comb::Representation::Momentum).moment(2).re;
    0.5 * (q2 + p2 - 1.0)
}

fn integrate_marginal(w: &Comb2D, obs: &BinnedObservable, f: &PiecewiseSign, params: &CodeParams) -> Result<Complex64> {
    let marginal = w.marginal(obs.representation()).simplified();
    let (marginal, _) = marginal.pruned(params.truncation.tolerance);
    Ok(marginal.integrate_step(f, &params.truncation)?.value)
}

/// Tr[O · L(|n̄⟩⟨m̄|)]; reduces to ⟨m̄|O|n̄⟩ at η = 1.
pub fn lossy_binned_matrix(
    m: LogicalLabel,
    n: LogicalLabel,
    params: &CodeParams,
    obs: &BinnedObservable,
    ch: &ChannelParams,
) -> Result<Complex64> {
    let w = apply_loss(&wigner_of_pair(n, m, params), ch)?;
    integrate_marginal(&w, obs, &obs.sign_function(), params)
}

fn lossy_matrix_against(
    wigners: &[[Comb2D; 2]; 2],
    params: &CodeParams,
    obs: &BinnedObservable,
    f: &PiecewiseSign,
) -> Result<LogicalMatrix> {
    let mut out = LogicalMatrix::zeros();
    for m in 0..2 {
        for n in 0..2 {
            out[(m, n)] = integrate_marginal(&wigners[n][m], obs, f, params)?;
        }
    }
    Ok(out)
}

/// Lossy Wigner combs, indexed [n][m] for L(|n̄⟩⟨m̄|).
fn lossy_wigners(params: &CodeParams, ch: &ChannelParams) -> Result<[[Comb2D; 2]; 2]> {
    let cw = codeword_pair(params);
    let [z, o] = LogicalLabel::BOTH;
    let w = |a, b| apply_loss(&wigner_of_codewords(&cw, a, b), ch);
    Ok([[w(z, z)?, w(z, o)?], [w(o, z)?, w(o, o)?]])
}

/// Sign matrix and outcome matrices [F₊, F₋] for one observable after loss.
pub(crate) struct LossyMatrices {
    pub sign: LogicalMatrix,
    pub outcomes: [LogicalMatrix; 2],
}

pub(crate) fn lossy_matrices(
    params: &CodeParams,
    obs: &BinnedObservable,
    ch: &ChannelParams,
    binning: Binning,
) -> Result<[LossyMatrices; 2]> {
    let wigners = lossy_wigners(params, ch)?;
    let build = |base: &BinnedObservable| -> Result<LossyMatrices> {
        let o = binning.observable(base, ch.eta);
        Ok(LossyMatrices {
            sign: lossy_matrix_against(&wigners, params, &o, &o.sign_function())?,
            outcomes: [
                lossy_matrix_against(&wigners, params, &o, &o.indicator(1))?,
                lossy_matrix_against(&wigners, params, &o, &o.indicator(-1))?,
            ],
        })
    };
    let other = match obs.quadrature {
        Quadrature::Q => BinnedObservable::x().with_spacing(obs.bin_spacing),
        Quadrature::P => BinnedObservable::z().with_spacing(obs.bin_spacing),
    };
    let first = build(obs)?;
    let second = build(&other)?;
    Ok(match obs.quadrature {
        Quadrature::Q => [first, second],
        Quadrature::P => [second, first],
    })
}

/// One row of a distance scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub distance_km: f64,
    pub eta: f64,
    pub report: SecurityReport,
}

/// Security chain with loss on Bob's mode at each distance.
pub fn rate_vs_distance(
    params: &CodeParams,
    loss_db_per_km: f64,
    distances: &[f64],
    binning: Binning,
    exec: Execution,
) -> Result<Vec<DistanceRow>> {
    exec.map(distances, |&d| {
        let ch = ChannelParams::fiber(d, loss_db_per_km)?;
        let channel = if ch.is_identity() { None } else { Some(ch) };
        Ok(DistanceRow {
            distance_km: d,
            eta: ch.eta,
            report: security_report(params, params, channel.as_ref(), binning)?,
        })
    })
    .into_iter()
    .collect()
}

/// Outcome of scanning squeezing for a target rate at fixed distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub target_rate: f64,
    pub distance_km: f64,
    pub loss_db_per_km: f64,
    /// Squeezing whose floored rate is closest to the target.
    pub sq_db: f64,
    pub rate_floored: f64,
    /// The scanned (sq_db, rate_floored) pairs.
    pub scan: Vec<(f64, f64)>,
}

/// Scans `sq_db_grid` for the squeezing whose rate at the given distance is
/// closest to `target_rate`.
pub fn calibrate_squeezing(
    target_rate: f64,
    distance_km: f64,
    loss_db_per_km: f64,
    sq_db_grid: &[f64],
    binning: Binning,
    exec: Execution,
) -> Result<Calibration> {
    let ch = ChannelParams::fiber(distance_km, loss_db_per_km)?;
    let scan: Vec<(f64, f64)> = exec
        .map(sq_db_grid, |&db| -> Result<(f64, f64)> {
            let p = CodeParams::from_db(db)?;
            let r = security_report(&p, &p, Some(&ch), binning)?;
            Ok((db, r.rate_floored))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let best = scan
        .iter()
        .copied()
        .min_by(|a, b| (a.1 - target_rate).abs().total_cmp(&(b.1 - target_rate).abs()))
        .ok_or(invalid("sq_db_grid", 0.0, "must not be empty"))?;
    Ok(Calibration {
        target_rate,
        distance_km,
        loss_db_per_km,
        sq_db: best.0,
        rate_floored: best.1,
        scan,
    })
}
