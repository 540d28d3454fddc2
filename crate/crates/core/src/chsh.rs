//! CHSH correlators of the encoded Bell state at the logical level.
//!
//! Each party's setting is a fixed combination u·Z̄ + v·X̄ of the binned
//! observables, realized by a perfect logical rotation before the q-homodyne.
//! Correlators contract the Bell coefficients with single-mode matrices,
//! correcting for the non-orthogonal codewords through the Gram matrices.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::sync::{Arc, OnceLock, RwLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::codec::{bell_norm_sqr, CodeParams, LogicalMatrix};
use crate::error::{Error, Result};
use crate::loss::{lossy_matrices, Binning, ChannelParams};
use crate::measurement::{binned_matrices, outcome_matrices, BinnedObservable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    A0,
    A1,
    A2,
    B1,
    B2,
}

impl Setting {
    pub const ALICE: [Setting; 3] = [Setting::A0, Setting::A1, Setting::A2];
    pub const BOB: [Setting; 2] = [Setting::B1, Setting::B2];

    /// (u, v) in u·Z̄ + v·X̄.
    pub fn weights(self) -> (f64, f64) {
        match self {
            Setting::A0 | Setting::B1 => (1.0, 0.0),
            Setting::A1 => (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
            Setting::A2 => (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
            Setting::B2 => (0.0, 1.0),
        }
    }

    pub fn is_alice(self) -> bool {
        matches!(self, Setting::A0 | Setting::A1 | Setting::A2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::A0 => "A0",
            Setting::A1 => "A1",
            Setting::A2 => "A2",
            Setting::B1 => "B1",
            Setting::B2 => "B2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveObservable {
    pub matrix: LogicalMatrix,
    pub label: Setting,
}

/// Correlators entering S, in Eq.-3 order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlators {
    pub a1b1: f64,
    pub a1b2: f64,
    pub a2b1: f64,
    pub a2b2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshReport {
    pub correlators: Correlators,
    pub s: f64,
}

/// Single-mode matrices for one party. For a lossy mode, entry (m, n) is
/// Tr[O·L(|n̄⟩⟨m̄|)], which is what the Bell contraction needs.
#[derive(Debug, Clone)]
pub(crate) struct SideMatrices {
    pub gram: LogicalMatrix,
    pub z: LogicalMatrix,
    pub x: LogicalMatrix,
    pub fz: [LogicalMatrix; 2],
    pub fx: [LogicalMatrix; 2],
}

impl SideMatrices {
    fn compute(params: &CodeParams, channel: Option<&ChannelParams>, binning: Binning) -> Result<Self> {
        let gram = crate::codec::gram_matrix(params);
        match channel {
            Some(ch) if !ch.is_identity() => {
                let [z, x] = lossy_matrices(params, &BinnedObservable::z(), ch, binning)?;
                Ok(SideMatrices {
                    gram,
                    z: z.sign,
                    x: x.sign,
                    fz: z.outcomes,
                    fx: x.outcomes,
                })
            }
            _ => Ok(SideMatrices {
                gram,
                z: binned_matrices(params, &BinnedObservable::z())?,
                x: binned_matrices(params, &BinnedObservable::x())?,
                fz: outcome_matrices(params, &BinnedObservable::z())?,
                fx: outcome_matrices(params, &BinnedObservable::x())?,
            }),
        }
    }

    fn observable(&self, s: Setting) -> LogicalMatrix {
        let (u, v) = s.weights();
        self.z * Complex64::new(u, 0.0) + self.x * Complex64::new(v, 0.0)
    }

    /// POVM matrix for outcome ±1 of setting `s`, assembled from the Z̄ and
    /// X̄ indicator matrices: F± = (G ± u·M_Z ± v·M_X)/2.
    fn outcome(&self, s: Setting, outcome: i8) -> LogicalMatrix {
        let (u, v) = s.weights();
        let pick = |f: &[LogicalMatrix; 2], sign: f64| if sign * outcome as f64 > 0.0 { f[0] } else { f[1] };
        let r = |x: f64| Complex64::new(x, 0.0);
        pick(&self.fz, 1.0) * r(u) + pick(&self.fx, v.signum()) * r(v.abs()) + self.gram * r(0.5 * (1.0 - u - v.abs()))
    }
}

type CacheKey = ([u64; 6], u64, Binning);

fn cache() -> &'static RwLock<HashMap<CacheKey, Arc<SideMatrices>>> {
    static CACHE: OnceLock<RwLock<HashMap<CacheKey, Arc<SideMatrices>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Memoized single-mode matrices; safe for concurrent readers.
pub(crate) fn side_matrices(
    params: &CodeParams,
    channel: Option<&ChannelParams>,
    binning: Binning,
) -> Result<Arc<SideMatrices>> {
    let eta = channel.map_or(1.0, |c| c.eta);
    let key = (params.cache_key(), eta.to_bits(), if eta == 1.0 { Binning::Uncorrected } else { binning });
    if let Some(hit) = cache().read().expect("cache lock").get(&key) {
        return Ok(hit.clone());
    }
    let value = Arc::new(SideMatrices::compute(params, channel, binning)?);
    cache().write().expect("cache lock").insert(key, value.clone());
    Ok(value)
}

/// Drops every memoized matrix.
pub fn clear_cache() {
    cache().write().expect("cache lock").clear();
}

/// Logical matrix of a setting on an unattenuated mode.
pub fn effective_observable(label: Setting, params: &CodeParams, channel: Option<&ChannelParams>) -> Result<EffectiveObservable> {
    let side = side_matrices(params, channel, Binning::default())?;
    Ok(EffectiveObservable {
        matrix: side.observable(label),
        label,
    })
}

/// Both parties' matrices plus the Bell normalization.
pub(crate) struct BellEngine {
    alice: Arc<SideMatrices>,
    bob: Arc<SideMatrices>,
    norm_sqr: f64,
}

impl BellEngine {
    pub fn new(
        params_a: &CodeParams,
        params_b: &CodeParams,
        channel: Option<&ChannelParams>,
        binning: Binning,
    ) -> Result<Self> {
        let alice = side_matrices(params_a, None, binning)?;
        let bob = side_matrices(params_b, channel, binning)?;
        let norm_sqr = bell_norm_sqr(&alice.gram, &bob.gram);
        Ok(BellEngine { alice, bob, norm_sqr })
    }

    /// c²·Σ_mn A_mn·B_mn.
    fn contract(&self, a: &LogicalMatrix, b: &LogicalMatrix) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for m in 0..2 {
            for n in 0..2 {
                s += a[(m, n)] * b[(m, n)];
            }
        }
        s * self.norm_sqr
    }

    pub fn correlator(&self, a: Setting, b: Setting) -> f64 {
        self.contract(&self.alice.observable(a), &self.bob.observable(b)).re
    }

    pub fn chsh(&self) -> ChshReport {
        let c = |a, b| self.correlator(a, b);
        let correlators = Correlators {
            a1b1: c(Setting::A1, Setting::B1),
            a1b2: c(Setting::A1, Setting::B2),
            a2b1: c(Setting::A2, Setting::B1),
            a2b2: c(Setting::A2, Setting::B2),
        };
        let s = correlators.a1b1 + correlators.a1b2 + correlators.a2b1 - correlators.a2b2;
        ChshReport { correlators, s }
    }

    /// Table indexed [a][b], index 0 for outcome +1.
    pub fn probabilities(&self, a: Setting, b: Setting) -> Result<[[f64; 2]; 2]> {
        let mut table = [[0.0; 2]; 2];
        for (i, oa) in [1i8, -1].into_iter().enumerate() {
            for (j, ob) in [1i8, -1].into_iter().enumerate() {
                let p = self.contract(&self.alice.outcome(a, oa), &self.bob.outcome(b, ob)).re;
                table[i][j] = clip_probability(p)?;
            }
        }
        Ok(table)
    }
}

/// Clips values within 1e−9 of [0, 1]; anything further out is an error.
pub fn clip_probability(p: f64) -> Result<f64> {
    const SLACK: f64 = 1e-9;
    if !(-SLACK..=1.0 + SLACK).contains(&p) {
        return Err(Error::ProbabilityOutOfRange { value: p });
    }
    Ok(p.clamp(0.0, 1.0))
}

/// S and its four correlators; any channel acts on Bob's mode.
pub fn chsh_value(params_a: &CodeParams, params_b: &CodeParams, channel: Option<&ChannelParams>) -> Result<ChshReport> {
    chsh_value_with(params_a, params_b, channel, Binning::default())
}

pub fn chsh_value_with(
    params_a: &CodeParams,
    params_b: &CodeParams,
    channel: Option<&ChannelParams>,
    binning: Binning,
) -> Result<ChshReport> {
    Ok(BellEngine::new(params_a, params_b, channel, binning)?.chsh())
}

/// P(a, b | setting_a, setting_b), indexed [a][b] with index 0 for +1.
pub fn outcome_probabilities(
    setting_a: Setting,
    setting_b: Setting,
    params_a: &CodeParams,
    params_b: &CodeParams,
    channel: Option<&ChannelParams>,
) -> Result<[[f64; 2]; 2]> {
    BellEngine::new(params_a, params_b, channel, Binning::default())?.probabilities(setting_a, setting_b)
}

/// Outcome tables for every (Alice, Bob) setting pair, indexed
/// [alice setting][bob setting][a][b].
pub fn probability_tables(
    params_a: &CodeParams,
    params_b: &CodeParams,
    channel: Option<&ChannelParams>,
    binning: Binning,
) -> Result<[[[[f64; 2]; 2]; 2]; 3]> {
    let engine = BellEngine::new(params_a, params_b, channel, binning)?;
    let mut out = [[[[0.0; 2]; 2]; 2]; 3];
    for (i, a) in Setting::ALICE.into_iter().enumerate() {
        for (j, b) in Setting::BOB.into_iter().enumerate() {
            out[i][j] = engine.probabilities(a, b)?;
        }
    }
    Ok(out)
}

/// S under an independent bit-flip model where each party misreads with
/// probability p_e: every correlator shrinks by (1 − 2p_e)².
pub fn flip_model_chsh(p_e: f64) -> f64 {
    2.0 * SQRT_2 * (1.0 - 2.0 * p_e).powi(2)
}
