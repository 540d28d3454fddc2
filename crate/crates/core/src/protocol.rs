//! Monte Carlo run of the protocol: basis choice, outcome sampling from the
//! engine's probability tables, sifting, CHSH and QBER estimation.
//!
//! Rounds are i.i.d. Each round draws from its own ChaCha8 stream selected
//! by the round index, so the result does not depend on how rounds are
//! scheduled. Tallies are integers and merge exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chsh::{probability_tables, Setting};
use crate::codec::CodeParams;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::loss::{Binning, ChannelParams};
use crate::security::{devetak_winter, TSIRELSON};

/// Stated in every result: the simulation draws independent rounds.
pub const IID_ASSUMPTION: &str = "rounds are i.i.d. and measurements causally independent";

const CHUNK: u64 = 1 << 16;

/// How many rounds go to testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TestFractionRule {
    /// About ⌈√N⌉ test rounds in expectation.
    SqrtN,
    /// A fixed expected fraction of rounds.
    Fixed(f64),
}

impl TestFractionRule {
    /// Probability that Alice picks a test setting.
    pub fn test_probability(self, n_pairs: u64) -> Result<f64> {
        match self {
            TestFractionRule::SqrtN => {
                let n = n_pairs as f64;
                Ok(((n.sqrt().ceil()) / n).min(1.0))
            }
            TestFractionRule::Fixed(f) if f > 0.0 && f <= 1.0 => Ok(f),
            TestFractionRule::Fixed(f) => Err(invalid("test_fraction", f, "must lie in (0, 1]")),
        }
    }
}

/// Setting distributions over (A0, A1, A2) and (B1, B2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisProbabilities {
    pub alice: [f64; 3],
    pub bob: [f64; 2],
}

impl BasisProbabilities {
    /// Alice picks A1 or A2 with total probability `alice_test`, split
    /// evenly; Bob picks B2 with probability `bob_b2`.
    pub fn with_test_probabilities(alice_test: f64, bob_b2: f64) -> Result<Self> {
        if !(alice_test > 0.0 && alice_test <= 1.0) {
            return Err(invalid("alice_test", alice_test, "must lie in (0, 1]"));
        }
        if !(bob_b2 > 0.0 && bob_b2 < 1.0) {
            return Err(invalid("bob_b2", bob_b2, "must lie in (0, 1)"));
        }
        BasisProbabilities {
            alice: [1.0 - alice_test, 0.5 * alice_test, 0.5 * alice_test],
            bob: [1.0 - bob_b2, bob_b2],
        }
        .validated()
    }

    /// Alice (1−2t, t, t), Bob (1−t, t).
    pub fn skewed(t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 0.5) {
            return Err(invalid("t", t, "must lie in (0, 1/2]"));
        }
        BasisProbabilities::with_test_probabilities(2.0 * t, t)
    }

    pub fn uniform() -> Self {
        BasisProbabilities {
            alice: [1.0 / 3.0; 3],
            bob: [0.5; 2],
        }
    }

    pub fn validated(self) -> Result<Self> {
        let check = |ps: &[f64]| -> Result<()> {
            if let Some(&p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(invalid("basis probability", p, "must lie in [0, 1]"));
            }
            let sum: f64 = ps.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(invalid("basis probabilities", sum, "must sum to 1"));
            }
            Ok(())
        };
        check(&self.alice)?;
        check(&self.bob)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n_pairs: u64,
    pub test_fraction_rule: TestFractionRule,
    /// Explicit distributions. `None` lets Alice test at the rule's rate
    /// while Bob splits evenly, which balances the four CHSH settings.
    pub basis_probabilities: Option<BasisProbabilities>,
    pub seed: u64,
    pub params_a: CodeParams,
    pub params_b: CodeParams,
    pub channel: Option<ChannelParams>,
    pub binning: Binning,
}

impl ProtocolConfig {
    /// Symmetric parties, no channel, √N testing.
    pub fn new(n_pairs: u64, params: CodeParams, seed: u64) -> Self {
        ProtocolConfig {
            n_pairs,
            test_fraction_rule: TestFractionRule::SqrtN,
            basis_probabilities: None,
            seed,
            params_a: params,
            params_b: params,
            channel: None,
            binning: Binning::default(),
        }
    }

    pub fn basis(&self) -> Result<BasisProbabilities> {
        if self.n_pairs == 0 {
            return Err(invalid("n_pairs", 0.0, "must be positive"));
        }
        match self.basis_probabilities {
            Some(b) => b.validated(),
            None => BasisProbabilities::with_test_probabilities(self.test_fraction_rule.test_probability(self.n_pairs)?, 0.5),
        }
    }
}

/// One test round with outcomes ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRound {
    pub alice: Setting,
    pub bob: Setting,
    pub a: i8,
    pub b: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshEstimate {
    pub s_hat: f64,
    pub standard_error: f64,
    /// The plug-in estimate is not clamped; this flags S > 2√2.
    pub exceeds_tsirelson: bool,
}

/// Rounds and agreements for one setting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingCount {
    pub alice: Setting,
    pub bob: Setting,
    pub rounds: u64,
    pub agreements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub n_pairs: u64,
    pub seed: u64,
    pub basis_probabilities: BasisProbabilities,
    pub s_hat: f64,
    pub s_standard_error: f64,
    pub exceeds_tsirelson: bool,
    pub q_hat: f64,
    pub q_standard_error: f64,
    pub sifted_count: u64,
    pub discarded_count: u64,
    pub test_count: u64,
    /// Fraction of Alice's key bits equal to 1 after symmetrization.
    pub alice_key_bit_mean: f64,
    pub rate_estimate: f64,
    pub setting_counts: Vec<SettingCount>,
    pub assumption: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    rounds: [[u64; 2]; 3],
    agreements: [[u64; 2]; 3],
    key_errors: u64,
    alice_ones: u64,
}

impl Tally {
    fn merge(mut self, other: &Tally) -> Tally {
        for i in 0..3 {
            for j in 0..2 {
                self.rounds[i][j] += other.rounds[i][j];
                self.agreements[i][j] += other.agreements[i][j];
            }
        }
        self.key_errors += other.key_errors;
        self.alice_ones += other.alice_ones;
        self
    }

    fn record(&mut self, i: usize, j: usize, a: i8, b: i8) {
        self.rounds[i][j] += 1;
        self.agreements[i][j] += u64::from(a == b);
    }

    fn estimate(&self) -> Result<ChshEstimate> {
        let mut s = 0.0;
        let mut var = 0.0;
        for (i, j, sign) in [(1, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, -1.0)] {
            let n = self.rounds[i][j];
            if n == 0 {
                return Err(Error::MissingSetting {
                    setting: format!("{}{}", Setting::ALICE[i].name(), Setting::BOB[j].name()),
                });
            }
            let e = (2.0 * self.agreements[i][j] as f64 - n as f64) / n as f64;
            s += sign * e;
            var += (1.0 - e * e) / n as f64;
        }
        Ok(ChshEstimate {
            s_hat: s,
            standard_error: var.sqrt(),
            exceeds_tsirelson: s > TSIRELSON,
        })
    }
}

fn alice_index(s: Setting) -> Option<usize> {
    Setting::ALICE.iter().position(|&x| x == s)
}

fn bob_index(s: Setting) -> Option<usize> {
    Setting::BOB.iter().position(|&x| x == s)
}

/// Plug-in S from test rounds, with binomial standard errors per setting
/// combined in quadrature. Rounds with A0 are ignored.
pub fn estimate_chsh(rounds: &[TestRound]) -> Result<ChshEstimate> {
    let mut t = Tally::default();
    for r in rounds {
        match (alice_index(r.alice), bob_index(r.bob)) {
            (Some(i), Some(j)) if i > 0 => t.record(i, j, r.a, r.b),
            (Some(_), Some(_)) => {}
            _ => return Err(invalid("round", 0.0, "settings must be (Alice, Bob)")),
        }
    }
    t.estimate()
}

fn categorical<const N: usize>(ps: &[f64; N], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in ps.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the last cumulative sum.
    ps.iter().rposition(|&p| p > 0.0).unwrap_or(N - 1)
}

/// Runs `cfg.n_pairs` rounds in order-independent chunks.
pub fn run_protocol(cfg: &ProtocolConfig, exec: Execution) -> Result<ProtocolResult> {
    let basis = cfg.basis()?;
    let tables = probability_tables(&cfg.params_a, &cfg.params_b, cfg.channel.as_ref(), cfg.binning)?;
    let flat: Vec<Vec<[f64; 4]>> = tables
        .iter()
        .map(|row| row.iter().map(|t| [t[0][0], t[0][1], t[1][0], t[1][1]]).collect())
        .collect();
    let base = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_pairs;
    let chunks = n.div_ceil(CHUNK) as usize;

    let tally = exec
        .map_range(chunks, |c| {
            let mut t = Tally::default();
            let lo = c as u64 * CHUNK;
            for round in lo..(lo + CHUNK).min(n) {
                let mut rng = base.clone();
                rng.set_stream(round);
                let i = categorical(&basis.alice, rng.gen());
                let j = categorical(&basis.bob, rng.gen());
                let k = categorical(&flat[i][j], rng.gen());
                let a: i8 = if k < 2 { 1 } else { -1 };
                let b: i8 = if k % 2 == 0 { 1 } else { -1 };
                let flip: bool = rng.gen();
                t.record(i, j, a, b);
                if i == 0 && j == 0 {
                    t.key_errors += u64::from(a != b);
                    t.alice_ones += u64::from((a == -1) ^ flip);
                }
            }
            t
        })
        .iter()
        .fold(Tally::default(), |acc, t| acc.merge(t));

    let sifted = tally.rounds[0][0];
    let discarded = tally.rounds[0][1];
    let tested = n - sifted - discarded;
    let chsh = tally.estimate()?;
    if sifted == 0 {
        return Err(Error::MissingSetting {
            setting: "A0B1".to_string(),
        });
    }
    let q = tally.key_errors as f64 / sifted as f64;
    let rate = devetak_winter(chsh.s_hat.clamp(0.0, TSIRELSON), q)?.max(0.0);
    let mut setting_counts = Vec::with_capacity(6);
    for (i, a) in Setting::ALICE.into_iter().enumerate() {
        for (j, b) in Setting::BOB.into_iter().enumerate() {
            setting_counts.push(SettingCount {
                alice: a,
                bob: b,
                rounds: tally.rounds[i][j],
                agreements: tally.agreements[i][j],
            });
        }
    }
    Ok(ProtocolResult {
        n_pairs: n,
        seed: cfg.seed,
        basis_probabilities: basis,
        s_hat: chsh.s_hat,
        s_standard_error: chsh.standard_error,
        exceeds_tsirelson: chsh.exceeds_tsirelson,
        q_hat: q,
        q_standard_error: (q * (1.0 - q) / sifted as f64).sqrt(),
        sifted_count: sifted,
        discarded_count: discarded,
        test_count: tested,
        alice_key_bit_mean: tally.alice_ones as f64 / sifted as f64,
        rate_estimate: rate,
        setting_counts,
        assumption: IID_ASSUMPTION.to_string(),
    })
}
