//! `gkp-diqkd`: key-rate tables, CHSH values, distance scans, protocol
//! simulation and oracle validation.

mod output;
mod range;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gkp_diqkd::chsh::{chsh_value_with, ChshReport};
use gkp_diqkd::codec::{CodeParams, LogicalLabel, LogicalMatrix};
use gkp_diqkd::comb::Truncation;
use gkp_diqkd::error::Error;
use gkp_diqkd::exec::Execution;
use gkp_diqkd::fock_oracle::{oracle_binned_matrix, oracle_chsh, OracleChsh, OracleMatrix};
use gkp_diqkd::loss::{lossy_binned_matrix, rate_vs_distance, Binning, ChannelParams};
use gkp_diqkd::measurement::{binned_matrices, BinnedObservable};
use gkp_diqkd::protocol::{run_protocol, BasisProbabilities, ProtocolConfig, TestFractionRule, IID_ASSUMPTION};
use gkp_diqkd::security::{security_report, DeltaRule, KeyrateRow};

use output::{emit, fmt_float, render, Format, Provenance, Table};
use range::parse_range;

#[derive(Parser, Debug)]
#[command(name = "gkp-diqkd", version, about = "GKP-encoded device-independent QKD simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: Format,
    /// Output file; defaults to <out-dir>/<command>.<ext>, or stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default output directory.
    #[arg(long, env = "GKP_DIQKD_OUT_DIR", global = true)]
    out_dir: Option<PathBuf>,
    /// Truncation tolerance for series and integrals.
    #[arg(long, default_value_t = 1e-12, global = true)]
    tolerance: f64,
    /// Evaluate rows on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
struct CodeArgs {
    /// How Δ follows κ.
    #[arg(long, value_enum, default_value = "kappa")]
    delta_rule: DeltaRuleArg,
    /// Peak width for `--delta-rule fixed`.
    #[arg(long, required_if_eq("delta_rule", "fixed"))]
    delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DeltaRuleArg {
    /// Δ = κ.
    Kappa,
    /// Δ fixed by --delta.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BinningArg {
    /// Bins of width √π regardless of loss.
    Uncorrected,
    /// Bins of width √(ηπ) after loss.
    Rescaled,
}

impl From<BinningArg> for Binning {
    fn from(b: BinningArg) -> Self {
        match b {
            BinningArg::Uncorrected => Binning::Uncorrected,
            BinningArg::Rescaled => Binning::RescaledSqrtEta,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Key-rate table over squeezing (columns: sq_db, kappa, delta_eff, S,
    /// P_e, QBER, chi, rate, rate_floored).
    Keyrate {
        /// Squeezing in dB: a value or start:stop:step (inclusive when the
        /// step divides the span).
        #[arg(long)]
        sq_db: String,
        #[command(flatten)]
        code: CodeArgs,
        /// Transmissivity of a loss channel on Bob's mode.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value = "uncorrected")]
        binning: BinningArg,
    },
    /// CHSH value and correlators at one squeezing.
    Chsh {
        #[arg(long)]
        sq_db: f64,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, value_enum, default_value = "uncorrected")]
        binning: BinningArg,
    },
    /// Rate against fiber length (columns: distance_km, eta, S, QBER,
    /// rate_floored).
    Distance {
        #[arg(long)]
        sq_db: f64,
        #[arg(long, default_value_t = 0.2)]
        loss_db_per_km: f64,
        /// Distances in km: a value or start:stop:step.
        #[arg(long)]
        km: String,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, value_enum, default_value = "uncorrected")]
        binning: BinningArg,
    },
    /// Monte Carlo run of the protocol.
    Simulate {
        #[arg(long)]
        pairs: u64,
        #[arg(long)]
        sq_db: f64,
        #[arg(long)]
        seed: u64,
        /// `sqrt` for about √N test rounds, or a fixed fraction in (0, 1].
        #[arg(long, default_value = "sqrt")]
        test_fraction: String,
        /// Uniform setting choices instead of the skewed default.
        #[arg(long)]
        uniform_bases: bool,
        /// Fiber length on Bob's side.
        #[arg(long)]
        km: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        loss_db_per_km: f64,
        #[command(flatten)]
        code: CodeArgs,
        #[arg(long, value_enum, default_value = "uncorrected")]
        binning: BinningArg,
    },
    /// Compare the engine with the number-basis oracle.
    Validate {
        /// Squeezing values in dB.
        #[arg(long, default_value = "8:12:2")]
        sq_db: String,
        /// Transmissivity for the lossy comparisons.
        #[arg(long, default_value_t = 0.9)]
        eta: f64,
        /// Starting Fock cutoff; raised automatically until the discarded
        /// norm is acceptable.
        #[arg(long, default_value_t = 150)]
        n_max: usize,
    },
}

fn code_params(code: &CodeArgs, sq_db: f64, tolerance: f64) -> Result<CodeParams> {
    let rule = match code.delta_rule {
        DeltaRuleArg::Kappa => DeltaRule::EqualsKappa,
        DeltaRuleArg::Fixed => DeltaRule::Fixed(code.delta.context("--delta is required")?),
    };
    Ok(rule.params(sq_db)?.with_truncation(Truncation::with_tolerance(tolerance)))
}

fn channel(eta: Option<f64>) -> Result<Option<ChannelParams>> {
    Ok(match eta {
        Some(e) => Some(ChannelParams::transmissivity(e)?),
        None => None,
    })
}

fn collect<T>(rows: Vec<gkp_diqkd::error::Result<T>>) -> Result<Vec<T>> {
    Ok(rows.into_iter().collect::<gkp_diqkd::error::Result<Vec<T>>>()?)
}

fn keyrate(g: &Global, exec: Execution, sq_db: &str, code: &CodeArgs, eta: Option<f64>, binning: BinningArg) -> Result<String> {
    let dbs = parse_range(sq_db)?;
    let ch = channel(eta)?;
    let params = dbs.iter().map(|&db| Ok((db, code_params(code, db, g.tolerance)?))).collect::<Result<Vec<_>>>()?;
    let rows = collect(exec.map(&params, |&(db, p)| {
        Ok(KeyrateRow {
            sq_db: db,
            kappa: p.kappa,
            delta_eff: p.delta_eff(),
            report: security_report(&p, &p, ch.as_ref(), binning.into())?,
        })
    }))?;
    let table = Table {
        header: &["sq_db", "kappa", "delta_eff", "S", "P_e", "QBER", "chi", "rate", "rate_floored"],
        rows: rows
            .iter()
            .map(|r| {
                [r.sq_db, r.kappa, r.delta_eff, r.report.s, r.report.p_e, r.report.qber, r.report.chi, r.report.rate, r.report.rate_floored]
                    .map(fmt_float)
                    .to_vec()
            })
            .collect(),
        json_rows: rows,
    };
    let prov = Provenance::new(
        "keyrate",
        json!({ "sq_db": sq_db, "code": code, "eta": eta, "binning": binning }),
        g.tolerance,
    );
    render(&prov, &table, g.format)
}

fn chsh(g: &Global, sq_db: f64, code: &CodeArgs, eta: Option<f64>, binning: BinningArg) -> Result<String> {
    let p = code_params(code, sq_db, g.tolerance)?;
    let r: ChshReport = chsh_value_with(&p, &p, channel(eta)?.as_ref(), binning.into())?;
    let c = r.correlators;
    let table = Table {
        header: &["sq_db", "S", "E_a1b1", "E_a1b2", "E_a2b1", "E_a2b2"],
        rows: vec![[sq_db, r.s, c.a1b1, c.a1b2, c.a2b1, c.a2b2].map(fmt_float).to_vec()],
        json_rows: vec![r],
    };
    let prov = Provenance::new(
        "chsh",
        json!({ "sq_db": sq_db, "code": code, "eta": eta, "binning": binning }),
        g.tolerance,
    );
    render(&prov, &table, g.format)
}

fn distance(g: &Global, exec: Execution, sq_db: f64, loss: f64, km: &str, code: &CodeArgs, binning: BinningArg) -> Result<String> {
    let p = code_params(code, sq_db, g.tolerance)?;
    let kms = parse_range(km)?;
    let rows = rate_vs_distance(&p, loss, &kms, binning.into(), exec)?;
    let table = Table {
        header: &["distance_km", "eta", "S", "QBER", "rate_floored"],
        rows: rows
            .iter()
            .map(|r| [r.distance_km, r.eta, r.report.s, r.report.qber, r.report.rate_floored].map(fmt_float).to_vec())
            .collect(),
        json_rows: rows,
    };
    let prov = Provenance::new(
        "distance",
        json!({ "sq_db": sq_db, "loss_db_per_km": loss, "km": km, "code": code, "binning": binning }),
        g.tolerance,
    );
    render(&prov, &table, g.format)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    g: &Global,
    exec: Execution,
    pairs: u64,
    sq_db: f64,
    seed: u64,
    test_fraction: &str,
    uniform: bool,
    km: Option<f64>,
    loss: f64,
    code: &CodeArgs,
    binning: BinningArg,
) -> Result<String> {
    let p = code_params(code, sq_db, g.tolerance)?;
    let rule = match test_fraction {
        "sqrt" => TestFractionRule::SqrtN,
        f => TestFractionRule::Fixed(f.parse().with_context(|| format!("--test-fraction `{f}`"))?),
    };
    let ch = match km {
        Some(d) => Some(ChannelParams::fiber(d, loss)?),
        None => None,
    };
    let cfg = ProtocolConfig {
        test_fraction_rule: rule,
        basis_probabilities: uniform.then(BasisProbabilities::uniform),
        channel: ch,
        binning: binning.into(),
        ..ProtocolConfig::new(pairs, p, seed)
    };
    let r = run_protocol(&cfg, exec)?;
    let table = Table {
        header: &[
            "pairs", "seed", "s_hat", "s_se", "q_hat", "q_se", "sifted", "discarded", "tested", "rate_estimate",
        ],
        rows: vec![vec![
            r.n_pairs.to_string(),
            r.seed.to_string(),
            fmt_float(r.s_hat),
            fmt_float(r.s_standard_error),
            fmt_float(r.q_hat),
            fmt_float(r.q_standard_error),
            r.sifted_count.to_string(),
            r.discarded_count.to_string(),
            r.test_count.to_string(),
            fmt_float(r.rate_estimate),
        ]],
        json_rows: vec![r],
    };
    let mut prov = Provenance::new(
        "simulate",
        json!({
            "pairs": pairs, "sq_db": sq_db, "test_fraction": test_fraction, "uniform_bases": uniform,
            "km": km, "loss_db_per_km": loss, "code": code, "binning": binning,
        }),
        g.tolerance,
    );
    prov.seed = Some(seed);
    prov.notes.push(IID_ASSUMPTION.to_string());
    render(&prov, &table, g.format)
}

#[derive(Serialize)]
struct Check {
    sq_db: f64,
    n_max: usize,
    quantity: String,
    difference: f64,
    tolerance: f64,
    pass: bool,
}

/// Retries with a larger cutoff while the oracle reports truncation.
fn with_cutoff<T>(start: usize, mut f: impl FnMut(usize) -> gkp_diqkd::error::Result<T>) -> Result<(usize, T)> {
    let mut n = start;
    loop {
        match f(n) {
            Ok(v) => return Ok((n, v)),
            Err(Error::InsufficientCutoff { .. }) if n < 800 => n += 50,
            Err(e) => return Err(e.into()),
        }
    }
}

fn max_diff(a: &LogicalMatrix, b: &LogicalMatrix) -> f64 {
    (a - b).iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn validate(g: &Global, sq_db: &str, eta: f64, n_start: usize) -> Result<(String, bool)> {
    let dbs = parse_range(sq_db)?;
    let ch = ChannelParams::transmissivity(eta)?;
    let code = CodeArgs {
        delta_rule: DeltaRuleArg::Kappa,
        delta: None,
    };
    let mut checks = Vec::new();
    for db in dbs {
        let p = code_params(&code, db, g.tolerance)?;
        let (n_max, _) = with_cutoff(n_start, |n| gkp_diqkd::fock_oracle::oracle_codeword(LogicalLabel::Zero, &p, n))?;
        let (n_max, _) = with_cutoff(n_max, |n| gkp_diqkd::fock_oracle::oracle_codeword(LogicalLabel::One, &p, n))?;
        let mut push = |quantity: &str, difference: f64, tolerance: f64, bar: f64| {
            checks.push(Check {
                sq_db: db,
                n_max,
                quantity: quantity.to_string(),
                difference,
                tolerance: tolerance + bar,
                pass: difference <= tolerance + bar,
            })
        };
        for (name, obs) in [("M_Z", BinnedObservable::z()), ("M_X", BinnedObservable::x())] {
            let o: OracleMatrix = oracle_binned_matrix(&p, &obs, None, Binning::Uncorrected, n_max)?;
            push(name, max_diff(&o.matrix, &binned_matrices(&p, &obs)?), 1e-6, o.error_bar);
            let o = oracle_binned_matrix(&p, &obs, Some(&ch), Binning::Uncorrected, n_max)?;
            let mut engine = LogicalMatrix::zeros();
            for m in LogicalLabel::BOTH {
                for n in LogicalLabel::BOTH {
                    engine[(m.index(), n.index())] = lossy_binned_matrix(m, n, &p, &obs, &ch)?;
                }
            }
            push(&format!("lossy {name}"), max_diff(&o.matrix, &engine), 1e-5, o.error_bar);
        }
        let o: OracleChsh = oracle_chsh(&p, &p, None, Binning::Uncorrected, n_max)?;
        let e = chsh_value_with(&p, &p, None, Binning::Uncorrected)?;
        push("S", (o.s - e.s).abs(), 1e-6, o.error_bar);
        let o = oracle_chsh(&p, &p, Some(&ch), Binning::Uncorrected, n_max)?;
        let e = chsh_value_with(&p, &p, Some(&ch), Binning::Uncorrected)?;
        push("lossy S", (o.s - e.s).abs(), 1e-5, o.error_bar);
    }
    let all_pass = checks.iter().all(|c| c.pass);
    let table = Table {
        header: &["sq_db", "n_max", "quantity", "difference", "tolerance", "pass"],
        rows: checks
            .iter()
            .map(|c| {
                vec![
                    fmt_float(c.sq_db),
                    c.n_max.to_string(),
                    c.quantity.clone(),
                    fmt_float(c.difference),
                    fmt_float(c.tolerance),
                    c.pass.to_string(),
                ]
            })
            .collect(),
        json_rows: checks,
    };
    let prov = Provenance::new("validate", json!({ "sq_db": sq_db, "eta": eta, "n_max": n_start }), g.tolerance);
    Ok((render(&prov, &table, g.format)?, all_pass))
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    if !(g.tolerance > 0.0 && g.tolerance < 1.0) {
        bail!("--tolerance must lie in (0, 1)");
    }
    let exec = if g.sequential { Execution::Sequential } else { Execution::Parallel };
    let (name, text, ok) = match &cli.command {
        Command::Keyrate { sq_db, code, eta, binning } => ("keyrate", keyrate(g, exec, sq_db, code, *eta, *binning)?, true),
        Command::Chsh { sq_db, code, eta, binning } => ("chsh", chsh(g, *sq_db, code, *eta, *binning)?, true),
        Command::Distance { sq_db, loss_db_per_km, km, code, binning } => {
            ("distance", distance(g, exec, *sq_db, *loss_db_per_km, km, code, *binning)?, true)
        }
        Command::Simulate { pairs, sq_db, seed, test_fraction, uniform_bases, km, loss_db_per_km, code, binning } => (
            "simulate",
            simulate(g, exec, *pairs, *sq_db, *seed, test_fraction, *uniform_bases, *km, *loss_db_per_km, code, *binning)?,
            true,
        ),
        Command::Validate { sq_db, eta, n_max } => {
            let (text, ok) = validate(g, sq_db, *eta, *n_max)?;
            ("validate", text, ok)
        }
    };
    emit(&text, g.out.clone(), g.out_dir.clone(), name, g.format)?;
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
