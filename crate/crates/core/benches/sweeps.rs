//! Sequential against rayon-parallel evaluation of the main sweeps. The
//! engine's matrix cache is cleared every iteration so each run does the
//! full integration work.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gkp_diqkd::chsh::clear_cache;
use gkp_diqkd::codec::CodeParams;
use gkp_diqkd::exec::Execution;
use gkp_diqkd::loss::{rate_vs_distance, Binning};
use gkp_diqkd::protocol::{run_protocol, ProtocolConfig};
use gkp_diqkd::security::{keyrate_curve, DeltaRule};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn keyrate(c: &mut Criterion) {
    let dbs: Vec<f64> = (0..=20).map(|i| 3.0 + 0.5 * i as f64).collect();
    let mut g = c.benchmark_group("keyrate_curve_21_rows");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                clear_cache();
                black_box(keyrate_curve(&dbs, DeltaRule::EqualsKappa, None, exec).unwrap())
            })
        });
    }
    g.finish();
}

fn distance(c: &mut Criterion) {
    let p = CodeParams::from_db(12.0).unwrap();
    let km: Vec<f64> = (0..=10).map(|i| 0.5 * i as f64).collect();
    let mut g = c.benchmark_group("distance_11_rows");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                clear_cache();
                black_box(rate_vs_distance(&p, 0.2, &km, Binning::default(), exec).unwrap())
            })
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let cfg = ProtocolConfig::new(1_000_000, CodeParams::from_db(10.0).unwrap(), 42);
    let mut g = c.benchmark_group("protocol_1e6_rounds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(run_protocol(&cfg, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, keyrate, distance, monte_carlo);
criterion_main!(benches);
