//! Acceptance suite. Runs every criterion, prints one line each and exits
//! nonzero if any failed.

mod common;

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aflow_core::cache::{replay, run_policy_comparison};
use aflow_core::classifier::{run_classification, ClassifierConfig, OracleEngine, SignatureEngine};
use aflow_core::locality::{rank_frequency, scramble_compare, stack_distances, zipf_fit, zipf_fit_counts};
use aflow_core::msfilter::{false_positive_bound, FilterConfig, MultistageFilter};
use aflow_core::trace::{
    generate_reference_keys, generate_synthetic, read_csv, read_pcap, write_csv, write_pcap, PcapFormat,
    SyntheticConfig,
};
use aflow_core::{AggregateFlowKey, Policy};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

const SEEDS: u64 = 10;
const FAMILY_ALPHAS: [f64; 3] = [0.9, 1.0, 1.2];

fn family(alpha: f64, seed: u64) -> Vec<AggregateFlowKey> {
    generate_reference_keys(&SyntheticConfig {
        n_flows: 10_000,
        alpha,
        n_connections: 100_000,
        correlation_p: 0.0,
        seed,
        ..SyntheticConfig::default()
    })
    .expect("valid config")
}

fn distinct(keys: &[AggregateFlowKey]) -> usize {
    keys.iter().collect::<HashSet<_>>().len()
}

fn capacity(keys: &[AggregateFlowKey], frac: f64) -> usize {
    ((distinct(keys) as f64 * frac).ceil() as usize).max(1)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_optimal_fraction() -> Check {
    let start = Instant::now();
    let filter = FilterConfig::default();
    let mut ratios = Vec::new();
    let mut worst = f64::INFINITY;
    for &alpha in &FAMILY_ALPHAS {
        for seed in 0..SEEDS {
            let keys = family(alpha, seed);
            let cap = capacity(&keys, 0.15);
            let rows = run_policy_comparison(&keys, &[cap], &[Policy::MsHybrid, Policy::OptimalLfu], &filter)
                .map_err(|e| e.to_string())?;
            let r = rows[0].hit_ratio / rows[1].hit_ratio;
            worst = worst.min(r);
            ensure(r >= 0.85, || format!("alpha={alpha} seed={seed}: ratio {r:.4} < 0.85"))?;
            ratios.push(r);
        }
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure(mean >= 0.90, || format!("mean ratio {mean:.4} < 0.90"))?;
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "mean MS-Hybrid/Optimal-LFU {mean:.4}, worst {worst:.4}, {secs:.1}s"
    ))
}

fn c2_policy_dominance() -> Check {
    let filter = FilterConfig::default();
    let fracs = [0.05, 0.10, 0.15, 0.40];
    let policies = [Policy::MsHybrid, Policy::Lru, Policy::LfuInCache];
    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for &alpha in &FAMILY_ALPHAS {
        // [frac][policy] -> per-seed hit ratios
        let mut hits = vec![vec![Vec::new(); policies.len()]; fracs.len()];
        for seed in 0..SEEDS {
            let keys = family(alpha, seed);
            let caps: Vec<usize> = fracs.iter().map(|&f| capacity(&keys, f)).collect();
            let rows = run_policy_comparison(&keys, &caps, &policies, &filter).map_err(|e| e.to_string())?;
            for row in rows {
                let p = policies.iter().position(|&p| p == row.policy).unwrap();
                let c = caps.iter().position(|&c| c == row.capacity).unwrap();
                hits[c][p].push(row.hit_ratio);
            }
        }
        for (c, frac) in fracs.iter().enumerate() {
            let mean = |p: usize| hits[c][p].iter().sum::<f64>() / hits[c][p].len() as f64;
            let (ms, lru, lfu) = (mean(0), mean(1), mean(2));
            let violations = (0..SEEDS as usize)
                .filter(|&s| hits[c][0][s] < hits[c][1][s] || hits[c][0][s] < hits[c][2][s])
                .count();
            if ms < lru || ms < lfu || violations > 1 {
                failures.push(format!(
                    "alpha={alpha} cap={frac}: MS {ms:.4} LRU {lru:.4} LFU {lfu:.4}, {violations} seed violations"
                ));
            }
            if alpha == 1.0 {
                summary.push(format!("{:.0}%: {ms:.3}/{lru:.3}/{lfu:.3}", frac * 100.0));
            }
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("alpha=1.0 MS/LRU/LFU {}", summary.join(", ")))
}

fn c3_saturation() -> Check {
    let filter = FilterConfig::default();
    let mut worst = f64::INFINITY;
    let mut ratios = Vec::new();
    for seed in 0..SEEDS {
        let keys = family(1.0, seed);
        let at40 = replay(&keys, Policy::MsHybrid, capacity(&keys, 0.40), &filter, None)
            .map_err(|e| e.to_string())?
            .hit_ratio();
        let at100 = replay(&keys, Policy::MsHybrid, capacity(&keys, 1.0), &filter, None)
            .map_err(|e| e.to_string())?
            .hit_ratio();
        let r = at40 / at100;
        worst = worst.min(r);
        ratios.push(r);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ensure(worst >= 0.97, || format!("worst 40%/100% ratio {worst:.4} < 0.97"))?;
    Ok(format!("40%/100% hit ratio: mean {mean:.4}, worst {worst:.4}"))
}

const WORKLOAD_CONNECTIONS: usize = 50_000;

fn workload_trace(n_flows: usize, payloads: bool, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_flows,
        alpha: 1.0,
        n_connections: WORKLOAD_CONNECTIONS,
        packets_per_connection: 6.0,
        seed,
        payloads,
        ..SyntheticConfig::default()
    }
}

/// Smallest generator population whose trace has at least `ratio` distinct
/// flows per connection.
fn flows_for_ratio(ratio: f64, seed: u64) -> usize {
    let target = (ratio * WORKLOAD_CONNECTIONS as f64).ceil() as usize;
    let measured =
        |n: usize| distinct(&generate_reference_keys(&workload_trace(n, false, seed)).expect("valid config"));
    let (mut lo, mut hi) = (target, target);
    while measured(hi) < target {
        lo = hi;
        hi *= 2;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if measured(mid) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

fn distinct_flows(t: &aflow_core::trace::SyntheticTrace) -> usize {
    distinct(&t.references)
}

fn workload_config(n_flows: usize) -> ClassifierConfig {
    let mut cfg = ClassifierConfig {
        cache_capacity: Some(n_flows),
        ..ClassifierConfig::default()
    };
    cfg.filter.threshold = 1;
    cfg.adapter.sample_prob = 0.01;
    cfg.adapter.rng_seed = 11;
    cfg
}

fn c4_workload_reduction() -> Check {
    let mut out = Vec::new();
    for (ratio, min) in [(0.05, 0.90), (0.20, 0.75)] {
        let syn = workload_trace(flows_for_ratio(ratio, 4), false, 4);
        let t = generate_synthetic(&syn).map_err(|e| e.to_string())?;
        let (r, _) = run_classification(&t.records, &OracleEngine, &workload_config(distinct_flows(&t)))
            .map_err(|e| e.to_string())?;
        ensure(r.workload_reduction >= min, || {
            format!(
                "ratio {ratio}: reduction {:.4} < {min} (flows/conns {:.4})",
                r.workload_reduction, r.flow_connection_ratio
            )
        })?;
        out.push(format!(
            "flows/conns {:.3} -> {:.4}",
            r.flow_connection_ratio, r.workload_reduction
        ));
    }
    Ok(out.join(", "))
}

fn c5_speedup() -> Check {
    let syn = workload_trace(flows_for_ratio(0.05, 5), true, 5);
    let t = generate_synthetic(&syn).map_err(|e| e.to_string())?;
    let engine = SignatureEngine::default();
    let (r, _) =
        run_classification(&t.records, &engine, &workload_config(distinct_flows(&t))).map_err(|e| e.to_string())?;
    ensure(r.speedup_estimate >= 4.0, || {
        format!(
            "speedup {:.3} < 4 (baseline {}, classifier {:.1})",
            r.speedup_estimate, r.baseline_work_units, r.classifier_work_units
        )
    })?;
    Ok(format!(
        "speedup {:.2} (baseline {} units, classifier {:.0} units, reduction {:.3})",
        r.speedup_estimate, r.baseline_work_units, r.classifier_work_units, r.workload_reduction
    ))
}

fn c6_accuracy_neutrality() -> Check {
    let syn = SyntheticConfig {
        n_flows: 1_000,
        n_connections: 20_000,
        packets_per_connection: 4.0,
        correlation_p: 0.3,
        seed: 6,
        ..SyntheticConfig::default()
    };
    let t = generate_synthetic(&syn).map_err(|e| e.to_string())?;
    let mut runs = 0;
    let mut labeled = 0;
    for policy in Policy::ALL {
        for cap in [50, 150, 400, 1_000] {
            for sample_prob in [0.0, 0.01, 0.5] {
                for threshold in [1, 3] {
                    let mut cfg = ClassifierConfig {
                        cache_capacity: Some(cap),
                        policy,
                        ..ClassifierConfig::default()
                    };
                    cfg.adapter.sample_prob = sample_prob;
                    cfg.filter.threshold = threshold;
                    let (r, _) = run_classification(&t.records, &OracleEngine, &cfg).map_err(|e| e.to_string())?;
                    ensure(
                        r.accuracy_correct == r.accuracy_checked && r.accuracy_checked > 0,
                        || {
                            format!(
                                "{policy} cap={cap} p={sample_prob} T={threshold}: {}/{} correct",
                                r.accuracy_correct, r.accuracy_checked
                            )
                        },
                    )?;
                    runs += 1;
                    labeled += r.accuracy_checked;
                }
            }
        }
    }
    Ok(format!(
        "{runs} configurations, {labeled} labeled connections, all match truth"
    ))
}

fn c7_filter_bound() -> Check {
    const SEEDS_7: u64 = 20;
    const PROBES: u32 = 10_000;
    let mut out = Vec::new();
    for (d, b, t) in [(2usize, 1024usize, 3u32), (4, 4096, 3)] {
        for k in [2.0, 4.0] {
            let n_obs = (f64::from(t) * b as f64 / k).round() as u64;
            let bound = false_positive_bound(d as u32, k, 0.0).map_err(|e| e.to_string())?;
            let mut admitted = 0u64;
            for seed in 0..SEEDS_7 {
                let mut f = MultistageFilter::new(FilterConfig {
                    stages: d,
                    counters: b,
                    threshold: t,
                    reset_period: 0,
                    seed: 1000 + seed,
                })
                .map_err(|e| e.to_string())?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let zipf = rand_distr::Zipf::new(20_000.0, 1.0).unwrap();
                for _ in 0..n_obs {
                    let i = rand_distr::Distribution::sample(&zipf, &mut rng) as u32;
                    f.observe(&common::key(i));
                }
                let measured_k = f.stage_strength().unwrap();
                ensure((measured_k - k).abs() < 1e-3, || format!("k={measured_k} != {k}"))?;
                // Fresh keys, never observed: f = 0.
                admitted += (0..PROBES)
                    .filter(|_| f.would_admit(&common::key(1_000_000 + rng.random_range(0..1u32 << 28))))
                    .count() as u64;
            }
            let n = (SEEDS_7 * u64::from(PROBES)) as f64;
            let rate = admitted as f64 / n;
            let sigma = (bound * (1.0 - bound) / n).sqrt();
            ensure(rate <= bound + 3.0 * sigma, || {
                format!("(d={d},b={b},T={t},k={k}): rate {rate:.5} > bound {bound:.5} + 3σ")
            })?;
            out.push(format!("d{d}/k{k}: {rate:.4}<={bound:.4}"));
        }
    }
    Ok(out.join(", "))
}

fn c8_oracle_equivalence() -> Check {
    let start = Instant::now();
    let mut runner = TestRunner::new(PtConfig {
        cases: 100,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let strategy = (1usize..200, 1u32..4, 10u32..2_000, any::<u64>());
    runner
        .run(&strategy, |(cap, threshold, universe, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let zipf = rand_distr::Zipf::new(f64::from(universe), 0.9).unwrap();
            let keys: Vec<_> = (0..10_000)
                .map(|_| common::key(rand_distr::Distribution::sample(&zipf, &mut rng) as u32))
                .collect();
            let filter = FilterConfig {
                stages: 2,
                counters: 256,
                threshold,
                reset_period: 1_000,
                seed,
            };
            prop_assert_eq!(
                common::naive_events(&keys, cap, &filter),
                common::optimized_events(&keys, cap, &filter)
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("100 sequences x 10^4 references identical, {secs:.2}s"))
}

fn c9_zipf_recovery() -> Check {
    let mut out = Vec::new();
    for alpha in [0.5, 0.9, 1.2] {
        let keys = family(alpha, 9);
        let fit = zipf_fit(&rank_frequency(&keys).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure((fit.alpha - alpha).abs() <= 0.05, || {
            format!("alpha {alpha}: fitted {:.4}", fit.alpha)
        })?;
        out.push(format!("{alpha}->{:.3}", fit.alpha));
    }
    let exact: Vec<u64> = (1..=1000u64).map(|n| (1e6 / n as f64).round() as u64).collect();
    let fit = zipf_fit_counts(exact, 5).map_err(|e| e.to_string())?;
    ensure((fit.alpha - 1.0).abs() <= 0.01, || {
        format!("exact power law fitted {:.4}", fit.alpha)
    })?;
    out.push(format!("exact 1.0->{:.4}", fit.alpha));
    Ok(out.join(", "))
}

fn c10_scramble() -> Check {
    let mut max0: f64 = 0.0;
    let mut min8 = f64::INFINITY;
    for seed in 0..SEEDS {
        for (p, check) in [(0.0, true), (0.8, false)] {
            let keys = generate_reference_keys(&SyntheticConfig {
                n_flows: 10_000,
                alpha: 1.0,
                n_connections: 100_000,
                correlation_p: p,
                seed,
                ..SyntheticConfig::default()
            })
            .map_err(|e| e.to_string())?;
            let ks = scramble_compare(&keys, 500 + seed)
                .map_err(|e| e.to_string())?
                .ks_statistic;
            if check {
                max0 = max0.max(ks);
                ensure(ks <= 0.02, || format!("p=0 seed={seed}: KS {ks:.4} > 0.02"))?;
            } else {
                min8 = min8.min(ks);
                ensure(ks >= 0.05, || format!("p=0.8 seed={seed}: KS {ks:.4} < 0.05"))?;
            }
        }
    }
    Ok(format!("p=0 max KS {max0:.4}, p=0.8 min KS {min8:.4}"))
}

fn c11_stack_distance_examples() -> Check {
    let a = stack_distances(&['A', 'B', 'A']);
    ensure(a.finite.iter().eq([(&1, &1)]) && a.infinite == 2, || {
        format!("[A,B,A] -> {a:?}")
    })?;
    let b = stack_distances(&['A', 'B', 'B', 'C', 'A']);
    ensure(b.finite.iter().eq([(&0, &1), (&2, &1)]) && b.infinite == 3, || {
        format!("[A,B,B,C,A] -> {b:?}")
    })?;
    Ok("[A,B,A] -> {1}, [A,B,B,C,A] -> {0, 2}".to_string())
}

fn c12_round_trips() -> Check {
    let mut n = 0;
    for payloads in [true, false] {
        let t = generate_synthetic(&SyntheticConfig {
            n_flows: 200,
            n_connections: 2_000,
            seed: 12,
            payloads,
            ..SyntheticConfig::default()
        })
        .map_err(|e| e.to_string())?;

        let mut csv_bytes = Vec::new();
        write_csv(&mut csv_bytes, &t.records).map_err(|e| e.to_string())?;
        let back = read_csv(&csv_bytes[..]).map_err(|e| e.to_string())?;
        ensure(back.records == t.records, || "CSV round trip differs".to_string())?;
        let mut again = Vec::new();
        write_csv(&mut again, &back.records).map_err(|e| e.to_string())?;
        ensure(again == csv_bytes, || "CSV text not reproduced".to_string())?;

        // pcap cannot carry truth labels.
        let unlabeled: Vec<_> = t
            .records
            .iter()
            .cloned()
            .map(|mut r| {
                r.truth_label = None;
                r
            })
            .collect();
        let mut le = Vec::new();
        write_pcap(&mut le, &t.records, PcapFormat::default()).map_err(|e| e.to_string())?;
        let le_back = read_pcap(&le[..]).map_err(|e| e.to_string())?;
        ensure(le_back.records == unlabeled, || "pcap round trip differs".to_string())?;
        let mut be = Vec::new();
        let swapped = PcapFormat {
            big_endian: true,
            ..PcapFormat::default()
        };
        write_pcap(&mut be, &t.records, swapped).map_err(|e| e.to_string())?;
        ensure(be[..4] == [0xa1, 0xb2, 0xc3, 0xd4], || "not byte-swapped".to_string())?;
        let be_back = read_pcap(&be[..]).map_err(|e| e.to_string())?;
        ensure(be_back.records == le_back.records, || {
            "swapped pcap differs".to_string()
        })?;
        n += t.records.len();
    }
    Ok(format!(
        "{n} records through CSV, pcap and swapped pcap, timestamps at 1 µs"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("optimal-fraction", c1_optimal_fraction),
        ("policy-dominance", c2_policy_dominance),
        ("saturation-point", c3_saturation),
        ("workload-reduction", c4_workload_reduction),
        ("cost-model-speedup", c5_speedup),
        ("accuracy-neutrality", c6_accuracy_neutrality),
        ("filter-bound", c7_filter_bound),
        ("oracle-equivalence", c8_oracle_equivalence),
        ("zipf-fit-recovery", c9_zipf_recovery),
        ("scramble-experiment", c10_scramble),
        ("stack-distance-examples", c11_stack_distance_examples),
        ("round-trips", c12_round_trips),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
