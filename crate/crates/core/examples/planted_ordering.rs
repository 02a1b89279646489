//! Trains each sampler variant on the planted-path benchmark and prints
//! path statistics on the test queries, one row per (seed, variant).
//!
//! cargo run --release --example planted_ordering -- seeds=5 first_seed=101

use adaprop::config::Config;
use adaprop::diagnostics::summarize_paths;
use adaprop::evaluator::{evaluate, EvalOptions};
use adaprop::kg::Split;
use adaprop::par::Executor;
use adaprop::scheme::SchemeKind;
use adaprop::synthetic::{planted_paths, PlantedConfig};
use adaprop::trainer::train;

fn main() -> adaprop::Result<()> {
    let mut config = Config::default();
    for kv in [
        "d=16",
        "L=5",
        "K=4",
        "tau=1.0",
        "lr=0.01",
        "batch_size=10",
        "max_epochs=60",
        "patience=60",
    ] {
        config.assign(kv)?;
    }
    let mut seeds = 5u64;
    let mut first_seed = 1u64;
    let mut planted = PlantedConfig {
        clusters: 160,
        ..PlantedConfig::default()
    };
    let mut only: Option<Vec<usize>> = None;
    for arg in std::env::args().skip(1) {
        if let Some(n) = arg.strip_prefix("seeds=") {
            seeds = n.parse().expect("seeds=N");
        } else if let Some(n) = arg.strip_prefix("first_seed=") {
            first_seed = n.parse().expect("first_seed=N");
        } else if let Some(n) = arg.strip_prefix("decoys=") {
            planted.decoys = n.parse().expect("decoys=N");
        } else if let Some(n) = arg.strip_prefix("fanout=") {
            planted.decoy_fanout = n.parse().expect("fanout=N");
        } else if let Some(n) = arg.strip_prefix("clusters=") {
            planted.clusters = n.parse().expect("clusters=N");
        } else if let Some(v) = arg.strip_prefix("variants=") {
            only = Some(
                v.split(',')
                    .map(|i| i.parse().expect("variant index"))
                    .collect(),
            );
        } else {
            config.assign(&arg)?;
        }
    }
    let base = config.train_config()?;
    let exec = Executor::new(base.workers)?;
    let variants = [
        ("learned-incremental", SchemeKind::Incremental, true),
        ("unlearned-incremental", SchemeKind::Incremental, false),
        ("learned-layerwise", SchemeKind::Layerwise, true),
        ("learned-nodewise", SchemeKind::Nodewise, true),
    ];
    println!("seed\tvariant\tval_mrr\ttest_mrr\ttoc\treach\tie\tlast_size\tepochs");
    for seed in first_seed..first_seed + seeds {
        let data = planted_paths(&PlantedConfig { seed, ..planted })?;
        for (i, &(name, kind, learned)) in variants.iter().enumerate() {
            if only.as_ref().is_some_and(|o| !o.contains(&i)) {
                continue;
            }
            let mut cfg = base;
            cfg.seed = seed;
            cfg.scheme = cfg.scheme.with_kind(kind, learned);
            let verbose = std::env::var_os("VERBOSE").is_some();
            let out = train(&data, &cfg, &exec, &mut |r| {
                if verbose {
                    eprintln!("{}", r.tsv_row());
                }
            })?;
            let split = data.split(Split::Test);
            let opts = EvalOptions {
                seed,
                greedy: cfg.greedy_eval,
                keep_paths: true,
            };
            let outcomes = evaluate(
                &out.best.params,
                &cfg.scheme,
                &split.graph.view(),
                split.filter,
                &split.queries(),
                &opts,
                &exec,
            )?;
            let ranks = adaprop::evaluator::ranks(&outcomes);
            let m = adaprop::evaluator::aggregate(&ranks)?;
            let s = summarize_paths(&outcomes, data.num_entities())?;
            println!(
                "{seed}\t{name}\t{:.4}\t{:.4}\t{:.5}\t{:.3}\t{:.5}\t{:.1}\t{}",
                out.best_valid.mrr,
                m.mrr,
                s.toc,
                s.reach_rate,
                s.ie,
                s.mean_last_size,
                out.log.len()
            );
        }
    }
    Ok(())
}
