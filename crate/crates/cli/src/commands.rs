use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adaprop::checkpoint::Checkpoint;
use adaprop::config::{Config, TrainConfig};
use adaprop::diagnostics::{
    mean_overlap, path_to_dot, path_to_json, per_hop_report, per_hop_tsv, step_curves,
    summarize_paths, write_file, ExportFormat,
};
use adaprop::evaluator::{
    aggregate, evaluate, evaluate_query, ranks, EvalOptions, MetricsReport, QueryOutcome,
};
use adaprop::kg::{DatasetBundle, LoadOptions, Query, Split, Vocab};
use adaprop::par::Executor;
use adaprop::propagation::ModelParams;
use adaprop::scheme::{SchemeConfig, SchemeKind};
use adaprop::synthetic::{planted_paths, PlantedConfig};
use adaprop::trainer::{train as run_training, EpochLog};
use adaprop::{Error, Result};

fn data_dir(config: &Config) -> Result<PathBuf> {
    let raw = config.get("data");
    if raw.is_empty() {
        return Err(Error::Config("no dataset given; set data=<dir>".into()));
    }
    let direct = PathBuf::from(raw);
    if direct.is_absolute() || direct.exists() {
        return Ok(direct);
    }
    Ok(match std::env::var_os("ADAPROP_DATA") {
        Some(root) => PathBuf::from(root).join(raw),
        None => direct,
    })
}

fn load_bundle(config: &Config) -> Result<DatasetBundle> {
    let inductive = match config.get("mode") {
        "transductive" => false,
        "inductive" => true,
        other => {
            return Err(Error::Config(format!(
                "mode={other}: expected transductive or inductive"
            )))
        }
    };
    let ind = config.get("inductive_dir");
    let opts = LoadOptions {
        inductive,
        inductive_dir: (!ind.is_empty()).then(|| PathBuf::from(ind)),
        seed: config.parse("seed")?,
    };
    DatasetBundle::load(&data_dir(config)?, &opts)
}

fn out_dir(config: &Config) -> PathBuf {
    PathBuf::from(config.get("out"))
}

fn checkpoint_path(config: &Config) -> PathBuf {
    match config.get("checkpoint") {
        "" => out_dir(config).join("checkpoint.txt"),
        p => PathBuf::from(p),
    }
}

/// Creates the output directory and records the effective settings.
fn start_outputs(config: &Config) -> Result<PathBuf> {
    let out = out_dir(config);
    write_file(&out.join("config.resolved"), &config.resolved())?;
    Ok(out)
}

fn parse_split(config: &Config) -> Result<Split> {
    match config.get("split") {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!(
            "split={other}: expected train, valid or test"
        ))),
    }
}

fn split_limit(config: &Config, split: Split) -> Result<usize> {
    config.parse(match split {
        Split::Train => "train_limit",
        Split::Valid => "valid_limit",
        Split::Test => "test_limit",
    })
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Valid => "valid",
        Split::Test => "test",
    }
}

/// Entity names of the graph a split is evaluated on.
fn split_entities(bundle: &DatasetBundle, split: Split) -> &Vocab {
    match (&bundle.inductive, split) {
        (Some(ind), Split::Test) => &ind.entities,
        _ => &bundle.entities,
    }
}

fn metrics_table(rows: &[(&str, MetricsReport)]) -> String {
    let mut s = format!("{}\n", MetricsReport::TSV_HEADER);
    for (name, m) in rows {
        let _ = writeln!(s, "{}", m.tsv_row(name));
    }
    s
}

pub fn train(config: &Config) -> Result<()> {
    let cfg = config.train_config()?;
    let exec = Executor::new(cfg.workers)?;
    let bundle = load_bundle(config)?;
    let out = start_outputs(config)?;
    let log_path = out.join("train_log.tsv");
    let mut log = format!("{}\n", EpochLog::TSV_HEADER);
    write_file(&log_path, &log)?;
    let mut log_error = None;
    let result = run_training(&bundle, &cfg, &exec, &mut |row| {
        let line = row.tsv_row();
        eprintln!("{line}");
        log.push_str(&line);
        log.push('\n');
        if let Err(e) = write_file(&log_path, &log) {
            log_error.get_or_insert(e);
        }
    });
    if let Some(e) = log_error {
        return Err(e);
    }
    let outcome = result?;
    outcome.best.save(&checkpoint_path(config))?;
    write_file(
        &out.join("valid_metrics.tsv"),
        &metrics_table(&[("valid", outcome.best_valid)]),
    )?;
    print!(
        "best_epoch={}\nepochs_run={}\n{}",
        outcome.best.epoch,
        outcome.log.len(),
        outcome.best_valid.key_values("valid")
    );
    Ok(())
}

/// Evaluation settings for a loaded checkpoint: model and path scheme come
/// from the checkpoint; seed, workers and limits from the config.
fn eval_setup(config: &Config) -> Result<(TrainConfig, Checkpoint, DatasetBundle, Executor)> {
    let cfg = config.train_config()?;
    let ckpt = Checkpoint::load(&checkpoint_path(config))?;
    let bundle = load_bundle(config)?;
    ckpt.check_relations(bundle.relations.names())?;
    let exec = Executor::new(cfg.workers)?;
    Ok((cfg, ckpt, bundle, exec))
}

fn run_split(
    params: &ModelParams,
    scheme: &SchemeConfig,
    bundle: &DatasetBundle,
    split: Split,
    limit: usize,
    opts: &EvalOptions,
    exec: &Executor,
) -> Result<(Vec<Query>, Vec<QueryOutcome>)> {
    let s = bundle.split(split);
    let mut queries = s.queries();
    if limit > 0 {
        queries.truncate(limit);
    }
    let outcomes = evaluate(
        params,
        scheme,
        &s.graph.view(),
        s.filter,
        &queries,
        opts,
        exec,
    )?;
    Ok((queries, outcomes))
}

pub fn eval(config: &Config) -> Result<()> {
    let (cfg, ckpt, bundle, exec) = eval_setup(config)?;
    let opts = EvalOptions {
        seed: cfg.seed,
        greedy: cfg.greedy_eval,
        keep_paths: false,
    };
    let mut rows = Vec::new();
    for split in [Split::Valid, Split::Test] {
        if bundle.split(split).triples.is_empty() {
            continue;
        }
        let limit = split_limit(config, split)?;
        let (_, outcomes) = run_split(
            &ckpt.params,
            &ckpt.scheme,
            &bundle,
            split,
            limit,
            &opts,
            &exec,
        )?;
        rows.push((split_name(split), aggregate(&ranks(&outcomes))?));
    }
    if rows.is_empty() {
        return Err(Error::Config(
            "dataset has neither validation nor test triples".into(),
        ));
    }
    let out = start_outputs(config)?;
    write_file(&out.join("eval_metrics.tsv"), &metrics_table(&rows))?;
    for (name, m) in &rows {
        print!("{}", m.key_values(name));
    }
    Ok(())
}

/// Parameters for path analysis: the checkpoint when one is named,
/// otherwise a fresh initialization, which only unlearned schemes accept.
fn analysis_params(
    config: &Config,
    cfg: &TrainConfig,
    bundle: &DatasetBundle,
) -> Result<ModelParams> {
    if !config.get("checkpoint").is_empty() {
        let ckpt = Checkpoint::load(&checkpoint_path(config))?;
        ckpt.check_relations(bundle.relations.names())?;
        return Ok(ckpt.params);
    }
    if cfg.scheme.is_learned() {
        return Err(Error::Config(format!(
            "scheme={} learned=true needs checkpoint=<file>",
            cfg.scheme.kind
        )));
    }
    ModelParams::init(cfg.model_config(bundle.num_base_relations()), cfg.seed)
}

fn budget_label(scheme: &SchemeConfig) -> String {
    match scheme.kind {
        SchemeKind::Full | SchemeKind::Progressive => "inf".into(),
        SchemeKind::Subgraph => format!("walks{}x{}", scheme.num_walks, scheme.walk_len),
        _ => scheme.k.to_string(),
    }
}

pub fn analyze(config: &Config) -> Result<()> {
    let cfg = config.train_config()?;
    let exec = Executor::new(cfg.workers)?;
    let split = parse_split(config)?;
    let bundle = load_bundle(config)?;
    let params = analysis_params(config, &cfg, &bundle)?;
    let opts = EvalOptions {
        seed: cfg.seed,
        greedy: cfg.greedy_eval,
        keep_paths: true,
    };
    let limit = split_limit(config, split)?;
    let (queries, outcomes) = run_split(&params, &cfg.scheme, &bundle, split, limit, &opts, &exec)?;
    if outcomes.is_empty() {
        return Err(Error::Config(format!(
            "split {} has no queries",
            split_name(split)
        )));
    }
    let graph = bundle.split(split).graph;
    let n = graph.num_entities();
    let summary = summarize_paths(&outcomes, n)?;
    let metrics = aggregate(&ranks(&outcomes))?;
    let paths: Vec<_> = outcomes
        .iter()
        .map(|o| o.path.as_ref().expect("kept"))
        .collect();
    let pairs: usize = config.parse("pairs")?;
    let overlap = mean_overlap(&paths, &queries, pairs)?;
    let pair_count = adaprop::diagnostics::same_head_pairs(&queries, pairs).len();
    let curves = step_curves(&outcomes, n)?;
    let hops = per_hop_report(&ranks(&outcomes), graph)?;
    let exports: usize = config.parse("export_paths")?;

    let out = start_outputs(config)?;
    let mut table = String::from(
        "scheme\tlearned\tL\tK\tie\ttoc\treach_rate\toverlap\tpairs\tmrr\thit1\thit10\tqueries\n",
    );
    let _ = writeln!(
        table,
        "{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.6}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
        cfg.scheme.kind,
        cfg.scheme.is_learned(),
        params.config.layers,
        budget_label(&cfg.scheme),
        summary.ie,
        summary.toc,
        summary.reach_rate,
        overlap.map_or("NA".to_string(), |o| format!("{o:.6}")),
        pair_count,
        metrics.mrr,
        metrics.hit1,
        metrics.hit10,
        metrics.count
    );
    write_file(&out.join("analyze.tsv"), &table)?;
    let mut steps = String::from("step\tmean_size\tie\ttoc\treach_rate\n");
    for c in &curves {
        let _ = writeln!(
            steps,
            "{}\t{:.3}\t{:.6e}\t{:.6e}\t{:.6}",
            c.step, c.mean_size, c.ie, c.toc, c.reach_rate
        );
    }
    write_file(&out.join("analyze_steps.tsv"), &steps)?;
    write_file(&out.join("per_hop.tsv"), &per_hop_tsv(&hops))?;
    for (i, (q, p)) in queries.iter().zip(&paths).take(exports).enumerate() {
        write_file(
            &out.join("paths").join(format!("q{i}.json")),
            &path_to_json(p, q),
        )?;
    }
    print!("{table}");
    Ok(())
}

pub fn export_path(config: &Config) -> Result<()> {
    let cfg = config.train_config()?;
    let split = parse_split(config)?;
    let format: ExportFormat = config.get("format").parse()?;
    let index: usize = config.parse("query")?;
    let bundle = load_bundle(config)?;
    let params = analysis_params(config, &cfg, &bundle)?;
    let s = bundle.split(split);
    let queries = s.queries();
    let query = *queries.get(index).ok_or_else(|| {
        Error::Config(format!(
            "query={index} out of range; split {} has {} queries",
            split_name(split),
            queries.len()
        ))
    })?;
    let opts = EvalOptions {
        seed: cfg.seed,
        greedy: cfg.greedy_eval,
        keep_paths: true,
    };
    // same random stream as in a full-split evaluation
    let outcome = evaluate_query(
        &params,
        &cfg.scheme,
        &s.graph.view(),
        s.filter,
        &query,
        index,
        &opts,
    )?;
    let path = outcome.path.expect("kept");
    let names = split_entities(&bundle, split);
    let (body, ext) = match format {
        ExportFormat::Json => (path_to_json(&path, &query), "json"),
        ExportFormat::Dot => {
            let name = |e: usize| names.name(e).to_string();
            (path_to_dot(&path, &query, s.graph, Some(&name)), "dot")
        }
    };
    let out = start_outputs(config)?;
    let file = out.join(format!("path_{}_q{index}.{ext}", split_name(split)));
    write_file(&file, &body)?;
    println!("{}", file.display());
    Ok(())
}

pub fn make_synthetic(config: &Config) -> Result<()> {
    let seed: u64 = config.parse("seed")?;
    let dest = Path::new(config.get("out"));
    let bundle = planted_paths(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })?;
    bundle.save(dest)?;
    write_file(&dest.join("config.resolved"), &config.resolved())?;
    println!(
        "entities={}\nrelations={}\nfacts={}\ntrain={}\nvalid={}\ntest={}",
        bundle.num_entities(),
        bundle.num_base_relations(),
        bundle.facts.len(),
        bundle.train.len(),
        bundle.valid.len(),
        bundle.test.len()
    );
    Ok(())
}
