//! Joint training of the propagation network and the sampler.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autodiff::{adam_step, AdamState, ParamGrads, Tape, Tensor, Var};
use crate::baselines::{reinforce_term, RewardBaseline};
use crate::checkpoint::Checkpoint;
use crate::config::{SelectMetric, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{aggregate, evaluate, ranks, EvalOptions, MetricsReport};
use crate::kg::{DatasetBundle, Edge, EntityId, GraphView, KnowledgeGraph, Query, Split};
use crate::par::{item_rng, Executor};
use crate::propagation::{ModelConfig, ModelParams};
use crate::sampler::Estimator;

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Binary cross-entropy of one query over the scored entities (`probs` is
/// an `n × 1` column aligned with sorted `entities`). When the answer was
/// not reached only the negative terms remain; the second value reports
/// whether it was reached.
pub fn query_loss(
    tape: &mut Tape<'_>,
    entities: &[EntityId],
    probs: Var,
    answer: EntityId,
) -> Result<(Var, bool)> {
    let hit = entities.binary_search(&answer).ok();
    let y: Vec<f64> = (0..entities.len())
        .map(|i| if Some(i) == hit { 1.0 } else { 0.0 })
        .collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let p = tape.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)?;
    let log_p = tape.log(p)?;
    let q = tape.scale(p, -1.0)?;
    let q = tape.add_scalar(q, 1.0)?;
    let log_q = tape.log(q)?;
    let y = tape.constant(Tensor::column(&y));
    let not_y = tape.constant(Tensor::column(&not_y));
    let pos = tape.mul(log_p, y)?;
    let neg = tape.mul(log_q, not_y)?;
    let both = tape.add(pos, neg)?;
    let total = tape.sum(both)?;
    let loss = tape.scale(total, -1.0)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::Numeric(format!("loss {}", tape.scalar(loss))));
    }
    Ok((loss, hit.is_some()))
}

/// View of `graph` with every batch query edge (and its inverse) hidden,
/// so no query can be answered by reading its own triple.
pub fn leakage_guard<'g>(graph: &'g KnowledgeGraph, batch: &[Query]) -> GraphView<'g> {
    let mut view = graph.view();
    for q in batch {
        view.mask(Edge {
            subject: q.head,
            relation: q.relation,
            object: q.answer,
        });
    }
    view
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid: MetricsReport,
    /// Fraction of training queries whose answer was not reached.
    pub miss_rate: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const TSV_HEADER: &'static str =
        "epoch\tloss\tval_mrr\tval_h1\tval_h10\tmiss_rate\tseconds";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch,
            self.loss,
            self.valid.mrr,
            self.valid.hit1,
            self.valid.hit10,
            self.miss_rate,
            self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_valid: MetricsReport,
}

impl TrainConfig {
    pub fn model_config(&self, num_base_relations: usize) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            layers: self.layers,
            num_base_relations,
            message: self.message,
            aggregation: self.aggregation,
            activation: self.activation,
        }
    }

    fn selection(&self, inductive: bool) -> SelectMetric {
        self.select.unwrap_or(if inductive {
            SelectMetric::Hit10
        } else {
            SelectMetric::Mrr
        })
    }
}

struct QueryStep {
    grads: ParamGrads,
    loss: f64,
    hit: bool,
}

/// Gradient of one batch, averaged over its queries. Queries run on
/// private tapes; results are merged in batch order.
fn batch_step(
    params: &ModelParams,
    cfg: &TrainConfig,
    view: &GraphView<'_>,
    batch: &[(usize, Query)],
    baseline: Option<f64>,
    epoch: usize,
    exec: &Executor,
) -> Result<(ParamGrads, Vec<QueryStep>)> {
    let reinforce = cfg.scheme.is_learned() && cfg.scheme.estimator == Estimator::Reinforce;
    let steps = exec.try_map(batch, |_, &(pos, q)| {
        let mut tape = Tape::new(&params.store);
        let mut rng = item_rng(cfg.seed, epoch as u64, pos);
        let out = cfg
            .scheme
            .forward(&mut tape, view, params, &q, false, &mut rng)?;
        let (loss, hit) = query_loss(&mut tape, &out.scored.entities, out.scored.probs, q.answer)?;
        let value = tape.scalar(loss);
        let objective = match (reinforce, out.sample_log_prob) {
            (true, Some(logp)) => {
                let reward = -value;
                let advantage = reward - baseline.unwrap_or(reward);
                let term = reinforce_term(&mut tape, logp, advantage)?;
                tape.add(loss, term)?
            }
            _ => loss,
        };
        let grads = tape.backward(objective)?.param_grads(&tape);
        Ok(QueryStep {
            grads,
            loss: value,
            hit,
        })
    })?;
    let mut total = ParamGrads::new(params.store.len());
    for s in &steps {
        total.merge(&s.grads);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((total, steps))
}

fn limited(mut qs: Vec<Query>, limit: usize) -> Vec<Query> {
    if limit > 0 {
        qs.truncate(limit);
    }
    qs
}

/// Validation metrics of `params` on the bundle's validation split.
pub fn validate(
    params: &ModelParams,
    cfg: &TrainConfig,
    bundle: &DatasetBundle,
    exec: &Executor,
) -> Result<MetricsReport> {
    let split = bundle.split(Split::Valid);
    let queries = limited(split.queries(), cfg.valid_limit);
    let opts = EvalOptions {
        seed: cfg.seed,
        greedy: cfg.greedy_eval,
        keep_paths: false,
    };
    let out = evaluate(
        params,
        &cfg.scheme,
        &split.graph.view(),
        split.filter,
        &queries,
        &opts,
        exec,
    )?;
    aggregate(&ranks(&out))
}

/// Trains from a fresh initialization and returns the snapshot with the
/// best validation metric. `on_epoch` sees every log row as it is produced.
pub fn train(
    bundle: &DatasetBundle,
    cfg: &TrainConfig,
    exec: &Executor,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.scheme.validate()?;
    let queries = bundle.train_queries();
    if queries.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` has no training triples",
            bundle.name
        )));
    }
    if bundle.valid.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` has no validation triples",
            bundle.name
        )));
    }
    let select = cfg.selection(bundle.inductive.is_some());
    let metric_of = |m: &MetricsReport| match select {
        SelectMetric::Mrr => m.mrr,
        SelectMetric::Hit10 => m.hit10,
    };

    let mut params = ModelParams::init(cfg.model_config(bundle.num_base_relations()), cfg.seed)?;
    let mut adam = AdamState::new(&params.store);
    let mut baseline = RewardBaseline::default();
    let snapshot = |params: &ModelParams, epoch: usize, metric: f64| Checkpoint {
        params: params.clone(),
        scheme: cfg.scheme,
        relations: bundle.relations.names().to_vec(),
        epoch,
        metric,
        seed: cfg.seed,
    };

    let mut best: Option<(Checkpoint, MetricsReport)> = None;
    if cfg.max_epochs == 0 {
        let v = validate(&params, cfg, bundle, exec)?;
        best = Some((snapshot(&params, 0, metric_of(&v)), v));
    }
    let mut log = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let mut order = queries.clone();
        order.shuffle(&mut item_rng(cfg.seed, epoch as u64, usize::MAX));
        let order: Vec<(usize, Query)> = limited(order, cfg.train_limit)
            .into_iter()
            .enumerate()
            .collect();

        let (mut loss_sum, mut misses) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let just_queries: Vec<Query> = batch.iter().map(|&(_, q)| q).collect();
            let view = leakage_guard(&bundle.graph, &just_queries);
            let (grads, steps) =
                batch_step(&params, cfg, &view, batch, baseline.value, epoch, exec)?;
            for s in &steps {
                loss_sum += s.loss;
                misses += usize::from(!s.hit);
                baseline.update(-s.loss);
            }
            adam_step(&mut params.store, &grads, &mut adam, &cfg.adam)?;
        }
        let n = order.len() as f64;
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss {loss} at epoch {epoch}"
            )));
        }
        let valid = validate(&params, cfg, bundle, exec)?;
        let row = EpochLog {
            epoch,
            loss,
            valid,
            miss_rate: misses as f64 / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);

        let metric = metric_of(&valid);
        if best.as_ref().is_none_or(|(b, _)| metric > b.metric) {
            best = Some((snapshot(&params, epoch, metric), valid));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best, best_valid) = best.expect("at least one snapshot");
    Ok(TrainOutcome {
        best,
        log,
        best_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Triple, Vocab};
    use crate::scheme::{SchemeConfig, SchemeKind};

    fn loss_of(entities: &[EntityId], p: &[f64], answer: EntityId) -> (f64, bool) {
        let store = crate::autodiff::ParamStore::new();
        let mut tape = Tape::new(&store);
        let probs = tape.leaf(Tensor::column(p));
        let (l, hit) = query_loss(&mut tape, entities, probs, answer).unwrap();
        (tape.scalar(l), hit)
    }

    #[test]
    fn loss_examples() {
        let (l, hit) = loss_of(&[3], &[0.5], 3);
        assert!((l - 2f64.ln()).abs() < 1e-12 && hit);
        let (l, _) = loss_of(&[3], &[1.0], 3);
        assert!((0.0..1e-6).contains(&l));
        let (l, _) = loss_of(&[2, 5], &[0.8, 0.25], 2);
        assert!((l - (-(0.8f64).ln() - (0.75f64).ln())).abs() < 1e-12);
        // unreached answer: negatives only
        let (l, hit) = loss_of(&[2, 5], &[0.8, 0.25], 9);
        assert!((l - (-(0.2f64).ln() - (0.75f64).ln())).abs() < 1e-12 && !hit);
        // clamping bounds every term
        let (l, _) = loss_of(&[1, 2], &[0.0, 1.0], 1);
        assert!((l - 2.0 * 1e7f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn nan_loss_is_numeric_error() {
        let store = crate::autodiff::ParamStore::new();
        let mut tape = Tape::new(&store);
        let probs = tape.leaf(Tensor::column(&[f64::NAN]));
        assert!(matches!(
            query_loss(&mut tape, &[0], probs, 0),
            Err(Error::Numeric(_))
        ));
    }

    fn t(s: usize, r: usize, o: usize) -> Triple {
        Triple {
            subject: s,
            relation: r,
            object: o,
        }
    }

    #[test]
    fn guard_hides_only_batch_edges() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 1, 2)], 3, 2).unwrap();
        let absent = Query {
            head: 0,
            relation: 1,
            answer: 2,
        };
        let v = leakage_guard(&kg, &[absent]);
        assert_eq!(v.edge_count(), kg.edge_count());
        let present = Query {
            head: 0,
            relation: 0,
            answer: 1,
        };
        let v = leakage_guard(&kg, &[present]);
        assert_eq!(v.edge_count(), kg.edge_count() - 2);
        assert!(!v.visible(&Edge {
            subject: 0,
            relation: 0,
            object: 1
        }));
        assert!(!v.visible(&Edge {
            subject: 1,
            relation: 2,
            object: 0
        }));
        drop(v);
        // the next batch starts from the full graph again
        assert_eq!(leakage_guard(&kg, &[]).edge_count(), kg.edge_count());
    }

    fn names(prefix: &str, n: usize) -> Vocab {
        Vocab::from_names((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
    }

    fn tiny() -> DatasetBundle {
        let facts = vec![t(0, 0, 1), t(1, 1, 2), t(2, 0, 3), t(3, 1, 0), t(4, 0, 2)];
        DatasetBundle::from_parts(
            "tiny",
            names("e", 5),
            names("r", 3),
            facts,
            vec![t(0, 2, 2)],
            vec![t(0, 2, 2)],
            vec![],
        )
        .unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            dim: 8,
            layers: 2,
            scheme: SchemeConfig::adaprop(2, 1.0),
            adam: crate::autodiff::AdamConfig {
                lr: 0.02,
                ..base.adam
            },
            batch_size: 2,
            max_epochs: 200,
            patience: 1000,
            ..base
        }
    }

    #[test]
    fn memorizes_a_single_triple() {
        let out = train(&tiny(), &tiny_cfg(), &Executor::sequential(), &mut |_| {}).unwrap();
        let last = out.log.last().unwrap();
        assert!(last.loss < 0.01, "final loss {}", last.loss);
        assert_eq!(last.miss_rate, 0.0);
    }

    #[test]
    fn runs_are_reproducible_across_worker_counts() {
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 15;
        let strip = |o: &TrainOutcome| -> Vec<String> {
            o.log
                .iter()
                .map(|r| {
                    EpochLog {
                        seconds: 0.0,
                        ..r.clone()
                    }
                    .tsv_row()
                })
                .collect()
        };
        let a = train(&tiny(), &cfg, &Executor::sequential(), &mut |_| {}).unwrap();
        let b = train(&tiny(), &cfg, &Executor::new(3).unwrap(), &mut |_| {}).unwrap();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.best.to_text(), b.best.to_text());
        cfg.seed = 2;
        let c = train(&tiny(), &cfg, &Executor::sequential(), &mut |_| {}).unwrap();
        assert_ne!(a.best.to_text(), c.best.to_text());
    }

    #[test]
    fn one_step_moves_network_and_sampler() {
        // a wider graph so that every step has more than K candidates
        let mut facts = Vec::new();
        for i in 1..12 {
            facts.push(t(0, i % 2, i));
            facts.push(t(i, 0, (i + 3) % 12));
        }
        let bundle = DatasetBundle::from_parts(
            "wide",
            names("e", 12),
            names("r", 3),
            facts,
            vec![t(0, 2, 5), t(0, 2, 7)],
            vec![t(0, 2, 5)],
            vec![],
        )
        .unwrap();
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 1;
        cfg.batch_size = 8;
        let init = ModelParams::init(cfg.model_config(3), cfg.seed).unwrap();
        let out = train(&bundle, &cfg, &Executor::sequential(), &mut |_| {}).unwrap();
        let after = &out.best.params;
        let moved = |ids: Vec<crate::autodiff::ParamId>| {
            ids.iter()
                .any(|&id| init.store.get(id) != after.store.get(id))
        };
        assert!(moved(init.sampler_ids()));
        assert!(moved(init.network_ids()));
    }

    #[test]
    fn checkpoint_reload_evaluates_identically() {
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 5;
        let bundle = tiny();
        let exec = Executor::sequential();
        let out = train(&bundle, &cfg, &exec, &mut |_| {}).unwrap();
        let back = Checkpoint::from_text(&out.best.to_text()).unwrap();
        let a = validate(&out.best.params, &cfg, &bundle, &exec).unwrap();
        let b = validate(&back.params, &cfg, &bundle, &exec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mrr.to_bits(), out.best_valid.mrr.to_bits());
    }

    #[test]
    fn empty_training_set_is_config_error() {
        let mut b = tiny();
        b.train.clear();
        assert!(matches!(
            train(&b, &tiny_cfg(), &Executor::sequential(), &mut |_| {}),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reinforce_and_unlearned_schemes_train() {
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 3;
        cfg.scheme.estimator = Estimator::Reinforce;
        train(&tiny(), &cfg, &Executor::sequential(), &mut |_| {}).unwrap();
        for kind in [
            SchemeKind::Full,
            SchemeKind::Subgraph,
            SchemeKind::Layerwise,
        ] {
            cfg.scheme = cfg.scheme.with_kind(kind, false);
            let out = train(&tiny(), &cfg, &Executor::sequential(), &mut |_| {}).unwrap();
            assert_eq!(out.log.len(), 3);
        }
    }
}
