//! Filtered ranking of answers and metric aggregation.

use std::fmt::Write as _;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::kg::{EntityId, FilterIndex, GraphView, Query};
use crate::par::{item_rng, Executor};
use crate::propagation::{ModelParams, PropagationPath};
use crate::scheme::SchemeConfig;

/// Filtered rank of one answer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankResult {
    pub query: Query,
    /// `1 + #higher + ½·#tied`; may be fractional.
    pub rank: f64,
    /// Whether the answer received a score.
    pub reached: bool,
}

/// Ranks `query.answer` given raw scores for `entities` (sorted, aligned
/// with `scores`). Unscored entities count as `−∞`. Competitors are all
/// `n` entities except the answer and the other known answers of
/// `(head, relation)`.
pub fn rank_query(
    entities: &[EntityId],
    scores: &[f64],
    query: &Query,
    filter: &FilterIndex,
    num_entities: usize,
) -> Result<RankResult> {
    if entities.len() != scores.len() {
        return Err(Error::dim(
            "rank_query",
            format!("{} entities, {} scores", entities.len(), scores.len()),
        ));
    }
    if query.answer >= num_entities {
        return Err(Error::Index {
            kind: "answer entity",
            id: query.answer,
            len: num_entities,
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numeric(format!("score {bad} while ranking")));
    }
    let known = filter.get(query.head, query.relation);
    let is_competitor = |e: EntityId| e != query.answer && known.binary_search(&e).is_err();

    let answer_score = entities
        .binary_search(&query.answer)
        .ok()
        .map(|i| scores[i]);
    let reached = answer_score.is_some();
    let target = answer_score.unwrap_or(f64::NEG_INFINITY);

    let mut higher = 0usize;
    let mut tied = 0usize;
    let mut reached_competitors = 0usize;
    for (&e, &s) in entities.iter().zip(scores) {
        if e >= num_entities {
            return Err(Error::Index {
                kind: "scored entity",
                id: e,
                len: num_entities,
            });
        }
        if !is_competitor(e) {
            continue;
        }
        reached_competitors += 1;
        if s > target {
            higher += 1;
        } else if s == target {
            tied += 1;
        }
    }
    if !reached {
        let filtered = known
            .iter()
            .filter(|&&e| e != query.answer && e < num_entities)
            .count();
        let unreached = num_entities - 1 - filtered - reached_competitors;
        tied += unreached;
    }
    Ok(RankResult {
        query: *query,
        rank: 1.0 + higher as f64 + 0.5 * tied as f64,
        reached,
    })
}

/// MRR, Hit@1, Hit@10 and reach rate over a set of ranks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hit1: f64,
    pub hit10: f64,
    pub count: usize,
    pub reach_rate: f64,
}

pub fn aggregate(ranks: &[RankResult]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Contract("no ranks to aggregate".into()));
    }
    let n = ranks.len() as f64;
    let mean = |f: &dyn Fn(&RankResult) -> f64| ranks.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mrr: mean(&|r| 1.0 / r.rank),
        hit1: mean(&|r| (r.rank <= 1.0) as u8 as f64),
        hit10: mean(&|r| (r.rank <= 10.0) as u8 as f64),
        count: ranks.len(),
        reach_rate: mean(&|r| r.reached as u8 as f64),
    })
}

impl MetricsReport {
    pub const TSV_HEADER: &'static str = "split\tmrr\thit1\thit10\tqueries\treach_rate";

    pub fn tsv_row(&self, split: &str) -> String {
        format!(
            "{split}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.6}",
            self.mrr, self.hit1, self.hit10, self.count, self.reach_rate
        )
    }

    /// `prefix.key=value` lines.
    pub fn key_values(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}.mrr={:.6}", self.mrr);
        let _ = writeln!(s, "{prefix}.hit1={:.6}", self.hit1);
        let _ = writeln!(s, "{prefix}.hit10={:.6}", self.hit10);
        let _ = writeln!(s, "{prefix}.queries={}", self.count);
        let _ = writeln!(s, "{prefix}.reach_rate={:.6}", self.reach_rate);
        s
    }
}

/// Random-stream phase reserved for evaluation runs.
pub const EVAL_PHASE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub seed: u64,
    /// Deterministic top-K in place of sampling.
    pub greedy: bool,
    /// Keep the realized path of every query.
    pub keep_paths: bool,
}

#[derive(Clone, Debug)]
pub struct QueryOutcome {
    pub rank: RankResult,
    pub path: Option<PropagationPath>,
}

/// Ranks every query on `view`. Query `i` draws from its own random stream.
pub fn evaluate(
    params: &ModelParams,
    scheme: &SchemeConfig,
    view: &GraphView<'_>,
    filter: &FilterIndex,
    queries: &[Query],
    opts: &EvalOptions,
    exec: &Executor,
) -> Result<Vec<QueryOutcome>> {
    exec.try_map(queries, |i, q| {
        evaluate_query(params, scheme, view, filter, q, i, opts)
    })
}

/// Outcome of the query at position `index` of an evaluation run; equal to
/// entry `index` of [`evaluate`] over the full list.
pub fn evaluate_query(
    params: &ModelParams,
    scheme: &SchemeConfig,
    view: &GraphView<'_>,
    filter: &FilterIndex,
    query: &Query,
    index: usize,
    opts: &EvalOptions,
) -> Result<QueryOutcome> {
    let mut tape = Tape::new(&params.store);
    let mut rng = item_rng(opts.seed, EVAL_PHASE, index);
    let out = scheme.forward(&mut tape, view, params, query, opts.greedy, &mut rng)?;
    let rank = rank_query(
        &out.scored.entities,
        out.scored.logit_values(&tape),
        query,
        filter,
        view.graph().num_entities(),
    )?;
    Ok(QueryOutcome {
        rank,
        path: opts.keep_paths.then_some(out.path),
    })
}

pub fn ranks(outcomes: &[QueryOutcome]) -> Vec<RankResult> {
    outcomes.iter().map(|o| o.rank).collect()
}
