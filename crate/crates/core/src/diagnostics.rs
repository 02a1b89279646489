//! Propagation-path statistics: involved-entity ratio, target-over-candidate
//! ratio, path overlap, per-hop metrics, and path export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{aggregate, MetricsReport, QueryOutcome, RankResult};
use crate::kg::{EntityId, KnowledgeGraph, Query, UNREACHABLE};
use crate::propagation::PropagationPath;

/// `|V^1 ∪ … ∪ V^L| / n`.
pub fn ie_ratio(path: &PropagationPath, num_entities: usize) -> f64 {
    path.involved() as f64 / num_entities.max(1) as f64
}

/// `1/|V^L|` when the answer is in `V^L`, else 0.
pub fn toc_ratio(path: &PropagationPath, answer: EntityId) -> f64 {
    let last = path.last();
    if last.binary_search(&answer).is_ok() {
        1.0 / last.len() as f64
    } else {
        0.0
    }
}

fn intersection_union(a: &[EntityId], b: &[EntityId]) -> (usize, usize) {
    let (mut i, mut j, mut inter) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (inter, a.len() + b.len() - inter)
}

/// `Σ_ℓ |V^ℓ_1 ∩ V^ℓ_2| / Σ_ℓ |V^ℓ_1 ∪ V^ℓ_2|` over steps `1..=L`.
pub fn path_overlap(a: &PropagationPath, b: &PropagationPath) -> Result<f64> {
    if a.depth() != b.depth() {
        return Err(Error::Contract(format!(
            "paths of depth {} and {} cannot be compared",
            a.depth(),
            b.depth()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for l in 1..=a.depth() {
        let (i, u) = intersection_union(a.step(l), b.step(l));
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Index pairs of queries sharing a head entity with different relations,
/// in a stable order, at most `limit` of them (0 = all).
pub fn same_head_pairs(queries: &[Query], limit: usize) -> Vec<(usize, usize)> {
    let mut by_head: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        by_head.entry(q.head).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for ids in by_head.values() {
        for (x, &i) in ids.iter().enumerate() {
            for &j in &ids[x + 1..] {
                if queries[i].relation != queries[j].relation {
                    pairs.push((i, j));
                    if limit > 0 && pairs.len() == limit {
                        return pairs;
                    }
                }
            }
        }
    }
    pairs
}

/// Per-step sizes and the two path ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct PathStats {
    pub ie: f64,
    pub toc: f64,
    pub sizes: Vec<usize>,
}

pub fn path_stats(path: &PropagationPath, answer: EntityId, num_entities: usize) -> PathStats {
    PathStats {
        ie: ie_ratio(path, num_entities),
        toc: toc_ratio(path, answer),
        sizes: path.steps().iter().map(Vec::len).collect(),
    }
}

/// Means over a set of realized paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSummary {
    pub ie: f64,
    pub toc: f64,
    /// Fraction of queries whose answer is in `V^L`.
    pub reach_rate: f64,
    pub mean_last_size: f64,
}

/// Summarizes evaluation outcomes that kept their paths.
pub fn summarize_paths(outcomes: &[QueryOutcome], num_entities: usize) -> Result<PathSummary> {
    if outcomes.is_empty() {
        return Err(Error::Contract("no paths to summarize".into()));
    }
    let mut acc = [0.0; 4];
    for o in outcomes {
        let path = o
            .path
            .as_ref()
            .ok_or_else(|| Error::Contract("evaluation did not keep paths".into()))?;
        let st = path_stats(path, o.rank.query.answer, num_entities);
        acc[0] += st.ie;
        acc[1] += st.toc;
        acc[2] += f64::from(u8::from(st.toc > 0.0));
        acc[3] += path.last().len() as f64;
    }
    let n = outcomes.len() as f64;
    Ok(PathSummary {
        ie: acc[0] / n,
        toc: acc[1] / n,
        reach_rate: acc[2] / n,
        mean_last_size: acc[3] / n,
    })
}

/// Means at one propagation step, over a set of paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub step: usize,
    pub mean_size: f64,
    /// Involved-entity ratio of the path truncated at this step.
    pub ie: f64,
    /// Target-over-candidate ratio of `V^step`.
    pub toc: f64,
    pub reach_rate: f64,
}

/// [`StepStats`] for steps `0..=L`. Paths must share one depth.
pub fn step_curves(outcomes: &[QueryOutcome], num_entities: usize) -> Result<Vec<StepStats>> {
    let paths: Vec<(&PropagationPath, EntityId)> = outcomes
        .iter()
        .map(|o| {
            o.path
                .as_ref()
                .map(|p| (p, o.rank.query.answer))
                .ok_or_else(|| Error::Contract("evaluation did not keep paths".into()))
        })
        .collect::<Result<_>>()?;
    let Some(depth) = paths.first().map(|(p, _)| p.depth()) else {
        return Ok(Vec::new());
    };
    if paths.iter().any(|(p, _)| p.depth() != depth) {
        return Err(Error::Contract("paths of different depth".into()));
    }
    let n = paths.len() as f64;
    let mut curves = Vec::with_capacity(depth + 1);
    let mut unions: Vec<std::collections::BTreeSet<EntityId>> =
        vec![Default::default(); paths.len()];
    for l in 0..=depth {
        let (mut size, mut ie, mut toc, mut reach) = (0.0, 0.0, 0.0, 0.0);
        for ((path, answer), union) in paths.iter().zip(&mut unions) {
            let step = path.step(l);
            let involved = if l == 0 {
                step.len()
            } else {
                union.extend(step.iter().copied());
                union.len()
            };
            size += step.len() as f64;
            ie += involved as f64 / num_entities.max(1) as f64;
            if step.binary_search(answer).is_ok() {
                toc += 1.0 / step.len() as f64;
                reach += 1.0;
            }
        }
        curves.push(StepStats {
            step: l,
            mean_size: size / n,
            ie: ie / n,
            toc: toc / n,
            reach_rate: reach / n,
        });
    }
    Ok(curves)
}

/// Mean overlap over query pairs sharing a head entity; `None` without pairs.
pub fn mean_overlap(
    paths: &[&PropagationPath],
    queries: &[Query],
    limit: usize,
) -> Result<Option<f64>> {
    let pairs = same_head_pairs(queries, limit);
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &(i, j) in &pairs {
        total += path_overlap(paths[i], paths[j])?;
    }
    Ok(Some(total / pairs.len() as f64))
}

/// Metrics for answers at one hop distance from the query entity.
#[derive(Clone, Debug, PartialEq)]
pub struct HopBucket {
    /// `None` for answers not connected to the query entity.
    pub hops: Option<usize>,
    pub metrics: MetricsReport,
}

/// Groups ranks by the undirected hop distance from head to answer.
pub fn per_hop_report(ranks: &[RankResult], graph: &KnowledgeGraph) -> Result<Vec<HopBucket>> {
    let mut dist_cache: BTreeMap<EntityId, Vec<usize>> = BTreeMap::new();
    let mut groups: BTreeMap<usize, Vec<RankResult>> = BTreeMap::new();
    for r in ranks {
        let d = dist_cache
            .entry(r.query.head)
            .or_insert_with(|| graph.bfs_distance(r.query.head));
        groups.entry(d[r.query.answer]).or_default().push(*r);
    }
    groups
        .into_iter()
        .map(|(h, rs)| {
            Ok(HopBucket {
                hops: (h != UNREACHABLE).then_some(h),
                metrics: aggregate(&rs)?,
            })
        })
        .collect()
}

pub fn per_hop_tsv(buckets: &[HopBucket]) -> String {
    let mut s = String::from("hops\tcount\tmrr\thit1\thit10\n");
    for b in buckets {
        let h = b.hops.map_or("inf".to_string(), |h| h.to_string());
        let _ = writeln!(
            s,
            "{h}\t{}\t{:.6}\t{:.6}\t{:.6}",
            b.metrics.count, b.metrics.mrr, b.metrics.hit1, b.metrics.hit10
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Dot,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "dot" => Ok(ExportFormat::Dot),
            _ => Err(Error::Config(format!(
                "unknown export format `{s}` (json|dot)"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct JsonQuery {
    head: EntityId,
    relation: usize,
    answer: EntityId,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct JsonStep {
    level: usize,
    entities: Vec<EntityId>,
    newly_sampled: Vec<EntityId>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct JsonPath {
    query: JsonQuery,
    steps: Vec<JsonStep>,
}

pub fn path_to_json(path: &PropagationPath, query: &Query) -> String {
    let doc = JsonPath {
        query: JsonQuery {
            head: query.head,
            relation: query.relation,
            answer: query.answer,
        },
        steps: path
            .steps()
            .iter()
            .zip(path.added())
            .enumerate()
            .map(|(level, (s, a))| JsonStep {
                level,
                entities: s.clone(),
                newly_sampled: a.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain data serializes") + "\n"
}

pub fn path_from_json(text: &str) -> Result<(PropagationPath, Query)> {
    let doc: JsonPath =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("path json: {e}")))?;
    let query = Query {
        head: doc.query.head,
        relation: doc.query.relation,
        answer: doc.query.answer,
    };
    let (steps, added) = doc
        .steps
        .into_iter()
        .map(|s| (s.entities, s.newly_sampled))
        .unzip();
    Ok((PropagationPath::from_parts(steps, added)?, query))
}

/// Graphviz digraph. Node color encodes the step an entity first entered
/// the path; the query entity is a double circle, the answer a box.
pub fn path_to_dot(
    path: &PropagationPath,
    query: &Query,
    graph: &KnowledgeGraph,
    names: Option<&dyn Fn(EntityId) -> String>,
) -> String {
    const PALETTE: [&str; 8] = [
        "#d62728", "#ff7f0e", "#bcbd22", "#2ca02c", "#17becf", "#1f77b4", "#9467bd", "#7f7f7f",
    ];
    let mut s = String::from("digraph path {\n  rankdir=LR;\n");
    let mut nodes: Vec<EntityId> = path.steps().iter().flatten().copied().collect();
    nodes.sort_unstable();
    nodes.dedup();
    for &e in &nodes {
        let step = path.first_step(e).unwrap_or(0);
        let label = names.map_or(e.to_string(), |f| f(e));
        let shape = if e == query.head {
            "doublecircle"
        } else if e == query.answer {
            "box"
        } else {
            "ellipse"
        };
        let _ = writeln!(
            s,
            "  n{e} [label=\"{}\", shape={shape}, style=filled, fillcolor=\"{}\", step={step}];",
            label.replace('"', "\\\""),
            PALETTE[step.min(PALETTE.len() - 1)]
        );
    }
    for l in 1..=path.depth() {
        let (prev, next) = (path.step(l - 1), path.step(l));
        for &src in prev {
            for &(r, dst) in graph.out_edges(src) {
                if r != graph.self_loop() && next.binary_search(&dst).is_ok() {
                    let _ = writeln!(s, "  n{src} -> n{dst} [label=\"{r}\", layer={l}];");
                }
            }
        }
    }
    s.push_str("}\n");
    s
}

pub fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}
