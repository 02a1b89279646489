//! Message propagation over a propagation path: attention-weighted
//! messages from the previous step's entities, aggregation into the next
//! step's entities, and sigmoid scoring of the final representations.

mod params;
mod path;

pub use params::{
    aggregation_name, parse_aggregation, Activation, LayerParams, MessageOp, ModelConfig,
    ModelParams,
};
pub use path::PropagationPath;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphView, Query};

/// Working state after `step` propagation steps.
#[derive(Clone, Debug)]
pub struct Frontier {
    pub step: usize,
    /// Sorted `V^ℓ`; row `i` of `reps` belongs to `entities[i]`.
    pub entities: Vec<EntityId>,
    pub reps: Var,
    /// Step at which each entity first entered the path.
    pub first_step: Vec<usize>,
    /// Selection probability of entities sampled at this step.
    pub probs: Vec<Option<f64>>,
}

impl Frontier {
    pub fn row_of(&self, e: EntityId) -> Option<usize> {
        self.entities.binary_search(&e).ok()
    }
}

/// `V^0 = {e_q}` with a zero representation.
pub fn init_frontier(tape: &mut Tape<'_>, params: &ModelParams, query: &Query) -> Frontier {
    let reps = tape.constant(Tensor::zeros(1, params.config.dim));
    Frontier {
        step: 0,
        entities: vec![query.head],
        reps,
        first_step: vec![0],
        probs: vec![None],
    }
}

/// Entities that receive messages in one step.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    /// The full neighbor closure of the source set.
    Closure,
    /// Only these (sorted) entities.
    Only(&'a [EntityId]),
}

/// Representations produced by one propagation step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub entities: Vec<EntityId>,
    pub reps: Var,
    pub edges: usize,
}

fn check_query(params: &ModelParams, query: &Query) -> Result<()> {
    let limit = 2 * params.config.num_base_relations;
    if query.relation >= limit {
        return Err(Error::Index {
            kind: "query relation",
            id: query.relation,
            len: limit,
        });
    }
    Ok(())
}

/// Per-edge attention `σ(w_α · relu(W_s h_s + W_r h_r + W_q h_q))`, one row
/// per edge. Equivalent to a single `3d → d` map over the concatenation.
pub fn attention(
    tape: &mut Tape<'_>,
    layer: &LayerParams,
    source: Var,
    relation: Var,
    query_relation: Var,
) -> Result<Var> {
    let ws = tape.param(layer.attn_source);
    let wr = tape.param(layer.attn_relation);
    let wq = tape.param(layer.attn_query);
    let wo = tape.param(layer.attn_out);
    let hs = tape.matmul(source, ws)?;
    let hr = tape.matmul(relation, wr)?;
    let hq = tape.matmul(query_relation, wq)?;
    let pre = tape.add(hs, hr)?;
    let pre = tape.add_row(pre, hq)?;
    let hidden = tape.relu(pre)?;
    let logit = tape.matmul(hidden, wo)?;
    tape.sigmoid(logit)
}

/// One propagation step from `prev` (sorted, rows of `prev_reps`).
#[allow(clippy::too_many_arguments)]
pub fn propagate_step(
    tape: &mut Tape<'_>,
    view: &GraphView<'_>,
    params: &ModelParams,
    layer: usize,
    query: &Query,
    prev: &[EntityId],
    prev_reps: Var,
    targets: Targets<'_>,
) -> Result<StepOutput> {
    check_query(params, query)?;
    let lp = params
        .layers
        .get(layer)
        .ok_or_else(|| Error::Contract(format!("layer {layer} not in model")))?;
    let hood = view.neighbors(prev)?;
    let entities = match targets {
        Targets::Closure => hood.entities,
        Targets::Only(t) => t.to_vec(),
    };

    // (dst_row, src_row, relation), sorted by destination for segment reduction.
    let mut wired: Vec<(usize, usize, usize)> = Vec::with_capacity(hood.edges.len());
    for e in &hood.edges {
        let Ok(dst) = entities.binary_search(&e.object) else {
            continue;
        };
        let src = prev
            .binary_search(&e.subject)
            .map_err(|_| Error::Contract("edge source outside previous step".into()))?;
        wired.push((dst, src, e.relation));
    }
    if wired.is_empty() {
        return Err(Error::Contract(format!(
            "no edges into step {} targets",
            layer + 1
        )));
    }
    wired.sort_by_key(|&(dst, _, _)| dst);
    let dst: Vec<usize> = wired.iter().map(|w| w.0).collect();
    let src: Vec<usize> = wired.iter().map(|w| w.1).collect();
    let rel: Vec<usize> = wired.iter().map(|w| w.2).collect();

    let rel_table = tape.param(lp.relation);
    let q_table = tape.param(params.query_relation);
    let hs = tape.gather_rows(prev_reps, &src)?;
    let hr = tape.gather_rows(rel_table, &rel)?;
    let hq = tape.gather_rows(q_table, &[query.relation])?;
    let alpha = attention(tape, lp, hs, hr, hq)?;
    let combined = match params.config.message {
        MessageOp::Add => tape.add(hs, hr)?,
        MessageOp::Mul => tape.mul(hs, hr)?,
        MessageOp::Rotate => tape.rotate(hs, hr)?,
    };
    let messages = tape.scale_rows(combined, alpha)?;
    let agg = tape.segment_reduce(messages, &dst, entities.len(), params.config.aggregation)?;
    let reps = match params.config.activation {
        Activation::Relu => tape.relu(agg)?,
        Activation::Tanh => tape.tanh(agg)?,
    };
    Ok(StepOutput {
        entities,
        reps,
        edges: wired.len(),
    })
}

/// Raw scores `h·w_φ + b_φ`, one row per representation row.
pub fn score_logits(tape: &mut Tape<'_>, params: &ModelParams, reps: Var) -> Result<Var> {
    let w = tape.param(params.score_weight);
    let b = tape.param(params.score_bias);
    tape.affine(reps, w, b)
}

/// `φ = σ(h·w_φ + b_φ)`.
pub fn score(tape: &mut Tape<'_>, params: &ModelParams, reps: Var) -> Result<Var> {
    let logits = score_logits(tape, params, reps)?;
    tape.sigmoid(logits)
}

/// Final-step entities with their raw and sigmoid scores.
#[derive(Clone, Debug)]
pub struct Scored {
    pub entities: Vec<EntityId>,
    pub reps: Var,
    pub logits: Var,
    pub probs: Var,
}

impl Scored {
    pub fn logit_values<'t>(&self, tape: &'t Tape<'_>) -> &'t [f64] {
        tape.value(self.logits).data()
    }
}

/// Whether a given path must start from the query entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMode {
    Progressive,
    Free,
}

/// Runs propagation along a path fixed in advance. Step `ℓ` uses the edges
/// from `V^{ℓ−1}` into `V^ℓ`.
pub fn run_fixed_path(
    tape: &mut Tape<'_>,
    view: &GraphView<'_>,
    params: &ModelParams,
    query: &Query,
    path: &PropagationPath,
    mode: PathMode,
) -> Result<Scored> {
    check_query(params, query)?;
    let steps = path.steps();
    if steps.iter().any(|s| s.is_empty()) {
        return Err(Error::Contract("empty step in propagation path".into()));
    }
    if mode == PathMode::Progressive && steps[0] != [query.head] {
        return Err(Error::Contract(
            "progressive path must start at the query entity".into(),
        ));
    }
    if path.depth() > params.layers.len() {
        return Err(Error::Contract(format!(
            "path depth {} exceeds {} model layers",
            path.depth(),
            params.layers.len()
        )));
    }
    let d = params.config.dim;
    let mut entities = steps[0].clone();
    let mut reps = tape.constant(Tensor::zeros(entities.len(), d));
    for (l, next) in steps.iter().enumerate().skip(1) {
        let out = propagate_step(
            tape,
            view,
            params,
            l - 1,
            query,
            &entities,
            reps,
            Targets::Only(next),
        )?;
        entities = out.entities;
        reps = out.reps;
    }
    let logits = score_logits(tape, params, reps)?;
    let probs = tape.sigmoid(logits)?;
    Ok(Scored {
        entities,
        reps,
        logits,
        probs,
    })
}
