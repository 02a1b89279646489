//! Incremental sampling of the propagation path and the end-to-end forward
//! pass that interleaves propagation with entity selection.

use std::fmt;
use std::str::FromStr;

use rand::distributions::Open01;
use rand::Rng;

use crate::autodiff::{softmax_slice, Tape, Var};
use crate::baselines;
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphView, Query};
use crate::propagation::{
    propagate_step, score_logits, Frontier, ModelParams, PropagationPath, Scored, Targets,
};

/// `V_neib \ V_prev` for sorted inputs.
pub fn candidates(prev: &[EntityId], neib: &[EntityId]) -> Vec<EntityId> {
    neib.iter()
        .copied()
        .filter(|e| prev.binary_search(e).is_err())
        .collect()
}

/// Outcome of one top-K draw over a candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    /// Selected entities, sorted.
    pub selected: Vec<EntityId>,
    /// Candidate indices in selection order (descending key).
    pub order: Vec<usize>,
    /// `softmax(g/τ)` over all candidates.
    pub probs: Vec<f64>,
    /// Perturbed keys `g/τ + Gumbel`, one per candidate; plain `g/τ` for greedy draws.
    pub keys: Vec<f64>,
}

impl SampleResult {
    /// Selection probability of each entry of `selected`.
    pub fn selected_probs(&self, candidates: &[EntityId]) -> Vec<f64> {
        self.selected
            .iter()
            .map(|e| {
                let i = candidates
                    .binary_search(e)
                    .expect("selected is a candidate");
                self.probs[i]
            })
            .collect()
    }
}

fn validate(logits: &[f64], k: usize, tau: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("sample budget K must be at least 1".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite sampler logit {bad}")));
    }
    Ok(())
}

fn top_k(candidates: &[EntityId], keys: Vec<f64>, probs: Vec<f64>, k: usize) -> SampleResult {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .partial_cmp(&keys[a])
            .expect("finite keys")
            .then(candidates[a].cmp(&candidates[b]))
    });
    order.truncate(k);
    let mut selected: Vec<EntityId> = order.iter().map(|&i| candidates[i]).collect();
    selected.sort_unstable();
    SampleResult {
        selected,
        order,
        probs,
        keys,
    }
}

/// Draws `min(K, n)` candidates without replacement from `softmax(g/τ)` via
/// perturbed keys `g/τ − ln(−ln U)`. Ties go to the lower entity id.
/// `candidates` must be sorted and aligned with `logits`.
pub fn gumbel_topk<R: Rng + ?Sized>(
    candidates: &[EntityId],
    logits: &[f64],
    k: usize,
    tau: f64,
    rng: &mut R,
) -> Result<SampleResult> {
    check_aligned(candidates, logits)?;
    validate(logits, k, tau)?;
    let scaled: Vec<f64> = logits.iter().map(|g| g / tau).collect();
    let probs = if scaled.is_empty() {
        Vec::new()
    } else {
        softmax_slice(&scaled)
    };
    let keys = scaled
        .iter()
        .map(|s| {
            let u: f64 = rng.sample(Open01);
            s - (-u.ln()).ln()
        })
        .collect();
    Ok(top_k(candidates, keys, probs, k))
}

/// Deterministic top-K by `g/τ`.
pub fn greedy_topk(
    candidates: &[EntityId],
    logits: &[f64],
    k: usize,
    tau: f64,
) -> Result<SampleResult> {
    check_aligned(candidates, logits)?;
    validate(logits, k, tau)?;
    let keys: Vec<f64> = logits.iter().map(|g| g / tau).collect();
    let probs = if keys.is_empty() {
        Vec::new()
    } else {
        softmax_slice(&keys)
    };
    Ok(top_k(candidates, keys, probs, k))
}

fn check_aligned(candidates: &[EntityId], logits: &[f64]) -> Result<()> {
    if candidates.len() != logits.len() {
        return Err(Error::dim(
            "gumbel_topk",
            format!("{} candidates, {} logits", candidates.len(), logits.len()),
        ));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(
            "candidates must be sorted and distinct".into(),
        ));
    }
    Ok(())
}

/// Value-preserving reweighting of `reps` rows by their selection
/// probabilities so that gradients reach the sampler.
pub fn straight_through(tape: &mut Tape<'_>, reps: Var, probs: Var) -> Result<Var> {
    tape.straight_through(reps, probs)
}

/// How V^ℓ is built from the neighbor closure of V^{ℓ−1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Keep V^{ℓ−1}, add up to K new candidates.
    Incremental,
    /// The whole closure (K = ∞).
    Progressive,
    /// Up to K entities from the closure, no nesting.
    Layerwise,
    /// Up to K neighbors per entity of V^{ℓ−1}.
    Nodewise,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incremental" | "adaprop" => Ok(Scheme::Incremental),
            "progressive" => Ok(Scheme::Progressive),
            "layerwise" => Ok(Scheme::Layerwise),
            "nodewise" => Ok(Scheme::Nodewise),
            _ => Err(Error::Config(format!("unknown sampling scheme `{s}`"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Incremental => "incremental",
            Scheme::Progressive => "progressive",
            Scheme::Layerwise => "layerwise",
            Scheme::Nodewise => "nodewise",
        })
    }
}

/// Distribution the selection is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selection {
    /// Gumbel top-K on the learned scores `g`.
    Learned,
    /// Deterministic top-K on `g`.
    Greedy,
    /// Uniform without replacement.
    Uniform,
    /// Proportional to augmented degree (layer-wise only).
    Degree,
}

/// Gradient route into the sampler parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Estimator {
    StraightThrough,
    Reinforce,
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(Estimator::StraightThrough),
            "reinforce" => Ok(Estimator::Reinforce),
            _ => Err(Error::Config(format!(
                "unknown estimator `{s}` (st|reinforce)"
            ))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::StraightThrough => "st",
            Estimator::Reinforce => "reinforce",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Policy {
    pub scheme: Scheme,
    pub selection: Selection,
    pub estimator: Estimator,
    pub k: usize,
    pub tau: f64,
}

impl Policy {
    pub fn adaprop(k: usize, tau: f64) -> Self {
        Policy {
            scheme: Scheme::Incremental,
            selection: Selection::Learned,
            estimator: Estimator::StraightThrough,
            k,
            tau,
        }
    }

    pub fn progressive() -> Self {
        Policy {
            scheme: Scheme::Progressive,
            selection: Selection::Uniform,
            estimator: Estimator::StraightThrough,
            k: usize::MAX,
            tau: 1.0,
        }
    }

    /// Whether selection reads the learned scores `g`.
    pub fn is_learned(&self) -> bool {
        self.scheme != Scheme::Progressive
            && matches!(self.selection, Selection::Learned | Selection::Greedy)
    }

    /// The same policy with learned sampling replaced by its greedy form.
    pub fn greedy(mut self) -> Self {
        if self.selection == Selection::Learned {
            self.selection = Selection::Greedy;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("sample budget K must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        let ok = match self.scheme {
            Scheme::Progressive => true,
            Scheme::Incremental | Scheme::Nodewise => self.selection != Selection::Degree,
            Scheme::Layerwise => self.selection != Selection::Uniform,
        };
        if !ok {
            return Err(Error::Config(format!(
                "{:?} selection does not apply to the {} scheme",
                self.selection, self.scheme
            )));
        }
        Ok(())
    }
}

/// Result of a sampled forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub scored: Scored,
    pub path: PropagationPath,
    pub frontier: Frontier,
    /// Plackett–Luce log-probability of every realized ordered sample,
    /// computed from detached representations (REINFORCE only).
    pub sample_log_prob: Option<Var>,
}

/// Runs `L` propagation steps, choosing each V^ℓ according to `policy`.
/// Deterministic for a given rng state.
pub fn adaprop_forward<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    view: &GraphView<'_>,
    params: &ModelParams,
    query: &Query,
    policy: &Policy,
    rng: &mut R,
) -> Result<ForwardOutput> {
    policy.validate()?;
    let depth = params.layers.len();
    if depth == 0 {
        return Err(Error::Config("need at least one propagation layer".into()));
    }
    let mut frontier = crate::propagation::init_frontier(tape, params, query);
    let mut path = PropagationPath::start(frontier.entities.clone());
    let reinforce = policy.estimator == Estimator::Reinforce && policy.is_learned();
    let mut log_prob: Option<Var> = None;

    for l in 0..depth {
        let step = l + 1;
        let prev = frontier.entities.clone();
        let neib = view.neighbors(&prev)?.entities;

        if !policy.is_learned() {
            let next = match policy.scheme {
                Scheme::Progressive => neib.clone(),
                Scheme::Incremental => {
                    let cands = candidates(&prev, &neib);
                    let zeros = vec![0.0; cands.len()];
                    let pick = gumbel_topk(&cands, &zeros, policy.k, 1.0, rng)?;
                    merge(&prev, &pick.selected)
                }
                Scheme::Layerwise => baselines::layerwise_sample(view, &prev, policy.k, rng)?,
                Scheme::Nodewise => baselines::nodewise_sample(view, &prev, policy.k, rng)?,
            };
            let out = propagate_step(
                tape,
                view,
                params,
                l,
                query,
                &prev,
                frontier.reps,
                Targets::Only(&next),
            )?;
            advance(
                &mut frontier,
                &mut path,
                policy.scheme,
                out.entities,
                out.reps,
                step,
                &[],
            );
            continue;
        }

        // Learned selection needs h^ℓ on every reachable entity first.
        let out = propagate_step(
            tape,
            view,
            params,
            l,
            query,
            &prev,
            frontier.reps,
            Targets::Closure,
        )?;
        let pool: Vec<EntityId> = match policy.scheme {
            Scheme::Incremental => candidates(&prev, &out.entities),
            _ => out.entities.clone(),
        };
        let row = |e: &EntityId| out.entities.binary_search(e).expect("pool within closure");
        let pool_rows: Vec<usize> = pool.iter().map(row).collect();

        let mut scores = Scores::new(tape, params, l, out.reps, &pool_rows, policy.tau, reinforce)?;
        let draws: Vec<(Vec<EntityId>, SampleResult)> = match policy.scheme {
            Scheme::Nodewise => {
                let mut groups = Vec::with_capacity(prev.len());
                for &parent in &prev {
                    let mut kids: Vec<EntityId> =
                        view.out_edges(parent).map(|e| e.object).collect();
                    kids.sort_unstable();
                    kids.dedup();
                    let idx: Vec<usize> = kids
                        .iter()
                        .map(|e| pool.binary_search(e).expect("child in closure"))
                        .collect();
                    let logits: Vec<f64> = idx.iter().map(|&i| scores.raw[i]).collect();
                    let draw = select(policy, &kids, &logits, rng)?;
                    groups.push((kids, draw));
                }
                groups
            }
            _ => {
                let logits = scores.raw.clone();
                vec![(pool.clone(), select(policy, &pool, &logits, rng)?)]
            }
        };

        // First draw that picks an entity supplies its probability.
        let mut picked: Vec<(EntityId, usize, Vec<usize>, usize)> = Vec::new();
        for (gi, (group, draw)) in draws.iter().enumerate() {
            let gidx: Vec<usize> = group
                .iter()
                .map(|e| pool.binary_search(e).expect("group within pool"))
                .collect();
            for &o in &draw.order {
                let e = group[o];
                if !picked.iter().any(|p| p.0 == e) {
                    picked.push((e, gi, gidx.clone(), o));
                }
            }
            if reinforce && !draw.order.is_empty() {
                let lp_var = scores.group_log_prob(tape, &gidx, &draw.order)?;
                log_prob = Some(match log_prob {
                    Some(acc) => tape.add(acc, lp_var)?,
                    None => lp_var,
                });
            }
        }
        picked.sort_by_key(|p| p.0);

        let next: Vec<EntityId> = match policy.scheme {
            Scheme::Incremental => merge(&prev, &picked.iter().map(|p| p.0).collect::<Vec<_>>()),
            _ => picked.iter().map(|p| p.0).collect(),
        };
        let sampled: Vec<EntityId> = picked.iter().map(|p| p.0).collect();
        let retained: Vec<EntityId> = next
            .iter()
            .copied()
            .filter(|e| sampled.binary_search(e).is_err())
            .collect();

        let mut parts = Vec::new();
        let mut order_of_rows: Vec<EntityId> = Vec::new();
        if !retained.is_empty() {
            let rows: Vec<usize> = retained.iter().map(row).collect();
            parts.push(tape.gather_rows(out.reps, &rows)?);
            order_of_rows.extend(&retained);
        }
        let mut sampled_probs = Vec::with_capacity(picked.len());
        if !picked.is_empty() {
            let rows: Vec<usize> = sampled.iter().map(row).collect();
            let reps = tape.gather_rows(out.reps, &rows)?;
            let mut prob_vars = Vec::with_capacity(picked.len());
            for (_, gi, gidx, o) in &picked {
                let pv = scores.group_prob(tape, *gi, gidx, *o)?;
                sampled_probs.push(tape.value(pv).data()[0]);
                prob_vars.push(pv);
            }
            let reps = if policy.estimator == Estimator::StraightThrough
                && policy.selection == Selection::Learned
            {
                let probs = tape.concat_rows(&prob_vars)?;
                let probs = tape.clamp(probs, f64::MIN_POSITIVE, 1.0)?;
                straight_through(tape, reps, probs)?
            } else {
                reps
            };
            parts.push(reps);
            order_of_rows.extend(&sampled);
        }
        if parts.is_empty() {
            return Err(Error::Contract(format!("step {step} selected no entities")));
        }
        let stacked = tape.concat_rows(&parts)?;
        let perm: Vec<usize> = next
            .iter()
            .map(|e| {
                order_of_rows
                    .iter()
                    .position(|x| x == e)
                    .expect("row present")
            })
            .collect();
        let reps = tape.gather_rows(stacked, &perm)?;
        let probs: Vec<(EntityId, f64)> = sampled.iter().copied().zip(sampled_probs).collect();
        advance(
            &mut frontier,
            &mut path,
            policy.scheme,
            next,
            reps,
            step,
            &probs,
        );
    }

    let logits = score_logits(tape, params, frontier.reps)?;
    let probs = tape.sigmoid(logits)?;
    Ok(ForwardOutput {
        scored: Scored {
            entities: frontier.entities.clone(),
            reps: frontier.reps,
            logits,
            probs,
        },
        path,
        frontier,
        sample_log_prob: log_prob,
    })
}

fn select<R: Rng + ?Sized>(
    policy: &Policy,
    pool: &[EntityId],
    logits: &[f64],
    rng: &mut R,
) -> Result<SampleResult> {
    match policy.selection {
        Selection::Greedy => greedy_topk(pool, logits, policy.k, policy.tau),
        _ => gumbel_topk(pool, logits, policy.k, policy.tau, rng),
    }
}

/// Sorted union of two sorted sets.
fn merge(a: &[EntityId], b: &[EntityId]) -> Vec<EntityId> {
    let mut v: Vec<EntityId> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn advance(
    frontier: &mut Frontier,
    path: &mut PropagationPath,
    scheme: Scheme,
    next: Vec<EntityId>,
    reps: Var,
    step: usize,
    sampled: &[(EntityId, f64)],
) {
    let first_step = next
        .iter()
        .map(|e| match frontier.row_of(*e) {
            Some(i) => frontier.first_step[i],
            None => step,
        })
        .collect();
    let probs = next
        .iter()
        .map(|e| sampled.iter().find(|s| s.0 == *e).map(|s| s.1))
        .collect();
    match scheme {
        Scheme::Incremental => {
            let added = next
                .iter()
                .copied()
                .filter(|e| frontier.row_of(*e).is_none())
                .collect();
            path.push(next.clone(), added);
        }
        _ => path.push_diff(next.clone()),
    }
    *frontier = Frontier {
        step,
        entities: next,
        reps,
        first_step,
        probs,
    };
}

/// Sampler scores on a pool of closure rows, kept on the tape so selection
/// probabilities stay differentiable.
struct Scores {
    /// `g` values, one per pool entry.
    raw: Vec<f64>,
    /// `g/τ` column on the tape.
    scaled: Option<Var>,
    /// `g/τ` from detached representations.
    detached: Option<Var>,
    /// Softmax over the whole pool, built lazily.
    pool_probs: Option<Var>,
    group_probs: Vec<Option<Var>>,
}

impl Scores {
    fn new(
        tape: &mut Tape<'_>,
        params: &ModelParams,
        layer: usize,
        reps: Var,
        rows: &[usize],
        tau: f64,
        detached: bool,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Scores {
                raw: Vec::new(),
                scaled: None,
                detached: None,
                pool_probs: None,
                group_probs: Vec::new(),
            });
        }
        let lp = &params.layers[layer];
        let u = tape.param(lp.sampler_weight);
        let b = tape.param(lp.sampler_bias);
        let h = tape.gather_rows(reps, rows)?;
        let g = tape.affine(h, u, b)?;
        let raw = tape.value(g).data().to_vec();
        let scaled = tape.scale(g, 1.0 / tau)?;
        let detached = if detached {
            let hd = tape.detach(h);
            let gd = tape.affine(hd, u, b)?;
            Some(tape.scale(gd, 1.0 / tau)?)
        } else {
            None
        };
        Ok(Scores {
            raw,
            scaled: Some(scaled),
            detached,
            pool_probs: None,
            group_probs: Vec::new(),
        })
    }

    /// Probability of pool entry `gidx[o]` under the softmax of its group.
    fn group_prob(
        &mut self,
        tape: &mut Tape<'_>,
        group: usize,
        gidx: &[usize],
        o: usize,
    ) -> Result<Var> {
        let scaled = self.scaled.expect("non-empty pool");
        let whole = gidx.len() == self.raw.len() && gidx.iter().enumerate().all(|(i, &g)| i == g);
        let probs = if whole {
            match self.pool_probs {
                Some(p) => p,
                None => {
                    let p = tape.softmax(scaled)?;
                    self.pool_probs = Some(p);
                    p
                }
            }
        } else {
            if self.group_probs.len() <= group {
                self.group_probs.resize(group + 1, None);
            }
            match self.group_probs[group] {
                Some(p) => p,
                None => {
                    let sub = tape.gather_rows(scaled, gidx)?;
                    let p = tape.softmax(sub)?;
                    self.group_probs[group] = Some(p);
                    p
                }
            }
        };
        tape.gather_rows(probs, &[o])
    }

    fn group_log_prob(
        &mut self,
        tape: &mut Tape<'_>,
        gidx: &[usize],
        order: &[usize],
    ) -> Result<Var> {
        let det = self.detached.expect("detached scores requested");
        let sub = tape.gather_rows(det, gidx)?;
        tape.plackett_luce_log_prob(sub, order)
    }
}

#[cfg(test)]
mod tests;
