//! One entry point for every way of building a propagation path, learned
//! or fixed in advance.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::Tape;
use crate::baselines::{full_path, subgraph_path};
use crate::error::{Error, Result};
use crate::kg::{GraphView, Query};
use crate::propagation::{run_fixed_path, Frontier, ModelParams, PathMode};
use crate::sampler::{adaprop_forward, Estimator, ForwardOutput, Policy, Scheme, Selection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Full,
    Progressive,
    Nodewise,
    Layerwise,
    Subgraph,
    Incremental,
}

impl FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => SchemeKind::Full,
            "progressive" => SchemeKind::Progressive,
            "nodewise" => SchemeKind::Nodewise,
            "layerwise" => SchemeKind::Layerwise,
            "subgraph" => SchemeKind::Subgraph,
            "incremental" | "adaprop" => SchemeKind::Incremental,
            _ => {
                return Err(Error::Config(format!(
                "unknown scheme `{s}` (full|progressive|nodewise|layerwise|subgraph|incremental)"
            )))
            }
        })
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Full => "full",
            SchemeKind::Progressive => "progressive",
            SchemeKind::Nodewise => "nodewise",
            SchemeKind::Layerwise => "layerwise",
            SchemeKind::Subgraph => "subgraph",
            SchemeKind::Incremental => "incremental",
        })
    }
}

/// Path-construction settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub learned: bool,
    pub k: usize,
    pub tau: f64,
    pub estimator: Estimator,
    pub num_walks: usize,
    pub walk_len: usize,
}

impl SchemeConfig {
    pub fn adaprop(k: usize, tau: f64) -> Self {
        SchemeConfig {
            kind: SchemeKind::Incremental,
            learned: true,
            k,
            tau,
            estimator: Estimator::StraightThrough,
            num_walks: 10,
            walk_len: 5,
        }
    }

    pub fn with_kind(mut self, kind: SchemeKind, learned: bool) -> Self {
        self.kind = kind;
        self.learned = learned;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SchemeKind::Subgraph && self.learned {
            return Err(Error::Config(
                "the subgraph scheme has no learned variant; set learned=false".into(),
            ));
        }
        if self.kind == SchemeKind::Subgraph && self.num_walks == 0 {
            return Err(Error::Config("num_walks must be at least 1".into()));
        }
        if let Some(p) = self.policy(false) {
            p.validate()?;
        }
        Ok(())
    }

    /// Whether the sampler parameters influence the path.
    pub fn is_learned(&self) -> bool {
        self.policy(false).is_some_and(|p| p.is_learned())
    }

    /// The step-by-step policy, or `None` for paths fixed up front.
    pub fn policy(&self, greedy: bool) -> Option<Policy> {
        let (scheme, selection) = match (self.kind, self.learned) {
            (SchemeKind::Full | SchemeKind::Subgraph, _) => return None,
            (SchemeKind::Progressive, _) => (Scheme::Progressive, Selection::Uniform),
            (SchemeKind::Incremental, true) => (Scheme::Incremental, Selection::Learned),
            (SchemeKind::Incremental, false) => (Scheme::Incremental, Selection::Uniform),
            (SchemeKind::Layerwise, true) => (Scheme::Layerwise, Selection::Learned),
            (SchemeKind::Layerwise, false) => (Scheme::Layerwise, Selection::Degree),
            (SchemeKind::Nodewise, true) => (Scheme::Nodewise, Selection::Learned),
            (SchemeKind::Nodewise, false) => (Scheme::Nodewise, Selection::Uniform),
        };
        let p = Policy {
            scheme,
            selection,
            estimator: self.estimator,
            k: self.k,
            tau: self.tau,
        };
        Some(if greedy { p.greedy() } else { p })
    }

    /// Forward pass for one query. `greedy` replaces learned sampling with
    /// deterministic top-K.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        view: &GraphView<'_>,
        params: &ModelParams,
        query: &Query,
        greedy: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        if let Some(policy) = self.policy(greedy) {
            return adaprop_forward(tape, view, params, query, &policy, rng);
        }
        let depth = params.layers.len();
        let (path, mode) = match self.kind {
            SchemeKind::Full => (
                full_path(view.graph().num_entities(), depth),
                PathMode::Free,
            ),
            _ => (
                subgraph_path(view, query.head, self.num_walks, self.walk_len, depth, rng)?,
                PathMode::Progressive,
            ),
        };
        let scored = run_fixed_path(tape, view, params, query, &path, mode)?;
        let first_step = scored
            .entities
            .iter()
            .map(|&e| path.first_step(e).unwrap_or(depth))
            .collect();
        let frontier = Frontier {
            step: depth,
            entities: scored.entities.clone(),
            reps: scored.reps,
            first_step,
            probs: vec![None; scored.entities.len()],
        };
        Ok(ForwardOutput {
            scored,
            path,
            frontier,
            sample_log_prob: None,
        })
    }
}
