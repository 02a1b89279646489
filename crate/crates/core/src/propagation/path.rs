use crate::error::{Error, Result};
use crate::kg::EntityId;

/// The entity sets `{V^0, …, V^L}` visited by a propagation, plus the
/// entities each step added.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PropagationPath {
    steps: Vec<Vec<EntityId>>,
    added: Vec<Vec<EntityId>>,
}

impl PropagationPath {
    pub fn start(v0: Vec<EntityId>) -> Self {
        let mut v0 = v0;
        v0.sort_unstable();
        v0.dedup();
        PropagationPath {
            added: vec![v0.clone()],
            steps: vec![v0],
        }
    }

    /// Builds a path from raw step sets; `added[ℓ]` defaults to
    /// `V^ℓ \ V^{ℓ−1}`.
    pub fn from_steps(steps: Vec<Vec<EntityId>>) -> Result<Self> {
        let mut it = steps.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Contract("path needs at least V^0".into()))?;
        let mut path = PropagationPath::start(first);
        for s in it {
            path.push_diff(s);
        }
        Ok(path)
    }

    pub fn from_parts(steps: Vec<Vec<EntityId>>, added: Vec<Vec<EntityId>>) -> Result<Self> {
        if steps.is_empty() || steps.len() != added.len() {
            return Err(Error::Contract(format!(
                "{} steps with {} added-sets",
                steps.len(),
                added.len()
            )));
        }
        Ok(PropagationPath { steps, added })
    }

    /// Appends `V^ℓ`, recording the entities not present in `V^{ℓ−1}`.
    pub fn push_diff(&mut self, mut step: Vec<EntityId>) {
        step.sort_unstable();
        step.dedup();
        let prev = self.steps.last().cloned().unwrap_or_default();
        let added = step
            .iter()
            .copied()
            .filter(|e| prev.binary_search(e).is_err())
            .collect();
        self.steps.push(step);
        self.added.push(added);
    }

    pub fn push(&mut self, step: Vec<EntityId>, added: Vec<EntityId>) {
        self.steps.push(step);
        self.added.push(added);
    }

    /// Number of propagation steps `L`.
    pub fn depth(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn steps(&self) -> &[Vec<EntityId>] {
        &self.steps
    }

    pub fn step(&self, l: usize) -> &[EntityId] {
        &self.steps[l]
    }

    pub fn added(&self) -> &[Vec<EntityId>] {
        &self.added
    }

    pub fn last(&self) -> &[EntityId] {
        self.steps.last().expect("path is never empty")
    }

    pub fn is_nested(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].iter().all(|e| w[1].binary_search(e).is_ok()))
    }

    /// `|V^1 ∪ … ∪ V^L|`, or `|V^0|` for a depth-0 path.
    pub fn involved(&self) -> usize {
        if self.depth() == 0 {
            return self.steps[0].len();
        }
        let mut all: Vec<EntityId> = self.steps[1..].iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }

    /// Step at which `e` first appears.
    pub fn first_step(&self, e: EntityId) -> Option<usize> {
        self.steps.iter().position(|s| s.binary_search(&e).is_ok())
    }
}
