//! Knowledge-graph storage: vocabularies, triples, augmented adjacency,
//! dataset directories and the filter index used by ranking.

mod dataset;
mod graph;
mod vocab;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

pub use dataset::{DatasetBundle, EvalSplit, InductiveGraph, LoadOptions, Split};
pub use graph::{Edge, GraphView, KnowledgeGraph, Neighborhood, UNREACHABLE};
pub use vocab::Vocab;

use crate::error::{Error, Result};

pub type EntityId = usize;
/// Augmented relation id in `0..2R+1`.
pub type RelationId = usize;

/// A fact over base relation ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

/// `(head, relation, ?)` with its answer. Reverse queries use `r + R`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
    pub answer: EntityId,
}

impl Query {
    /// Forward and reverse queries for each triple, in that order.
    pub fn both_directions(triples: &[Triple], num_base_relations: usize) -> Vec<Query> {
        triples
            .iter()
            .flat_map(|t| {
                [
                    Query {
                        head: t.subject,
                        relation: t.relation,
                        answer: t.object,
                    },
                    Query {
                        head: t.object,
                        relation: t.relation + num_base_relations,
                        answer: t.subject,
                    },
                ]
            })
            .collect()
    }
}

/// Whether [`load_triples`] may grow the entity vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VocabMode {
    Build,
    Fixed,
}

/// Reads `head<TAB>relation<TAB>tail` lines, deduplicating in first-seen
/// order. Relations may only be added in [`VocabMode::Build`] as well.
pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
    entity_mode: VocabMode,
    relation_mode: VocabMode,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let resolve = |vocab: &mut Vocab, mode, kind, name: &str| match mode {
            VocabMode::Build => Ok(vocab.get_or_insert(name)),
            VocabMode::Fixed => vocab.lookup(name).ok_or_else(|| Error::Vocab {
                kind,
                name: name.to_string(),
            }),
        };
        let subject = resolve(entities, entity_mode, "entity", fields[0])?;
        let relation = resolve(relations, relation_mode, "relation", fields[1])?;
        let object = resolve(entities, entity_mode, "entity", fields[2])?;
        let t = Triple {
            subject,
            relation,
            object,
        };
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// `(entity, augmented relation) → known true objects`, both directions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FilterIndex {
    map: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl FilterIndex {
    pub fn build<'a, I>(splits: I, num_base_relations: usize) -> Self
    where
        I: IntoIterator<Item = &'a [Triple]>,
    {
        let mut map: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for split in splits {
            for t in split {
                map.entry((t.subject, t.relation))
                    .or_default()
                    .push(t.object);
                map.entry((t.object, t.relation + num_base_relations))
                    .or_default()
                    .push(t.subject);
            }
        }
        for v in map.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        FilterIndex { map }
    }

    /// Sorted known objects for `(head, relation)`.
    pub fn get(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.map
            .get(&(head, relation))
            .map_or(&[], |v| v.as_slice())
    }

    pub fn contains(&self, head: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.get(head, relation).binary_search(&object).is_ok()
    }

    /// Number of stored `(head, relation, object)` facts.
    pub fn len(&self) -> usize {
        self.map.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
