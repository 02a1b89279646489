use std::collections::{HashSet, VecDeque};

use crate::error::{Error, Result};

use super::{EntityId, RelationId, Triple};

/// Distance reported by [`KnowledgeGraph::bfs_distance`] for unreachable entities.
pub const UNREACHABLE: usize = usize::MAX;

/// An augmented edge `(subject, relation, object)` where `relation` ranges
/// over base relations, their inverses, and the self-loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

/// Adjacency over `2R + 1` relations: id `r + R` is the inverse of `r` and
/// id `2R` is the self-loop carried by every entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_base_relations: usize,
    offsets: Vec<usize>,
    adjacency: Vec<(RelationId, EntityId)>,
}

impl KnowledgeGraph {
    pub fn build(
        triples: &[Triple],
        num_entities: usize,
        num_base_relations: usize,
    ) -> Result<Self> {
        let r = num_base_relations;
        let mut per_subject: Vec<Vec<(RelationId, EntityId)>> = vec![Vec::new(); num_entities];
        for t in triples {
            if t.subject >= num_entities || t.object >= num_entities {
                return Err(Error::Index {
                    kind: "entity",
                    id: t.subject.max(t.object),
                    len: num_entities,
                });
            }
            if t.relation >= r {
                return Err(Error::Index {
                    kind: "relation",
                    id: t.relation,
                    len: r,
                });
            }
            per_subject[t.subject].push((t.relation, t.object));
            per_subject[t.object].push((t.relation + r, t.subject));
        }
        let mut offsets = Vec::with_capacity(num_entities + 1);
        let mut adjacency = Vec::with_capacity(2 * triples.len() + num_entities);
        offsets.push(0);
        for (e, mut list) in per_subject.into_iter().enumerate() {
            list.push((2 * r, e));
            list.sort_unstable();
            list.dedup();
            adjacency.extend(list);
            offsets.push(adjacency.len());
        }
        Ok(KnowledgeGraph {
            num_entities,
            num_base_relations,
            offsets,
            adjacency,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    /// `2R + 1`.
    pub fn num_relations(&self) -> usize {
        2 * self.num_base_relations + 1
    }

    pub fn self_loop(&self) -> RelationId {
        2 * self.num_base_relations
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        let nr = self.num_base_relations;
        if r < nr {
            r + nr
        } else if r < 2 * nr {
            r - nr
        } else {
            r
        }
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Out-edges of `e` sorted by `(relation, object)`.
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.adjacency[self.offsets[e]..self.offsets[e + 1]]
    }

    pub fn degree(&self, e: EntityId) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }

    pub fn contains(&self, edge: Edge) -> bool {
        edge.subject < self.num_entities
            && self
                .out_edges(edge.subject)
                .binary_search(&(edge.relation, edge.object))
                .is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.num_entities).flat_map(move |s| {
            self.out_edges(s)
                .iter()
                .map(move |&(relation, object)| Edge {
                    subject: s,
                    relation,
                    object,
                })
        })
    }

    pub fn view(&self) -> GraphView<'_> {
        GraphView {
            kg: self,
            masked: HashSet::new(),
        }
    }

    /// Hop distances from `source` over base and inverse edges, ignoring
    /// self-loops. Unreachable entities get [`UNREACHABLE`].
    pub fn bfs_distance(&self, source: EntityId) -> Vec<usize> {
        let mut dist = vec![UNREACHABLE; self.num_entities];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        let self_loop = self.self_loop();
        while let Some(u) = queue.pop_front() {
            for &(r, v) in self.out_edges(u) {
                if r != self_loop && dist[v] == UNREACHABLE {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

/// Read-only adjacency with an optional set of hidden edges.
#[derive(Clone, Debug)]
pub struct GraphView<'a> {
    kg: &'a KnowledgeGraph,
    masked: HashSet<Edge>,
}

/// Result of one neighbor-closure step.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Neighborhood {
    /// Sorted union of the neighbors of the input set.
    pub entities: Vec<EntityId>,
    /// Every visible edge leaving the input set, ordered by subject then
    /// `(relation, object)`.
    pub edges: Vec<Edge>,
}

impl<'a> GraphView<'a> {
    pub fn graph(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    /// Hides `edge` and its inverse.
    pub fn mask(&mut self, edge: Edge) {
        let inv = Edge {
            subject: edge.object,
            relation: self.kg.inverse(edge.relation),
            object: edge.subject,
        };
        if self.kg.contains(edge) {
            self.masked.insert(edge);
            self.masked.insert(inv);
        }
    }

    pub fn masked_count(&self) -> usize {
        self.masked.len()
    }

    pub fn visible(&self, edge: &Edge) -> bool {
        self.masked.is_empty() || !self.masked.contains(edge)
    }

    pub fn edge_count(&self) -> usize {
        self.kg.edge_count() - self.masked.len()
    }

    pub fn out_edges(&self, e: EntityId) -> impl Iterator<Item = Edge> + '_ {
        self.kg
            .out_edges(e)
            .iter()
            .map(move |&(relation, object)| Edge {
                subject: e,
                relation,
                object,
            })
            .filter(move |edge| self.visible(edge))
    }

    pub fn degree(&self, e: EntityId) -> usize {
        if self.masked.is_empty() {
            self.kg.degree(e)
        } else {
            self.out_edges(e).count()
        }
    }

    /// Neighbor closure of a sorted entity set. Self-loops guarantee
    /// `entities ⊆ result.entities`.
    pub fn neighbors(&self, entities: &[EntityId]) -> Result<Neighborhood> {
        let n = self.kg.num_entities;
        let mut edges = Vec::new();
        for &e in entities {
            if e >= n {
                return Err(Error::Index {
                    kind: "entity",
                    id: e,
                    len: n,
                });
            }
            edges.extend(self.out_edges(e));
        }
        let mut out: Vec<EntityId> = edges.iter().map(|e| e.object).collect();
        out.sort_unstable();
        out.dedup();
        Ok(Neighborhood {
            entities: out,
            edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: usize, r: usize, o: usize) -> Triple {
        Triple {
            subject: s,
            relation: r,
            object: o,
        }
    }

    fn edge_set(kg: &KnowledgeGraph) -> Vec<(usize, usize, usize)> {
        let mut v: Vec<_> = kg
            .edges()
            .map(|e| (e.subject, e.relation, e.object))
            .collect();
        v.sort();
        v
    }

    #[test]
    fn single_triple_closure() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1)], 2, 1).unwrap();
        assert_eq!(
            edge_set(&kg),
            vec![(0, 0, 1), (0, 2, 0), (1, 1, 0), (1, 2, 1)]
        );
        assert_eq!(kg.edge_count(), 4);
    }

    #[test]
    fn empty_graph_has_only_self_loops() {
        let kg = KnowledgeGraph::build(&[], 3, 1).unwrap();
        assert_eq!(edge_set(&kg), vec![(0, 2, 0), (1, 2, 1), (2, 2, 2)]);
    }

    #[test]
    fn chain_neighbors() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2)], 3, 1).unwrap();
        let nb = kg.view().neighbors(&[1]).unwrap();
        assert_eq!(nb.entities, vec![0, 1, 2]);
        let rels: Vec<_> = nb.edges.iter().map(|e| (e.relation, e.object)).collect();
        // forward to 2, inverse back to 0, self-loop
        assert_eq!(rels, vec![(0, 2), (1, 0), (2, 1)]);
        assert_eq!(kg.view().neighbors(&[0]).unwrap().entities, vec![0, 1]);
        assert_eq!(
            kg.view().neighbors(&[0, 1, 2]).unwrap().entities,
            vec![0, 1, 2]
        );
    }

    #[test]
    fn isolated_entity_neighbors() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1)], 3, 1).unwrap();
        let nb = kg.view().neighbors(&[2]).unwrap();
        assert_eq!(nb.entities, vec![2]);
        assert_eq!(
            nb.edges,
            vec![Edge {
                subject: 2,
                relation: 2,
                object: 2
            }]
        );
    }

    #[test]
    fn out_of_range_ids() {
        assert!(matches!(
            KnowledgeGraph::build(&[t(0, 0, 5)], 2, 1),
            Err(Error::Index { .. })
        ));
        assert!(KnowledgeGraph::build(&[t(0, 3, 1)], 2, 1).is_err());
        let kg = KnowledgeGraph::build(&[], 2, 1).unwrap();
        assert!(kg.view().neighbors(&[7]).is_err());
    }

    #[test]
    fn bfs_chain_and_isolated() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2)], 4, 1).unwrap();
        let d = kg.bfs_distance(0);
        assert_eq!(&d[..3], &[0, 1, 2]);
        assert_eq!(d[3], UNREACHABLE);
        // direction ignored
        assert_eq!(kg.bfs_distance(2)[0], 2);
    }

    #[test]
    fn masking_hides_edge_and_inverse() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2)], 3, 1).unwrap();
        let mut view = kg.view();
        view.mask(Edge {
            subject: 0,
            relation: 0,
            object: 1,
        });
        assert_eq!(view.edge_count(), kg.edge_count() - 2);
        assert_eq!(view.neighbors(&[0]).unwrap().entities, vec![0]);
        assert_eq!(view.neighbors(&[1]).unwrap().entities, vec![1, 2]);
        // masking a non-edge is a no-op
        view.mask(Edge {
            subject: 2,
            relation: 0,
            object: 0,
        });
        assert_eq!(view.masked_count(), 2);
        assert_eq!(kg.view().edge_count(), kg.edge_count());
    }
}
