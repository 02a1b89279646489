//! Propagation-path constructors used for comparison: full, progressive,
//! random-walk subgraph, unlearned node-wise and layer-wise samplers, and a
//! score-function gradient alternative to the straight-through coupling.

use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphView};
use crate::propagation::PropagationPath;
use crate::sampler::gumbel_topk;

/// Every entity at every step.
pub fn full_path(num_entities: usize, depth: usize) -> PropagationPath {
    let all: Vec<EntityId> = (0..num_entities).collect();
    PropagationPath::from_steps(vec![all; depth + 1]).expect("non-empty")
}

/// `V^0 = {e_q}`, `V^ℓ` = neighbor closure of `V^{ℓ−1}`.
pub fn progressive_path(
    view: &GraphView<'_>,
    head: EntityId,
    depth: usize,
) -> Result<PropagationPath> {
    let mut path = PropagationPath::start(vec![head]);
    for _ in 0..depth {
        let next = view.neighbors(path.last())?.entities;
        path.push_diff(next);
    }
    Ok(path)
}

fn distinct_neighbors(view: &GraphView<'_>, e: EntityId) -> Vec<EntityId> {
    let mut kids: Vec<EntityId> = view.out_edges(e).map(|x| x.object).collect();
    kids.sort_unstable();
    kids.dedup();
    kids
}

fn check_frontier(view: &GraphView<'_>, prev: &[EntityId], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("sample budget K must be at least 1".into()));
    }
    if prev.is_empty() {
        return Err(Error::Contract(
            "cannot sample from an empty entity set".into(),
        ));
    }
    let n = view.graph().num_entities();
    if let Some(&e) = prev.iter().find(|&&e| e >= n) {
        return Err(Error::Index {
            kind: "entity",
            id: e,
            len: n,
        });
    }
    Ok(())
}

/// Union over `e ∈ prev` of `min(K, |N(e)|)` neighbors of `e` drawn
/// uniformly without replacement.
pub fn nodewise_sample<R: Rng + ?Sized>(
    view: &GraphView<'_>,
    prev: &[EntityId],
    k: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>> {
    check_frontier(view, prev, k)?;
    let mut out = BTreeSet::new();
    for &e in prev {
        let kids = distinct_neighbors(view, e);
        let zeros = vec![0.0; kids.len()];
        out.extend(gumbel_topk(&kids, &zeros, k, 1.0, rng)?.selected);
    }
    Ok(out.into_iter().collect())
}

/// `min(K, |V_neib|)` entities of the closure of `prev`, drawn without
/// replacement with weights proportional to augmented degree.
pub fn layerwise_sample<R: Rng + ?Sized>(
    view: &GraphView<'_>,
    prev: &[EntityId],
    k: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>> {
    check_frontier(view, prev, k)?;
    let neib = view.neighbors(prev)?.entities;
    let logits: Vec<f64> = neib.iter().map(|&e| (view.degree(e) as f64).ln()).collect();
    Ok(gumbel_topk(&neib, &logits, k, 1.0, rng)?.selected)
}

/// Entities touched by `num_walks` uniform random walks of `walk_len`
/// steps from `head`. Self-loops are never taken.
pub fn random_walk_region<R: Rng + ?Sized>(
    view: &GraphView<'_>,
    head: EntityId,
    num_walks: usize,
    walk_len: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>> {
    let kg = view.graph();
    if head >= kg.num_entities() {
        return Err(Error::Index {
            kind: "entity",
            id: head,
            len: kg.num_entities(),
        });
    }
    let self_loop = kg.self_loop();
    let mut seen = BTreeSet::from([head]);
    for _ in 0..num_walks {
        let mut at = head;
        for _ in 0..walk_len {
            let moves: Vec<EntityId> = view
                .out_edges(at)
                .filter(|e| e.relation != self_loop)
                .map(|e| e.object)
                .collect();
            if moves.is_empty() {
                break;
            }
            at = moves[rng.gen_range(0..moves.len())];
            seen.insert(at);
        }
    }
    Ok(seen.into_iter().collect())
}

/// Progressive closure restricted to the random-walk region around `head`.
pub fn subgraph_path<R: Rng + ?Sized>(
    view: &GraphView<'_>,
    head: EntityId,
    num_walks: usize,
    walk_len: usize,
    depth: usize,
    rng: &mut R,
) -> Result<PropagationPath> {
    let region = random_walk_region(view, head, num_walks, walk_len, rng)?;
    let mut path = PropagationPath::start(vec![head]);
    for _ in 0..depth {
        let next: Vec<EntityId> = view
            .neighbors(path.last())?
            .entities
            .into_iter()
            .filter(|e| region.binary_search(e).is_ok())
            .collect();
        path.push_diff(next);
    }
    Ok(path)
}

/// Exponential moving average of rewards used as a variance-reducing
/// baseline. The first reward initializes it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardBaseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl Default for RewardBaseline {
    fn default() -> Self {
        RewardBaseline {
            decay: 0.9,
            value: None,
        }
    }
}

impl RewardBaseline {
    /// Advantage of `reward` against the current baseline.
    pub fn advantage(&self, reward: f64) -> f64 {
        reward - self.value.unwrap_or(reward)
    }

    pub fn update(&mut self, reward: f64) {
        self.value = Some(match self.value {
            None => reward,
            Some(b) => self.decay * b + (1.0 - self.decay) * reward,
        });
    }
}

/// Term whose gradient is `−advantage · ∇ log p(sample)`; adding it to a
/// minimized loss ascends the expected reward.
pub fn reinforce_term(tape: &mut Tape<'_>, sample_log_prob: Var, advantage: f64) -> Result<Var> {
    tape.scale(sample_log_prob, -advantage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::kg::{KnowledgeGraph, Triple};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(s: usize, r: usize, o: usize) -> Triple {
        Triple {
            subject: s,
            relation: r,
            object: o,
        }
    }

    fn random_graph(seed: u64, n: usize, m: usize) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Triple> = (0..m)
            .map(|_| {
                t(
                    rng.gen_range(0..n),
                    rng.gen_range(0..2),
                    rng.gen_range(0..n),
                )
            })
            .collect();
        KnowledgeGraph::build(&ts, n, 2).unwrap()
    }

    #[test]
    fn full_path_examples() {
        let p = full_path(2, 3);
        assert_eq!(p.steps(), &vec![vec![0, 1]; 4][..]);
        assert_eq!(p.depth(), 3);
    }

    #[test]
    fn progressive_on_chain_and_isolated() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2)], 4, 1).unwrap();
        let p = progressive_path(&kg.view(), 0, 2).unwrap();
        assert_eq!(p.steps(), &[vec![0], vec![0, 1], vec![0, 1, 2]]);
        let p = progressive_path(&kg.view(), 3, 3).unwrap();
        assert!(p.steps().iter().all(|s| s == &[3]));
    }

    #[test]
    fn progressive_matches_bfs_ball() {
        for seed in 0..20 {
            let kg = random_graph(seed, 15, 18);
            let dist = kg.bfs_distance(0);
            let p = progressive_path(&kg.view(), 0, 3).unwrap();
            for l in 0..=3 {
                let ball: Vec<usize> = (0..15).filter(|&e| dist[e] <= l).collect();
                assert_eq!(p.step(l), &ball[..], "seed {seed} step {l}");
            }
        }
    }

    #[test]
    fn nodewise_small_neighborhoods_equal_progressive() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2)], 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = nodewise_sample(&kg.view(), &[1], 5, &mut rng).unwrap();
        assert_eq!(next, vec![0, 1, 2]);
    }

    #[test]
    fn nodewise_uniform_inclusion() {
        // center 0 with 4 leaves: N(0) has 5 members including itself
        let kg =
            KnowledgeGraph::build(&(1..5).map(|i| t(0, 0, i)).collect::<Vec<_>>(), 5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hits = [0usize; 5];
        let draws = 10_000;
        for _ in 0..draws {
            let s = nodewise_sample(&kg.view(), &[0], 2, &mut rng).unwrap();
            assert_eq!(s.len(), 2);
            for e in s {
                hits[e] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.4).abs() < 0.02, "{hits:?}");
        }
    }

    fn layerwise_frequencies(kg: &KnowledgeGraph, prev: &[usize], seed: u64) -> Vec<(f64, f64)> {
        let view = kg.view();
        let neib = view.neighbors(prev).unwrap().entities;
        let total: f64 = neib.iter().map(|&e| view.degree(e) as f64).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = vec![0usize; kg.num_entities()];
        let draws = 10_000;
        for _ in 0..draws {
            let s = layerwise_sample(&view, prev, 1, &mut rng).unwrap();
            assert_eq!(s.len(), 1);
            hits[s[0]] += 1;
        }
        neib.iter()
            .map(|&e| (hits[e] as f64 / draws as f64, view.degree(e) as f64 / total))
            .collect()
    }

    #[test]
    fn layerwise_three_to_one() {
        // closure of {0} is {0, 1}; augmented degrees 2 and 6
        let ts: Vec<Triple> = (2..6).map(|i| t(1, 0, i)).chain([t(0, 0, 1)]).collect();
        let kg = KnowledgeGraph::build(&ts, 6, 1).unwrap();
        let freq = layerwise_frequencies(&kg, &[0], 8);
        assert_eq!(freq.len(), 2);
        assert_eq!(freq[0].1, 0.25);
        for (got, want) in freq {
            assert!((got - want).abs() < 0.02, "{got} vs {want}");
        }
    }

    #[test]
    fn layerwise_degree_weights_on_random_graph() {
        let kg = random_graph(2, 12, 20);
        for (got, want) in layerwise_frequencies(&kg, &[0, 1], 5) {
            assert!((got - want).abs() < 0.02, "{got} vs {want}");
        }
    }

    #[test]
    fn layerwise_small_closure_taken_whole() {
        let kg = KnowledgeGraph::build(&[t(0, 0, 1)], 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            layerwise_sample(&kg.view(), &[0], 5, &mut rng).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn subgraph_contained_in_progressive() {
        for seed in 0..10 {
            let kg = random_graph(seed, 20, 30);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sub = subgraph_path(&kg.view(), 0, 3, 3, 3, &mut rng).unwrap();
            let prog = progressive_path(&kg.view(), 0, 3).unwrap();
            for l in 0..=3 {
                assert!(sub.step(l).iter().all(|e| prog.step(l).contains(e)));
            }
        }
    }

    #[test]
    fn subgraph_degenerate_and_saturated() {
        let kg = random_graph(4, 10, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = subgraph_path(&kg.view(), 0, 5, 0, 3, &mut rng).unwrap();
        assert!(p.steps().iter().all(|s| s == &[0]));
        let p = subgraph_path(&kg.view(), 0, 2000, 30, 3, &mut rng).unwrap();
        assert_eq!(p, progressive_path(&kg.view(), 0, 3).unwrap());
    }

    #[test]
    fn reinforce_zero_cases() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let s = tape.leaf(Tensor::column(&[0.3]));
        let lp = tape.plackett_luce_log_prob(s, &[0]).unwrap();
        assert_eq!(tape.scalar(lp), 0.0);
        let term = reinforce_term(&mut tape, lp, 2.0).unwrap();
        let g = tape.backward(term).unwrap();
        assert_eq!(g.wrt(s).unwrap().data(), &[0.0]);

        let b = RewardBaseline {
            decay: 0.9,
            value: Some(-1.5),
        };
        assert_eq!(b.advantage(-1.5), 0.0);
    }

    #[test]
    fn reinforce_bandit_climbs_toward_rewarding_arm() {
        // two arms, arm 0 pays 1, arm 1 pays 0; policy softmax over logits
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let store = ParamStore::new();

        // Monte Carlo gradient at uniform logits vs exact ∂E[r]/∂θ_0 = p0 p1 (r0 − r1)
        let logits = [0.0, 0.0];
        let mut mc = 0.0;
        let n = 20_000;
        for _ in 0..n {
            let pick = gumbel_topk(&[0, 1], &logits, 1, 1.0, &mut rng).unwrap();
            let arm = pick.order[0];
            let reward = if arm == 0 { 1.0 } else { 0.0 };
            let mut tape = Tape::new(&store);
            let s = tape.leaf(Tensor::column(&logits));
            let lp = tape.plackett_luce_log_prob(s, &pick.order).unwrap();
            let term = reinforce_term(&mut tape, lp, reward).unwrap();
            mc -= tape.backward(term).unwrap().wrt(s).unwrap().data()[0];
        }
        mc /= n as f64;
        assert!((mc - 0.25).abs() < 0.02, "{mc}");

        // averaged over independent runs, p(arm 0) rises at every checkpoint
        let runs = 50;
        let checkpoints = [0usize, 25, 50, 100, 200];
        let mut mean_p = vec![0.0; checkpoints.len()];
        for _ in 0..runs {
            let mut theta = [0.0f64, 0.0];
            let mut base = RewardBaseline::default();
            for step in 0..=200 {
                if let Some(c) = checkpoints.iter().position(|&c| c == step) {
                    let p0 = 1.0 / (1.0 + (theta[1] - theta[0]).exp());
                    mean_p[c] += p0 / runs as f64;
                }
                let pick = gumbel_topk(&[0, 1], &theta, 1, 1.0, &mut rng).unwrap();
                let reward = if pick.order[0] == 0 { 1.0 } else { 0.0 };
                let adv = base.advantage(reward);
                base.update(reward);
                let mut tape = Tape::new(&store);
                let s = tape.leaf(Tensor::column(&theta));
                let lp = tape.plackett_luce_log_prob(s, &pick.order).unwrap();
                let term = reinforce_term(&mut tape, lp, adv).unwrap();
                let g = tape.backward(term).unwrap().wrt(s).unwrap().data().to_vec();
                theta[0] -= 0.5 * g[0];
                theta[1] -= 0.5 * g[1];
            }
        }
        assert!(mean_p.windows(2).all(|w| w[1] > w[0]), "{mean_p:?}");
        assert!(mean_p[4] > 0.9, "{mean_p:?}");
    }
}
