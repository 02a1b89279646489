use super::*;
use crate::autodiff::{ParamStore, Tensor};
use crate::baselines::progressive_path;
use crate::gradcheck::{check_params, relative_error};
use crate::kg::{KnowledgeGraph, Triple};
use crate::propagation::{run_fixed_path, ModelConfig, PathMode};
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

fn query(head: usize) -> Query {
    Query {
        head,
        relation: 0,
        answer: 0,
    }
}

#[test]
fn candidate_examples() {
    assert!(candidates(&[0, 1, 2], &[0, 1, 2]).is_empty());
    assert_eq!(candidates(&[0], &[0, 1, 2]), vec![1, 2]);
    // chain 0-1-2-3-4: the step-2 candidates from the 1-hop ball are the hop-2 ring
    let kg =
        KnowledgeGraph::build(&[t(0, 0, 1), t(1, 0, 2), t(2, 0, 3), t(3, 0, 4)], 5, 1).unwrap();
    let dist = kg.bfs_distance(0);
    let ball1: Vec<usize> = (0..5).filter(|&e| dist[e] <= 1).collect();
    let neib = kg.view().neighbors(&ball1).unwrap().entities;
    let ring: Vec<usize> = (0..5).filter(|&e| dist[e] == 2).collect();
    assert_eq!(candidates(&ball1, &neib), ring);
}

#[test]
fn small_pool_selects_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = gumbel_topk(&[3, 5], &[-9.0, 4.0], 2, 0.5, &mut rng).unwrap();
    assert_eq!(r.selected, vec![3, 5]);
    assert_eq!(r.order.len(), 2);
    let r = gumbel_topk(&[], &[], 2, 0.5, &mut rng).unwrap();
    assert!(r.selected.is_empty());
    assert!(gumbel_topk(&[1], &[0.0], 0, 1.0, &mut rng).is_err());
    assert!(gumbel_topk(&[1], &[0.0], 1, 0.0, &mut rng).is_err());
    assert!(gumbel_topk(&[1], &[f64::NAN], 1, 1.0, &mut rng).is_err());
}

#[test]
fn equal_logits_are_a_fair_coin() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    let mut first = 0;
    for _ in 0..n {
        if gumbel_topk(&[0, 1], &[0.7, 0.7], 1, 1.0, &mut rng)
            .unwrap()
            .selected
            == [0]
        {
            first += 1;
        }
    }
    let f = first as f64 / n as f64;
    assert!((f - 0.5).abs() < 0.02, "{f}");
}

#[test]
fn ordered_pairs_follow_plackett_luce() {
    let logits = [0.4, -0.3, 1.1];
    let tau = 0.8;
    let scaled: Vec<f64> = logits.iter().map(|g| g / tau).collect();
    let z: f64 = scaled.iter().map(|s| s.exp()).sum();
    let p: Vec<f64> = scaled.iter().map(|s| s.exp() / z).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mut counts = [[0usize; 3]; 3];
    for _ in 0..n {
        let r = gumbel_topk(&[0, 1, 2], &logits, 2, tau, &mut rng).unwrap();
        counts[r.order[0]][r.order[1]] += 1;
        for (a, b) in r.probs.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let mut tv = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                let exact = p[i] * p[j] / (1.0 - p[i]);
                tv += (counts[i][j] as f64 / n as f64 - exact).abs();
            }
        }
    }
    tv *= 0.5;
    assert!(tv < 0.02, "{tv}");
}

#[test]
fn greedy_breaks_ties_by_entity_id() {
    let r = greedy_topk(&[2, 4, 9], &[1.0, 3.0, 3.0], 1, 1.0).unwrap();
    assert_eq!(r.selected, vec![4]);
    let r = greedy_topk(&[2, 4, 9], &[1.0, 3.0, 3.0], 2, 1.0).unwrap();
    assert_eq!(r.order, vec![1, 2]);
}

#[test]
fn straight_through_value_and_gradient() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let rep = tape.leaf(Tensor::row(&[1.0, 2.0]));
    let p = tape.leaf(Tensor::scalar(0.3));
    let out = straight_through(&mut tape, rep, p).unwrap();
    assert_eq!(tape.value(out).data(), &[1.0, 2.0]);
    let s = tape.sum(out).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.wrt(p).unwrap().data(), &[3.0]);

    let bad = tape.leaf(Tensor::scalar(0.0));
    assert!(matches!(
        straight_through(&mut tape, rep, bad),
        Err(Error::Contract(_))
    ));
    let bad = tape.leaf(Tensor::scalar(1.5));
    assert!(matches!(
        straight_through(&mut tape, rep, bad),
        Err(Error::Contract(_))
    ));
}

/// Gradient into the sampler scores through a 2-candidate softmax, checked
/// against finite differences of the explicit multiplier with `p` frozen.
#[test]
fn straight_through_gradient_through_softmax() {
    let mut store = ParamStore::new();
    let theta = store.insert("theta", Tensor::column(&[0.3, -0.6]));
    let rep_vals = vec![0.5, -1.2, 2.0];
    let tau = 0.7;
    let frozen = {
        let g = store.get(theta).data();
        softmax_slice(&[g[0] / tau, g[1] / tau])[0]
    };
    let weights = Tensor::column(&[0.2, 1.0, -0.4]);

    let mut tape = Tape::new(&store);
    let g = tape.param(theta);
    let g = tape.scale(g, 1.0 / tau).unwrap();
    let probs = tape.softmax(g).unwrap();
    let p0 = tape.gather_rows(probs, &[0]).unwrap();
    let rep = tape.constant(Tensor::row(&rep_vals));
    let out = straight_through(&mut tape, rep, p0).unwrap();
    let w = tape.constant(weights.clone());
    let y = tape.matmul(out, w).unwrap();
    let y = tape.sum(y).unwrap();
    let analytic = tape.backward(y).unwrap().param_grads(&tape);

    let fd = check_params(&store, &[theta], 1e-6, |tape| {
        let g = tape.param(theta);
        let g = tape.scale(g, 1.0 / tau)?;
        let probs = tape.softmax(g)?;
        let p0 = tape.gather_rows(probs, &[0])?;
        let m = tape.add_scalar(p0, 1.0 - frozen)?;
        let rep = tape.constant(Tensor::row(&rep_vals));
        let out = tape.scale_rows(rep, m)?;
        let w = tape.constant(weights.clone());
        let y = tape.matmul(out, w)?;
        tape.sum(y)
    })
    .unwrap();
    assert!(fd.max_rel_err < 1e-6, "{fd:?}");
    // the explicit multiplier and ST must agree on the gradient itself
    let dy_dp: f64 = rep_vals
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum();
    let p1 = 1.0 - frozen;
    let want0 = dy_dp * frozen * p1 / tau;
    let got = analytic.get(theta).unwrap().data();
    assert!(relative_error(got[0], want0) < 1e-12);
    assert!(relative_error(got[1], -want0) < 1e-12);
}

fn model(seed: u64, dim: usize, layers: usize) -> ModelParams {
    ModelParams::init(ModelConfig::new(2, dim, layers), seed).unwrap()
}

fn run(
    kg: &KnowledgeGraph,
    p: &ModelParams,
    q: &Query,
    policy: &Policy,
    seed: u64,
) -> (PropagationPath, Vec<f64>) {
    let mut tape = Tape::new(&p.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = adaprop_forward(&mut tape, &kg.view(), p, q, policy, &mut rng).unwrap();
    let scores = out.scored.logit_values(&tape).to_vec();
    (out.path, scores)
}

#[test]
fn unlimited_budget_walks_hop_balls() {
    for seed in 0..10 {
        let kg = random_graph(seed, 20, 25);
        let p = model(seed, 4, 3);
        for policy in [Policy::adaprop(1000, 1.0), Policy::progressive()] {
            let (path, _) = run(&kg, &p, &query(0), &policy, seed);
            assert_eq!(path, progressive_path(&kg.view(), 0, 3).unwrap());
        }
    }
}

#[test]
fn star_with_budget_two() {
    let kg = KnowledgeGraph::build(&(1..6).map(|i| t(0, 0, i)).collect::<Vec<_>>(), 6, 2).unwrap();
    let p = model(1, 4, 1);
    let (path, scores) = run(&kg, &p, &query(0), &Policy::adaprop(2, 1.0), 3);
    assert_eq!(path.step(1).len(), 3);
    assert_eq!(scores.len(), 3);
    assert_eq!(path.added()[1].len(), 2);
}

#[test]
fn nesting_and_budget_hold() {
    for seed in 0..20 {
        let kg = random_graph(seed, 30, 60);
        let p = model(seed, 4, 3);
        for k in [1, 2, 5] {
            let mut policy = Policy::adaprop(k, 0.5);
            for selection in [Selection::Learned, Selection::Greedy, Selection::Uniform] {
                policy.selection = selection;
                let (path, _) = run(&kg, &p, &query(seed as usize % 30), &policy, seed);
                assert!(path.is_nested());
                assert_eq!(path.step(0).len(), 1);
                for l in 1..=3 {
                    assert!(path.step(l).len() <= path.step(l - 1).len() + k);
                }
                assert!(path.last().len() <= 1 + 3 * k);
            }
        }
    }
}

#[test]
fn same_seed_same_bits() {
    let kg = random_graph(3, 40, 90);
    let p = model(2, 8, 3);
    let policy = Policy::adaprop(3, 1.0);
    let a = run(&kg, &p, &query(5), &policy, 99);
    let b = run(&kg, &p, &query(5), &policy, 99);
    assert_eq!(a.0, b.0);
    assert_eq!(
        a.1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    let c = run(&kg, &p, &query(5), &policy, 100);
    assert!(a.0 != c.0 || a.1 != c.1);
}

#[test]
fn fixed_path_replays_sampled_scores() {
    let kg = random_graph(6, 30, 70);
    let p = model(4, 6, 3);
    let q = query(2);
    let (path, scores) = run(&kg, &p, &q, &Policy::adaprop(3, 1.0), 5);
    let mut tape = Tape::new(&p.store);
    let out = run_fixed_path(&mut tape, &kg.view(), &p, &q, &path, PathMode::Progressive).unwrap();
    for (a, b) in out.logit_values(&tape).iter().zip(&scores) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn layerwise_and_nodewise_respect_caps() {
    let kg = random_graph(8, 40, 120);
    let p = model(3, 4, 3);
    for (scheme, selection) in [
        (Scheme::Layerwise, Selection::Degree),
        (Scheme::Layerwise, Selection::Learned),
        (Scheme::Nodewise, Selection::Uniform),
        (Scheme::Nodewise, Selection::Learned),
    ] {
        let policy = Policy {
            scheme,
            selection,
            estimator: Estimator::StraightThrough,
            k: 2,
            tau: 1.0,
        };
        for seed in 0..5 {
            let (path, _) = run(&kg, &p, &query(1), &policy, seed);
            for l in 1..=3 {
                let cap = match scheme {
                    Scheme::Layerwise => 2,
                    _ => 2 * path.step(l - 1).len(),
                };
                assert!(path.step(l).len() <= cap, "{scheme} {:?}", path.steps());
                let closure = kg.view().neighbors(path.step(l - 1)).unwrap().entities;
                assert!(path.step(l).iter().all(|e| closure.contains(e)));
            }
        }
    }
}

#[test]
fn invalid_policies_rejected() {
    let mut policy = Policy::adaprop(2, 1.0);
    policy.selection = Selection::Degree;
    assert!(policy.validate().is_err());
    policy = Policy::adaprop(0, 1.0);
    assert!(policy.validate().is_err());
    policy = Policy::adaprop(1, -1.0);
    assert!(policy.validate().is_err());
}

fn bce(tape: &mut Tape<'_>, out: &ForwardOutput, answer: usize) -> Result<Var> {
    let probs = tape.clamp(out.scored.probs, 1e-7, 1.0 - 1e-7)?;
    let labels: Vec<f64> = out
        .scored
        .entities
        .iter()
        .map(|&e| if e == answer { 1.0 } else { 0.0 })
        .collect();
    let y = tape.constant(Tensor::column(&labels));
    let logp = tape.log(probs)?;
    let pos = tape.mul(y, logp)?;
    let one_minus = tape.scale(probs, -1.0)?;
    let one_minus = tape.add_scalar(one_minus, 1.0)?;
    let log_neg = tape.log(one_minus)?;
    let ny = tape.constant(Tensor::column(
        &labels.iter().map(|l| 1.0 - l).collect::<Vec<_>>(),
    ));
    let neg = tape.mul(ny, log_neg)?;
    let total = tape.add(pos, neg)?;
    let s = tape.sum(total)?;
    tape.scale(s, -1.0)
}

#[test]
fn sampler_receives_gradient_only_through_its_route() {
    let kg = random_graph(9, 25, 60);
    let mut cfg = ModelConfig::new(2, 6, 3);
    cfg.activation = crate::propagation::Activation::Tanh;
    let p = ModelParams::init(cfg, 12).unwrap();
    let q = Query {
        head: 0,
        relation: 1,
        answer: 3,
    };
    let theta = p.sampler_ids();
    let grads_for = |policy: Policy| {
        let mut tape = Tape::new(&p.store);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = adaprop_forward(&mut tape, &kg.view(), &p, &q, &policy, &mut rng).unwrap();
        let mut loss = bce(&mut tape, &out, q.answer).unwrap();
        if let Some(lp) = out.sample_log_prob {
            let term = crate::baselines::reinforce_term(&mut tape, lp, 0.5).unwrap();
            loss = tape.add(loss, term).unwrap();
        }
        tape.backward(loss).unwrap().param_grads(&tape)
    };
    let norm = |g: &crate::autodiff::ParamGrads| -> f64 {
        theta
            .iter()
            .filter_map(|id| g.get(*id))
            .flat_map(|t| t.data().iter().map(|x| x * x))
            .sum()
    };
    let st = grads_for(Policy::adaprop(3, 1.0));
    assert!(norm(&st) > 0.0);

    let mut greedy = Policy::adaprop(3, 1.0);
    greedy.selection = Selection::Greedy;
    assert_eq!(norm(&grads_for(greedy)), 0.0);

    let mut rf = Policy::adaprop(3, 1.0);
    rf.estimator = Estimator::Reinforce;
    let g = grads_for(rf);
    assert!(norm(&g) > 0.0);
    // the same loss without the score-function term leaves θ untouched
    let mut tape = Tape::new(&p.store);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = adaprop_forward(&mut tape, &kg.view(), &p, &q, &rf, &mut rng).unwrap();
    let loss = bce(&mut tape, &out, q.answer).unwrap();
    assert_eq!(norm(&tape.backward(loss).unwrap().param_grads(&tape)), 0.0);
}

#[test]
fn sampled_forward_network_gradient_matches_finite_difference() {
    let kg = random_graph(10, 15, 30);
    let mut cfg = ModelConfig::new(2, 8, 3);
    cfg.activation = crate::propagation::Activation::Tanh;
    let p = ModelParams::init(cfg, 21).unwrap();
    let q = Query {
        head: 1,
        relation: 2,
        answer: 4,
    };
    // ST routes extra gradient through p by design, so compare on a greedy path
    let policy = Policy::adaprop(2, 1.0).greedy();
    let ids = p.network_ids();
    let report = check_params(&p.store, &ids, 1e-5, |tape| {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = adaprop_forward(tape, &kg.view(), &p, &q, &policy, &mut rng)?;
        bce(tape, &out, q.answer)
    })
    .unwrap();
    assert!(report.max_rel_err < 1e-4, "{report:?}");
}
