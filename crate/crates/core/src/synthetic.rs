//! Planted-path benchmark. Every query entity owns a relation-typed chain
//! that ends at its answer three or four hops away, surrounded by decoy
//! branches. Decoy leaves attach to a few shared hubs, so an unguided
//! sampler that wanders into a hub faces hundreds of irrelevant candidates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{DatasetBundle, Triple, Vocab};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedConfig {
    /// Query entities; each gets its own chain and decoys.
    pub clusters: usize,
    /// Decoy branches hanging off every chain entity.
    pub decoys: usize,
    /// Children per decoy branch root (decoy trees are two levels deep).
    pub decoy_fanout: usize,
    pub hubs: usize,
    /// Chance that a decoy leaf links to a random hub.
    pub hub_link_prob: f64,
    /// Relations used on chains and decoys.
    pub link_relations: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            clusters: 240,
            decoys: 6,
            decoy_fanout: 2,
            hubs: 4,
            hub_link_prob: 0.5,
            link_relations: 4,
            seed: 1,
        }
    }
}

/// Relation of chain step `k` (0-based). Shared by both chain lengths, so
/// only the query relation tells where the answer sits.
fn chain_relation(k: usize, links: usize) -> usize {
    k % links
}

/// Builds the benchmark. Answers sit at BFS distance 3 or 4 from their
/// query entity (alternating by cluster); clusters are split 70/15/15.
pub fn planted_paths(cfg: &PlantedConfig) -> Result<DatasetBundle> {
    if cfg.clusters < 10 || cfg.link_relations < 2 || cfg.decoys == 0 {
        return Err(Error::Config(
            "planted benchmark needs clusters >= 10, link_relations >= 2, decoys >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut names: Vec<String> = Vec::new();
    let mut new_entity = |name: String| {
        names.push(name);
        names.len() - 1
    };
    let hubs: Vec<usize> = (0..cfg.hubs)
        .map(|j| new_entity(format!("hub{j}")))
        .collect();
    let hub_rel = cfg.link_relations;
    let reach = |hops: usize| cfg.link_relations + hops - 2; // reach3, reach4

    let mut facts = Vec::new();
    let mut queries = Vec::new();
    for c in 0..cfg.clusters {
        let hops = 3 + c % 2;
        let chain: Vec<usize> = (0..=hops)
            .map(|k| new_entity(format!("c{c}.{k}")))
            .collect();
        for k in 0..hops {
            facts.push(Triple {
                subject: chain[k],
                relation: chain_relation(k, cfg.link_relations),
                object: chain[k + 1],
            });
        }
        for (k, &node) in chain.iter().enumerate() {
            for b in 0..cfg.decoys {
                let root = new_entity(format!("c{c}.{k}.d{b}"));
                // never the chain's own next relation, so decoys diverge at once
                let forbidden = (k < hops).then(|| chain_relation(k, cfg.link_relations));
                let rel = loop {
                    let r = rng.gen_range(0..cfg.link_relations);
                    if Some(r) != forbidden {
                        break r;
                    }
                };
                facts.push(Triple {
                    subject: node,
                    relation: rel,
                    object: root,
                });
                for f in 0..cfg.decoy_fanout {
                    let leaf = new_entity(format!("c{c}.{k}.d{b}.{f}"));
                    facts.push(Triple {
                        subject: root,
                        relation: rng.gen_range(0..cfg.link_relations),
                        object: leaf,
                    });
                    if !hubs.is_empty() && rng.gen_bool(cfg.hub_link_prob) {
                        facts.push(Triple {
                            subject: leaf,
                            relation: hub_rel,
                            object: hubs[rng.gen_range(0..hubs.len())],
                        });
                    }
                }
            }
        }
        queries.push(Triple {
            subject: chain[0],
            relation: reach(hops),
            object: chain[hops],
        });
    }

    queries.shuffle(&mut rng);
    let n_valid = cfg.clusters * 15 / 100;
    let test = queries.split_off(queries.len() - n_valid);
    let valid = queries.split_off(queries.len() - n_valid);
    let mut relations: Vec<String> = (0..cfg.link_relations)
        .map(|r| format!("link{r}"))
        .collect();
    relations.extend([
        "hub".to_string(),
        "reach3".to_string(),
        "reach4".to_string(),
    ]);
    DatasetBundle::from_parts(
        format!("planted-{}", cfg.seed),
        Vocab::from_names(names)?,
        Vocab::from_names(relations)?,
        facts,
        queries,
        valid,
        test,
    )
}
