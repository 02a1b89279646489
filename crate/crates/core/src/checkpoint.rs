//! Plain-text snapshot of a trained model. Floats are written in shortest
//! round-trip form, so a reload reproduces every parameter bit for bit.
//! The final line is a SHA-256 digest of everything above it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::propagation::{aggregation_name, parse_aggregation, ModelConfig, ModelParams};
use crate::scheme::SchemeConfig;

const MAGIC: &str = "adaprop-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub scheme: SchemeConfig,
    /// Base relation names in id order, for matching against a dataset.
    pub relations: Vec<String>,
    /// Epoch the snapshot was taken after (0 = untrained).
    pub epoch: usize,
    /// Validation metric used for model selection.
    pub metric: f64,
    /// Every random stream is keyed by `(seed, epoch, item)`, so the seed
    /// and epoch are the complete sampler state.
    pub seed: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = &self.params.config;
        let s = &self.scheme;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "epoch {}", self.epoch);
        let _ = writeln!(out, "metric {:?}", self.metric);
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(
            out,
            "model d={} L={} mess={} agg={} act={}",
            c.dim,
            c.layers,
            c.message,
            aggregation_name(c.aggregation),
            c.activation
        );
        let _ = writeln!(
            out,
            "scheme scheme={} learned={} K={} tau={:?} estimator={} num_walks={} walk_len={}",
            s.kind, s.learned, s.k, s.tau, s.estimator, s.num_walks, s.walk_len
        );
        for r in &self.relations {
            let _ = writeln!(out, "relation {r}");
        }
        for (_, name, t) in self.params.store.iter() {
            let _ = writeln!(out, "param {name} {} {}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row_slice(r).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        let digest = Sha256::digest(out.as_bytes());
        let _ = writeln!(out, "sha256 {digest:x}");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body_end = text
            .trim_end_matches('\n')
            .rfind('\n')
            .map(|i| i + 1)
            .ok_or_else(|| bad("truncated file"))?;
        let (body, trailer) = text.split_at(body_end);
        let want = trailer
            .trim_end()
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad("missing digest line"))?;
        let got = format!("{:x}", Sha256::digest(body.as_bytes()));
        if got != want {
            return Err(bad("digest mismatch (file is corrupted or was edited)"));
        }

        let mut lines = body.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
        if next("header")? != MAGIC {
            return Err(bad("unrecognized header"));
        }
        let field = |line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{key}` line")))
        };
        let num = |v: String, key: &str| -> Result<f64> {
            v.parse().map_err(|_| bad(format!("bad {key} `{v}`")))
        };
        let epoch = num(field(next("epoch")?, "epoch")?, "epoch")? as usize;
        let metric = num(field(next("metric")?, "metric")?, "metric")?;
        let seed_s = field(next("seed")?, "seed")?;
        let seed: u64 = seed_s
            .parse()
            .map_err(|_| bad(format!("bad seed `{seed_s}`")))?;

        let model = kv(&field(next("model")?, "model")?)?;
        let scheme = kv(&field(next("scheme")?, "scheme")?)?;
        let get = |m: &[(String, String)], k: &str| -> Result<String> {
            m.iter()
                .find(|(a, _)| a == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let int = |m: &[(String, String)], k: &str| -> Result<usize> {
            let v = get(m, k)?;
            v.parse().map_err(|_| bad(format!("bad {k} `{v}`")))
        };

        let mut rest: Vec<&str> = lines.collect();
        rest.reverse();
        let mut relations = Vec::new();
        while let Some(r) = rest.last().and_then(|l| l.strip_prefix("relation ")) {
            relations.push(r.to_string());
            rest.pop();
        }
        let config = ModelConfig {
            dim: int(&model, "d")?,
            layers: int(&model, "L")?,
            num_base_relations: relations.len(),
            message: get(&model, "mess")?.parse()?,
            aggregation: parse_aggregation(&get(&model, "agg")?)?,
            activation: get(&model, "act")?.parse()?,
        };
        let scheme = SchemeConfig {
            kind: get(&scheme, "scheme")?.parse()?,
            learned: get(&scheme, "learned")? == "true",
            k: int(&scheme, "K")?,
            tau: num(get(&scheme, "tau")?, "tau")?,
            estimator: get(&scheme, "estimator")?.parse()?,
            num_walks: int(&scheme, "num_walks")?,
            walk_len: int(&scheme, "walk_len")?,
        };

        let mut params = ModelParams::zeros(config)?;
        let mut seen = vec![false; params.store.len()];
        while let Some(head) = rest.pop() {
            let parts: Vec<&str> = head.split(' ').collect();
            let [tag, name, rows, cols] = parts[..] else {
                return Err(bad(format!("expected param header, got `{head}`")));
            };
            if tag != "param" {
                return Err(bad(format!("expected param header, got `{head}`")));
            }
            let id = params
                .store
                .find(name)
                .ok_or_else(|| bad(format!("unexpected parameter `{name}`")))?;
            let (rows, cols): (usize, usize) = (
                rows.parse().map_err(|_| bad("bad row count"))?,
                cols.parse().map_err(|_| bad("bad column count"))?,
            );
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = rest
                    .pop()
                    .ok_or_else(|| bad(format!("{name}: missing rows")))?;
                for v in line.split(' ').filter(|v| !v.is_empty()) {
                    data.push(
                        v.parse::<f64>()
                            .map_err(|_| bad(format!("{name}: bad value `{v}`")))?,
                    );
                }
            }
            let t = Tensor::from_vec(rows, cols, data).map_err(|e| bad(format!("{name}: {e}")))?;
            params.store.set(id, t).map_err(|e| bad(e.to_string()))?;
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let id = params.store.ids().nth(i).expect("index in range");
            return Err(bad(format!("parameter `{}` absent", params.store.name(id))));
        }
        Ok(Checkpoint {
            params,
            scheme,
            relations,
            epoch,
            metric,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Fails unless `relations` lists the same names in the same order.
    pub fn check_relations(&self, relations: &[String]) -> Result<()> {
        for (i, name) in relations.iter().enumerate() {
            match self.relations.get(i) {
                Some(n) if n == name => {}
                Some(_) | None if !self.relations.contains(name) => {
                    return Err(Error::Config(format!(
                        "relation `{name}` is not in the checkpoint's vocabulary"
                    )))
                }
                _ => {
                    return Err(Error::Config(format!(
                    "relation `{name}` has id {i} in the data but a different id in the checkpoint"
                )))
                }
            }
        }
        if let Some(missing) = self.relations.get(relations.len()) {
            return Err(Error::Config(format!(
                "checkpoint relation `{missing}` is absent from the data"
            )));
        }
        Ok(())
    }
}

fn kv(line: &str) -> Result<Vec<(String, String)>> {
    line.split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.split_once('=')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| bad(format!("expected key=value, got `{t}`")))
        })
        .collect()
}
