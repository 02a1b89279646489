use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, SegmentMode, Tensor};
use crate::error::{Error, Result};

/// Combination of source representation and relation embedding on an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MessageOp {
    Add,
    Mul,
    /// Pairwise complex product.
    Rotate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
}

impl FromStr for MessageOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "+" | "add" => Ok(MessageOp::Add),
            "*" | "mul" => Ok(MessageOp::Mul),
            "o" | "rotate" | "∘" => Ok(MessageOp::Rotate),
            _ => Err(Error::Config(format!(
                "unknown message op `{s}` (add|mul|rotate)"
            ))),
        }
    }
}

impl fmt::Display for MessageOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageOp::Add => "add",
            MessageOp::Mul => "mul",
            MessageOp::Rotate => "rotate",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}` (relu|tanh)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

pub fn parse_aggregation(s: &str) -> Result<SegmentMode> {
    match s.to_ascii_lowercase().as_str() {
        "sum" => Ok(SegmentMode::Sum),
        "mean" => Ok(SegmentMode::Mean),
        "max" => Ok(SegmentMode::Max),
        _ => Err(Error::Config(format!(
            "unknown aggregation `{s}` (sum|mean|max)"
        ))),
    }
}

pub fn aggregation_name(m: SegmentMode) -> &'static str {
    match m {
        SegmentMode::Sum => "sum",
        SegmentMode::Mean => "mean",
        SegmentMode::Max => "max",
    }
}

/// Shape and operator choices of a propagation network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub num_base_relations: usize,
    pub message: MessageOp,
    pub aggregation: SegmentMode,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(num_base_relations: usize, dim: usize, layers: usize) -> Self {
        ModelConfig {
            dim,
            layers,
            num_base_relations,
            message: MessageOp::Add,
            aggregation: SegmentMode::Sum,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.message == MessageOp::Rotate && !self.dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotate messages need an even dim, got {}",
                self.dim
            )));
        }
        if self.num_base_relations == 0 {
            return Err(Error::Config("graph has no relations".into()));
        }
        Ok(())
    }
}

/// Parameter handles of one propagation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerParams {
    /// `(2R+1) × d` relation embeddings.
    pub relation: ParamId,
    /// Attention input maps, `d × d` each, applied to source, relation and
    /// query-relation representations.
    pub attn_source: ParamId,
    pub attn_relation: ParamId,
    pub attn_query: ParamId,
    /// `d × 1`.
    pub attn_out: ParamId,
    /// Sampler scoring `g(h) = h·u + b`: `d × 1` and `1 × 1`.
    pub sampler_weight: ParamId,
    pub sampler_bias: ParamId,
}

/// All learnable state of the reasoner.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layers: Vec<LayerParams>,
    /// `2R × d` query-relation embeddings.
    pub query_relation: ParamId,
    pub score_weight: ParamId,
    pub score_bias: ParamId,
}

impl ModelParams {
    /// Glorot-uniform matrices, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self::build(config, |rows, cols| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
            Tensor::from_vec(rows, cols, data).expect("shape")
        }))
    }

    /// Every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::build(config, Tensor::zeros))
    }

    fn build(config: ModelConfig, mut matrix: impl FnMut(usize, usize) -> Tensor) -> Self {
        let d = config.dim;
        let nrel = 2 * config.num_base_relations + 1;
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(LayerParams {
                relation: store.insert(format!("layer{l}.relation"), matrix(nrel, d)),
                attn_source: store.insert(format!("layer{l}.attn_source"), matrix(d, d)),
                attn_relation: store.insert(format!("layer{l}.attn_relation"), matrix(d, d)),
                attn_query: store.insert(format!("layer{l}.attn_query"), matrix(d, d)),
                attn_out: store.insert(format!("layer{l}.attn_out"), matrix(d, 1)),
                sampler_weight: store.insert(format!("layer{l}.sampler_weight"), matrix(d, 1)),
                sampler_bias: store.insert(format!("layer{l}.sampler_bias"), Tensor::zeros(1, 1)),
            });
        }
        let query_relation =
            store.insert("query_relation", matrix(2 * config.num_base_relations, d));
        let score_weight = store.insert("score_weight", matrix(d, 1));
        let score_bias = store.insert("score_bias", Tensor::zeros(1, 1));
        ModelParams {
            config,
            store,
            layers,
            query_relation,
            score_weight,
            score_bias,
        }
    }

    /// Sampler parameters `θ`.
    pub fn sampler_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.sampler_weight, l.sampler_bias])
            .collect()
    }

    /// Network parameters `w` (everything but the sampler).
    pub fn network_ids(&self) -> Vec<ParamId> {
        let theta = self.sampler_ids();
        self.store.ids().filter(|id| !theta.contains(id)).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.store.iter().map(|(_, _, t)| t.len()).sum()
    }
}
