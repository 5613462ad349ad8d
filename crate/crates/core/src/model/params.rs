use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

/// Architecture of the hypergraph transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the initial node features.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub final_dim: usize,
    pub tasks: usize,
    /// Adds the previous layer's embeddings to each pooled output from layer 2 on.
    #[serde(default)]
    pub residual: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize, tasks: usize) -> Self {
        Self {
            input_dim,
            hidden_dim: 48,
            heads: 4,
            layers: 3,
            final_dim: 48,
            tasks,
            residual: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("final_dim", self.final_dim),
            ("tasks", self.tasks),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "{} heads do not divide hidden width {}",
                self.heads, self.hidden_dim
            )));
        }
        Ok(())
    }
}

/// One attention head: a learned query and key/value projections.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: Array1<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

/// All heads of one pooling direction.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolParams {
    pub heads: Vec<HeadParams>,
}

impl PoolParams {
    pub fn input_dim(&self) -> usize {
        self.heads[0].key.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].key.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.head_dim() * self.heads.len()
    }

    fn init(input_dim: usize, head_dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let heads = (0..heads)
            .map(|_| HeadParams {
                query: glorot(1, head_dim, rng).into_shape_with_order(head_dim).expect("row"),
                key: glorot(input_dim, head_dim, rng),
                value: glorot(input_dim, head_dim, rng),
            })
            .collect();
        Self { heads }
    }

    fn zeros_like(&self) -> Self {
        Self {
            heads: self
                .heads
                .iter()
                .map(|h| HeadParams {
                    query: Array1::zeros(h.query.len()),
                    key: Array2::zeros(h.key.dim()),
                    value: Array2::zeros(h.value.dim()),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub node_to_edge: PoolParams,
    pub edge_to_node: PoolParams,
}

/// Two dense layers mapping a final edge embedding to task logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every trainable tensor of the model. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layers: Vec<LayerParams>,
    pub head: PredictionHead,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

impl ModelParams {
    /// Seeded Glorot-uniform weights and zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = util::rng(util::derive_seed(seed, "model-init"));
        let dh = config.head_dim();
        let layers = (0..config.layers)
            .map(|l| {
                let d_in = if l == 0 { config.input_dim } else { config.hidden_dim };
                LayerParams {
                    node_to_edge: PoolParams::init(d_in, dh, config.heads, &mut rng),
                    edge_to_node: PoolParams::init(config.hidden_dim, dh, config.heads, &mut rng),
                }
            })
            .collect();
        let head = PredictionHead {
            w1: glorot(config.hidden_dim, config.final_dim, &mut rng),
            b1: Array1::zeros(config.final_dim),
            w2: glorot(config.final_dim, config.tasks, &mut rng),
            b2: Array1::zeros(config.tasks),
        };
        Ok(Self {
            config: config.clone(),
            layers,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    node_to_edge: l.node_to_edge.zeros_like(),
                    edge_to_node: l.edge_to_node.zeros_like(),
                })
                .collect(),
            head: PredictionHead {
                w1: Array2::zeros(self.head.w1.dim()),
                b1: Array1::zeros(self.head.b1.len()),
                w2: Array2::zeros(self.head.w2.dim()),
                b2: Array1::zeros(self.head.b2.len()),
            },
        }
    }

    /// Named tensors in a fixed order: layers (node→edge then edge→node,
    /// heads ascending, query/key/value), then the prediction head.
    pub fn tensors(&self) -> Vec<(String, &[f64], (usize, usize))> {
        let mut out: Vec<(String, &[f64], (usize, usize))> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (dir, pool) in [("n2e", &layer.node_to_edge), ("e2n", &layer.edge_to_node)] {
                for (i, h) in pool.heads.iter().enumerate() {
                    let p = format!("layer{}.{dir}.head{i}", l + 1);
                    out.push((format!("{p}.query"), slice1(&h.query), (1, h.query.len())));
                    out.push((format!("{p}.key"), slice2(&h.key), h.key.dim()));
                    out.push((format!("{p}.value"), slice2(&h.value), h.value.dim()));
                }
            }
        }
        let h = &self.head;
        out.push(("head.w1".into(), slice2(&h.w1), h.w1.dim()));
        out.push(("head.b1".into(), slice1(&h.b1), (1, h.b1.len())));
        out.push(("head.w2".into(), slice2(&h.w2), h.w2.dim()));
        out.push(("head.b2".into(), slice1(&h.b2), (1, h.b2.len())));
        out
    }

    /// Mutable counterparts of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            for pool in [&mut layer.node_to_edge, &mut layer.edge_to_node] {
                for h in &mut pool.heads {
                    out.push(h.query.as_slice_mut().expect("standard layout"));
                    out.push(h.key.as_slice_mut().expect("standard layout"));
                    out.push(h.value.as_slice_mut().expect("standard layout"));
                }
            }
        }
        let h = &mut self.head;
        out.push(h.w1.as_slice_mut().expect("standard layout"));
        out.push(h.b1.as_slice_mut().expect("standard layout"));
        out.push(h.w2.as_slice_mut().expect("standard layout"));
        out.push(h.b2.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, s, _)| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_parameters());
        for (_, s, _) in self.tensors() {
            flat.extend_from_slice(s);
        }
        flat
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_parameters();
        if flat.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            hidden_dim: 4,
            heads: 2,
            layers: 2,
            final_dim: 3,
            tasks: 2,
            residual: false,
        }
    }

    #[test]
    fn shapes_follow_the_config() {
        let p = ModelParams::init(&small(), 1).unwrap();
        assert_eq!(p.layers.len(), 2);
        let first = &p.layers[0].node_to_edge.heads[0];
        assert_eq!(first.key.dim(), (6, 2));
        assert_eq!(first.query.len(), 2);
        assert_eq!(p.layers[1].node_to_edge.heads[1].value.dim(), (4, 2));
        assert_eq!(p.layers[0].edge_to_node.input_dim(), 4);
        assert_eq!(p.head.w1.dim(), (4, 3));
        assert_eq!(p.head.w2.dim(), (3, 2));
        assert!(p.head.b1.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn heads_must_divide_hidden_width() {
        let cfg = ModelConfig { heads: 3, ..small() };
        assert!(ModelParams::init(&cfg, 0).is_err());
        assert!(ModelParams::init(&ModelConfig { layers: 0, ..small() }, 0).is_err());
    }

    #[test]
    fn glorot_bounds_hold() {
        let p = ModelParams::init(&small(), 3).unwrap();
        let limit = (6.0f64 / (6 + 2) as f64).sqrt();
        assert!(p.layers[0].node_to_edge.heads[0].key.iter().all(|v| v.abs() < limit));
    }

    #[test]
    fn flatten_round_trips_and_init_is_seeded() {
        let a = ModelParams::init(&small(), 5).unwrap();
        let mut b = a.zeros_like();
        b.unflatten(&a.flatten()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, ModelParams::init(&small(), 5).unwrap());
        assert_ne!(a, ModelParams::init(&small(), 6).unwrap());
        assert!(b.unflatten(&[0.0]).is_err());
    }
}
