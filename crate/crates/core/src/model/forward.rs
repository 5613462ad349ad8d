use ndarray::{Array2, ArrayView2};

use super::params::{ModelParams, PredictionHead};
use super::pool::{check_finite, pool_sets, pool_sets_backward, standard, sum_rows, weight_sums, PoolCache};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;

const CLAMP: f64 = 1e-7;

/// Activations of one forward pass, kept for gradients and analysis.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Node embeddings Z_v^0 (the input features) through Z_v^L.
    pub node_states: Vec<Array2<f64>>,
    /// Edge embeddings Z_e^1 through Z_e^L.
    pub edge_states: Vec<Array2<f64>>,
    pub node_to_edge: Vec<PoolCache>,
    pub edge_to_node: Vec<PoolCache>,
    /// Prediction head pre-activation and ReLU output.
    pub hidden_pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub edge_embeddings: Array2<f64>,
    pub node_embeddings: Array2<f64>,
    pub probabilities: Array2<f64>,
    pub cache: ForwardCache,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn node_sets(hg: &Hypergraph) -> Vec<Vec<usize>> {
    (0..hg.num_nodes()).map(|v| hg.incident_edges(v).to_vec()).collect()
}

/// Runs L rounds of node→edge then edge→node pooling, then the prediction head
/// on the final edge embeddings.
pub fn forward(hg: &Hypergraph, x0: ArrayView2<'_, f64>, params: &ModelParams) -> Result<ForwardOutput> {
    let cfg = &params.config;
    if x0.nrows() != hg.num_nodes() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            x0.nrows(),
            hg.num_nodes()
        )));
    }
    if x0.ncols() != cfg.input_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.input_dim,
            actual: x0.ncols(),
        });
    }
    check_finite(&x0.to_owned(), "node features")?;
    let incident = node_sets(hg);
    let mut node_states = vec![x0.to_owned()];
    let mut edge_states: Vec<Array2<f64>> = Vec::with_capacity(cfg.layers);
    let mut n2e_caches = Vec::with_capacity(cfg.layers);
    let mut e2n_caches = Vec::with_capacity(cfg.layers);

    for (l, layer) in params.layers.iter().enumerate() {
        let (mut ze, c1) = pool_sets(node_states[l].view(), hg.edges(), &layer.node_to_edge)?;
        if cfg.residual && l > 0 {
            ze += &edge_states[l - 1];
        }
        check_finite(&ze, "edge embeddings")?;
        let (mut zv, c2) = pool_sets(ze.view(), &incident, &layer.edge_to_node)?;
        if cfg.residual && l > 0 {
            zv += &node_states[l];
        }
        check_finite(&zv, "node embeddings")?;
        for c in [&c1, &c2] {
            if let Some(s) = weight_sums(c).find(|s| (s - 1.0).abs() > 1e-6) {
                return Err(Error::NonFinite(format!("attention weights summing to {s}")));
            }
        }
        edge_states.push(ze);
        node_states.push(zv);
        n2e_caches.push(c1);
        e2n_caches.push(c2);
    }

    let z = edge_states.last().expect("at least one layer");
    let h = &params.head;
    let hidden_pre = z.dot(&h.w1) + &h.b1;
    let hidden = hidden_pre.mapv(|v| v.max(0.0));
    let logits = hidden.dot(&h.w2) + &h.b2;
    check_finite(&logits, "logits")?;
    let probabilities = logits.mapv(sigmoid);

    Ok(ForwardOutput {
        edge_embeddings: z.clone(),
        node_embeddings: node_states.last().unwrap().clone(),
        probabilities: probabilities.clone(),
        cache: ForwardCache {
            node_states,
            edge_states,
            node_to_edge: n2e_caches,
            edge_to_node: e2n_caches,
            hidden_pre,
            hidden,
            logits,
            probabilities,
        },
    })
}

fn check_mask(mask: &[usize], rows: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("loss mask is empty".into()));
    }
    if let Some(&e) = mask.iter().find(|&&e| e >= rows) {
        return Err(Error::InvalidArgument(format!("mask edge {e} out of range")));
    }
    Ok(())
}

/// Mean binary cross-entropy over the masked edges and all tasks.
pub fn bce_loss(probabilities: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>, mask: &[usize]) -> Result<f64> {
    if probabilities.dim() != labels.dim() {
        return Err(Error::Shape("probabilities and labels differ in shape".into()));
    }
    check_mask(mask, probabilities.nrows())?;
    let mut total = 0.0;
    for &e in mask {
        for (p, y) in probabilities.row(e).iter().zip(labels.row(e)) {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
    }
    Ok(total / (mask.len() * probabilities.ncols()) as f64)
}

/// Exact gradients of [`bce_loss`] on `mask` with respect to every parameter.
pub fn backward(
    hg: &Hypergraph,
    cache: &ForwardCache,
    labels: ArrayView2<'_, f64>,
    mask: &[usize],
    params: &ModelParams,
) -> Result<ModelParams> {
    let cfg = &params.config;
    let probs = &cache.probabilities;
    if labels.dim() != probs.dim() || cache.edge_states.len() != cfg.layers || probs.nrows() != hg.num_edges() {
        return Err(Error::Shape("cache does not match labels, graph or parameters".into()));
    }
    check_mask(mask, probs.nrows())?;

    let count = (mask.len() * probs.ncols()) as f64;
    let mut d_logits = Array2::<f64>::zeros(probs.raw_dim());
    for &e in mask {
        for t in 0..probs.ncols() {
            let p = probs[(e, t)];
            // The clamp is flat outside its range, so saturated cells carry no gradient.
            if (CLAMP..=1.0 - CLAMP).contains(&p) {
                d_logits[(e, t)] += (p - labels[(e, t)]) / count;
            }
        }
    }

    let h = &params.head;
    let d_w2 = standard(cache.hidden.t().dot(&d_logits));
    let d_b2 = sum_rows(&d_logits);
    let mut d_pre = d_logits.dot(&h.w2.t());
    d_pre.zip_mut_with(&cache.hidden_pre, |g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    let top = cache.edge_states.last().unwrap();
    let d_w1 = standard(top.t().dot(&d_pre));
    let d_b1 = sum_rows(&d_pre);

    let mut grads = params.zeros_like();
    grads.head = PredictionHead {
        w1: d_w1,
        b1: d_b1,
        w2: d_w2,
        b2: d_b2,
    };

    let incident = node_sets(hg);
    let layers = cfg.layers;
    let mut d_edges: Vec<Array2<f64>> = cache.edge_states.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
    let mut d_nodes: Vec<Array2<f64>> = cache.node_states.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
    d_edges[layers - 1] = d_pre.dot(&h.w1.t());

    for l in (0..layers).rev() {
        let layer = &params.layers[l];
        let (g_e2n, d_from_nodes) = pool_sets_backward(
            cache.edge_states[l].view(),
            &incident,
            &layer.edge_to_node,
            &cache.edge_to_node[l],
            d_nodes[l + 1].view(),
        );
        d_edges[l] += &d_from_nodes;
        if cfg.residual && l > 0 {
            let up = d_nodes[l + 1].clone();
            d_nodes[l] += &up;
            let up = d_edges[l].clone();
            d_edges[l - 1] += &up;
        }
        let (g_n2e, d_from_edges) = pool_sets_backward(
            cache.node_states[l].view(),
            hg.edges(),
            &layer.node_to_edge,
            &cache.node_to_edge[l],
            d_edges[l].view(),
        );
        d_nodes[l] += &d_from_edges;
        grads.layers[l].edge_to_node = g_e2n;
        grads.layers[l].node_to_edge = g_n2e;
    }
    for (name, t, _) in grads.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(grads)
}
