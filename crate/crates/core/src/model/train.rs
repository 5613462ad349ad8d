use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::forward::{backward, bce_loss, forward};
use super::params::ModelParams;
use crate::ehr_ingest::Split;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::metrics::{evaluate, MetricsReport};
use crate::util;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Recorded in checkpoints; training itself is full-batch and draws nothing.
    pub seed: u64,
    pub eval_every: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            epochs: 1000,
            seed: 0,
            eval_every: 1,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::InvalidArgument("epochs and eval_every must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: Option<f64>,
}

pub fn write_history(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut w = util::create_writer(path)?;
    let mut out = String::from("epoch,train_loss,val_auroc\n");
    for r in history {
        let val = r.val_auroc.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, val));
    }
    w.write_all(out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parameters and outputs of the selected epoch.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub best_params: ModelParams,
    /// Epoch whose parameters were selected (0 when validation never produced a score).
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
    pub history: Vec<HistoryRow>,
    pub edge_embeddings: Array2<f64>,
    pub node_embeddings: Array2<f64>,
    pub probabilities: Array2<f64>,
    pub test_metrics: MetricsReport,
}

fn check_split(split: &Split, edges: usize) -> Result<()> {
    let mut seen = vec![false; edges];
    for &e in split.train.iter().chain(&split.val).chain(&split.test) {
        if e >= edges {
            return Err(Error::InvalidArgument(format!("split row {e} out of range")));
        }
        if std::mem::replace(&mut seen[e], true) {
            return Err(Error::InvalidArgument(format!("row {e} appears in two folds")));
        }
    }
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument("train and test folds must be non-empty".into()));
    }
    Ok(())
}

/// Full-graph training with the loss restricted to the training edges.
///
/// Each epoch runs one forward pass on the current parameters. Every
/// `eval_every` epochs that same pass is scored on the validation edges;
/// the parameters with the highest validation macro-AUROC so far are kept
/// and test metrics are reported from their forward pass.
pub fn train(
    hg: &Hypergraph,
    x0: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, f64>,
    split: &Split,
    params_init: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_split(split, hg.num_edges())?;
    if labels.nrows() != hg.num_edges() || labels.ncols() != params_init.config.tasks {
        return Err(Error::Shape(format!(
            "labels are {}x{}, expected {}x{}",
            labels.nrows(),
            labels.ncols(),
            hg.num_edges(),
            params_init.config.tasks
        )));
    }
    let adam = AdamConfig::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut params = params_init;
    let mut flat = params.flatten();
    let mut state = AdamState::new(flat.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    struct Best {
        epoch: usize,
        auroc: f64,
        params: ModelParams,
        edges: Array2<f64>,
        nodes: Array2<f64>,
        probs: Array2<f64>,
    }
    let mut best: Option<Best> = None;

    for epoch in 1..=cfg.epochs {
        let out = forward(hg, x0, &params)?;
        let loss = bce_loss(out.probabilities.view(), labels, &split.train)?;
        let mut val_auroc = None;
        if !split.val.is_empty() && (epoch - 1) % cfg.eval_every == 0 {
            val_auroc = evaluate(out.probabilities.view(), labels, &split.val, cfg.threshold)
                .ok()
                .map(|r| r.auroc);
        }
        if let Some(auc) = val_auroc {
            if best.as_ref().is_none_or(|b| auc > b.auroc) {
                best = Some(Best {
                    epoch,
                    auroc: auc,
                    params: params.clone(),
                    edges: out.edge_embeddings.clone(),
                    nodes: out.node_embeddings.clone(),
                    probs: out.probabilities.clone(),
                });
            }
        }
        history.push(HistoryRow {
            epoch,
            train_loss: loss,
            val_auroc,
        });
        log::debug!("epoch {epoch}: loss {loss:.6} val auroc {val_auroc:?}");

        let grads = backward(hg, &out.cache, labels, &split.train, &params)?;
        adam_step(&mut flat, &grads.flatten(), &mut state, &adam)?;
        params.unflatten(&flat)?;
    }

    let best = match best {
        Some(b) => b,
        None => {
            log::warn!("no validation score was available; keeping the final parameters");
            let out = forward(hg, x0, &params)?;
            Best {
                epoch: 0,
                auroc: f64::NAN,
                params,
                edges: out.edge_embeddings,
                nodes: out.node_embeddings,
                probs: out.probabilities,
            }
        }
    };
    let test_metrics = evaluate(best.probs.view(), labels, &split.test, cfg.threshold)?;
    Ok(TrainOutput {
        best_val_auroc: (best.epoch > 0).then_some(best.auroc),
        best_epoch: best.epoch,
        best_params: best.params,
        history,
        edge_embeddings: best.edges,
        node_embeddings: best.nodes,
        probabilities: best.probs,
        test_metrics,
    })
}
