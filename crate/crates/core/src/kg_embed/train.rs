use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingKind, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kg_store::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::model::adam::{adam_step, AdamConfig, AdamState};
use crate::util;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: EmbeddingKind,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            epochs: 100,
            learning_rate: 1e-2,
            negatives_per_positive: 5,
            batch_size: 256,
            seed: 0,
            model: EmbeddingKind::Complex,
        }
    }
}

impl EmbedTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.negatives_per_positive == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "embedding dim, epochs, negatives and batch size must be positive".into(),
            ));
        }
        if self.learning_rate.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        match self.model {
            EmbeddingKind::Complex if !self.dim.is_multiple_of(2) => Err(Error::InvalidArgument(
                "ComplEx needs an even embedding dim".into(),
            )),
            EmbeddingKind::External => Err(Error::InvalidArgument(
                "external embeddings cannot be trained".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn check_dims(h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
    for other in [r.len(), t.len()] {
        if other != h.len() {
            return Err(Error::DimensionMismatch {
                expected: h.len(),
                actual: other,
            });
        }
    }
    Ok(())
}

/// Re(Σ h_k r_k conj(t_k)) for vectors laid out as `[re..., im...]`.
pub fn complex_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    check_dims(h, r, t)?;
    if !h.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument("complex vectors need an even length".into()));
    }
    Ok(complex_raw(h, r, t))
}

fn complex_raw(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let k = h.len() / 2;
    let (hr, hi) = h.split_at(k);
    let (rr, ri) = r.split_at(k);
    let (tr, ti) = t.split_at(k);
    let mut s = 0.0;
    for j in 0..k {
        s += hr[j] * rr[j] * tr[j] + hi[j] * rr[j] * ti[j] + hr[j] * ri[j] * ti[j]
            - hi[j] * ri[j] * tr[j];
    }
    s
}

/// Accumulates `scale * ∂score/∂(h, r, t)` into the gradient rows.
fn complex_grad(h: &[f64], r: &[f64], t: &[f64], scale: f64, gh: &mut [f64], gr: &mut [f64], gt: &mut [f64]) {
    let k = h.len() / 2;
    for j in 0..k {
        let (a, b) = (h[j], h[j + k]);
        let (c, d) = (r[j], r[j + k]);
        let (e, f) = (t[j], t[j + k]);
        gh[j] += scale * (c * e + d * f);
        gh[j + k] += scale * (c * f - d * e);
        gr[j] += scale * (a * e + b * f);
        gr[j + k] += scale * (a * f - b * e);
        gt[j] += scale * (a * c - b * d);
        gt[j + k] += scale * (b * c + a * d);
    }
}

/// −‖h + r − t‖₂.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(transe_raw(h, r, t))
}

fn transe_raw(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..h.len() {
        let u = h[j] + r[j] - t[j];
        s += u * u;
    }
    -s.sqrt()
}

fn transe_grad(h: &[f64], r: &[f64], t: &[f64], scale: f64, gh: &mut [f64], gr: &mut [f64], gt: &mut [f64]) {
    let norm = -transe_raw(h, r, t);
    if norm == 0.0 {
        return;
    }
    for j in 0..h.len() {
        let u = (h[j] + r[j] - t[j]) / norm;
        gh[j] -= scale * u;
        gr[j] -= scale * u;
        gt[j] += scale * u;
    }
}

/// Scores a triple by ids; `table` must have been trained on the graph those ids come from.
pub fn score_triple(table: &EmbeddingTable, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
    let h = table.entities.row(head.index());
    let r = table.relations.row(relation.index());
    let t = table.entities.row(tail.index());
    let (h, r, t) = (
        h.as_slice().expect("row-major"),
        r.as_slice().expect("row-major"),
        t.as_slice().expect("row-major"),
    );
    match table.kind {
        EmbeddingKind::Translational => transe_raw(h, r, t),
        _ => complex_raw(h, r, t),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trains entity and relation vectors with logistic loss over observed and
/// uniformly corrupted triples, optimized by Adam.
///
/// Rows of the returned table follow the graph's entity and relation ids.
pub fn train_embeddings(kg: &KnowledgeGraph, cfg: &EmbedTrainConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if kg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let dim = cfg.dim;
    let n_ent = kg.num_entities();
    let n_rel = kg.num_relations();
    let ent_len = n_ent * dim;

    let mut rng = util::rng(util::derive_seed(cfg.seed, "kg-embed"));
    let scale = 1.0 / (dim as f64).sqrt();
    let mut params: Vec<f64> = (0..(n_ent + n_rel) * dim)
        .map(|_| rng.random_range(-1.0..1.0) * scale)
        .collect();
    let mut grads = vec![0.0; params.len()];
    let mut state = AdamState::new(params.len());
    let adam = AdamConfig::new(cfg.learning_rate);

    let kind = cfg.model;
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut samples = Vec::with_capacity(batch.len() * (1 + cfg.negatives_per_positive));
            for &i in batch {
                let t = kg.triples()[i];
                samples.push((t, 1.0));
                for _ in 0..cfg.negatives_per_positive {
                    samples.push((corrupt(t, n_ent, &mut rng), -1.0));
                }
            }
            let norm = 1.0 / samples.len() as f64;
            for (t, y) in samples {
                let hi = t.head.index() * dim;
                let ti = t.tail.index() * dim;
                let ri = ent_len + t.relation.index() * dim;
                let h = &params[hi..hi + dim];
                let r = &params[ri..ri + dim];
                let tl = &params[ti..ti + dim];
                let s = match kind {
                    EmbeddingKind::Translational => transe_raw(h, r, tl),
                    _ => complex_raw(h, r, tl),
                };
                epoch_loss += softplus(-y * s) * norm;
                // d/ds softplus(-y s) = -y sigmoid(-y s)
                let coef = -y * sigmoid(-y * s) * norm;
                let mut gh = vec![0.0; dim];
                let mut gr = vec![0.0; dim];
                let mut gt = vec![0.0; dim];
                match kind {
                    EmbeddingKind::Translational => transe_grad(h, r, tl, coef, &mut gh, &mut gr, &mut gt),
                    _ => complex_grad(h, r, tl, coef, &mut gh, &mut gr, &mut gt),
                }
                for j in 0..dim {
                    grads[hi + j] += gh[j];
                    grads[ri + j] += gr[j];
                    grads[ti + j] += gt[j];
                }
            }
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
        log::debug!("kg-embed epoch {epoch}: summed batch loss {epoch_loss:.6}");
    }

    let relations = params.split_off(ent_len);
    let entities = Array2::from_shape_vec((n_ent, dim), params).map_err(|e| Error::Shape(e.to_string()))?;
    let relations = Array2::from_shape_vec((n_rel, dim), relations).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingTable::new(
        kind,
        kg.entity_names().to_vec(),
        entities,
        kg.relation_names().to_vec(),
        relations,
    )
}

fn corrupt(t: Triple, n_ent: usize, rng: &mut impl Rng) -> Triple {
    let replace_head = rng.random_bool(0.5);
    let original = if replace_head { t.head } else { t.tail };
    let mut e = EntityId(rng.random_range(0..n_ent as u32));
    if n_ent > 1 {
        while e == original {
            e = EntityId(rng.random_range(0..n_ent as u32));
        }
    }
    if replace_head {
        Triple { head: e, ..t }
    } else {
        Triple { tail: e, ..t }
    }
}

/// Filtered mean reciprocal rank of `test` triples under tail replacement.
///
/// Every entity of the table is a candidate tail; candidates forming a triple
/// in `known` (other than the test triple itself) are skipped. Ties with the
/// true tail do not push it down.
pub fn filtered_mrr(table: &EmbeddingTable, known: &HashSet<Triple>, test: &[Triple]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("no test triples".into()));
    }
    let n_ent = table.entities.nrows();
    let mut total = 0.0;
    for t in test {
        let true_score = score_triple(table, t.head, t.relation, t.tail);
        let mut rank = 1usize;
        for c in 0..n_ent as u32 {
            let cand = EntityId(c);
            if cand == t.tail {
                continue;
            }
            let corrupted = Triple { tail: cand, ..*t };
            if known.contains(&corrupted) {
                continue;
            }
            if score_triple(table, t.head, t.relation, cand) > true_score {
                rank += 1;
            }
        }
        total += 1.0 / rank as f64;
    }
    Ok(total / test.len() as f64)
}
