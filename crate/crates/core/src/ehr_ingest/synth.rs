use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EhrDataset, MedicalRecord, PatientVisit};
use crate::error::{Error, Result};
use crate::kg_store::KnowledgeGraph;
use crate::linker::{Link, LinkStage, LinkTable};
use crate::util;

/// Parameters of the clustered synthetic cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub attrs_per_cluster: usize,
    pub n_visits: usize,
    pub noise_rate: f64,
    pub seed: u64,
    pub min_visit_size: usize,
    pub max_visit_size: usize,
    /// Non-attribute entities per cluster, reachable one hop from its attributes.
    pub extra_entities_per_cluster: usize,
    /// Each attribute links to this many successors on its cluster's ring.
    pub kg_neighbors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            attrs_per_cluster: 200,
            n_visits: 400,
            noise_rate: 0.1,
            seed: 0,
            min_visit_size: 2,
            max_visit_size: 4,
            extra_entities_per_cluster: 2,
            kg_neighbors: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub kg: KnowledgeGraph,
    pub dataset: EhrDataset,
    /// Attribute → entity links known by construction (names are identical).
    pub truth: LinkTable,
}

pub fn attribute_name(cluster: usize, index: usize) -> String {
    format!("cluster {cluster} finding {index}")
}

/// Builds a KG of densely intra-connected clusters and visits that draw their
/// attributes mostly from a single cluster, labelled one-hot by that cluster.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.n_clusters == 0 || cfg.n_visits == 0 || cfg.min_visit_size == 0 {
        return Err(Error::InvalidArgument("synthetic counts must be positive".into()));
    }
    if cfg.attrs_per_cluster < 2 {
        return Err(Error::InvalidArgument("attrs_per_cluster must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&cfg.noise_rate) {
        return Err(Error::InvalidArgument("noise_rate must lie in [0, 1)".into()));
    }
    if cfg.max_visit_size < cfg.min_visit_size {
        return Err(Error::InvalidArgument("max_visit_size < min_visit_size".into()));
    }
    let mut rng = util::rng(util::derive_seed(cfg.seed, "synthetic"));

    let mut kg = KnowledgeGraph::new();
    for c in 0..cfg.n_clusters {
        let n = cfg.attrs_per_cluster;
        for i in 0..n {
            for step in 1..=cfg.kg_neighbors.min(n / 2) {
                let j = (i + step) % n;
                let rel = if step % 2 == 0 { "associated with" } else { "co treated with" };
                kg.insert(&attribute_name(c, i), rel, &attribute_name(c, j));
            }
        }
        for g in 0..cfg.extra_entities_per_cluster {
            let extra = format!("cluster {c} gene {g}");
            for i in 0..cfg.attrs_per_cluster {
                kg.insert(&extra, "expressed in", &attribute_name(c, i));
            }
        }
    }

    // Exactly balanced classes, in shuffled order.
    let mut clusters: Vec<usize> = (0..cfg.n_visits).map(|i| i % cfg.n_clusters).collect();
    clusters.shuffle(&mut rng);

    let max_size = cfg.max_visit_size.min(cfg.attrs_per_cluster);
    let min_size = cfg.min_visit_size.min(max_size);
    let mut visits = Vec::with_capacity(cfg.n_visits);
    for (vi, &c) in clusters.iter().enumerate() {
        let size = rng.random_range(min_size..=max_size);
        let mut chosen: Vec<(usize, usize)> = Vec::with_capacity(size);
        let mut seen = HashSet::new();
        while chosen.len() < size {
            let from = if cfg.n_clusters > 1 && rng.random_bool(cfg.noise_rate) {
                let other = rng.random_range(0..cfg.n_clusters - 1);
                if other >= c {
                    other + 1
                } else {
                    other
                }
            } else {
                c
            };
            let a = rng.random_range(0..cfg.attrs_per_cluster);
            if seen.insert((from, a)) {
                chosen.push((from, a));
            }
        }
        let mut t = 0.0;
        let records = chosen
            .into_iter()
            .enumerate()
            .map(|(k, (from, a))| {
                t += rng.random_range(0.0..3600.0f64).floor();
                MedicalRecord {
                    t,
                    a: attribute_name(from, a),
                    lt: (k % 3 == 2).then(|| format!("{:.1}", rng.random_range(0.0..10.0f64))),
                }
            })
            .collect();
        let mut labels = vec![0u8; cfg.n_clusters];
        labels[c] = 1;
        visits.push(PatientVisit {
            visit_id: format!("v{vi:05}"),
            patient_id: None,
            records,
            labels,
        });
    }
    let dataset = EhrDataset::new(visits)?;

    let truth = dataset
        .attribute_vocab()
        .iter()
        .map(|a| {
            let id = kg.entity_id(a).expect("attribute entities exist by construction");
            Link {
                attribute: a.clone(),
                entity: id.index(),
                entity_name: a.clone(),
                similarity: 1.0,
                stage: LinkStage::ExactMatch,
            }
        })
        .collect();
    Ok(SyntheticData {
        kg,
        dataset,
        truth: LinkTable::from_links(truth)?,
    })
}
