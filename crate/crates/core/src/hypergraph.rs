//! Context hypergraph: one node per linked attribute, one hyperedge per visit.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ehr_ingest::EhrDataset;
use crate::error::{Error, Result};
use crate::kg_embed::EmbeddingTable;
use crate::linker::LinkTable;
use crate::util;

/// Bidirectional incidence between attribute nodes and visit hyperedges.
///
/// Edge member lists and node incidence lists are sorted ascending, which
/// fixes the summation order of every pooling step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hypergraph {
    node_names: Vec<String>,
    node_index: HashMap<String, usize>,
    edge_ids: Vec<String>,
    edges: Vec<Vec<usize>>,
    node_to_edges: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    edge_id: String,
    nodes: Vec<String>,
}

impl Hypergraph {
    /// Builds a hypergraph from explicit edges over `node_names`.
    ///
    /// Member lists are deduplicated; empty edges are rejected. Nodes that
    /// belong to no edge are dropped with a warning.
    pub fn from_edges(node_names: Vec<String>, edge_ids: Vec<String>, edges: Vec<Vec<usize>>) -> Result<Self> {
        if edge_ids.len() != edges.len() {
            return Err(Error::Shape(format!("{} edge ids for {} edges", edge_ids.len(), edges.len())));
        }
        let mut used = vec![false; node_names.len()];
        for (e, members) in edges.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidArgument(format!("edge `{}` is empty", edge_ids[e])));
            }
            for &v in members {
                if v >= node_names.len() {
                    return Err(Error::InvalidArgument(format!(
                        "edge `{}` references node {v} of {}",
                        edge_ids[e],
                        node_names.len()
                    )));
                }
                used[v] = true;
            }
        }
        let dropped = used.iter().filter(|u| !**u).count();
        if dropped > 0 {
            log::warn!("dropping {dropped} isolated hypergraph node(s)");
        }
        let mut remap = vec![usize::MAX; node_names.len()];
        let mut names = Vec::with_capacity(node_names.len() - dropped);
        for (i, name) in node_names.into_iter().enumerate() {
            if used[i] {
                remap[i] = names.len();
                names.push(name);
            }
        }
        let edges: Vec<Vec<usize>> = edges
            .into_iter()
            .map(|m| {
                let mut m: Vec<usize> = m.into_iter().map(|v| remap[v]).collect();
                m.sort_unstable();
                m.dedup();
                m
            })
            .collect();
        let mut node_to_edges = vec![Vec::new(); names.len()];
        for (e, members) in edges.iter().enumerate() {
            for &v in members {
                node_to_edges[v].push(e);
            }
        }
        let node_index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            node_names: names,
            node_index,
            edge_ids,
            edges,
            node_to_edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_names.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    pub fn edge_ids(&self) -> &[String] {
        &self.edge_ids
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &[usize] {
        &self.edges[e]
    }

    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.node_to_edges[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.node_to_edges[v].len()
    }

    pub fn incidence_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// One JSON object `{edge_id, nodes}` per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = util::create_writer(path)?;
        for (id, members) in self.edge_ids.iter().zip(&self.edges) {
            let line = EdgeLine {
                edge_id: id.clone(),
                nodes: members.iter().map(|&v| self.node_names[v].clone()).collect(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut ids = Vec::new();
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EdgeLine =
                serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            let members = parsed
                .nodes
                .into_iter()
                .map(|n| {
                    *index.entry(n.clone()).or_insert_with(|| {
                        names.push(n);
                        names.len() - 1
                    })
                })
                .collect();
            ids.push(parsed.edge_id);
            edges.push(members);
        }
        Self::from_edges(names, ids, edges)
    }
}

/// One hyperedge per visit over the nodes of its distinct linked attributes.
///
/// Nodes are numbered in first-appearance order across visits.
pub fn build_hypergraph(ds: &EhrDataset, links: &LinkTable) -> Result<Hypergraph> {
    if let Some(missing) = ds.attribute_vocab().iter().find(|a| links.get(a).is_none()) {
        return Err(Error::Unlinked(missing.clone()));
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut edges = Vec::with_capacity(ds.len());
    let mut ids = Vec::with_capacity(ds.len());
    for v in ds.visits() {
        let members = v
            .attributes()
            .into_iter()
            .map(|a| {
                *index.entry(a).or_insert_with(|| {
                    names.push(a.to_owned());
                    names.len() - 1
                })
            })
            .collect();
        edges.push(members);
        ids.push(v.visit_id.clone());
    }
    Hypergraph::from_edges(names, ids, edges)
}

/// Initial node features `Z_v^0`, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    pub matrix: Array2<f64>,
}

impl NodeFeatures {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Copies each node's linked entity vector.
pub fn init_node_features(hg: &Hypergraph, table: &EmbeddingTable, links: &LinkTable) -> Result<NodeFeatures> {
    let mut m = Array2::zeros((hg.num_nodes(), table.dim()));
    for (v, attr) in hg.node_names().iter().enumerate() {
        let entity = links.entity_of(attr).ok_or_else(|| Error::Unlinked(attr.clone()))?;
        let row = table
            .entity(entity)
            .ok_or_else(|| Error::MissingVector(entity.to_owned()))?;
        m.row_mut(v).assign(&row);
    }
    Ok(NodeFeatures { matrix: m })
}

/// Seeded Gaussian features with standard deviation `1/√dim`, carrying no KG information.
pub fn random_node_features(hg: &Hypergraph, dim: usize, seed: u64) -> NodeFeatures {
    let mut rng = util::rng(util::derive_seed(seed, "random-node-features"));
    let scale = 1.0 / (dim as f64).sqrt();
    let matrix = Array2::from_shape_simple_fn((hg.num_nodes(), dim), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    });
    NodeFeatures { matrix }
}

/// Globally permutes node memberships across edges.
///
/// Every incidence slot receives a node drawn without replacement from the
/// pool of all slots, so edge sizes and node degrees are both preserved.
/// Duplicates created inside an edge are repaired by swapping with slots of
/// other edges.
pub fn shuffle_hyperedges(hg: &Hypergraph, seed: u64) -> Hypergraph {
    let mut rng = util::rng(util::derive_seed(seed, "shuffle-hyperedges"));
    let mut slots: Vec<usize> = hg.edges.iter().flatten().copied().collect();
    slots.shuffle(&mut rng);
    let mut edges: Vec<Vec<usize>> = Vec::with_capacity(hg.num_edges());
    let mut offset = 0;
    for e in &hg.edges {
        edges.push(slots[offset..offset + e.len()].to_vec());
        offset += e.len();
    }

    let total = slots.len();
    let mut counts: Vec<HashMap<usize, usize>> = edges
        .iter()
        .map(|m| {
            let mut c = HashMap::new();
            for &v in m {
                *c.entry(v).or_insert(0) += 1;
            }
            c
        })
        .collect();
    let mut dup_slots: Vec<(usize, usize)> = Vec::new();
    for (e, members) in edges.iter().enumerate() {
        let mut seen = HashSet::new();
        for (p, &v) in members.iter().enumerate() {
            if !seen.insert(v) {
                dup_slots.push((e, p));
            }
        }
    }
    let starts: Vec<usize> = edges
        .iter()
        .scan(0, |acc, m| {
            let s = *acc;
            *acc += m.len();
            Some(s)
        })
        .collect();
    let locate = |flat: usize| {
        let e = starts.partition_point(|&s| s <= flat) - 1;
        (e, flat - starts[e])
    };
    let mut unresolved = 0usize;
    for (e, p) in dup_slots {
        let u = edges[e][p];
        if counts[e][&u] <= 1 {
            continue;
        }
        let mut fixed = false;
        for _ in 0..(100 * total.max(1)) {
            let (e2, p2) = locate(rng.random_range(0..total));
            if e2 == e {
                continue;
            }
            let w = edges[e2][p2];
            if counts[e].get(&w).copied().unwrap_or(0) > 0 || counts[e2].get(&u).copied().unwrap_or(0) > 0 {
                continue;
            }
            edges[e][p] = w;
            edges[e2][p2] = u;
            *counts[e].get_mut(&u).unwrap() -= 1;
            *counts[e].entry(w).or_insert(0) += 1;
            *counts[e2].get_mut(&w).unwrap() -= 1;
            *counts[e2].entry(u).or_insert(0) += 1;
            fixed = true;
            break;
        }
        if !fixed {
            unresolved += 1;
        }
    }
    if unresolved > 0 {
        log::warn!("{unresolved} duplicate membership(s) could not be repaired; edge sizes shrink");
    }
    Hypergraph::from_edges(hg.node_names.clone(), hg.edge_ids.clone(), edges)
        .expect("shuffled edges reference valid nodes and are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr_ingest::{MedicalRecord, PatientVisit};
    use crate::linker::{Link, LinkStage};
    use ndarray::array;
    use proptest::prelude::*;

    fn dataset(visits: &[&[&str]]) -> EhrDataset {
        EhrDataset::new(
            visits
                .iter()
                .enumerate()
                .map(|(i, attrs)| PatientVisit {
                    visit_id: format!("v{i}"),
                    patient_id: None,
                    records: attrs
                        .iter()
                        .enumerate()
                        .map(|(k, a)| MedicalRecord {
                            t: k as f64,
                            a: a.to_string(),
                            lt: None,
                        })
                        .collect(),
                    labels: vec![0],
                })
                .collect(),
        )
        .unwrap()
    }

    fn identity_links(names: &[&str]) -> LinkTable {
        LinkTable::from_links(
            names
                .iter()
                .enumerate()
                .map(|(i, n)| Link {
                    attribute: n.to_string(),
                    entity: i,
                    entity_name: format!("E:{n}"),
                    similarity: 1.0,
                    stage: LinkStage::ExactMatch,
                })
                .collect(),
        )
        .unwrap()
    }

    fn assert_symmetric(hg: &Hypergraph) {
        for (e, members) in hg.edges().iter().enumerate() {
            for &v in members {
                assert!(hg.incident_edges(v).contains(&e));
            }
        }
        for v in 0..hg.num_nodes() {
            assert!(hg.degree(v) >= 1);
            for &e in hg.incident_edges(v) {
                assert!(hg.edge(e).contains(&v));
            }
        }
        let deg_sum: usize = (0..hg.num_nodes()).map(|v| hg.degree(v)).sum();
        assert_eq!(deg_sum, hg.incidence_count());
    }

    #[test]
    fn two_visits_three_nodes() {
        let hg = build_hypergraph(&dataset(&[&["a", "b"], &["b", "c"]]), &identity_links(&["a", "b", "c"])).unwrap();
        assert_eq!((hg.num_nodes(), hg.num_edges()), (3, 2));
        let deg = |n: &str| hg.degree(hg.node(n).unwrap());
        assert_eq!((deg("a"), deg("b"), deg("c")), (1, 2, 1));
        assert_symmetric(&hg);
    }

    #[test]
    fn repeated_attribute_collapses() {
        let hg = build_hypergraph(&dataset(&[&["a", "a", "b"]]), &identity_links(&["a", "b"])).unwrap();
        assert_eq!(hg.edge(0).len(), 2);
    }

    #[test]
    fn unlinked_attribute_is_named() {
        let err = build_hypergraph(&dataset(&[&["a", "zz"]]), &identity_links(&["a"])).unwrap_err();
        assert!(matches!(err, Error::Unlinked(ref a) if a == "zz"));
    }

    #[test]
    fn isolated_nodes_are_dropped() {
        let hg = Hypergraph::from_edges(
            vec!["a".into(), "lonely".into(), "b".into()],
            vec!["e0".into()],
            vec![vec![2, 0]],
        )
        .unwrap();
        assert_eq!(hg.node_names(), &["a", "b"]);
        assert_eq!(hg.edge(0), &[0, 1]);
    }

    #[test]
    fn empty_edge_is_rejected() {
        assert!(Hypergraph::from_edges(vec!["a".into()], vec!["e".into()], vec![vec![]]).is_err());
    }

    #[test]
    fn node_features_copy_linked_vectors() {
        let hg = build_hypergraph(&dataset(&[&["a", "b"]]), &identity_links(&["a", "b"])).unwrap();
        let table = EmbeddingTable::external(
            vec!["E:b".into(), "E:a".into()],
            array![[0.0, 2.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let x = init_node_features(&hg, &table, &identity_links(&["a", "b"])).unwrap();
        assert_eq!(x.matrix.row(hg.node("a").unwrap()).to_vec(), [1.0, 0.0, 0.0]);
        assert_eq!(x.matrix.row(hg.node("b").unwrap()).to_vec(), [0.0, 2.0, 0.0]);
    }

    #[test]
    fn missing_vector_is_reported() {
        let hg = build_hypergraph(&dataset(&[&["a"]]), &identity_links(&["a"])).unwrap();
        let table = EmbeddingTable::external(vec!["other".into()], array![[1.0]]).unwrap();
        assert!(matches!(
            init_node_features(&hg, &table, &identity_links(&["a"])),
            Err(Error::MissingVector(_))
        ));
    }

    #[test]
    fn random_features_are_seeded() {
        let hg = build_hypergraph(&dataset(&[&["a", "b"]]), &identity_links(&["a", "b"])).unwrap();
        let a = random_node_features(&hg, 16, 4);
        assert_eq!(a, random_node_features(&hg, 16, 4));
        assert_ne!(a, random_node_features(&hg, 16, 5));
        assert_eq!(a.matrix.dim(), (2, 16));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hg.jsonl");
        let hg = build_hypergraph(&dataset(&[&["a", "b"], &["c", "b"]]), &identity_links(&["a", "b", "c"])).unwrap();
        hg.write_jsonl(&p).unwrap();
        let back = Hypergraph::read_jsonl(&p).unwrap();
        assert_eq!(back, hg);
    }

    fn arb_edges() -> impl Strategy<Value = (usize, Vec<Vec<usize>>)> {
        (3usize..15).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(prop::collection::vec(0..n, 1..n.min(6)), 1..30),
            )
        })
    }

    proptest! {
        #[test]
        fn shuffle_preserves_sizes_and_symmetry((n, edges) in arb_edges(), seed in 0u64..1000) {
            let names = (0..n).map(|i| format!("n{i}")).collect();
            let ids = (0..edges.len()).map(|i| format!("e{i}")).collect();
            let hg = Hypergraph::from_edges(names, ids, edges).unwrap();
            let sh = shuffle_hyperedges(&hg, seed);
            assert_symmetric(&sh);
            let mut before: Vec<usize> = hg.edges().iter().map(Vec::len).collect();
            let mut after: Vec<usize> = sh.edges().iter().map(Vec::len).collect();
            prop_assert_eq!(hg.incidence_count(), sh.incidence_count());
            before.sort_unstable();
            after.sort_unstable();
            prop_assert_eq!(before, after);
            prop_assert_eq!(sh.clone(), shuffle_hyperedges(&hg, seed));
        }
    }
}
