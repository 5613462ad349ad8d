//! Knowledge-graph storage: interned entity/relation ids, deduplicated triples
//! and a per-entity degree index.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// Which entities survive the restriction step of [`subsample_kg`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    /// Only triples whose endpoints are both anchors.
    LinkedOnly,
    /// Anchors plus every entity one hop away from an anchor.
    #[default]
    OneHop,
}

/// A multi-relational graph with dense ids assigned in first-appearance order.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    degree: Vec<usize>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from string triples, dropping duplicates.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = Self::new();
        for (h, r, t) in triples {
            kg.insert(h, r, t);
        }
        kg
    }

    /// Interns an entity without attaching any triple to it.
    pub fn add_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = EntityId(self.entity_names.len() as u32);
        self.entity_names.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), id);
        self.degree.push(0);
        id
    }

    fn add_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = RelationId(self.relation_names.len() as u32);
        self.relation_names.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), id);
        id
    }

    /// Inserts a triple; returns `false` if it was already present.
    pub fn insert(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let head = self.add_entity(head);
        let relation = self.add_relation(relation);
        let tail = self.add_entity(tail);
        let triple = Triple {
            head,
            relation,
            tail,
        };
        if !self.triple_set.insert(triple) {
            return false;
        }
        self.triples.push(triple);
        // A self-loop is one triple containing the entity, so it counts once.
        self.degree[head.index()] += 1;
        if tail != head {
            self.degree[tail.index()] += 1;
        }
        true
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.index()]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn degree(&self, id: EntityId) -> usize {
        self.degree[id.index()]
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degree
    }

    fn triple_names(&self, t: &Triple) -> (&str, &str, &str) {
        (
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail),
        )
    }

    /// Writes the triples as a headerless TSV.
    pub fn write_triples(&self, path: &Path) -> Result<()> {
        let mut w = util::create_writer(path)?;
        for t in &self.triples {
            let (h, r, tl) = self.triple_names(t);
            writeln!(w, "{h}\t{r}\t{tl}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Persists the entity string-to-id map as `name<TAB>id`.
    pub fn write_entity_map(&self, path: &Path) -> Result<()> {
        let mut w = util::create_writer(path)?;
        for (i, name) in self.entity_names.iter().enumerate() {
            writeln!(w, "{name}\t{i}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a headerless `head<TAB>relation<TAB>tail` file.
pub fn load_triples(path: &Path) -> Result<KnowledgeGraph> {
    let text = util::read_to_string(path)?;
    parse_triples(&text, path)
}

pub(crate) fn parse_triples(text: &str, path: &Path) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, lineno + 1, "empty field"));
        }
        kg.insert(fields[0], fields[1], fields[2]);
    }
    if kg.is_empty() {
        return Err(Error::EmptyGraph);
    }
    Ok(kg)
}

/// Keeps, for every entity, its `k` incident triples with the highest
/// endpoint-degree sum, after restricting the graph around `anchors`.
///
/// Degrees are computed on the restricted graph. Ties are broken by the
/// lexicographic order of the (head, relation, tail) names. Anchors are kept
/// as entities of the result even when no triple survives for them.
pub fn subsample_kg(
    kg: &KnowledgeGraph,
    anchors: &HashSet<EntityId>,
    k: usize,
    neighborhood: Neighborhood,
) -> Result<KnowledgeGraph> {
    if anchors.is_empty() {
        return Err(Error::InvalidArgument("anchor set is empty".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(bad) = anchors.iter().find(|a| a.index() >= kg.num_entities()) {
        return Err(Error::InvalidArgument(format!(
            "anchor id {} is not in the graph",
            bad.0
        )));
    }

    let mut allowed: HashSet<EntityId> = anchors.clone();
    if neighborhood == Neighborhood::OneHop {
        for t in kg.triples() {
            if anchors.contains(&t.head) {
                allowed.insert(t.tail);
            }
            if anchors.contains(&t.tail) {
                allowed.insert(t.head);
            }
        }
    }

    let restricted: Vec<usize> = kg
        .triples()
        .iter()
        .enumerate()
        .filter(|(_, t)| allowed.contains(&t.head) && allowed.contains(&t.tail))
        .map(|(i, _)| i)
        .collect();

    let mut degree = vec![0usize; kg.num_entities()];
    for &i in &restricted {
        let t = kg.triples()[i];
        degree[t.head.index()] += 1;
        if t.tail != t.head {
            degree[t.tail.index()] += 1;
        }
    }

    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); kg.num_entities()];
    for &i in &restricted {
        let t = kg.triples()[i];
        incident[t.head.index()].push(i);
        if t.tail != t.head {
            incident[t.tail.index()].push(i);
        }
    }

    let score = |i: usize| {
        let t = kg.triples()[i];
        degree[t.head.index()] + degree[t.tail.index()]
    };
    let rank = |a: &usize, b: &usize| -> Ordering {
        score(*b)
            .cmp(&score(*a))
            .then_with(|| kg.triple_names(&kg.triples()[*a]).cmp(&kg.triple_names(&kg.triples()[*b])))
    };

    let mut keep = vec![false; kg.triples().len()];
    for list in incident.iter_mut() {
        if list.len() <= k {
            for &i in list.iter() {
                keep[i] = true;
            }
            continue;
        }
        list.sort_by(rank);
        for &i in &list[..k] {
            keep[i] = true;
        }
    }

    let mut out = KnowledgeGraph::new();
    for (i, t) in kg.triples().iter().enumerate() {
        if keep[i] {
            let (h, r, tl) = kg.triple_names(t);
            out.insert(h, r, tl);
        }
    }
    let mut rest: Vec<EntityId> = anchors.iter().copied().collect();
    rest.sort();
    for a in rest {
        out.add_entity(kg.entity_name(a));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::from_triples([("a", "r", "b"), ("a", "r", "c"), ("a", "r", "d"), ("b", "r", "c")])
    }

    fn names(kg: &KnowledgeGraph) -> HashSet<(String, String, String)> {
        kg.triples()
            .iter()
            .map(|t| {
                let (h, r, tl) = kg.triple_names(t);
                (h.to_owned(), r.to_owned(), tl.to_owned())
            })
            .collect()
    }

    fn all_anchors(kg: &KnowledgeGraph) -> HashSet<EntityId> {
        (0..kg.num_entities() as u32).map(EntityId).collect()
    }

    #[test]
    fn duplicate_lines_are_merged() {
        let kg = parse_triples("a\tr\tb\na\tr\tb\n", &PathBuf::from("x")).unwrap();
        assert_eq!(kg.triples().len(), 1);
        assert_eq!(kg.num_entities(), 2);
        assert_eq!(kg.num_relations(), 1);
    }

    #[test]
    fn degree_index_counts_incidences() {
        let kg = parse_triples("a\tr\tb\nb\tr\tc\n", &PathBuf::from("x")).unwrap();
        let deg = |n: &str| kg.degree(kg.entity_id(n).unwrap());
        assert_eq!((deg("a"), deg("b"), deg("c")), (1, 2, 1));
    }

    #[test]
    fn self_loop_counts_once() {
        let kg = KnowledgeGraph::from_triples([("a", "r", "a"), ("a", "r", "b")]);
        assert_eq!(kg.degree(kg.entity_id("a").unwrap()), 2);
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let err = parse_triples("a\tr\tb\na\tr\n", &PathBuf::from("kg.tsv")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse_triples("\n\n", &PathBuf::from("x")),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn ids_follow_first_appearance() {
        let kg = parse_triples("z\tr2\ty\ny\tr1\tx\n", &PathBuf::from("x")).unwrap();
        assert_eq!(kg.entity_names(), &["z", "y", "x"]);
        assert_eq!(kg.relation_names(), &["r2", "r1"]);
    }

    #[test]
    fn subsample_top1_matches_enumeration() {
        let kg = toy();
        let out = subsample_kg(&kg, &all_anchors(&kg), 1, Neighborhood::OneHop).unwrap();
        let expected: HashSet<_> = [("a", "r", "b"), ("a", "r", "c"), ("a", "r", "d")]
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect();
        assert_eq!(names(&out), expected);
    }

    #[test]
    fn subsample_with_large_k_keeps_everything() {
        let kg = toy();
        let out = subsample_kg(&kg, &all_anchors(&kg), 4, Neighborhood::OneHop).unwrap();
        assert_eq!(names(&out), names(&kg));
    }

    #[test]
    fn subsample_rejects_empty_anchors() {
        let kg = toy();
        assert!(subsample_kg(&kg, &HashSet::new(), 1, Neighborhood::OneHop).is_err());
    }

    #[test]
    fn linked_only_drops_neighbors() {
        let kg = KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "r", "c"), ("c", "r", "d")]);
        let anchors: HashSet<_> = ["a", "b"].iter().map(|n| kg.entity_id(n).unwrap()).collect();
        let linked = subsample_kg(&kg, &anchors, 10, Neighborhood::LinkedOnly).unwrap();
        assert_eq!(linked.triples().len(), 1);
        let hop = subsample_kg(&kg, &anchors, 10, Neighborhood::OneHop).unwrap();
        assert_eq!(hop.triples().len(), 2);
    }

    #[test]
    fn isolated_anchor_is_kept_as_entity() {
        let mut kg = KnowledgeGraph::from_triples([("a", "r", "b")]);
        let lone = kg.add_entity("lone");
        let anchors: HashSet<_> = [lone].into_iter().collect();
        let out = subsample_kg(&kg, &anchors, 5, Neighborhood::LinkedOnly).unwrap();
        assert!(out.is_empty());
        assert!(out.entity_id("lone").is_some());
    }

    #[test]
    fn subsample_is_a_fixed_point_on_the_toy_graph() {
        let kg = toy();
        let once = subsample_kg(&kg, &all_anchors(&kg), 1, Neighborhood::OneHop).unwrap();
        let twice = subsample_kg(&once, &all_anchors(&once), 1, Neighborhood::OneHop).unwrap();
        assert_eq!(names(&once), names(&twice));
    }

    fn arb_graph() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        prop::collection::vec((0u8..12, 0u8..3, 0u8..12), 1..60)
    }

    fn build(edges: &[(u8, u8, u8)]) -> KnowledgeGraph {
        let owned: Vec<(String, String, String)> = edges
            .iter()
            .map(|(h, r, t)| (format!("e{h}"), format!("r{r}"), format!("e{t}")))
            .collect();
        KnowledgeGraph::from_triples(owned.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
    }

    proptest! {
        #[test]
        fn degree_index_matches_recount(edges in arb_graph()) {
            let kg = build(&edges);
            let mut recount = vec![0usize; kg.num_entities()];
            for t in kg.triples() {
                recount[t.head.index()] += 1;
                if t.tail != t.head { recount[t.tail.index()] += 1; }
            }
            prop_assert_eq!(kg.degrees(), &recount[..]);
            let unique: HashSet<_> = kg.triples().iter().collect();
            prop_assert_eq!(unique.len(), kg.triples().len());
        }

        #[test]
        fn subsample_output_is_a_bounded_subset(edges in arb_graph(), k in 1usize..5) {
            let kg = build(&edges);
            let out = subsample_kg(&kg, &all_anchors(&kg), k, Neighborhood::OneHop).unwrap();
            let input = names(&kg);
            let kept = names(&out);
            prop_assert!(kept.is_subset(&input));
            // Every kept triple is in the top-k of at least one endpoint, so no
            // entity loses triples below min(k, incidence).
            for (i, _) in kg.entity_names().iter().enumerate() {
                let id = EntityId(i as u32);
                let name = kg.entity_name(id);
                let before = kg.degree(id);
                let after = out.entity_id(name).map(|e| out.degree(e)).unwrap_or(0);
                prop_assert!(after >= before.min(k));
            }
        }
    }
}
