//! Attribute-to-entity linking.
//!
//! Linking runs in three stages:
//! 1. attributes whose normalized name (after optional synonym mapping)
//!    equals a normalized KG entity name are linked directly;
//! 2. the rest retrieve their top-`LC` candidates by cosine similarity over
//!    provider vectors and an [`Adjudicator`] picks one;
//! 3. conflicting picks are resolved greedily by descending similarity so the
//!    final mapping is one-to-one.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_embed;
use crate::util;

/// Lowercases, turns punctuation into spaces and collapses whitespace.
pub fn normalize_name(raw: &str) -> String {
    let mapped: String = raw
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .to_lowercase();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AttributeName {
    pub raw: String,
    pub normalized: String,
}

impl AttributeName {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let normalized = normalize_name(&raw);
        Self { raw, normalized }
    }
}

/// a·b / (‖a‖‖b‖); zero when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(util::cosine(a, b))
}

/// Source of language-model vectors for names.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    /// Vector for a name, looked up by its normalized form.
    fn embed(&self, name: &str) -> Option<Vec<f64>>;
}

/// Provider backed by an embedding file (`N d` header, `name<TAB>v1,...`).
#[derive(Clone, Debug)]
pub struct FileProvider {
    dim: usize,
    names: Vec<String>,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let (names, m) = kg_embed::read_vectors(path)?;
        Ok(Self::from_rows(names, m.rows().into_iter().map(|r| r.to_vec()).collect(), m.ncols()))
    }

    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>, dim: usize) -> Self {
        let mut vectors = HashMap::with_capacity(names.len());
        let mut kept = Vec::with_capacity(names.len());
        for (name, row) in names.into_iter().zip(rows) {
            let key = normalize_name(&name);
            if let std::collections::hash_map::Entry::Vacant(slot) = vectors.entry(key.clone()) {
                kept.push(key);
                slot.insert(row);
            }
        }
        Self {
            dim,
            names: kept,
            vectors,
        }
    }

    /// Randomly reassigns vectors among names (linking-quality ablation).
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut rows: Vec<Vec<f64>> = self.names.iter().map(|n| self.vectors[n].clone()).collect();
        rows.shuffle(&mut util::rng(util::derive_seed(seed, "provider-shuffle")));
        Self::from_rows(self.names.clone(), rows, self.dim)
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, name: &str) -> Option<Vec<f64>> {
        self.vectors.get(&normalize_name(name)).cloned()
    }
}

/// Deterministic character-trigram hashing embedder.
///
/// Not a language model; it gives names sharing substrings nearby vectors,
/// which is enough to drive candidate retrieval when no external vectors exist.
#[derive(Clone, Copy, Debug)]
pub struct HashedNgramProvider {
    dim: usize,
}

impl HashedNgramProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dim must be positive");
        Self { dim }
    }
}

impl EmbeddingProvider for HashedNgramProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, name: &str) -> Option<Vec<f64>> {
        let padded: Vec<char> = format!("  {} ", normalize_name(name)).chars().collect();
        let mut v = vec![0.0; self.dim];
        for w in padded.windows(3) {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for c in w {
                h ^= *c as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            let slot = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        Some(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub entity: usize,
    pub name: String,
    pub similarity: f64,
}

/// Picks one of the retrieved candidates for an attribute.
pub trait Adjudicator {
    /// Index into `candidates`, or `None` to fall back to the top candidate.
    fn choose(&self, attribute: &AttributeName, candidates: &[Candidate]) -> Option<usize>;
}

/// Picks the most similar candidate.
#[derive(Clone, Copy, Debug, Default)]
pub struct ArgmaxCosine;

impl Adjudicator for ArgmaxCosine {
    fn choose(&self, _attribute: &AttributeName, candidates: &[Candidate]) -> Option<usize> {
        if candidates.is_empty() {
            None
        } else {
            Some(0)
        }
    }
}

/// Replays decisions recorded offline (e.g. from an LLM) as `attribute,chosen_entity`.
#[derive(Clone, Debug, Default)]
pub struct ReplayAdjudicator {
    decisions: HashMap<String, String>,
}

impl ReplayAdjudicator {
    pub fn new(decisions: HashMap<String, String>) -> Self {
        let decisions = decisions
            .into_iter()
            .map(|(a, e)| (normalize_name(&a), normalize_name(&e)))
            .collect();
        Self { decisions }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Config(format!("{other:?}")),
            })?;
        let mut decisions = HashMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::parse(
                    path,
                    rec.position().map_or(0, |p| p.line() as usize),
                    "expected `attribute,chosen_entity`",
                ));
            }
            decisions.insert(rec[0].to_owned(), rec[1].to_owned());
        }
        Ok(Self::new(decisions))
    }
}

impl Adjudicator for ReplayAdjudicator {
    fn choose(&self, attribute: &AttributeName, candidates: &[Candidate]) -> Option<usize> {
        let chosen = self.decisions.get(&attribute.normalized)?;
        let hit = candidates.iter().position(|c| &normalize_name(&c.name) == chosen);
        if hit.is_none() {
            log::warn!(
                "replayed choice `{chosen}` for `{}` is not among its candidates",
                attribute.raw
            );
        }
        hit
    }
}

/// Ranks `entities` by cosine similarity to `query`, keeping the top `lc`.
/// Ties are broken by entity name.
pub fn top_candidates(query: &[f64], entities: &[(String, Vec<f64>)], lc: usize) -> Result<Vec<Candidate>> {
    if lc == 0 {
        return Err(Error::InvalidArgument("LC must be at least 1".into()));
    }
    let mut all = Vec::with_capacity(entities.len());
    for (i, (name, v)) in entities.iter().enumerate() {
        all.push(Candidate {
            entity: i,
            name: name.clone(),
            similarity: cosine_similarity(query, v)?,
        });
    }
    all.sort_by(rank_candidates);
    all.truncate(lc);
    Ok(all)
}

fn rank_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.name.cmp(&b.name))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkStage {
    ExactMatch,
    Candidate,
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub attribute: String,
    /// Index into the entity name list the linker was given.
    pub entity: usize,
    pub entity_name: String,
    pub similarity: f64,
    pub stage: LinkStage,
}

/// One link per attribute, injective over entities.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkTable {
    links: Vec<Link>,
    by_attribute: HashMap<String, usize>,
}

impl LinkTable {
    pub fn from_links(links: Vec<Link>) -> Result<Self> {
        let mut by_attribute = HashMap::with_capacity(links.len());
        let mut seen = HashSet::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            if by_attribute.insert(l.attribute.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{}` linked twice",
                    l.attribute
                )));
            }
            if !seen.insert(l.entity_name.clone()) {
                return Err(Error::InvalidArgument(format!(
                    "entity `{}` linked twice",
                    l.entity_name
                )));
            }
        }
        Ok(Self {
            links,
            by_attribute,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn get(&self, attribute: &str) -> Option<&Link> {
        self.by_attribute.get(attribute).map(|&i| &self.links[i])
    }

    pub fn entity_of(&self, attribute: &str) -> Option<&str> {
        self.get(attribute).map(|l| l.entity_name.as_str())
    }

    /// Writes `attribute,entity,similarity` with six-decimal similarities.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let w = util::create_writer(path)?;
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["attribute", "entity", "similarity"])?;
        for l in &self.links {
            wtr.write_record([
                l.attribute.as_str(),
                l.entity_name.as_str(),
                &format!("{:.6}", l.similarity),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`LinkTable::write_csv`]. Entity indices are
    /// assigned in file order since the original entity list is not stored.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
        let mut links = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::parse(path, i + 2, "expected `attribute,entity,similarity`"));
            }
            let similarity: f64 = rec[2]
                .parse()
                .map_err(|_| Error::parse(path, i + 2, format!("bad similarity `{}`", &rec[2])))?;
            links.push(Link {
                attribute: rec[0].to_owned(),
                entity: i,
                entity_name: rec[1].to_owned(),
                similarity,
                stage: LinkStage::Candidate,
            });
        }
        Self::from_links(links)
    }
}

/// Optional thesaurus applied before exact matching: `name<TAB>canonical`.
pub fn load_synonyms(path: &Path) -> Result<HashMap<String, String>> {
    let text = util::read_to_string(path)?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `name<TAB>canonical`"))?;
        map.insert(normalize_name(a), normalize_name(b));
    }
    Ok(map)
}

#[derive(Clone, Debug)]
pub struct LinkOptions {
    pub lc: usize,
    pub exact_match: bool,
    pub synonyms: HashMap<String, String>,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self {
            lc: 10,
            exact_match: true,
            synonyms: HashMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Claim {
    similarity: f64,
    attribute: usize,
}

impl Eq for Claim {}

impl Ord for Claim {
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.attribute.cmp(&self.attribute))
    }
}

impl PartialOrd for Claim {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Links every attribute to a distinct entity of `kg_names`.
pub fn link_attributes(
    attributes: &[AttributeName],
    kg_names: &[String],
    provider: &dyn EmbeddingProvider,
    adjudicator: &dyn Adjudicator,
    opts: &LinkOptions,
) -> Result<LinkTable> {
    if attributes.is_empty() {
        return Err(Error::InvalidArgument("no attributes to link".into()));
    }
    if opts.lc == 0 {
        return Err(Error::InvalidArgument("LC must be at least 1".into()));
    }
    let distinct: HashSet<&str> = attributes.iter().map(|a| a.raw.as_str()).collect();
    if distinct.len() != attributes.len() {
        return Err(Error::InvalidArgument("duplicate attribute names".into()));
    }
    if attributes.len() > kg_names.len() {
        return Err(Error::InjectivityImpossible {
            attributes: attributes.len(),
            entities: kg_names.len(),
        });
    }

    let mut claimed = vec![false; kg_names.len()];
    let mut result: Vec<Option<Link>> = vec![None; attributes.len()];

    if opts.exact_match {
        let mut by_name: HashMap<String, usize> = HashMap::new();
        for (i, n) in kg_names.iter().enumerate() {
            by_name.entry(normalize_name(n)).or_insert(i);
        }
        for (ai, a) in attributes.iter().enumerate() {
            let key = opts.synonyms.get(&a.normalized).unwrap_or(&a.normalized);
            if let Some(&e) = by_name.get(key) {
                if !claimed[e] {
                    claimed[e] = true;
                    result[ai] = Some(Link {
                        attribute: a.raw.clone(),
                        entity: e,
                        entity_name: kg_names[e].clone(),
                        similarity: 1.0,
                        stage: LinkStage::ExactMatch,
                    });
                }
            }
        }
    }

    let pending: Vec<usize> = (0..attributes.len()).filter(|&i| result[i].is_none()).collect();
    if !pending.is_empty() {
        let pool: Vec<(String, Vec<f64>)> = kg_names
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .map(|(_, n)| {
                provider
                    .embed(n)
                    .map(|v| (n.clone(), v))
                    .ok_or_else(|| Error::MissingVector(n.clone()))
            })
            .collect::<Result<_>>()?;
        let pool_index: Vec<usize> = (0..kg_names.len()).filter(|&i| !claimed[i]).collect();

        // Per pending attribute: preference list (pool indices with similarity).
        let mut prefs: Vec<Vec<Candidate>> = Vec::with_capacity(pending.len());
        let mut queries: Vec<Vec<f64>> = Vec::with_capacity(pending.len());
        for &ai in &pending {
            let a = &attributes[ai];
            let q = provider
                .embed(&a.raw)
                .ok_or_else(|| Error::MissingVector(a.raw.clone()))?;
            let mut cands = top_candidates(&q, &pool, opts.lc)?;
            let pick = adjudicator.choose(a, &cands).filter(|&i| i < cands.len()).unwrap_or(0);
            if pick != 0 {
                let chosen = cands.remove(pick);
                cands.insert(0, chosen);
            }
            prefs.push(cands);
            queries.push(q);
        }

        let mut cursor = vec![0usize; pending.len()];
        let mut heap: BinaryHeap<Claim> = prefs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(k, p)| Claim {
                similarity: p[0].similarity,
                attribute: k,
            })
            .collect();
        let mut taken = vec![false; pool.len()];
        let mut exhausted = Vec::new();
        for (k, p) in prefs.iter().enumerate() {
            if p.is_empty() {
                exhausted.push(k);
            }
        }

        while let Some(Claim { attribute: k, .. }) = heap.pop() {
            let cand = &prefs[k][cursor[k]];
            if !taken[cand.entity] {
                taken[cand.entity] = true;
                result[pending[k]] = Some(Link {
                    attribute: attributes[pending[k]].raw.clone(),
                    entity: pool_index[cand.entity],
                    entity_name: cand.name.clone(),
                    similarity: cand.similarity,
                    stage: LinkStage::Candidate,
                });
                continue;
            }
            cursor[k] += 1;
            if cursor[k] < prefs[k].len() {
                heap.push(Claim {
                    similarity: prefs[k][cursor[k]].similarity,
                    attribute: k,
                });
            } else {
                exhausted.push(k);
                // Resolve immediately so later claims see this entity as taken.
                let best = best_unclaimed(&queries[k], &pool, &taken)?;
                taken[best.entity] = true;
                result[pending[k]] = Some(Link {
                    attribute: attributes[pending[k]].raw.clone(),
                    entity: pool_index[best.entity],
                    entity_name: best.name,
                    similarity: best.similarity,
                    stage: LinkStage::Fallback,
                });
            }
        }
        for k in exhausted {
            if result[pending[k]].is_none() {
                let best = best_unclaimed(&queries[k], &pool, &taken)?;
                taken[best.entity] = true;
                result[pending[k]] = Some(Link {
                    attribute: attributes[pending[k]].raw.clone(),
                    entity: pool_index[best.entity],
                    entity_name: best.name,
                    similarity: best.similarity,
                    stage: LinkStage::Fallback,
                });
            }
        }
    }

    let links = result
        .into_iter()
        .map(|l| l.expect("every attribute resolved"))
        .collect();
    LinkTable::from_links(links)
}

fn best_unclaimed(query: &[f64], pool: &[(String, Vec<f64>)], taken: &[bool]) -> Result<Candidate> {
    let mut best: Option<Candidate> = None;
    for (i, (name, v)) in pool.iter().enumerate() {
        if taken[i] {
            continue;
        }
        let c = Candidate {
            entity: i,
            name: name.clone(),
            similarity: cosine_similarity(query, v)?,
        };
        if best.as_ref().is_none_or(|b| rank_candidates(&c, b) == Ordering::Less) {
            best = Some(c);
        }
    }
    best.ok_or(Error::InjectivityImpossible {
        attributes: taken.len() + 1,
        entities: taken.len(),
    })
}
