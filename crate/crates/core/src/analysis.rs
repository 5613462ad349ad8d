//! Representation-change analysis: cosine similarity deltas between node
//! pairs before and after training, visit co-occurrence statistics and the
//! co-occurring versus never-co-occurring comparison.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::ehr_ingest::EhrDataset;
use crate::error::{Error, Result};
use crate::linker::LinkTable;
use crate::util;

/// `cos(after_a, after_b) - cos(before_a, before_b)` for each row pair.
pub fn similarity_delta(before: &Array2<f64>, after: &Array2<f64>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let rows = before.nrows().min(after.nrows());
    pairs
        .iter()
        .map(|&(a, b)| {
            if a >= rows || b >= rows {
                return Err(Error::InvalidArgument(format!("pair ({a}, {b}) outside {rows} nodes")));
            }
            let cos = |m: &Array2<f64>| util::cosine(&m.row(a).to_vec(), &m.row(b).to_vec());
            Ok(cos(after) - cos(before))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub entity_a: String,
    pub entity_b: String,
    /// Visits containing both entities.
    pub occurrence: usize,
    pub total_a: usize,
    pub total_b: usize,
    pub prevalence_a: f64,
    pub prevalence_b: f64,
    /// False when either entity never occurs in a visit.
    pub observed: bool,
}

/// Visit membership of every linked entity, built once for many pair queries.
#[derive(Clone, Debug)]
pub struct CooccurrenceIndex {
    visits_of: HashMap<String, Vec<usize>>,
}

impl CooccurrenceIndex {
    pub fn new(ds: &EhrDataset, links: &LinkTable) -> Self {
        let mut visits_of: HashMap<String, Vec<usize>> = HashMap::new();
        for (vi, visit) in ds.visits().iter().enumerate() {
            for a in visit.attributes() {
                if let Some(entity) = links.entity_of(a) {
                    let list = visits_of.entry(entity.to_string()).or_default();
                    // Attributes within a visit are distinct, but two could share an entity.
                    if list.last() != Some(&vi) {
                        list.push(vi);
                    }
                }
            }
        }
        Self { visits_of }
    }

    pub fn total(&self, entity: &str) -> usize {
        self.visits_of.get(entity).map_or(0, Vec::len)
    }

    pub fn stats(&self, entity_a: &str, entity_b: &str) -> PairStats {
        let empty = Vec::new();
        let va = self.visits_of.get(entity_a).unwrap_or(&empty);
        let vb = self.visits_of.get(entity_b).unwrap_or(&empty);
        // Both lists are ascending; merge-count the intersection.
        let (mut i, mut j, mut both) = (0, 0, 0);
        while i < va.len() && j < vb.len() {
            match va[i].cmp(&vb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    both += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let prevalence = |total: usize| if total == 0 { 0.0 } else { both as f64 / total as f64 };
        PairStats {
            entity_a: entity_a.to_string(),
            entity_b: entity_b.to_string(),
            occurrence: both,
            total_a: va.len(),
            total_b: vb.len(),
            prevalence_a: prevalence(va.len()),
            prevalence_b: prevalence(vb.len()),
            observed: !va.is_empty() && !vb.is_empty(),
        }
    }
}

/// Co-occurrence statistics of one entity pair.
pub fn cooccurrence_stats(ds: &EhrDataset, links: &LinkTable, entity_a: &str, entity_b: &str) -> PairStats {
    CooccurrenceIndex::new(ds, links).stats(entity_a, entity_b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairClass {
    /// The pair shares at least one visit.
    High,
    Low,
}

impl PairClass {
    pub fn of(stats: &PairStats) -> Self {
        if stats.occurrence >= 1 {
            PairClass::High
        } else {
            PairClass::Low
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairClass::High => "high",
            PairClass::Low => "low",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub pairs: usize,
    pub mean_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighLowSummary {
    pub high: Option<ClassSummary>,
    pub low: Option<ClassSummary>,
    /// `(mean_high - mean_low) / |mean_low|`, when both classes exist and mean_low ≠ 0.
    pub relative_gap: Option<f64>,
}

/// Mean delta of co-occurring and never-co-occurring pairs.
pub fn high_low_study(stats: &[PairStats], deltas: &[f64]) -> Result<HighLowSummary> {
    if stats.len() != deltas.len() {
        return Err(Error::DimensionMismatch {
            expected: stats.len(),
            actual: deltas.len(),
        });
    }
    let summarize = |class: PairClass| {
        let sel: Vec<f64> = stats
            .iter()
            .zip(deltas)
            .filter(|(s, _)| PairClass::of(s) == class)
            .map(|(_, &d)| d)
            .collect();
        (!sel.is_empty()).then(|| ClassSummary {
            pairs: sel.len(),
            mean_delta: sel.iter().sum::<f64>() / sel.len() as f64,
        })
    };
    let high = summarize(PairClass::High);
    let low = summarize(PairClass::Low);
    let relative_gap = match (&high, &low) {
        (Some(h), Some(l)) if l.mean_delta != 0.0 => Some((h.mean_delta - l.mean_delta) / l.mean_delta.abs()),
        _ => None,
    };
    Ok(HighLowSummary { high, low, relative_gap })
}

pub fn write_pair_csv(path: &Path, stats: &[PairStats], deltas: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(util::create_writer(path)?);
    w.write_record(["entity_a", "entity_b", "delta", "occurrence", "prevalence_a", "prevalence_b", "class"])?;
    for (s, d) in stats.iter().zip(deltas) {
        w.write_record([
            s.entity_a.clone(),
            s.entity_b.clone(),
            d.to_string(),
            s.occurrence.to_string(),
            s.prevalence_a.to_string(),
            s.prevalence_b.to_string(),
            PairClass::of(s).as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-class counts over `bins` uniform bins spanning the observed delta range.
pub fn delta_histogram(stats: &[PairStats], deltas: &[f64], bins: usize) -> Vec<(PairClass, f64, f64, usize)> {
    if deltas.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = [vec![0usize; bins], vec![0usize; bins]];
    for (s, &d) in stats.iter().zip(deltas) {
        let b = (((d - lo) / width) as usize).min(bins - 1);
        counts[usize::from(PairClass::of(s) == PairClass::Low)][b] += 1;
    }
    let mut out = Vec::with_capacity(2 * bins);
    for (ci, class) in [PairClass::High, PairClass::Low].into_iter().enumerate() {
        for (b, &n) in counts[ci].iter().enumerate() {
            out.push((class, lo + b as f64 * width, lo + (b + 1) as f64 * width, n));
        }
    }
    out
}

pub fn write_histogram_csv(path: &Path, stats: &[PairStats], deltas: &[f64], bins: usize) -> Result<()> {
    let mut out = String::from("class,bin_start,bin_end,count\n");
    for (class, start, end, n) in delta_histogram(stats, deltas, bins) {
        out.push_str(&format!("{},{start},{end},{n}\n", class.as_str()));
    }
    let mut w = util::create_writer(path)?;
    w.write_all(out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
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
                        .map(|a| MedicalRecord {
                            t: 0.0,
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
                    entity_name: n.to_string(),
                    similarity: 1.0,
                    stage: LinkStage::ExactMatch,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn delta_examples() {
        let m = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        assert_eq!(similarity_delta(&m, &m, &[(0, 1), (1, 2)]).unwrap(), vec![0.0, 0.0]);
        let after = array![[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]];
        let d = similarity_delta(&m, &after, &[(0, 1)]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!(similarity_delta(&m, &m, &[(0, 3)]).is_err());
    }

    #[test]
    fn cooccurrence_examples() {
        let ds = dataset(&[&["a", "b"], &["a"], &["b"], &["c"]]);
        let links = identity_links(&["a", "b", "c"]);
        let s = cooccurrence_stats(&ds, &links, "a", "b");
        assert_eq!((s.occurrence, s.prevalence_a, s.prevalence_b), (1, 0.5, 0.5));
        let own = cooccurrence_stats(&ds, &links, "a", "a");
        assert_eq!((own.occurrence, own.prevalence_a, own.prevalence_b), (2, 1.0, 1.0));
        let disjoint = cooccurrence_stats(&ds, &links, "a", "c");
        assert_eq!((disjoint.occurrence, disjoint.prevalence_a), (0, 0.0));
        let missing = cooccurrence_stats(&ds, &links, "a", "zzz");
        assert!(!missing.observed);
        assert_eq!(missing.prevalence_b, 0.0);
    }

    #[test]
    fn high_low_classes() {
        let ds = dataset(&[&["a", "b"], &["c"]]);
        let links = identity_links(&["a", "b", "c"]);
        let idx = CooccurrenceIndex::new(&ds, &links);
        let stats = vec![idx.stats("a", "b"), idx.stats("a", "c"), idx.stats("b", "c")];
        let s = high_low_study(&stats, &[0.6, 0.1, 0.3]).unwrap();
        assert_eq!(s.high.as_ref().unwrap().mean_delta, 0.6);
        assert!((s.low.as_ref().unwrap().mean_delta - 0.2).abs() < 1e-15);
        assert!((s.relative_gap.unwrap() - 2.0).abs() < 1e-12);

        let only_high = high_low_study(&stats[..1], &[0.6]).unwrap();
        assert!(only_high.low.is_none());
        assert!(only_high.relative_gap.is_none());
    }

    #[test]
    fn histogram_covers_every_pair() {
        let ds = dataset(&[&["a", "b"], &["c"]]);
        let links = identity_links(&["a", "b", "c"]);
        let idx = CooccurrenceIndex::new(&ds, &links);
        let stats = vec![idx.stats("a", "b"), idx.stats("a", "c"), idx.stats("b", "c")];
        let h = delta_histogram(&stats, &[-0.5, 0.25, 1.0], 40);
        assert_eq!(h.len(), 80);
        assert_eq!(h.iter().map(|r| r.3).sum::<usize>(), 3);
        assert_eq!(h[39].3, 0);
        assert_eq!(h[40 + 39].3, 1);
    }

    fn brute_force(visits: &[Vec<usize>], a: usize, b: usize) -> (usize, usize, usize) {
        let has = |v: &Vec<usize>, x| v.contains(&x);
        (
            visits.iter().filter(|v| has(v, a) && has(v, b)).count(),
            visits.iter().filter(|v| has(v, a)).count(),
            visits.iter().filter(|v| has(v, b)).count(),
        )
    }

    proptest! {
        #[test]
        fn index_matches_visit_scan(
            visits in prop::collection::vec(prop::collection::btree_set(0usize..6, 1..4), 1..30),
            a in 0usize..6,
            b in 0usize..6,
        ) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let visits: Vec<Vec<usize>> = visits.into_iter().map(|s| s.into_iter().collect()).collect();
            let attr_lists: Vec<Vec<&str>> = visits.iter().map(|v| v.iter().map(|&i| names[i]).collect()).collect();
            let refs: Vec<&[&str]> = attr_lists.iter().map(|v| v.as_slice()).collect();
            let ds = dataset(&refs);
            let links = identity_links(&names);
            let s = CooccurrenceIndex::new(&ds, &links).stats(names[a], names[b]);
            prop_assert_eq!((s.occurrence, s.total_a, s.total_b), brute_force(&visits, a, b));
            prop_assert!(s.occurrence <= s.total_a.min(s.total_b));
        }

        #[test]
        fn deltas_flip_sign_when_swapped(vals in prop::collection::vec(-1.0f64..1.0, 12)) {
            let before = Array2::from_shape_vec((3, 2), vals[..6].to_vec()).unwrap();
            let after = Array2::from_shape_vec((3, 2), vals[6..].to_vec()).unwrap();
            let pairs = [(0, 1), (0, 2), (1, 2)];
            let fwd = similarity_delta(&before, &after, &pairs).unwrap();
            let back = similarity_delta(&after, &before, &pairs).unwrap();
            for (x, y) in fwd.iter().zip(&back) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
