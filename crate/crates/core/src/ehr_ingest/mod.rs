//! Visit-level EHR records, label handling and train/validation/test splits.

mod synth;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub use synth::{generate_synthetic, SynthConfig, SyntheticData};

/// One time-stamped record `(t, a, lt)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedicalRecord {
    pub t: f64,
    pub a: String,
    /// Literal value; parsed and kept, never consumed by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientVisit {
    pub visit_id: String,
    /// Groups visits for patient-level splitting; defaults to the visit itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub records: Vec<MedicalRecord>,
    pub labels: Vec<u8>,
}

impl PatientVisit {
    /// Distinct attributes in first-appearance order.
    pub fn attributes(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.a.as_str()))
            .map(|r| r.a.as_str())
            .collect()
    }

    fn group(&self) -> &str {
        self.patient_id.as_deref().unwrap_or(&self.visit_id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EhrDataset {
    visits: Vec<PatientVisit>,
    attribute_vocab: BTreeSet<String>,
    task_count: usize,
}

impl EhrDataset {
    /// Validates visits, sorts their records by time and builds the vocabulary.
    pub fn new(mut visits: Vec<PatientVisit>) -> Result<Self> {
        if visits.is_empty() {
            return Err(Error::Dataset("no visits".into()));
        }
        let task_count = visits[0].labels.len();
        let mut ids = HashSet::with_capacity(visits.len());
        let mut vocab = BTreeSet::new();
        for v in &mut visits {
            if !ids.insert(v.visit_id.clone()) {
                return Err(Error::Dataset(format!("duplicate visit_id `{}`", v.visit_id)));
            }
            if v.records.is_empty() {
                return Err(Error::Dataset(format!("visit `{}` has no records", v.visit_id)));
            }
            if v.labels.len() != task_count {
                return Err(Error::Dataset(format!(
                    "visit `{}` has {} labels, expected {task_count}",
                    v.visit_id,
                    v.labels.len()
                )));
            }
            if v.labels.iter().any(|&l| l > 1) {
                return Err(Error::Dataset(format!("visit `{}` has a non-binary label", v.visit_id)));
            }
            for r in &v.records {
                if !(r.t.is_finite() && r.t >= 0.0) {
                    return Err(Error::Dataset(format!(
                        "visit `{}` has an invalid timestamp {}",
                        v.visit_id, r.t
                    )));
                }
                if r.a.is_empty() {
                    return Err(Error::Dataset(format!("visit `{}` has an empty attribute", v.visit_id)));
                }
                vocab.insert(r.a.clone());
            }
            v.records.sort_by(|a, b| a.t.total_cmp(&b.t));
        }
        Ok(Self {
            visits,
            attribute_vocab: vocab,
            task_count,
        })
    }

    pub fn visits(&self) -> &[PatientVisit] {
        &self.visits
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn attribute_vocab(&self) -> &BTreeSet<String> {
        &self.attribute_vocab
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    /// Replaces labels from a `visit_id,l1,...,lT` CSV (header optional).
    pub fn with_labels_csv(self, path: &Path) -> Result<Self> {
        let labels = read_labels_csv(path)?;
        let mut visits = self.visits;
        for v in &mut visits {
            v.labels = labels
                .get(&v.visit_id)
                .cloned()
                .ok_or_else(|| Error::Dataset(format!("no labels for visit `{}`", v.visit_id)))?;
        }
        Self::new(visits)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = util::create_writer(path)?;
        for v in &self.visits {
            serde_json::to_writer(&mut w, v)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `visit_id,l1,...,lT` with a header.
    pub fn write_labels_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(util::create_writer(path)?);
        let mut header = vec!["visit_id".to_string()];
        header.extend((1..=self.task_count).map(|i| format!("l{i}")));
        wtr.write_record(&header)?;
        for v in &self.visits {
            let mut row = vec![v.visit_id.clone()];
            row.extend(v.labels.iter().map(|l| l.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSONL file of visits.
pub fn load_ehr(path: &Path) -> Result<EhrDataset> {
    let text = util::read_to_string(path)?;
    let mut visits = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: PatientVisit = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        visits.push(v);
    }
    EhrDataset::new(visits)
}

/// Reads `visit_id,v1,...,vT` rows of numbers; a non-numeric first row is
/// treated as a header.
pub fn read_score_csv(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
    let mut rows = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::parse(path, i + 1, "expected visit_id and at least one value"));
        }
        let values: std::result::Result<Vec<f64>, _> = rec.iter().skip(1).map(|s| s.trim().parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::parse(path, i + 1, "non-numeric value")),
        };
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::parse(path, i + 1, "inconsistent column count"));
        }
        rows.push((rec[0].to_owned(), values));
    }
    Ok(rows)
}

pub fn read_labels_csv(path: &Path) -> Result<HashMap<String, Vec<u8>>> {
    let mut out = HashMap::new();
    for (id, vals) in read_score_csv(path)? {
        let labels = vals
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::Dataset(format!("label {v} of `{id}` is not 0/1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        out.insert(id, labels);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitUnit {
    #[default]
    Visit,
    Patient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl Fold {
    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        }
    }
}

/// Visit indices (into the dataset) per fold, each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn fold_of(&self, n: usize) -> Vec<Option<Fold>> {
        let mut out = vec![None; n];
        for (fold, ids) in [(Fold::Train, &self.train), (Fold::Val, &self.val), (Fold::Test, &self.test)] {
            for &i in ids {
                out[i] = Some(fold);
            }
        }
        out
    }

    /// Writes `visit_id,fold` in dataset order.
    pub fn write_csv(&self, ds: &EhrDataset, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(util::create_writer(path)?);
        wtr.write_record(["visit_id", "fold"])?;
        for (v, fold) in ds.visits().iter().zip(self.fold_of(ds.len())) {
            if let Some(f) = fold {
                wtr.write_record([v.visit_id.as_str(), f.as_str()])?;
            }
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

/// Seeded shuffle, then `⌊n·val⌋` validation and `⌊n·test⌋` test units with
/// the remainder in training. With [`SplitUnit::Patient`] whole patients are
/// assigned and `n` counts patients.
pub fn split_dataset(ds: &EhrDataset, ratios: SplitRatios, seed: u64, unit: SplitUnit) -> Result<Split> {
    let SplitRatios { train, val, test } = ratios;
    if !(train > 0.0 && val > 0.0 && test > 0.0) || ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios ({train}, {val}, {test}) must be positive and sum to 1"
        )));
    }
    let groups: Vec<Vec<usize>> = match unit {
        SplitUnit::Visit => (0..ds.len()).map(|i| vec![i]).collect(),
        SplitUnit::Patient => {
            let mut order: Vec<&str> = Vec::new();
            let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, v) in ds.visits().iter().enumerate() {
                members
                    .entry(v.group())
                    .or_insert_with(|| {
                        order.push(v.group());
                        Vec::new()
                    })
                    .push(i);
            }
            order.into_iter().map(|g| members.remove(g).unwrap()).collect()
        }
    };
    let n = groups.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("cannot split {n} units three ways")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut util::rng(util::derive_seed(seed, "split")));
    let n_val = (n as f64 * val).floor() as usize;
    let n_test = (n as f64 * test).floor() as usize;
    let collect = |range: &[usize]| {
        let mut v: Vec<usize> = range.iter().flat_map(|&g| groups[g].iter().copied()).collect();
        v.sort_unstable();
        v
    };
    Ok(Split {
        val: collect(&idx[..n_val]),
        test: collect(&idx[n_val..n_val + n_test]),
        train: collect(&idx[n_val + n_test..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visit(id: &str, recs: &[(f64, &str)], labels: &[u8]) -> PatientVisit {
        PatientVisit {
            visit_id: id.into(),
            patient_id: None,
            records: recs
                .iter()
                .map(|(t, a)| MedicalRecord {
                    t: *t,
                    a: a.to_string(),
                    lt: None,
                })
                .collect(),
            labels: labels.to_vec(),
        }
    }

    fn n_visits(n: usize) -> EhrDataset {
        EhrDataset::new((0..n).map(|i| visit(&format!("v{i}"), &[(0.0, "a")], &[0])).collect()).unwrap()
    }

    #[test]
    fn records_are_sorted_by_time() {
        let ds = EhrDataset::new(vec![visit("v", &[(5.0, "b"), (1.0, "a")], &[1])]).unwrap();
        let ts: Vec<f64> = ds.visits()[0].records.iter().map(|r| r.t).collect();
        assert_eq!(ts, [1.0, 5.0]);
    }

    #[test]
    fn inconsistent_label_lengths_fail() {
        let err = EhrDataset::new(vec![visit("a", &[(0.0, "x")], &[0; 25]), visit("b", &[(0.0, "x")], &[0; 24])]);
        assert!(matches!(err, Err(Error::Dataset(_))));
    }

    #[test]
    fn empty_record_list_names_the_visit() {
        let err = EhrDataset::new(vec![visit("lonely", &[], &[0])]).unwrap_err();
        assert!(err.to_string().contains("lonely"));
    }

    #[test]
    fn vocab_is_the_union_of_attributes() {
        let ds = EhrDataset::new(vec![
            visit("1", &[(0.0, "a"), (1.0, "b")], &[0]),
            visit("2", &[(0.0, "b")], &[1]),
            visit("3", &[(0.0, "c"), (0.5, "a")], &[0]),
        ])
        .unwrap();
        let v: Vec<&str> = ds.attribute_vocab().iter().map(|s| s.as_str()).collect();
        assert_eq!(v, ["a", "b", "c"]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ehr.jsonl");
        let mut v = visit("1", &[(0.5, "a")], &[1, 0]);
        v.records[0].lt = Some("7.2 mg/dL".into());
        v.patient_id = Some("p9".into());
        let ds = EhrDataset::new(vec![v, visit("2", &[(0.0, "b"), (3.0, "c")], &[0, 1])]).unwrap();
        ds.write_jsonl(&p).unwrap();
        assert_eq!(load_ehr(&p).unwrap(), ds);
    }

    #[test]
    fn bad_json_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ehr.jsonl");
        std::fs::write(&p, "{\"visit_id\":\"a\",\"records\":[{\"t\":0,\"a\":\"x\"}],\"labels\":[1]}\nnot json\n").unwrap();
        assert!(matches!(load_ehr(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn split_sizes_follow_the_floor_rule() {
        let r = SplitRatios::default();
        let s = split_dataset(&n_visits(10), r, 1, SplitUnit::Visit).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let s = split_dataset(&n_visits(9), r, 1, SplitUnit::Visit).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 0, 1));
    }

    #[test]
    fn split_is_seeded_disjoint_and_covering() {
        let ds = n_visits(57);
        let a = split_dataset(&ds, SplitRatios::default(), 3, SplitUnit::Visit).unwrap();
        let b = split_dataset(&ds, SplitRatios::default(), 3, SplitUnit::Visit).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
        let c = split_dataset(&ds, SplitRatios::default(), 4, SplitUnit::Visit).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_dataset(&n_visits(2), SplitRatios::default(), 0, SplitUnit::Visit).is_err());
        let bad = SplitRatios {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(split_dataset(&n_visits(10), bad, 0, SplitUnit::Visit).is_err());
    }

    #[test]
    fn patient_split_keeps_visits_together() {
        let visits: Vec<PatientVisit> = (0..30)
            .map(|i| {
                let mut v = visit(&format!("v{i}"), &[(0.0, "a")], &[0]);
                v.patient_id = Some(format!("p{}", i / 3));
                v
            })
            .collect();
        let ds = EhrDataset::new(visits).unwrap();
        let s = split_dataset(&ds, SplitRatios::default(), 7, SplitUnit::Patient).unwrap();
        let folds = s.fold_of(ds.len());
        for p in 0..10 {
            let f = folds[p * 3];
            assert!(folds[p * 3..p * 3 + 3].iter().all(|x| *x == f));
        }
        // 10 patients → 1 val, 2 test, 7 train.
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (21, 3, 6));
    }

    #[test]
    fn labels_csv_replaces_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        std::fs::write(&p, "visit_id,l1,l2\nv0,1,0\nv1,0,1\n").unwrap();
        let ds = EhrDataset::new(vec![visit("v0", &[(0.0, "a")], &[0]), visit("v1", &[(0.0, "a")], &[0])]).unwrap();
        let ds = ds.with_labels_csv(&p).unwrap();
        assert_eq!(ds.task_count(), 2);
        assert_eq!(ds.visits()[1].labels, [0, 1]);
    }
}
