//! KG entity/relation embeddings: scoring functions, training, the embedding
//! file format and PCA fusion of externally supplied matrices.

mod pca;
mod train;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub use pca::{concat_columns, pca_reduce};
pub use train::{
    complex_score, filtered_mrr, score_triple, train_embeddings, transe_score, EmbedTrainConfig,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingKind {
    /// ComplEx; each row stores real parts then imaginary parts.
    #[default]
    Complex,
    /// TransE.
    Translational,
    /// Vectors read from a file or produced by fusion.
    External,
}

/// Entity and relation vectors of a common width.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    kind: EmbeddingKind,
    entity_names: Vec<String>,
    entity_index: HashMap<String, usize>,
    entities: Array2<f64>,
    relation_names: Vec<String>,
    relations: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(
        kind: EmbeddingKind,
        entity_names: Vec<String>,
        entities: Array2<f64>,
        relation_names: Vec<String>,
        relations: Array2<f64>,
    ) -> Result<Self> {
        if entity_names.len() != entities.nrows() {
            return Err(Error::Shape(format!(
                "{} entity names for {} rows",
                entity_names.len(),
                entities.nrows()
            )));
        }
        if relation_names.len() != relations.nrows() {
            return Err(Error::Shape(format!(
                "{} relation names for {} rows",
                relation_names.len(),
                relations.nrows()
            )));
        }
        if relations.nrows() > 0 && relations.ncols() != entities.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entities.ncols(),
                actual: relations.ncols(),
            });
        }
        if kind == EmbeddingKind::Complex && !entities.ncols().is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "complex embeddings need an even width".into(),
            ));
        }
        let entity_index = entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Self {
            kind,
            entity_names,
            entity_index,
            entities,
            relation_names,
            relations,
        })
    }

    /// A table holding only entity vectors, as read from an embedding file.
    pub fn external(names: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        let dim = vectors.ncols();
        Self::new(
            EmbeddingKind::External,
            names,
            vectors,
            Vec::new(),
            Array2::zeros((0, dim)),
        )
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.entities.ncols()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entities(&self) -> &Array2<f64> {
        &self.entities
    }

    pub fn relations(&self) -> &Array2<f64> {
        &self.relations
    }

    pub fn entity(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.entity_index.get(name).map(|&i| self.entities.row(i))
    }

    /// Entity-only view with a different row matrix, e.g. after PCA.
    pub fn with_entities(&self, entities: Array2<f64>) -> Result<Self> {
        Self::external(self.entity_names.clone(), entities)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_vectors(path, &self.entity_names, &self.entities)
    }

    pub fn write_relations(&self, path: &Path) -> Result<()> {
        write_vectors(path, &self.relation_names, &self.relations)
    }
}

/// Writes `N d` followed by `name<TAB>v1,...,vd` lines.
pub fn write_vectors(path: &Path, names: &[String], matrix: &Array2<f64>) -> Result<()> {
    let mut w = util::create_writer(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", matrix.nrows(), matrix.ncols()).map_err(io)?;
    for (name, row) in names.iter().zip(matrix.rows()) {
        write!(w, "{name}\t").map_err(io)?;
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                w.write_all(b",").map_err(io)?;
            }
            // Display for f64 is the shortest string that round-trips.
            write!(w, "{v}").map_err(io)?;
        }
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a file written by [`write_vectors`].
pub fn read_vectors(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let text = util::read_to_string(path)?;
    parse_vectors(&text, path)
}

pub(crate) fn parse_vectors(text: &str, path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `N d` header"))?;
    let mut parts = header.split_whitespace();
    let parse_usize = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
    let (n, d) = match (parse_usize(parts.next()), parse_usize(parts.next()), parts.next()) {
        (Some(n), Some(d), None) => (n, d),
        _ => return Err(Error::parse(path, 1, "header must be `N d`")),
    };
    let mut names = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (name, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `name<TAB>values`"))?;
        let before = data.len();
        for v in values.split(',') {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad float `{v}`")))?;
            data.push(x);
        }
        if data.len() - before != d {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {d} values, found {}", data.len() - before),
            ));
        }
        names.push(name.to_owned());
    }
    if names.len() != n {
        return Err(Error::parse(
            path,
            1,
            format!("header announces {n} rows, found {}", names.len()),
        ));
    }
    let matrix = Array2::from_shape_vec((n, d), data)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((names, matrix))
}
