//! Dataset ingestion: JSONL records, embedding tables and batching.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of class names. A class index is its position in the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    classes: Vec<String>,
}

impl LabelSpace {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.len() < 2 {
            return Err(Error::LabelSpace(format!(
                "need at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::LabelSpace(format!("duplicate class {c:?}")));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn check(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::ClassOutOfRange { index, classes: self.len() })
        }
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;

    fn try_from(classes: Vec<String>) -> Result<Self> {
        LabelSpace::new(classes)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.classes
    }
}

/// One item to annotate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: Option<String>,
    pub feature: Option<Vec<f64>>,
    pub gold_label: Option<usize>,
}

impl Example {
    pub fn with_feature(id: impl Into<String>, feature: Vec<f64>, gold_label: Option<usize>) -> Self {
        Self { id: id.into(), text: None, feature: Some(feature), gold_label }
    }

    pub fn feature(&self) -> Result<&[f64]> {
        self.feature.as_deref().ok_or_else(|| Error::MissingFeature(self.id.clone()))
    }

    pub fn gold(&self) -> Result<usize> {
        self.gold_label.ok_or_else(|| Error::MissingGold(self.id.clone()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

/// A set of examples sharing one label space and one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    examples: Vec<Example>,
    label_space: LabelSpace,
    dim: Option<usize>,
}

impl Corpus {
    /// Validates gold labels and feature dimensions.
    pub fn new(examples: Vec<Example>, label_space: LabelSpace) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::NoExamples);
        }
        let mut dim = None;
        for ex in &examples {
            if let Some(g) = ex.gold_label {
                label_space.check(g)?;
            }
            if let Some(f) = &ex.feature {
                if let Some(bad) = f.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Embed {
                        id: ex.id.clone(),
                        msg: format!("non-finite feature value {bad}"),
                    });
                }
                match dim {
                    None => dim = Some(f.len()),
                    Some(d) if d != f.len() => {
                        return Err(Error::InconsistentDimension {
                            id: ex.id.clone(),
                            expected: d,
                            got: f.len(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(Self { examples, label_space, dim })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    /// Feature dimension, once at least one example carries a feature.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    /// Dimension when every example has a feature; error otherwise.
    pub fn require_features(&self) -> Result<usize> {
        if let Some(ex) = self.examples.iter().find(|e| e.feature.is_none()) {
            return Err(Error::MissingFeature(ex.id.clone()));
        }
        self.dim.ok_or(Error::NoExamples)
    }

    pub fn has_gold_labels(&self) -> bool {
        self.examples.iter().all(|e| e.gold_label.is_some())
    }

    /// Map from example id to its position.
    pub fn index_by_id(&self) -> HashMap<&str, usize> {
        self.examples.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect()
    }

    /// Reads a JSONL corpus. With `classes = None` the label space is the
    /// sorted set of label names found in the file.
    pub fn load_jsonl(path: impl AsRef<Path>, classes: Option<LabelSpace>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
            let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if rec.feature.is_none() && rec.text.is_none() {
                return Err(parse_err(format!("record {:?} has neither feature nor text", rec.id)));
            }
            records.push((i + 1, rec));
        }
        if records.is_empty() {
            return Err(Error::NoExamples);
        }
        let label_space = match classes {
            Some(space) => space,
            None => {
                let mut names: Vec<String> =
                    records.iter().filter_map(|(_, r)| r.label.clone()).collect();
                names.sort();
                names.dedup();
                LabelSpace::new(names)?
            }
        };
        let mut examples = Vec::with_capacity(records.len());
        for (line, rec) in records {
            let gold_label = match &rec.label {
                Some(name) => Some(label_space.index_of(name).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("unknown label {name:?}"),
                })?),
                None => None,
            };
            examples.push(Example { id: rec.id, text: rec.text, feature: rec.feature, gold_label });
        }
        Corpus::new(examples, label_space)
    }

    /// Writes the corpus in the same JSONL layout `load_jsonl` reads.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for ex in &self.examples {
            let rec = Record {
                id: ex.id.clone(),
                text: ex.text.clone(),
                feature: ex.feature.clone(),
                label: ex.gold_label.and_then(|g| self.label_space.name(g)).map(str::to_owned),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// How token vectors are composed into one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Exactly two tokens; feature is their concatenation (order-sensitive).
    PairConcat,
    /// Mean of the known token vectors.
    TokenAverage,
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair_concat" => Ok(Self::PairConcat),
            "token_average" => Ok(Self::TokenAverage),
            other => Err(Error::Config(format!("unknown embed mode {other:?}"))),
        }
    }
}

/// Word vectors read from a whitespace-separated `token v1 ... vE` file.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let mut table = EmbeddingTable::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
            table.insert(token, values).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        if table.vectors.is_empty() {
            return Err(Error::Parse { path: path.to_path_buf(), line: 0, msg: "empty embedding table".into() });
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(Error::Config("embedding vector is empty".into()));
        }
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: vector.len() });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    fn lookup_or_zero(&self, token: &str) -> Vec<f64> {
        self.get(token).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// Embeds one text under `mode`. Unknown tokens contribute zero vectors.
    pub fn embed_text(&self, id: &str, text: &str, mode: EmbedMode) -> Result<Vec<f64>> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        match mode {
            EmbedMode::PairConcat => {
                if tokens.len() != 2 {
                    return Err(Error::Embed {
                        id: id.to_owned(),
                        msg: format!("pair_concat needs exactly 2 tokens, got {}", tokens.len()),
                    });
                }
                let mut out = self.lookup_or_zero(tokens[0]);
                out.extend(self.lookup_or_zero(tokens[1]));
                Ok(out)
            }
            EmbedMode::TokenAverage => {
                let known: Vec<&[f64]> = tokens.iter().filter_map(|t| self.get(t)).collect();
                if known.is_empty() {
                    return Err(Error::Embed { id: id.to_owned(), msg: "no known tokens".into() });
                }
                let mut out = vec![0.0; self.dim];
                for v in &known {
                    for (o, x) in out.iter_mut().zip(v.iter()) {
                        *o += x;
                    }
                }
                let n = known.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
                Ok(out)
            }
        }
    }
}

/// Replaces the feature of every example that has text with its embedding.
/// Examples without text keep their existing feature.
pub fn embed_corpus(corpus: &Corpus, table: &EmbeddingTable, mode: EmbedMode) -> Result<Corpus> {
    let examples = corpus
        .examples
        .iter()
        .map(|ex| {
            let mut ex = ex.clone();
            if let Some(text) = &ex.text {
                ex.feature = Some(table.embed_text(&ex.id, text, mode)?);
            }
            Ok(ex)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(examples, corpus.label_space.clone())
}

/// Splits `order` (a permutation of example positions) into consecutive
/// batches; the last batch may be short.
pub fn make_batches<'a>(corpus: &'a Corpus, batch_size: usize, order: &[usize]) -> Result<Vec<Vec<&'a Example>>> {
    if batch_size == 0 {
        return Err(Error::Batch("batch_size must be positive".into()));
    }
    check_permutation(order, corpus.len())?;
    Ok(order
        .chunks(batch_size)
        .map(|chunk| chunk.iter().map(|&i| &corpus.examples[i]).collect())
        .collect())
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(Error::Batch(format!("order has {} entries, expected {n}", order.len())));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Batch(format!("order is not a permutation (index {i})")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn two_class() -> LabelSpace {
        LabelSpace::new(["neg", "pos"]).unwrap()
    }

    #[test]
    fn loads_two_records() {
        let f = write_tmp(
            "{\"id\":\"a\",\"feature\":[1,2,3,4],\"label\":\"pos\"}\n{\"id\":\"b\",\"feature\":[0,0,0,1],\"label\":\"neg\"}\n",
        );
        let c = Corpus::load_jsonl(f.path(), None).unwrap();
        assert_eq!(c.dim(), Some(4));
        assert_eq!(c.len(), 2);
        assert_eq!(c.label_space().names(), &["neg", "pos"]);
        assert_eq!(c.examples()[0].gold_label, Some(1));
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write_tmp("\n");
        assert!(matches!(Corpus::load_jsonl(f.path(), Some(two_class())), Err(Error::NoExamples)));
    }

    #[test]
    fn inconsistent_dimension_names_the_record() {
        let f = write_tmp("{\"id\":\"a\",\"feature\":[1,2,3,4]}\n{\"id\":\"b\",\"feature\":[1,2,3]}\n");
        match Corpus::load_jsonl(f.path(), Some(two_class())) {
            Err(Error::InconsistentDimension { id, expected: 4, got: 3 }) => assert_eq!(id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_record_reports_line() {
        let f = write_tmp("{\"id\":\"a\",\"feature\":[1]}\nnot json\n");
        match Corpus::load_jsonl(f.path(), Some(two_class())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("{\"id\":\"a\"}\n");
        assert!(matches!(Corpus::load_jsonl(f.path(), Some(two_class())), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn text_only_records_stay_featureless() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"tree leaf\",\"label\":\"pos\"}\n");
        let c = Corpus::load_jsonl(f.path(), Some(two_class())).unwrap();
        assert_eq!(c.dim(), None);
        assert!(c.require_features().is_err());
    }

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::default();
        t.insert("tree", vec![1.0, 0.0, 0.0]).unwrap();
        t.insert("leaf", vec![0.0, 1.0, 0.0]).unwrap();
        t
    }

    #[test]
    fn pair_concat_concatenates() {
        let v = table().embed_text("x", "tree leaf", EmbedMode::PairConcat).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(table().embed_text("x", "tree", EmbedMode::PairConcat).is_err());
        // unknown tokens become zeros
        let v = table().embed_text("x", "tree oak", EmbedMode::PairConcat).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn token_average_means_known_tokens() {
        let mut t = EmbeddingTable::default();
        t.insert("a", vec![2.0, 0.0]).unwrap();
        t.insert("b", vec![0.0, 2.0]).unwrap();
        assert_eq!(t.embed_text("x", "a b", EmbedMode::TokenAverage).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            EmbeddingTable::default().embed_text("x", "a b", EmbedMode::TokenAverage),
            Err(Error::Embed { .. })
        ));
    }

    #[test]
    fn embedding_table_file_parses() {
        let f = write_tmp("tree 1 0 0\nleaf 0 1 0\n");
        let t = EmbeddingTable::load(f.path()).unwrap();
        assert_eq!(t.dim(), 3);
        let bad = write_tmp("tree 1 0 0\nleaf 0 1\n");
        assert!(EmbeddingTable::load(bad.path()).is_err());
    }

    #[test]
    fn embed_corpus_sets_dimension() {
        let c = Corpus::new(
            vec![Example { id: "a".into(), text: Some("tree leaf".into()), feature: None, gold_label: Some(0) }],
            two_class(),
        )
        .unwrap();
        let e = embed_corpus(&c, &table(), EmbedMode::PairConcat).unwrap();
        assert_eq!(e.require_features().unwrap(), 6);
    }

    fn five() -> Corpus {
        let ex = (0..5).map(|i| Example::with_feature(format!("e{i}"), vec![i as f64], None)).collect();
        Corpus::new(ex, two_class()).unwrap()
    }

    #[test]
    fn batches_follow_order() {
        let c = five();
        let sizes: Vec<usize> = make_batches(&c, 2, &[0, 1, 2, 3, 4]).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(make_batches(&c, 9, &[4, 3, 2, 1, 0]).unwrap().len(), 1);
        assert!(make_batches(&c, 0, &[0, 1, 2, 3, 4]).is_err());
        assert!(make_batches(&c, 2, &[0, 1, 1, 3, 4]).is_err());
        assert!(make_batches(&c, 2, &[0, 1, 2]).is_err());
    }

    #[test]
    fn label_space_invariants() {
        assert!(LabelSpace::new(["a"]).is_err());
        assert!(LabelSpace::new(["a", "a"]).is_err());
        let s: LabelSpace = serde_json::from_str("[\"x\",\"y\"]").unwrap();
        assert_eq!(s.index_of("y"), Some(1));
        assert!(serde_json::from_str::<LabelSpace>("[\"x\"]").is_err());
    }
}
