//! Data model, ingestion, and curation for paper–description pairs and
//! human gold annotations.
//!
//! Corpus and annotation files are UTF-8 JSON Lines, one record per line.
//! See the README for the record layout.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::provider::{EmbeddingProvider, ProviderError};
use crate::verdict::Dimension;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("author list is empty")]
    EmptyAuthorList,
    #[error("pair `{id}` is missing curation field `{field}`; run `curate` first")]
    MissingCuration { id: String, field: &'static str },
    #[error("embedding provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("embedding has zero magnitude")]
    ZeroMagnitudeEmbedding,
    #[error("embedding dimensions differ: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("text for `{what}` is empty")]
    EmptyText { what: &'static str },
}

/// One titled block of document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub text: String,
}

/// A source research paper; the full text the judge evaluates against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePaper {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub authors: Vec<String>,
    pub body: Vec<Section>,
}

impl SourcePaper {
    /// Full text: title, abstract, then every body section in order.
    pub fn full_text(&self) -> String {
        let mut out = format!("Title: {}\n\nAbstract: {}\n", self.title, self.abstract_text);
        for section in &self.body {
            out.push_str(&format!("\n## {}\n{}\n", section.heading, section.text));
        }
        out
    }

    /// Title plus abstract, the text embedded for curation similarity.
    pub fn title_abstract(&self) -> String {
        format!("{}\n{}", self.title, self.abstract_text)
    }
}

/// A machine-drafted patent description bound to its source paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedDescription {
    pub id: String,
    pub paper_id: String,
    pub sections: Vec<Section>,
    #[serde(default)]
    pub generator_meta: BTreeMap<String, String>,
}

impl GeneratedDescription {
    pub fn full_text(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            out.push_str(&format!("## {}\n{}\n\n", section.heading, section.text));
        }
        out
    }

    /// Front matter used as the title-equivalent text for curation
    /// similarity: heading and text of the first non-empty section.
    pub fn front_matter(&self) -> String {
        self.sections
            .iter()
            .find(|s| !s.text.trim().is_empty() || !s.heading.trim().is_empty())
            .map(|s| format!("{}\n{}", s.heading, s.text))
            .unwrap_or_default()
    }
}

/// One corpus item: source paper, generated description, curation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperPatentPair {
    pub paper: SourcePaper,
    pub description: GeneratedDescription,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_overlap: Option<f64>,
}

impl PaperPatentPair {
    /// Identifier annotations and evaluation records key on.
    pub fn item_id(&self) -> &str {
        &self.description.id
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let fail = |field: &str, message: String| CorpusError::Schema {
            line,
            field: field.to_string(),
            message,
        };
        if self.paper.id.is_empty() {
            return Err(fail("paper.id", "must be non-empty".into()));
        }
        if self.paper.authors.is_empty() {
            return Err(fail("paper.authors", "must be non-empty".into()));
        }
        if self.description.id.is_empty() {
            return Err(fail("description.id", "must be non-empty".into()));
        }
        if self.description.paper_id != self.paper.id {
            return Err(fail(
                "description.paper_id",
                format!(
                    "`{}` does not match paper id `{}`",
                    self.description.paper_id, self.paper.id
                ),
            ));
        }
        if self
            .description
            .sections
            .iter()
            .all(|s| s.text.trim().is_empty())
        {
            return Err(fail("description.sections", "total text is empty".into()));
        }
        if let Some(s) = self.similarity {
            if !(-1.0..=1.0).contains(&s) {
                return Err(fail("similarity", format!("{s} outside [-1, 1]")));
            }
        }
        if let Some(o) = self.author_overlap {
            if !(0.0..=1.0).contains(&o) {
                return Err(fail("author_overlap", format!("{o} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-item scores from multiple human annotators, annotator-major, four
/// columns in dimension order TCF, DP, SC, LPC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub item_id: String,
    pub annotator_ids: Vec<String>,
    pub scores: Vec<Vec<u8>>,
}

impl AnnotationSet {
    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let fail = |field: &str, message: String| CorpusError::Schema {
            line,
            field: field.to_string(),
            message,
        };
        if self.item_id.is_empty() {
            return Err(fail("item_id", "must be non-empty".into()));
        }
        if self.scores.len() != self.annotator_ids.len() {
            return Err(fail(
                "scores",
                format!(
                    "{} score rows for {} annotators",
                    self.scores.len(),
                    self.annotator_ids.len()
                ),
            ));
        }
        if self.scores.is_empty() {
            return Err(fail("scores", "at least one annotator required".into()));
        }
        for (i, row) in self.scores.iter().enumerate() {
            if row.len() != Dimension::ALL.len() {
                return Err(fail(
                    "scores",
                    format!("row {i} has {} columns, expected 4", row.len()),
                ));
            }
            if let Some(bad) = row.iter().find(|s| !(1..=5).contains(*s)) {
                return Err(fail("scores", format!("row {i} contains {bad}, outside 1..=5")));
            }
        }
        Ok(())
    }

    /// Scores for one dimension across annotators.
    pub fn dimension_scores(&self, dim: Dimension) -> Vec<u8> {
        let col = dim.index();
        self.scores.iter().map(|row| row[col]).collect()
    }
}

// --- file ingestion ---------------------------------------------------------

fn read_jsonl<T, F>(path: &Path, mut per_line: F) -> Result<Vec<T>, CorpusError>
where
    T: serde::de::DeserializeOwned,
    F: FnMut(&T, usize) -> Result<(), CorpusError>,
{
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let record: T = serde_path_to_error::deserialize(de).map_err(|err| CorpusError::Schema {
            line: line_no,
            field: err.path().to_string(),
            message: err.inner().to_string(),
        })?;
        per_line(&record, line_no)?;
        out.push(record);
    }
    Ok(out)
}

/// Load a JSONL corpus, preserving file order. Rejects malformed lines
/// (with line number and offending field) and duplicate ids.
pub fn load_corpus(path: &Path) -> Result<Vec<PaperPatentPair>, CorpusError> {
    let mut seen = HashSet::new();
    read_jsonl(path, |pair: &PaperPatentPair, line| {
        pair.validate(line)?;
        if !seen.insert(pair.item_id().to_string()) {
            return Err(CorpusError::DuplicateId {
                line,
                id: pair.item_id().to_string(),
            });
        }
        Ok(())
    })
}

/// Write a corpus as JSONL, one pair per line, preserving order.
pub fn save_corpus(path: &Path, pairs: &[PaperPatentPair]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for pair in pairs {
        let json = serde_json::to_string(pair).expect("pair serializes");
        writeln!(file, "{json}").map_err(io_err)?;
    }
    file.flush().map_err(io_err)
}

/// Load a JSONL annotation file.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationSet>, CorpusError> {
    let mut seen = HashSet::new();
    read_jsonl(path, |ann: &AnnotationSet, line| {
        ann.validate(line)?;
        if !seen.insert(ann.item_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line,
                id: ann.item_id.clone(),
            });
        }
        Ok(())
    })
}

// --- curation ----------------------------------------------------------------

/// Lowercase, strip combining diacritics, collapse interior whitespace.
pub fn normalize_author(name: &str) -> String {
    let lowered = name.to_lowercase();
    let stripped: String = decompose_latin(&lowered);
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps precomposed Latin letters onto their base letter. Covers the
/// Latin-1 Supplement and Latin Extended-A ranges, which is as far as
/// name normalization goes here; anything else passes through.
fn decompose_latin(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            'à'..='å' | 'ā' | 'ă' | 'ą' => 'a',
            'ç' | 'ć' | 'ĉ' | 'ċ' | 'č' => 'c',
            'ď' | 'đ' => 'd',
            'è'..='ë' | 'ē' | 'ĕ' | 'ė' | 'ę' | 'ě' => 'e',
            'ĝ' | 'ğ' | 'ġ' | 'ģ' => 'g',
            'ĥ' | 'ħ' => 'h',
            'ì'..='ï' | 'ĩ' | 'ī' | 'ĭ' | 'į' | 'ı' => 'i',
            'ĵ' => 'j',
            'ķ' => 'k',
            'ĺ' | 'ļ' | 'ľ' | 'ŀ' | 'ł' => 'l',
            'ñ' | 'ń' | 'ņ' | 'ň' => 'n',
            'ò'..='ö' | 'ø' | 'ō' | 'ŏ' | 'ő' => 'o',
            'ŕ' | 'ŗ' | 'ř' => 'r',
            'ś' | 'ŝ' | 'ş' | 'š' => 's',
            'ţ' | 'ť' | 'ŧ' => 't',
            'ù'..='ü' | 'ũ' | 'ū' | 'ŭ' | 'ů' | 'ű' | 'ų' => 'u',
            'ŵ' => 'w',
            'ý' | 'ÿ' | 'ŷ' => 'y',
            'ź' | 'ż' | 'ž' => 'z',
            other => other,
        })
        .collect()
}

/// |set(a) ∩ set(b)| / min(|set(a)|, |set(b)|) over normalized names.
pub fn author_overlap_ratio(a: &[String], b: &[String]) -> Result<f64, CorpusError> {
    if a.is_empty() || b.is_empty() {
        return Err(CorpusError::EmptyAuthorList);
    }
    let set_a: HashSet<String> = a.iter().map(|n| normalize_author(n)).collect();
    let set_b: HashSet<String> = b.iter().map(|n| normalize_author(n)).collect();
    let intersection = set_a.intersection(&set_b).count();
    Ok(intersection as f64 / set_a.len().min(set_b.len()) as f64)
}

/// Cosine similarity between the embedding of the paper's title+abstract and
/// the embedding of the description's front matter.
pub async fn title_abstract_similarity(
    paper: &SourcePaper,
    description: &GeneratedDescription,
    embed: &dyn EmbeddingProvider,
) -> Result<f64, CorpusError> {
    let left = paper.title_abstract();
    let right = description.front_matter();
    if left.trim().is_empty() {
        return Err(CorpusError::EmptyText {
            what: "paper title+abstract",
        });
    }
    if right.trim().is_empty() {
        return Err(CorpusError::EmptyText {
            what: "description front matter",
        });
    }
    let u = embed.embed(&left).await?;
    let v = embed.embed(&right).await?;
    cosine(&u, &v)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, CorpusError> {
    if u.len() != v.len() {
        return Err(CorpusError::DimensionMismatch {
            a: u.len(),
            b: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(CorpusError::ZeroMagnitudeEmbedding);
    }
    Ok(dot / (nu * nv))
}

/// Retain pairs with similarity >= sim_threshold and author_overlap >=
/// overlap_threshold, preserving input order. Pairs missing either field
/// are an error; run the curation pass first.
pub fn filter_pairs(
    pairs: &[PaperPatentPair],
    sim_threshold: f64,
    overlap_threshold: f64,
) -> Result<Vec<PaperPatentPair>, CorpusError> {
    let mut kept = Vec::new();
    for pair in pairs {
        let similarity = pair.similarity.ok_or_else(|| CorpusError::MissingCuration {
            id: pair.item_id().to_string(),
            field: "similarity",
        })?;
        let overlap = pair
            .author_overlap
            .ok_or_else(|| CorpusError::MissingCuration {
                id: pair.item_id().to_string(),
                field: "author_overlap",
            })?;
        if similarity >= sim_threshold && overlap >= overlap_threshold {
            kept.push(pair.clone());
        }
    }
    Ok(kept)
}

/// Fill in absent similarity / author_overlap fields. Present values are
/// never recomputed.
pub async fn curate_pair(
    pair: &mut PaperPatentPair,
    embed: &dyn EmbeddingProvider,
    patent_authors: Option<&[String]>,
) -> Result<(), CorpusError> {
    if pair.similarity.is_none() {
        pair.similarity =
            Some(title_abstract_similarity(&pair.paper, &pair.description, embed).await?);
    }
    if pair.author_overlap.is_none() {
        if let Some(inventors) = patent_authors {
            pair.author_overlap = Some(author_overlap_ratio(&pair.paper.authors, inventors)?);
        }
    }
    Ok(())
}

/// Per-dimension arithmetic mean over annotators, order TCF, DP, SC, LPC.
pub fn aggregate_gold(ann: &AnnotationSet) -> [f64; 4] {
    let n = ann.scores.len() as f64;
    let mut out = [0.0f64; 4];
    for row in &ann.scores {
        for (acc, s) in out.iter_mut().zip(row) {
            *acc += f64::from(*s);
        }
    }
    for acc in &mut out {
        *acc /= n;
    }
    out
}
