//! Corpus files: one JSON record per line, one query group per record.
//!
//! ```text
//! {"query_id":"q1","query":"jaguar","panes":[{"pane_id":"p1","question":"...","options":["..",".."],"gold":{"quality":4}}]}
//! ```
//!
//! Pane ids double as unit ids and must be unique across the file.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use hitl_core::unit::{ClarificationPane, MIN_PANES_PER_QUERY};
use hitl_core::{AnnotationUnit, Label, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading corpus: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invariant { line: usize, reason: String },
    #[error("duplicate unit id {0}")]
    DuplicateUnit(String),
    #[error("subset fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("corpus is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PaneRecord {
    pane_id: String,
    question: String,
    options: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    gold: BTreeMap<TaskKind, Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct QueryRecord {
    query_id: String,
    query: String,
    panes: Vec<PaneRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub query_id: String,
    pub query: String,
    pub pane_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub queries: Vec<QueryGroup>,
    pub units: Vec<AnnotationUnit>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject query groups with fewer than three panes instead of warning.
    pub strict_groups: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub queries: usize,
    pub units: usize,
    pub min_panes_per_query: usize,
    pub max_panes_per_query: usize,
    pub min_options: usize,
    pub max_options: usize,
    pub gold_counts: BTreeMap<TaskKind, [usize; 5]>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn unit(&self, unit_id: &str) -> Option<&AnnotationUnit> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }

    pub fn gold_index(&self) -> HashMap<(String, TaskKind), Label> {
        self.units
            .iter()
            .flat_map(|u| u.gold.iter().map(move |(t, l)| ((u.unit_id.clone(), *t), *l)))
            .collect()
    }

    /// Units of one query, in file order.
    pub fn group_units(&self, query_id: &str) -> Vec<&AnnotationUnit> {
        self.units.iter().filter(|u| u.query_id == query_id).collect()
    }

    pub fn summary(&self) -> CorpusSummary {
        let panes: Vec<usize> = self.queries.iter().map(|q| q.pane_ids.len()).collect();
        let options: Vec<usize> = self.units.iter().map(|u| u.pane.options.len()).collect();
        let mut gold_counts: BTreeMap<TaskKind, [usize; 5]> = BTreeMap::new();
        for u in &self.units {
            for (t, l) in &u.gold {
                gold_counts.entry(*t).or_default()[l.index()] += 1;
            }
        }
        CorpusSummary {
            queries: self.queries.len(),
            units: self.units.len(),
            min_panes_per_query: panes.iter().copied().min().unwrap_or(0),
            max_panes_per_query: panes.iter().copied().max().unwrap_or(0),
            min_options: options.iter().copied().min().unwrap_or(0),
            max_options: options.iter().copied().max().unwrap_or(0),
            gold_counts,
        }
    }

    /// Keep only units matching `keep`, dropping emptied query groups.
    fn filtered(&self, keep: &HashSet<&str>) -> Corpus {
        let units: Vec<AnnotationUnit> =
            self.units.iter().filter(|u| keep.contains(u.unit_id.as_str())).cloned().collect();
        let queries = self
            .queries
            .iter()
            .filter_map(|q| {
                let pane_ids: Vec<String> =
                    q.pane_ids.iter().filter(|p| keep.contains(p.as_str())).cloned().collect();
                (!pane_ids.is_empty()).then(|| QueryGroup { pane_ids, ..q.clone() })
            })
            .collect();
        Corpus { queries, units }
    }
}

/// Loader result: the corpus plus non-fatal findings.
#[derive(Debug)]
pub struct Loaded {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
}

pub fn load_corpus(path: &Path, options: LoadOptions) -> Result<Loaded, CorpusError> {
    read_corpus(File::open(path)?, options)
}

pub fn read_corpus<R: Read>(reader: R, options: LoadOptions) -> Result<Loaded, CorpusError> {
    let mut corpus = Corpus::default();
    let mut warnings = Vec::new();
    let mut seen_units = HashSet::new();
    let mut seen_queries = HashSet::new();

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, reason: e.to_string() })?;
        if !seen_queries.insert(record.query_id.clone()) {
            return Err(CorpusError::Invariant {
                line: line_no,
                reason: format!("query {} appears twice", record.query_id),
            });
        }
        if record.panes.len() < MIN_PANES_PER_QUERY {
            let msg = format!(
                "query {} has {} panes (< {MIN_PANES_PER_QUERY}); list-wise rating will be weak",
                record.query_id,
                record.panes.len()
            );
            if options.strict_groups {
                return Err(CorpusError::Invariant { line: line_no, reason: msg });
            }
            warnings.push(format!("line {line_no}: {msg}"));
        }
        let mut pane_ids = Vec::with_capacity(record.panes.len());
        for p in record.panes {
            let pane = ClarificationPane { pane_id: p.pane_id, question: p.question, options: p.options };
            pane.validate()
                .map_err(|e| CorpusError::Invariant { line: line_no, reason: e.to_string() })?;
            if !seen_units.insert(pane.pane_id.clone()) {
                return Err(CorpusError::DuplicateUnit(pane.pane_id));
            }
            pane_ids.push(pane.pane_id.clone());
            corpus.units.push(AnnotationUnit {
                unit_id: pane.pane_id.clone(),
                query_id: record.query_id.clone(),
                query: record.query.clone(),
                pane,
                gold: p.gold,
            });
        }
        corpus.queries.push(QueryGroup { query_id: record.query_id, query: record.query, pane_ids });
    }
    Ok(Loaded { corpus, warnings })
}

pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    let by_id: HashMap<&str, &AnnotationUnit> =
        corpus.units.iter().map(|u| (u.unit_id.as_str(), u)).collect();
    for q in &corpus.queries {
        let panes = q
            .pane_ids
            .iter()
            .filter_map(|id| by_id.get(id.as_str()))
            .map(|u| PaneRecord {
                pane_id: u.pane.pane_id.clone(),
                question: u.pane.question.clone(),
                options: u.pane.options.clone(),
                gold: u.gold.clone(),
            })
            .collect();
        let record = QueryRecord { query_id: q.query_id.clone(), query: q.query.clone(), panes };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> io::Result<()> {
    write_corpus(corpus, File::create(path)?)
}

/// Number of units drawn for a fraction: round half up, at least one.
pub fn subset_size(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64 + 0.5).floor() as usize).clamp(1, total)
}

/// Split units uniformly at random into (subset, remainder). Both halves keep
/// the corpus order.
pub fn sample_subset(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::Fraction(fraction));
    }
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let n = corpus.len();
    let k = subset_size(n, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: HashSet<usize> = rand::seq::index::sample(&mut rng, n, k).into_iter().collect();
    let (mut inside, mut outside) = (HashSet::new(), HashSet::new());
    for (i, u) in corpus.units.iter().enumerate() {
        if picked.contains(&i) {
            inside.insert(u.unit_id.as_str());
        } else {
            outside.insert(u.unit_id.as_str());
        }
    }
    Ok((corpus.filtered(&inside), corpus.filtered(&outside)))
}

/// Convert a tab-separated dump (with a header row) into a corpus.
///
/// Recognised columns: `query`, `question`, `option_1`..`option_5` (required
/// in practice: at least two options), optional `query_id`, `pane_id`, and
/// gold columns named after the tasks (`preference`, `quality`, `coverage`,
/// `diversity`, `option_order`). Missing ids are derived in first-seen order.
pub fn convert_tsv<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse { line: 1, reason: e.to_string() })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let query_col = col("query").ok_or(CorpusError::Parse { line: 1, reason: "missing `query` column".into() })?;
    let question_col =
        col("question").ok_or(CorpusError::Parse { line: 1, reason: "missing `question` column".into() })?;
    let option_cols: Vec<usize> = (1..=6).filter_map(|i| col(&format!("option_{i}"))).collect();
    let query_id_col = col("query_id");
    let pane_id_col = col("pane_id");
    let gold_cols: Vec<(TaskKind, usize)> =
        TaskKind::ALL.iter().filter_map(|t| col(t.as_str()).map(|c| (*t, c))).collect();

    let mut records: Vec<QueryRecord> = Vec::new();
    let mut by_query: HashMap<String, usize> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CorpusError::Parse { line, reason: e.to_string() })?;
        let field = |c: usize| row.get(c).map(str::trim).unwrap_or("");
        let query = field(query_col).to_string();
        let query_id = match query_id_col.map(field).filter(|s| !s.is_empty()) {
            Some(id) => id.to_string(),
            None => match by_query.get(&query) {
                Some(&ri) => records[ri].query_id.clone(),
                None => format!("q{:04}", records.len() + 1),
            },
        };
        let ri = match records.iter().position(|r| r.query_id == query_id) {
            Some(ri) => ri,
            None => {
                records.push(QueryRecord { query_id: query_id.clone(), query: query.clone(), panes: Vec::new() });
                by_query.insert(query.clone(), records.len() - 1);
                records.len() - 1
            }
        };
        let pane_id = pane_id_col
            .map(field)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("{}-p{}", query_id, records[ri].panes.len() + 1));
        let options: Vec<String> = option_cols
            .iter()
            .map(|&c| field(c))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let mut gold = BTreeMap::new();
        for &(task, c) in &gold_cols {
            let raw = field(c);
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw
                .parse()
                .map_err(|_| CorpusError::Parse { line, reason: format!("{task} value `{raw}` is not a number") })?;
            let label = Label::new(value.round() as i64)
                .map_err(|e| CorpusError::Invariant { line, reason: e.to_string() })?;
            gold.insert(task, label);
        }
        records[ri].panes.push(PaneRecord { pane_id, question: field(question_col).to_string(), options, gold });
    }

    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r).map_err(|e| CorpusError::Parse { line: 0, reason: e.to_string() })?;
        buf.push(b'\n');
    }
    Ok(read_corpus(buf.as_slice(), LoadOptions::default())?.corpus)
}
