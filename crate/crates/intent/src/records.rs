//! JSONL records and TSV ingestion.
//!
//! Every data file is JSON Lines: one UTF-8 object per LF-terminated line,
//!
//! ```text
//! {"id": str?, "query": str, "label": str?, "confidence": float?, "provenance": str?}
//! ```
//!
//! Weak-label outputs additionally carry `defaulted` and `votes`. A record
//! whose `label` is absent is a prediction that could not be parsed.
//! Fine-tuning exports use the reduced form `{"query": str, "label": str}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use intent_core::curation::{LabeledQuery, ScoredQuery};
use intent_core::labeling::WeakLabel;
use intent_core::{IntentLabel, Prediction, Provenance, Query, Vote};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<IntentLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaulted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<BTreeMap<String, Vote>>,
}

impl Record {
    pub fn parse(line: &str) -> Result<Record> {
        serde_json::from_str(line).map_err(|e| Error::Data(format!("bad JSONL record: {e}")))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// The normalized query, keeping the explicit id if present.
    pub fn to_query(&self) -> Result<Query> {
        Ok(Query::new(self.id.clone(), &self.query)?)
    }

    /// Query key: explicit id, else content hash of the normalized text.
    pub fn key(&self) -> Result<String> {
        Ok(self.to_query()?.key())
    }

    pub fn from_weak(query: &Query, weak: &WeakLabel) -> Record {
        Record {
            id: Some(query.key()),
            query: query.text().to_string(),
            label: Some(weak.label),
            confidence: Some(weak.confidence),
            provenance: Some(Provenance::Weak),
            defaulted: Some(weak.defaulted),
            votes: Some(weak.votes.clone()),
        }
    }

    pub fn from_labeled(r: &LabeledQuery) -> Record {
        Record { id: Some(r.id()), query: r.query.text().to_string(), label: Some(r.label), ..Default::default() }
    }

    pub fn from_scored(s: &ScoredQuery, provenance: Option<Provenance>) -> Record {
        Record {
            id: Some(s.query.key()),
            query: s.query.text().to_string(),
            label: Some(s.label),
            confidence: Some(s.confidence),
            provenance,
            ..Default::default()
        }
    }

    pub fn from_prediction(query: &Query, p: &Prediction) -> Record {
        Record {
            id: Some(p.query_id.clone()),
            query: query.text().to_string(),
            label: Some(p.label),
            confidence: Some(p.confidence),
            provenance: Some(p.provenance),
            ..Default::default()
        }
    }

    pub fn to_labeled(&self) -> Result<LabeledQuery> {
        let label = self.label.ok_or_else(|| Error::Data(format!("record {:?} has no label", self.query)))?;
        Ok(LabeledQuery { query: self.to_query()?, label })
    }

    pub fn to_scored(&self) -> Result<ScoredQuery> {
        let label = self.label.ok_or_else(|| Error::Data(format!("record {:?} has no label", self.query)))?;
        let confidence =
            self.confidence.ok_or_else(|| Error::Data(format!("record {:?} has no confidence", self.query)))?;
        Ok(ScoredQuery { query: self.to_query()?, label, confidence })
    }

    /// Prediction view; `None` when the label is absent (unparseable). A
    /// missing confidence is read as 1.
    pub fn to_prediction(&self, default_provenance: Provenance) -> Result<Option<Prediction>> {
        let Some(label) = self.label else { return Ok(None) };
        let p = Prediction::new(
            self.key()?,
            label,
            self.confidence.unwrap_or(1.0),
            self.provenance.unwrap_or(default_provenance),
        )?;
        Ok(Some(p))
    }
}

/// Fine-tuning export line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub query: String,
    pub label: IntentLabel,
}

impl From<&LabeledQuery> for ExportRecord {
    fn from(r: &LabeledQuery) -> Self {
        ExportRecord { query: r.query.text().to_string(), label: r.label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// `.tsv` / `.tab` files are TSV, everything else JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("tab") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

/// Column layout of a tab-separated query file. The default matches the
/// ORCAS layout: query id in column 0, query text in column 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvLayout {
    pub query_column: usize,
    pub id_column: Option<usize>,
    pub label_column: Option<usize>,
}

impl Default for TsvLayout {
    fn default() -> Self {
        TsvLayout { query_column: 1, id_column: Some(0), label_column: None }
    }
}

impl TsvLayout {
    pub fn parse_line(&self, line: &str) -> Result<Record> {
        let cols: Vec<&str> = line.split('\t').collect();
        let get = |i: usize| {
            cols.get(i).copied().ok_or_else(|| Error::Data(format!("missing column {i} in TSV line")))
        };
        let id = match self.id_column {
            Some(i) => Some(get(i)?.trim().to_string()).filter(|s| !s.is_empty()),
            None => None,
        };
        let label = match self.label_column {
            Some(i) => Some(get(i)?.parse::<IntentLabel>()?),
            None => None,
        };
        Ok(Record { id, query: get(self.query_column)?.to_string(), label, ..Default::default() })
    }
}

/// Line-oriented reader over JSONL or TSV. Each item is the 1-based line
/// number and the parse result; blank lines are skipped.
pub struct RecordReader<R> {
    lines: io::Lines<R>,
    format: Format,
    layout: TsvLayout,
    line_no: usize,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, format: Format, layout: TsvLayout) -> Self {
        RecordReader { lines: reader.lines(), format, layout, line_no: 0 }
    }

    /// Raw lines for callers that parse in parallel.
    pub fn next_line(&mut self) -> Option<io::Result<(usize, String)>> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(Ok((self.line_no, l))),
                Err(e) => return Some(Err(e)),
            }
        }
    }

    pub fn parse(&self, line: &str) -> Result<Record> {
        parse_line(self.format, &self.layout, line)
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn layout(&self) -> &TsvLayout {
        &self.layout
    }
}

pub fn parse_line(format: Format, layout: &TsvLayout, line: &str) -> Result<Record> {
    match format {
        Format::Jsonl => Record::parse(line),
        Format::Tsv => layout.parse_line(line),
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = (usize, Result<Record>);

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_line()? {
            Ok((n, line)) => Some((n, self.parse(&line))),
            Err(e) => Some((self.line_no, Err(Error::Io(e)))),
        }
    }
}

pub fn open_records(path: &Path, layout: TsvLayout) -> Result<RecordReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(RecordReader::new(BufReader::new(file), Format::from_path(path), layout))
}

/// Read every record, failing on the first malformed line.
pub fn read_records(path: &Path, layout: TsvLayout) -> Result<Vec<Record>> {
    open_records(path, layout)?
        .map(|(n, r)| r.map_err(|e| Error::Data(format!("{}:{n}: {e}", path.display()))))
        .collect()
}

/// Read every record, logging and skipping malformed lines. Returns the
/// records and the number skipped.
pub fn read_records_lenient(path: &Path, layout: TsvLayout) -> Result<(Vec<Record>, usize)> {
    let mut records = Vec::new();
    let mut bad = 0;
    for (n, r) in open_records(path, layout)? {
        match r {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{}:{n}: skipping malformed line: {e}", path.display());
                bad += 1;
            }
        }
    }
    Ok((records, bad))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<usize> {
    let mut out = create(path)?;
    let mut n = 0;
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
