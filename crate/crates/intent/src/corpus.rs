//! Order-preserving parallel weak labeling of large query files.

use std::io::{BufRead, Write};
use std::ops::Range;
use std::time::{Duration, Instant};

use intent_core::eval::{PermutationJob, PermutationRunner};
use intent_core::labeling::Labeler;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{parse_line, Record, RecordReader};

/// Lines handed to the worker pool at a time.
pub const CHUNK_LINES: usize = 16 * 1024;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub lines: usize,
    pub labeled: usize,
    pub malformed: usize,
    pub per_label: [usize; 3],
    pub defaulted: usize,
    pub tie_broken: usize,
    pub workers: usize,
    pub elapsed_ms: f64,
    pub queries_per_sec: f64,
}

/// Build a pool with `workers` threads, or `None` for serial execution.
pub fn pool(workers: usize) -> Result<Option<rayon::ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::Data(format!("cannot start worker pool: {e}")))
}

/// Label one input line, producing the output JSONL line.
fn label_line(labeler: &Labeler, record: Result<Record>) -> Result<(String, Record)> {
    let record = record?;
    let query = record.to_query()?;
    let weak = labeler.label(&query);
    let out = Record::from_weak(&query, &weak);
    Ok((out.to_line(), out))
}

/// Label every record from `reader`, writing weak-label JSONL to `out` in
/// input order. Malformed lines are logged and counted, never fatal. The
/// output is byte-identical for any worker count.
pub fn label_corpus<R: BufRead, W: Write>(
    labeler: &Labeler,
    mut reader: RecordReader<R>,
    mut out: W,
    workers: usize,
) -> Result<LabelStats> {
    let started = Instant::now();
    let pool = pool(workers)?;
    let mut stats = LabelStats { workers: workers.max(1), ..Default::default() };
    let mut chunk: Vec<(usize, String)> = Vec::with_capacity(CHUNK_LINES);
    let mut done = false;
    while !done {
        chunk.clear();
        while chunk.len() < CHUNK_LINES {
            match reader.next_line() {
                Some(line) => chunk.push(line?),
                None => {
                    done = true;
                    break;
                }
            }
        }
        let (format, layout) = (reader.format(), *reader.layout());
        let work = |(_, line): &(usize, String)| label_line(labeler, parse_line(format, &layout, line));
        let results: Vec<Result<(String, Record)>> = match &pool {
            Some(p) => p.install(|| chunk.par_iter().map(work).collect()),
            None => chunk.iter().map(work).collect(),
        };
        for ((line_no, _), r) in chunk.iter().zip(results) {
            stats.lines += 1;
            match r {
                Ok((line, rec)) => {
                    out.write_all(line.as_bytes())?;
                    out.write_all(b"\n")?;
                    stats.labeled += 1;
                    if let Some(l) = rec.label {
                        stats.per_label[l.index()] += 1;
                    }
                    if rec.defaulted == Some(true) {
                        stats.defaulted += 1;
                    }
                }
                Err(e) => {
                    log::warn!("line {line_no}: skipping: {e}");
                    stats.malformed += 1;
                }
            }
        }
    }
    out.flush()?;
    finish_timing(&mut stats, started.elapsed());
    Ok(stats)
}

fn finish_timing(stats: &mut LabelStats, elapsed: Duration) {
    stats.elapsed_ms = elapsed.as_secs_f64() * 1000.0;
    let secs = elapsed.as_secs_f64();
    stats.queries_per_sec = if secs > 0.0 { stats.labeled as f64 / secs } else { f64::INFINITY };
}

/// Permutation iterations spread over a rayon pool. Results equal
/// [`intent_core::eval::Serial`] because every iteration seeds its own
/// stream.
#[derive(Debug, Clone, Copy)]
pub struct Parallel {
    pub chunk: usize,
}

impl Default for Parallel {
    fn default() -> Self {
        Parallel { chunk: 64 }
    }
}

impl PermutationRunner for Parallel {
    fn exceedances(&self, job: &PermutationJob<'_>) -> usize {
        let chunk = self.chunk.max(1);
        let ranges: Vec<Range<usize>> =
            (0..job.iterations).step_by(chunk).map(|s| s..(s + chunk).min(job.iterations)).collect();
        ranges.into_par_iter().map(|r| job.exceedances(r)).sum()
    }
}
