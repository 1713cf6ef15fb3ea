//! Scoring and significance testing.
//!
//! Predictions are aligned to the gold set as [`Outcome`]s: a label, or `None`
//! for a missing or unparseable prediction. `None` counts against recall of
//! the gold class and against no class's precision, i.e. it behaves like a
//! fourth label that is never correct.
//!
//! Per-class precision or recall with a zero denominator is reported as 0 and
//! flagged, so macro averages stay defined.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::Range;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{GoldSet, IntentLabel, Prediction};

/// Aligned prediction for one gold query; `None` when missing or unparseable.
pub type Outcome = Option<IntentLabel>;

/// Iterations used by the reported comparisons.
pub const DEFAULT_ITERATIONS: usize = 5000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Slack when comparing permuted and observed statistics, absorbing
/// floating-point noise between algebraically equal differences.
const STAT_EPSILON: f64 = 1e-12;

/// Predictions keyed by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    by_id: BTreeMap<String, Outcome>,
}

impl PredictionSet {
    pub fn new() -> PredictionSet {
        PredictionSet::default()
    }

    pub fn from_predictions<'a>(preds: impl IntoIterator<Item = &'a Prediction>) -> Result<PredictionSet> {
        let mut set = PredictionSet::new();
        for p in preds {
            set.insert(p.query_id.clone(), Some(p.label))?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, id: String, outcome: Outcome) -> Result<()> {
        if self.by_id.contains_key(&id) {
            return Err(Error::DuplicatePrediction(id));
        }
        self.by_id.insert(id, outcome);
        Ok(())
    }

    /// Record a prediction that could not be parsed.
    pub fn insert_unparseable(&mut self, id: String) -> Result<()> {
        self.insert(id, None)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    /// Outcomes in gold order, plus the number of predictions whose id is not
    /// in the gold set.
    pub fn align(&self, gold: &GoldSet) -> (Vec<Outcome>, usize) {
        let outcomes: Vec<Outcome> = gold
            .records()
            .iter()
            .map(|r| self.by_id.get(&r.query.key()).copied().flatten())
            .collect();
        let matched = gold.records().iter().filter(|r| self.by_id.contains_key(&r.query.key())).count();
        (outcomes, self.by_id.len() - matched)
    }
}

/// Gold-by-predicted counts; column 3 holds missing/unparseable predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: [[u64; 3]; 3],
    pub unparseable: [u64; 3],
}

impl ConfusionMatrix {
    pub fn from_outcomes(gold: &[IntentLabel], outcomes: &[Outcome]) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::default();
        for (g, o) in gold.iter().zip(outcomes) {
            m.add(*g, *o);
        }
        m
    }

    pub fn add(&mut self, gold: IntentLabel, outcome: Outcome) {
        match outcome {
            Some(p) => self.cells[gold.index()][p.index()] += 1,
            None => self.unparseable[gold.index()] += 1,
        }
    }

    pub fn get(&self, gold: IntentLabel, predicted: IntentLabel) -> u64 {
        self.cells[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum::<u64>() + self.unparseable_count()
    }

    pub fn unparseable_count(&self) -> u64 {
        self.unparseable.iter().sum()
    }

    pub fn support(&self, label: IntentLabel) -> u64 {
        self.cells[label.index()].iter().sum::<u64>() + self.unparseable[label.index()]
    }

    pub fn predicted(&self, label: IntentLabel) -> u64 {
        self.cells.iter().map(|row| row[label.index()]).sum()
    }

    pub fn class_metrics(&self, label: IntentLabel) -> ClassMetrics {
        let tp = self.get(label, label);
        let predicted = self.predicted(label);
        let support = self.support(label);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        ClassMetrics {
            label,
            precision,
            recall,
            f1: f1(precision, recall),
            support,
            predicted,
            precision_undefined: predicted == 0,
            recall_undefined: support == 0,
        }
    }

    pub fn macro_metrics(&self) -> MacroMetrics {
        let per = IntentLabel::ALL.map(|l| self.class_metrics(l));
        MacroMetrics {
            precision: (per[0].precision + per[1].precision + per[2].precision) / 3.0,
            recall: (per[0].recall + per[1].recall + per[2].recall) / 3.0,
            f1: (per[0].f1 + per[1].f1 + per[2].f1) / 3.0,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: IntentLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MacroMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::MacroPrecision => self.precision,
            Metric::MacroRecall => self.recall,
            Metric::MacroF1 => self.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
    pub matrix: ConfusionMatrix,
    pub unparseable: u64,
    /// Predictions whose id did not match any gold query.
    pub unmatched_predictions: usize,
}

/// Score aligned outcomes against gold labels.
pub fn score_aligned(gold: &[IntentLabel], outcomes: &[Outcome]) -> Result<EvalReport> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    if gold.len() != outcomes.len() {
        return Err(Error::MisalignedInputs(format!("{} gold vs {} outcomes", gold.len(), outcomes.len())));
    }
    let matrix = ConfusionMatrix::from_outcomes(gold, outcomes);
    Ok(EvalReport {
        n: gold.len(),
        per_class: IntentLabel::ALL.iter().map(|&l| matrix.class_metrics(l)).collect(),
        macro_avg: matrix.macro_metrics(),
        unparseable: matrix.unparseable_count(),
        matrix,
        unmatched_predictions: 0,
    })
}

/// Score a prediction set against a gold set. Gold queries without a
/// prediction are scored as wrong.
pub fn score(preds: &PredictionSet, gold: &GoldSet) -> Result<EvalReport> {
    let labels = gold_labels(gold);
    let (outcomes, unmatched) = preds.align(gold);
    let mut report = score_aligned(&labels, &outcomes)?;
    report.unmatched_predictions = unmatched;
    Ok(report)
}

/// Convenience wrapper over [`score`] for plain prediction lists.
pub fn score_predictions(preds: &[Prediction], gold: &GoldSet) -> Result<EvalReport> {
    score(&PredictionSet::from_predictions(preds)?, gold)
}

pub fn gold_labels(gold: &GoldSet) -> Vec<IntentLabel> {
    gold.records().iter().map(|r| r.label).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroPrecision,
    MacroRecall,
    MacroF1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MacroPrecision, Metric::MacroRecall, Metric::MacroF1];
}

/// Inputs of one paired permutation test.
#[derive(Debug, Clone, Copy)]
pub struct PermutationJob<'a> {
    pub a: &'a [Outcome],
    pub b: &'a [Outcome],
    pub gold: &'a [IntentLabel],
    pub metric: Metric,
    pub iterations: usize,
    pub seed: u64,
}

impl<'a> PermutationJob<'a> {
    pub fn new(
        a: &'a [Outcome],
        b: &'a [Outcome],
        gold: &'a [IntentLabel],
        metric: Metric,
        iterations: usize,
        seed: u64,
    ) -> Result<PermutationJob<'a>> {
        if a.len() != gold.len() || b.len() != gold.len() {
            return Err(Error::MisalignedInputs(format!(
                "a has {}, b has {}, gold has {} entries",
                a.len(),
                b.len(),
                gold.len()
            )));
        }
        if gold.is_empty() {
            return Err(Error::EmptyGold);
        }
        if iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be positive".into()));
        }
        Ok(PermutationJob { a, b, gold, metric, iterations, seed })
    }

    pub fn observed(&self) -> f64 {
        metric_of(self.gold, self.a, self.metric) - metric_of(self.gold, self.b, self.metric)
    }

    /// Statistic after swapping a/b per query with probability 1/2. Each
    /// iteration draws from its own ChaCha stream, so any partition of the
    /// iteration range reproduces the same values.
    pub fn permuted(&self, iteration: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration as u64);
        let mut ma = ConfusionMatrix::default();
        let mut mb = ConfusionMatrix::default();
        let mut bits = 0u64;
        for i in 0..self.gold.len() {
            if i % 64 == 0 {
                bits = rng.next_u64();
            }
            let swap = bits & 1 == 1;
            bits >>= 1;
            let (x, y) = if swap { (self.b[i], self.a[i]) } else { (self.a[i], self.b[i]) };
            ma.add(self.gold[i], x);
            mb.add(self.gold[i], y);
        }
        ma.macro_metrics().get(self.metric) - mb.macro_metrics().get(self.metric)
    }

    /// Iterations in `range` whose |statistic| reaches the observed one.
    pub fn exceedances(&self, range: Range<usize>) -> usize {
        let threshold = self.observed().abs() - STAT_EPSILON;
        range.filter(|&i| self.permuted(i).abs() >= threshold).count()
    }

    pub fn finish(&self, exceedances: usize) -> PermutationTest {
        PermutationTest {
            metric: self.metric,
            observed: self.observed(),
            p_value: (1 + exceedances) as f64 / (1 + self.iterations) as f64,
            exceedances,
            iterations: self.iterations,
            seed: self.seed,
        }
    }

    pub fn run(&self) -> PermutationTest {
        self.finish(self.exceedances(0..self.iterations))
    }
}

fn metric_of(gold: &[IntentLabel], outcomes: &[Outcome], metric: Metric) -> f64 {
    ConfusionMatrix::from_outcomes(gold, outcomes).macro_metrics().get(metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub metric: Metric,
    /// metric(a) − metric(b)
    pub observed: f64,
    pub p_value: f64,
    pub exceedances: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// Two-sided paired permutation test of `metric(a) − metric(b)`.
pub fn paired_permutation_test(
    a: &[Outcome],
    b: &[Outcome],
    gold: &[IntentLabel],
    metric: Metric,
    iterations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    Ok(PermutationJob::new(a, b, gold, metric, iterations, seed)?.run())
}

/// Runs the exceedance count of a permutation job, possibly in parallel.
pub trait PermutationRunner {
    fn exceedances(&self, job: &PermutationJob<'_>) -> usize;
}

/// Runs every iteration on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Serial;

impl PermutationRunner for Serial {
    fn exceedances(&self, job: &PermutationJob<'_>) -> usize {
        job.exceedances(0..job.iterations)
    }
}

/// Bonferroni correction: test `i` is significant iff `p_i < alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let corrected = alpha / p_values.len().max(1) as f64;
    p_values.iter().map(|&p| p < corrected).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Better,
    Worse,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub metric: Metric,
    pub observed: f64,
    pub p_value: f64,
    pub iterations: usize,
    pub family_size: usize,
    pub corrected_alpha: f64,
    pub significant: bool,
    pub direction: Direction,
}

impl SignificanceResult {
    pub fn new(test: &PermutationTest, alpha: f64, family_size: usize) -> SignificanceResult {
        let corrected_alpha = alpha / family_size.max(1) as f64;
        let direction = if test.observed > 0.0 {
            Direction::Better
        } else if test.observed < 0.0 {
            Direction::Worse
        } else {
            Direction::Tie
        };
        SignificanceResult {
            metric: test.metric,
            observed: test.observed,
            p_value: test.p_value,
            iterations: test.iterations,
            family_size,
            corrected_alpha,
            significant: test.p_value < corrected_alpha,
            direction,
        }
    }

    /// Table marker: `↑*` / `↓*` when significant, empty otherwise.
    pub fn marker(&self) -> &'static str {
        match (self.significant, self.direction) {
            (true, Direction::Better) => "↑*",
            (true, Direction::Worse) => "↓*",
            _ => "",
        }
    }
}

/// One system's aligned outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub name: String,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Bonferroni family size; defaults to challengers × 3 metrics.
    pub family_size: Option<usize>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig { iterations: DEFAULT_ITERATIONS, alpha: DEFAULT_ALPHA, seed: 0, family_size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub system: String,
    pub baseline: bool,
    pub report: EvalReport,
    /// Per-metric significance against the baseline, in [`Metric::ALL`] order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub significance: Vec<SignificanceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub family_size: usize,
    /// How the permutation statistic was formed.
    pub statistic: String,
    pub rows: Vec<ComparisonRow>,
}

/// Score every system and test each challenger against the baseline, one
/// permutation test per macro metric, Bonferroni-corrected over the family.
pub fn compare(
    gold: &[IntentLabel],
    baseline: &System,
    challengers: &[System],
    config: &ComparisonConfig,
    runner: &dyn PermutationRunner,
) -> Result<ComparisonTable> {
    let family_size = config.family_size.unwrap_or(challengers.len() * Metric::ALL.len()).max(1);
    let mut rows = Vec::with_capacity(challengers.len() + 1);
    rows.push(ComparisonRow {
        system: baseline.name.clone(),
        baseline: true,
        report: score_aligned(gold, &baseline.outcomes)?,
        significance: Vec::new(),
    });
    for ch in challengers {
        let report = score_aligned(gold, &ch.outcomes)?;
        let mut significance = Vec::with_capacity(3);
        for metric in Metric::ALL {
            let job = PermutationJob::new(&ch.outcomes, &baseline.outcomes, gold, metric, config.iterations, config.seed)?;
            let test = job.finish(runner.exceedances(&job));
            significance.push(SignificanceResult::new(&test, config.alpha, family_size));
        }
        rows.push(ComparisonRow { system: ch.name.clone(), baseline: false, report, significance });
    }
    Ok(ComparisonTable {
        baseline: baseline.name.clone(),
        iterations: config.iterations,
        alpha: config.alpha,
        seed: config.seed,
        family_size,
        statistic: "per-metric macro difference (challenger - baseline), two-sided".to_string(),
        rows,
    })
}

impl ComparisonTable {
    /// Markdown table with three-decimal values and significance markers.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("| System | Precision | Recall | F1-score |\n");
        out.push_str("|---|---|---|---|\n");
        for row in &self.rows {
            let m = &row.report.macro_avg;
            let _ = write!(out, "| {} |", row.system);
            for (i, metric) in Metric::ALL.into_iter().enumerate() {
                let marker = row.significance.get(i).map(|s| s.marker()).unwrap_or("");
                let _ = write!(out, " {:.3}{} |", m.get(metric), marker);
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "\nBaseline: {}. Paired permutation test ({} iterations, seed {}), Bonferroni m = {}, alpha = {}.\n",
            self.baseline, self.iterations, self.seed, self.family_size, self.alpha
        );
        out
    }
}
