//! Metrics (accuracy, sensitivity, specificity, AUROC), repeated
//! record-level stratified splits, and mean +- std aggregation.
//!
//! Splitting is stratified by class at the record level: all pulses from a
//! record stay on one side, so no beat of a test record was ever seen in
//! training.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::train_cascade;
use crate::ecg::{CaoClass, EcgRecord};
use crate::filters::FilterSpec;
use crate::nn::{predict_proba, ModelConfig, TrainConfig, Variant};
use crate::pulses::build_dataset;
use crate::synth::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores at or above the threshold count as positive predictions.
pub fn compute_confusion(
    scores: &[f64],
    labels: &[usize],
    threshold: f64,
) -> Result<ConfusionCounts> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Eval(format!(
            "scores ({}) and labels ({}) must be equal-length and non-empty",
            scores.len(),
            labels.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Eval(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Ratio metrics; sensitivity/specificity are `None` (never silently 0)
/// when their denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn metrics_from_confusion(c: &ConfusionCounts) -> Result<MetricValues> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Eval("empty confusion".into()));
    }
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    Ok(MetricValues {
        accuracy: (c.tp + c.tn) as f64 / total as f64,
        sensitivity: (pos > 0).then(|| c.tp as f64 / pos as f64),
        specificity: (neg > 0).then(|| c.tn as f64 / neg as f64),
    })
}

/// Rank-based (Mann-Whitney) AUROC with midrank tie handling; equals the
/// trapezoidal area under the ROC curve exactly.
pub fn compute_auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Eval("scores/labels length mismatch".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eval("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auroc: f64,
    /// Secondary view: pulse scores averaged per record before ranking.
    pub record_level_auroc: Option<f64>,
}

/// Threshold metrics plus AUROC for one stage of one run.
pub fn stage_metrics(scores: &[f64], labels: &[usize], threshold: f64) -> Result<RunMetrics> {
    let confusion = compute_confusion(scores, labels, threshold)?;
    let values = metrics_from_confusion(&confusion)?;
    Ok(RunMetrics {
        accuracy: values.accuracy,
        sensitivity: values.sensitivity,
        specificity: values.specificity,
        auroc: compute_auroc(scores, labels)?,
        record_level_auroc: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample (n-1) standard deviation.
pub fn summarize(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::Eval("no values to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(MetricSummary { mean, std })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub runs: Vec<RunMetrics>,
    pub accuracy: MetricSummary,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub auroc: MetricSummary,
}

impl StageSummary {
    fn from_runs(runs: Vec<RunMetrics>) -> Result<Self> {
        let pick = |f: &dyn Fn(&RunMetrics) -> Option<f64>| -> Vec<f64> {
            runs.iter().filter_map(f).collect()
        };
        Ok(StageSummary {
            accuracy: summarize(&pick(&|r| Some(r.accuracy)))?,
            sensitivity: summarize(&pick(&|r| r.sensitivity))?,
            specificity: summarize(&pick(&|r| r.specificity))?,
            auroc: summarize(&pick(&|r| Some(r.auroc)))?,
            runs,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitNote {
    pub run: usize,
    /// Number of split draws needed (>1 means degenerate draws were
    /// discarded and redrawn from the run's derived seed stream).
    pub attempts: usize,
    pub train_records: usize,
    pub test_records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub filter_spec: FilterSpec,
    pub window_pre_s: f64,
    pub window_post_s: f64,
    /// Override for the classifier architecture; defaults to the
    /// desk-scale preset of the requested variant.
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub threshold1: f64,
    pub threshold2: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            filter_spec: FilterSpec::default(),
            window_pre_s: 0.25,
            window_post_s: 0.45,
            model: None,
            // Short budget on purpose: the preprocessed arm converges
            // almost immediately, the raw arm does not, and that gap is
            // the experiment's subject.
            train: TrainConfig {
                epochs: 3,
                learning_rate: 5e-4,
                ..TrainConfig::default()
            },
            threshold1: 0.5,
            threshold2: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub arm: String,
    pub n_runs: usize,
    pub seed: u64,
    pub options: ExperimentOptions,
    pub stage1: StageSummary,
    pub stage2: StageSummary,
    pub splits: Vec<SplitNote>,
}

fn stratified_split<'a>(
    records: &[&'a EcgRecord],
    rng_seed: u64,
) -> (Vec<&'a EcgRecord>, Vec<&'a EcgRecord>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    let mut train: Vec<&EcgRecord> = Vec::new();
    let mut test: Vec<&EcgRecord> = Vec::new();
    for class in CaoClass::ALL {
        let mut members: Vec<&EcgRecord> =
            records.iter().copied().filter(|r| r.label == class).collect();
        members.shuffle(&mut rng);
        let n_train = (members.len() as f64 * 0.8).floor() as usize;
        train.extend(&members[..n_train]);
        test.extend(&members[n_train..]);
    }
    train.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    test.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    (train, test)
}

fn has_all_classes(records: &[&EcgRecord]) -> bool {
    CaoClass::ALL
        .iter()
        .all(|c| records.iter().any(|r| r.label == *c))
}

fn record_level_scores(
    scores: &[f64],
    record_ids: &[&str],
    labels: &[usize],
) -> (Vec<f64>, Vec<usize>) {
    let mut by_record: BTreeMap<&str, (f64, usize, usize)> = BTreeMap::new();
    for ((&s, &id), &l) in scores.iter().zip(record_ids).zip(labels) {
        let entry = by_record.entry(id).or_insert((0.0, 0, l));
        entry.0 += s;
        entry.1 += 1;
    }
    let mut out_scores = Vec::new();
    let mut out_labels = Vec::new();
    for (_, (sum, count, label)) in by_record {
        out_scores.push(sum / count as f64);
        out_labels.push(label);
    }
    (out_scores, out_labels)
}

struct RunOutput {
    stage1: RunMetrics,
    stage2: RunMetrics,
    split: SplitNote,
}

fn run_one(
    records: &[&EcgRecord],
    preprocess: bool,
    variant: Variant,
    run: usize,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<RunOutput> {
    let run_seed = derive_seed(seed, run as u64);

    let mut attempts = 0;
    let (train_records, test_records) = loop {
        attempts += 1;
        if attempts > 100 {
            return Err(Error::Eval(format!(
                "run {run}: could not draw a split with every class on both sides"
            )));
        }
        let (train, test) = stratified_split(records, derive_seed(run_seed, attempts as u64));
        if has_all_classes(&train) && has_all_classes(&test) {
            break (train, test);
        }
    };

    // no record leakage across the split
    let train_ids: BTreeSet<&str> = train_records.iter().map(|r| r.record_id.as_str()).collect();
    let test_ids: BTreeSet<&str> = test_records.iter().map(|r| r.record_id.as_str()).collect();
    if train_ids.intersection(&test_ids).next().is_some() {
        return Err(Error::Eval(format!("run {run}: record leakage across split")));
    }

    let window = (options.window_pre_s, options.window_post_s);
    let owned_train: Vec<EcgRecord> = train_records.iter().map(|&r| r.clone()).collect();
    let owned_test: Vec<EcgRecord> = test_records.iter().map(|&r| r.clone()).collect();
    let train_ds = build_dataset(&owned_train, preprocess, &options.filter_spec, window)?;
    let test_ds = build_dataset(&owned_test, preprocess, &options.filter_spec, window)?;

    let model_config = options
        .model
        .clone()
        .unwrap_or_else(|| ModelConfig::desk_scale(variant));
    let mut train_config = options.train.clone();
    train_config.rng_seed = derive_seed(run_seed, 0xC0);
    let mut cascade = train_cascade(&train_ds, &model_config, &train_config)?;

    // stage-1: every test pulse, LAD positive
    let scores1 = predict_proba(&mut cascade.stage1, &test_ds.pulses)?;
    let labels1: Vec<usize> = test_ds
        .pulses
        .iter()
        .map(|p| usize::from(p.label == CaoClass::Lad))
        .collect();
    let ids1: Vec<&str> = test_ds
        .pulses
        .iter()
        .map(|p| p.source_record_id.as_str())
        .collect();
    let mut stage1 = stage_metrics(&scores1, &labels1, options.threshold1)?;
    let (rs, rl) = record_level_scores(&scores1, &ids1, &labels1);
    stage1.record_level_auroc = Some(compute_auroc(&rs, &rl)?);

    // stage-2: ground-truth non-LAD test pulses, LCX positive
    let non_lad: Vec<usize> = (0..test_ds.pulses.len())
        .filter(|&i| test_ds.pulses[i].label != CaoClass::Lad)
        .collect();
    let pulses2: Vec<crate::pulses::Pulse> =
        non_lad.iter().map(|&i| test_ds.pulses[i].clone()).collect();
    let scores2 = predict_proba(&mut cascade.stage2, &pulses2)?;
    let labels2: Vec<usize> = pulses2
        .iter()
        .map(|p| usize::from(p.label == CaoClass::Lcx))
        .collect();
    let ids2: Vec<&str> = pulses2.iter().map(|p| p.source_record_id.as_str()).collect();
    let mut stage2 = stage_metrics(&scores2, &labels2, options.threshold2)?;
    let (rs2, rl2) = record_level_scores(&scores2, &ids2, &labels2);
    stage2.record_level_auroc = Some(compute_auroc(&rs2, &rl2)?);

    Ok(RunOutput {
        stage1,
        stage2,
        split: SplitNote {
            run,
            attempts,
            train_records: train_records.len(),
            test_records: test_records.len(),
        },
    })
}

/// Repeated stratified 80/20 record-level splits: train a cascade per run,
/// score stage-1 on all test pulses and stage-2 on ground-truth non-LAD
/// test pulses, and aggregate mean +- sample std over runs. Deterministic
/// given the seed; runs execute in parallel but aggregate in run order.
pub fn run_experiment(
    records: &[EcgRecord],
    preprocess: bool,
    variant: Variant,
    n_runs: usize,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<EvalReport> {
    if n_runs < 2 {
        return Err(Error::Eval("need at least 2 runs for a std estimate".into()));
    }
    let mut refs: Vec<&EcgRecord> = records.iter().collect();
    refs.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    if !has_all_classes(&refs) {
        return Err(Error::Eval("records must contain all three classes".into()));
    }

    let outputs: Vec<RunOutput> = (0..n_runs)
        .into_par_iter()
        .map(|run| run_one(&refs, preprocess, variant, run, seed, options))
        .collect::<Result<_>>()?;

    let stage1 = StageSummary::from_runs(outputs.iter().map(|o| o.stage1).collect())?;
    let stage2 = StageSummary::from_runs(outputs.iter().map(|o| o.stage2).collect())?;
    Ok(EvalReport {
        variant: variant.as_str().to_string(),
        arm: if preprocess { "preprocessed" } else { "raw" }.to_string(),
        n_runs,
        seed,
        options: options.clone(),
        stage1,
        stage2,
        splits: outputs.iter().map(|o| o.split).collect(),
    })
}

fn check_renderable(reports: &[EvalReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Eval("nothing to render".into()));
    }
    for r in reports {
        if r.stage1.runs.is_empty() || r.stage2.runs.is_empty() {
            return Err(Error::Eval("report has no per-run metrics".into()));
        }
    }
    Ok(())
}

fn cell(s: &MetricSummary) -> String {
    format!("{:.3} \u{b1} {:.3}", s.mean, s.std)
}

/// Aligned text tables, one row per (variant, arm), stage-1 then stage-2.
pub fn render_report_text(reports: &[EvalReport]) -> Result<String> {
    check_renderable(reports)?;
    let mut out = String::new();
    for (stage_idx, title) in [(0, "Stage 1 (LAD vs non-LAD)"), (1, "Stage 2 (LCX vs RCA)")] {
        out.push_str(title);
        out.push('\n');
        out.push_str(&format!(
            "{:<8} {:<14} {:>16} {:>16} {:>16} {:>16}\n",
            "CNN", "Dataset", "Accuracy", "Sensitivity", "Specificity", "AUROC"
        ));
        for r in reports {
            let s = if stage_idx == 0 { &r.stage1 } else { &r.stage2 };
            out.push_str(&format!(
                "{:<8} {:<14} {:>16} {:>16} {:>16} {:>16}\n",
                format!("{}-CNN", r.variant.to_uppercase()),
                r.arm,
                cell(&s.accuracy),
                cell(&s.sensitivity),
                cell(&s.specificity),
                cell(&s.auroc),
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

pub const REPORT_CSV_HEADER: &str = "stage,variant,arm,accuracy_mean,accuracy_std,sensitivity_mean,sensitivity_std,specificity_mean,specificity_std,auroc_mean,auroc_std";

/// CSV twin of the text table, 3-decimal cells.
pub fn render_report_csv(reports: &[EvalReport]) -> Result<String> {
    check_renderable(reports)?;
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for (stage_idx, stage) in ["stage1", "stage2"].iter().enumerate() {
        for r in reports {
            let s = if stage_idx == 0 { &r.stage1 } else { &r.stage2 };
            out.push_str(&format!(
                "{stage},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                r.variant,
                r.arm,
                s.accuracy.mean,
                s.accuracy.std,
                s.sensitivity.mean,
                s.sensitivity.std,
                s.specificity.mean,
                s.specificity.std,
                s.auroc.mean,
                s.auroc.std,
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportCsvRow {
    pub stage: String,
    pub variant: String,
    pub arm: String,
    pub accuracy: MetricSummary,
    pub sensitivity: MetricSummary,
    pub specificity: MetricSummary,
    pub auroc: MetricSummary,
}

/// Parses the report CSV back; inverse of [`render_report_csv`] up to
/// 3-decimal rounding.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportCsvRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("report.csv", "empty file"))?;
    if header.trim() != REPORT_CSV_HEADER {
        return Err(Error::format("report.csv", "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::format(
                "report.csv",
                format!("row {}: expected 11 fields, got {}", i + 2, fields.len()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::format("report.csv", format!("bad number {s:?}")))?;
            if !v.is_finite() {
                return Err(Error::format("report.csv", "non-finite value"));
            }
            Ok(v)
        };
        rows.push(ReportCsvRow {
            stage: fields[0].to_string(),
            variant: fields[1].to_string(),
            arm: fields[2].to_string(),
            accuracy: MetricSummary {
                mean: num(fields[3])?,
                std: num(fields[4])?,
            },
            sensitivity: MetricSummary {
                mean: num(fields[5])?,
                std: num(fields[6])?,
            },
            specificity: MetricSummary {
                mean: num(fields[7])?,
                std: num(fields[8])?,
            },
            auroc: MetricSummary {
                mean: num(fields[9])?,
                std: num(fields[10])?,
            },
        });
    }
    Ok(rows)
}
