//! Sliding-window inference, multi-detection dedup, and precision/recall
//! scoring against ground truth.
//!
//! `scan` slides a fixed window across a trace at a fixed offset, z-scores
//! each window independently, and keeps windows whose score clears the
//! threshold (0 by default: the sign of the score is the label). Windows
//! of one event chain-overlap, so `dedup` groups detections by transitive
//! interval overlap and keeps the highest-scoring member of each group.

use crate::data::{Interval, LabelSet, Trace};
use crate::error::{Error, Result};
use crate::model::{load_weights_file, score_infer, ModelParams};
use crate::tensor::FeatureMap;
use crate::train::preprocess;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

/// A positive window: raw head score, window interval, owning trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub trace_id: String,
    pub start: usize,
    pub end: usize,
    pub score: f32,
}

impl Detection {
    pub fn interval(&self) -> Interval {
        Interval {
            start: self.start,
            end: self.end,
        }
    }
}

/// Window start positions: `0, offset, 2*offset, ...` while the window fits.
pub fn window_starts(
    trace_len: usize,
    window_len: usize,
    offset: usize,
) -> impl Iterator<Item = usize> {
    (0..)
        .map(move |i| i * offset)
        .take_while(move |s| s + window_len <= trace_len)
}

/// `floor((N - L) / offset) + 1` for N >= L.
pub fn window_count(trace_len: usize, window_len: usize, offset: usize) -> usize {
    if trace_len < window_len {
        0
    } else {
        (trace_len - window_len) / offset + 1
    }
}

/// Evaluates every window position and returns the raw positive
/// detections, sorted by window start.
pub fn scan(
    trace: &Trace,
    params: &ModelParams<f32>,
    window_len: usize,
    offset: usize,
    threshold: f32,
) -> Result<Vec<Detection>> {
    if offset == 0 {
        return Err(Error::InvalidInput("scan offset must be >= 1".into()));
    }
    if window_len != params.spec().input_length {
        return Err(Error::shape(
            "scan",
            format!(
                "window length {window_len} does not match the model input length {}",
                params.spec().input_length
            ),
        ));
    }
    if trace.len() < window_len {
        return Err(Error::InvalidInput(format!(
            "trace {} has {} samples, shorter than the {window_len}-sample window",
            trace.station,
            trace.len()
        )));
    }
    let starts: Vec<usize> = window_starts(trace.len(), window_len, offset).collect();
    let scored: Vec<(usize, f32)> = starts
        .par_iter()
        .map(|&start| {
            let window = preprocess(&trace.samples[start..start + window_len]);
            let x = FeatureMap::from_samples(&window);
            score_infer(params, &x).map(|z| (start, z))
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .filter(|&(_, z)| z > threshold)
        .map(|(start, z)| Detection {
            trace_id: trace.station.clone(),
            start,
            end: start + window_len,
            score: z,
        })
        .collect())
}

/// Collapses each transitive-overlap group of detections to its single
/// highest-scoring member (ties broken by earlier start). Groups never
/// span trace ids; output is sorted by (trace, start).
pub fn dedup(mut detections: Vec<Detection>) -> Vec<Detection> {
    detections.sort_by(|a, b| {
        (&a.trace_id, a.start, a.end)
            .cmp(&(&b.trace_id, b.start, b.end))
    });
    let mut out = Vec::new();
    let mut group: Vec<Detection> = Vec::new();
    let mut group_end = 0usize;
    for d in detections {
        let same_group = group
            .last()
            .is_some_and(|g| g.trace_id == d.trace_id && d.start < group_end);
        if same_group {
            group_end = group_end.max(d.end);
            group.push(d);
        } else {
            if !group.is_empty() {
                out.push(best_of(group));
            }
            group_end = d.end;
            group = vec![d];
        }
    }
    if !group.is_empty() {
        out.push(best_of(group));
    }
    out
}

fn best_of(group: Vec<Detection>) -> Detection {
    let mut best = 0;
    for (i, d) in group.iter().enumerate() {
        if d.score > group[best].score {
            best = i;
        }
    }
    group.into_iter().nth(best).expect("non-empty group")
}

/// Detection/ground-truth tallies and the derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    /// Matched `(detection index, event index)` pairs.
    pub matches: Vec<(usize, usize)>,
}

impl EvalReport {
    /// Builds a report from raw counts. Precision = TP/(TP+FP) and recall
    /// = TP/(TP+FN); a zero denominator counts as a perfect 1.0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        EvalReport {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            matches: Vec::new(),
        }
    }

    /// Sums tallies across traces and recomputes the metrics.
    pub fn combine(reports: &[EvalReport]) -> Self {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for r in reports {
            tp += r.tp;
            fp += r.fp;
            fn_ += r.fn_;
        }
        EvalReport::from_counts(tp, fp, fn_)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "TP {} FP {} FN {}  precision {:.3} recall {:.3}",
            self.tp, self.fp, self.fn_, self.precision, self.recall
        )
    }
}

/// Scores deduped detections against ground truth. A detection is a true
/// positive iff its window intersects an unmatched event; matching is
/// greedy in descending score order, one detection per event (the
/// earliest unmatched intersecting event wins when several qualify).
pub fn evaluate(detections: &[Detection], labels: &LabelSet, window_len: usize) -> EvalReport {
    debug_assert!(detections.iter().all(|d| d.end - d.start == window_len));
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(detections[a].start.cmp(&detections[b].start))
    });

    let events = labels.events();
    let mut event_taken = vec![false; events.len()];
    let mut matches = Vec::new();
    for di in order {
        let window = detections[di].interval();
        let hit = events
            .iter()
            .enumerate()
            .find(|(ei, e)| !event_taken[*ei] && e.overlaps(&window));
        if let Some((ei, _)) = hit {
            event_taken[ei] = true;
            matches.push((di, ei));
        }
    }
    matches.sort();
    let tp = matches.len();
    let mut report = EvalReport::from_counts(tp, detections.len() - tp, events.len() - tp);
    report.matches = matches;
    report
}

/// Timing and outcome of one end-to-end pipeline run.
#[derive(Debug)]
pub struct PipelineReport {
    pub detections: Vec<Detection>,
    pub eval: Option<EvalReport>,
    pub windows_evaluated: usize,
    pub elapsed: Duration,
    pub windows_per_second: f64,
}

/// End-to-end run over one trace file: read, scan, dedup, and (when labels
/// are given) evaluate. The trace is read and validated before the model
/// loads.
pub fn detect_pipeline(
    trace_path: &Path,
    weights_path: &Path,
    window_len: usize,
    offset: usize,
    threshold: f32,
    labels: Option<&LabelSet>,
) -> Result<PipelineReport> {
    let trace = crate::data::read_trace_path(trace_path)?;
    if trace.len() < window_len {
        return Err(Error::InvalidInput(format!(
            "trace {} has {} samples, shorter than the {window_len}-sample window",
            trace.station,
            trace.len()
        )));
    }
    let params = load_weights_file(weights_path)?;
    let started = Instant::now();
    let raw = scan(&trace, &params, window_len, offset, threshold)?;
    let detections = dedup(raw);
    let elapsed = started.elapsed();
    let windows_evaluated = window_count(trace.len(), window_len, offset);
    let eval = labels.map(|l| evaluate(&detections, l, window_len));
    Ok(PipelineReport {
        detections,
        eval,
        windows_evaluated,
        elapsed,
        windows_per_second: windows_evaluated as f64 / elapsed.as_secs_f64().max(1e-9),
    })
}

/// One row of the detection listing CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub trace_id: String,
    pub start_index: usize,
    pub end_index: usize,
    pub score: f32,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        DetectionRecord {
            trace_id: d.trace_id.clone(),
            start_index: d.start,
            end_index: d.end,
            score: d.score,
        }
    }
}

pub fn write_detections_csv<W: std::io::Write>(detections: &[Detection], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for d in detections {
        w.serialize(DetectionRecord::from(d))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections_csv<R: std::io::Read>(source: R) -> Result<Vec<Detection>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for row in r.deserialize::<DetectionRecord>() {
        let rec = row?;
        out.push(Detection {
            trace_id: rec.trace_id,
            start: rec.start_index,
            end: rec.end_index,
            score: rec.score,
        });
    }
    Ok(out)
}

/// Metrics CSV: `tp,fp,fn,precision,recall` with three-decimal metrics.
pub fn write_metrics_csv<W: std::io::Write>(report: &EvalReport, mut sink: W) -> Result<()> {
    writeln!(sink, "tp,fp,fn,precision,recall")?;
    writeln!(
        sink,
        "{},{},{},{:.3},{:.3}",
        report.tp, report.fp, report.fn_, report.precision, report.recall
    )?;
    Ok(())
}
