//! Trace ingestion, event labels, window extraction, and training-set
//! assembly.
//!
//! A trace is one continuous single-channel recording; the canonical field
//! day is 17,280,001 samples at 200 Hz. Labels are sorted, disjoint,
//! half-open sample intervals on one trace.

mod io;
mod synth;

pub use io::{
    read_intervals_csv, read_trace, read_trace_csv, read_trace_path, write_intervals_csv,
    write_trace, write_trace_csv, write_trace_file, IntervalRecord,
};
pub use synth::{generate_day, generate_synthetic, SynthConfig, SynthDay};

use crate::error::{Error, Result};
use crate::train::{preprocess, Label, LabeledWindow, WindowSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Samples in one canonical day-long trace.
pub const DAY_SAMPLES: usize = 17_280_001;
/// Canonical sampling rate in Hz.
pub const DEFAULT_SAMPLE_RATE: f64 = 200.0;

/// A continuous single-channel recording. The station string doubles as
/// the trace identifier in label and detection files.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f32>,
    pub sample_rate: f64,
    pub start_time: f64,
    pub station: String,
}

impl Trace {
    pub fn new(samples: Vec<f32>, sample_rate: f64, start_time: f64, station: String) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("trace must contain >= 1 sample".into()));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Trace {
            samples,
            sample_rate,
            start_time,
            station,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Half-open `[start, end)` sample interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidInput(format!(
                "interval [{start}, {end}) is empty or inverted"
            )));
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees start < end
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn center(&self) -> usize {
        self.start + self.len() / 2
    }
}

/// Ground-truth event intervals on one trace: sorted, disjoint, in bounds.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelSet {
    events: Vec<Interval>,
}

impl LabelSet {
    pub fn new(mut events: Vec<Interval>, trace_len: usize) -> Result<Self> {
        events.sort();
        for e in &events {
            if e.end > trace_len {
                return Err(Error::InvalidInput(format!(
                    "event [{}, {}) exceeds trace length {trace_len}",
                    e.start, e.end
                )));
            }
        }
        for pair in events.windows(2) {
            if pair[0].end > pair[1].start {
                return Err(Error::InvalidInput(format!(
                    "events [{}, {}) and [{}, {}) overlap",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(LabelSet { events })
    }

    pub fn empty() -> Self {
        LabelSet::default()
    }

    pub fn events(&self) -> &[Interval] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn overlaps_any(&self, window: &Interval) -> bool {
        self.events.iter().any(|e| e.overlaps(window))
    }
}

/// Contiguous copy of `len` samples starting at `start`.
pub fn extract_window(trace: &Trace, start: usize, len: usize) -> Result<Vec<f32>> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| Error::InvalidInput("window end overflows".into()))?;
    if end > trace.len() {
        return Err(Error::InvalidInput(format!(
            "window [{start}, {end}) out of bounds for trace of {} samples",
            trace.len()
        )));
    }
    Ok(trace.samples[start..end].to_vec())
}

/// A hand-picked negative interval on a named trace.
#[derive(Debug, Clone)]
pub struct PickedNegative {
    pub trace_id: String,
    pub interval: Interval,
}

/// How negative windows are drawn.
#[derive(Debug, Clone, Default)]
pub struct NegativePolicy {
    /// Caller-supplied representative negatives (window centered on each).
    pub picked: Vec<PickedNegative>,
    /// Uniform random windows that do not intersect any event.
    pub random_count: usize,
    pub seed: u64,
}

/// Builds the labeled training set: one positive window per event
/// (centered so the event is fully contained), plus negatives per policy.
/// Every window is z-scored via [`preprocess`].
pub fn make_training_set(
    days: &[(Trace, LabelSet)],
    window_len: usize,
    policy: &NegativePolicy,
) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    let centered_start = |interval: &Interval, trace_len: usize| -> usize {
        let half = window_len / 2;
        interval
            .center()
            .saturating_sub(half)
            .min(trace_len - window_len)
    };

    for (trace, labels) in days {
        if trace.len() < window_len {
            return Err(Error::InvalidInput(format!(
                "trace {} has {} samples, shorter than the {window_len}-sample window",
                trace.station,
                trace.len()
            )));
        }
        for event in labels.events() {
            if event.len() > window_len {
                return Err(Error::InvalidInput(format!(
                    "event [{}, {}) on trace {} spans {} samples, longer than the window ({window_len})",
                    event.start,
                    event.end,
                    trace.station,
                    event.len()
                )));
            }
            let start = centered_start(event, trace.len());
            let raw = extract_window(trace, start, window_len)?;
            out.push(LabeledWindow {
                samples: preprocess(&raw),
                label: Label::Positive,
                trace_id: trace.station.clone(),
                start,
                source: WindowSource::Event,
            });
        }
    }

    for picked in &policy.picked {
        let (trace, _) = days
            .iter()
            .find(|(t, _)| t.station == picked.trace_id)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "picked negative references unknown trace {}",
                    picked.trace_id
                ))
            })?;
        let start = centered_start(&picked.interval, trace.len());
        let raw = extract_window(trace, start, window_len)?;
        out.push(LabeledWindow {
            samples: preprocess(&raw),
            label: Label::Negative,
            trace_id: trace.station.clone(),
            start,
            source: WindowSource::PickedNegative,
        });
    }

    if policy.random_count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        let mut placed = 0usize;
        let mut attempts = 0usize;
        let max_attempts = policy.random_count.saturating_mul(1000).max(1000);
        while placed < policy.random_count {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::PlacementInfeasible(format!(
                    "placed only {placed} of {} random negatives after {max_attempts} attempts",
                    policy.random_count
                )));
            }
            let (trace, labels) = &days[rng.gen_range(0..days.len())];
            let start = rng.gen_range(0..=trace.len() - window_len);
            let window = Interval::new(start, start + window_len)?;
            if labels.overlaps_any(&window) {
                continue;
            }
            let raw = extract_window(trace, start, window_len)?;
            out.push(LabeledWindow {
                samples: preprocess(&raw),
                label: Label::Negative,
                trace_id: trace.station.clone(),
                start,
                source: WindowSource::RandomNegative,
            });
            placed += 1;
        }
    }
    Ok(out)
}
