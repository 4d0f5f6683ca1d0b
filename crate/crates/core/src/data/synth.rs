//! Synthetic trace generator.
//!
//! Stands in for field recordings: background noise (white Gaussian plus a
//! 1-10 Hz microseism-like component) with two-phase events inserted at
//! random positions. An event is a gradually growing ~30 Hz oscillation
//! (the emergence phase) followed immediately by one to four sharp ~60 Hz
//! exponentially decaying bursts (the impulsive phase). Confounder
//! transients (broadband Hann-windowed chirps) are inserted at a
//! configurable rate and deliberately left out of the labels.
//!
//! Everything is keyed off `(seed, day_index)`, so corpora are
//! reproducible sample-for-sample.

use super::{Interval, LabelSet, Trace};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub samples_per_day: usize,
    pub sample_rate: f64,
    pub events_per_day_min: usize,
    pub events_per_day_max: usize,
    pub emergence_freq_hz: f64,
    pub impulsive_freq_hz: f64,
    pub impulsive_peaks_min: usize,
    pub impulsive_peaks_max: usize,
    pub event_span_min: usize,
    pub event_span_max: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    /// Expected confounders per day (Poisson); 0 disables them.
    pub confounder_rate: f64,
    pub noise_white_rms: f64,
    pub noise_colored_rms: f64,
    /// Minimum spacing between inserted transients, in samples.
    pub min_gap: usize,
    /// Prefix for generated trace ids (`<prefix>_<day>`).
    pub trace_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Canonical day preset: 17,280,001 samples at 200 Hz, at most two
    /// events per day, spans up to 12,000 samples.
    fn default() -> Self {
        SynthConfig {
            days: 1,
            samples_per_day: super::DAY_SAMPLES,
            sample_rate: super::DEFAULT_SAMPLE_RATE,
            events_per_day_min: 0,
            events_per_day_max: 2,
            emergence_freq_hz: 30.0,
            impulsive_freq_hz: 60.0,
            impulsive_peaks_min: 1,
            impulsive_peaks_max: 4,
            event_span_min: 4_000,
            event_span_max: 12_000,
            snr_min: 2.0,
            snr_max: 6.0,
            confounder_rate: 1.0,
            noise_white_rms: 1.0,
            noise_colored_rms: 0.5,
            min_gap: 50_000,
            trace_prefix: "day".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if self.emergence_freq_hz >= nyquist || self.impulsive_freq_hz >= nyquist {
            return Err(Error::InvalidConfig(format!(
                "event frequencies must stay below the Nyquist rate ({nyquist} Hz)"
            )));
        }
        if self.samples_per_day == 0 {
            return Err(Error::InvalidConfig("samples_per_day must be >= 1".into()));
        }
        if self.event_span_min < 2 || self.event_span_min > self.event_span_max {
            return Err(Error::InvalidConfig(
                "event span range must satisfy 2 <= min <= max".into(),
            ));
        }
        if self.event_span_max >= self.samples_per_day {
            return Err(Error::InvalidConfig(
                "event spans must fit inside one day".into(),
            ));
        }
        if self.events_per_day_min > self.events_per_day_max {
            return Err(Error::InvalidConfig("events_per_day range inverted".into()));
        }
        if self.impulsive_peaks_min < 1 || self.impulsive_peaks_min > self.impulsive_peaks_max {
            return Err(Error::InvalidConfig(
                "impulsive peak count range must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(self.snr_min > 0.0 && self.snr_min <= self.snr_max) {
            return Err(Error::InvalidConfig("snr range must satisfy 0 < min <= max".into()));
        }
        if self.confounder_rate < 0.0 {
            return Err(Error::InvalidConfig("confounder_rate must be >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("SynthConfig serializes")
    }
}

/// One generated day: the trace, its event labels, and the confounder
/// spans (negative-sample candidates, never labeled as events).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDay {
    pub trace: Trace,
    pub labels: LabelSet,
    pub confounders: Vec<Interval>,
}

/// Generates `cfg.days` traces; day `i` depends only on `(seed, i)`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<SynthDay>> {
    cfg.validate()?;
    (0..cfg.days)
        .into_par_iter()
        .map(|day| generate_day(cfg, day))
        .collect()
}

pub fn generate_day(cfg: &SynthConfig, day: usize) -> Result<SynthDay> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(day as u64 + 1);
    let n = cfg.samples_per_day;
    let fs = cfg.sample_rate;

    let mut buf = background_noise(&mut rng, n, fs, cfg.noise_white_rms, cfg.noise_colored_rms);

    let n_events = rng.gen_range(cfg.events_per_day_min..=cfg.events_per_day_max);
    let n_confounders = if cfg.confounder_rate > 0.0 {
        Poisson::new(cfg.confounder_rate).unwrap().sample(&mut rng) as usize
    } else {
        0
    };

    let spans: Vec<usize> = (0..n_events + n_confounders)
        .map(|_| rng.gen_range(cfg.event_span_min..=cfg.event_span_max))
        .collect();
    let intervals = place_disjoint(&mut rng, &spans, n, cfg.min_gap)?;
    let (event_intervals, confounder_intervals) = intervals.split_at(n_events);

    for iv in event_intervals {
        let wave = event_waveform(&mut rng, iv.len(), fs, cfg);
        add_scaled_to_snr(&mut buf, iv, &wave, rng.gen_range(cfg.snr_min..=cfg.snr_max));
    }
    for iv in confounder_intervals {
        let wave = confounder_waveform(&mut rng, iv.len(), fs);
        add_scaled_to_snr(&mut buf, iv, &wave, rng.gen_range(cfg.snr_min..=cfg.snr_max));
    }

    let samples: Vec<f32> = buf.iter().map(|&v| v as f32).collect();
    let trace = Trace::new(
        samples,
        fs,
        day as f64 * n as f64 / fs,
        format!("{}_{:03}", cfg.trace_prefix, day),
    )?;
    let labels = LabelSet::new(event_intervals.to_vec(), n)?;
    Ok(SynthDay {
        trace,
        labels,
        confounders: confounder_intervals.to_vec(),
    })
}

/// White Gaussian floor plus a bank of random-phase sinusoids in 1-10 Hz.
/// Sinusoids use the rotation recurrence so long traces stay cheap.
fn background_noise(
    rng: &mut ChaCha8Rng,
    n: usize,
    fs: f64,
    white_rms: f64,
    colored_rms: f64,
) -> Vec<f64> {
    let mut buf = vec![0.0f64; n];
    if white_rms > 0.0 {
        let normal = Normal::new(0.0, white_rms).unwrap();
        for v in buf.iter_mut() {
            *v = normal.sample(rng);
        }
    }
    if colored_rms > 0.0 {
        const BANK: usize = 16;
        let amp = colored_rms * (2.0 / BANK as f64).sqrt();
        for _ in 0..BANK {
            let freq = rng.gen_range(1.0..10.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let omega = 2.0 * PI * freq / fs;
            let c = 2.0 * omega.cos();
            let mut prev = amp * (phase - omega).sin();
            let mut curr = amp * phase.sin();
            buf[0] += curr;
            for v in buf.iter_mut().skip(1) {
                let next = c * curr - prev;
                prev = curr;
                curr = next;
                *v += curr;
            }
        }
    }
    buf
}

/// Places intervals of the given spans uniformly at random, keeping at
/// least `min_gap` samples between any two.
fn place_disjoint(
    rng: &mut ChaCha8Rng,
    spans: &[usize],
    n: usize,
    min_gap: usize,
) -> Result<Vec<Interval>> {
    let mut placed: Vec<Interval> = Vec::with_capacity(spans.len());
    for &span in spans {
        if span >= n {
            return Err(Error::PlacementInfeasible(format!(
                "span {span} does not fit in a {n}-sample trace"
            )));
        }
        let mut ok = false;
        for _ in 0..10_000 {
            let start = rng.gen_range(0..=n - span);
            let candidate = Interval::new(start, start + span)?;
            let padded = Interval {
                start: candidate.start.saturating_sub(min_gap),
                end: (candidate.end + min_gap).min(n),
            };
            if placed.iter().all(|p| !p.overlaps(&padded)) {
                placed.push(candidate);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::PlacementInfeasible(format!(
                "could not place {} transients of ~{span} samples in a {n}-sample trace",
                spans.len()
            )));
        }
    }
    Ok(placed)
}

/// Two-phase event: ramped emergence oscillation, then 1-4 decaying bursts.
fn event_waveform(rng: &mut ChaCha8Rng, span: usize, fs: f64, cfg: &SynthConfig) -> Vec<f64> {
    let mut w = vec![0.0f64; span];
    let e_len = ((span as f64 * rng.gen_range(0.35..0.55)) as usize).clamp(1, span - 1);

    let f_em = cfg.emergence_freq_hz + rng.gen_range(-1.0..1.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let f_wobble = rng.gen_range(0.2..0.5);
    let wobble_phase = rng.gen_range(0.0..2.0 * PI);
    for t in 0..e_len {
        let ts = t as f64 / fs;
        let ramp = (t as f64 / e_len as f64).powf(1.5);
        let env = ramp * (1.0 + 0.3 * (2.0 * PI * f_wobble * ts + wobble_phase).sin());
        w[t] = env * (2.0 * PI * f_em * ts + phase).sin();
    }

    let i_len = span - e_len;
    let peaks = rng.gen_range(cfg.impulsive_peaks_min..=cfg.impulsive_peaks_max);
    let seg = (i_len / peaks).max(1);
    for p in 0..peaks {
        let burst_start = e_len + p * seg;
        let burst_len = seg.min(span - burst_start);
        if burst_len == 0 {
            break;
        }
        let amp = rng.gen_range(1.2..2.2);
        let f_im = cfg.impulsive_freq_hz + rng.gen_range(-1.0..1.0);
        let phi = rng.gen_range(0.0..2.0 * PI);
        let tau = (burst_len as f64 / 5.0).max(1.0);
        for t in 0..burst_len {
            let ts = t as f64 / fs;
            w[burst_start + t] +=
                amp * (-(t as f64) / tau).exp() * (2.0 * PI * f_im * ts + phi).sin();
        }
    }
    w
}

/// Broadband 5-80 Hz chirp under a Hann envelope: a transient without the
/// emergence/impulsive structure, standing in for trains and machinery.
fn confounder_waveform(rng: &mut ChaCha8Rng, span: usize, fs: f64) -> Vec<f64> {
    let (f0, f1) = (5.0, 80.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let mut w = vec![0.0f64; span];
    for (t, v) in w.iter_mut().enumerate() {
        let ts = t as f64 / fs;
        let dur = span as f64 / fs;
        let inst_phase = 2.0 * PI * (f0 * ts + (f1 - f0) * ts * ts / (2.0 * dur));
        let env = 0.5 * (1.0 - (2.0 * PI * t as f64 / span as f64).cos());
        *v = env * (inst_phase + phi).sin();
    }
    w
}

/// Adds `wave` into the buffer at `iv`, scaled so that the inserted RMS is
/// `snr` times the background RMS inside the same span.
fn add_scaled_to_snr(buf: &mut [f64], iv: &Interval, wave: &[f64], snr: f64) {
    let noise_rms = rms(&buf[iv.start..iv.end]);
    let wave_rms = rms(wave);
    if wave_rms <= 0.0 {
        return;
    }
    let scale = snr * noise_rms / wave_rms;
    for (dst, &src) in buf[iv.start..iv.end].iter_mut().zip(wave) {
        *dst += scale * src;
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_cfg() -> SynthConfig {
        SynthConfig {
            days: 2,
            samples_per_day: 200_000,
            events_per_day_min: 1,
            events_per_day_max: 2,
            event_span_min: 4_000,
            event_span_max: 8_000,
            snr_min: 4.0,
            snr_max: 6.0,
            confounder_rate: 1.0,
            min_gap: 10_000,
            seed: 42,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn day_preset_has_canonical_geometry() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.samples_per_day, 17_280_001);
        assert_eq!(cfg.sample_rate, 200.0);
        assert_eq!(cfg.event_span_max, 12_000);
        cfg.validate().unwrap();
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = mini_cfg();
        let a = generate_day(&cfg, 0).unwrap();
        let b = generate_day(&cfg, 0).unwrap();
        assert_eq!(a, b);
        let c = generate_day(&cfg, 1).unwrap();
        assert_ne!(a.trace.samples, c.trace.samples);
    }

    #[test]
    fn zero_events_gives_pure_noise_and_empty_labels() {
        let cfg = SynthConfig {
            events_per_day_min: 0,
            events_per_day_max: 0,
            confounder_rate: 0.0,
            ..mini_cfg()
        };
        let day = generate_day(&cfg, 0).unwrap();
        assert!(day.labels.is_empty());
        assert!(day.confounders.is_empty());
        // Pure noise: nothing above the ~5-sigma envelope of the model.
        let max = day.trace.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(max < 10.0, "max amplitude {max}");
    }

    #[test]
    fn event_spans_respect_config_range() {
        let cfg = mini_cfg();
        for day in generate_synthetic(&cfg).unwrap() {
            assert!(!day.labels.is_empty());
            for e in day.labels.events() {
                assert!(e.len() >= cfg.event_span_min && e.len() <= cfg.event_span_max);
                assert!(e.end <= day.trace.len());
            }
        }
    }

    #[test]
    fn transients_are_separated_by_min_gap() {
        let cfg = mini_cfg();
        let day = generate_day(&cfg, 3).unwrap();
        let mut all: Vec<Interval> = day.labels.events().to_vec();
        all.extend(day.confounders.iter().copied());
        all.sort();
        for pair in all.windows(2) {
            assert!(pair[1].start - pair[0].end >= cfg.min_gap);
        }
    }

    #[test]
    fn infeasible_placement_is_reported() {
        let cfg = SynthConfig {
            samples_per_day: 30_000,
            events_per_day_min: 3,
            events_per_day_max: 3,
            event_span_min: 8_000,
            event_span_max: 8_000,
            confounder_rate: 0.0,
            min_gap: 20_000,
            ..mini_cfg()
        };
        let err = generate_day(&cfg, 0);
        assert!(matches!(err, Err(Error::PlacementInfeasible(_))), "{err:?}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = SynthConfig {
            emergence_freq_hz: 150.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            event_span_min: 100,
            event_span_max: 50,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            snr_min: 0.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = mini_cfg();
        let text = cfg.to_toml();
        assert_eq!(SynthConfig::from_toml(&text).unwrap(), cfg);
    }

    /// FFT peak-frequency oracle: the dominant spectral line of the first
    /// event phase sits at the emergence frequency, the second at the
    /// impulsive frequency.
    #[test]
    fn event_phases_have_expected_spectral_peaks() {
        use rustfft::{num_complex::Complex, FftPlanner};

        fn dominant_freq(samples: &[f32], fs: f64, lo_hz: f64) -> f64 {
            let n = samples.len();
            let mut planner = FftPlanner::<f64>::new();
            let fft = planner.plan_fft_forward(n);
            let mut buf: Vec<Complex<f64>> = samples
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let hann = 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos());
                    Complex::new(v as f64 * hann, 0.0)
                })
                .collect();
            fft.process(&mut buf);
            let lo_bin = (lo_hz * n as f64 / fs).ceil() as usize;
            let hi_bin = (95.0 * n as f64 / fs).floor() as usize;
            let (best, _) = buf[lo_bin..=hi_bin]
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.norm_sqr()))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            (lo_bin + best) as f64 * fs / n as f64
        }

        let cfg = SynthConfig {
            events_per_day_min: 1,
            events_per_day_max: 1,
            confounder_rate: 0.0,
            ..mini_cfg()
        };
        for day_idx in 0..3 {
            let day = generate_day(&cfg, day_idx).unwrap();
            let event = day.labels.events()[0];
            let span = event.len();
            // First 30% lies inside the emergence phase (35-55% of the span),
            // last 35% inside the impulsive phase.
            let emergence = &day.trace.samples[event.start..event.start + span * 3 / 10];
            let impulsive = &day.trace.samples[event.end - span * 35 / 100..event.end];
            let f1 = dominant_freq(emergence, cfg.sample_rate, 12.0);
            let f2 = dominant_freq(impulsive, cfg.sample_rate, 12.0);
            assert!((f1 - 30.0).abs() <= 2.0, "day {day_idx}: emergence peak at {f1} Hz");
            assert!((f2 - 60.0).abs() <= 2.0, "day {day_idx}: impulsive peak at {f2} Hz");
        }
    }

    /// Positive windows cut around generated events stay z-scored.
    #[test]
    fn generated_positive_windows_normalize_cleanly() {
        let cfg = mini_cfg();
        let day = generate_day(&cfg, 5).unwrap();
        let set = crate::data::make_training_set(
            &[(day.trace, day.labels)],
            10_000,
            &crate::data::NegativePolicy::default(),
        )
        .unwrap();
        assert!(!set.is_empty());
        for w in &set {
            let n = w.samples.len() as f64;
            let mean = w.samples.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = w
                .samples
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n;
            assert!(mean.abs() < 1e-5 && (var.sqrt() - 1.0).abs() < 1e-5);
        }
    }
}
