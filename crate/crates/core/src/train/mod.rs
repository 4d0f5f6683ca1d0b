//! Logistic-loss training over labeled windows.
//!
//! Windows are z-scored individually (`preprocess`), labels live in
//! {-1, +1}, and the loss is `log(1 + e^(-y*z))` on the scalar head score.
//! Optimization is plain Adam over shuffled mini-batches.

mod adam;
mod run;

pub use adam::{adam_step, AdamState};
pub use run::{
    load_checkpoint, load_checkpoint_file, save_checkpoint, train, write_history_csv, Checkpoint,
    EpochStats, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};

/// Binary event label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// The y in {-1, +1} the loss consumes.
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Label::Positive => T::one(),
            Label::Negative => -T::one(),
        }
    }
}

/// Where a training window came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSource {
    Event,
    PickedNegative,
    RandomNegative,
}

/// One preprocessed training window plus its provenance.
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub samples: Vec<f32>,
    pub label: Label,
    pub trace_id: String,
    pub start: usize,
    pub source: WindowSource,
}

/// Training hyperparameters. The TOML schema is the flat field list with
/// these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Write a checkpoint every N epochs; 0 disables checkpointing.
    pub checkpoint_every: usize,
    /// Repeat positive windows so classes are roughly balanced.
    pub oversample_positives: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 50,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            oversample_positives: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig("lr must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("TrainConfig serializes")
    }
}

/// Numerically stable logistic loss `log(1 + e^(-y*z))` for y in {-1, +1}.
pub fn logistic_loss<T: Scalar>(y: T, z: T) -> Result<T> {
    check_label(y)?;
    let t = (y * z).to_f64c();
    let loss = if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    };
    Ok(T::from_f64c(loss))
}

/// dLL/dz = -y / (1 + e^(y*z)), evaluated without overflow.
pub fn logistic_loss_grad<T: Scalar>(y: T, z: T) -> Result<T> {
    check_label(y)?;
    let t = (y * z).to_f64c();
    let sig_neg = if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    };
    Ok(T::from_f64c(-y.to_f64c() * sig_neg))
}

fn check_label<T: Scalar>(y: T) -> Result<()> {
    if y != T::one() && y != -T::one() {
        return Err(Error::InvalidInput(format!(
            "label must be -1 or +1, got {y}"
        )));
    }
    Ok(())
}

/// Z-scores one window: subtract the mean, divide by the (population)
/// standard deviation. Flat windows (std < 1e-12) map to all zeros.
/// Accumulation runs in f64.
pub fn preprocess<T: Scalar>(window: &[T]) -> Vec<T> {
    if window.is_empty() {
        return Vec::new();
    }
    let n = window.len() as f64;
    let mean = window.iter().map(|v| v.to_f64c()).sum::<f64>() / n;
    let var = window
        .iter()
        .map(|v| {
            let d = v.to_f64c() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![T::zero(); window.len()];
    }
    window
        .iter()
        .map(|v| T::from_f64c((v.to_f64c() - mean) / std))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn loss_at_zero_score_is_ln2() {
        let l = logistic_loss(1.0f64, 0.0).unwrap();
        assert!((l - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_symmetry_under_label_flip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let z: f64 = rng.gen_range(-30.0..30.0);
            let a = logistic_loss(-1.0, z).unwrap();
            let b = logistic_loss(1.0, -z).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn high_confidence_loss_matches_high_precision_value() {
        // log1p(e^-10), evaluated independently via the naive formula f64
        // can still represent.
        let naive = (1.0f64 + (-10.0f64).exp()).ln();
        let l = logistic_loss(1.0f64, 10.0).unwrap();
        assert!((l - naive).abs() < 1e-16);
        assert!((l - 4.5398899e-5).abs() < 1e-9);
    }

    #[test]
    fn loss_is_nonnegative_and_grad_bounded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let z: f64 = rng.gen_range(-30.0..30.0);
            let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let l = logistic_loss(y, z).unwrap();
            let g = logistic_loss_grad(y, z).unwrap();
            assert!(l >= 0.0 && l.is_finite());
            assert!(g.abs() < 1.0);
            // Gradient sign is -y * sigmoid(-yz), so it always opposes y.
            if g != 0.0 {
                assert_eq!(g.signum(), -y.signum());
            }
        }
        // Far from the margin the magnitude saturates at 1 (to rounding).
        assert!(logistic_loss_grad(1.0f64, -500.0).unwrap().abs() <= 1.0);
    }

    #[test]
    fn extreme_scores_do_not_overflow() {
        assert!(logistic_loss(1.0f64, -1e6).unwrap().is_finite());
        assert!(logistic_loss(-1.0f64, -1e6).unwrap() < 1e-300);
        assert!(logistic_loss_grad(1.0f64, -1e6).unwrap().is_finite());
    }

    #[test]
    fn invalid_label_is_rejected() {
        assert!(logistic_loss(0.5f64, 1.0).is_err());
        assert!(logistic_loss_grad(0.0f64, 1.0).is_err());
    }

    #[test]
    fn preprocess_hand_case() {
        let out = preprocess(&[1.0f64, 2.0, 3.0]);
        assert!((out[0] + 1.2247).abs() < 1e-4);
        assert!(out[1].abs() < 1e-12);
        assert!((out[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn preprocess_flat_window_is_zero() {
        let out = preprocess(&[3.0f32; 100]);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_output_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..18_000).map(|_| rng.gen_range(-5.0..5.0) + 2.0).collect();
        let out = preprocess(&w);
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
    }

    #[test]
    fn preprocess_is_idempotent_within_tolerance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0) * 40.0).collect();
        let once = preprocess(&w);
        let twice = preprocess(&once);
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
