//! The training loop: shuffled mini-batches, Adam, per-epoch diagnostics,
//! and checkpointing.
//!
//! Determinism: shuffling for epoch `e` draws from a ChaCha stream keyed
//! by `(seed, e)`, per-sample gradients are reduced in batch index order,
//! and batch-norm statistics fold in once per committed step. Two runs
//! with the same seed produce bit-identical weights, and a run resumed
//! from a checkpoint matches the uninterrupted one.

use super::{adam_step, AdamState, Label, LabeledWindow, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{
    backward_batch, forward_train_batch, weights_from_bytes, weights_to_bytes, ModelParams,
};
use crate::tensor::FeatureMap;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Resumable training state: weights plus optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub adam: AdamState<f32>,
    /// First epoch the next `train` call should run.
    pub next_epoch: usize,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn fresh(params: ModelParams<f32>, cfg: &TrainConfig) -> Self {
        let adam = AdamState::new(
            &params,
            cfg.lr as f32,
            cfg.beta1 as f32,
            cfg.beta2 as f32,
            cfg.eps as f32,
        );
        Checkpoint {
            params,
            adam,
            next_epoch: 0,
        }
    }
}

/// Trains until `cfg.epochs` total epochs have run (resuming from
/// `start.next_epoch`). Checkpoints are written to `checkpoint_dir` every
/// `cfg.checkpoint_every` epochs when both are provided.
pub fn train(
    start: Checkpoint,
    dataset: &[LabeledWindow],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let input_len = start.params.spec().input_length;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let positives: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].label == Label::Positive)
        .collect();
    let negatives: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset[i].label == Label::Negative)
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidInput(format!(
            "training set must contain both classes ({} positive, {} negative)",
            positives.len(),
            negatives.len()
        )));
    }
    for w in dataset {
        if w.samples.len() != input_len {
            return Err(Error::shape(
                "train",
                format!(
                    "window from trace {} has {} samples, model expects {input_len}",
                    w.trace_id,
                    w.samples.len()
                ),
            ));
        }
    }

    // Epoch index pool; positives may be repeated to balance the classes.
    let mut base_indices: Vec<usize> = (0..dataset.len()).collect();
    if cfg.oversample_positives {
        let repeat = (negatives.len() / positives.len()).max(1);
        for _ in 1..repeat {
            base_indices.extend_from_slice(&positives);
        }
    }

    let Checkpoint {
        mut params,
        mut adam,
        next_epoch,
    } = start;
    let mut history = Vec::new();

    for epoch in next_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut indices = base_indices.clone();
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let xs: Vec<FeatureMap<f32>> = chunk
                .iter()
                .map(|&i| FeatureMap::from_samples(&dataset[i].samples))
                .collect();
            let tape = forward_train_batch(&params, &xs)?;
            tape.apply_bn_stats(&mut params);

            let inv_b = 1.0 / chunk.len() as f32;
            let mut grad_scores = Vec::with_capacity(chunk.len());
            for (&i, &z) in chunk.iter().zip(&tape.scores) {
                let y: f32 = dataset[i].label.sign();
                loss_sum += super::logistic_loss(y, z)? as f64;
                grad_scores.push(super::logistic_loss_grad(y, z)? * inv_b);
                let predicted_positive = z > 0.0;
                if predicted_positive == (dataset[i].label == Label::Positive) {
                    correct += 1;
                }
            }
            let grads = backward_batch(&params, &tape, &grad_scores)?;
            adam_step(&mut params, &grads, &mut adam)?;
            params.train_steps += 1;
        }

        let n = indices.len() as f64;
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
        });

        if let (Some(dir), true) = (checkpoint_dir, cfg.checkpoint_every > 0) {
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                let ckpt = Checkpoint {
                    params: params.clone(),
                    adam: adam.clone(),
                    next_epoch: epoch + 1,
                };
                let path = dir.join(format!("checkpoint_epoch_{:04}.snck", epoch + 1));
                save_checkpoint(&ckpt, std::fs::File::create(path)?)?;
            }
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            adam,
            next_epoch: cfg.epochs,
        },
        history,
    })
}

/// Writes the `epoch,mean_loss,train_accuracy` history CSV.
pub fn write_history_csv<W: Write>(history: &[EpochStats], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

const CKPT_MAGIC: &[u8; 4] = b"SNCK";
const CKPT_VERSION: u16 = 1;

/// Checkpoint container: weight blob + Adam state, CRC-terminated.
pub fn save_checkpoint<W: Write>(ckpt: &Checkpoint, mut sink: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.write_u16::<LittleEndian>(CKPT_VERSION).unwrap();
    buf.write_u16::<LittleEndian>(0).unwrap();
    buf.write_u64::<LittleEndian>(ckpt.next_epoch as u64).unwrap();

    let weights = weights_to_bytes(&ckpt.params);
    buf.write_u64::<LittleEndian>(weights.len() as u64).unwrap();
    buf.extend_from_slice(&weights);

    buf.write_u64::<LittleEndian>(ckpt.adam.step).unwrap();
    for h in [ckpt.adam.lr, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps] {
        buf.write_f32::<LittleEndian>(h).unwrap();
    }
    buf.write_u32::<LittleEndian>(ckpt.adam.m.len() as u32).unwrap();
    for group in ckpt.adam.m.iter().chain(ckpt.adam.v.iter()) {
        buf.write_u64::<LittleEndian>(group.len() as u64).unwrap();
        for &value in group {
            buf.write_f32::<LittleEndian>(value).unwrap();
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    sink.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint<R: std::io::Read>(mut source: R) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let fail = |offset: usize, detail: String| Error::Format {
        offset: offset as u64,
        detail,
    };
    if buf.len() < 8 {
        return Err(fail(0, "file too short for a checkpoint header".into()));
    }
    let body_len = buf.len() - 4;
    let stored = (&buf[body_len..]).read_u32::<LittleEndian>().unwrap();
    let actual = crc32fast::hash(&buf[..body_len]);
    if stored != actual {
        return Err(fail(body_len, format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}")));
    }
    let mut r = &buf[..body_len];
    let remaining = |r: &[u8]| body_len - r.len();

    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut r, &mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(fail(0, "bad magic: not a checkpoint file".into()));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(fail(4, format!("unsupported checkpoint version {version}")));
    }
    r.read_u16::<LittleEndian>()?;
    let next_epoch = r.read_u64::<LittleEndian>()? as usize;
    let weights_len = r.read_u64::<LittleEndian>()? as usize;
    if weights_len > r.len() {
        return Err(fail(
            remaining(r),
            format!("truncated weight blob: need {weights_len} bytes, {} remain", r.len()),
        ));
    }
    let params = weights_from_bytes(&r[..weights_len])?;
    r = &r[weights_len..];

    let step = r.read_u64::<LittleEndian>()?;
    let lr = r.read_f32::<LittleEndian>()?;
    let beta1 = r.read_f32::<LittleEndian>()?;
    let beta2 = r.read_f32::<LittleEndian>()?;
    let eps = r.read_f32::<LittleEndian>()?;
    let groups = r.read_u32::<LittleEndian>()? as usize;
    let read_groups = |r: &mut &[u8]| -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(groups);
        for _ in 0..groups {
            let len = r.read_u64::<LittleEndian>()? as usize;
            if len * 4 > r.len() {
                return Err(fail(
                    remaining(r),
                    format!("truncated optimizer buffer: need {} bytes, {} remain", len * 4, r.len()),
                ));
            }
            let mut group = vec![0f32; len];
            r.read_f32_into::<LittleEndian>(&mut group)?;
            out.push(group);
        }
        Ok(out)
    };
    let m = read_groups(&mut r)?;
    let v = read_groups(&mut r)?;
    if !r.is_empty() {
        return Err(fail(remaining(r), format!("{} trailing bytes", r.len())));
    }

    let mut adam = AdamState::new(&params, lr, beta1, beta2, eps);
    if m.len() != adam.m.len()
        || m.iter().zip(&adam.m).any(|(a, b)| a.len() != b.len())
        || v.iter().zip(&adam.v).any(|(a, b)| a.len() != b.len())
    {
        return Err(fail(0, "optimizer buffers do not match the model's tensors".into()));
    }
    adam.step = step;
    adam.m = m;
    adam.v = v;
    Ok(Checkpoint {
        params,
        adam,
        next_epoch,
    })
}

pub fn load_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ArchSpec, InitRule};
    use crate::train::WindowSource;
    use rand::{Rng, SeedableRng};

    fn tiny_spec() -> ArchSpec {
        ArchSpec {
            input_length: 256,
            block_count: 2,
            layers_per_block: 2,
            growth_rate: 4,
            stem_filters: 6,
            ..ArchSpec::seismic_net()
        }
    }

    /// Positives carry a strong mid-band burst; negatives are noise.
    fn separable_dataset(n_each: usize, seed: u64) -> Vec<LabeledWindow> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for i in 0..2 * n_each {
            let positive = i < n_each;
            let mut w: Vec<f32> = (0..256).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            if positive {
                for (t, v) in w.iter_mut().enumerate().skip(96).take(64) {
                    *v += 6.0 * ((t as f32) * 0.8).sin();
                }
            }
            out.push(LabeledWindow {
                samples: super::super::preprocess(&w),
                label: if positive { Label::Positive } else { Label::Negative },
                trace_id: "toy".into(),
                start: 0,
                source: if positive {
                    WindowSource::Event
                } else {
                    WindowSource::RandomNegative
                },
            });
        }
        out
    }

    fn toy_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs,
            lr: 2e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 3).unwrap();
        let data = separable_dataset(4, 0);
        let start = Checkpoint::fresh(model.clone(), &toy_config(0));
        let out = train(start, &data, &toy_config(0), None).unwrap();
        assert_eq!(out.checkpoint.params, model);
        assert!(out.history.is_empty());
    }

    #[test]
    fn separable_toy_set_converges() {
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 3).unwrap();
        let data = separable_dataset(16, 1);
        let cfg = TrainConfig {
            lr: 4e-3,
            ..toy_config(12)
        };
        let out = train(Checkpoint::fresh(model, &cfg), &data, &cfg, None).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|h| h.mean_loss).collect();
        for pair in losses[..5].windows(2) {
            assert!(pair[1] < pair[0], "loss not decreasing: {losses:?}");
        }
        assert_eq!(out.history.last().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn same_seed_trains_bit_identically() {
        let data = separable_dataset(6, 2);
        let cfg = toy_config(2);
        let run = || {
            let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 9).unwrap();
            train(Checkpoint::fresh(model, &cfg), &data, &cfg, None).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            weights_to_bytes(&a.checkpoint.params),
            weights_to_bytes(&b.checkpoint.params)
        );
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn zero_lr_leaves_weights_bit_identical() {
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 4).unwrap();
        let data = separable_dataset(4, 3);
        let cfg = TrainConfig {
            lr: 0.0,
            ..toy_config(2)
        };
        let out = train(Checkpoint::fresh(model.clone(), &cfg), &data, &cfg, None).unwrap();
        for (a, b) in out
            .checkpoint
            .params
            .learnable_tensors()
            .iter()
            .zip(model.learnable_tensors())
        {
            assert_eq!(*a, b);
        }
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 5).unwrap();
        let mut data = separable_dataset(4, 4);
        data.retain(|w| w.label == Label::Negative);
        let cfg = toy_config(1);
        assert!(train(Checkpoint::fresh(model, &cfg), &data, &cfg, None).is_err());
    }

    #[test]
    fn resume_from_checkpoint_matches_uninterrupted_run() {
        let data = separable_dataset(6, 5);
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 6).unwrap();
        let full_cfg = toy_config(4);
        let full = train(
            Checkpoint::fresh(model.clone(), &full_cfg),
            &data,
            &full_cfg,
            None,
        )
        .unwrap();

        let half_cfg = toy_config(2);
        let half = train(Checkpoint::fresh(model, &half_cfg), &data, &half_cfg, None).unwrap();
        let resumed = train(half.checkpoint, &data, &full_cfg, None).unwrap();
        assert_eq!(
            weights_to_bytes(&full.checkpoint.params),
            weights_to_bytes(&resumed.checkpoint.params)
        );
    }

    #[test]
    fn checkpoint_round_trip_and_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let data = separable_dataset(4, 6);
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 7).unwrap();
        let cfg = TrainConfig {
            checkpoint_every: 1,
            ..toy_config(2)
        };
        let out = train(Checkpoint::fresh(model, &cfg), &data, &cfg, Some(dir.path())).unwrap();
        let last = dir.path().join("checkpoint_epoch_0002.snck");
        assert!(dir.path().join("checkpoint_epoch_0001.snck").exists());
        let loaded = load_checkpoint_file(&last).unwrap();
        assert_eq!(loaded, out.checkpoint);
    }

    #[test]
    fn corrupt_checkpoint_fails() {
        let data = separable_dataset(4, 6);
        let model = build_model::<f32>(&tiny_spec(), InitRule::HeNormal, 7).unwrap();
        let cfg = toy_config(1);
        let out = train(Checkpoint::fresh(model, &cfg), &data, &cfg, None).unwrap();
        let mut bytes = Vec::new();
        save_checkpoint(&out.checkpoint, &mut bytes).unwrap();
        let mid = bytes.len() / 3;
        bytes[mid] ^= 0x55;
        assert!(load_checkpoint(&bytes[..]).is_err());
    }

    #[test]
    fn history_csv_has_expected_shape() {
        let history = vec![
            EpochStats {
                epoch: 0,
                mean_loss: 0.69,
                train_accuracy: 0.5,
            },
            EpochStats {
                epoch: 1,
                mean_loss: 0.42,
                train_accuracy: 0.9,
            },
        ];
        let mut buf = Vec::new();
        write_history_csv(&history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,mean_loss,train_accuracy"));
        assert_eq!(lines.count(), 2);
    }
}
