//! Whole-network forward and backward passes.
//!
//! The training path runs a mini-batch through every stage in lockstep
//! (batch norm couples the samples), recording the activations backward
//! needs in a [`Tape`]. It does not touch the running statistics; the
//! caller folds `tape.bn_stats` in via [`Tape::apply_bn_stats`] when it
//! decides the step is committed. The inference path scores one window at
//! a time against frozen running statistics.

use super::{ArchSpec, ModelGrads, ModelParams, StageShape};
use crate::error::{Error, Result};
use crate::tensor::{
    avgpool1d, avgpool1d_backward, batchnorm_backward, batchnorm_infer, batchnorm_train,
    conv1d_backward, conv1d_forward, linear_backward, linear_forward, relu_backward,
    relu_in_place, BatchStats, BnSaved, FeatureMap, PaddingRule, Scalar,
};
use rayon::prelude::*;

/// Saved activations of one dense-block layer.
struct LayerTape<T> {
    bn_saved: BnSaved<T>,
    /// ReLU output; doubles as the convolution input and the ReLU mask.
    relu_out: Vec<FeatureMap<T>>,
}

struct BlockTape<T> {
    layers: Vec<LayerTape<T>>,
}

/// Everything backward needs from one training-mode forward pass.
pub struct Tape<T> {
    inputs: Vec<FeatureMap<T>>,
    stem_pool_in_len: usize,
    blocks: Vec<BlockTape<T>>,
    /// Input length of the pool following block `b` (absent for the last block).
    inter_pool_in_lens: Vec<usize>,
    global_pool_in_len: usize,
    head_inputs: Vec<Vec<T>>,
    bn_stats: Vec<BatchStats<T>>,
    stage_shapes: Vec<StageShape>,
    pub scores: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    /// The `(stage, length, channels)` ladder this pass actually produced.
    pub fn stage_shapes(&self) -> &[StageShape] {
        &self.stage_shapes
    }

    /// Folds the batch statistics of this pass into the model's running
    /// estimates (single-writer; call once per committed step).
    pub fn apply_bn_stats(&self, params: &mut ModelParams<T>) {
        let mut stats = self.bn_stats.iter();
        for layer in params.blocks.iter_mut().flatten() {
            let s = stats.next().expect("one BatchStats per BN layer");
            layer.bn.apply_batch_stats(s);
        }
    }
}

fn check_input<T: Scalar>(spec: &ArchSpec, x: &FeatureMap<T>) -> Result<()> {
    if x.len() != spec.input_length || x.channels() != spec.input_channels {
        return Err(Error::shape(
            "model::forward",
            format!(
                "input is {}x{}, model expects {}x{}",
                x.len(),
                x.channels(),
                spec.input_length,
                spec.input_channels
            ),
        ));
    }
    Ok(())
}

/// Training-mode batch forward. Pure: running statistics are not updated
/// (they are returned inside the tape instead).
pub fn forward_train_batch<T: Scalar>(
    params: &ModelParams<T>,
    xs: &[FeatureMap<T>],
) -> Result<Tape<T>> {
    let spec = params.spec();
    if xs.is_empty() {
        return Err(Error::InvalidInput("forward: empty batch".into()));
    }
    for x in xs {
        check_input(spec, x)?;
    }
    let mut shapes = vec![StageShape {
        stage: "input".into(),
        len: spec.input_length,
        channels: spec.input_channels,
    }];

    let stem_out: Vec<FeatureMap<T>> = xs
        .par_iter()
        .map(|x| conv1d_forward(x, &params.stem, PaddingRule::SameCeil))
        .collect::<Result<_>>()?;
    let record = |maps: &[FeatureMap<T>], stage: &str, shapes: &mut Vec<StageShape>| {
        let (len, channels) = maps[0].shape();
        shapes.push(StageShape {
            stage: stage.to_string(),
            len,
            channels,
        });
    };
    record(&stem_out, "stem-conv", &mut shapes);

    let stem_pool_in_len = stem_out[0].len();
    let mut acc: Vec<FeatureMap<T>> = stem_out
        .par_iter()
        .map(|m| avgpool1d(m, spec.pool_window, spec.pool_stride))
        .collect::<Result<_>>()?;
    record(&acc, "pool", &mut shapes);

    let mut blocks = Vec::with_capacity(spec.block_count);
    let mut inter_pool_in_lens = Vec::new();
    let mut bn_stats = Vec::new();
    for (b, layers) in params.blocks.iter().enumerate() {
        let mut layer_tapes = Vec::with_capacity(layers.len());
        for layer in layers {
            let (bn_out, bn_saved, stats) = batchnorm_train(&acc, &layer.bn)?;
            bn_stats.push(stats);
            let mut relu_out = bn_out;
            relu_out.iter_mut().for_each(relu_in_place);
            let conv_out: Vec<FeatureMap<T>> = relu_out
                .par_iter()
                .map(|m| conv1d_forward(m, &layer.conv, PaddingRule::SameCeil))
                .collect::<Result<_>>()?;
            for (a, c) in acc.iter_mut().zip(&conv_out) {
                a.append_channels(c)?;
            }
            layer_tapes.push(LayerTape { bn_saved, relu_out });
        }
        blocks.push(BlockTape { layers: layer_tapes });
        record(&acc, &format!("dense{}", b + 1), &mut shapes);
        if b + 1 < spec.block_count {
            inter_pool_in_lens.push(acc[0].len());
            acc = acc
                .par_iter()
                .map(|m| avgpool1d(m, spec.pool_window, spec.pool_stride))
                .collect::<Result<_>>()?;
            record(&acc, "pool", &mut shapes);
        }
    }

    let global_pool_in_len = acc[0].len();
    let pooled: Vec<FeatureMap<T>> = acc
        .par_iter()
        .map(|m| avgpool1d(m, m.len(), m.len()))
        .collect::<Result<_>>()?;
    record(&pooled, "global-pool", &mut shapes);

    let head_inputs: Vec<Vec<T>> = pooled.iter().map(|m| m.data().to_vec()).collect();
    let mut scores = Vec::with_capacity(xs.len());
    for h in &head_inputs {
        scores.push(linear_forward(h, &params.head)?[0]);
    }
    shapes.push(StageShape {
        stage: "fc".into(),
        len: 1,
        channels: spec.head_dim,
    });

    Ok(Tape {
        inputs: xs.to_vec(),
        stem_pool_in_len,
        blocks,
        inter_pool_in_lens,
        global_pool_in_len,
        head_inputs,
        bn_stats,
        stage_shapes: shapes,
        scores,
    })
}

/// Inference-mode score of a single window using running statistics.
pub fn score_infer<T: Scalar>(params: &ModelParams<T>, x: &FeatureMap<T>) -> Result<T> {
    let spec = params.spec();
    check_input(spec, x)?;
    let stem = conv1d_forward(x, &params.stem, PaddingRule::SameCeil)?;
    let mut acc = avgpool1d(&stem, spec.pool_window, spec.pool_stride)?;
    for (b, layers) in params.blocks.iter().enumerate() {
        for layer in layers {
            let mut bn_out = batchnorm_infer(std::slice::from_ref(&acc), &layer.bn)?;
            let mut m = bn_out.pop().expect("batch of one");
            relu_in_place(&mut m);
            let conv_out = conv1d_forward(&m, &layer.conv, PaddingRule::SameCeil)?;
            acc.append_channels(&conv_out)?;
        }
        if b + 1 < spec.block_count {
            acc = avgpool1d(&acc, spec.pool_window, spec.pool_stride)?;
        }
    }
    let pooled = avgpool1d(&acc, acc.len(), acc.len())?;
    Ok(linear_forward(pooled.data(), &params.head)?[0])
}

/// Backward pass over a whole batch; `grad_scores[i]` is dLoss/dscore_i.
/// Gradients are summed over the batch in sample order.
pub fn backward_batch<T: Scalar>(
    params: &ModelParams<T>,
    tape: &Tape<T>,
    grad_scores: &[T],
) -> Result<ModelGrads<T>> {
    let spec = params.spec();
    let batch = tape.inputs.len();
    if grad_scores.len() != batch {
        return Err(Error::shape(
            "model::backward",
            format!("{} grad scores for a batch of {batch}", grad_scores.len()),
        ));
    }
    let mut grads = ModelGrads::zeros_like(params);

    // Head, then undo the global pool.
    let feat = spec.feature_channels();
    let mut gmaps: Vec<FeatureMap<T>> = Vec::with_capacity(batch);
    for i in 0..batch {
        let (gx, hg) = linear_backward(
            std::slice::from_ref(&grad_scores[i]),
            &tape.head_inputs[i],
            &params.head,
        )?;
        grads.head.add_assign(&hg);
        let gmap = FeatureMap::from_raw(1, feat, gx)?;
        gmaps.push(avgpool1d_backward(
            &gmap,
            tape.global_pool_in_len,
            tape.global_pool_in_len,
            tape.global_pool_in_len,
        )?);
    }

    for b in (0..spec.block_count).rev() {
        if b + 1 < spec.block_count {
            let in_len = tape.inter_pool_in_lens[b];
            gmaps = gmaps
                .par_iter()
                .map(|g| avgpool1d_backward(g, in_len, spec.pool_window, spec.pool_stride))
                .collect::<Result<_>>()?;
        }
        gmaps = block_backward(params, tape, b, gmaps, &mut grads)?;
    }

    gmaps = gmaps
        .par_iter()
        .map(|g| avgpool1d_backward(g, tape.stem_pool_in_len, spec.pool_window, spec.pool_stride))
        .collect::<Result<_>>()?;

    let stem_results: Vec<_> = gmaps
        .par_iter()
        .zip(tape.inputs.par_iter())
        .map(|(g, x)| conv1d_backward(g, x, &params.stem))
        .collect::<Result<_>>()?;
    for (_, sg) in &stem_results {
        grads.stem.add_assign(sg);
    }
    Ok(grads)
}

/// Backpropagates through one dense block. `gmaps` carries the gradient of
/// the block output (full concatenated width); returns the gradient of the
/// block input (its first `d_0` channels).
fn block_backward<T: Scalar>(
    params: &ModelParams<T>,
    tape: &Tape<T>,
    b: usize,
    mut gmaps: Vec<FeatureMap<T>>,
    grads: &mut ModelGrads<T>,
) -> Result<Vec<FeatureMap<T>>> {
    let spec = params.spec();
    let d0 = spec.block_input_channels(b);
    let k = spec.growth_rate;
    for l in (0..spec.layers_per_block).rev() {
        let layer = &params.blocks[b][l];
        let ltape = &tape.blocks[b].layers[l];
        let c_lo = d0 + k * l;

        let grad_relu: Vec<FeatureMap<T>> = gmaps
            .par_iter()
            .zip(ltape.relu_out.par_iter())
            .map(|(g, relu_out)| {
                let grad_y = g.slice_channels(c_lo, c_lo + k);
                let (grad_conv_in, cg) = conv1d_backward(&grad_y, relu_out, &layer.conv)?;
                let masked = relu_backward(&grad_conv_in, relu_out)?;
                Ok((masked, cg))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|(masked, cg)| {
                grads.blocks[b][l].conv.add_assign(&cg);
                masked
            })
            .collect();

        let (grad_prefix, bn_g) = batchnorm_backward(&grad_relu, &ltape.bn_saved, &layer.bn)?;
        for (dst, src) in grads.blocks[b][l]
            .bn
            .gamma
            .iter_mut()
            .zip(&bn_g.gamma)
        {
            *dst = *dst + *src;
        }
        for (dst, src) in grads.blocks[b][l].bn.beta.iter_mut().zip(&bn_g.beta) {
            *dst = *dst + *src;
        }
        for (g, p) in gmaps.iter_mut().zip(&grad_prefix) {
            g.add_assign_prefix(p);
        }
    }
    Ok(gmaps
        .iter()
        .map(|g| g.slice_channels(0, d0))
        .collect())
}

/// Finite-difference check of the whole-network backward pass on a small
/// spec in double precision. The loss is a fixed random projection of the
/// batch scores; large tensors are subsampled (deterministically per seed)
/// to keep the number of forward evaluations bounded.
pub fn check_model_gradients(
    spec: &ArchSpec,
    tolerance: f64,
    seed: u64,
) -> Result<crate::tensor::gradcheck::GradCheckReport> {
    use crate::tensor::gradcheck::{relative_error, GradCheckEntry, GradCheckReport};
    use rand::{Rng, SeedableRng};

    let model = super::build_model::<f64>(spec, super::InitRule::HeNormal, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let batch = 2;
    let xs: Vec<FeatureMap<f64>> = (0..batch)
        .map(|_| {
            let data = (0..spec.input_length * spec.input_channels)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            FeatureMap::from_raw(spec.input_length, spec.input_channels, data)
        })
        .collect::<Result<_>>()?;
    let proj: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let tape = forward_train_batch(&model, &xs)?;
    let grads = backward_batch(&model, &tape, &proj)?;
    let loss = |m: &ModelParams<f64>| -> Result<f64> {
        let t = forward_train_batch(m, &xs)?;
        Ok(t.scores.iter().zip(&proj).map(|(z, p)| z * p).sum())
    };

    let mut max_err = 0.0f64;
    let grad_tensors = grads.tensors();
    for (gi, g) in grad_tensors.iter().enumerate() {
        for ei in 0..g.len() {
            if g.len() > 8 && rng.gen_range(0..4) != 0 {
                continue;
            }
            let mut pert = model.clone();
            let orig = pert.learnable_tensors()[gi][ei];
            // Small step keeps perturbations from crossing ReLU kinks;
            // double precision keeps the quotient clean regardless.
            let h = 1e-7 * (1.0 + orig.abs());
            pert.learnable_tensors_mut()[gi][ei] = orig + h;
            let up = loss(&pert)?;
            pert.learnable_tensors_mut()[gi][ei] = orig - h;
            let down = loss(&pert)?;
            let numeric = (up - down) / (2.0 * h);
            max_err = max_err.max(relative_error(g[ei], numeric));
        }
    }
    Ok(GradCheckReport {
        entries: vec![GradCheckEntry {
            label: "model/all-parameters".to_string(),
            max_rel_err: max_err,
            tolerance,
        }],
    })
}
