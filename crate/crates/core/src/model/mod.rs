//! Declarative network architecture and its parameter store.
//!
//! The network is a stem convolution, an average pool, a stack of densely
//! connected blocks separated by average pools, a global average pool, and
//! a scalar fully connected head. Inside a block every layer applies
//! batch norm, ReLU, then convolution to the concatenation of the block
//! input and all previous layer outputs, so the feature width after layer
//! `l` is `d_0 + k*l` for growth rate `k`.

mod forward;
mod io;

pub use forward::{
    backward_batch, check_model_gradients, forward_train_batch, score_infer, Tape,
};
pub use io::{
    load_weights, load_weights_file, save_weights, save_weights_file, weights_from_bytes,
    weights_to_bytes,
};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormGrads, BatchNormParams, ConvGrads, ConvParams, LinearGrads, LinearParams, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Declarative description of the network.
///
/// `ArchSpec::seismic_net()` is the canonical configuration: 18,000-sample
/// windows, a stride-2 stem of 24 width-7 filters, ten blocks of six
/// `conv3` layers at growth rate 12, and 2/2 average pools, ending in a
/// global average pool and a scalar head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_length: usize,
    pub input_channels: usize,
    pub stem_kernel: usize,
    pub stem_filters: usize,
    pub stem_stride: usize,
    pub block_count: usize,
    pub layers_per_block: usize,
    pub growth_rate: usize,
    pub block_kernel: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Output dimension of the head; the detector is scalar-score, so 1.
    pub head_dim: usize,
}

/// One rung of the network's shape ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    pub len: usize,
    pub channels: usize,
}

impl ArchSpec {
    pub fn seismic_net() -> Self {
        ArchSpec {
            input_length: 18_000,
            input_channels: 1,
            stem_kernel: 7,
            stem_filters: 24,
            stem_stride: 2,
            block_count: 10,
            layers_per_block: 6,
            growth_rate: 12,
            block_kernel: 3,
            pool_window: 2,
            pool_stride: 2,
            head_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_length", self.input_length),
            ("input_channels", self.input_channels),
            ("stem_kernel", self.stem_kernel),
            ("stem_filters", self.stem_filters),
            ("stem_stride", self.stem_stride),
            ("block_kernel", self.block_kernel),
            ("pool_window", self.pool_window),
            ("pool_stride", self.pool_stride),
            ("head_dim", self.head_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if self.block_count > 0 && (self.layers_per_block == 0 || self.growth_rate == 0) {
            return Err(Error::InvalidSpec(
                "blocks need layers_per_block >= 1 and growth_rate >= 1".into(),
            ));
        }
        if self.head_dim != 1 {
            return Err(Error::InvalidSpec(
                "head_dim must be 1: the detector emits a single score".into(),
            ));
        }
        Ok(())
    }

    /// Feature width entering block `b` (its `d_0`).
    pub fn block_input_channels(&self, b: usize) -> usize {
        self.stem_filters + b * self.layers_per_block * self.growth_rate
    }

    /// Channels entering the head (width after the last block).
    pub fn feature_channels(&self) -> usize {
        self.block_input_channels(self.block_count)
    }

    /// Sequence of `(stage, length, channels)` the forward pass produces.
    pub fn shape_ladder(&self) -> Vec<StageShape> {
        let mut ladder = Vec::new();
        let mut push = |stage: String, len: usize, channels: usize| {
            ladder.push(StageShape { stage, len, channels });
        };
        let mut len = self.input_length;
        push("input".into(), len, self.input_channels);
        len = len.div_ceil(self.stem_stride);
        push("stem-conv".into(), len, self.stem_filters);
        len = len.div_ceil(self.pool_stride);
        push("pool".into(), len, self.stem_filters);
        for b in 0..self.block_count {
            let out_ch = self.block_input_channels(b + 1);
            push(format!("dense{}", b + 1), len, out_ch);
            if b + 1 < self.block_count {
                len = len.div_ceil(self.pool_stride);
                push("pool".into(), len, out_ch);
            }
        }
        push("global-pool".into(), 1, self.feature_channels());
        push("fc".into(), 1, self.head_dim);
        ladder
    }

    /// Canonical little-endian field encoding used for hashing and on-disk
    /// headers.
    pub fn encode_fields(&self) -> [u32; 12] {
        [
            self.input_length as u32,
            self.input_channels as u32,
            self.stem_kernel as u32,
            self.stem_filters as u32,
            self.stem_stride as u32,
            self.block_count as u32,
            self.layers_per_block as u32,
            self.growth_rate as u32,
            self.block_kernel as u32,
            self.pool_window as u32,
            self.pool_stride as u32,
            self.head_dim as u32,
        ]
    }

    pub fn from_fields(f: [u32; 12]) -> Self {
        ArchSpec {
            input_length: f[0] as usize,
            input_channels: f[1] as usize,
            stem_kernel: f[2] as usize,
            stem_filters: f[3] as usize,
            stem_stride: f[4] as usize,
            block_count: f[5] as usize,
            layers_per_block: f[6] as usize,
            growth_rate: f[7] as usize,
            block_kernel: f[8] as usize,
            pool_window: f[9] as usize,
            pool_stride: f[10] as usize,
            head_dim: f[11] as usize,
        }
    }

    /// Content hash over the canonical field encoding.
    pub fn content_hash(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in self.encode_fields() {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }

    /// Parses the flat key/value TOML schema.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ArchSpec =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("arch spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ArchSpec serializes")
    }
}

/// Parameters of one dense-block layer: batch norm over the concatenated
/// input, then a growth-rate-wide convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayerParams<T> {
    pub bn: BatchNormParams<T>,
    pub conv: ConvParams<T>,
}

/// Every learnable tensor of the network plus batch-norm running state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    spec: ArchSpec,
    pub stem: ConvParams<T>,
    pub blocks: Vec<Vec<DenseLayerParams<T>>>,
    pub head: LinearParams<T>,
    /// Optimizer steps applied so far (metadata, serialized with weights).
    pub train_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRule {
    /// Zero-mean normal weights scaled by fan-in, zero biases, identity BN.
    HeNormal,
    /// Everything zero (useful for tests and hand-built models).
    Zeros,
}

/// Allocates and initializes all parameters for `spec`; deterministic for
/// a fixed seed.
pub fn build_model<T: Scalar>(spec: &ArchSpec, init: InitRule, seed: u64) -> Result<ModelParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |kernel: &mut [T], fan_in: usize| {
        if let InitRule::HeNormal = init {
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            for v in kernel.iter_mut() {
                *v = T::from_f64c(dist.sample(&mut rng));
            }
        }
    };

    let mut stem = ConvParams::zeros(
        spec.stem_kernel,
        spec.input_channels,
        spec.stem_filters,
        spec.stem_stride,
    );
    fill(stem.kernel_mut(), spec.stem_kernel * spec.input_channels);

    let mut blocks = Vec::with_capacity(spec.block_count);
    for b in 0..spec.block_count {
        let d0 = spec.block_input_channels(b);
        let mut layers = Vec::with_capacity(spec.layers_per_block);
        for l in 0..spec.layers_per_block {
            let in_ch = d0 + l * spec.growth_rate;
            let bn = BatchNormParams::identity(in_ch);
            let mut conv = ConvParams::zeros(spec.block_kernel, in_ch, spec.growth_rate, 1);
            fill(conv.kernel_mut(), spec.block_kernel * in_ch);
            layers.push(DenseLayerParams { bn, conv });
        }
        blocks.push(layers);
    }

    let mut head = LinearParams::zeros(spec.feature_channels(), spec.head_dim);
    fill(&mut head.weight, spec.feature_channels());

    Ok(ModelParams {
        spec: spec.clone(),
        stem,
        blocks,
        head,
        train_steps: 0,
    })
}

impl<T: Scalar> ModelParams<T> {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    /// Exact learnable parameter count (kernels, biases, gammas, betas;
    /// batch-norm running statistics are state, not parameters).
    pub fn count_parameters(&self) -> usize {
        let mut n = self.stem.param_count() + self.head.param_count();
        for layer in self.blocks.iter().flatten() {
            n += layer.bn.param_count() + layer.conv.param_count();
        }
        n
    }

    /// Learnable tensors in declaration order. The same order is used by
    /// gradients, the optimizer state, and the weight file.
    pub fn learnable_tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![self.stem.kernel(), &self.stem.bias];
        for layer in self.blocks.iter().flatten() {
            out.push(&layer.bn.gamma);
            out.push(&layer.bn.beta);
            out.push(layer.conv.kernel());
            out.push(&layer.conv.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn learnable_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let (stem_kernel, stem_bias) = self.stem.tensors_mut();
        let mut out: Vec<&mut [T]> = vec![stem_kernel, stem_bias];
        for layer in self.blocks.iter_mut().flatten() {
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta);
            let (kernel, bias) = layer.conv.tensors_mut();
            out.push(kernel);
            out.push(bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// True once every batch-norm layer has usable running statistics.
    pub fn bn_ready(&self) -> bool {
        self.blocks
            .iter()
            .flatten()
            .all(|layer| layer.bn.stats_initialized)
    }
}

/// Gradients mirroring [`ModelParams`]'s learnable tensors.
#[derive(Debug, Clone)]
pub struct DenseLayerGrads<T> {
    pub bn: BatchNormGrads<T>,
    pub conv: ConvGrads<T>,
}

#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub stem: ConvGrads<T>,
    pub blocks: Vec<Vec<DenseLayerGrads<T>>>,
    pub head: LinearGrads<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        ModelGrads {
            stem: ConvGrads::zeros_like(&params.stem),
            blocks: params
                .blocks
                .iter()
                .map(|layers| {
                    layers
                        .iter()
                        .map(|l| DenseLayerGrads {
                            bn: BatchNormGrads {
                                gamma: vec![T::zero(); l.bn.gamma.len()],
                                beta: vec![T::zero(); l.bn.beta.len()],
                            },
                            conv: ConvGrads::zeros_like(&l.conv),
                        })
                        .collect()
                })
                .collect(),
            head: LinearGrads::zeros_like(&params.head),
        }
    }

    /// Tensors in the same declaration order as
    /// [`ModelParams::learnable_tensors`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.stem.kernel, &self.stem.bias];
        for layer in self.blocks.iter().flatten() {
            out.push(&layer.bn.gamma);
            out.push(&layer.bn.beta);
            out.push(&layer.conv.kernel);
            out.push(&layer.conv.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.stem.kernel, &mut self.stem.bias];
        for layer in self.blocks.iter_mut().flatten() {
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta);
            out.push(&mut layer.conv.kernel);
            out.push(&mut layer.conv.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn scale(&mut self, factor: T) {
        for tensor in self.tensors_mut() {
            for v in tensor {
                *v = *v * factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_ladder_matches_growth_law() {
        let spec = ArchSpec::seismic_net();
        spec.validate().unwrap();
        assert_eq!(spec.block_input_channels(0), 24);
        assert_eq!(spec.block_input_channels(1), 96);
        assert_eq!(spec.feature_channels(), 744);
    }

    #[test]
    fn canonical_parameter_count_near_800k() {
        let spec = ArchSpec::seismic_net();
        let model = build_model::<f32>(&spec, InitRule::Zeros, 0).unwrap();
        let n = model.count_parameters();
        assert!((780_000..=880_000).contains(&n), "count {n}");
    }

    #[test]
    fn zero_block_count_is_stem_plus_head() {
        let spec = ArchSpec {
            block_count: 0,
            ..ArchSpec::seismic_net()
        };
        let model = build_model::<f32>(&spec, InitRule::Zeros, 0).unwrap();
        assert_eq!(model.count_parameters(), 7 * 24 + 24 + (24 + 1));
    }

    #[test]
    fn mini_spec_count_matches_closed_form() {
        let spec = ArchSpec {
            input_length: 2250,
            block_count: 4,
            ..ArchSpec::seismic_net()
        };
        let model = build_model::<f32>(&spec, InitRule::HeNormal, 7).unwrap();
        // Independent summation: stem + sum over (block, layer) + head.
        let mut want = spec.stem_kernel * spec.input_channels * spec.stem_filters + spec.stem_filters;
        for b in 0..spec.block_count {
            for l in 0..spec.layers_per_block {
                let cin = spec.block_input_channels(b) + l * spec.growth_rate;
                want += 2 * cin; // gamma, beta
                want += spec.block_kernel * cin * spec.growth_rate + spec.growth_rate;
            }
        }
        want += spec.feature_channels() * 1 + 1;
        assert_eq!(model.count_parameters(), want);
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let spec = ArchSpec {
            input_length: 128,
            block_count: 2,
            layers_per_block: 2,
            ..ArchSpec::seismic_net()
        };
        let a = build_model::<f32>(&spec, InitRule::HeNormal, 42).unwrap();
        let b = build_model::<f32>(&spec, InitRule::HeNormal, 42).unwrap();
        let c = build_model::<f32>(&spec, InitRule::HeNormal, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ArchSpec::seismic_net();
        spec.head_dim = 2;
        assert!(spec.validate().is_err());
        let mut spec = ArchSpec::seismic_net();
        spec.stem_stride = 0;
        assert!(spec.validate().is_err());
        let mut spec = ArchSpec::seismic_net();
        spec.growth_rate = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = ArchSpec::seismic_net();
        let text = spec.to_toml();
        assert_eq!(ArchSpec::from_toml(&text).unwrap(), spec);
    }

    #[test]
    fn ladder_lengths_follow_ceil_law() {
        let spec = ArchSpec::seismic_net();
        let ladder = spec.shape_ladder();
        // Spot checks; the full Table comparison lives in the acceptance suite.
        assert_eq!(ladder[1].len, 9000);
        assert_eq!(ladder[2].len, 4500);
        let last = ladder.last().unwrap();
        assert_eq!((last.len, last.channels), (1, 1));
    }
}
