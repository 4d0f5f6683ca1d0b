//! Minimal dense numeric kernel for 1-D feature maps.
//!
//! Everything the network needs is here: the [`FeatureMap`] container, the
//! forward and backward passes of each layer type (convolution, average
//! pooling, batch normalization, ReLU, fully connected), channel
//! concatenation, and a finite-difference gradient checker.
//!
//! Feature maps are stored channel-major (`data[c * len + t]`) so that
//! channel concatenation is a contiguous append and convolution inner loops
//! stream over memory. The logical shape is always `(length, channels)`.
//!
//! Forward/backward passes are pure functions of their inputs; training
//! runs them in `f32`, gradient checks in `f64`.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod linear;
mod pool;

pub use activation::{relu, relu_backward, relu_in_place};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, batchnorm_train, BatchNormGrads,
    BatchNormParams, BatchStats, BnMode, BnSaved,
};
pub use conv::{conv1d_backward, conv1d_forward, conv_output_len, ConvGrads, ConvParams};
pub use linear::{linear_backward, linear_forward, LinearGrads, LinearParams};
pub use pool::{avgpool1d, avgpool1d_backward, pool_output_len};

use crate::error::{Error, Result};
use std::fmt::{Debug, Display};

/// Floating-point scalar the kernel is generic over (`f32` or `f64`).
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }
    fn to_f64c(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// How convolution handles the trace boundary.
///
/// `SameCeil` zero-pads so `out_len == ceil(in_len / stride)`, splitting the
/// padding as evenly as possible with the smaller half on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingRule {
    SameCeil,
}

/// A `(length, channels)` real-valued signal flowing through the network.
///
/// Stored channel-major: channel `c` occupies `data[c*len .. (c+1)*len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    len: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(len: usize, channels: usize) -> Self {
        assert!(len >= 1 && channels >= 1, "feature map must be non-empty");
        FeatureMap {
            len,
            channels,
            data: vec![T::zero(); len * channels],
        }
    }

    /// Builds from channel-major data (`data[c*len + t]`).
    pub fn from_raw(len: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if len == 0 || channels == 0 || data.len() != len * channels {
            return Err(Error::shape(
                "FeatureMap::from_raw",
                format!(
                    "expected {len}x{channels} = {} values, got {}",
                    len * channels,
                    data.len()
                ),
            ));
        }
        Ok(FeatureMap {
            len,
            channels,
            data,
        })
    }

    /// Single-channel map from a sample slice.
    pub fn from_samples(samples: &[T]) -> Self {
        assert!(!samples.is_empty());
        FeatureMap {
            len: samples.len(),
            channels: 1,
            data: samples.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: len >= 1 && channels >= 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.len, self.channels)
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize) -> T {
        self.data[c * self.len + t]
    }

    #[inline]
    pub fn set(&mut self, t: usize, c: usize, v: T) {
        self.data[c * self.len + t] = v;
    }

    /// Contiguous slice of one channel.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Appends all channels of `other` after this map's channels.
    pub fn append_channels(&mut self, other: &FeatureMap<T>) -> Result<()> {
        if other.len != self.len {
            return Err(Error::shape(
                "concat_channels",
                format!("length mismatch: {} vs {}", self.len, other.len),
            ));
        }
        self.data.extend_from_slice(&other.data);
        self.channels += other.channels;
        Ok(())
    }

    /// Copy of the channel range `[c_lo, c_hi)`.
    pub fn slice_channels(&self, c_lo: usize, c_hi: usize) -> FeatureMap<T> {
        assert!(c_lo < c_hi && c_hi <= self.channels);
        FeatureMap {
            len: self.len,
            channels: c_hi - c_lo,
            data: self.data[c_lo * self.len..c_hi * self.len].to_vec(),
        }
    }

    /// Elementwise-adds `other` into this map's leading channels.
    pub fn add_assign_prefix(&mut self, other: &FeatureMap<T>) {
        assert!(other.len == self.len && other.channels <= self.channels);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Concatenates maps along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidInput("concat_channels needs at least one input".into()))?;
    let mut out = (*first).clone();
    for x in &xs[1..] {
        out.append_channels(x)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_indexing_round_trip() {
        let mut m = FeatureMap::<f64>::zeros(5, 3);
        m.set(2, 1, 7.5);
        assert_eq!(m.shape(), (5, 3));
        assert_eq!(m.get(2, 1), 7.5);
        assert_eq!(m.channel(1)[2], 7.5);
    }

    #[test]
    fn concat_adds_channel_counts() {
        let a = FeatureMap::<f64>::zeros(4500, 24);
        let b = FeatureMap::<f64>::zeros(4500, 12);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (4500, 36));
    }

    #[test]
    fn concat_single_input_is_identity() {
        let mut a = FeatureMap::<f64>::zeros(8, 2);
        a.set(3, 1, -2.0);
        let c = concat_channels(&[&a]).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn concat_is_associative_in_effect() {
        let mk = |seed: u64, ch: usize| {
            let mut m = FeatureMap::<f64>::zeros(6, ch);
            for c in 0..ch {
                for t in 0..6 {
                    m.set(t, c, (seed * 100 + c as u64 * 10 + t as u64) as f64);
                }
            }
            m
        };
        let (a, b, c) = (mk(1, 2), mk(2, 3), mk(3, 1));
        let ab = concat_channels(&[&a, &b]).unwrap();
        let ab_c = concat_channels(&[&ab, &c]).unwrap();
        let abc = concat_channels(&[&a, &b, &c]).unwrap();
        assert_eq!(ab_c, abc);
    }

    #[test]
    fn concat_rejects_length_mismatch() {
        let a = FeatureMap::<f64>::zeros(4, 1);
        let b = FeatureMap::<f64>::zeros(5, 1);
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn dense_accumulation_matches_growth_law() {
        // d_l = d_0 + k*l with d_0 = 24, k = 12, 6 layers -> 96 channels.
        let mut acc = FeatureMap::<f64>::zeros(10, 24);
        for _ in 0..6 {
            let layer_out = FeatureMap::<f64>::zeros(10, 12);
            acc.append_channels(&layer_out).unwrap();
        }
        assert_eq!(acc.channels(), 96);
    }
}
