//! 1-D convolution (cross-correlation convention, no kernel flip).

use super::{FeatureMap, PaddingRule, Scalar};
use crate::error::{Error, Result};

/// Learnable parameters of one convolution layer.
///
/// The kernel is logically `(kernel_size, in_channels, out_channels)`;
/// in memory it is laid out out-channel-major (`[oc][ic][k]`) so the
/// accumulation loops stream over taps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    kernel: Vec<T>,
    kernel_size: usize,
    in_channels: usize,
    out_channels: usize,
    pub bias: Vec<T>,
    pub stride: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        assert!(kernel_size >= 1 && stride >= 1 && in_channels >= 1 && out_channels >= 1);
        ConvParams {
            kernel: vec![T::zero(); kernel_size * in_channels * out_channels],
            kernel_size,
            in_channels,
            out_channels,
            bias: vec![T::zero(); out_channels],
            stride,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    #[inline]
    fn widx(&self, k: usize, ic: usize, oc: usize) -> usize {
        (oc * self.in_channels + ic) * self.kernel_size + k
    }

    /// Tap `k` of the filter mapping input channel `ic` to output channel `oc`.
    #[inline]
    pub fn weight(&self, k: usize, ic: usize, oc: usize) -> T {
        self.kernel[self.widx(k, ic, oc)]
    }

    #[inline]
    pub fn set_weight(&mut self, k: usize, ic: usize, oc: usize, v: T) {
        let i = self.widx(k, ic, oc);
        self.kernel[i] = v;
    }

    /// Flat kernel storage (out-channel-major).
    pub fn kernel(&self) -> &[T] {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut [T] {
        &mut self.kernel
    }

    /// Kernel and bias as disjoint mutable slices.
    pub fn tensors_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.kernel, &mut self.bias)
    }

    /// Learnable element count (kernel + bias).
    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Gradients mirroring [`ConvParams`]; same kernel layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(p: &ConvParams<T>) -> Self {
        ConvGrads {
            kernel: vec![T::zero(); p.kernel.len()],
            bias: vec![T::zero(); p.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrads<T>) {
        for (a, b) in self.kernel.iter_mut().zip(&other.kernel) {
            *a = *a + *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a = *a + *b;
        }
    }
}

/// Output length under SAME-ceil padding.
pub fn conv_output_len(in_len: usize, stride: usize) -> usize {
    in_len.div_ceil(stride)
}

/// Total left/right zero padding for SAME-ceil, smaller half on the left.
fn same_ceil_padding(in_len: usize, kernel_size: usize, stride: usize) -> (usize, usize) {
    let out_len = conv_output_len(in_len, stride);
    let needed = (out_len - 1) * stride + kernel_size;
    let total = needed.saturating_sub(in_len);
    let left = total / 2;
    (left, total - left)
}

/// Range of output positions whose tap `k` reads a valid (unpadded) sample.
///
/// `t_in = t*stride + k - pad_left` must lie in `[0, in_len)`.
#[inline]
fn valid_out_range(
    k: usize,
    pad_left: usize,
    stride: usize,
    in_len: usize,
    out_len: usize,
) -> (usize, usize) {
    let lo = if k >= pad_left {
        0
    } else {
        (pad_left - k).div_ceil(stride)
    };
    // t*stride + k - pad_left <= in_len - 1
    let hi_num = in_len + pad_left;
    let hi = if hi_num > k {
        (((hi_num - 1 - k) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlates `x` with the filter bank in `p`.
pub fn conv1d_forward<T: Scalar>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    padding: PaddingRule,
) -> Result<FeatureMap<T>> {
    let PaddingRule::SameCeil = padding;
    if x.channels() != p.in_channels {
        return Err(Error::shape(
            "conv1d_forward",
            format!(
                "input has {} channels but kernel expects {}",
                x.channels(),
                p.in_channels
            ),
        ));
    }
    let in_len = x.len();
    let out_len = conv_output_len(in_len, p.stride);
    let (pad_left, _) = same_ceil_padding(in_len, p.kernel_size, p.stride);

    let mut out = FeatureMap::zeros(out_len, p.out_channels);
    for oc in 0..p.out_channels {
        let plane = out.channel_mut(oc);
        plane.fill(p.bias[oc]);
        for ic in 0..p.in_channels {
            let x_plane = x.channel(ic);
            for k in 0..p.kernel_size {
                let w = p.weight(k, ic, oc);
                let (lo, hi) = valid_out_range(k, pad_left, p.stride, in_len, out_len);
                let base = k as isize - pad_left as isize;
                for (t, o) in plane[lo..hi].iter_mut().enumerate() {
                    let t_in = ((lo + t) * p.stride) as isize + base;
                    *o = *o + w * x_plane[t_in as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass of [`conv1d_forward`].
///
/// `saved_input` is the forward input; gradient shapes mirror the forward
/// shapes exactly.
pub fn conv1d_backward<T: Scalar>(
    grad_out: &FeatureMap<T>,
    saved_input: &FeatureMap<T>,
    p: &ConvParams<T>,
) -> Result<(FeatureMap<T>, ConvGrads<T>)> {
    if saved_input.channels() != p.in_channels {
        return Err(Error::shape(
            "conv1d_backward",
            format!(
                "saved input has {} channels but kernel expects {}",
                saved_input.channels(),
                p.in_channels
            ),
        ));
    }
    let in_len = saved_input.len();
    let out_len = conv_output_len(in_len, p.stride);
    if grad_out.shape() != (out_len, p.out_channels) {
        return Err(Error::shape(
            "conv1d_backward",
            format!(
                "grad_out shape {:?} does not match forward output ({out_len}, {})",
                grad_out.shape(),
                p.out_channels
            ),
        ));
    }
    let (pad_left, _) = same_ceil_padding(in_len, p.kernel_size, p.stride);

    let mut grads = ConvGrads::zeros_like(p);
    let mut grad_x = FeatureMap::zeros(in_len, p.in_channels);

    for oc in 0..p.out_channels {
        let go_plane = grad_out.channel(oc);
        let mut bias_acc = T::zero();
        for &g in go_plane {
            bias_acc = bias_acc + g;
        }
        grads.bias[oc] = bias_acc;

        for ic in 0..p.in_channels {
            let x_plane = saved_input.channel(ic);
            let gx_plane = grad_x.channel_mut(ic);
            for k in 0..p.kernel_size {
                let w = p.weight(k, ic, oc);
                let (lo, hi) = valid_out_range(k, pad_left, p.stride, in_len, out_len);
                let base = k as isize - pad_left as isize;
                let mut w_acc = T::zero();
                for (t, &g) in go_plane[lo..hi].iter().enumerate() {
                    let t_in = (((lo + t) * p.stride) as isize + base) as usize;
                    w_acc = w_acc + g * x_plane[t_in];
                    gx_plane[t_in] = gx_plane[t_in] + w * g;
                }
                let wi = p.widx(k, ic, oc);
                grads.kernel[wi] = grads.kernel[wi] + w_acc;
            }
        }
    }
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive O(L*K) oracle: explicit zero-padded buffer, direct summation.
    fn conv_oracle(x: &FeatureMap<f64>, p: &ConvParams<f64>) -> FeatureMap<f64> {
        let in_len = x.len();
        let out_len = conv_output_len(in_len, p.stride);
        let (pad_left, pad_right) = same_ceil_padding(in_len, p.kernel_size(), p.stride);
        let padded_len = in_len + pad_left + pad_right;
        let mut out = FeatureMap::zeros(out_len, p.out_channels());
        for oc in 0..p.out_channels() {
            for t in 0..out_len {
                let mut acc = p.bias[oc];
                for ic in 0..p.in_channels() {
                    let mut padded = vec![0.0; padded_len];
                    padded[pad_left..pad_left + in_len].copy_from_slice(x.channel(ic));
                    for k in 0..p.kernel_size() {
                        acc += p.weight(k, ic, oc) * padded[t * p.stride + k];
                    }
                }
                out.set(t, oc, acc);
            }
        }
        out
    }

    fn rng_map(seed: u64, len: usize, ch: usize) -> FeatureMap<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..len * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::from_raw(len, ch, data).unwrap()
    }

    fn rng_conv(seed: u64, k: usize, ic: usize, oc: usize, stride: usize) -> ConvParams<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
        let mut p = ConvParams::zeros(k, ic, oc, stride);
        for v in p.kernel_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in &mut p.bias {
            *v = rng.gen_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn stem_geometry_18000_to_9000() {
        let x = FeatureMap::<f64>::zeros(18000, 1);
        let p = ConvParams::zeros(7, 1, 24, 2);
        let y = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap();
        assert_eq!(y.shape(), (9000, 24));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = FeatureMap::from_samples(&[0.5f64, -1.0, 2.0, 3.5]);
        let mut p = ConvParams::zeros(1, 1, 1, 1);
        p.set_weight(0, 0, 0, 1.0);
        let y = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn small_case_matches_oracle() {
        let x = FeatureMap::from_samples(&[1.0f64, 2.0, 3.0, 4.0, 5.0]);
        let mut p = ConvParams::zeros(3, 1, 1, 1);
        p.set_weight(0, 0, 0, 1.0);
        p.set_weight(1, 0, 0, 0.0);
        p.set_weight(2, 0, 0, -1.0);
        let y = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap();
        let want = conv_oracle(&x, &p);
        assert_eq!(y, want);
        // pad_total = 2, pad_left = 1: windows over [0,1,2,3,4,5,0]
        assert_eq!(y.channel(0), &[-2.0, -2.0, -2.0, -2.0, 4.0]);
    }

    #[test]
    fn randomized_cases_match_oracle_bitwise() {
        for seed in 0..20u64 {
            let len = 1 + (seed as usize * 7) % 64;
            let stride = 1 + (seed as usize) % 3;
            let k = 1 + (seed as usize) % 5;
            let x = rng_map(seed, len, 2);
            let p = rng_conv(seed, k, 2, 3, stride);
            let y = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap();
            let want = conv_oracle(&x, &p);
            assert_eq!(y, want, "seed {seed}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = FeatureMap::<f64>::zeros(10, 2);
        let p = ConvParams::zeros(3, 3, 4, 1);
        let err = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3'), "{msg}");
    }

    #[test]
    fn backward_zero_grad_gives_zero() {
        let x = rng_map(3, 11, 2);
        let p = rng_conv(3, 3, 2, 3, 1);
        let go = FeatureMap::<f64>::zeros(11, 3);
        let (gx, gp) = conv1d_backward(&go, &x, &p).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.kernel.iter().all(|&v| v == 0.0));
        assert!(gp.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_identity_kernel_passes_grad_through() {
        let x = FeatureMap::from_samples(&[1.0f64, 2.0, 3.0]);
        let mut p = ConvParams::zeros(1, 1, 1, 1);
        p.set_weight(0, 0, 0, 1.0);
        let go = FeatureMap::from_samples(&[0.3f64, -0.7, 0.1]);
        let (gx, _) = conv1d_backward(&go, &x, &p).unwrap();
        assert_eq!(gx, go);
    }

    #[test]
    fn backward_rejects_bad_grad_shape() {
        let x = FeatureMap::<f64>::zeros(10, 2);
        let p = ConvParams::zeros(3, 2, 3, 2);
        let go = FeatureMap::<f64>::zeros(10, 3); // forward output would be 5x3
        assert!(conv1d_backward(&go, &x, &p).is_err());
    }
}
