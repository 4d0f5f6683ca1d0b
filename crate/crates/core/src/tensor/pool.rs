//! 1-D average pooling with SAME-ceil geometry.
//!
//! Windows start at `t*stride`; a window that runs past the end averages
//! only the samples that exist, so `out_len == ceil(in_len / stride)` for
//! every input length.

use super::{FeatureMap, Scalar};
use crate::error::{Error, Result};

/// Output length of a pooling stage.
pub fn pool_output_len(in_len: usize, stride: usize) -> usize {
    in_len.div_ceil(stride)
}

pub fn avgpool1d<T: Scalar>(
    x: &FeatureMap<T>,
    window: usize,
    stride: usize,
) -> Result<FeatureMap<T>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidInput(
            "avgpool1d window and stride must be >= 1".into(),
        ));
    }
    let in_len = x.len();
    let out_len = pool_output_len(in_len, stride);
    let mut out = FeatureMap::zeros(out_len, x.channels());
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for (t, d) in dst.iter_mut().enumerate() {
            let start = t * stride;
            let end = (start + window).min(in_len);
            let mut acc = T::zero();
            for &v in &src[start..end] {
                acc = acc + v;
            }
            *d = acc / T::from_f64c((end - start) as f64);
        }
    }
    Ok(out)
}

/// Backward pass: each input sample receives `grad_out / valid_count` from
/// every window that contained it.
pub fn avgpool1d_backward<T: Scalar>(
    grad_out: &FeatureMap<T>,
    in_len: usize,
    window: usize,
    stride: usize,
) -> Result<FeatureMap<T>> {
    let out_len = pool_output_len(in_len, stride);
    if grad_out.len() != out_len {
        return Err(Error::shape(
            "avgpool1d_backward",
            format!(
                "grad_out length {} does not match forward output length {out_len}",
                grad_out.len()
            ),
        ));
    }
    let mut grad_x = FeatureMap::zeros(in_len, grad_out.channels());
    for c in 0..grad_out.channels() {
        let go = grad_out.channel(c);
        let gx = grad_x.channel_mut(c);
        for (t, &g) in go.iter().enumerate() {
            let start = t * stride;
            let end = (start + window).min(in_len);
            let share = g / T::from_f64c((end - start) as f64);
            for v in &mut gx[start..end] {
                *v = *v + share;
            }
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Explicit window-enumeration oracle.
    fn pool_oracle(x: &FeatureMap<f64>, window: usize, stride: usize) -> FeatureMap<f64> {
        let out_len = pool_output_len(x.len(), stride);
        let mut out = FeatureMap::zeros(out_len, x.channels());
        for c in 0..x.channels() {
            for t in 0..out_len {
                let mut vals = Vec::new();
                for j in 0..window {
                    let idx = t * stride + j;
                    if idx < x.len() {
                        vals.push(x.get(idx, c));
                    }
                }
                out.set(t, c, vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        out
    }

    #[test]
    fn table_geometry_1125_to_563() {
        let x = FeatureMap::<f64>::zeros(1125, 168);
        let y = avgpool1d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), (563, 168));
    }

    #[test]
    fn constant_input_stays_constant() {
        let mut x = FeatureMap::<f64>::zeros(9, 2);
        for c in 0..2 {
            x.channel_mut(c).fill(3.25);
        }
        let y = avgpool1d(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn partial_window_example() {
        let x = FeatureMap::from_samples(&[2.0f64, 4.0, 6.0, 8.0, 10.0]);
        let y = avgpool1d(&x, 2, 2).unwrap();
        assert_eq!(y.channel(0), &[3.0, 7.0, 10.0]);
        assert_eq!(y, pool_oracle(&x, 2, 2));
    }

    #[test]
    fn randomized_cases_match_oracle_bitwise() {
        use rand::{Rng, SeedableRng};
        for seed in 0..20u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let len = rng.gen_range(1..=64);
            let window = rng.gen_range(1..=9);
            let stride = rng.gen_range(1..=4);
            let data: Vec<f64> = (0..len * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = FeatureMap::from_raw(len, 2, data).unwrap();
            assert_eq!(
                avgpool1d(&x, window, stride).unwrap(),
                pool_oracle(&x, window, stride),
                "seed {seed} len {len} window {window} stride {stride}"
            );
        }
    }

    #[test]
    fn backward_uniform_redistribution() {
        let go = FeatureMap::from_samples(&[1.0f64, 1.0]);
        let gx = avgpool1d_backward(&go, 4, 2, 2).unwrap();
        assert_eq!(gx.channel(0), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn backward_zero_grad_is_zero() {
        let go = FeatureMap::<f64>::zeros(3, 2);
        let gx = avgpool1d_backward(&go, 5, 2, 2).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_pool_reduces_to_single_timestep() {
        let x = FeatureMap::from_samples(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let y = avgpool1d(&x, 9, 9).unwrap();
        assert_eq!(y.shape(), (1, 1));
        assert_eq!(y.get(0, 0), 5.0);
    }
}
