//! Batch normalization over a mini-batch of feature maps.
//!
//! Statistics are computed per channel, jointly over the batch and time
//! axes, using the biased (1/N) variance. Accumulation runs in `f64`
//! regardless of the working precision. Running statistics follow
//! `running = momentum * running + (1 - momentum) * batch`.

use super::{FeatureMap, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
    /// True once running statistics reflect at least one training batch
    /// (or were loaded from a weight file).
    pub stats_initialized: bool,
}

impl<T: Scalar> BatchNormParams<T> {
    /// gamma = 1, beta = 0, running stats at (0, 1), eps 1e-5, momentum 0.99.
    pub fn identity(channels: usize) -> Self {
        assert!(channels >= 1);
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::from_f64c(1e-5),
            momentum: T::from_f64c(0.99),
            stats_initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Learnable element count (gamma + beta; running stats are not learnable).
    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// Folds one batch's statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let one_m = T::one() - m;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + one_m * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + one_m * stats.var[c];
        }
        self.stats_initialized = true;
    }
}

/// Per-channel biased mean/variance of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Activations the backward pass needs: normalized values and per-channel
/// inverse standard deviation.
#[derive(Debug, Clone)]
pub struct BnSaved<T> {
    pub x_hat: Vec<FeatureMap<T>>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn check_batch<T: Scalar>(
    op: &'static str,
    xs: &[FeatureMap<T>],
    p: &BatchNormParams<T>,
) -> Result<(usize, usize)> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidInput(format!("{op}: empty batch")))?;
    let shape = first.shape();
    if shape.1 != p.channels() {
        return Err(Error::shape(
            op,
            format!("input has {} channels, params have {}", shape.1, p.channels()),
        ));
    }
    for x in xs {
        if x.shape() != shape {
            return Err(Error::shape(
                op,
                format!("ragged batch: {:?} vs {:?}", x.shape(), shape),
            ));
        }
    }
    Ok(shape)
}

/// Training-mode forward without the running-stat update: returns the
/// normalized batch, saved activations, and the batch statistics so the
/// caller can decide when to fold them in.
pub fn batchnorm_train<T: Scalar>(
    xs: &[FeatureMap<T>],
    p: &BatchNormParams<T>,
) -> Result<(Vec<FeatureMap<T>>, BnSaved<T>, BatchStats<T>)> {
    let (len, channels) = check_batch("batchnorm_forward", xs, p)?;
    let n = xs.len() * len;
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "batchnorm_forward: need >= 2 elements per channel in Train mode, got {n}"
        )));
    }
    let n_f = n as f64;

    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let mut sum = 0.0f64;
        for x in xs {
            for &v in x.channel(c) {
                sum += v.to_f64c();
            }
        }
        let mu = sum / n_f;
        let mut sq = 0.0f64;
        for x in xs {
            for &v in x.channel(c) {
                let d = v.to_f64c() - mu;
                sq += d * d;
            }
        }
        let sigma2 = sq / n_f;
        mean[c] = T::from_f64c(mu);
        var[c] = T::from_f64c(sigma2);
        inv_std[c] = T::from_f64c(1.0 / (sigma2 + p.epsilon.to_f64c()).sqrt());
    }

    let mut x_hat = Vec::with_capacity(xs.len());
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut xh = FeatureMap::zeros(len, channels);
        let mut y = FeatureMap::zeros(len, channels);
        for c in 0..channels {
            let (mu, istd, g, b) = (mean[c], inv_std[c], p.gamma[c], p.beta[c]);
            let src = x.channel(c);
            let xh_plane = xh.channel_mut(c);
            for (o, &v) in xh_plane.iter_mut().zip(src) {
                *o = (v - mu) * istd;
            }
            let y_plane = y.channel_mut(c);
            for (o, &h) in y_plane.iter_mut().zip(xh.channel(c)) {
                *o = g * h + b;
            }
        }
        x_hat.push(xh);
        ys.push(y);
    }
    Ok((ys, BnSaved { x_hat, inv_std }, BatchStats { mean, var }))
}

/// Inference-mode forward using the running statistics.
pub fn batchnorm_infer<T: Scalar>(
    xs: &[FeatureMap<T>],
    p: &BatchNormParams<T>,
) -> Result<Vec<FeatureMap<T>>> {
    let (len, channels) = check_batch("batchnorm_forward", xs, p)?;
    if !p.stats_initialized {
        return Err(Error::BatchNormUninitialized);
    }
    let mut ys = Vec::with_capacity(xs.len());
    for x in xs {
        let mut y = FeatureMap::zeros(len, channels);
        for c in 0..channels {
            let istd = T::one() / (p.running_var[c] + p.epsilon).sqrt();
            let (mu, g, b) = (p.running_mean[c], p.gamma[c], p.beta[c]);
            let y_plane = y.channel_mut(c);
            for (o, &v) in y_plane.iter_mut().zip(x.channel(c)) {
                *o = g * (v - mu) * istd + b;
            }
        }
        ys.push(y);
    }
    Ok(ys)
}

/// Spec-level forward: Train mode normalizes with batch statistics and
/// folds them into the running estimates; Infer mode uses running stats.
pub fn batchnorm_forward<T: Scalar>(
    xs: &[FeatureMap<T>],
    p: &mut BatchNormParams<T>,
    mode: BnMode,
) -> Result<Vec<FeatureMap<T>>> {
    match mode {
        BnMode::Train => {
            let (ys, _, stats) = batchnorm_train(xs, p)?;
            p.apply_batch_stats(&stats);
            Ok(ys)
        }
        BnMode::Infer => batchnorm_infer(xs, p),
    }
}

/// Backward pass for the training-mode forward.
///
/// Uses the compact identity for biased batch statistics:
/// `dx = gamma*inv_std/N * (N*g - sum(g) - x_hat * sum(g*x_hat))`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &[FeatureMap<T>],
    saved: &BnSaved<T>,
    p: &BatchNormParams<T>,
) -> Result<(Vec<FeatureMap<T>>, BatchNormGrads<T>)> {
    let (len, channels) = check_batch("batchnorm_backward", grad_out, p)?;
    if grad_out.len() != saved.x_hat.len()
        || saved.x_hat.first().map(|m| m.shape()) != Some((len, channels))
    {
        return Err(Error::shape(
            "batchnorm_backward",
            "grad_out shape does not match saved activations",
        ));
    }
    let n = grad_out.len() * len;
    let n_t = T::from_f64c(n as f64);

    let mut grads = BatchNormGrads {
        gamma: vec![T::zero(); channels],
        beta: vec![T::zero(); channels],
    };
    // Per-channel reductions in f64 for stability.
    let mut sum_g = vec![0.0f64; channels];
    let mut sum_gx = vec![0.0f64; channels];
    for (g, xh) in grad_out.iter().zip(&saved.x_hat) {
        for c in 0..channels {
            let mut sg = 0.0f64;
            let mut sgx = 0.0f64;
            for (&gv, &hv) in g.channel(c).iter().zip(xh.channel(c)) {
                sg += gv.to_f64c();
                sgx += gv.to_f64c() * hv.to_f64c();
            }
            sum_g[c] += sg;
            sum_gx[c] += sgx;
        }
    }
    for c in 0..channels {
        grads.beta[c] = T::from_f64c(sum_g[c]);
        grads.gamma[c] = T::from_f64c(sum_gx[c]);
    }

    let mut grad_x = Vec::with_capacity(grad_out.len());
    for (g, xh) in grad_out.iter().zip(&saved.x_hat) {
        let mut gx = FeatureMap::zeros(len, channels);
        for c in 0..channels {
            let scale = p.gamma[c] * saved.inv_std[c] / n_t;
            let (sg, sgx) = (grads.beta[c], grads.gamma[c]);
            let gx_plane = gx.channel_mut(c);
            for ((o, &gv), &hv) in gx_plane.iter_mut().zip(g.channel(c)).zip(xh.channel(c)) {
                *o = scale * (n_t * gv - sg - hv * sgx);
            }
        }
        grad_x.push(gx);
    }
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng_batch(seed: u64, b: usize, len: usize, ch: usize) -> Vec<FeatureMap<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..b)
            .map(|_| {
                let data = (0..len * ch).map(|_| rng.gen_range(-2.0..2.0)).collect();
                FeatureMap::from_raw(len, ch, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut x = FeatureMap::<f64>::zeros(6, 2);
        x.channel_mut(0).fill(4.0);
        x.channel_mut(1).fill(-1.5);
        let mut p = BatchNormParams::identity(2);
        let ys = batchnorm_forward(&[x.clone(), x], &mut p, BnMode::Train).unwrap();
        for y in &ys {
            assert!(y.data().iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let xs = rng_batch(1, 3, 5, 2);
        let mut p = BatchNormParams::identity(2);
        p.gamma = vec![0.0, 0.0];
        p.beta = vec![0.7, -0.2];
        let ys = batchnorm_forward(&xs, &mut p, BnMode::Train).unwrap();
        for y in &ys {
            assert!(y.channel(0).iter().all(|&v| v == 0.7));
            assert!(y.channel(1).iter().all(|&v| v == -0.2));
        }
    }

    #[test]
    fn output_statistics_match_gamma_beta() {
        let xs = rng_batch(7, 4, 32, 3);
        let mut p = BatchNormParams::identity(3);
        p.gamma = vec![1.5, 0.5, 2.0];
        p.beta = vec![-1.0, 0.25, 3.0];
        let ys = batchnorm_forward(&xs, &mut p, BnMode::Train).unwrap();
        let n = (4 * 32) as f64;
        for c in 0..3 {
            let mut sum = 0.0;
            for y in &ys {
                sum += y.channel(c).iter().sum::<f64>();
            }
            let mean = sum / n;
            let mut sq = 0.0;
            for y in &ys {
                sq += y.channel(c).iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
            let var = sq / n;
            assert!((mean - p.beta[c]).abs() < 1e-5, "channel {c} mean {mean}");
            assert!(
                (var - p.gamma[c] * p.gamma[c]).abs() < 1e-4,
                "channel {c} var {var}"
            );
        }
    }

    #[test]
    fn infer_before_training_errors() {
        let xs = rng_batch(2, 2, 8, 1);
        let mut p = BatchNormParams::identity(1);
        let err = batchnorm_forward(&xs, &mut p, BnMode::Infer).unwrap_err();
        assert!(matches!(err, Error::BatchNormUninitialized));
    }

    #[test]
    fn infer_works_after_one_training_batch() {
        let xs = rng_batch(3, 2, 8, 1);
        let mut p = BatchNormParams::identity(1);
        batchnorm_forward(&xs, &mut p, BnMode::Train).unwrap();
        assert!(p.stats_initialized);
        batchnorm_forward(&xs, &mut p, BnMode::Infer).unwrap();
    }

    #[test]
    fn running_stats_follow_ema() {
        let xs = rng_batch(4, 2, 16, 1);
        let mut p = BatchNormParams::identity(1);
        let (_, _, stats) = batchnorm_train(&xs, &p).unwrap();
        batchnorm_forward(&xs, &mut p, BnMode::Train).unwrap();
        let want_mean = 0.99 * 0.0 + 0.01 * stats.mean[0];
        let want_var = 0.99 * 1.0 + 0.01 * stats.var[0];
        assert!((p.running_mean[0] - want_mean).abs() < 1e-12);
        assert!((p.running_var[0] - want_var).abs() < 1e-12);
    }

    #[test]
    fn beta_grad_is_sum_of_grad_out() {
        let xs = rng_batch(5, 2, 10, 2);
        let p = BatchNormParams::identity(2);
        let (_, saved, _) = batchnorm_train(&xs, &p).unwrap();
        let gos = rng_batch(6, 2, 10, 2);
        let (_, grads) = batchnorm_backward(&gos, &saved, &p).unwrap();
        for c in 0..2 {
            let want: f64 = gos.iter().map(|g| g.channel(c).iter().sum::<f64>()).sum();
            assert!((grads.beta[c] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let xs = rng_batch(8, 2, 6, 2);
        let p = BatchNormParams::identity(2);
        let (_, saved, _) = batchnorm_train(&xs, &p).unwrap();
        let gos = vec![FeatureMap::<f64>::zeros(6, 2); 2];
        let (gx, grads) = batchnorm_backward(&gos, &saved, &p).unwrap();
        assert!(gx.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
        assert!(grads.gamma.iter().chain(&grads.beta).all(|&v| v == 0.0));
    }

    #[test]
    fn train_rejects_single_element() {
        let xs = vec![FeatureMap::<f64>::zeros(1, 1)];
        let p = BatchNormParams::identity(1);
        assert!(batchnorm_train(&xs, &p).is_err());
    }
}
