//! Finite-difference verification of every hand-written backward pass.
//!
//! Each check builds a layer with random small shapes in double precision,
//! defines a scalar loss as a fixed random projection of the layer output,
//! and compares the analytic gradient against central finite differences.
//! A failing check is a reported result, not an error.

use super::{
    avgpool1d, avgpool1d_backward, batchnorm_backward, batchnorm_train, conv1d_backward,
    conv1d_forward, linear_backward, linear_forward, relu, relu_backward, BatchNormParams,
    ConvParams, FeatureMap, LinearParams, PaddingRule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    AvgPool,
    BatchNorm,
    Relu,
    Linear,
}

impl LayerKind {
    pub const ALL: [LayerKind; 5] = [
        LayerKind::Conv,
        LayerKind::AvgPool,
        LayerKind::BatchNorm,
        LayerKind::Relu,
        LayerKind::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv1d",
            LayerKind::AvgPool => "avgpool1d",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Linear => "linear",
        }
    }
}

/// Result for one gradient group (one parameter tensor or the layer input).
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub label: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }

    fn record(&mut self, label: &str, tolerance: f64, err: f64) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.label == label) {
            e.max_rel_err = e.max_rel_err.max(err);
        } else {
            self.entries.push(GradCheckEntry {
                label: label.to_string(),
                max_rel_err: err,
                tolerance,
            });
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        for e in other.entries {
            self.record(&e.label, e.tolerance, e.max_rel_err);
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central finite difference of `loss` with respect to one element reached
/// through `access`. The element is restored afterwards.
fn central_diff<S>(state: &mut S, access: impl Fn(&mut S) -> &mut f64, loss: impl Fn(&S) -> f64) -> f64 {
    let orig = *access(state);
    let h = 1e-6 * (1.0 + orig.abs());
    *access(state) = orig + h;
    let up = loss(state);
    *access(state) = orig - h;
    let down = loss(state);
    *access(state) = orig;
    (up - down) / (2.0 * h)
}

fn rng_map(rng: &mut ChaCha8Rng, len: usize, ch: usize, lo: f64, hi: f64) -> FeatureMap<f64> {
    let data = (0..len * ch).map(|_| rng.gen_range(lo..hi)).collect();
    FeatureMap::from_raw(len, ch, data).unwrap()
}

fn projection(rng: &mut ChaCha8Rng, len: usize, ch: usize) -> FeatureMap<f64> {
    rng_map(rng, len, ch, -1.0, 1.0)
}

fn dot(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn check_conv(rng: &mut ChaCha8Rng, tolerance: f64, report: &mut GradCheckReport) {
    let len = rng.gen_range(5..=16);
    let stride = rng.gen_range(1..=3);
    let ksize = rng.gen_range(1..=5);
    let (ic, oc) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let x = rng_map(rng, len, ic, -1.0, 1.0);
    let mut p = ConvParams::<f64>::zeros(ksize, ic, oc, stride);
    for v in p.kernel_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in &mut p.bias {
        *v = rng.gen_range(-1.0..1.0);
    }
    let out = conv1d_forward(&x, &p, PaddingRule::SameCeil).unwrap();
    let r = projection(rng, out.len(), out.channels());
    let (gx, gp) = conv1d_backward(&r, &x, &p).unwrap();

    let loss_of = |x: &FeatureMap<f64>, p: &ConvParams<f64>| {
        dot(&conv1d_forward(x, p, PaddingRule::SameCeil).unwrap(), &r)
    };
    for i in 0..x.data().len() {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.0.data_mut()[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("conv1d/input", tolerance, relative_error(gx.data()[i], n));
    }
    for i in 0..p.kernel().len() {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.1.kernel_mut()[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("conv1d/kernel", tolerance, relative_error(gp.kernel[i], n));
    }
    for i in 0..p.bias.len() {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.1.bias[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("conv1d/bias", tolerance, relative_error(gp.bias[i], n));
    }
}

fn check_pool(rng: &mut ChaCha8Rng, tolerance: f64, report: &mut GradCheckReport) {
    let len = rng.gen_range(3..=17);
    let window = rng.gen_range(1..=4);
    let stride = rng.gen_range(1..=3);
    let ch = rng.gen_range(1..=3);
    let x = rng_map(rng, len, ch, -1.0, 1.0);
    let out = avgpool1d(&x, window, stride).unwrap();
    let r = projection(rng, out.len(), out.channels());
    let gx = avgpool1d_backward(&r, len, window, stride).unwrap();
    for i in 0..x.data().len() {
        let n = central_diff(&mut x.clone(), |s| &mut s.data_mut()[i], |s| {
            dot(&avgpool1d(s, window, stride).unwrap(), &r)
        });
        report.record("avgpool1d/input", tolerance, relative_error(gx.data()[i], n));
    }
}

fn check_batchnorm(rng: &mut ChaCha8Rng, tolerance: f64, report: &mut GradCheckReport) {
    let (b, len, ch) = (rng.gen_range(2..=4), rng.gen_range(3..=8), rng.gen_range(1..=3));
    let xs: Vec<_> = (0..b).map(|_| rng_map(rng, len, ch, -2.0, 2.0)).collect();
    let mut p = BatchNormParams::<f64>::identity(ch);
    for v in &mut p.gamma {
        *v = rng.gen_range(0.5..1.5);
    }
    for v in &mut p.beta {
        *v = rng.gen_range(-0.5..0.5);
    }
    let (ys, saved, _) = batchnorm_train(&xs, &p).unwrap();
    let rs: Vec<_> = ys
        .iter()
        .map(|y| projection(rng, y.len(), y.channels()))
        .collect();
    let (gxs, grads) = batchnorm_backward(&rs, &saved, &p).unwrap();

    let loss_of = |xs: &[FeatureMap<f64>], p: &BatchNormParams<f64>| {
        let (ys, _, _) = batchnorm_train(xs, p).unwrap();
        ys.iter().zip(&rs).map(|(y, r)| dot(y, r)).sum::<f64>()
    };
    for bi in 0..b {
        for i in 0..xs[bi].data().len() {
            let n = central_diff(
                &mut (xs.clone(), p.clone()),
                |s| &mut s.0[bi].data_mut()[i],
                |s| loss_of(&s.0, &s.1),
            );
            report.record(
                "batchnorm/input",
                tolerance,
                relative_error(gxs[bi].data()[i], n),
            );
        }
    }
    for c in 0..ch {
        let n = central_diff(&mut (xs.clone(), p.clone()), |s| &mut s.1.gamma[c], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("batchnorm/gamma", tolerance, relative_error(grads.gamma[c], n));
        let n = central_diff(&mut (xs.clone(), p.clone()), |s| &mut s.1.beta[c], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("batchnorm/beta", tolerance, relative_error(grads.beta[c], n));
    }
}

fn check_relu(rng: &mut ChaCha8Rng, tolerance: f64, report: &mut GradCheckReport) {
    let (len, ch) = (rng.gen_range(4..=16), rng.gen_range(1..=3));
    // Keep inputs away from the kink at 0 so finite differences are exact.
    let data: Vec<f64> = (0..len * ch)
        .map(|_| {
            let mag = rng.gen_range(1e-3..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let x = FeatureMap::from_raw(len, ch, data).unwrap();
    let r = projection(rng, len, ch);
    let gx = relu_backward(&r, &x).unwrap();
    for i in 0..x.data().len() {
        let n = central_diff(&mut x.clone(), |s| &mut s.data_mut()[i], |s| dot(&relu(s), &r));
        report.record("relu/input", tolerance, relative_error(gx.data()[i], n));
    }
}

fn check_linear(rng: &mut ChaCha8Rng, tolerance: f64, report: &mut GradCheckReport) {
    let (in_dim, out_dim) = (rng.gen_range(1..=8), rng.gen_range(1..=4));
    let mut p = LinearParams::<f64>::zeros(in_dim, out_dim);
    for v in &mut p.weight {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in &mut p.bias {
        *v = rng.gen_range(-1.0..1.0);
    }
    let x: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (gx, grads) = linear_backward(&r, &x, &p).unwrap();

    let loss_of = |x: &[f64], p: &LinearParams<f64>| {
        linear_forward(x, p)
            .unwrap()
            .iter()
            .zip(&r)
            .map(|(y, rv)| y * rv)
            .sum::<f64>()
    };
    for i in 0..in_dim {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.0[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("linear/input", tolerance, relative_error(gx[i], n));
    }
    for i in 0..p.weight.len() {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.1.weight[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("linear/weight", tolerance, relative_error(grads.weight[i], n));
    }
    for i in 0..p.bias.len() {
        let n = central_diff(&mut (x.clone(), p.clone()), |s| &mut s.1.bias[i], |s| {
            loss_of(&s.0, &s.1)
        });
        report.record("linear/bias", tolerance, relative_error(grads.bias[i], n));
    }
}

/// Runs `trial_count` randomized instances of one layer type and reports
/// the max relative error per gradient group.
pub fn check_layer(
    kind: LayerKind,
    trial_count: usize,
    tolerance: f64,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for trial in 0..trial_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (trial as u64).wrapping_mul(0x9e37_79b9));
        match kind {
            LayerKind::Conv => check_conv(&mut rng, tolerance, &mut report),
            LayerKind::AvgPool => check_pool(&mut rng, tolerance, &mut report),
            LayerKind::BatchNorm => check_batchnorm(&mut rng, tolerance, &mut report),
            LayerKind::Relu => check_relu(&mut rng, tolerance, &mut report),
            LayerKind::Linear => check_linear(&mut rng, tolerance, &mut report),
        }
    }
    report
}

/// Checks every layer type at the same tolerance.
pub fn check_all_layers(trial_count: usize, tolerance: f64, seed: u64) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for kind in LayerKind::ALL {
        report.merge(check_layer(kind, trial_count, tolerance, seed));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_small_case_passes_at_1e4() {
        let report = check_layer(LayerKind::Conv, 3, 1e-4, 11);
        assert!(report.all_passed(), "{:?}", report.entries);
    }

    #[test]
    fn batchnorm_train_mode_passes_at_1e4() {
        let report = check_layer(LayerKind::BatchNorm, 3, 1e-4, 12);
        assert!(report.all_passed(), "{:?}", report.entries);
    }

    #[test]
    fn relu_away_from_kink_passes_at_1e6() {
        let report = check_layer(LayerKind::Relu, 5, 1e-6, 13);
        assert!(report.all_passed(), "{:?}", report.entries);
    }

    #[test]
    fn all_layers_pass_across_seeds() {
        for seed in 0..4 {
            let report = check_all_layers(2, 1e-4, seed);
            assert!(report.all_passed(), "seed {seed}: {:?}", report.entries);
        }
    }
}
