//! ReLU activation: elementwise `max(0, x)`, subgradient 0 at exactly 0.

use super::{FeatureMap, Scalar};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place<T: Scalar>(x: &mut FeatureMap<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks the incoming gradient where the forward input was <= 0.
///
/// `saved_input` may be either the pre-activation input or the ReLU output:
/// both are positive exactly where the gradient passes.
pub fn relu_backward<T: Scalar>(
    grad_out: &FeatureMap<T>,
    saved_input: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    if grad_out.shape() != saved_input.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", grad_out.shape(), saved_input.shape()),
        ));
    }
    let mut gx = grad_out.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(saved_input.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(gx)
}
