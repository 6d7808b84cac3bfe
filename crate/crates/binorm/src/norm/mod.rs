//! Learnable input-normalization layers: the bilinear layer ([`bin`]), the
//! adaptive temporal layer ([`dain`]) and a batch normalizer applied to raw
//! input windows ([`bn`]).
//!
//! Every layer exposes an explicit forward pass returning a cache of
//! intermediates plus an analytic backward pass derived by hand; all of them
//! are verified against central finite differences in the test suites.

pub mod bin;
pub mod bn;
pub mod dain;

pub use bin::{bin_backward, bin_forward, bin_project, BinCache, BinGrads, BinParams};
pub use bn::{bn_input_backward, bn_input_forward, BnGrads, BnInputCache, BnInputParams, BnMode};
pub use dain::{dain_backward, dain_forward, DainCache, DainGrads, DainParams};

/// Additive guard on every standard-deviation denominator. The gradient
/// treats the guard as a constant offset: we differentiate through the
/// standard deviation itself, never through the guard.
pub const NORM_EPS: f64 = 1e-8;

/// Standardizes one lane in place: returns `(mean, std)` and overwrites the
/// lane with `(x - mean) / (std + eps)`. `std` is the population standard
/// deviation (divide by the lane length).
pub(crate) fn standardize_lane(lane: &mut [f64]) -> (f64, f64) {
    let n = lane.len() as f64;
    let mean = lane.iter().sum::<f64>() / n;
    let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = std + NORM_EPS;
    for v in lane.iter_mut() {
        *v = (*v - mean) / denom;
    }
    (mean, std)
}

/// Backward of [`standardize_lane`] for one lane.
///
/// With `u_k = x_k - mean`, `s` the population std and `n_k = u_k / (s + eps)`:
///
/// ```text
/// dx_k = (dn_k - mean(dn)) / (s + eps)
///      - u_k * <dn, u> / (len * s * (s + eps)^2)
/// ```
///
/// The second term carries the dependence of the std on the input; it
/// vanishes in the constant-lane limit and is skipped when `s == 0`.
pub(crate) fn standardize_lane_backward(dn: &[f64], centered: &[f64], std: f64) -> Vec<f64> {
    let len = dn.len();
    let n = len as f64;
    let denom = std + NORM_EPS;
    let dn_mean = dn.iter().sum::<f64>() / n;
    let dot: f64 = dn.iter().zip(centered).map(|(g, u)| g * u).sum();
    let mut dx = Vec::with_capacity(len);
    for k in 0..len {
        let mut g = (dn[k] - dn_mean) / denom;
        if std > 0.0 {
            g -= centered[k] * dot / (n * std * denom * denom);
        }
        dx.push(g);
    }
    dx
}
