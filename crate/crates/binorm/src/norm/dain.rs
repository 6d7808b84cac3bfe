//! Adaptive input normalization along the temporal mode (the DAIN-style
//! baseline): a learned shift of every temporal slice, a learned scale, and a
//! sigmoid gate that can suppress features.
//!
//! ```text
//! mean      = (1/H) sum_h X[:,h]
//! Y[:,h]    = X[:,h] - Wa * mean
//! rms[d]    = sqrt((1/H) sum_h Y[d,h]^2)
//! Z[:,h]    = Y[:,h] / (Wb * rms + eps)        (componentwise division)
//! gate      = sigmoid(Wc * mean_h(Z[:,h]) + bias)
//! T[:,h]    = Z[:,h] .* gate
//! ```

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::NORM_EPS;
use crate::error::{shape_mismatch, Result};
use crate::sample::TimeSeriesSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DainParams {
    /// `D x D` matrix estimating the shift from the mean temporal slice
    pub shift_weight: Array2<f64>,
    /// `D x D` matrix estimating the scale from the per-feature deviation
    pub scale_weight: Array2<f64>,
    /// `D x D` matrix of the gating sub-network
    pub gate_weight: Array2<f64>,
    /// length-`D` bias of the gating sub-network
    pub gate_bias: Array1<f64>,
}

impl DainParams {
    /// Identity shift/scale and a zero gate: plain temporal standardization
    /// with a neutral 0.5 gate.
    pub fn init(d: usize) -> Self {
        Self {
            shift_weight: Array2::eye(d),
            scale_weight: Array2::eye(d),
            gate_weight: Array2::zeros((d, d)),
            gate_bias: Array1::zeros(d),
        }
    }

    pub fn features(&self) -> usize {
        self.gate_bias.len()
    }

    pub fn param_count(&self) -> usize {
        let d = self.features();
        3 * d * d + d
    }
}

#[derive(Debug, Clone)]
pub struct DainCache {
    /// per-feature mean temporal slice
    pub mean: Array1<f64>,
    /// shifted slices `Y`
    pub shifted: Array2<f64>,
    /// per-feature root-mean-square of `Y`
    pub rms: Array1<f64>,
    /// scaled denominator `Wb * rms + eps`
    pub denom: Array1<f64>,
    /// scaled slices `Z`
    pub scaled: Array2<f64>,
    /// mean of the scaled slices
    pub scaled_mean: Array1<f64>,
    /// sigmoid gate values
    pub gate: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct DainGrads {
    pub shift_weight: Array2<f64>,
    pub scale_weight: Array2<f64>,
    pub gate_weight: Array2<f64>,
    pub gate_bias: Array1<f64>,
    pub dx: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn dain_forward(
    x: &TimeSeriesSample,
    params: &DainParams,
) -> Result<(TimeSeriesSample, DainCache)> {
    let (d, h) = (x.features(), x.steps());
    if params.features() != d {
        return Err(shape_mismatch(
            format!("{} features", params.features()),
            d.to_string(),
        ));
    }
    let xm = x.matrix();
    let mean = xm.mean_axis(Axis(1)).expect("H >= 1");
    let shift = params.shift_weight.dot(&mean);
    let mut shifted = xm.clone();
    for mut col in shifted.axis_iter_mut(Axis(1)) {
        col -= &shift;
    }
    let rms = (&shifted * &shifted)
        .mean_axis(Axis(1))
        .expect("H >= 1")
        .mapv(f64::sqrt);
    let denom = params.scale_weight.dot(&rms) + NORM_EPS;
    let mut scaled = shifted.clone();
    for mut col in scaled.axis_iter_mut(Axis(1)) {
        col /= &denom;
    }
    let scaled_mean = scaled.mean_axis(Axis(1)).expect("H >= 1");
    let pre = params.gate_weight.dot(&scaled_mean) + &params.gate_bias;
    let gate = pre.mapv(sigmoid);
    let mut out = scaled.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        col *= &gate;
    }
    let _ = h;
    let cache = DainCache {
        mean,
        shifted,
        rms,
        denom,
        scaled,
        scaled_mean,
        gate,
    };
    Ok((TimeSeriesSample::new(out)?, cache))
}

pub fn dain_backward(
    cache: &DainCache,
    params: &DainParams,
    upstream: &Array2<f64>,
) -> Result<DainGrads> {
    let (d, h) = cache.shifted.dim();
    if upstream.dim() != (d, h) {
        return Err(shape_mismatch(
            format!("{d}x{h}"),
            format!("{}x{}", upstream.nrows(), upstream.ncols()),
        ));
    }
    let hf = h as f64;

    // gate path
    let mut d_gate = Array1::<f64>::zeros(d);
    for (col_u, col_z) in upstream.axis_iter(Axis(1)).zip(cache.scaled.axis_iter(Axis(1))) {
        d_gate += &(&col_u.to_owned() * &col_z);
    }
    let mut d_scaled = upstream.clone();
    for mut col in d_scaled.axis_iter_mut(Axis(1)) {
        col *= &cache.gate;
    }
    let d_pre = &d_gate * &cache.gate * &cache.gate.mapv(|g| 1.0 - g);
    let d_gate_bias = d_pre.clone();
    let mut d_gate_weight = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            d_gate_weight[[i, j]] = d_pre[i] * cache.scaled_mean[j];
        }
    }
    let d_scaled_mean = params.gate_weight.t().dot(&d_pre) / hf;
    for mut col in d_scaled.axis_iter_mut(Axis(1)) {
        col += &d_scaled_mean;
    }

    // scale path: Z = Y / denom
    let mut d_shifted = d_scaled.clone();
    for mut col in d_shifted.axis_iter_mut(Axis(1)) {
        col /= &cache.denom;
    }
    let mut d_denom = Array1::<f64>::zeros(d);
    for (col_dz, col_z) in d_scaled.axis_iter(Axis(1)).zip(cache.scaled.axis_iter(Axis(1))) {
        d_denom -= &(&(&col_dz.to_owned() * &col_z) / &cache.denom);
    }
    let mut d_scale_weight = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            d_scale_weight[[i, j]] = d_denom[i] * cache.rms[j];
        }
    }
    let d_rms = params.scale_weight.t().dot(&d_denom);

    // rms path: rms_d = sqrt(mean_h Y^2)
    for i in 0..d {
        if cache.rms[i] > 0.0 {
            let coeff = d_rms[i] / (hf * cache.rms[i]);
            for j in 0..h {
                d_shifted[[i, j]] += coeff * cache.shifted[[i, j]];
            }
        }
    }

    // shift path: Y[:,h] = X[:,h] - Wa * mean
    let sum_d_shifted = d_shifted.sum_axis(Axis(1));
    let mut d_shift_weight = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            d_shift_weight[[i, j]] = -sum_d_shifted[i] * cache.mean[j];
        }
    }
    let d_mean = params.shift_weight.t().dot(&sum_d_shifted).mapv(|v| -v);
    let mut dx = d_shifted;
    for mut col in dx.axis_iter_mut(Axis(1)) {
        col += &(&d_mean / hf);
    }

    Ok(DainGrads {
        shift_weight: d_shift_weight,
        scale_weight: d_scale_weight,
        gate_weight: d_gate_weight,
        gate_bias: d_gate_bias,
        dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn sample_2x3() -> TimeSeriesSample {
        TimeSeriesSample::new(arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])).unwrap()
    }

    #[test]
    fn forward_identity_weights_worked_example() {
        let (out, cache) = dain_forward(&sample_2x3(), &DainParams::init(2)).unwrap();
        assert!((cache.mean[0] - 2.0).abs() < 1e-15);
        assert!((cache.mean[1] - 5.0).abs() < 1e-15);
        for i in 0..2 {
            assert!((cache.rms[i] - 0.81649658092772603).abs() < 1e-15);
            assert!((cache.gate[i] - 0.5).abs() < 1e-15);
        }
        // frozen from tools/reference_oracle.py
        let t_expect = [-0.61237242819579462, 0.0, 0.61237242819579462];
        for i in 0..2 {
            for j in 0..3 {
                assert!((out.matrix()[[i, j]] - t_expect[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_shift_weight_leaves_slices_uncentered() {
        let mut p = DainParams::init(2);
        p.shift_weight = Array2::zeros((2, 2));
        let x = sample_2x3();
        let (_, cache) = dain_forward(&x, &p).unwrap();
        assert_eq!(&cache.shifted, x.matrix());
    }

    #[test]
    fn saturated_gate_passes_scaled_slices_through() {
        let mut p = DainParams::init(2);
        p.gate_bias = Array1::from_elem(2, 50.0);
        let (out, cache) = dain_forward(&sample_2x3(), &p).unwrap();
        for (o, z) in out.matrix().iter().zip(cache.scaled.iter()) {
            assert!((o - z).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = DainParams::init(2);
        let (_, cache) = dain_forward(&sample_2x3(), &p).unwrap();
        let g = dain_backward(&cache, &p, &Array2::zeros((2, 3))).unwrap();
        assert!(g.dx.iter().all(|&v| v == 0.0));
        assert!(g.shift_weight.iter().all(|&v| v == 0.0));
        assert!(g.scale_weight.iter().all(|&v| v == 0.0));
        assert!(g.gate_weight.iter().all(|&v| v == 0.0));
        assert!(g.gate_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = DainParams::init(3);
        assert!(dain_forward(&sample_2x3(), &p).is_err());
    }
}
