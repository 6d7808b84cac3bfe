//! Bilinear input normalization.
//!
//! Each window is standardized twice: once along time (every feature row is
//! centered and scaled by its own mean/std over the window) and once along
//! features (every temporal column likewise). Each branch gets a learnable
//! per-lane scale and shift, and the two branch outputs are blended by two
//! learnable non-negative scalars:
//!
//! ```text
//! A[d,h] = temporal_scale[d] * (X[d,h] - row_mean[d]) / (row_std[d] + eps) + temporal_shift[d]
//! B[d,h] = feature_scale[h]  * (X[d,h] - col_mean[h]) / (col_std[h] + eps) + feature_shift[h]
//! T      = temporal_weight * A + feature_weight * B
//! ```
//!
//! The blend weights are kept non-negative by projection after every
//! optimizer step ([`bin_project`]).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{standardize_lane, standardize_lane_backward, NORM_EPS};
use crate::error::{shape_mismatch, Error, Result};
use crate::sample::TimeSeriesSample;

/// Learnable parameters; `d` lanes for the temporal branch, `h` lanes for the
/// feature branch, plus the two blend scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinParams {
    /// per-feature scale on the temporally standardized branch, length `D`
    pub temporal_scale: Array1<f64>,
    /// per-feature shift on the temporally standardized branch, length `D`
    pub temporal_shift: Array1<f64>,
    /// per-step scale on the feature-standardized branch, length `H`
    pub feature_scale: Array1<f64>,
    /// per-step shift on the feature-standardized branch, length `H`
    pub feature_shift: Array1<f64>,
    /// blend weight of the temporal branch, kept >= 0
    pub temporal_weight: f64,
    /// blend weight of the feature branch, kept >= 0
    pub feature_weight: f64,
}

impl BinParams {
    /// Unit scales, zero shifts, both blend weights 0.5: the layer starts as
    /// an unweighted average of the two plain standardizations.
    pub fn init(d: usize, h: usize) -> Self {
        Self {
            temporal_scale: Array1::ones(d),
            temporal_shift: Array1::zeros(d),
            feature_scale: Array1::ones(h),
            feature_shift: Array1::zeros(h),
            temporal_weight: 0.5,
            feature_weight: 0.5,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.temporal_scale.len(), self.feature_scale.len())
    }

    pub fn param_count(&self) -> usize {
        2 * self.temporal_scale.len() + 2 * self.feature_scale.len() + 2
    }
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BinCache {
    /// centered rows `X[d,h] - row_mean[d]`
    pub row_centered: Array2<f64>,
    /// centered columns `X[d,h] - col_mean[h]`
    pub col_centered: Array2<f64>,
    /// per-feature temporal mean, length `D`
    pub row_mean: Array1<f64>,
    /// per-feature temporal std, length `D`
    pub row_std: Array1<f64>,
    /// per-step feature mean, length `H`
    pub col_mean: Array1<f64>,
    /// per-step feature std, length `H`
    pub col_std: Array1<f64>,
    /// standardized temporal branch before scale/shift
    pub row_standardized: Array2<f64>,
    /// standardized feature branch before scale/shift
    pub col_standardized: Array2<f64>,
    /// temporal branch output
    pub branch_a: Array2<f64>,
    /// feature branch output
    pub branch_b: Array2<f64>,
}

/// Gradients mirroring [`BinParams`], plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct BinGrads {
    pub temporal_scale: Array1<f64>,
    pub temporal_shift: Array1<f64>,
    pub feature_scale: Array1<f64>,
    pub feature_shift: Array1<f64>,
    pub temporal_weight: f64,
    pub feature_weight: f64,
    pub dx: Array2<f64>,
}

fn check_dims(params: &BinParams, d: usize, h: usize) -> Result<()> {
    let (pd, ph) = params.dims();
    if pd != d || ph != h {
        return Err(shape_mismatch(format!("{pd}x{ph}"), format!("{d}x{h}")));
    }
    Ok(())
}

/// Runs the layer on one window, returning the blended output and the cache.
pub fn bin_forward(x: &TimeSeriesSample, params: &BinParams) -> Result<(TimeSeriesSample, BinCache)> {
    let (d, h) = (x.features(), x.steps());
    check_dims(params, d, h)?;

    let xm = x.matrix();
    let mut row_mean = Array1::zeros(d);
    let mut row_std = Array1::zeros(d);
    let mut row_standardized = xm.clone();
    for (i, mut row) in row_standardized.outer_iter_mut().enumerate() {
        let lane = row.as_slice_mut().expect("row-major layout");
        let (m, s) = standardize_lane(lane);
        row_mean[i] = m;
        row_std[i] = s;
    }
    let row_centered = {
        let mut c = xm.clone();
        for (i, mut row) in c.outer_iter_mut().enumerate() {
            row.mapv_inplace(|v| v - row_mean[i]);
        }
        c
    };

    let mut col_mean = Array1::zeros(h);
    let mut col_std = Array1::zeros(h);
    let mut col_standardized = xm.clone();
    for j in 0..h {
        let mut lane: Vec<f64> = col_standardized.column(j).to_vec();
        let (m, s) = standardize_lane(&mut lane);
        col_mean[j] = m;
        col_std[j] = s;
        col_standardized
            .column_mut(j)
            .assign(&Array1::from_vec(lane));
    }
    let col_centered = {
        let mut c = xm.clone();
        for (j, mut col) in c.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v - col_mean[j]);
        }
        c
    };

    let mut branch_a = row_standardized.clone();
    for (i, mut row) in branch_a.outer_iter_mut().enumerate() {
        row.mapv_inplace(|v| params.temporal_scale[i] * v + params.temporal_shift[i]);
    }
    let mut branch_b = col_standardized.clone();
    for (j, mut col) in branch_b.axis_iter_mut(Axis(1)).enumerate() {
        col.mapv_inplace(|v| params.feature_scale[j] * v + params.feature_shift[j]);
    }

    let out = &branch_a * params.temporal_weight + &branch_b * params.feature_weight;
    let cache = BinCache {
        row_centered,
        col_centered,
        row_mean,
        row_std,
        col_mean,
        col_std,
        row_standardized,
        col_standardized,
        branch_a,
        branch_b,
    };
    Ok((TimeSeriesSample::new(out)?, cache))
}

/// Analytic reverse pass. `upstream` is the gradient of the loss w.r.t. the
/// blended output; the standardization backward accounts for the dependence
/// of each lane's mean and std on the input.
pub fn bin_backward(cache: &BinCache, params: &BinParams, upstream: &Array2<f64>) -> Result<BinGrads> {
    let (d, h) = cache.branch_a.dim();
    if upstream.dim() != (d, h) {
        return Err(shape_mismatch(
            format!("{d}x{h}"),
            format!("{}x{}", upstream.nrows(), upstream.ncols()),
        ));
    }

    let d_temporal_weight = (upstream * &cache.branch_a).sum();
    let d_feature_weight = (upstream * &cache.branch_b).sum();

    let da = upstream * params.temporal_weight;
    let db = upstream * params.feature_weight;

    // temporal branch: scale/shift per feature row, then lane backward
    let mut d_temporal_scale = Array1::zeros(d);
    let mut d_temporal_shift = Array1::zeros(d);
    let mut dx = Array2::zeros((d, h));
    for i in 0..d {
        let da_row = da.row(i);
        d_temporal_scale[i] = da_row
            .iter()
            .zip(cache.row_standardized.row(i))
            .map(|(g, n)| g * n)
            .sum();
        d_temporal_shift[i] = da_row.sum();
        let dn: Vec<f64> = da_row.iter().map(|g| g * params.temporal_scale[i]).collect();
        let centered: Vec<f64> = cache.row_centered.row(i).to_vec();
        let dlane = standardize_lane_backward(&dn, &centered, cache.row_std[i]);
        for (j, g) in dlane.into_iter().enumerate() {
            dx[[i, j]] += g;
        }
    }

    // feature branch: scale/shift per temporal column, then lane backward
    let mut d_feature_scale = Array1::zeros(h);
    let mut d_feature_shift = Array1::zeros(h);
    for j in 0..h {
        let db_col = db.column(j);
        d_feature_scale[j] = db_col
            .iter()
            .zip(cache.col_standardized.column(j))
            .map(|(g, n)| g * n)
            .sum();
        d_feature_shift[j] = db_col.sum();
        let dn: Vec<f64> = db_col.iter().map(|g| g * params.feature_scale[j]).collect();
        let centered: Vec<f64> = cache.col_centered.column(j).to_vec();
        let dlane = standardize_lane_backward(&dn, &centered, cache.col_std[j]);
        for (i, g) in dlane.into_iter().enumerate() {
            dx[[i, j]] += g;
        }
    }

    Ok(BinGrads {
        temporal_scale: d_temporal_scale,
        temporal_shift: d_temporal_shift,
        feature_scale: d_feature_scale,
        feature_shift: d_feature_shift,
        temporal_weight: d_temporal_weight,
        feature_weight: d_feature_weight,
        dx,
    })
}

/// Projects the blend weights onto the non-negative orthant. Idempotent;
/// applied after every optimizer step.
pub fn bin_project(params: &mut BinParams) {
    params.temporal_weight = params.temporal_weight.max(0.0);
    params.feature_weight = params.feature_weight.max(0.0);
}

/// Convenience check used by validation paths.
pub fn bin_check_input(x: &TimeSeriesSample, params: &BinParams) -> Result<()> {
    check_dims(params, x.features(), x.steps()).map_err(|e| match e {
        Error::ShapeMismatch { expected, got } => Error::ShapeMismatch { expected, got },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn sample_2x3() -> TimeSeriesSample {
        TimeSeriesSample::new(arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])).unwrap()
    }

    fn unit_params(d: usize, h: usize) -> BinParams {
        let mut p = BinParams::init(d, h);
        p.temporal_weight = 1.0;
        p.feature_weight = 1.0;
        p
    }

    #[test]
    fn forward_worked_example() {
        let (out, cache) = bin_forward(&sample_2x3(), &unit_params(2, 3)).unwrap();
        // frozen from tools/reference_oracle.py
        assert!((cache.row_mean[0] - 2.0).abs() < 1e-15);
        assert!((cache.row_mean[1] - 5.0).abs() < 1e-15);
        assert!((cache.row_std[0] - 0.81649658092772603).abs() < 1e-15);
        let a_expect = [-1.2247448563915892, 0.0, 1.2247448563915892];
        for i in 0..2 {
            for j in 0..3 {
                assert!((cache.branch_a[[i, j]] - a_expect[j]).abs() < 1e-12);
            }
        }
        assert!((cache.col_mean[0] - 2.5).abs() < 1e-15);
        assert!((cache.col_mean[2] - 4.5).abs() < 1e-15);
        assert!((cache.col_std[1] - 1.5).abs() < 1e-15);
        let b_expect = [[-0.99999999333333338; 3], [0.99999999333333338; 3]];
        let t_expect = [
            [-2.2247448497249226, -0.99999999333333338, 0.22474486305825586],
            [-0.22474486305825586, 0.99999999333333338, 2.2247448497249226],
        ];
        for i in 0..2 {
            for j in 0..3 {
                assert!((cache.branch_b[[i, j]] - b_expect[i][j]).abs() < 1e-12);
                assert!((out.matrix()[[i, j]] - t_expect[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_input_maps_to_exact_zero() {
        let x = TimeSeriesSample::new(Array2::from_elem((3, 4), 7.25)).unwrap();
        let (out, cache) = bin_forward(&x, &unit_params(3, 4)).unwrap();
        assert!(cache.branch_a.iter().all(|&v| v == 0.0));
        assert!(cache.branch_b.iter().all(|&v| v == 0.0));
        assert!(out.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_only_blend_standardizes_rows() {
        let mut p = BinParams::init(2, 3);
        p.temporal_weight = 1.0;
        p.feature_weight = 0.0;
        let (out, cache) = bin_forward(&sample_2x3(), &p).unwrap();
        assert_eq!(out.matrix(), &cache.branch_a);
        for row in out.matrix().outer_iter() {
            let mean = row.sum() / row.len() as f64;
            let std = (row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / row.len() as f64)
                .sqrt();
            assert!(mean.abs() < 1e-10);
            assert!((std - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = unit_params(2, 3);
        let (_, cache) = bin_forward(&sample_2x3(), &p).unwrap();
        let g = bin_backward(&cache, &p, &Array2::zeros((2, 3))).unwrap();
        assert!(g.dx.iter().all(|&v| v == 0.0));
        assert!(g.temporal_scale.iter().all(|&v| v == 0.0));
        assert!(g.feature_scale.iter().all(|&v| v == 0.0));
        assert_eq!(g.temporal_weight, 0.0);
        assert_eq!(g.feature_weight, 0.0);
    }

    #[test]
    fn zero_feature_weight_annihilates_feature_branch_scale_grads() {
        let mut p = BinParams::init(2, 3);
        p.temporal_weight = 0.8;
        p.feature_weight = 0.0;
        let (_, cache) = bin_forward(&sample_2x3(), &p).unwrap();
        let upstream = arr2(&[[0.3, -1.1, 0.7], [2.0, 0.4, -0.6]]);
        let g = bin_backward(&cache, &p, &upstream).unwrap();
        assert!(g.feature_scale.iter().all(|&v| v == 0.0));
        assert!(g.feature_shift.iter().all(|&v| v == 0.0));
        // the blend weight of the dead branch still receives a gradient
        assert!(g.feature_weight.abs() > 0.0);
    }

    #[test]
    fn project_clamps_only_negative_weights() {
        let mut p = BinParams::init(2, 2);
        p.temporal_weight = -0.3;
        p.feature_weight = 0.7;
        bin_project(&mut p);
        assert_eq!(p.temporal_weight, 0.0);
        assert_eq!(p.feature_weight, 0.7);
        p.temporal_weight = 0.0;
        bin_project(&mut p);
        assert_eq!(p.temporal_weight, 0.0);
    }

    #[test]
    fn project_is_idempotent() {
        let mut p = BinParams::init(1, 1);
        p.temporal_weight = -2.5;
        p.feature_weight = -0.0;
        bin_project(&mut p);
        let once = p.clone();
        bin_project(&mut p);
        assert_eq!(p, once);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p = BinParams::init(3, 3);
        assert!(matches!(
            bin_forward(&sample_2x3(), &p),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
