//! Batch normalization applied to raw input windows.
//!
//! Each of the `D*H` scalar positions is treated as an independent feature:
//! in train mode it is standardized by the mini-batch mean/variance at that
//! position and the running statistics are updated in moving-average style;
//! in eval mode the accumulated running statistics are used instead.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::NORM_EPS;
use crate::error::{shape_mismatch, Error, Result};
use crate::sample::TimeSeriesSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BnMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnInputParams {
    pub scale: Array2<f64>,
    pub shift: Array2<f64>,
    pub running_mean: Array2<f64>,
    pub running_var: Array2<f64>,
    /// weight of the previous running value in the moving average
    pub momentum: f64,
    pub mode: BnMode,
}

impl BnInputParams {
    pub fn init(d: usize, h: usize) -> Self {
        Self {
            scale: Array2::ones((d, h)),
            shift: Array2::zeros((d, h)),
            running_mean: Array2::zeros((d, h)),
            running_var: Array2::ones((d, h)),
            momentum: 0.9,
            mode: BnMode::Train,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.scale.dim()
    }

    pub fn param_count(&self) -> usize {
        2 * self.scale.len()
    }
}

#[derive(Debug, Clone)]
pub struct BnInputCache {
    pub mode: BnMode,
    /// standardized inputs before scale/shift, one per batch element
    pub normalized: Vec<Array2<f64>>,
    /// `1 / sqrt(var + eps)` of the statistics used
    pub inv_std: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub scale: Array2<f64>,
    pub shift: Array2<f64>,
    pub dx: Vec<Array2<f64>>,
}

fn check_batch(batch: &[TimeSeriesSample], dims: (usize, usize)) -> Result<()> {
    for s in batch {
        if (s.features(), s.steps()) != dims {
            return Err(shape_mismatch(
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", s.features(), s.steps()),
            ));
        }
    }
    Ok(())
}

/// Normalizes a batch of windows. Train mode requires at least two samples
/// and updates the running statistics; eval mode leaves the parameters
/// untouched and may be called on batches of any size.
pub fn bn_input_forward(
    batch: &[TimeSeriesSample],
    params: &mut BnInputParams,
) -> Result<(Vec<TimeSeriesSample>, BnInputCache)> {
    let dims = params.dims();
    check_batch(batch, dims)?;
    match params.mode {
        BnMode::Train => {
            if batch.len() < 2 {
                return Err(Error::BatchTooSmall {
                    got: batch.len(),
                    min: 2,
                });
            }
            let n = batch.len() as f64;
            let mut mean = Array2::<f64>::zeros(dims);
            for s in batch {
                mean += s.matrix();
            }
            mean /= n;
            let mut var = Array2::<f64>::zeros(dims);
            for s in batch {
                let diff = s.matrix() - &mean;
                var += &(&diff * &diff);
            }
            var /= n;
            let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
            let mut normalized = Vec::with_capacity(batch.len());
            let mut outputs = Vec::with_capacity(batch.len());
            for s in batch {
                let xhat = (s.matrix() - &mean) * &inv_std;
                let out = &xhat * &params.scale + &params.shift;
                normalized.push(xhat);
                outputs.push(TimeSeriesSample::new(out)?);
            }
            let m = params.momentum;
            params.running_mean = &params.running_mean * m + &mean * (1.0 - m);
            params.running_var = &params.running_var * m + &var * (1.0 - m);
            Ok((
                outputs,
                BnInputCache {
                    mode: BnMode::Train,
                    normalized,
                    inv_std,
                },
            ))
        }
        BnMode::Eval => {
            let inv_std = params.running_var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
            let mut normalized = Vec::with_capacity(batch.len());
            let mut outputs = Vec::with_capacity(batch.len());
            for s in batch {
                let xhat = (s.matrix() - &params.running_mean) * &inv_std;
                let out = &xhat * &params.scale + &params.shift;
                normalized.push(xhat);
                outputs.push(TimeSeriesSample::new(out)?);
            }
            Ok((
                outputs,
                BnInputCache {
                    mode: BnMode::Eval,
                    normalized,
                    inv_std,
                },
            ))
        }
    }
}

/// Standard batch-norm reverse pass. In train mode the gradient accounts for
/// the batch statistics' dependence on every sample; in eval mode the
/// statistics are constants.
pub fn bn_input_backward(
    cache: &BnInputCache,
    params: &BnInputParams,
    upstream: &[Array2<f64>],
) -> Result<BnGrads> {
    if upstream.len() != cache.normalized.len() {
        return Err(shape_mismatch(
            format!("batch of {}", cache.normalized.len()),
            upstream.len().to_string(),
        ));
    }
    let dims = params.dims();
    for g in upstream {
        if g.dim() != dims {
            return Err(shape_mismatch(
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", g.nrows(), g.ncols()),
            ));
        }
    }

    let mut d_scale = Array2::<f64>::zeros(dims);
    let mut d_shift = Array2::<f64>::zeros(dims);
    for (g, xhat) in upstream.iter().zip(&cache.normalized) {
        d_scale += &(g * xhat);
        d_shift += g;
    }

    let dx = match cache.mode {
        BnMode::Eval => upstream
            .iter()
            .map(|g| g * &params.scale * &cache.inv_std)
            .collect(),
        BnMode::Train => {
            let n = upstream.len() as f64;
            // dxhat_i = g_i * scale; dx_i = inv_std/n * (n*dxhat_i
            //   - sum_j dxhat_j - xhat_i * sum_j dxhat_j*xhat_j)
            let mut sum_dxhat = Array2::<f64>::zeros(dims);
            let mut sum_dxhat_xhat = Array2::<f64>::zeros(dims);
            let dxhats: Vec<Array2<f64>> =
                upstream.iter().map(|g| g * &params.scale).collect();
            for (dxhat, xhat) in dxhats.iter().zip(&cache.normalized) {
                sum_dxhat += dxhat;
                sum_dxhat_xhat += &(dxhat * xhat);
            }
            dxhats
                .iter()
                .zip(&cache.normalized)
                .map(|(dxhat, xhat)| {
                    (&(dxhat * n) - &sum_dxhat - &(xhat * &sum_dxhat_xhat))
                        * &cache.inv_std
                        / n
                })
                .collect()
        }
    };

    Ok(BnGrads {
        scale: d_scale,
        shift: d_shift,
        dx,
    })
}
