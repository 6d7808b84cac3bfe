//! Forecasting backbone layers: a bilinear map on `D x H` windows and its
//! temporal-attention-augmented variant.
//!
//! Both layers transform a `D x H` input into a `D' x H'` output through a
//! left projection over features and a right projection over time. The
//! attention variant mixes temporal slices with a row-softmax attention mask
//! before the right projection; the mask's mixing matrix keeps a fixed
//! diagonal of `1/H` so each slice always attends to itself with constant
//! weight.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        }
    }

    fn derivative(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Identity => Array2::ones(pre.dim()),
        }
    }
}

/// Uniform Glorot-style init in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearLayerParams {
    /// `D' x D` feature projection
    pub left: Array2<f64>,
    /// `H x H'` temporal projection
    pub right: Array2<f64>,
    /// `D' x H'` bias
    pub bias: Array2<f64>,
    pub activation: Activation,
}

impl BilinearLayerParams {
    pub fn init(
        rng: &mut impl Rng,
        in_d: usize,
        in_h: usize,
        out_d: usize,
        out_h: usize,
        activation: Activation,
    ) -> Self {
        Self {
            left: glorot_uniform(rng, out_d, in_d, in_d, out_d),
            right: glorot_uniform(rng, in_h, out_h, in_h, out_h),
            bias: Array2::zeros((out_d, out_h)),
            activation,
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.left.ncols(), self.right.nrows())
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.ncols())
    }

    pub fn param_count(&self) -> usize {
        self.left.len() + self.right.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct BilinearCache {
    pub input: Array2<f64>,
    /// `left * X`
    pub projected: Array2<f64>,
    pub pre_activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct BilinearGrads {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
    pub bias: Array2<f64>,
    pub dx: Array2<f64>,
}

pub fn bilinear_forward(
    x: &Array2<f64>,
    params: &BilinearLayerParams,
) -> Result<(Array2<f64>, BilinearCache)> {
    let (in_d, in_h) = params.in_dims();
    if x.dim() != (in_d, in_h) {
        return Err(shape_mismatch(
            format!("{in_d}x{in_h}"),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let projected = params.left.dot(x);
    let pre = projected.dot(&params.right) + &params.bias;
    let y = params.activation.apply(&pre);
    Ok((
        y,
        BilinearCache {
            input: x.clone(),
            projected,
            pre_activation: pre,
        },
    ))
}

pub fn bilinear_backward(
    cache: &BilinearCache,
    params: &BilinearLayerParams,
    upstream: &Array2<f64>,
) -> Result<BilinearGrads> {
    if upstream.dim() != cache.pre_activation.dim() {
        return Err(shape_mismatch(
            format!("{:?}", cache.pre_activation.dim()),
            format!("{:?}", upstream.dim()),
        ));
    }
    let d_pre = upstream * &params.activation.derivative(&cache.pre_activation);
    let d_bias = d_pre.clone();
    let d_right = cache.projected.t().dot(&d_pre);
    let d_projected = d_pre.dot(&params.right.t());
    let d_left = d_projected.dot(&cache.input.t());
    let dx = params.left.t().dot(&d_projected);
    Ok(BilinearGrads {
        left: d_left,
        right: d_right,
        bias: d_bias,
        dx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablLayerParams {
    /// `D' x D` feature projection
    pub left: Array2<f64>,
    /// `H x H` attention mixing matrix; diagonal fixed at `1/H`, not trained
    pub mix: Array2<f64>,
    /// attention blend in `[0, 1]`
    pub blend: f64,
    /// `H x H'` temporal projection
    pub right: Array2<f64>,
    /// `D' x H'` bias
    pub bias: Array2<f64>,
    pub activation: Activation,
}

impl TablLayerParams {
    pub fn init(
        rng: &mut impl Rng,
        in_d: usize,
        in_h: usize,
        out_d: usize,
        out_h: usize,
        activation: Activation,
    ) -> Self {
        Self {
            left: glorot_uniform(rng, out_d, in_d, in_d, out_d),
            mix: Array2::from_elem((in_h, in_h), 1.0 / in_h as f64),
            blend: 0.5,
            right: glorot_uniform(rng, in_h, out_h, in_h, out_h),
            bias: Array2::zeros((out_d, out_h)),
            activation,
        }
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.left.ncols(), self.mix.nrows())
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.left.nrows(), self.right.ncols())
    }

    /// Trainable count: the fixed diagonal of the mixing matrix is excluded,
    /// the blend scalar is included.
    pub fn param_count(&self) -> usize {
        self.left.len() + (self.mix.len() - self.mix.nrows()) + 1 + self.right.len() + self.bias.len()
    }

    /// Restores the structural constraint `diag(mix) = 1/H` exactly.
    pub fn fix_mix_diagonal(&mut self) {
        let h = self.mix.nrows();
        let v = 1.0 / h as f64;
        for i in 0..h {
            self.mix[[i, i]] = v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TablCache {
    pub input: Array2<f64>,
    /// `left * X`
    pub projected: Array2<f64>,
    /// row-softmax attention weights, each row sums to 1
    pub attention: Array2<f64>,
    /// blended slice mixture fed to the right projection
    pub attended: Array2<f64>,
    pub pre_activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct TablGrads {
    pub left: Array2<f64>,
    /// gradient of the mixing matrix with a zeroed diagonal
    pub mix: Array2<f64>,
    pub blend: f64,
    pub right: Array2<f64>,
    pub bias: Array2<f64>,
    pub dx: Array2<f64>,
}

fn row_softmax(e: &Array2<f64>) -> Array2<f64> {
    let mut out = e.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn tabl_forward(
    x: &Array2<f64>,
    params: &TablLayerParams,
) -> Result<(Array2<f64>, TablCache)> {
    let (in_d, in_h) = params.in_dims();
    if x.dim() != (in_d, in_h) {
        return Err(shape_mismatch(
            format!("{in_d}x{in_h}"),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let projected = params.left.dot(x);
    let energies = projected.dot(&params.mix);
    let attention = row_softmax(&energies);
    let attended = &(&projected * &attention) * params.blend + &projected * (1.0 - params.blend);
    let pre = attended.dot(&params.right) + &params.bias;
    let y = params.activation.apply(&pre);
    Ok((
        y,
        TablCache {
            input: x.clone(),
            projected,
            attention,
            attended,
            pre_activation: pre,
        },
    ))
}

pub fn tabl_backward(
    cache: &TablCache,
    params: &TablLayerParams,
    upstream: &Array2<f64>,
) -> Result<TablGrads> {
    if upstream.dim() != cache.pre_activation.dim() {
        return Err(shape_mismatch(
            format!("{:?}", cache.pre_activation.dim()),
            format!("{:?}", upstream.dim()),
        ));
    }
    let d_pre = upstream * &params.activation.derivative(&cache.pre_activation);
    let d_bias = d_pre.clone();
    let d_right = cache.attended.t().dot(&d_pre);
    let d_attended = d_pre.dot(&params.right.t());

    let weighted = &cache.projected * &cache.attention;
    let d_blend = (&d_attended * &(&weighted - &cache.projected)).sum();
    let mut d_projected = &d_attended * (1.0 - params.blend) + &(&d_attended * &cache.attention) * params.blend;
    let d_attention = &(&d_attended * &cache.projected) * params.blend;

    // softmax backward per row: de = a .* (da - <da, a>)
    let mut d_energies = Array2::zeros(cache.attention.dim());
    for ((da_row, a_row), mut de_row) in d_attention
        .axis_iter(Axis(0))
        .zip(cache.attention.axis_iter(Axis(0)))
        .zip(d_energies.axis_iter_mut(Axis(0)))
    {
        let dot: f64 = da_row.iter().zip(a_row.iter()).map(|(g, a)| g * a).sum();
        for ((de, &g), &a) in de_row.iter_mut().zip(da_row.iter()).zip(a_row.iter()) {
            *de = a * (g - dot);
        }
    }
    let mut d_mix = cache.projected.t().dot(&d_energies);
    for i in 0..d_mix.nrows() {
        d_mix[[i, i]] = 0.0;
    }
    d_projected += &d_energies.dot(&params.mix.t());

    let d_left = d_projected.dot(&cache.input.t());
    let dx = params.left.t().dot(&d_projected);
    Ok(TablGrads {
        left: d_left,
        mix: d_mix,
        blend: d_blend,
        right: d_right,
        bias: d_bias,
        dx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_bilinear(n: usize) -> BilinearLayerParams {
        BilinearLayerParams {
            left: Array2::eye(n),
            right: Array2::eye(n),
            bias: Array2::zeros((n, n)),
            activation: Activation::Identity,
        }
    }

    #[test]
    fn identity_configuration_passes_input_through() {
        let x = arr2(&[[1.0, -2.0], [0.25, 4.0]]);
        let (y, _) = bilinear_forward(&x, &identity_bilinear(2)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn collapse_to_scalar() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let p = BilinearLayerParams {
            left: arr2(&[[1.0, 1.0]]),
            right: arr2(&[[1.0], [1.0]]),
            bias: arr2(&[[0.0]]),
            activation: Activation::Identity,
        };
        let (y, _) = bilinear_forward(&x, &p).unwrap();
        assert_eq!(y, arr2(&[[10.0]]));
    }

    #[test]
    fn relu_saturates_under_large_negative_bias() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut p = identity_bilinear(2);
        p.bias = Array2::from_elem((2, 2), -100.0);
        p.activation = Activation::Relu;
        let (y, _) = bilinear_forward(&x, &p).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    fn random_tabl(rng: &mut ChaCha8Rng) -> TablLayerParams {
        let mut p = TablLayerParams::init(rng, 3, 4, 2, 2, Activation::Identity);
        p.mix = Array2::from_shape_fn((4, 4), |_| rng.random_range(-0.5..0.5));
        p.fix_mix_diagonal();
        p
    }

    #[test]
    fn zero_blend_reduces_to_bilinear_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tabl = random_tabl(&mut rng);
        tabl.blend = 0.0;
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let bl = BilinearLayerParams {
            left: tabl.left.clone(),
            right: tabl.right.clone(),
            bias: tabl.bias.clone(),
            activation: tabl.activation,
        };
        let (yt, _) = tabl_forward(&x, &tabl).unwrap();
        let (yb, _) = bilinear_forward(&x, &bl).unwrap();
        assert_eq!(yt, yb);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tabl = random_tabl(&mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-3.0..3.0));
        let (_, cache) = tabl_forward(&x, &tabl).unwrap();
        for row in cache.attention.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_mix_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tabl = TablLayerParams::init(&mut rng, 3, 4, 2, 2, Activation::Identity);
        tabl.blend = 1.0;
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-3.0..3.0));
        let (_, cache) = tabl_forward(&x, &tabl).unwrap();
        for v in &cache.attention {
            assert!((v - 0.25).abs() < 1e-12);
        }
        // closed form: attended = projected / H
        for (a, p) in cache.attended.iter().zip(cache.projected.iter()) {
            assert!((a - p / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_blend_kills_mix_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut tabl = random_tabl(&mut rng);
        tabl.blend = 0.0;
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let (_, cache) = tabl_forward(&x, &tabl).unwrap();
        let upstream = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let g = tabl_backward(&cache, &tabl, &upstream).unwrap();
        assert!(g.mix.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let tabl = random_tabl(&mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let (_, cache) = tabl_forward(&x, &tabl).unwrap();
        let g = tabl_backward(&cache, &tabl, &Array2::zeros((2, 2))).unwrap();
        assert!(g.left.iter().all(|&v| v == 0.0));
        assert!(g.mix.iter().all(|&v| v == 0.0));
        assert_eq!(g.blend, 0.0);
        assert!(g.dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mix_grad_diagonal_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let tabl = random_tabl(&mut rng);
        let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-2.0..2.0));
        let (_, cache) = tabl_forward(&x, &tabl).unwrap();
        let upstream = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let g = tabl_backward(&cache, &tabl, &upstream).unwrap();
        for i in 0..4 {
            assert_eq!(g.mix[[i, i]], 0.0);
        }
    }
}
