//! Whole-model assembly: a normalizer in front, a stack of backbone layers,
//! and an output head, with hand-derived gradients end to end.
//!
//! The model is a pure function of `(params, input)`; every forward returns
//! the caches its backward needs. Parameter tensors are exposed through a
//! flat slot list ([`ModelParams::slots_mut`]) in a stable order, which is
//! what the optimizer, the checkpoint format and the gradient checker share.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    bilinear_backward, bilinear_forward, tabl_backward, tabl_forward, Activation, BilinearCache,
    BilinearGrads, BilinearLayerParams, TablCache, TablGrads, TablLayerParams,
};
use crate::error::{shape_mismatch, Error, Result};
use crate::norm::{
    bin_backward, bin_forward, bn_input_forward, dain_backward, dain_forward, BinCache, BinGrads,
    BinParams, BnInputParams, BnMode, DainCache, DainGrads, DainParams,
};
use crate::sample::{apply_static, StaticKind, StaticNormalizer, TimeSeriesSample};

/// Which normalizer sits in front of the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerKind {
    Bin,
    Dain,
    Bn,
    Zscore,
    Minmax,
    None,
}

impl NormalizerKind {
    pub const ALL: [NormalizerKind; 6] = [
        NormalizerKind::Bin,
        NormalizerKind::Dain,
        NormalizerKind::Bn,
        NormalizerKind::Zscore,
        NormalizerKind::Minmax,
        NormalizerKind::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormalizerKind::Bin => "bin",
            NormalizerKind::Dain => "dain",
            NormalizerKind::Bn => "bn",
            NormalizerKind::Zscore => "zscore",
            NormalizerKind::Minmax => "minmax",
            NormalizerKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Bilinear,
    Tabl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub out_features: usize,
    pub out_steps: usize,
    pub activation: Activation,
}

/// Output head: plain 3-way movement classification, or the joint 2-way
/// direction classifier plus a non-negative time-to-move regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    #[serde(rename = "softmax3")]
    Softmax3,
    #[serde(rename = "softmax2_plus_regression")]
    DirectionAndHorizon,
}

impl HeadKind {
    pub fn classes(self) -> usize {
        match self {
            HeadKind::Softmax3 => 3,
            HeadKind::DirectionAndHorizon => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_features: usize,
    pub input_steps: usize,
    pub normalizer: NormalizerKind,
    pub layers: Vec<LayerSpec>,
    pub head: HeadKind,
}

impl ModelSpec {
    /// Two hidden layers: a bilinear expansion then an attention layer.
    /// At 40x10 this is 40x10 -> 60x10 -> 120x5 -> head.
    pub fn two_hidden(d: usize, h: usize, normalizer: NormalizerKind, head: HeadKind) -> Self {
        Self {
            input_features: d,
            input_steps: h,
            normalizer,
            layers: vec![
                LayerSpec {
                    kind: LayerKind::Bilinear,
                    out_features: (3 * d).div_ceil(2),
                    out_steps: h,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    kind: LayerKind::Tabl,
                    out_features: 3 * d,
                    out_steps: (h / 2).max(1),
                    activation: Activation::Relu,
                },
            ],
            head,
        }
    }

    /// One hidden attention layer. At 40x10 this is 40x10 -> 120x5 -> head.
    pub fn one_hidden(d: usize, h: usize, normalizer: NormalizerKind, head: HeadKind) -> Self {
        Self {
            input_features: d,
            input_steps: h,
            normalizer,
            layers: vec![LayerSpec {
                kind: LayerKind::Tabl,
                out_features: 3 * d,
                out_steps: (h / 2).max(1),
                activation: Activation::Relu,
            }],
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_features == 0 || self.input_steps == 0 {
            return Err(Error::Config("model input dimensions must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.out_features == 0 || l.out_steps == 0 {
                return Err(Error::Config(format!(
                    "layer {i} has an empty output shape"
                )));
            }
        }
        Ok(())
    }

    /// Shape of the flattened feature vector entering the head.
    pub fn head_input_len(&self) -> usize {
        let (d, h) = self
            .layers
            .last()
            .map(|l| (l.out_features, l.out_steps))
            .unwrap_or((self.input_features, self.input_steps));
        d * h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    Bilinear(BilinearLayerParams),
    Tabl(TablLayerParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NormalizerParams {
    None,
    Static(StaticNormalizer),
    Bin(BinParams),
    Dain(DainParams),
    Bn(BnInputParams),
}

impl NormalizerParams {
    pub fn param_count(&self) -> usize {
        match self {
            NormalizerParams::None | NormalizerParams::Static(_) => 0,
            NormalizerParams::Bin(p) => p.param_count(),
            NormalizerParams::Dain(p) => p.param_count(),
            NormalizerParams::Bn(p) => p.param_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadParams {
    Softmax {
        /// `K x F`
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    Joint {
        /// `2 x F` direction classifier
        dir_weight: Array2<f64>,
        dir_bias: Array1<f64>,
        /// length-`F` horizon regressor; output passed through softplus
        reg_weight: Array1<f64>,
        reg_bias: f64,
    },
}

impl HeadParams {
    pub fn param_count(&self) -> usize {
        match self {
            HeadParams::Softmax { weight, bias } => weight.len() + bias.len(),
            HeadParams::Joint {
                dir_weight,
                dir_bias,
                reg_weight,
                ..
            } => dir_weight.len() + dir_bias.len() + reg_weight.len() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub normalizer: NormalizerParams,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

impl ModelParams {
    /// Seeded initialization: Glorot-uniform weight matrices, zero biases,
    /// neutral normalizer parameters.
    pub fn init(spec: &ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let (d, h) = (spec.input_features, spec.input_steps);
        let normalizer = match spec.normalizer {
            NormalizerKind::None => NormalizerParams::None,
            NormalizerKind::Zscore => {
                NormalizerParams::Static(StaticNormalizer::unfitted(StaticKind::Zscore))
            }
            NormalizerKind::Minmax => {
                NormalizerParams::Static(StaticNormalizer::unfitted(StaticKind::Minmax))
            }
            NormalizerKind::Bin => NormalizerParams::Bin(BinParams::init(d, h)),
            NormalizerKind::Dain => NormalizerParams::Dain(DainParams::init(d)),
            NormalizerKind::Bn => NormalizerParams::Bn(BnInputParams::init(d, h)),
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        let (mut cur_d, mut cur_h) = (d, h);
        for l in &spec.layers {
            let p = match l.kind {
                LayerKind::Bilinear => LayerParams::Bilinear(BilinearLayerParams::init(
                    rng,
                    cur_d,
                    cur_h,
                    l.out_features,
                    l.out_steps,
                    l.activation,
                )),
                LayerKind::Tabl => LayerParams::Tabl(TablLayerParams::init(
                    rng,
                    cur_d,
                    cur_h,
                    l.out_features,
                    l.out_steps,
                    l.activation,
                )),
            };
            layers.push(p);
            cur_d = l.out_features;
            cur_h = l.out_steps;
        }
        let flat = cur_d * cur_h;
        let head = match spec.head {
            HeadKind::Softmax3 => HeadParams::Softmax {
                weight: crate::backbone::glorot_uniform(rng, 3, flat, flat, 3),
                bias: Array1::zeros(3),
            },
            HeadKind::DirectionAndHorizon => HeadParams::Joint {
                dir_weight: crate::backbone::glorot_uniform(rng, 2, flat, flat, 2),
                dir_bias: Array1::zeros(2),
                reg_weight: crate::backbone::glorot_uniform(rng, 1, flat, flat, 1)
                    .row(0)
                    .to_owned(),
                reg_bias: 0.0,
            },
        };
        Ok(Self {
            spec: spec.clone(),
            normalizer,
            layers,
            head,
        })
    }

    /// Trainable parameters in the backbone and head (normalizer excluded).
    pub fn backbone_head_param_count(&self) -> usize {
        let layers: usize = self
            .layers
            .iter()
            .map(|l| match l {
                LayerParams::Bilinear(p) => p.param_count(),
                LayerParams::Tabl(p) => p.param_count(),
            })
            .sum();
        layers + self.head.param_count()
    }

    /// Per-component breakdown of trainable parameter counts.
    pub fn param_report(&self) -> Vec<(String, usize)> {
        let mut rows = vec![(
            format!("normalizer.{}", self.spec.normalizer.name()),
            self.normalizer.param_count(),
        )];
        for (i, l) in self.layers.iter().enumerate() {
            let (name, n) = match l {
                LayerParams::Bilinear(p) => ("bilinear", p.param_count()),
                LayerParams::Tabl(p) => ("tabl", p.param_count()),
            };
            rows.push((format!("layer{i}.{name}"), n));
        }
        rows.push(("head".into(), self.head.param_count()));
        rows
    }
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum LayerCache {
    Bilinear(BilinearCache),
    Tabl(TablCache),
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub flat: Array1<f64>,
    pub logits: Array1<f64>,
    /// pre-softplus regressor output (joint head only)
    pub reg_pre: Option<f64>,
    last_dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct BackboneCache {
    pub layers: Vec<LayerCache>,
    pub head: HeadCache,
}

#[derive(Debug, Clone)]
pub enum NormCache {
    Passthrough,
    Bin(BinCache),
    Dain(DainCache),
    /// single-sample path always evaluates batch norm with running
    /// statistics; holds the standardized window before scale/shift
    BnEval { xhat: Array2<f64> },
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    pub normalized: TimeSeriesSample,
    pub norm: NormCache,
    pub backbone: BackboneCache,
}

/// Model output: class probabilities, plus the predicted horizon for the
/// joint head.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub horizon: Option<f64>,
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .map(|(i, _)| i)
            .expect("non-empty probabilities")
    }
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

pub(crate) fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Runs the backbone and head on an already-normalized window.
pub fn forward_backbone(
    params: &ModelParams,
    normalized: &TimeSeriesSample,
) -> Result<(Prediction, BackboneCache)> {
    let mut cur = normalized.matrix().clone();
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = match layer {
            LayerParams::Bilinear(p) => {
                let (y, c) = bilinear_forward(&cur, p)?;
                (y, LayerCache::Bilinear(c))
            }
            LayerParams::Tabl(p) => {
                let (y, c) = tabl_forward(&cur, p)?;
                (y, LayerCache::Tabl(c))
            }
        };
        caches.push(cache);
        cur = next;
    }
    let last_dims = cur.dim();
    let flat = Array1::from_iter(cur.iter().cloned());
    let (logits, reg_pre, horizon) = match &params.head {
        HeadParams::Softmax { weight, bias } => {
            if weight.ncols() != flat.len() {
                return Err(shape_mismatch(
                    format!("head input {}", weight.ncols()),
                    flat.len().to_string(),
                ));
            }
            (weight.dot(&flat) + bias, None, None)
        }
        HeadParams::Joint {
            dir_weight,
            dir_bias,
            reg_weight,
            reg_bias,
        } => {
            if dir_weight.ncols() != flat.len() {
                return Err(shape_mismatch(
                    format!("head input {}", dir_weight.ncols()),
                    flat.len().to_string(),
                ));
            }
            let pre = reg_weight.dot(&flat) + reg_bias;
            (
                dir_weight.dot(&flat) + dir_bias,
                Some(pre),
                Some(softplus(pre)),
            )
        }
    };
    let probs = softmax(&logits).to_vec();
    Ok((
        Prediction { probs, horizon },
        BackboneCache {
            layers: caches,
            head: HeadCache {
                flat,
                logits,
                reg_pre,
                last_dims,
            },
        },
    ))
}

#[derive(Debug, Clone)]
pub enum LayerGrads {
    Bilinear(BilinearGrads),
    Tabl(TablGrads),
}

#[derive(Debug, Clone)]
pub enum HeadGrads {
    Softmax {
        weight: Array2<f64>,
        bias: Array1<f64>,
    },
    Joint {
        dir_weight: Array2<f64>,
        dir_bias: Array1<f64>,
        reg_weight: Array1<f64>,
        reg_bias: f64,
    },
}

#[derive(Debug, Clone)]
pub enum NormGrads {
    None,
    Bin(BinGrads),
    Dain(DainGrads),
    /// accumulated scale/shift gradients for batch norm
    Bn {
        scale: Array2<f64>,
        shift: Array2<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct BackboneGrads {
    pub layers: Vec<LayerGrads>,
    pub head: HeadGrads,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub normalizer: NormGrads,
    pub backbone: BackboneGrads,
}

/// Backward through head and layers. `d_logits` is the loss gradient w.r.t.
/// the head logits; `d_horizon` w.r.t. the softplus output of the joint
/// head. Returns the gradient w.r.t. the normalized input alongside the
/// parameter gradients.
pub fn backward_backbone(
    params: &ModelParams,
    cache: &BackboneCache,
    d_logits: &Array1<f64>,
    d_horizon: f64,
) -> Result<(BackboneGrads, Array2<f64>)> {
    if d_logits.len() != cache.head.logits.len() {
        return Err(shape_mismatch(
            format!("{} logits", cache.head.logits.len()),
            d_logits.len().to_string(),
        ));
    }
    let flat = &cache.head.flat;
    let (head_grads, d_flat) = match &params.head {
        HeadParams::Softmax { weight, .. } => {
            let mut dw = Array2::zeros(weight.dim());
            for (i, &g) in d_logits.iter().enumerate() {
                for (j, &f) in flat.iter().enumerate() {
                    dw[[i, j]] = g * f;
                }
            }
            let d_flat = weight.t().dot(d_logits);
            (
                HeadGrads::Softmax {
                    weight: dw,
                    bias: d_logits.clone(),
                },
                d_flat,
            )
        }
        HeadParams::Joint {
            dir_weight,
            reg_weight,
            ..
        } => {
            let mut dw = Array2::zeros(dir_weight.dim());
            for (i, &g) in d_logits.iter().enumerate() {
                for (j, &f) in flat.iter().enumerate() {
                    dw[[i, j]] = g * f;
                }
            }
            let mut d_flat = dir_weight.t().dot(d_logits);
            let pre = cache.head.reg_pre.expect("joint head cache");
            let d_pre = d_horizon * sigmoid(pre);
            let d_reg_weight = flat * d_pre;
            d_flat = d_flat + &(reg_weight * d_pre);
            (
                HeadGrads::Joint {
                    dir_weight: dw,
                    dir_bias: d_logits.clone(),
                    reg_weight: d_reg_weight,
                    reg_bias: d_pre,
                },
                d_flat,
            )
        }
    };

    let mut d_cur = Array2::from_shape_vec(cache.head.last_dims, d_flat.to_vec())
        .expect("flat length matches last layer dims");

    let mut layer_grads = Vec::with_capacity(params.layers.len());
    for (layer, lcache) in params.layers.iter().zip(&cache.layers).rev() {
        match (layer, lcache) {
            (LayerParams::Bilinear(p), LayerCache::Bilinear(c)) => {
                let g = bilinear_backward(c, p, &d_cur)?;
                d_cur = g.dx.clone();
                layer_grads.push(LayerGrads::Bilinear(g));
            }
            (LayerParams::Tabl(p), LayerCache::Tabl(c)) => {
                let g = tabl_backward(c, p, &d_cur)?;
                d_cur = g.dx.clone();
                layer_grads.push(LayerGrads::Tabl(g));
            }
            _ => return Err(Error::CheckpointMismatch("layer/cache kind mismatch".into())),
        }
    }
    layer_grads.reverse();
    Ok((
        BackboneGrads {
            layers: layer_grads,
            head: head_grads,
        },
        d_cur,
    ))
}

/// Applies the model's normalizer to one window. Batch normalization always
/// runs in eval mode on this single-sample path; the trainer owns the
/// batched train-mode path.
pub fn normalize_sample(
    params: &ModelParams,
    x: &TimeSeriesSample,
) -> Result<(TimeSeriesSample, NormCache)> {
    let (d, h) = (params.spec.input_features, params.spec.input_steps);
    if (x.features(), x.steps()) != (d, h) {
        return Err(shape_mismatch(
            format!("{d}x{h}"),
            format!("{}x{}", x.features(), x.steps()),
        ));
    }
    match &params.normalizer {
        NormalizerParams::None => Ok((x.clone(), NormCache::Passthrough)),
        NormalizerParams::Static(s) => Ok((apply_static(s, x)?, NormCache::Passthrough)),
        NormalizerParams::Bin(p) => {
            let (y, c) = bin_forward(x, p)?;
            Ok((y, NormCache::Bin(c)))
        }
        NormalizerParams::Dain(p) => {
            let (y, c) = dain_forward(x, p)?;
            Ok((y, NormCache::Dain(c)))
        }
        NormalizerParams::Bn(p) => {
            let mut eval = p.clone();
            eval.mode = BnMode::Eval;
            let (mut ys, mut cache) = bn_input_forward(std::slice::from_ref(x), &mut eval)?;
            Ok((
                ys.pop().expect("one output"),
                NormCache::BnEval {
                    xhat: cache.normalized.pop().expect("one cache entry"),
                },
            ))
        }
    }
}

/// Full single-sample forward: normalizer, backbone, head.
pub fn model_forward(
    params: &ModelParams,
    x: &TimeSeriesSample,
) -> Result<(Prediction, ModelCache)> {
    let (normalized, norm) = normalize_sample(params, x)?;
    let (pred, backbone) = forward_backbone(params, &normalized)?;
    Ok((
        pred,
        ModelCache {
            normalized,
            norm,
            backbone,
        },
    ))
}

/// Full single-sample backward; returns the parameter gradients and the
/// gradient w.r.t. the raw input. Learnable normalizers backpropagate
/// through their statistics; static and eval-mode batch normalizers scale
/// the input gradient by their fixed slope.
pub fn model_backward(
    params: &ModelParams,
    cache: &ModelCache,
    d_logits: &Array1<f64>,
    d_horizon: f64,
) -> Result<(ModelGrads, Array2<f64>)> {
    let (backbone, d_norm_out) = backward_backbone(params, &cache.backbone, d_logits, d_horizon)?;
    let (normalizer, dx) = match (&params.normalizer, &cache.norm) {
        (NormalizerParams::None, NormCache::Passthrough) => (NormGrads::None, d_norm_out),
        (NormalizerParams::Static(s), NormCache::Passthrough) => {
            let dx = match s.kind {
                StaticKind::None => d_norm_out,
                StaticKind::Zscore => {
                    let mut dx = d_norm_out;
                    for (r, mut row) in dx.outer_iter_mut().enumerate() {
                        let denom = s.spread()[r] + crate::sample::STATIC_EPS;
                        row.mapv_inplace(|v| v / denom);
                    }
                    dx
                }
                StaticKind::Minmax => {
                    let mut dx = d_norm_out;
                    for (r, mut row) in dx.outer_iter_mut().enumerate() {
                        let denom = s.spread()[r] - s.loc()[r] + crate::sample::STATIC_EPS;
                        row.mapv_inplace(|v| v / denom);
                    }
                    dx
                }
            };
            (NormGrads::None, dx)
        }
        (NormalizerParams::Bin(p), NormCache::Bin(c)) => {
            let g = bin_backward(c, p, &d_norm_out)?;
            let dx = g.dx.clone();
            (NormGrads::Bin(g), dx)
        }
        (NormalizerParams::Dain(p), NormCache::Dain(c)) => {
            let g = dain_backward(c, p, &d_norm_out)?;
            let dx = g.dx.clone();
            (NormGrads::Dain(g), dx)
        }
        (NormalizerParams::Bn(p), NormCache::BnEval { xhat }) => {
            let inv_std = p.running_var.mapv(|v| 1.0 / (v + crate::norm::NORM_EPS).sqrt());
            let d_scale = &d_norm_out * xhat;
            let d_shift = d_norm_out.clone();
            let dx = &d_norm_out * &p.scale * &inv_std;
            (
                NormGrads::Bn {
                    scale: d_scale,
                    shift: d_shift,
                },
                dx,
            )
        }
        _ => return Err(Error::CheckpointMismatch("normalizer/cache mismatch".into())),
    };
    Ok((
        ModelGrads {
            normalizer,
            backbone,
        },
        dx,
    ))
}

// ---------------------------------------------------------------------------
// parameter slots
// ---------------------------------------------------------------------------

/// How the trainer treats a tensor: weight decay and max-norm apply only to
/// `Weight`; the remaining kinds select projections or learning-rate groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// backbone/head weight matrix: decayed, max-norm constrained
    Weight,
    Bias,
    /// normalizer scale/shift vectors
    NormScaleShift,
    /// blend weights of the bilinear normalizer: clamped to be non-negative
    BinBlend,
    /// attention mixing matrix: fixed diagonal restored after each step
    AttnMix,
    /// attention blend scalar: clamped to [0, 1]
    AttnBlend,
    DainShift,
    DainScale,
    DainGate,
}

pub struct SlotMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

pub struct SlotRef<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

fn arr2_slot_mut<'a>(name: String, kind: ParamKind, a: &'a mut Array2<f64>) -> SlotMut<'a> {
    let (rows, cols) = a.dim();
    SlotMut {
        name,
        kind,
        rows,
        cols,
        data: a.as_slice_mut().expect("standard layout"),
    }
}

fn arr1_slot_mut<'a>(name: String, kind: ParamKind, a: &'a mut Array1<f64>) -> SlotMut<'a> {
    let rows = 1;
    let cols = a.len();
    SlotMut {
        name,
        kind,
        rows,
        cols,
        data: a.as_slice_mut().expect("standard layout"),
    }
}

fn scalar_slot_mut<'a>(name: String, kind: ParamKind, v: &'a mut f64) -> SlotMut<'a> {
    SlotMut {
        name,
        kind,
        rows: 1,
        cols: 1,
        data: std::slice::from_mut(v),
    }
}

fn arr2_slot<'a>(name: String, kind: ParamKind, a: &'a Array2<f64>) -> SlotRef<'a> {
    SlotRef {
        name,
        kind,
        data: a.as_slice().expect("standard layout"),
    }
}

fn arr1_slot<'a>(name: String, kind: ParamKind, a: &'a Array1<f64>) -> SlotRef<'a> {
    SlotRef {
        name,
        kind,
        data: a.as_slice().expect("standard layout"),
    }
}

fn scalar_slot<'a>(name: String, kind: ParamKind, v: &'a f64) -> SlotRef<'a> {
    SlotRef {
        name,
        kind,
        data: std::slice::from_ref(v),
    }
}

impl ModelParams {
    /// Every trainable tensor in a stable order. Running statistics of the
    /// batch normalizer and static-normalizer statistics are not trainable
    /// and do not appear.
    pub fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        let mut slots = Vec::new();
        match &mut self.normalizer {
            NormalizerParams::None | NormalizerParams::Static(_) => {}
            NormalizerParams::Bin(p) => {
                slots.push(arr1_slot_mut(
                    "norm.temporal_scale".into(),
                    ParamKind::NormScaleShift,
                    &mut p.temporal_scale,
                ));
                slots.push(arr1_slot_mut(
                    "norm.temporal_shift".into(),
                    ParamKind::NormScaleShift,
                    &mut p.temporal_shift,
                ));
                slots.push(arr1_slot_mut(
                    "norm.feature_scale".into(),
                    ParamKind::NormScaleShift,
                    &mut p.feature_scale,
                ));
                slots.push(arr1_slot_mut(
                    "norm.feature_shift".into(),
                    ParamKind::NormScaleShift,
                    &mut p.feature_shift,
                ));
                slots.push(scalar_slot_mut(
                    "norm.temporal_weight".into(),
                    ParamKind::BinBlend,
                    &mut p.temporal_weight,
                ));
                slots.push(scalar_slot_mut(
                    "norm.feature_weight".into(),
                    ParamKind::BinBlend,
                    &mut p.feature_weight,
                ));
            }
            NormalizerParams::Dain(p) => {
                slots.push(arr2_slot_mut(
                    "norm.shift_weight".into(),
                    ParamKind::DainShift,
                    &mut p.shift_weight,
                ));
                slots.push(arr2_slot_mut(
                    "norm.scale_weight".into(),
                    ParamKind::DainScale,
                    &mut p.scale_weight,
                ));
                slots.push(arr2_slot_mut(
                    "norm.gate_weight".into(),
                    ParamKind::DainGate,
                    &mut p.gate_weight,
                ));
                slots.push(arr1_slot_mut(
                    "norm.gate_bias".into(),
                    ParamKind::DainGate,
                    &mut p.gate_bias,
                ));
            }
            NormalizerParams::Bn(p) => {
                slots.push(arr2_slot_mut(
                    "norm.scale".into(),
                    ParamKind::NormScaleShift,
                    &mut p.scale,
                ));
                slots.push(arr2_slot_mut(
                    "norm.shift".into(),
                    ParamKind::NormScaleShift,
                    &mut p.shift,
                ));
            }
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                LayerParams::Bilinear(p) => {
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.left"),
                        ParamKind::Weight,
                        &mut p.left,
                    ));
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.right"),
                        ParamKind::Weight,
                        &mut p.right,
                    ));
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.bias"),
                        ParamKind::Bias,
                        &mut p.bias,
                    ));
                }
                LayerParams::Tabl(p) => {
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.left"),
                        ParamKind::Weight,
                        &mut p.left,
                    ));
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.mix"),
                        ParamKind::AttnMix,
                        &mut p.mix,
                    ));
                    slots.push(scalar_slot_mut(
                        format!("layer{i}.blend"),
                        ParamKind::AttnBlend,
                        &mut p.blend,
                    ));
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.right"),
                        ParamKind::Weight,
                        &mut p.right,
                    ));
                    slots.push(arr2_slot_mut(
                        format!("layer{i}.bias"),
                        ParamKind::Bias,
                        &mut p.bias,
                    ));
                }
            }
        }
        match &mut self.head {
            HeadParams::Softmax { weight, bias } => {
                slots.push(arr2_slot_mut("head.weight".into(), ParamKind::Weight, weight));
                slots.push(arr1_slot_mut("head.bias".into(), ParamKind::Bias, bias));
            }
            HeadParams::Joint {
                dir_weight,
                dir_bias,
                reg_weight,
                reg_bias,
            } => {
                slots.push(arr2_slot_mut(
                    "head.dir_weight".into(),
                    ParamKind::Weight,
                    dir_weight,
                ));
                slots.push(arr1_slot_mut("head.dir_bias".into(), ParamKind::Bias, dir_bias));
                slots.push(arr1_slot_mut(
                    "head.reg_weight".into(),
                    ParamKind::Weight,
                    reg_weight,
                ));
                slots.push(scalar_slot_mut("head.reg_bias".into(), ParamKind::Bias, reg_bias));
            }
        }
        slots
    }
}

impl ModelGrads {
    /// Grad tensors in the same order and with the same names as
    /// [`ModelParams::slots_mut`].
    pub fn slots(&self) -> Vec<SlotRef<'_>> {
        let mut slots = Vec::new();
        match &self.normalizer {
            NormGrads::None => {}
            NormGrads::Bin(g) => {
                slots.push(arr1_slot(
                    "norm.temporal_scale".into(),
                    ParamKind::NormScaleShift,
                    &g.temporal_scale,
                ));
                slots.push(arr1_slot(
                    "norm.temporal_shift".into(),
                    ParamKind::NormScaleShift,
                    &g.temporal_shift,
                ));
                slots.push(arr1_slot(
                    "norm.feature_scale".into(),
                    ParamKind::NormScaleShift,
                    &g.feature_scale,
                ));
                slots.push(arr1_slot(
                    "norm.feature_shift".into(),
                    ParamKind::NormScaleShift,
                    &g.feature_shift,
                ));
                slots.push(scalar_slot(
                    "norm.temporal_weight".into(),
                    ParamKind::BinBlend,
                    &g.temporal_weight,
                ));
                slots.push(scalar_slot(
                    "norm.feature_weight".into(),
                    ParamKind::BinBlend,
                    &g.feature_weight,
                ));
            }
            NormGrads::Dain(g) => {
                slots.push(arr2_slot(
                    "norm.shift_weight".into(),
                    ParamKind::DainShift,
                    &g.shift_weight,
                ));
                slots.push(arr2_slot(
                    "norm.scale_weight".into(),
                    ParamKind::DainScale,
                    &g.scale_weight,
                ));
                slots.push(arr2_slot(
                    "norm.gate_weight".into(),
                    ParamKind::DainGate,
                    &g.gate_weight,
                ));
                slots.push(arr1_slot(
                    "norm.gate_bias".into(),
                    ParamKind::DainGate,
                    &g.gate_bias,
                ));
            }
            NormGrads::Bn { scale, shift } => {
                slots.push(arr2_slot("norm.scale".into(), ParamKind::NormScaleShift, scale));
                slots.push(arr2_slot("norm.shift".into(), ParamKind::NormScaleShift, shift));
            }
        }
        for (i, layer) in self.backbone.layers.iter().enumerate() {
            match layer {
                LayerGrads::Bilinear(g) => {
                    slots.push(arr2_slot(format!("layer{i}.left"), ParamKind::Weight, &g.left));
                    slots.push(arr2_slot(format!("layer{i}.right"), ParamKind::Weight, &g.right));
                    slots.push(arr2_slot(format!("layer{i}.bias"), ParamKind::Bias, &g.bias));
                }
                LayerGrads::Tabl(g) => {
                    slots.push(arr2_slot(format!("layer{i}.left"), ParamKind::Weight, &g.left));
                    slots.push(arr2_slot(format!("layer{i}.mix"), ParamKind::AttnMix, &g.mix));
                    slots.push(scalar_slot(
                        format!("layer{i}.blend"),
                        ParamKind::AttnBlend,
                        &g.blend,
                    ));
                    slots.push(arr2_slot(format!("layer{i}.right"), ParamKind::Weight, &g.right));
                    slots.push(arr2_slot(format!("layer{i}.bias"), ParamKind::Bias, &g.bias));
                }
            }
        }
        match &self.backbone.head {
            HeadGrads::Softmax { weight, bias } => {
                slots.push(arr2_slot("head.weight".into(), ParamKind::Weight, weight));
                slots.push(arr1_slot("head.bias".into(), ParamKind::Bias, bias));
            }
            HeadGrads::Joint {
                dir_weight,
                dir_bias,
                reg_weight,
                reg_bias,
            } => {
                slots.push(arr2_slot("head.dir_weight".into(), ParamKind::Weight, dir_weight));
                slots.push(arr1_slot("head.dir_bias".into(), ParamKind::Bias, dir_bias));
                slots.push(arr1_slot("head.reg_weight".into(), ParamKind::Weight, reg_weight));
                slots.push(scalar_slot("head.reg_bias".into(), ParamKind::Bias, reg_bias));
            }
        }
        slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::TimeSeriesSample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng, d: usize, h: usize) -> TimeSeriesSample {
        TimeSeriesSample::new(Array2::from_shape_fn((d, h), |_| rng.random_range(-2.0..2.0)))
            .unwrap()
    }

    #[test]
    fn default_shape_parameter_counts_match_shape_walk() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // frozen from tools/reference_oracle.py
        let two = ModelParams::init(
            &ModelSpec::two_hidden(40, 10, NormalizerKind::Bin, HeadKind::Softmax3),
            &mut rng,
        )
        .unwrap();
        assert_eq!(two.backbone_head_param_count(), 12844);
        assert_eq!(two.normalizer.param_count(), 102);

        let one = ModelParams::init(
            &ModelSpec::one_hidden(40, 10, NormalizerKind::None, HeadKind::Softmax3),
            &mut rng,
        )
        .unwrap();
        assert_eq!(one.backbone_head_param_count(), 7344);

        let joint = ModelParams::init(
            &ModelSpec::one_hidden(40, 10, NormalizerKind::Dain, HeadKind::DirectionAndHorizon),
            &mut rng,
        )
        .unwrap();
        assert_eq!(joint.backbone_head_param_count(), 7344);
        assert_eq!(joint.normalizer.param_count(), 4840);

        let bn = ModelParams::init(
            &ModelSpec::one_hidden(40, 10, NormalizerKind::Bn, HeadKind::Softmax3),
            &mut rng,
        )
        .unwrap();
        assert_eq!(bn.normalizer.param_count(), 800);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = ModelSpec::two_hidden(5, 6, NormalizerKind::Bin, HeadKind::Softmax3);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        for _ in 0..20 {
            let x = random_sample(&mut rng, 5, 6);
            let (pred, _) = model_forward(&params, &x).unwrap();
            let sum: f64 = pred.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_pure_and_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModelSpec::one_hidden(4, 6, NormalizerKind::Dain, HeadKind::Softmax3);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        let x = random_sample(&mut rng, 4, 6);
        let (a, _) = model_forward(&params, &x).unwrap();
        let (b, _) = model_forward(&params, &x).unwrap();
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn softmax_is_translation_invariant() {
        let logits = Array1::from_vec(vec![0.3, -1.2, 2.4]);
        let shifted = &logits + 17.5;
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unfitted_static_normalizer_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ModelSpec::one_hidden(4, 6, NormalizerKind::Zscore, HeadKind::Softmax3);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        let x = random_sample(&mut rng, 4, 6);
        assert!(matches!(model_forward(&params, &x), Err(Error::Unfitted)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = ModelSpec::one_hidden(4, 6, NormalizerKind::None, HeadKind::Softmax3);
        let params = ModelParams::init(&spec, &mut rng).unwrap();
        let x = random_sample(&mut rng, 3, 6);
        assert!(matches!(
            model_forward(&params, &x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn grad_slots_mirror_param_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in [
            ModelSpec::two_hidden(4, 6, NormalizerKind::Bin, HeadKind::Softmax3),
            ModelSpec::one_hidden(4, 6, NormalizerKind::Dain, HeadKind::DirectionAndHorizon),
            ModelSpec::one_hidden(4, 6, NormalizerKind::Bn, HeadKind::Softmax3),
        ] {
            let mut params = ModelParams::init(&spec, &mut rng).unwrap();
            let x = random_sample(&mut rng, 4, 6);
            let (pred, cache) = model_forward(&params, &x).unwrap();
            let k = pred.probs.len();
            let d_logits = Array1::from_vec((0..k).map(|i| i as f64 - 0.5).collect());
            let (grads, _) = model_backward(&params, &cache, &d_logits, 0.25).unwrap();
            let pslots = params.slots_mut();
            let gslots = grads.slots();
            assert_eq!(pslots.len(), gslots.len());
            for (p, g) in pslots.iter().zip(gslots.iter()) {
                assert_eq!(p.name, g.name);
                assert_eq!(p.kind, g.kind);
                assert_eq!(p.data.len(), g.data.len());
            }
        }
    }
}
