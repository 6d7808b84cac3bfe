//! Multivariate window samples, event streams, sliding-window extraction and
//! the static (non-learnable) normalizers.
//!
//! A sample is a dense `D x H` matrix: rows are features, columns are time
//! steps, the most recent event in the last column. Streams store events as
//! rows (`T x D`) and are transposed into windows on extraction.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};

/// Additive guard on denominators of the static normalizers so constant
/// features map to zero instead of NaN.
pub const STATIC_EPS: f64 = 1e-8;

/// One `D x H` multivariate window: `D` features observed over `H` time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesSample {
    data: Array2<f64>,
}

impl TimeSeriesSample {
    /// Wraps a `D x H` matrix, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(shape_mismatch(
                "at least 1x1",
                format!("{}x{}", data.nrows(), data.ncols()),
            ));
        }
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let h = rows.first().map_or(0, Vec::len);
        let mut m = Array2::zeros((d, h));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != h {
                return Err(shape_mismatch(format!("row length {h}"), row.len().to_string()));
            }
            for (j, &v) in row.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Self::new(m)
    }

    /// Number of features `D`.
    pub fn features(&self) -> usize {
        self.data.nrows()
    }

    /// Window length `H`.
    pub fn steps(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.data
    }
}

/// A chronological stream of `T` events, each a `D`-dimensional feature row.
///
/// Mid-prices and day boundaries are optional side channels filled in by the
/// loaders that know about them.
#[derive(Debug, Clone)]
pub struct SampleStream {
    pub data: Array2<f64>,
    pub timestamps: Option<Vec<f64>>,
    /// Mid-price per event, when the loader could derive one.
    pub mids: Option<Vec<f64>>,
    /// Start index of each trading day (or synthetic regime), ascending.
    pub day_starts: Option<Vec<usize>>,
}

impl SampleStream {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
        Ok(Self {
            data,
            timestamps: None,
            mids: None,
            day_starts: None,
        })
    }

    /// Number of events `T`.
    pub fn events(&self) -> usize {
        self.data.nrows()
    }

    /// Feature dimension `D`.
    pub fn features(&self) -> usize {
        self.data.ncols()
    }
}

/// Extracts `floor((T - H)/stride) + 1` windows of length `window`, each
/// transposed to `D x H` with the newest event in the last column.
pub fn sliding_windows(
    stream: &SampleStream,
    window: usize,
    stride: usize,
) -> Result<Vec<TimeSeriesSample>> {
    assert!(window >= 1 && stride >= 1, "window and stride must be positive");
    let t = stream.events();
    if t < window {
        return Err(Error::EmptyStream { rows: t, window });
    }
    let count = (t - window) / stride + 1;
    let d = stream.features();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        let block = stream.data.slice(ndarray::s![start..start + window, ..]);
        let mut m = Array2::zeros((d, window));
        for (h, row) in block.outer_iter().enumerate() {
            m.column_mut(h).assign(&row);
        }
        out.push(TimeSeriesSample::new(m)?);
    }
    Ok(out)
}

/// Which static scheme a [`StaticNormalizer`] implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StaticKind {
    Zscore,
    Minmax,
    None,
}

/// Per-feature statistics fitted on training windows and frozen afterwards.
///
/// `zscore` stores mean/std per feature, `minmax` stores min/max, `none` is
/// the identity. Statistics pool every time step of every training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticNormalizer {
    pub kind: StaticKind,
    /// mean (zscore) or min (minmax), length `D`
    loc: Array1<f64>,
    /// std (zscore) or max (minmax), length `D`
    spread: Array1<f64>,
    fitted: bool,
}

impl StaticNormalizer {
    pub fn unfitted(kind: StaticKind) -> Self {
        Self {
            kind,
            loc: Array1::zeros(0),
            spread: Array1::zeros(0),
            fitted: kind == StaticKind::None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Per-feature location statistic (mean or min).
    pub fn loc(&self) -> ArrayView1<'_, f64> {
        self.loc.view()
    }

    /// Per-feature spread statistic (std or max).
    pub fn spread(&self) -> ArrayView1<'_, f64> {
        self.spread.view()
    }
}

/// Fits the per-feature statistics of `kind` over all time steps of all
/// training samples.
pub fn fit_static(kind: StaticKind, train: &[TimeSeriesSample]) -> Result<StaticNormalizer> {
    if kind == StaticKind::None {
        return Ok(StaticNormalizer::unfitted(StaticKind::None));
    }
    let first = train.first().ok_or(Error::EmptyDataset)?;
    let d = first.features();
    for s in train {
        if s.features() != d {
            return Err(shape_mismatch(format!("{d} features"), s.features().to_string()));
        }
    }
    let (loc, spread) = match kind {
        StaticKind::Zscore => {
            let mut sum = Array1::<f64>::zeros(d);
            let mut count = 0usize;
            for s in train {
                sum += &s.matrix().sum_axis(Axis(1));
                count += s.steps();
            }
            let mean = sum / count as f64;
            let mut sq = Array1::<f64>::zeros(d);
            for s in train {
                for col in s.matrix().axis_iter(Axis(1)) {
                    let diff = &col.to_owned() - &mean;
                    sq += &(&diff * &diff);
                }
            }
            let std = (sq / count as f64).mapv(f64::sqrt);
            (mean, std)
        }
        StaticKind::Minmax => {
            let mut lo = Array1::from_elem(d, f64::INFINITY);
            let mut hi = Array1::from_elem(d, f64::NEG_INFINITY);
            for s in train {
                for ((r, _), &v) in s.matrix().indexed_iter() {
                    if v < lo[r] {
                        lo[r] = v;
                    }
                    if v > hi[r] {
                        hi[r] = v;
                    }
                }
            }
            (lo, hi)
        }
        StaticKind::None => unreachable!(),
    };
    Ok(StaticNormalizer {
        kind,
        loc,
        spread,
        fitted: true,
    })
}

/// Applies the fitted statistics to one sample. `none` is a bit-exact
/// identity; the other kinds guard their denominators with [`STATIC_EPS`].
pub fn apply_static(norm: &StaticNormalizer, sample: &TimeSeriesSample) -> Result<TimeSeriesSample> {
    if !norm.fitted {
        return Err(Error::Unfitted);
    }
    if norm.kind == StaticKind::None {
        return Ok(sample.clone());
    }
    let d = sample.features();
    if norm.loc.len() != d {
        return Err(shape_mismatch(
            format!("{} features", norm.loc.len()),
            d.to_string(),
        ));
    }
    let mut out = sample.matrix().clone();
    match norm.kind {
        StaticKind::Zscore => {
            for (r, mut row) in out.outer_iter_mut().enumerate() {
                let denom = norm.spread[r] + STATIC_EPS;
                row.mapv_inplace(|v| (v - norm.loc[r]) / denom);
            }
        }
        StaticKind::Minmax => {
            for (r, mut row) in out.outer_iter_mut().enumerate() {
                let denom = norm.spread[r] - norm.loc[r] + STATIC_EPS;
                row.mapv_inplace(|v| (v - norm.loc[r]) / denom);
            }
        }
        StaticKind::None => unreachable!(),
    }
    TimeSeriesSample::new(out)
}
