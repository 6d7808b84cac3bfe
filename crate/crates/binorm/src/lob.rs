//! Limit-order-book events, mid-price computation, and movement labeling for
//! both experiment settings.
//!
//! Labels follow the smoothed forward-return rule: the mean of the next `k`
//! mid-prices is compared to a reference price, and the relative return is
//! thresholded. The reference is the current price by default; the
//! backward-mean variant used by parts of the benchmark literature is
//! available behind [`LabelReference::BackwardMean`]. Ties (`|return| ==
//! threshold`) are stationary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One order-book snapshot: price/volume per level on both sides, best
/// quotes at index 0. Sides may expose different depths.
#[derive(Debug, Clone, PartialEq)]
pub struct LobEvent {
    pub ask_prices: Vec<f64>,
    pub ask_volumes: Vec<f64>,
    pub bid_prices: Vec<f64>,
    pub bid_volumes: Vec<f64>,
    pub timestamp: Option<f64>,
}

impl LobEvent {
    /// Validates the book structure: positive prices, non-negative volumes,
    /// asks non-decreasing and bids non-increasing across levels, and a
    /// non-crossed best quote pair.
    pub fn new(
        ask_prices: Vec<f64>,
        ask_volumes: Vec<f64>,
        bid_prices: Vec<f64>,
        bid_volumes: Vec<f64>,
        timestamp: Option<f64>,
    ) -> Result<Self> {
        if ask_prices.len() != ask_volumes.len() || bid_prices.len() != bid_volumes.len() {
            return Err(Error::InvalidEvent(
                "price and volume level counts differ".into(),
            ));
        }
        for p in ask_prices.iter().chain(bid_prices.iter()) {
            if !p.is_finite() || *p <= 0.0 {
                return Err(Error::InvalidEvent(format!("non-positive price {p}")));
            }
        }
        for v in ask_volumes.iter().chain(bid_volumes.iter()) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidEvent(format!("negative volume {v}")));
            }
        }
        if ask_prices.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidEvent("ask prices decrease across levels".into()));
        }
        if bid_prices.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidEvent("bid prices increase across levels".into()));
        }
        if let (Some(&a), Some(&b)) = (ask_prices.first(), bid_prices.first()) {
            if a < b {
                return Err(Error::InvalidEvent(format!(
                    "crossed book: best ask {a} below best bid {b}"
                )));
            }
        }
        Ok(Self {
            ask_prices,
            ask_volumes,
            bid_prices,
            bid_volumes,
            timestamp,
        })
    }

    /// `(best bid + best ask) / 2`; requires both level-1 quotes.
    pub fn mid_price(&self) -> Result<f64> {
        let ask = *self
            .ask_prices
            .first()
            .ok_or(Error::MissingQuote { side: "ask" })?;
        let bid = *self
            .bid_prices
            .first()
            .ok_or(Error::MissingQuote { side: "bid" })?;
        Ok((bid + ask) / 2.0)
    }
}

/// Mid-price on decimal-scaled integers: prices are rounded to the tick grid
/// first, so e.g. `(100.02 + 100.08) / 2` comes out as the double nearest to
/// the exact decimal `100.05` instead of accumulating representation error.
pub fn mid_price_scaled(bid: f64, ask: f64, tick_scale: f64) -> f64 {
    let b = (bid * tick_scale).round();
    let a = (ask * tick_scale).round();
    (b + a) / (2.0 * tick_scale)
}

/// Which price the smoothed forward mean is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelReference {
    /// relative to the current mid-price
    #[default]
    LastPrice,
    /// relative to the mean of the trailing window (benchmark variant)
    BackwardMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    /// prediction horizon `k` in order events
    pub horizon: usize,
    /// relative-return threshold
    pub threshold: f64,
    /// smoothing window for the next-move scan
    pub smoothing: usize,
    /// scan cap for the next-move target
    pub max_horizon: usize,
    pub reference: LabelReference,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            threshold: 1e-5,
            smoothing: 10,
            max_horizon: 1000,
            reference: LabelReference::LastPrice,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.smoothing == 0 || self.max_horizon == 0 {
            return Err(Error::Config("label windows must be positive".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Config("label threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-horizon movement class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Up,
    Stationary,
    Down,
}

impl Movement {
    pub fn class(self) -> usize {
        match self {
            Movement::Up => 0,
            Movement::Stationary => 1,
            Movement::Down => 2,
        }
    }

    pub fn from_class(c: usize) -> Option<Self> {
        match c {
            0 => Some(Movement::Up),
            1 => Some(Movement::Stationary),
            2 => Some(Movement::Down),
            _ => None,
        }
    }
}

/// Direction of the next move (never stationary).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn class(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
        }
    }

    pub fn from_class(c: usize) -> Option<Self> {
        match c {
            0 => Some(Direction::Up),
            1 => Some(Direction::Down),
            _ => None,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Reference price at `t` for a smoothing window of `w` events; `None` when
/// the trailing window does not fit.
fn reference_price(mids: &[f64], t: usize, w: usize, reference: LabelReference) -> Option<f64> {
    match reference {
        LabelReference::LastPrice => Some(mids[t]),
        LabelReference::BackwardMean => {
            if t + 1 < w {
                None
            } else {
                Some(mean(&mids[t + 1 - w..=t]))
            }
        }
    }
}

/// Smoothed relative return `k` events ahead of `t`; `None` when the future
/// (or the trailing reference window) does not fit.
pub fn smoothed_return(mids: &[f64], t: usize, k: usize, cfg: &LabelConfig) -> Option<f64> {
    if t + k >= mids.len() {
        return None;
    }
    let forward = mean(&mids[t + 1..=t + k]);
    let reference = reference_price(mids, t, k, cfg.reference)?;
    Some((forward - reference) / reference)
}

/// Fixed-horizon three-way label at index `t`; `None` drops the sample when
/// fewer than `cfg.horizon` future events exist.
pub fn label_movement(mids: &[f64], t: usize, cfg: &LabelConfig) -> Option<Movement> {
    let ret = smoothed_return(mids, t, cfg.horizon, cfg)?;
    Some(if ret > cfg.threshold {
        Movement::Up
    } else if ret < -cfg.threshold {
        Movement::Down
    } else {
        Movement::Stationary
    })
}

/// Scans forward from `t` for the first smoothed return whose magnitude
/// crosses the threshold, up to `cfg.max_horizon` events ahead. The smoothed
/// price at scan step `j` is the mean of the up-to-`cfg.smoothing` most
/// recent future mids ending at `t + j`. `None` drops the sample.
pub fn label_next_move(mids: &[f64], t: usize, cfg: &LabelConfig) -> Option<(Direction, usize)> {
    let reference = reference_price(mids, t, cfg.smoothing, cfg.reference)?;
    for j in 1..=cfg.max_horizon {
        if t + j >= mids.len() {
            return None;
        }
        let lo = t + 1 + j.saturating_sub(cfg.smoothing);
        let smoothed = mean(&mids[lo..=t + j]);
        let ret = (smoothed - reference) / reference;
        if ret > cfg.threshold {
            return Some((Direction::Up, j));
        }
        if ret < -cfg.threshold {
            return Some((Direction::Down, j));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, alpha: f64) -> LabelConfig {
        LabelConfig {
            horizon: k,
            threshold: alpha,
            ..LabelConfig::default()
        }
    }

    #[test]
    fn mid_price_basic() {
        let e = LobEvent::new(vec![12.0], vec![1.0], vec![10.0], vec![1.0], None).unwrap();
        assert_eq!(e.mid_price().unwrap(), 11.0);
    }

    #[test]
    fn mid_price_touching_quotes() {
        let e = LobEvent::new(vec![10.0], vec![1.0], vec![10.0], vec![2.0], None).unwrap();
        assert_eq!(e.mid_price().unwrap(), 10.0);
    }

    #[test]
    fn mid_price_missing_level_one() {
        let e = LobEvent::new(vec![], vec![], vec![10.0], vec![1.0], None).unwrap();
        assert!(matches!(e.mid_price(), Err(Error::MissingQuote { side: "ask" })));
    }

    #[test]
    fn mid_price_scaled_is_exact_on_the_tick_grid() {
        let mid = mid_price_scaled(100.02, 100.08, 100.0);
        assert_eq!(mid, 100.05);
    }

    #[test]
    fn event_invariants_enforced() {
        assert!(LobEvent::new(vec![9.0], vec![1.0], vec![10.0], vec![1.0], None).is_err());
        assert!(LobEvent::new(vec![10.0, 9.5], vec![1.0; 2], vec![8.0], vec![1.0], None).is_err());
        assert!(LobEvent::new(vec![10.0], vec![-1.0], vec![8.0], vec![1.0], None).is_err());
        assert!(LobEvent::new(vec![0.0], vec![1.0], vec![], vec![], None).is_err());
        assert!(
            LobEvent::new(vec![10.0, 10.5], vec![1.0; 2], vec![9.0, 8.5], vec![1.0; 2], None)
                .is_ok()
        );
    }

    #[test]
    fn movement_up_example() {
        // forward mean (100.2 + 100.4)/2 = 100.3, return 0.003 > 1e-5
        let mids = [100.0, 100.2, 100.4];
        let m = label_movement(&mids, 0, &cfg(2, 1e-5)).unwrap();
        assert_eq!(m, Movement::Up);
    }

    #[test]
    fn movement_constant_future_is_stationary() {
        let mids = [100.0, 100.0, 100.0, 100.0];
        let m = label_movement(&mids, 0, &cfg(3, 1e-9)).unwrap();
        assert_eq!(m, Movement::Stationary);
    }

    #[test]
    fn movement_exact_threshold_is_stationary() {
        // forward mean exactly p * (1 + alpha): strict inequality keeps it stationary
        let alpha = 0.5;
        let p = 100.0;
        let mids = [p, p * (1.0 + alpha)];
        let m = label_movement(&mids, 0, &cfg(1, alpha)).unwrap();
        assert_eq!(m, Movement::Stationary);
    }

    #[test]
    fn movement_insufficient_future_drops() {
        let mids = [100.0, 100.4];
        assert!(label_movement(&mids, 0, &cfg(2, 1e-5)).is_none());
    }

    #[test]
    fn movement_is_scale_invariant() {
        let mids = [100.0, 100.3, 100.1, 99.8, 100.9, 99.5, 100.2];
        let c = cfg(3, 1e-4);
        for t in 0..4 {
            let base = label_movement(&mids, t, &c);
            for scale in [0.01, 3.7, 1000.0] {
                let scaled: Vec<f64> = mids.iter().map(|p| p * scale).collect();
                assert_eq!(label_movement(&scaled, t, &c), base);
            }
        }
    }

    #[test]
    fn next_move_crossing_at_three() {
        // constructed so the smoothed return first crosses at j = 3
        let c = LabelConfig {
            horizon: 1,
            threshold: 1e-3,
            smoothing: 2,
            max_horizon: 10,
            reference: LabelReference::LastPrice,
        };
        let mids = [100.0, 100.05, 100.1, 100.2, 100.5, 100.9];
        // j=1: mean(100.05)         -> ret 0.0005  (no)
        // j=2: mean(100.05,100.1)   -> ret 0.00075 (no)
        // j=3: mean(100.1,100.2)    -> ret 0.0015  (up)
        let (dir, j) = label_next_move(&mids, 0, &c).unwrap();
        assert_eq!(dir, Direction::Up);
        assert_eq!(j, 3);
    }

    #[test]
    fn next_move_flat_sequence_drops() {
        let c = cfg(1, 1e-5);
        let mids = [100.0; 8];
        assert!(label_next_move(&mids, 0, &c).is_none());
    }

    #[test]
    fn next_move_immediate_drop() {
        let c = LabelConfig {
            smoothing: 1,
            ..cfg(1, 1e-5)
        };
        let mids = [100.0, 99.0, 99.0];
        let (dir, j) = label_next_move(&mids, 0, &c).unwrap();
        assert_eq!(dir, Direction::Down);
        assert_eq!(j, 1);
    }

    #[test]
    fn next_move_horizon_always_within_cap() {
        let c = LabelConfig {
            horizon: 1,
            threshold: 1e-5,
            smoothing: 3,
            max_horizon: 7,
            reference: LabelReference::LastPrice,
        };
        let mids: Vec<f64> = (0..40).map(|i| 100.0 + ((i * 37) % 11) as f64 * 0.01).collect();
        for t in 0..30 {
            if let Some((_, j)) = label_next_move(&mids, t, &c) {
                assert!(j >= 1 && j <= c.max_horizon);
            }
        }
    }

    #[test]
    fn backward_mean_reference_variant() {
        let c = LabelConfig {
            horizon: 2,
            threshold: 1e-5,
            smoothing: 2,
            max_horizon: 10,
            reference: LabelReference::BackwardMean,
        };
        let mids = [100.0, 102.0, 104.0, 106.0];
        // t=1: backward mean (100+102)/2 = 101, forward mean (104+106)/2 = 105
        let ret = smoothed_return(&mids, 1, 2, &c).unwrap();
        assert!((ret - (105.0 - 101.0) / 101.0).abs() < 1e-12);
        // trailing window does not fit at t=0
        assert!(smoothed_return(&mids, 0, 2, &c).is_none());
    }
}
