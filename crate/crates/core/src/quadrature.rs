//! Composite midpoint rule in the horizontal coordinate.

use serde::{Deserialize, Serialize};

use crate::cost::Interval;

/// `n` uniform columns on an interval, sampled at their midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Midpoint {
    pub interval: Interval,
    pub n: usize,
}

impl Midpoint {
    pub const RULE_ID: &'static str = "composite-midpoint";

    pub fn new(interval: Interval, n: usize) -> Self {
        assert!(n > 0, "midpoint rule needs at least one column");
        Midpoint { interval, n }
    }

    /// Column width.
    pub fn width(&self) -> f64 {
        self.interval.len() / self.n as f64
    }

    /// Midpoint of column `k`.
    pub fn node(&self, k: usize) -> f64 {
        self.interval.lo + (k as f64 + 0.5) * self.width()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.node(k))
    }

    /// Index of the column containing `s` (clamped to the valid range).
    pub fn column_of(&self, s: f64) -> usize {
        let k = ((s - self.interval.lo) / self.width()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 1)
        }
    }

    /// Midpoint approximation of `∫ f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.width() * self.nodes().map(f).sum::<f64>()
    }
}
