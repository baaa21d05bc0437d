//! Pool-adjacent-violators: the exact solver for least-squares isotonic
//! regression, plus the monotone step map it produces.

use serde::{Deserialize, Serialize};

/// Non-decreasing piecewise-constant map on `[0, 1]` (or any real line).
///
/// `breakpoints` are strictly increasing block start positions; a query
/// takes the value of the last block starting at or before it, and
/// out-of-range queries clamp to the nearest end value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl MonotoneMap {
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.breakpoints.binary_search_by(|b| b.total_cmp(&x)) {
            Ok(i) => self.values[i],
            Err(0) => self.values[0],
            Err(i) => self.values[i - 1],
        }
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Weighted least-squares isotonic fit of `(x, y, w)` points.
///
/// Points are sorted by `x` (stable), duplicates in `x` pre-pooled so the
/// result is a function of `x`, then adjacent violating blocks are merged
/// until the block means are non-decreasing.
pub fn fit(mut points: Vec<(f64, f64, f64)>) -> MonotoneMap {
    assert!(!points.is_empty(), "isotonic fit needs at least one point");
    points.sort_by(|a, b| a.0.total_cmp(&b.0));

    // (start x, weighted y sum, weight) per block.
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for (x, y, w) in points {
        if let Some(last) = blocks.last_mut() {
            if last.0 == x {
                last.1 += y * w;
                last.2 += w;
                continue;
            }
        }
        blocks.push((x, y * w, w));
    }

    let mut stack: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for block in blocks {
        stack.push(block);
        while stack.len() > 1 {
            let n = stack.len();
            let upper_mean = stack[n - 1].1 / stack[n - 1].2;
            let lower_mean = stack[n - 2].1 / stack[n - 2].2;
            if lower_mean <= upper_mean {
                break;
            }
            let (_, ys, ws) = stack.pop().unwrap();
            let last = stack.last_mut().unwrap();
            last.1 += ys;
            last.2 += ws;
        }
    }

    let breakpoints: Vec<f64> = stack.iter().map(|b| b.0).collect();
    let values: Vec<f64> = stack.iter().map(|b| b.1 / b.2).collect();
    MonotoneMap {
        breakpoints,
        values,
    }
}
