use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_GRID_NODES: usize = 16;

/// Equally spaced integration nodes `lo = x₀ < … < x_{m−1} = hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, m: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidParameter(format!("grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if m < MIN_GRID_NODES {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least {MIN_GRID_NODES} nodes, got {m}"
            )));
        }
        Ok(Grid { lo, hi, m })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.m - 1) as f64
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.m {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |j| self.node(j))
    }

    /// Trapezoid weight of node `j`.
    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.m {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }

    /// Range of node indices covering every node strictly within
    /// `half_width` of `center`; it may include one extra node at each end.
    pub fn window(&self, center: f64, half_width: f64) -> Range<usize> {
        let dx = self.spacing();
        let first = ((center - half_width - self.lo) / dx).floor() as isize;
        let last = ((center + half_width - self.lo) / dx).ceil() as isize + 1;
        let first = first.clamp(0, self.m as isize) as usize;
        let last = last.clamp(0, self.m as isize) as usize;
        first..last.max(first)
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.m);
        values.iter().enumerate().map(|(j, v)| self.weight(j) * v).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Trapezoid rule over arbitrary increasing abscissae.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1.0, 1.0, 20).is_err());
        assert!(Grid::new(0.0, 1.0, 15).is_err());
        assert!(Grid::new(0.0, f64::NAN, 20).is_err());
    }

    #[test]
    fn endpoints_exact() {
        let g = Grid::new(-0.3, 7.1, 101).unwrap();
        assert_eq!(g.node(0), -0.3);
        assert_eq!(g.node(100), 7.1);
        assert_eq!(g.nodes().count(), 101);
    }

    #[test]
    fn trapezoid_is_exact_for_lines() {
        let g = Grid::new(0.0, 2.0, 17).unwrap();
        let v: Vec<f64> = g.nodes().map(|x| 3.0 * x + 1.0).collect();
        assert!((g.trapezoid(&v) - 8.0).abs() < 1e-12);
        let xs = [0.0, 0.5, 1.7, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&xs, &ys) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn window_matches_brute_force() {
        let g = Grid::new(-2.0, 5.0, 64).unwrap();
        for &(c, w) in &[(0.0, 0.3), (-2.5, 1.0), (4.9, 0.7), (1.234, 2.0), (9.0, 1.0), (-9.0, 1.0)] {
            let brute: Vec<usize> = (0..g.m).filter(|&j| (g.node(j) - c).abs() < w).collect();
            let fast: Vec<usize> = g.window(c, w).filter(|&j| (g.node(j) - c).abs() < w).collect();
            assert_eq!(brute, fast, "center {c}, width {w}");
        }
    }
}
