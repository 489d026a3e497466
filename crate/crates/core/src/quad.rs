//! Fourth-order quadrature and interpolation on uniform grids over [0,1].
//!
//! Each cell [x_m, x_{m+1}] is integrated exactly for the cubic through four
//! neighbouring samples: weights (-1, 13, 13, -1)/24 in the interior and the
//! one-sided (9, 19, -5, 1)/24 in the first and last cells.

use std::ops::{Add, Mul};

/// Uniform grid x_m = m/M, m = 0..=M.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub m: usize,
    pub h: f64,
    pub x: Vec<f64>,
}

impl Grid {
    pub fn uniform(m: usize) -> Self {
        assert!(m >= 4, "grid needs at least 4 cells, got {m}");
        let h = 1.0 / m as f64;
        let x = (0..=m).map(|i| i as f64 * h).collect();
        Grid { m, h, x }
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Weights of one cell integral, as (first sample index, four weights).
fn cell_weights(cell: usize, m: usize, h: f64) -> (usize, [f64; 4]) {
    let s = h / 24.0;
    if cell == 0 {
        (0, [9.0 * s, 19.0 * s, -5.0 * s, s])
    } else if cell == m - 1 {
        (m - 3, [s, -5.0 * s, 19.0 * s, 9.0 * s])
    } else {
        (cell - 1, [-s, 13.0 * s, 13.0 * s, -s])
    }
}

/// Anything that can be integrated: real or complex samples.
pub trait Sample: Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> {}
impl<T: Copy + Default + Add<Output = T> + Mul<f64, Output = T>> Sample for T {}

fn cell_integral<T: Sample>(f: &[T], cell: usize, m: usize, h: f64) -> T {
    let (start, w) = cell_weights(cell, m, h);
    f[start] * w[0] + f[start + 1] * w[1] + f[start + 2] * w[2] + f[start + 3] * w[3]
}

/// Running integral I_m = ∫_0^{x_m} f.
pub fn cumulative<T: Sample>(f: &[T], h: f64) -> Vec<T> {
    let m = f.len() - 1;
    let mut out = Vec::with_capacity(m + 1);
    let mut acc = T::default();
    out.push(acc);
    for cell in 0..m {
        acc = acc + cell_integral(f, cell, m, h);
        out.push(acc);
    }
    out
}

/// Tail integral T_m = ∫_{x_m}^1 f.
pub fn tail<T: Sample>(f: &[T], h: f64) -> Vec<T> {
    let m = f.len() - 1;
    let mut out = vec![T::default(); m + 1];
    let mut acc = T::default();
    for cell in (0..m).rev() {
        acc = acc + cell_integral(f, cell, m, h);
        out[cell] = acc;
    }
    out
}

/// ∫_0^1 f.
pub fn integrate<T: Sample>(f: &[T], h: f64) -> T {
    let m = f.len() - 1;
    (0..m).fold(T::default(), |acc, cell| acc + cell_integral(f, cell, m, h))
}

/// Node weights w with ∫_0^1 f ≈ Σ w_m f_m.
pub fn weights(m: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; m + 1];
    for cell in 0..m {
        let (start, cw) = cell_weights(cell, m, h);
        for (j, c) in cw.iter().enumerate() {
            w[start + j] += c;
        }
    }
    w
}

/// Cubic Lagrange interpolation of grid samples at an arbitrary x in [0,1].
pub fn interpolate<T: Sample>(f: &[T], h: f64, x: f64) -> T {
    let m = f.len() - 1;
    let s = (x / h).clamp(0.0, m as f64);
    let cell = (s.floor() as usize).min(m - 1);
    let start = cell.saturating_sub(1).min(m - 3);
    let t = s - start as f64;
    let mut acc = T::default();
    for j in 0..4 {
        let mut l = 1.0;
        for i in 0..4 {
            if i != j {
                l *= (t - i as f64) / (j as f64 - i as f64);
            }
        }
        acc = acc + f[start + j] * l;
    }
    acc
}

/// Fourth-order first derivative on the grid (centred inside, one-sided at the ends).
pub fn derivative<T: Sample>(f: &[T], h: f64) -> Vec<T> {
    let m = f.len() - 1;
    assert!(m >= 4);
    let c = 1.0 / (12.0 * h);
    let left = [[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0]];
    (0..=m)
        .map(|i| {
            if i >= 2 && i + 2 <= m {
                (f[i - 2] + f[i - 1] * -8.0 + f[i + 1] * 8.0 + f[i + 2] * -1.0) * c
            } else if i < 2 {
                (0..5).fold(T::default(), |acc, j| acc + f[j] * (left[i][j] * c))
            } else {
                let row = &left[m - i];
                (0..5).fold(T::default(), |acc, j| acc + f[m - j] * (-row[j] * c))
            }
        })
        .collect()
}

/// Fourth-order second derivative on the grid (centred inside, one-sided at the ends).
pub fn second_derivative<T: Sample>(f: &[T], h: f64) -> Vec<T> {
    let m = f.len() - 1;
    assert!(m >= 5);
    let c = 1.0 / (12.0 * h * h);
    let left = [
        [45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
        [10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
    ];
    (0..=m)
        .map(|i| {
            if i >= 2 && i + 2 <= m {
                (f[i - 2] * -1.0 + f[i - 1] * 16.0 + f[i] * -30.0 + f[i + 1] * 16.0 + f[i + 2] * -1.0) * c
            } else if i < 2 {
                (0..6).fold(T::default(), |acc, j| acc + f[j] * (left[i][j] * c))
            } else {
                let row = &left[m - i];
                (0..6).fold(T::default(), |acc, j| acc + f[m - j] * (row[j] * c))
            }
        })
        .collect()
}
