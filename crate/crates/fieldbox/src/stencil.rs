//! Finite-difference stencils.
//!
//! Interior rows use centered 6th-order weights (7 points for derivative
//! orders up to 2, 9 points for orders 3 and 4, where the extra width
//! keeps the order at 6). Rows within reach of a box face switch to the
//! one-sided stencil on the same number of points, so no row ever reads
//! outside the box. Weights come from Fornberg's recurrence.
//!
//! The one-sided BDF6 row is kept separately: it is the exact left
//! inverse of the causal ray march in `ray`, which is what makes
//! transport residuals collapse to roundoff.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::fft::map_lines_real;
use crate::grid::Grid;

/// Centered first-derivative weights, 7 points, spacing 1.
pub const W1: [f64; 7] = [
    -1.0 / 60.0,
    3.0 / 20.0,
    -3.0 / 4.0,
    0.0,
    3.0 / 4.0,
    -3.0 / 20.0,
    1.0 / 60.0,
];

/// Centered second-derivative weights, 7 points, spacing 1.
pub const W2: [f64; 7] = [
    1.0 / 90.0,
    -3.0 / 20.0,
    3.0 / 2.0,
    -49.0 / 18.0,
    3.0 / 2.0,
    -3.0 / 20.0,
    1.0 / 90.0,
];

/// Backward-differentiation (BDF6) first-derivative weights on the
/// current and six upstream nodes, spacing 1.
pub const BDF6_A: [f64; 7] = [
    49.0 / 20.0,
    -6.0,
    15.0 / 2.0,
    -20.0 / 3.0,
    15.0 / 4.0,
    -6.0 / 5.0,
    1.0 / 6.0,
];

/// Fornberg weights: c[j] such that f^(d)(x0) ~= sum_j c[j] f(a[j]).
pub fn fornberg(d: usize, a: &[f64], x0: f64) -> Vec<f64> {
    let n = a.len();
    assert!(n > d, "need more points than the derivative order");
    let mut c = vec![vec![0.0; d + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = a[0] - x0;
    for i in 1..n {
        let mn = i.min(d);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = a[i] - x0;
        for j in 0..i {
            let c3 = a[i] - a[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[d]).collect()
}

/// Per-row stencil table for one (line length, derivative order) pair.
pub struct StencilTable {
    /// first stencil node of each row
    pub start: Vec<usize>,
    /// weights per row, in units of spacing 1
    pub weights: Vec<Vec<f64>>,
    pub npts: usize,
}

fn stencil_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<StencilTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<StencilTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Build (or fetch) the table for lines of length n, derivative order d.
pub fn stencil_table(n: usize, d: usize) -> Arc<StencilTable> {
    assert!((1..=4).contains(&d), "derivative order must be 1..=4");
    let mut cache = stencil_cache().lock().unwrap();
    cache
        .entry((n, d))
        .or_insert_with(|| {
            let npts = if d <= 2 { 7 } else { 9 };
            assert!(n >= npts, "line too short for the stencil");
            let mut start = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for i in 0..n {
                let s = (i as isize - npts as isize / 2)
                    .clamp(0, (n - npts) as isize) as usize;
                let nodes: Vec<f64> = (0..npts).map(|j| (s + j) as f64).collect();
                start.push(s);
                weights.push(fornberg(d, &nodes, i as f64));
            }
            Arc::new(StencilTable { start, weights, npts })
        })
        .clone()
}

/// d-th derivative along `axis` with the closured centered stencil.
pub fn fd_axis(grid: Grid, values: &[f64], axis: usize, d: usize) -> Vec<f64> {
    let n = grid.n();
    let table = stencil_table(n, d);
    let hp = grid.h().powi(d as i32);
    map_lines_real(grid, values, axis, &move |line: &mut [f64]| {
        let src = line.to_vec();
        for i in 0..n {
            let s = table.start[i];
            let w = &table.weights[i];
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                acc += wj * src[s + j];
            }
            line[i] = acc / hp;
        }
    })
}

/// One-sided BDF6 derivative along the ray direction sign * e_axis.
/// Rows near the upstream face use the truncated stencil (equivalently:
/// the field is extended by zero upstream, which is exact for fields
/// that vanish there).
pub fn upwind_axis(grid: Grid, values: &[f64], axis: usize, sign: i32) -> Vec<f64> {
    let n = grid.n();
    let h = grid.h();
    let core = move |line: &mut [f64]| {
        let src = line.to_vec();
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &aj) in BDF6_A.iter().enumerate().take(i.min(6) + 1) {
                acc += aj * src[i - j];
            }
            line[i] = acc / h;
        }
    };
    if sign >= 0 {
        map_lines_real(grid, values, axis, &core)
    } else {
        // mirror the line so the upstream face is again at index 0
        map_lines_real(grid, values, axis, &move |line: &mut [f64]| {
            line.reverse();
            core(line);
            line.reverse();
        })
    }
}
