//! Cutoff windows: radial tapers, axis slabs, and the unit-ball mask.

use crate::field::ScalarField;
use crate::grid::Grid;
use crate::Support;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Radial window: 1 on |x| <= inner, 0 on |x| >= outer, smoothstep between.
pub fn taper_mask(grid: Grid, inner: f64, outer: f64) -> ScalarField {
    assert!(inner < outer, "taper needs inner < outer");
    let support = if outer <= 1.0 {
        Support::CompactOmega
    } else {
        Support::General
    };
    let mut f = ScalarField::zeros(grid, support);
    let vals = f.values_mut();
    for idx in 0..grid.len() {
        let p = grid.position(idx);
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        vals[idx] = 1.0 - smoothstep((r - inner) / (outer - inner));
    }
    f
}

/// Slab window in x1: 1 on [lo, hi], ramping to 0 over a band of width
/// `ramp` on either side.
pub fn slab_window(grid: Grid, lo: f64, hi: f64, ramp: f64) -> ScalarField {
    assert!(lo < hi && ramp > 0.0);
    let mut f = ScalarField::zeros(grid, Support::General);
    let vals = f.values_mut();
    for idx in 0..grid.len() {
        let x1 = grid.position(idx)[0];
        let up = smoothstep((x1 - (lo - ramp)) / ramp);
        let down = smoothstep(((hi + ramp) - x1) / ramp);
        vals[idx] = up.min(1.0) * down.min(1.0);
    }
    f
}

/// Hard indicator of the closed ball |x| <= radius.
pub fn ball_indicator(grid: Grid, radius: f64) -> Vec<bool> {
    (0..grid.len())
        .map(|idx| {
            let p = grid.position(idx);
            p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= radius * radius
        })
        .collect()
}

/// Indicator of the reconstruction domain Omega (open unit ball).
pub fn omega_mask(grid: Grid) -> Vec<bool> {
    (0..grid.len())
        .map(|idx| {
            let p = grid.position(idx);
            p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < 1.0
        })
        .collect()
}
