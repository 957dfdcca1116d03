//! FFT plumbing: cached 1D plans applied along grid axes.
//!
//! Forward transforms are unnormalized (matching the usual DFT); the
//! inverse carries the full 1/N^3. All parallel loops write disjoint
//! chunks and every reduction is serial, so results are bitwise
//! reproducible regardless of thread count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

#[derive(Clone)]
pub struct AxisPlans {
    pub fwd: Arc<dyn Fft<f64>>,
    pub inv: Arc<dyn Fft<f64>>,
}

fn plan_cache() -> &'static Mutex<HashMap<usize, AxisPlans>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, AxisPlans>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Fetch (or build) the forward/inverse plans for lines of length n.
pub fn plans(n: usize) -> AxisPlans {
    let mut cache = plan_cache().lock().unwrap();
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            AxisPlans {
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            }
        })
        .clone()
}

/// Apply `op` to every grid line along `axis` (0, 1 or 2 for x1, x2, x3).
/// Each line is copied out, mutated, and scattered back; lines are
/// processed in parallel.
pub fn map_lines_real(grid: Grid, values: &[f64], axis: usize, op: &(dyn Fn(&mut [f64]) + Sync)) -> Vec<f64> {
    let n = grid.n();
    assert_eq!(values.len(), grid.len());
    let mut out = values.to_vec();
    match axis {
        2 => {
            out.par_chunks_mut(n).for_each(|line| op(line));
        }
        1 => {
            out.par_chunks_mut(n * n).for_each(|panel| {
                let mut line = vec![0.0; n];
                for i3 in 0..n {
                    for i2 in 0..n {
                        line[i2] = panel[i2 * n + i3];
                    }
                    op(&mut line);
                    for i2 in 0..n {
                        panel[i2 * n + i3] = line[i2];
                    }
                }
            });
        }
        0 => {
            // lines stride N^2; hand each (i2, i3) pair to the pool by
            // transposing x1 to the contiguous slot and back
            let mut t = transpose02(grid, &out);
            t.par_chunks_mut(n).for_each(|line| op(line));
            out = transpose02(grid, &t);
        }
        _ => panic!("axis must be 0, 1 or 2"),
    }
    out
}

fn transpose02(grid: Grid, values: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let mut out = vec![0.0; values.len()];
    out.par_chunks_mut(n * n).enumerate().for_each(|(j1, plane)| {
        // out[(j1,j2,j3)] = in[(j3,j2,j1)]
        for j2 in 0..n {
            for j3 in 0..n {
                plane[j2 * n + j3] = values[(j3 * n + j2) * n + j1];
            }
        }
    });
    out
}

fn transpose02_c(grid: Grid, values: &[Complex64]) -> Vec<Complex64> {
    let n = grid.n();
    let mut out = vec![Complex64::new(0.0, 0.0); values.len()];
    out.par_chunks_mut(n * n).enumerate().for_each(|(j1, plane)| {
        for j2 in 0..n {
            for j3 in 0..n {
                plane[j2 * n + j3] = values[(j3 * n + j2) * n + j1];
            }
        }
    });
    out
}

/// One unnormalized FFT pass along `axis` of a complex 3D buffer.
pub fn fft_axis(grid: Grid, data: &mut Vec<Complex64>, axis: usize, inverse: bool) {
    let n = grid.n();
    assert_eq!(data.len(), grid.len());
    let p = plans(n);
    let fft = if inverse { p.inv } else { p.fwd };
    match axis {
        2 => {
            data.par_chunks_mut(n).for_each(|line| fft.process(line));
        }
        1 => {
            data.par_chunks_mut(n * n).for_each(|panel| {
                let mut line = vec![Complex64::new(0.0, 0.0); n];
                for i3 in 0..n {
                    for i2 in 0..n {
                        line[i2] = panel[i2 * n + i3];
                    }
                    fft.process(&mut line);
                    for i2 in 0..n {
                        panel[i2 * n + i3] = line[i2];
                    }
                }
            });
        }
        0 => {
            let mut t = transpose02_c(grid, data);
            t.par_chunks_mut(n).for_each(|line| fft.process(line));
            *data = transpose02_c(grid, &t);
        }
        _ => panic!("axis must be 0, 1 or 2"),
    }
}

/// Full 3D forward transform of a real field (unnormalized).
pub fn fft3(grid: Grid, values: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_axis(grid, &mut buf, 2, false);
    fft_axis(grid, &mut buf, 1, false);
    fft_axis(grid, &mut buf, 0, false);
    buf
}

/// Full 3D inverse transform, returning the real part with the 1/N^3
/// normalization applied.
pub fn ifft3_real(grid: Grid, spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft_axis(grid, &mut buf, 2, true);
    fft_axis(grid, &mut buf, 1, true);
    fft_axis(grid, &mut buf, 0, true);
    let scale = 1.0 / grid.len() as f64;
    buf.par_iter().map(|c| c.re * scale).collect()
}

/// Wavenumber triple of a linear spectral index.
#[inline]
pub fn k_at(grid: Grid, kvec: &[f64], idx: usize) -> [f64; 3] {
    let [i1, i2, i3] = grid.unravel(idx);
    [kvec[i1], kvec[i2], kvec[i3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_identity() {
        let g = Grid::new(16, 2.0).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5).collect();
        let spec = fft3(g, &f);
        let back = ifft3_real(g, &spec);
        let err = f
            .iter()
            .zip(back.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-12, "fft roundtrip error {err:.2e}");
    }

    #[test]
    fn plane_wave_lands_on_single_mode() {
        let g = Grid::new(16, 2.0).unwrap();
        let k1 = g.kvec()[1]; // lowest positive mode along x1
        let f: Vec<f64> = (0..g.len())
            .map(|idx| {
                let p = g.position(idx);
                (k1 * p[0]).cos()
            })
            .collect();
        let spec = fft3(g, &f);
        // cos splits onto modes m = +-1 along x1 with magnitude N^3/2
        let n3 = g.len() as f64;
        assert!((spec[g.index(1, 0, 0)].norm() - n3 / 2.0).abs() < 1e-6);
        assert!((spec[g.index(g.n() - 1, 0, 0)].norm() - n3 / 2.0).abs() < 1e-6);
        assert!(spec[g.index(3, 0, 0)].norm() < 1e-8);
        assert!(spec[g.index(1, 2, 0)].norm() < 1e-8);
    }
}
