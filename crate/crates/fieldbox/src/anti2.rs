//! Double antiderivative along two axes, the inverse of a mixed second
//! partial for compact fields.
//!
//! The centered 6th-order derivative of a compact field never touches
//! the closure rows (the field is zero within reach of the faces), so
//! on that class it coincides with the zero-extension banded matrix
//! T[i][i+j-3] = W1[j]/h. T is invertible, and applying its inverse
//! along each axis undoes the corresponding derivative exactly, to LU
//! roundoff. Inputs that are not mixed partials of a compact field
//! leave a footprint on the downstream faces; the leak gauge measures
//! it and the result keeps the compact tag only when the gauge clears.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::FieldError;
use crate::fft::map_lines_real;
use crate::field::ScalarField;
use crate::stencil::W1;
use crate::Support;

pub const FACE_LEAK_LIMIT: f64 = 1e-6;

fn inv_table(n: usize) -> Arc<DMatrix<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<DMatrix<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut t = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                for (j, &w) in W1.iter().enumerate() {
                    let col = i as isize + j as isize - 3;
                    if (0..n as isize).contains(&col) {
                        t[(i, col as usize)] = w;
                    }
                }
            }
            Arc::new(t.try_inverse().expect("zero-extension derivative matrix is invertible"))
        })
        .clone()
}

fn integrate_axis(f: &ScalarField, axis: usize) -> Vec<f64> {
    let grid = f.grid();
    let n = grid.n();
    let h = grid.h();
    let tinv = inv_table(n);
    map_lines_real(grid, f.values(), axis, &move |line: &mut [f64]| {
        let src = line.to_vec();
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &s) in src.iter().enumerate() {
                acc += tinv[(i, j)] * s;
            }
            // T carries 1/h, so its inverse restores it
            line[i] = acc * h;
        }
    })
}

/// Largest |value| on the two faces normal to `axis`, relative to the
/// sup of `reference`. A true compact antiderivative leaves roundoff
/// there; anything else signals that the input was not the mixed
/// partial of a compact field.
pub fn downstream_face_leak(f: &ScalarField, axis: usize, reference_sup: f64) -> f64 {
    let grid = f.grid();
    let n = grid.n();
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in 0..n {
            let (first, last) = match axis {
                0 => (grid.index(0, a, b), grid.index(n - 1, a, b)),
                1 => (grid.index(a, 0, b), grid.index(a, n - 1, b)),
                _ => (grid.index(a, b, 0), grid.index(a, b, n - 1)),
            };
            worst = worst.max(f.values()[first].abs()).max(f.values()[last].abs());
        }
    }
    if reference_sup > 0.0 {
        worst / reference_sup
    } else {
        worst
    }
}

/// Invert a mixed second partial: integrate along `axes.0`, then
/// `axes.1`. Input must be compact-in-Omega.
pub fn double_antiderivative(
    f: &ScalarField,
    axes: (usize, usize),
) -> Result<ScalarField, FieldError> {
    if axes.0 > 2 || axes.1 > 2 || axes.0 == axes.1 {
        return Err(FieldError::BadDirection(format!(
            "axes {:?} (want two distinct axes out of 0, 1, 2)",
            axes
        )));
    }
    if f.support() != Support::CompactOmega {
        return Err(FieldError::SupportViolation(format!(
            "double antiderivative needs compact-in-Omega input, got {}",
            f.support().as_str()
        )));
    }
    let grid = f.grid();
    let first = ScalarField::from_values(grid, Support::General, integrate_axis(f, axes.0))?;
    let out = ScalarField::from_values(grid, Support::General, integrate_axis(&first, axes.1))?;
    let sup = f.max_abs();
    let leak = downstream_face_leak(&out, axes.0, sup).max(downstream_face_leak(&out, axes.1, sup));
    if leak > FACE_LEAK_LIMIT {
        eprintln!(
            "double_antiderivative: face leak {leak:.3e} exceeds {FACE_LEAK_LIMIT:.1e}; \
             input is not the mixed partial of a compact field"
        );
        return Ok(out);
    }
    Ok(out.with_support(Support::CompactOmega))
}
