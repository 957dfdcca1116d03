//! Antiderivatives along axis rays.
//!
//! For a source f vanishing upstream, g(x) = integral of f along the ray
//! arriving at x from the upstream face: g(x) = \int_0^inf f(x - s theta) ds
//! with theta = sign * e_axis. The result vanishes upstream of the source
//! and is constant downstream of it, hence the upstream-vanishing tag.
//!
//! Two realizations:
//!
//! * `ray_antiderivative` (spectral): per-line FFT, divide by ik, zero the
//!   DC and Nyquist bins, then restore the DC mass as an exact ramp
//!   anchored at the upstream face. Converges like the trigonometric
//!   interpolant of the source, which is what lets the quadrature meet
//!   1e-8 oracles at moderate N. Requires compact-in-Omega input; a
//!   downstream plateau would wrap through the periodic faces.
//!
//! * `ray_antiderivative_march` (causal BDF6): marches g through the
//!   implicit backward-differentiation row, starting from six zero
//!   planes at the upstream face. Its defining property is exactness
//!   under the paired one-sided derivative: upwind(march(f)) == f on
//!   every row past the starting planes, to roundoff. The progressive
//!   expansion engine and the data functionals are built on this pair,
//!   so their transport identities close at machine precision.

use num_complex::Complex64;

use crate::error::FieldError;
use crate::fft::{map_lines_real, plans};
use crate::field::ScalarField;
use crate::stencil::BDF6_A;
use crate::Support;

fn check_axis(axis: usize) -> Result<(), FieldError> {
    if axis > 2 {
        return Err(FieldError::BadDirection(format!(
            "axis {axis} (want 0, 1 or 2)"
        )));
    }
    Ok(())
}

/// Spectral ray antiderivative. Input must be compact-in-Omega.
pub fn ray_antiderivative(
    f: &ScalarField,
    axis: usize,
    sign: i32,
) -> Result<ScalarField, FieldError> {
    check_axis(axis)?;
    if f.support() != Support::CompactOmega {
        return Err(FieldError::NonPeriodicField(format!(
            "ray antiderivative needs compact-in-Omega input, got {}",
            f.support().as_str()
        )));
    }
    let grid = f.grid();
    let n = grid.n();
    let h = grid.h();
    let kvec = grid.kvec();
    let p = plans(n);
    let core = move |line: &mut [f64]| {
        let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        p.fwd.process(&mut buf);
        let mean = buf[0].re / n as f64;
        buf[0] = Complex64::new(0.0, 0.0);
        for (m, b) in buf.iter_mut().enumerate() {
            if m != 0 && m != n / 2 {
                *b /= Complex64::new(0.0, kvec[m]);
            }
        }
        buf[n / 2] = Complex64::new(0.0, 0.0);
        p.inv.process(&mut buf);
        let g0 = buf[0].re / n as f64;
        for (i, v) in line.iter_mut().enumerate() {
            // periodic antiderivative, re-anchored at the upstream face,
            // plus the mean restored as the exact linear ramp
            *v = buf[i].re / n as f64 - g0 + mean * h * i as f64;
        }
    };
    let values = if sign >= 0 {
        map_lines_real(grid, f.values(), axis, &core)
    } else {
        map_lines_real(grid, f.values(), axis, &move |line: &mut [f64]| {
            line.reverse();
            core(line);
            line.reverse();
        })
    };
    ScalarField::from_values(grid, Support::UpstreamVanishing, values)
}

/// Causal BDF6 ray antiderivative. Input must vanish upstream (the
/// compact tag qualifies); the first six planes of the result are the
/// zero starting values of the march.
pub fn ray_antiderivative_march(
    f: &ScalarField,
    axis: usize,
    sign: i32,
) -> Result<ScalarField, FieldError> {
    check_axis(axis)?;
    if f.support() == Support::General {
        return Err(FieldError::SupportViolation(
            "causal march needs a source that vanishes upstream".to_string(),
        ));
    }
    let grid = f.grid();
    let n = grid.n();
    let h = grid.h();
    let core = move |line: &mut [f64]| {
        let src = line.to_vec();
        for v in line.iter_mut().take(6.min(n)) {
            *v = 0.0;
        }
        for i in 6..n {
            let mut acc = h * src[i];
            for j in 1..=6 {
                acc -= BDF6_A[j] * line[i - j];
            }
            line[i] = acc / BDF6_A[0];
        }
    };
    let values = if sign >= 0 {
        map_lines_real(grid, f.values(), axis, &core)
    } else {
        map_lines_real(grid, f.values(), axis, &move |line: &mut [f64]| {
            line.reverse();
            core(line);
            line.reverse();
        })
    };
    ScalarField::from_values(grid, Support::UpstreamVanishing, values)
}
