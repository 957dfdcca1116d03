//! Derivatives and constant-coefficient operators on fields.
//!
//! Two backends:
//!
//! * `Spectral` multiplies by (i k)^beta on the FFT of the field. Legal
//!   only for compact-in-Omega fields; anything else wraps its plateau
//!   through the periodic faces. Odd-order factors zero the Nyquist mode
//!   (its derivative sign is ambiguous on an even grid).
//! * `Fd` applies the closured centered 6th-order stencils from
//!   `stencil`. Legal for every support tag.
//!
//! Both preserve the support tag of the input: differentiation cannot
//! grow the support in exact arithmetic, and the numerical leakage of
//! the discrete operators is confined to the scale of their own
//! truncation error.

use num_complex::Complex64;

use crate::error::FieldError;
use crate::fft::{fft3, ifft3_real};
use crate::field::ScalarField;
use crate::grid::Grid;
use crate::stencil::{fd_axis, upwind_axis};
use crate::symbol::{MultiIndex, SymbolPolynomial};
use crate::Support;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Spectral,
    Fd,
}

/// Partial derivative of multi-index `beta`.
pub fn diff(f: &ScalarField, beta: MultiIndex, backend: Backend) -> Result<ScalarField, FieldError> {
    if beta == [0, 0, 0] {
        return Ok(f.clone());
    }
    match backend {
        Backend::Spectral => apply_symbol(f, &SymbolPolynomial::monomial(beta, 1.0), backend),
        Backend::Fd => {
            let grid = f.grid();
            let mut values = f.values().to_vec();
            for axis in 0..3 {
                if beta[axis] > 0 {
                    values = fd_axis(grid, &values, axis, beta[axis] as usize);
                }
            }
            ScalarField::from_values(grid, f.support(), values)
        }
    }
}

/// Apply p(D) = sum_beta c_beta D^beta.
pub fn apply_symbol(
    f: &ScalarField,
    p: &SymbolPolynomial,
    backend: Backend,
) -> Result<ScalarField, FieldError> {
    let grid = f.grid();
    match backend {
        Backend::Spectral => {
            if f.support() != Support::CompactOmega {
                return Err(FieldError::NonPeriodicField(
                    f.support().as_str().to_string(),
                ));
            }
            let values = spectral_multiply(grid, f.values(), p);
            ScalarField::from_values(grid, f.support(), values)
        }
        Backend::Fd => {
            let mut out = ScalarField::zeros(grid, f.support());
            for &(beta, c) in p.terms() {
                let term = diff(f, beta, Backend::Fd)?;
                out.axpy(c, &term);
            }
            // axpy joins tags; differentiation preserves the input tag
            Ok(out.with_support(f.support()))
        }
    }
}

/// One-sided backward-differentiation derivative along an axis. This is
/// the exact left inverse of `ray_antiderivative_march` on every row
/// past the six starting planes, which is what closes the transport
/// identities of the progressive expansions at roundoff. Rows within
/// reach of the upstream face hold the truncated causal sum: zero for
/// fields that vanish there, not a consistent derivative otherwise.
pub fn diff_upwind(f: &ScalarField, axis: usize, sign: i32) -> Result<ScalarField, FieldError> {
    if axis > 2 {
        return Err(FieldError::BadDirection(format!(
            "axis {axis} (want 0, 1 or 2)"
        )));
    }
    let grid = f.grid();
    let values = upwind_axis(grid, f.values(), axis, sign);
    ScalarField::from_values(grid, f.support(), values)
}

/// Raw periodic symbol action on a value buffer, no support gate. The
/// public entry point is `apply_symbol`; the inversion residual check
/// reuses this on fields whose tag is deliberately conservative.
pub(crate) fn spectral_multiply(grid: Grid, input: &[f64], p: &SymbolPolynomial) -> Vec<f64> {
    let n = grid.n();
    let kvec = grid.kvec();
    // per-term, per-axis factor tables; Nyquist killed for odd orders
    let mut tables: Vec<[Vec<Complex64>; 3]> = Vec::with_capacity(p.terms().len());
    let mut coefs: Vec<f64> = Vec::with_capacity(p.terms().len());
    for &(beta, c) in p.terms() {
        let mut axes: [Vec<Complex64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for a in 0..3 {
            axes[a] = (0..n)
                .map(|m| {
                    if beta[a] % 2 == 1 && m == n / 2 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let ik = Complex64::new(0.0, kvec[m]);
                    let mut v = Complex64::new(1.0, 0.0);
                    for _ in 0..beta[a] {
                        v *= ik;
                    }
                    v
                })
                .collect();
        }
        tables.push(axes);
        coefs.push(c);
    }
    let mut spec = fft3(grid, input);
    for i1 in 0..n {
        for i2 in 0..n {
            let base = (i1 * n + i2) * n;
            for i3 in 0..n {
                let mut m = Complex64::new(0.0, 0.0);
                for (t, &c) in coefs.iter().enumerate() {
                    m += c * tables[t][0][i1] * tables[t][1][i2] * tables[t][2][i3];
                }
                spec[base + i3] *= m;
            }
        }
    }
    ifft3_real(grid, &spec)
}

/// Laplacian, routed through `apply_symbol` so both backends share one
/// code path with the general machinery.
pub fn laplacian(f: &ScalarField, backend: Backend) -> Result<ScalarField, FieldError> {
    apply_symbol(f, &SymbolPolynomial::laplacian(), backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    /// sin(pi x1 / L) is periodic and band-limited: the spectral
    /// derivative must be exact to roundoff even though the field is
    /// not compact. Build it with an explicit compact tag override to
    /// exercise the backend arithmetic itself.
    #[test]
    fn spectral_exact_on_band_limited_wave() {
        let g = Grid::new(32, 2.0).unwrap();
        let pi_l = std::f64::consts::PI / g.l();
        let f = ScalarField::from_fn(g, |x| (pi_l * x[0]).sin()).with_support(Support::CompactOmega);
        let d = diff(&f, [1, 0, 0], Backend::Spectral).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..g.len() {
            let x = g.position(idx)[0];
            worst = worst.max((d.values()[idx] - pi_l * (pi_l * x).cos()).abs());
        }
        assert!(worst < 1e-12, "spectral derivative error {worst:.2e}");
    }

    #[test]
    fn spectral_rejects_general_support() {
        let g = Grid::new(16, 2.0).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0]);
        let e = diff(&f, [1, 0, 0], Backend::Spectral);
        assert!(matches!(e, Err(FieldError::NonPeriodicField(_))));
    }

    fn refined_grid_gap(n: usize, r: f64) -> f64 {
        let coarse = Grid::new(n, 2.0).unwrap();
        let fine = Grid::new(2 * n, 2.0).unwrap();
        let bc = ScalarField::bump(coarse, [0.0, 0.0, 0.0], r, 1.0).unwrap();
        let bf = ScalarField::bump(fine, [0.0, 0.0, 0.0], r, 1.0).unwrap();
        let dc = diff(&bc, [2, 0, 0], Backend::Fd).unwrap();
        let df = diff(&bf, [2, 0, 0], Backend::Fd).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i1 in 0..coarse.n() {
            for i2 in 0..coarse.n() {
                for i3 in 0..coarse.n() {
                    let c = dc.values()[coarse.index(i1, i2, i3)];
                    let f = df.values()[fine.index(2 * i1, 2 * i2, 2 * i3)];
                    num += (c - f) * (c - f);
                    den += f * f;
                }
            }
        }
        (num / den).sqrt()
    }

    /// The exponential bump hides an edge layer whose scale shrinks
    /// quadratically toward the support boundary; the refined-grid gap
    /// of its second derivative contracts superalgebraically but does
    /// not reach small tolerances until N is in the thousands (1D
    /// probe: 2.0e-2 at N=128, 1.1e-7 only at N=2048). These pins hold
    /// the measured values at practical sizes; the clean 6th-order
    /// rate is checked separately on a band-limited field below.
    #[test]
    fn fd_second_derivative_of_bump_against_refined_grid() {
        let g64 = refined_grid_gap(64, 0.85);
        assert!(g64 < 0.1, "refined-grid gap at N=64: {g64:.2e}");
        let g128 = refined_grid_gap(128, 0.85);
        assert!(g128 < 0.02, "refined-grid gap at N=128: {g128:.2e}");
        assert!(
            g64 / g128 > 4.0,
            "edge layer not contracting: {g64:.2e} -> {g128:.2e}"
        );
    }

    #[test]
    fn fd_converges_at_sixth_order_on_resolved_fields() {
        let pi_l = std::f64::consts::PI / 2.0;
        let worst_err = |n: usize| {
            let g = Grid::new(n, 2.0).unwrap();
            let f = ScalarField::from_fn(g, |x| (pi_l * x[0]).sin() * (2.0 * pi_l * x[1]).cos());
            let d = diff(&f, [2, 0, 0], Backend::Fd).unwrap();
            let mut worst = 0.0f64;
            for i1 in 3..n - 3 {
                // interior rows only: the one-sided closures are a
                // 5th-order sideband, the centered stencil is 6th
                for i2 in 0..n {
                    for i3 in 0..n {
                        let idx = g.index(i1, i2, i3);
                        let x = g.position(idx);
                        let exact =
                            -pi_l * pi_l * (pi_l * x[0]).sin() * (2.0 * pi_l * x[1]).cos();
                        worst = worst.max((d.values()[idx] - exact).abs());
                    }
                }
            }
            worst
        };
        let e32 = worst_err(32);
        let e64 = worst_err(64);
        let rate = e32 / e64;
        assert!(
            (40.0..90.0).contains(&rate),
            "expected ~64x contraction per doubling, got {rate:.1} ({e32:.2e} -> {e64:.2e})"
        );
    }

    #[test]
    fn diff_is_linear() {
        let g = Grid::new(16, 2.0).unwrap();
        let a = ScalarField::bump(g, [0.1, 0.0, 0.0], 0.5, 1.0).unwrap();
        let b = ScalarField::bump(g, [-0.2, 0.1, 0.0], 0.4, -0.7).unwrap();
        let lhs = diff(&a.scaled(2.5).add(&b.scaled(-1.25)), [1, 1, 0], Backend::Fd).unwrap();
        let rhs = diff(&a, [1, 1, 0], Backend::Fd)
            .unwrap()
            .scaled(2.5)
            .add(&diff(&b, [1, 1, 0], Backend::Fd).unwrap().scaled(-1.25));
        let mut worst = 0.0f64;
        for (u, v) in lhs.values().iter().zip(rhs.values().iter()) {
            worst = worst.max((u - v).abs());
        }
        assert!(worst < 1e-12, "linearity defect {worst:.2e}");
    }

    #[test]
    fn mixed_partials_commute() {
        let g = Grid::new(16, 2.0).unwrap();
        let b = ScalarField::bump(g, [0.0, 0.1, -0.1], 0.6, 1.0).unwrap();
        let ab = diff(
            &diff(&b, [1, 0, 0], Backend::Fd).unwrap(),
            [0, 1, 0],
            Backend::Fd,
        )
        .unwrap();
        let ba = diff(
            &diff(&b, [0, 1, 0], Backend::Fd).unwrap(),
            [1, 0, 0],
            Backend::Fd,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (u, v) in ab.values().iter().zip(ba.values().iter()) {
            worst = worst.max((u - v).abs());
        }
        assert!(worst < 1e-10, "commutator {worst:.2e}");
    }

    #[test]
    fn symbol_product_equals_composition() {
        let g = Grid::new(24, 2.0).unwrap();
        let b = ScalarField::bump(g, [0.0, 0.0, 0.0], 0.6, 1.0).unwrap();
        let p = SymbolPolynomial::laplacian();
        let q = SymbolPolynomial::transport_factor(0);
        let pq = p.product(&q);
        let once = apply_symbol(&b, &pq, Backend::Spectral).unwrap();
        let twice = apply_symbol(&apply_symbol(&b, &q, Backend::Spectral).unwrap(), &p, Backend::Spectral).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, v) in once.values().iter().zip(twice.values().iter()) {
            num += (u - v) * (u - v);
            den += v * v;
        }
        assert!((num / den).sqrt() < 1e-8);
    }

    #[test]
    fn bilaplacian_two_ways_agree() {
        let g = Grid::new(24, 2.0).unwrap();
        let b = ScalarField::bump(g, [0.1, -0.1, 0.0], 0.55, 2.0).unwrap();
        let direct = apply_symbol(&b, &SymbolPolynomial::bilaplacian(), Backend::Spectral).unwrap();
        let composed = laplacian(&laplacian(&b, Backend::Spectral).unwrap(), Backend::Spectral).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (u, v) in direct.values().iter().zip(composed.values().iter()) {
            num += (u - v) * (u - v);
            den += v * v;
        }
        assert!((num / den).sqrt() < 1e-8);
    }
}
