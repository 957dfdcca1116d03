//! Adaptive Simpson quadrature. Test oracle for line integrals of
//! analytically known profiles; deliberately independent of the grid
//! machinery so it can referee the grid-based integrators.

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        m: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth > 40 || (left + right - whole).abs() < 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, lm, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                + rec(f, m, rm, b, fm, frm, fb, right, tol / 2.0, depth + 1)
        }
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, m, b, fa, fm, fb, whole, tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_smooth_functions_to_requested_tolerance() {
        let got = adaptive_simpson(&|t: f64| t.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((got - 2.0).abs() < 1e-10);
        let got = adaptive_simpson(&|t: f64| (-t * t).exp(), -6.0, 6.0, 1e-12);
        assert!((got - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }
}
