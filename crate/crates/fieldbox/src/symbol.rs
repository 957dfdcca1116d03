//! Constant-coefficient differential operators as polynomials in the
//! Fourier variable: p(xi) = sum_beta c_beta (i xi)^beta.
//!
//! Ellipticity-for-inversion is a sampling certificate, not a proof:
//! |p| must clear a tiny relative floor at every node of a deterministic
//! golden-angle lattice on the spheres of radius 0.5, 1 and 2 (more than
//! 10^4 samples total). That is exactly the property `invert_symbol`
//! relies on, since the grid wavenumbers it divides by are generic.

use std::sync::OnceLock;

use num_complex::Complex64;

/// Multi-index of one monomial (derivative orders per axis).
pub type MultiIndex = [u8; 3];

#[derive(Debug, Clone)]
pub struct SymbolPolynomial {
    terms: Vec<(MultiIndex, f64)>,
    /// certificate is a pure function of `terms`; evaluated on first
    /// query and cached
    elliptic: OnceLock<bool>,
}

/// Samples per sphere for the certificate; three spheres are used.
const SPHERE_SAMPLES: usize = 4096;

/// Relative floor for "nonzero at a sample". Scaled by the coefficient
/// mass at the sample's radius so the certificate is homogeneous.
const ELLIPTIC_FLOOR: f64 = 1e-12;

impl SymbolPolynomial {
    /// Build from (multi-index, coefficient) pairs; duplicates merge.
    pub fn new(terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut merged: Vec<(MultiIndex, f64)> = Vec::new();
        for (beta, c) in terms {
            if c == 0.0 {
                continue;
            }
            if let Some(slot) = merged.iter_mut().find(|(b, _)| *b == beta) {
                slot.1 += c;
            } else {
                merged.push((beta, c));
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        merged.sort_by_key(|&(b, _)| b);
        SymbolPolynomial {
            terms: merged,
            elliptic: OnceLock::new(),
        }
    }

    /// Single derivative monomial.
    pub fn monomial(beta: MultiIndex, c: f64) -> Self {
        SymbolPolynomial::new([(beta, c)])
    }

    /// The Laplacian.
    pub fn laplacian() -> Self {
        SymbolPolynomial::new([([2, 0, 0], 1.0), ([0, 2, 0], 1.0), ([0, 0, 2], 1.0)])
    }

    /// The bilaplacian, expanded to monomials.
    pub fn bilaplacian() -> Self {
        Self::laplacian().product(&Self::laplacian())
    }

    /// d_1^2 + Lap/2, the longitudinal transport factor.
    pub fn transport_factor(axis: usize) -> Self {
        let mut e2: MultiIndex = [0, 0, 0];
        e2[axis] = 2;
        let mut terms = vec![(e2, 1.0)];
        for a in 0..3 {
            let mut b: MultiIndex = [0, 0, 0];
            b[a] = 2;
            terms.push((b, 0.5));
        }
        SymbolPolynomial::new(terms)
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymbolPolynomial::new(self.terms.iter().map(|&(b, v)| (b, c * v)))
    }

    pub fn add(&self, other: &Self) -> Self {
        SymbolPolynomial::new(
            self.terms
                .iter()
                .chain(other.terms.iter())
                .map(|&(b, c)| (b, c)),
        )
    }

    /// Operator composition = polynomial product.
    pub fn product(&self, other: &Self) -> Self {
        let mut terms = Vec::new();
        for &(a, ca) in &self.terms {
            for &(b, cb) in &other.terms {
                terms.push(([a[0] + b[0], a[1] + b[1], a[2] + b[2]], ca * cb));
            }
        }
        SymbolPolynomial::new(terms)
    }

    /// p(xi) = sum c_beta (i xi)^beta.
    pub fn eval(&self, xi: [f64; 3]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(beta, c) in &self.terms {
            let mut m = Complex64::new(c, 0.0);
            for a in 0..3 {
                for _ in 0..beta[a] {
                    m *= Complex64::new(0.0, xi[a]);
                }
            }
            acc += m;
        }
        acc
    }

    /// True when the sampling certificate passes for these terms.
    pub fn is_elliptic_for_inversion(&self) -> bool {
        *self.elliptic.get_or_init(|| self.certify_elliptic())
    }

    fn certify_elliptic(&self) -> bool {
        if self.terms.is_empty() {
            return false;
        }
        for &r in &[0.5f64, 1.0, 2.0] {
            // coefficient mass at this radius, for a homogeneous floor
            let scale: f64 = self
                .terms
                .iter()
                .map(|&(b, c)| c.abs() * r.powi((b[0] + b[1] + b[2]) as i32))
                .sum();
            for xi in golden_sphere(SPHERE_SAMPLES, r) {
                if self.eval(xi).norm() <= ELLIPTIC_FLOOR * scale {
                    return false;
                }
            }
        }
        true
    }
}

/// Deterministic golden-angle lattice on the sphere of radius r.
pub fn golden_sphere(count: usize, r: f64) -> impl Iterator<Item = [f64; 3]> {
    // 2 - golden ratio = conjugate golden fraction
    let ga = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    (0..count).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
        let rho = (1.0 - z * z).sqrt();
        let phi = ga * i as f64;
        [r * rho * phi.cos(), r * rho * phi.sin(), r * z]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transport_factor_value_at_unit_xi() {
        // (d1^2 + Lap/2)(Lap/2) at xi = (1,0,0) evaluates to 0.75
        let p = SymbolPolynomial::transport_factor(0)
            .product(&SymbolPolynomial::laplacian().scaled(0.5));
        let v = p.eval([1.0, 0.0, 0.0]);
        assert!((v.re - 0.75).abs() < 1e-14, "got {v}");
        assert!(v.im.abs() < 1e-14);
    }

    #[test]
    fn laplacian_and_bilaplacian_certify() {
        assert!(SymbolPolynomial::laplacian().is_elliptic_for_inversion());
        assert!(SymbolPolynomial::bilaplacian().is_elliptic_for_inversion());
        assert!(SymbolPolynomial::transport_factor(0)
            .product(&SymbolPolynomial::laplacian().scaled(0.5))
            .is_elliptic_for_inversion());
    }

    #[test]
    fn certificate_is_operational_not_symbolic() {
        // the zero polynomial always fails
        let z = SymbolPolynomial::new([([2, 0, 0], 1.0), ([2, 0, 0], -1.0)]);
        assert!(!z.is_elliptic_for_inversion());
        // a symbol whose zero set has measure zero can still clear the
        // lattice; the a-posteriori residual gate in invert_symbol is the
        // guard that catches such operators in practice
        let d1 = SymbolPolynomial::new([([1, 0, 0], 1.0)]);
        assert!(d1.is_elliptic_for_inversion());
    }

    #[test]
    fn product_matches_pointwise_eval() {
        let p = SymbolPolynomial::laplacian();
        let q = SymbolPolynomial::transport_factor(1);
        let pq = p.product(&q);
        for xi in golden_sphere(37, 1.3) {
            let lhs = pq.eval(xi);
            let rhs = p.eval(xi) * q.eval(xi);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }
}
