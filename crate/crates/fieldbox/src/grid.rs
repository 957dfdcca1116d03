//! Uniform periodic grid on the cube [-L, L)^3.
//!
//! Nodes are x_a = -L + h i_a with h = 2L/N, a = 1,2,3, and the linear
//! index is (i1*N + i2)*N + i3, so the x3 coordinate varies fastest.
//! The unit ball Omega = {|x| < 1} must sit well inside the box; L
//! defaults to 2 so ray tails and finite-difference closures stay away
//! from the faces.

use crate::error::FieldError;

/// Grid parameters. `n` is the nodes-per-axis count (even, >= 8), `l`
/// the half-width of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    l: f64,
}

impl Grid {
    /// Default box half-width.
    pub const DEFAULT_L: f64 = 2.0;

    pub fn new(n: usize, l: f64) -> Result<Self, FieldError> {
        if n < 8 || n % 2 != 0 {
            return Err(FieldError::BadGrid(format!(
                "N must be even and at least 8, got {n}"
            )));
        }
        if !(l >= 2.0) {
            return Err(FieldError::BadGrid(format!(
                "L must be at least 2 so the unit ball has margin, got {l}"
            )));
        }
        Ok(Grid { n, l })
    }

    /// N=n with the default box half-width L=2.
    pub fn with_default_box(n: usize) -> Result<Self, FieldError> {
        Grid::new(n, Grid::DEFAULT_L)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn l(&self) -> f64 {
        self.l
    }

    /// Mesh width h = 2L/N.
    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    /// Total node count N^3.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node index i along one axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + self.h() * i as f64
    }

    /// Linear index of (i1, i2, i3).
    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        (i1 * self.n + i2) * self.n + i3
    }

    /// Inverse of `index`.
    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i3 = idx % self.n;
        let r = idx / self.n;
        let i2 = r % self.n;
        let i1 = r / self.n;
        [i1, i2, i3]
    }

    /// Node position of a linear index.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i1, i2, i3] = self.unravel(idx);
        [self.coord(i1), self.coord(i2), self.coord(i3)]
    }

    /// Fourier wavenumbers along one axis in FFT order:
    /// k_m = (pi/L) m for m = 0..N/2-1, then the negative half.
    pub fn kvec(&self) -> Vec<f64> {
        let n = self.n as isize;
        (0..n)
            .map(|m| {
                let f = if m < n / 2 { m } else { m - n };
                f as f64 * std::f64::consts::PI / self.l
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_layout_x3_fastest() {
        let g = Grid::new(8, 2.0).unwrap();
        assert_eq!(g.index(0, 0, 1), 1);
        assert_eq!(g.index(0, 1, 0), 8);
        assert_eq!(g.index(1, 0, 0), 64);
        assert_eq!(g.unravel(g.index(3, 5, 7)), [3, 5, 7]);
    }

    #[test]
    fn coords_span_half_open_box() {
        let g = Grid::new(8, 2.0).unwrap();
        assert_eq!(g.coord(0), -2.0);
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.coord(7), 1.5);
    }

    #[test]
    fn rejects_odd_or_tiny_n() {
        assert!(Grid::new(7, 2.0).is_err());
        assert!(Grid::new(4, 2.0).is_err());
        assert!(Grid::new(8, 1.0).is_err());
    }

    #[test]
    fn kvec_matches_fft_convention() {
        let g = Grid::new(8, 2.0).unwrap();
        let k = g.kvec();
        let pi = std::f64::consts::PI;
        assert_eq!(k[0], 0.0);
        assert!((k[1] - pi / 2.0).abs() < 1e-15);
        assert!((k[4] - (-4.0 * pi / 2.0)).abs() < 1e-15);
        assert!((k[7] - (-pi / 2.0)).abs() < 1e-15);
    }
}
