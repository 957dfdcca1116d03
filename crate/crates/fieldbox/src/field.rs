//! Scalar and vector fields with support bookkeeping.
//!
//! The support tag is a contract about where a field is known to vanish,
//! and it decides which derivative backends are legal:
//!
//! * `CompactOmega`: identically zero at every node with |x| >= 1.
//!   Constructors enforce this exactly; spectral backends are legal.
//! * `UpstreamVanishing`: zero on the upstream side of the ray direction
//!   (the typical shape of a ray antiderivative, constant plateaus
//!   downstream). Spectral differentiation would wrap the plateau into
//!   the upstream face, so only finite differences are legal.
//! * `General`: nothing is promised.
//!
//! Tag propagation through arithmetic is conservative: a product with a
//! compact factor is compact, a sum of fields that all vanish upstream
//! still vanishes upstream, and anything else degrades to `General`.

use crate::error::FieldError;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    CompactOmega,
    UpstreamVanishing,
    General,
}

impl Support {
    /// Tag of a sum.
    pub fn join(self, other: Support) -> Support {
        use Support::*;
        match (self, other) {
            (CompactOmega, CompactOmega) => CompactOmega,
            (General, _) | (_, General) => General,
            // compact fields also vanish upstream, so the sum still does
            _ => UpstreamVanishing,
        }
    }

    /// Tag of a pointwise product: the strongest factor wins.
    pub fn meet(self, other: Support) -> Support {
        use Support::*;
        match (self, other) {
            (CompactOmega, _) | (_, CompactOmega) => CompactOmega,
            (UpstreamVanishing, _) | (_, UpstreamVanishing) => UpstreamVanishing,
            _ => General,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Support::CompactOmega => "compact-in-omega",
            Support::UpstreamVanishing => "upstream-vanishing",
            Support::General => "general",
        }
    }

    pub fn parse(s: &str) -> Option<Support> {
        match s {
            "compact-in-omega" => Some(Support::CompactOmega),
            "upstream-vanishing" => Some(Support::UpstreamVanishing),
            "general" => Some(Support::General),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid,
    support: Support,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid, support: Support) -> Self {
        ScalarField {
            grid,
            support,
            values: vec![0.0; grid.len()],
        }
    }

    /// Evaluate `f` at every node. The caller promises nothing about
    /// support, so the tag is `General`.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; grid.len()];
        use rayon::prelude::*;
        let n = grid.n();
        values
            .par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(i1, plane)| {
                for i2 in 0..n {
                    for i3 in 0..n {
                        plane[i2 * n + i3] =
                            f([grid.coord(i1), grid.coord(i2), grid.coord(i3)]);
                    }
                }
            });
        ScalarField {
            grid,
            support: Support::General,
            values,
        }
    }

    /// Evaluate `f` and tag the result compact-in-Omega. Errors if `f`
    /// is nonzero at any node with |x| >= 1; the tag must be exact.
    pub fn compact_from_fn(
        grid: Grid,
        f: impl Fn([f64; 3]) -> f64 + Sync,
    ) -> Result<Self, FieldError> {
        let field = ScalarField::from_fn(grid, f);
        for (idx, &v) in field.values.iter().enumerate() {
            if v != 0.0 {
                let p = grid.position(idx);
                let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                if r2 >= 1.0 {
                    return Err(FieldError::SupportViolation(format!(
                        "value {v:.3e} at |x| = {:.3} >= 1",
                        r2.sqrt()
                    )));
                }
            }
        }
        Ok(ScalarField {
            support: Support::CompactOmega,
            ..field
        })
    }

    /// Standard smooth bump supported on the ball |x - c| < r:
    /// a * exp(1 - 1/(1 - |x-c|^2/r^2)) inside, identically zero outside.
    /// Requires |c| + r <= 1 so the compact-in-Omega tag is honest.
    pub fn bump(grid: Grid, center: [f64; 3], radius: f64, amplitude: f64) -> Result<Self, FieldError> {
        if !(radius > 0.0) {
            return Err(FieldError::SupportViolation(format!(
                "bump radius must be positive, got {radius}"
            )));
        }
        let c_norm = (center[0] * center[0] + center[1] * center[1] + center[2] * center[2]).sqrt();
        if c_norm + radius > 1.0 {
            return Err(FieldError::SupportViolation(format!(
                "bump ball sticks out of Omega: |center| + radius = {:.3}",
                c_norm + radius
            )));
        }
        ScalarField::compact_from_fn(grid, move |x| {
            let dx = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
            let u2 = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]) / (radius * radius);
            if u2 < 1.0 {
                amplitude * (1.0 - 1.0 / (1.0 - u2)).exp()
            } else {
                0.0
            }
        })
    }

    /// Wrap raw values. The caller owns the honesty of the tag; readers
    /// of serialized fields use this.
    pub fn from_values(grid: Grid, support: Support, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::BadGrid(format!(
                "value count {} does not match N^3 = {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(ScalarField {
            grid,
            support,
            values,
        })
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn support(&self) -> Support {
        self.support
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Replace the support tag. For ops whose output support is known by
    /// construction (ray integrals, elliptic solves with tapers).
    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn zip(&self, other: &ScalarField, tag: Support, f: impl Fn(f64, f64) -> f64 + Sync) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        use rayon::prelude::*;
        let values: Vec<f64> = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        ScalarField {
            grid: self.grid,
            support: tag,
            values,
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, self.support.join(other.support), |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, self.support.join(other.support), |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip(other, self.support.meet(other.support), |a, b| a * b)
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    /// self += a * x, joining tags.
    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        assert_eq!(self.grid, x.grid, "fields live on different grids");
        self.support = self.support.join(x.support);
        for (v, &u) in self.values.iter_mut().zip(x.values.iter()) {
            *v += a * u;
        }
    }
}

#[derive(Debug, Clone)]
pub struct VectorField {
    pub comps: [ScalarField; 3],
}

impl VectorField {
    pub fn new(comps: [ScalarField; 3]) -> Self {
        assert_eq!(comps[0].grid(), comps[1].grid());
        assert_eq!(comps[0].grid(), comps[2].grid());
        VectorField { comps }
    }

    pub fn zeros(grid: Grid, support: Support) -> Self {
        VectorField {
            comps: [
                ScalarField::zeros(grid, support),
                ScalarField::zeros(grid, support),
                ScalarField::zeros(grid, support),
            ],
        }
    }

    pub fn grid(&self) -> Grid {
        self.comps[0].grid()
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField::new([
            self.comps[0].add(&other.comps[0]),
            self.comps[1].add(&other.comps[1]),
            self.comps[2].add(&other.comps[2]),
        ])
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField::new([
            self.comps[0].sub(&other.comps[0]),
            self.comps[1].sub(&other.comps[1]),
            self.comps[2].sub(&other.comps[2]),
        ])
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField::new([
            self.comps[0].scaled(c),
            self.comps[1].scaled(c),
            self.comps[2].scaled(c),
        ])
    }
}
