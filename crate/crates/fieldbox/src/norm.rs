//! Field norms: L2 over the box or over Omega, Sobolev via the Fourier
//! multiplier.

use crate::error::FieldError;
use crate::fft::{fft3, k_at};
use crate::field::ScalarField;
use crate::window::omega_mask;
use crate::Support;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    L2,
    /// H^s through (1 + |k|^2)^{s/2}; compact-in-Omega fields only,
    /// anything else aliases through the periodic faces.
    Hs(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Omega,
    FullBox,
}

/// Uniform-weight quadrature; every node carries h^3. For the Sobolev
/// kinds the region argument is moot: the field is compact, so the box
/// sum and the Omega sum agree term by term.
pub fn norm(f: &ScalarField, kind: NormKind, region: Region) -> Result<f64, FieldError> {
    let grid = f.grid();
    let cell = grid.h().powi(3);
    match kind {
        NormKind::L2 => {
            let mut acc = 0.0;
            match region {
                Region::FullBox => {
                    for &v in f.values() {
                        acc += v * v;
                    }
                }
                Region::Omega => {
                    let mask = omega_mask(grid);
                    for (idx, &v) in f.values().iter().enumerate() {
                        if mask[idx] {
                            acc += v * v;
                        }
                    }
                }
            }
            Ok((acc * cell).sqrt())
        }
        NormKind::Hs(s) => {
            if f.support() != Support::CompactOmega {
                return Err(FieldError::NonPeriodicField(format!(
                    "H^s norm needs compact-in-Omega support, got {}",
                    f.support().as_str()
                )));
            }
            let n = grid.n();
            let kvec = grid.kvec();
            let spec = fft3(grid, f.values());
            let mut acc = 0.0;
            for i1 in 0..n {
                for i2 in 0..n {
                    for i3 in 0..n {
                        let idx = grid.index(i1, i2, i3);
                        let k = k_at(grid, &kvec, idx);
                        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                        acc += (1.0 + k2).powf(s) * spec[idx].norm_sqr();
                    }
                }
            }
            // Parseval for the unnormalized transform
            Ok((acc * cell / grid.len() as f64).sqrt())
        }
    }
}

/// ||a - b|| / ||b|| in L2 over the region; 0 when both vanish.
pub fn rel_l2(a: &ScalarField, b: &ScalarField, region: Region) -> f64 {
    let grid = a.grid();
    assert_eq!(grid.n(), b.grid().n());
    let mask = match region {
        Region::Omega => Some(omega_mask(grid)),
        Region::FullBox => None,
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for idx in 0..grid.len() {
        if mask.as_ref().map(|m| m[idx]).unwrap_or(true) {
            let e = a.values()[idx] - b.values()[idx];
            num += e * e;
            den += b.values()[idx] * b.values()[idx];
        }
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}
