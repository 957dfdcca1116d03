//! Voigt-symmetric stiffness perturbations and the contractions that
//! assemble every wave-front identity downstream.
//!
//! A stiffness perturbation has the full elastic symmetries
//! c_{ijkl} = c_{jikl} = c_{klij}, so it carries 21 independent scalar
//! fields. We store exactly those, indexed by the Voigt pair (A, B)
//! with 1 <= A <= B <= 6, and resolve every four-index access through
//! the symmetry map. That makes the symmetries exact by construction
//! and keeps index-notation transcriptions auditable term by term:
//! each c(i,j,k,l) in a formula is one slot lookup, never a branch.
//!
//! Axes are 0-based everywhere in code (matching `fieldbox`); Voigt
//! indices keep their conventional 1-based names since c11, c46, ...
//! is how the components are spoken of and serialized.

use std::collections::BTreeMap;

use fieldbox::{diff, Backend, Grid, ScalarField, Support, VectorField};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::ElasticError;

/// Homogeneous isotropic background. The reference density is fixed to
/// one, so the squared speeds are cp^2 = lambda0 + 2 mu0 and cs2 = mu0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    lambda0: f64,
    mu0: f64,
}

impl Background {
    /// Ellipticity requires mu0 > 0 and 3 lambda0 + 2 mu0 > 0. Those two
    /// already give lambda0 + mu0 > mu0 / 3 > 0, hence cp > cs strictly;
    /// no separate distinct-speeds check is needed.
    pub fn new(lambda0: f64, mu0: f64) -> Result<Self, ElasticError> {
        if !(mu0 > 0.0) || !(3.0 * lambda0 + 2.0 * mu0 > 0.0) {
            return Err(ElasticError::BadBackground(format!(
                "need mu0 > 0 and 3 lambda0 + 2 mu0 > 0, got lambda0 = {lambda0}, mu0 = {mu0}"
            )));
        }
        Ok(Background { lambda0, mu0 })
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn rho0(&self) -> f64 {
        1.0
    }

    pub fn cp2(&self) -> f64 {
        self.lambda0 + 2.0 * self.mu0
    }

    pub fn cs2(&self) -> f64 {
        self.mu0
    }

    pub fn cp(&self) -> f64 {
        self.cp2().sqrt()
    }

    pub fn cs(&self) -> f64 {
        self.cs2().sqrt()
    }
}

/// Alternating symbol, eps(0,1,2) = 1.
pub fn eps(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// The 21 stored Voigt pairs, row-major upper triangle. This is the
/// canonical component order for storage, iteration, and file bundles.
pub const VOIGT_PAIRS: [(usize, usize); 21] = [
    (1, 1),
    (1, 2),
    (1, 3),
    (1, 4),
    (1, 5),
    (1, 6),
    (2, 2),
    (2, 3),
    (2, 4),
    (2, 5),
    (2, 6),
    (3, 3),
    (3, 4),
    (3, 5),
    (3, 6),
    (4, 4),
    (4, 5),
    (4, 6),
    (5, 5),
    (5, 6),
    (6, 6),
];

/// Voigt index (1..=6) of an unordered axis pair, axes 0-based:
/// 00 -> 1, 11 -> 2, 22 -> 3, 12/21 -> 4, 02/20 -> 5, 01/10 -> 6.
pub fn voigt(i: usize, j: usize) -> usize {
    debug_assert!(i < 3 && j < 3);
    if i == j {
        i + 1
    } else {
        6 - (i + j - 1)
    }
}

/// Storage slot for the Voigt pair (a, b), either order, 1-based.
pub fn voigt_slot(a: usize, b: usize) -> usize {
    debug_assert!((1..=6).contains(&a) && (1..=6).contains(&b));
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    (a - 1) * (14 - a) / 2 + (b - a)
}

fn slot_of(i: usize, j: usize, k: usize, l: usize) -> usize {
    voigt_slot(voigt(i, j), voigt(k, l))
}

/// Fourth-order stiffness perturbation field with the full elastic
/// symmetries. Every component is compact-in-Omega; the constructors
/// enforce that, so contractions can always take the spectral backend.
#[derive(Debug, Clone)]
pub struct TensorField {
    grid: Grid,
    comps: Vec<ScalarField>,
}

impl TensorField {
    pub fn zeros(grid: Grid) -> Self {
        let comps = (0..21)
            .map(|_| ScalarField::zeros(grid, Support::CompactOmega))
            .collect();
        TensorField { grid, comps }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Component by Voigt pair, either order.
    pub fn comp(&self, a: usize, b: usize) -> &ScalarField {
        &self.comps[voigt_slot(a, b)]
    }

    /// Full four-index accessor, axes 0-based. Resolves through
    /// c_{ijkl} = c_{jikl} = c_{klij} by construction.
    pub fn c(&self, i: usize, j: usize, k: usize, l: usize) -> &ScalarField {
        &self.comps[slot_of(i, j, k, l)]
    }

    /// Replace one Voigt component. The compact-support invariant is
    /// what licenses spectral contractions, so only compact fields on
    /// the right grid are accepted.
    pub fn set(&mut self, a: usize, b: usize, f: ScalarField) -> Result<(), ElasticError> {
        if f.grid() != self.grid {
            return Err(ElasticError::GridMismatch(format!(
                "component ({a},{b}) grid n = {} vs tensor n = {}",
                f.grid().n(),
                self.grid.n()
            )));
        }
        if f.support() != Support::CompactOmega {
            return Err(ElasticError::Field(
                fieldbox::FieldError::SupportViolation(format!(
                    "tensor component ({a},{b}) must be compact-in-Omega, got {}",
                    f.support().as_str()
                )),
            ));
        }
        self.comps[voigt_slot(a, b)] = f;
        Ok(())
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.add(b))
            .collect();
        TensorField { grid: self.grid, comps }
    }

    pub fn scaled(&self, c: f64) -> TensorField {
        let comps = self.comps.iter().map(|f| f.scaled(c)).collect();
        TensorField { grid: self.grid, comps }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    fn slot_is_zero(&self, slot: usize) -> bool {
        self.comps[slot].values().iter().all(|&v| v == 0.0)
    }
}

/// isotropic stiffness: lam * d_ij d_kl + mu * (d_ik d_jl + d_il d_jk).
/// In Voigt terms the diagonal blocks are lam + 2 mu, the off-diagonal
/// normal block is lam, and the shear diagonal is mu.
pub fn make_isotropic(lam: &ScalarField, mu: &ScalarField) -> Result<TensorField, ElasticError> {
    if lam.grid() != mu.grid() {
        return Err(ElasticError::GridMismatch(
            "isotropic moduli on different grids".into(),
        ));
    }
    let mut t = TensorField::zeros(lam.grid());
    let lam2mu = {
        let mut f = lam.clone();
        f.axpy(2.0, mu);
        f
    };
    for a in 1..=3 {
        t.set(a, a, lam2mu.clone())?;
    }
    t.set(1, 2, lam.clone())?;
    t.set(1, 3, lam.clone())?;
    t.set(2, 3, lam.clone())?;
    for a in 4..=6 {
        t.set(a, a, mu.clone())?;
    }
    Ok(t)
}

/// Full material perturbation: stiffness plus density, 22 scalar
/// degrees of freedom. When built isotropically the generating moduli
/// are kept alongside, so the isotropic pipeline can read them back
/// without re-deriving them from Voigt components.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub c: TensorField,
    pub rho: ScalarField,
    iso: Option<(ScalarField, ScalarField)>,
}

impl Perturbation {
    pub fn new(c: TensorField, rho: ScalarField) -> Result<Self, ElasticError> {
        if rho.grid() != c.grid() {
            return Err(ElasticError::GridMismatch("rho grid vs tensor grid".into()));
        }
        if rho.support() != Support::CompactOmega {
            return Err(ElasticError::Field(
                fieldbox::FieldError::SupportViolation(format!(
                    "rho must be compact-in-Omega, got {}",
                    rho.support().as_str()
                )),
            ));
        }
        Ok(Perturbation { c, rho, iso: None })
    }

    pub fn zeros(grid: Grid) -> Self {
        Perturbation {
            c: TensorField::zeros(grid),
            rho: ScalarField::zeros(grid, Support::CompactOmega),
            iso: None,
        }
    }

    pub fn isotropic(
        lam: &ScalarField,
        mu: &ScalarField,
        rho: ScalarField,
    ) -> Result<Self, ElasticError> {
        let c = make_isotropic(lam, mu)?;
        let mut p = Perturbation::new(c, rho)?;
        p.iso = Some((lam.clone(), mu.clone()));
        Ok(p)
    }

    pub fn grid(&self) -> Grid {
        self.c.grid()
    }

    /// The generating (lambda, mu) pair, present only when the
    /// perturbation was constructed isotropically.
    pub fn iso(&self) -> Option<(&ScalarField, &ScalarField)> {
        self.iso.as_ref().map(|(l, m)| (l, m))
    }

    pub fn add(&self, other: &Perturbation) -> Result<Perturbation, ElasticError> {
        if self.grid() != other.grid() {
            return Err(ElasticError::GridMismatch("perturbation sum".into()));
        }
        let iso = match (&self.iso, &other.iso) {
            (Some((la, ma)), Some((lb, mb))) => Some((la.add(lb), ma.add(mb))),
            _ => None,
        };
        Ok(Perturbation {
            c: self.c.add(&other.c),
            rho: self.rho.add(&other.rho),
            iso,
        })
    }

    pub fn scaled(&self, s: f64) -> Perturbation {
        Perturbation {
            c: self.c.scaled(s),
            rho: self.rho.scaled(s),
            iso: self
                .iso
                .as_ref()
                .map(|(l, m)| (l.scaled(s), m.scaled(s))),
        }
    }
}

fn div_flags(div_slots: &[usize]) -> Result<(bool, bool), ElasticError> {
    let mut first = false;
    let mut second = false;
    for &s in div_slots {
        let flag = match s {
            1 => &mut first,
            2 => &mut second,
            _ => {
                return Err(ElasticError::BadSlots(format!(
                    "divergence slots index the first two contractions, got {s}"
                )))
            }
        };
        if *flag {
            return Err(ElasticError::BadSlots(format!("slot {s} repeated")));
        }
        *flag = true;
    }
    Ok((first, second))
}

/// Accumulate coefficient-per-(slot, derivative) over the 81 index
/// tuples, then differentiate each distinct component once. BTreeMap
/// keeps the accumulation order fixed, so results are reproducible
/// bit for bit across runs.
fn contract_terms(
    t: &TensorField,
    terms: BTreeMap<(usize, [u8; 3]), f64>,
    backend: Backend,
) -> Result<ScalarField, ElasticError> {
    let mut acc = ScalarField::zeros(t.grid(), Support::CompactOmega);
    for ((slot, beta), coef) in terms {
        if coef == 0.0 || t.slot_is_zero(slot) {
            continue;
        }
        let g = diff(&t.comps[slot], beta, backend)?;
        acc.axpy(coef, &g);
    }
    Ok(acc)
}

/// Scalar contraction sum_{ijkl} c_{ijkl} a_i b_j c_k d_l, with the
/// option of replacing either of the first two vector slots by a
/// divergence: div_slots = [1] gives sum d_i c_{ijkl} b_j c_k d_l and
/// div_slots = [1, 2] gives sum d_i d_j c_{ijkl} c_k d_l.
///
/// The backend is the caller's choice: spectral when the surrounding
/// composition stays compact, fd once a ray integration upstream has
/// widened the support.
pub fn contract(
    t: &TensorField,
    a: [f64; 3],
    b: [f64; 3],
    cv: [f64; 3],
    d: [f64; 3],
    div_slots: &[usize],
    backend: Backend,
) -> Result<ScalarField, ElasticError> {
    let (div1, div2) = div_flags(div_slots)?;
    let mut terms: BTreeMap<(usize, [u8; 3]), f64> = BTreeMap::new();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let factor = (if div1 { 1.0 } else { a[i] })
                        * (if div2 { 1.0 } else { b[j] })
                        * cv[k]
                        * d[l];
                    if factor == 0.0 {
                        continue;
                    }
                    let mut beta = [0u8; 3];
                    if div1 {
                        beta[i] += 1;
                    }
                    if div2 {
                        beta[j] += 1;
                    }
                    *terms.entry((slot_of(i, j, k, l), beta)).or_insert(0.0) += factor;
                }
            }
        }
    }
    contract_terms(t, terms, backend)
}

/// Vector contraction with the first index free:
/// V_p = sum_{jkl} c_{pjkl} b_j c_k d_l. Divergence slots follow the
/// argument positions: 1 replaces b by d_j, 2 replaces c by d_k.
pub fn contract_vec(
    t: &TensorField,
    b: [f64; 3],
    cv: [f64; 3],
    d: [f64; 3],
    div_slots: &[usize],
    backend: Backend,
) -> Result<VectorField, ElasticError> {
    let (div1, div2) = div_flags(div_slots)?;
    let mut comps = Vec::with_capacity(3);
    for p in 0..3 {
        let mut terms: BTreeMap<(usize, [u8; 3]), f64> = BTreeMap::new();
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let factor = (if div1 { 1.0 } else { b[j] })
                        * (if div2 { 1.0 } else { cv[k] })
                        * d[l];
                    if factor == 0.0 {
                        continue;
                    }
                    let mut beta = [0u8; 3];
                    if div1 {
                        beta[j] += 1;
                    }
                    if div2 {
                        beta[k] += 1;
                    }
                    *terms.entry((slot_of(p, j, k, l), beta)).or_insert(0.0) += factor;
                }
            }
        }
        comps.push(contract_terms(t, terms, backend)?);
    }
    let comps: [ScalarField; 3] = comps.try_into().expect("three components");
    Ok(VectorField::new(comps))
}

/// (curl V)_i = eps_{ijk} d_j V_k. The sign convention is fixed here
/// once; every transcription that meets a cross product is normalized
/// to it.
pub fn curl(v: &VectorField, backend: Backend) -> Result<VectorField, ElasticError> {
    let grid = v.grid();
    let mut comps = Vec::with_capacity(3);
    for i in 0..3 {
        let mut acc = ScalarField::zeros(grid, v.comps[0].support());
        for j in 0..3 {
            for k in 0..3 {
                let e = eps(i, j, k);
                if e == 0.0 {
                    continue;
                }
                let mut beta = [0u8; 3];
                beta[j] = 1;
                acc.axpy(e, &diff(&v.comps[k], beta, backend)?);
            }
        }
        comps.push(acc);
    }
    let comps: [ScalarField; 3] = comps.try_into().expect("three components");
    Ok(VectorField::new(comps))
}

fn check_permutation(sigma: [usize; 3]) -> Result<(), ElasticError> {
    let mut seen = [false; 3];
    for &s in &sigma {
        if s > 2 || seen[s] {
            return Err(ElasticError::BadPermutation(sigma));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Relabel grid axes by sigma: the result g satisfies
/// g(y) = f(x) with x_a = y_{sigma(a)}, i.e. axis a of f becomes axis
/// sigma(a) of g. Pure data relabeling, bit-exact.
pub fn permute_field(f: &ScalarField, sigma: [usize; 3]) -> Result<ScalarField, ElasticError> {
    check_permutation(sigma)?;
    let grid = f.grid();
    let vals = f.values();
    let mut out = vec![0.0; grid.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let y = grid.unravel(idx);
        *o = vals[grid.index(y[sigma[0]], y[sigma[1]], y[sigma[2]])];
    }
    Ok(ScalarField::from_values(grid, f.support(), out)?)
}

/// Axis relabeling as a group action on perturbations: components move
/// to c_{sigma(i) sigma(j) sigma(k) sigma(l)} and every field's grid
/// data is permuted to match, so contractions against permuted axis
/// vectors reproduce permuted contractions exactly.
pub fn permute_axes(p: &Perturbation, sigma: [usize; 3]) -> Result<Perturbation, ElasticError> {
    check_permutation(sigma)?;
    let mut c = TensorField::zeros(p.grid());
    for (slot, &(a, b)) in VOIGT_PAIRS.iter().enumerate() {
        // representative four-tuple of the source slot
        let (i, j) = pair_of_voigt(a);
        let (k, l) = pair_of_voigt(b);
        let ta = voigt(sigma[i], sigma[j]);
        let tb = voigt(sigma[k], sigma[l]);
        c.set(ta, tb, permute_field(&p.c.comps[slot], sigma)?)?;
    }
    let rho = permute_field(&p.rho, sigma)?;
    let iso = match &p.iso {
        Some((l, m)) => Some((permute_field(l, sigma)?, permute_field(m, sigma)?)),
        None => None,
    };
    let mut out = Perturbation::new(c, rho)?;
    out.iso = iso;
    Ok(out)
}

/// Inverse of `voigt`: a representative 0-based axis pair.
fn pair_of_voigt(a: usize) -> (usize, usize) {
    match a {
        1 => (0, 0),
        2 => (1, 1),
        3 => (2, 2),
        4 => (1, 2),
        5 => (0, 2),
        _ => (0, 1),
    }
}

/// One signed radial bump with parameters drawn from fixed ranges:
/// radius U(0.55, 0.85), center uniformly directed with length
/// U(0, 0.95 - r), amplitude +-U(0.5, 1.5). Center length plus radius
/// stays <= 0.95, leaving a margin inside Omega.
fn random_bump(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let r = rng.gen_range(0.55..0.85);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let cos_t: f64 = rng.gen_range(-1.0..1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let len = rng.gen_range(0.0..(0.95 - r));
    let center = [
        len * sin_t * phi.cos(),
        len * sin_t * phi.sin(),
        len * cos_t,
    ];
    let a = rng.gen_range(0.5..1.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    ScalarField::bump(grid, center, r, a).expect("|center| + r <= 0.95 by construction")
}

/// Fully anisotropic random perturbation: one independent bump in each
/// of the 21 Voigt components and in rho. Deterministic per seed
/// (ChaCha8; draws in VOIGT_PAIRS order, rho last).
pub fn random_perturbation(grid: Grid, seed: u64) -> Perturbation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = TensorField::zeros(grid);
    for &(a, b) in VOIGT_PAIRS.iter() {
        let f = random_bump(grid, &mut rng);
        c.set(a, b, f).expect("bump is compact on the same grid");
    }
    let rho = random_bump(grid, &mut rng);
    Perturbation::new(c, rho).expect("compact by construction")
}

/// Random isotropic triple (lambda, mu, rho), same parameter ranges as
/// `random_perturbation`, draws in that order.
pub fn random_isotropic(grid: Grid, seed: u64) -> Perturbation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam = random_bump(grid, &mut rng);
    let mu = random_bump(grid, &mut rng);
    let rho = random_bump(grid, &mut rng);
    Perturbation::isotropic(&lam, &mu, rho).expect("compact by construction")
}
