//! The zero-data identity system as a frequency-domain matrix on the
//! 22 perturbation parameters (21 Voigt stiffness components plus
//! density), with a numerical uniqueness certificate and a replay of
//! the component-by-component elimination argument.
//!
//! Every identity forced by vanishing scattered data is a
//! constant-coefficient differential relation among the perturbation
//! components, so under the Fourier transform the whole system
//! decouples per frequency: uniqueness is exactly the statement that
//! the assembled m x 22 symbol matrix M(xi) has trivial kernel at
//! every (generic) xi. The templates below transcribe the channel
//! identity families with propagation axis theta and polarization
//! alpha kept symbolic; instancing them over the coordinate axes (the
//! ordered transverse pairs for the S channels) yields the full
//! 51-row inventory. Redundant rows are kept: they cost nothing in
//! the singular-value analysis and cross-check the transcription.
//!
//! Frequencies on coordinate planes are excluded by a guard; the
//! compact-support (Paley-Wiener) argument that handles them in
//! closed form has no per-frequency analogue.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};
use num_complex::Complex64;

use fieldbox::{diff, golden_sphere, Backend, MultiIndex, ScalarField, Support};

use crate::error::ElasticError;
use crate::tensor::{voigt, voigt_slot, Background, Perturbation, VOIGT_PAIRS};

/// Minimum of |xi_a| / |xi| tolerated before a frequency counts as
/// degenerate (too close to a coordinate plane).
pub const DEGENERACY_GUARD: f64 = 0.05;

/// Kernel certificate passes iff every sample's sigma_min clears this.
pub const KERNEL_TOL: f64 = 1e-6;

/// Elimination replay passes iff every target's rowspace-projection
/// residual is at most this.
pub const ELIMINATION_TOL: f64 = 1e-8;

/// Singular values below this fraction of sigma_max do not count
/// toward the rowspace when projecting elimination targets.
pub const ROWSPACE_RANK_CUT: f64 = 1e-7;

/// Column index of the density component; 0..=20 are the Voigt slots.
pub const RHO_COL: usize = 21;

fn col_of(i: usize, j: usize, k: usize, l: usize) -> usize {
    voigt_slot(voigt(i, j), voigt(k, l))
}

fn eps_f(i: usize, j: usize, k: usize) -> f64 {
    crate::tensor::eps(i, j, k)
}

/// A validated frequency: within the sampling band and off the
/// coordinate planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySample {
    xi: [f64; 3],
}

impl FrequencySample {
    pub fn new(xi: [f64; 3]) -> Result<Self, ElasticError> {
        let r = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
        if !(0.5..=2.0).contains(&r) {
            return Err(ElasticError::DegenerateFrequency(format!(
                "|xi| = {r:.3e} outside the sampling band [0.5, 2]"
            )));
        }
        let min_c = xi.iter().map(|c| c.abs()).fold(f64::INFINITY, f64::min);
        if min_c < DEGENERACY_GUARD * r {
            return Err(ElasticError::DegenerateFrequency(format!(
                "xi = {xi:?} too close to a coordinate plane (min |xi_a| = {min_c:.3e})"
            )));
        }
        Ok(FrequencySample { xi })
    }

    pub fn xi(&self) -> [f64; 3] {
        self.xi
    }
}

/// The first `count` guard-compliant points of the deterministic
/// golden-angle lattice on the unit sphere.
pub fn sphere_samples(count: usize) -> Vec<FrequencySample> {
    golden_sphere(2 * count + 64, 1.0)
        .filter_map(|xi| FrequencySample::new(xi).ok())
        .take(count)
        .collect()
}

/// Which template a row instantiates; axes are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowId {
    /// P transport identity, propagation axis t.
    Pp { t: usize },
    /// SP first-order (transport-side) identity.
    Sp1 { t: usize, a: usize },
    /// SP second-order (Laplacian-side) identity.
    Sp2 { t: usize, a: usize },
    /// PS leading-trace identity, observed component i.
    Ps1 { t: usize, i: usize },
    /// PS Laplacian identity, observed component i.
    Ps2 { t: usize, i: usize },
    /// SS fourth-order identity, observed component i.
    Ss { t: usize, a: usize, i: usize },
    /// Consequence of the elimination chain, not a primitive identity.
    Derived,
}

/// One identity as a sparse row of differential monomials:
/// (column, derivative multi-index, real coefficient).
#[derive(Debug, Clone)]
pub struct Row {
    pub label: String,
    pub id: RowId,
    terms: Vec<(usize, MultiIndex, f64)>,
}

impl Row {
    /// Symbol of the row at frequency xi: each d^beta becomes
    /// (i xi)^beta.
    pub fn symbol(&self, xi: [f64; 3]) -> [Complex64; 22] {
        let mut out = [Complex64::new(0.0, 0.0); 22];
        for &(col, beta, c) in &self.terms {
            let deg = (beta[0] + beta[1] + beta[2]) as u32;
            let mono = xi[0].powi(beta[0] as i32)
                * xi[1].powi(beta[1] as i32)
                * xi[2].powi(beta[2] as i32);
            let phase = match deg % 4 {
                0 => Complex64::new(1.0, 0.0),
                1 => Complex64::new(0.0, 1.0),
                2 => Complex64::new(-1.0, 0.0),
                _ => Complex64::new(0.0, -1.0),
            };
            out[col] += phase * (c * mono);
        }
        out
    }

    /// Physical-space evaluation against a perturbation; derivative
    /// fields are memoized per (column, multi-index) across rows.
    pub fn field(
        &self,
        p: &Perturbation,
        backend: Backend,
        memo: &mut BTreeMap<(usize, MultiIndex), ScalarField>,
    ) -> Result<ScalarField, ElasticError> {
        let mut acc = ScalarField::zeros(p.grid(), Support::CompactOmega);
        for &(col, beta, c) in &self.terms {
            if !memo.contains_key(&(col, beta)) {
                let src = if col == RHO_COL {
                    &p.rho
                } else {
                    let (a, b) = VOIGT_PAIRS[col];
                    p.c.comp(a, b)
                };
                memo.insert((col, beta), diff(src, beta, backend)?);
            }
            acc.axpy(c, &memo[&(col, beta)]);
        }
        Ok(acc)
    }
}

// ---- differential-operator polynomials --------------------------------

#[derive(Debug, Clone, Default)]
struct DiffPoly(BTreeMap<MultiIndex, f64>);

impl DiffPoly {
    fn unit() -> Self {
        let mut m = BTreeMap::new();
        m.insert([0, 0, 0], 1.0);
        DiffPoly(m)
    }

    fn d(axis: usize) -> Self {
        let mut beta = [0u8; 3];
        beta[axis] = 1;
        let mut m = BTreeMap::new();
        m.insert(beta, 1.0);
        DiffPoly(m)
    }

    fn lap() -> Self {
        let mut m = BTreeMap::new();
        for a in 0..3 {
            let mut beta = [0u8; 3];
            beta[a] = 2;
            m.insert(beta, 1.0);
        }
        DiffPoly(m)
    }

    fn mul(&self, other: &DiffPoly) -> DiffPoly {
        let mut m = BTreeMap::new();
        for (b1, c1) in &self.0 {
            for (b2, c2) in &other.0 {
                let b = [b1[0] + b2[0], b1[1] + b2[1], b1[2] + b2[2]];
                *m.entry(b).or_insert(0.0) += c1 * c2;
            }
        }
        DiffPoly(m)
    }
}

#[derive(Default)]
struct RowBuilder {
    terms: BTreeMap<(usize, MultiIndex), f64>,
}

impl RowBuilder {
    fn add(&mut self, col: usize, op: &DiffPoly, coef: f64) {
        if coef == 0.0 {
            return;
        }
        for (&beta, &c) in &op.0 {
            *self.terms.entry((col, beta)).or_insert(0.0) += coef * c;
        }
    }

    fn finish(self, label: String, id: RowId) -> Row {
        let terms = self
            .terms
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|((col, beta), c)| (col, beta, c))
            .collect();
        Row { label, id, terms }
    }
}

/// Ordered transverse axis pairs (theta, alpha) used to instance the
/// S-incidence families.
pub const AXIS_PAIRS: [(usize, usize); 6] = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)];

/// The 51-row identity inventory: 3 PP + 12 SP + 18 PS + 18 SS.
pub fn identity_rows(bg: &Background) -> Vec<Row> {
    let (cp2, cs2) = (bg.cp2(), bg.cs2());
    let big_r = cp2 / (cp2 - cs2);
    let r_s = cs2 / (cp2 - cs2);
    let lap = DiffPoly::lap();
    let lap2 = lap.mul(&lap);
    let mut rows = Vec::with_capacity(51);

    // PP(t): 4 (th.grad)^2 d_i d_j c_ijtt + lap^2 c_tttt - cp^2 lap^2 rho
    //        - 4 (th.grad) lap d_i c_ittt + 2 cp^2 (th.grad)^2 lap rho
    for t in 0..3 {
        let dt = DiffPoly::d(t);
        let dt2 = dt.mul(&dt);
        let mut b = RowBuilder::default();
        for i in 0..3 {
            for j in 0..3 {
                b.add(col_of(i, j, t, t), &dt2.mul(&DiffPoly::d(i)).mul(&DiffPoly::d(j)), 4.0);
            }
            b.add(col_of(i, t, t, t), &dt.mul(&lap).mul(&DiffPoly::d(i)), -4.0);
        }
        b.add(col_of(t, t, t, t), &lap2, 1.0);
        b.add(RHO_COL, &lap2, -cp2);
        b.add(RHO_COL, &dt2.mul(&lap), 2.0 * cp2);
        rows.push(b.finish(format!("PP(e{})", t + 1), RowId::Pp { t }));
    }

    // SP1(t,a): 2 R (th.grad) c_ttta - 2 d_i c_itta + cs^2 (al.grad) rho
    // SP2(t,a): R lap c_ttta - d_i d_j c_ijta
    for &(t, a) in &AXIS_PAIRS {
        let mut b = RowBuilder::default();
        b.add(col_of(t, t, t, a), &DiffPoly::d(t), 2.0 * big_r);
        for i in 0..3 {
            b.add(col_of(i, t, t, a), &DiffPoly::d(i), -2.0);
        }
        b.add(RHO_COL, &DiffPoly::d(a), cs2);
        rows.push(b.finish(format!("SP1(e{},e{})", t + 1, a + 1), RowId::Sp1 { t, a }));

        let mut b = RowBuilder::default();
        b.add(col_of(t, t, t, a), &lap, big_r);
        for i in 0..3 {
            for j in 0..3 {
                b.add(col_of(i, j, t, a), &DiffPoly::d(i).mul(&DiffPoly::d(j)), -1.0);
            }
        }
        rows.push(b.finish(format!("SP2(e{},e{})", t + 1, a + 1), RowId::Sp2 { t, a }));
    }

    // PS1(t,i): -2 r_s e_ipt (th.grad) c_pttt - e_ipq d_q c_pttt
    //           - e_ipt d_j c_pjtt + cp^2 e_itq d_q rho
    // PS2(t,i): r_s e_ipt lap c_pttt + e_ipq d_q d_j c_pjtt
    for t in 0..3 {
        for i in 0..3 {
            let mut b = RowBuilder::default();
            for p in 0..3 {
                b.add(col_of(p, t, t, t), &DiffPoly::d(t), -2.0 * r_s * eps_f(i, p, t));
                for q in 0..3 {
                    b.add(col_of(p, t, t, t), &DiffPoly::d(q), -eps_f(i, p, q));
                }
                for j in 0..3 {
                    b.add(col_of(p, j, t, t), &DiffPoly::d(j), -eps_f(i, p, t));
                }
            }
            for q in 0..3 {
                b.add(RHO_COL, &DiffPoly::d(q), cp2 * eps_f(i, t, q));
            }
            rows.push(b.finish(format!("PS1(e{},i{})", t + 1, i + 1), RowId::Ps1 { t, i }));

            let mut b = RowBuilder::default();
            for p in 0..3 {
                b.add(col_of(p, t, t, t), &lap, r_s * eps_f(i, p, t));
                for q in 0..3 {
                    for j in 0..3 {
                        b.add(
                            col_of(p, j, t, t),
                            &DiffPoly::d(q).mul(&DiffPoly::d(j)),
                            eps_f(i, p, q),
                        );
                    }
                }
            }
            rows.push(b.finish(format!("PS2(e{},i{})", t + 1, i + 1), RowId::Ps2 { t, i }));
        }
    }

    // SS(t,a,i): 4 e_ipq (th.grad)^2 d_q d_j c_pjta + e_ipt lap^2 c_ptta
    //            - cs^2 e_iat lap^2 rho - 2 e_ipq (th.grad) lap d_q c_ptta
    //            - 2 e_ipt (th.grad) lap d_j c_pjta
    //            + 2 cs^2 e_iaq (th.grad) lap d_q rho
    for &(t, a) in &AXIS_PAIRS {
        for i in 0..3 {
            let dt = DiffPoly::d(t);
            let dt2 = dt.mul(&dt);
            let dt_lap = dt.mul(&lap);
            let mut b = RowBuilder::default();
            for p in 0..3 {
                for q in 0..3 {
                    for j in 0..3 {
                        b.add(
                            col_of(p, j, t, a),
                            &dt2.mul(&DiffPoly::d(q)).mul(&DiffPoly::d(j)),
                            4.0 * eps_f(i, p, q),
                        );
                    }
                    b.add(
                        col_of(p, t, t, a),
                        &dt_lap.mul(&DiffPoly::d(q)),
                        -2.0 * eps_f(i, p, q),
                    );
                }
                b.add(col_of(p, t, t, a), &lap2, eps_f(i, p, t));
                for j in 0..3 {
                    b.add(
                        col_of(p, j, t, a),
                        &dt_lap.mul(&DiffPoly::d(j)),
                        -2.0 * eps_f(i, p, t),
                    );
                }
            }
            b.add(RHO_COL, &lap2, -cs2 * eps_f(i, a, t));
            for q in 0..3 {
                b.add(RHO_COL, &dt_lap.mul(&DiffPoly::d(q)), 2.0 * cs2 * eps_f(i, a, q));
            }
            rows.push(b.finish(
                format!("SS(e{},e{},i{})", t + 1, a + 1, i + 1),
                RowId::Ss { t, a, i },
            ));
        }
    }

    rows
}

/// Pointwise consequences of the elimination chain, evaluated
/// alongside the primitive identities but never added to the matrix.
pub fn derived_rows(bg: &Background) -> Vec<Row> {
    let cs2 = bg.cs2();
    let unit = DiffPoly::unit();

    let mut b = RowBuilder::default();
    b.add(col_of(0, 0, 0, 1), &unit, 1.0);
    b.add(col_of(1, 1, 1, 0), &unit, -1.0);
    let r1 = b.finish("c1112-c2221".to_string(), RowId::Derived);

    let mut b = RowBuilder::default();
    b.add(col_of(0, 1, 0, 1), &unit, 2.0);
    b.add(RHO_COL, &unit, -cs2);
    let r2 = b.finish("2c1212-cs2*rho".to_string(), RowId::Derived);

    vec![r1, r2]
}

// ---- symbol matrix -----------------------------------------------------

/// The identity system at one frequency, rows scaled to unit sup-norm.
#[derive(Debug, Clone)]
pub struct SymbolMatrix {
    pub xi: [f64; 3],
    pub labels: Vec<String>,
    pub ids: Vec<RowId>,
    pub m: DMatrix<Complex64>,
    /// sup-norm of each raw row, divided out of `m`.
    pub scales: Vec<f64>,
}

pub fn symbol_matrix(xi: &FrequencySample, bg: &Background) -> SymbolMatrix {
    matrix_from_rows(xi.xi(), &identity_rows(bg))
}

pub(crate) fn matrix_from_rows(xi: [f64; 3], rows: &[Row]) -> SymbolMatrix {
    let mut labels = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    let mut scales = Vec::with_capacity(rows.len());
    let mut m = DMatrix::<Complex64>::zeros(rows.len(), 22);
    for (r, row) in rows.iter().enumerate() {
        let sym = row.symbol(xi);
        let sup = sym.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let scale = if sup > 0.0 { sup } else { 1.0 };
        for c in 0..22 {
            m[(r, c)] = sym[c] / scale;
        }
        labels.push(row.label.clone());
        ids.push(row.id);
        scales.push(scale);
    }
    SymbolMatrix { xi, labels, ids, m, scales }
}

impl SymbolMatrix {
    pub fn sigma_min(&self) -> f64 {
        let sv = self.m.clone().singular_values();
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Copy with only the rows whose label passes the filter; for the
    /// crippled-system experiments.
    pub fn retain_rows(&self, keep: impl Fn(&str) -> bool) -> SymbolMatrix {
        let idx: Vec<usize> = (0..self.labels.len()).filter(|&r| keep(&self.labels[r])).collect();
        let mut m = DMatrix::<Complex64>::zeros(idx.len(), 22);
        for (r_new, &r_old) in idx.iter().enumerate() {
            for c in 0..22 {
                m[(r_new, c)] = self.m[(r_old, c)];
            }
        }
        SymbolMatrix {
            xi: self.xi,
            labels: idx.iter().map(|&r| self.labels[r].clone()).collect(),
            ids: idx.iter().map(|&r| self.ids[r]).collect(),
            m,
            scales: idx.iter().map(|&r| self.scales[r]).collect(),
        }
    }

    /// Relative least-squares residual of projecting a real target row
    /// onto the rowspace (singular vectors above the rank cut).
    pub fn rowspace_residual(&self, target: &[f64; 22]) -> f64 {
        let t = DVector::<Complex64>::from_fn(22, |i, _| Complex::new(target[i], 0.0));
        let tn = t.norm();
        if tn == 0.0 {
            return 0.0;
        }
        // rowspace of M = range of M^H
        let svd = self.m.adjoint().svd(true, false);
        let u = svd.u.as_ref().expect("svd with u requested");
        let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
        let cut = ROWSPACE_RANK_CUT * smax;
        let mut proj = DVector::<Complex64>::zeros(22);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > cut {
                let uk = u.column(k);
                let coef = uk.dotc(&t);
                proj += uk * coef;
            }
        }
        (&t - proj).norm() / tn
    }
}

// ---- kernel certificate ------------------------------------------------

#[derive(Debug, Clone)]
pub struct KernelSample {
    pub xi: [f64; 3],
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct KernelReport {
    pub samples: Vec<KernelSample>,
    pub min_sigma: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// sigma_min of the normalized system at every sample; PASS iff the
/// global minimum clears KERNEL_TOL. A trivial kernel at every
/// frequency is the uniqueness statement itself.
pub fn kernel_certificate(samples: &[FrequencySample], bg: &Background) -> KernelReport {
    let rows = identity_rows(bg);
    let mut out = Vec::with_capacity(samples.len());
    let mut min_sigma = f64::INFINITY;
    for s in samples {
        let sm = matrix_from_rows(s.xi(), &rows).sigma_min();
        min_sigma = min_sigma.min(sm);
        out.push(KernelSample { xi: s.xi(), sigma_min: sm });
    }
    KernelReport {
        samples: out,
        min_sigma,
        tolerance: KERNEL_TOL,
        pass: min_sigma > KERNEL_TOL,
    }
}

// ---- elimination replay ------------------------------------------------

#[derive(Debug, Clone)]
pub struct EliminationStep {
    pub target: String,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EliminationReport {
    pub xi: [f64; 3],
    pub steps: Vec<EliminationStep>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn unit_target(col: usize) -> [f64; 22] {
    let mut t = [0.0; 22];
    t[col] = 1.0;
    t
}

fn voigt_name(slot: usize) -> String {
    let (a, b) = VOIGT_PAIRS[slot];
    format!("c{a}{b}")
}

/// The elimination chain's conclusions as target rows, in derivation
/// order, ending with every unit row (full determination).
pub fn elimination_targets(bg: &Background) -> Vec<(String, [f64; 22])> {
    let cs2 = bg.cs2();
    let mut targets = Vec::new();

    let mut t = [0.0; 22];
    t[col_of(0, 0, 0, 1)] = 1.0;
    t[col_of(1, 1, 1, 0)] = -1.0;
    targets.push(("c1112-c2221".to_string(), t));

    let mut t = [0.0; 22];
    t[col_of(0, 1, 0, 1)] = 2.0;
    t[RHO_COL] = -cs2;
    targets.push(("2c1212-cs2*rho".to_string(), t));

    targets.push(("rho".to_string(), unit_target(RHO_COL)));
    for (name, col) in [
        ("c2312", col_of(1, 2, 0, 1)),
        ("c3112", col_of(2, 0, 0, 1)),
        ("c1112", col_of(0, 0, 0, 1)),
        ("c2221", col_of(1, 1, 1, 0)),
        ("c3312", col_of(2, 2, 0, 1)),
        ("c1111", col_of(0, 0, 0, 0)),
        ("c2211", col_of(1, 1, 0, 0)),
        ("c3311", col_of(2, 2, 0, 0)),
    ] {
        targets.push((name.to_string(), unit_target(col)));
    }

    for slot in 0..21 {
        targets.push((format!("unit {}", voigt_name(slot)), unit_target(slot)));
    }
    targets.push(("unit rho".to_string(), unit_target(RHO_COL)));

    targets
}

/// Replays the elimination argument at one frequency: every
/// conclusion it reaches must already lie in the rowspace of the
/// primitive identity system there.
pub fn elimination_replay(xi: &FrequencySample, bg: &Background) -> EliminationReport {
    let m = symbol_matrix(xi, bg);
    let mut steps = Vec::new();
    let mut max_residual = 0.0f64;
    for (target, t) in elimination_targets(bg) {
        let residual = m.rowspace_residual(&t);
        max_residual = max_residual.max(residual);
        steps.push(EliminationStep { target, residual, pass: residual <= ELIMINATION_TOL });
    }
    EliminationReport {
        xi: xi.xi(),
        steps,
        max_residual,
        tolerance: ELIMINATION_TOL,
        pass: max_residual <= ELIMINATION_TOL,
    }
}

// ---- physical-space evaluation ------------------------------------------

/// Evaluate every identity (and the derived pointwise consequences)
/// against a perturbation. Zero perturbations annihilate all of them;
/// generic ones do not: the identities characterize the zero-data
/// kernel, not all inputs.
pub fn evaluate_zero_data_identities(
    p: &Perturbation,
    bg: &Background,
    backend: Backend,
) -> Result<BTreeMap<String, ScalarField>, ElasticError> {
    let mut memo = BTreeMap::new();
    let mut out = BTreeMap::new();
    for row in identity_rows(bg).iter().chain(derived_rows(bg).iter()) {
        out.insert(row.label.clone(), row.field(p, backend, &mut memo)?);
    }
    Ok(out)
}
