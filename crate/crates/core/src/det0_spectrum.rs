//! Degenerate twist (one zero eigenvalue): orthogonal SoV bases, interpolated transfer-matrix
//! actions on them, eigenstate wave functions, separate states and the determinant formulas
//! for their scalar products.

use serde::Serialize;

use crate::error::{Result, SovError};
use crate::gl3_model::{transfer, ModelParams, TwistData};
use crate::numkernel::{cr, eig_general, EigenDecomposition, pair, rel_err, vandermonde, vec_max_abs, CMatrix, C64, TAU};
use crate::sov_bases::{Side, SovBasisPair, TernaryIndex};
use crate::sov_measure::diag_formula;

/// Relative threshold separating zero from nonzero eigenvalue samples.
pub const THETA: f64 = 1e-6;

/// Sets the smallest Jordan eigenvalue (the whole block in cases ii/iii) to zero, keeping W.
pub fn make_khat(twist: &TwistData) -> Result<TwistData> {
    let k = [twist.k(0), twist.k(1), twist.k(2)];
    let scale = k.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let small = k.iter().copied().min_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();
    let same = |z: C64| (z - small).norm() <= 1e-12 * scale;
    let mut out = k;
    for z in out.iter_mut() {
        if same(*z) {
            *z = cr(0.0);
        }
    }
    if k.iter().any(|&z| !same(z) && z.norm() < 1e-6 * scale) {
        return Err(SovError::SpectrumCollision);
    }
    twist.with_jordan_diagonal(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct OrthoReport {
    pub sites: usize,
    pub det_k: f64,
    pub scale: f64,
    /// max |<h|k>| / scale over h != k
    pub offdiag_max: f64,
    pub diag_max_rel: f64,
}

impl OrthoReport {
    pub fn passes(&self) -> bool {
        self.offdiag_max <= TAU && self.diag_max_rel <= 1e-8
    }
}

/// Orthogonality of the SoV bases and their diagonal measure for a degenerate twist.
pub fn ortho_suite_det0(p: &ModelParams, bases: &SovBasisPair) -> Result<OrthoReport> {
    if p.twist.c.norm() > TAU {
        return Err(SovError::InvalidParams(format!("det K = {} is not zero", p.twist.c)));
    }
    let g = bases.left.matmul(&bases.right);
    let dim = g.rows();
    let scale = g.max_abs();
    let mut offdiag_max: f64 = 0.0;
    let mut diag_max_rel: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            if i == j {
                diag_max_rel = diag_max_rel.max(rel_err(g[(i, i)], diag_formula(p, &TernaryIndex::from_flat(i, p.sites))));
            } else {
                offdiag_max = offdiag_max.max(g[(i, j)].norm() / scale);
            }
        }
    }
    Ok(OrthoReport { sites: p.sites, det_k: p.twist.c.norm(), scale, offdiag_max, diag_max_rel })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Which {
    T1,
    T2,
}

/// Sparse combination of SoV basis elements.
pub type Expansion = Vec<(TernaryIndex, C64)>;

fn z_of(h: &TernaryIndex) -> Vec<u8> {
    h.digits.iter().map(|&x| (x >= 1) as u8).collect()
}

fn y_of(h: &TernaryIndex) -> Vec<u8> {
    h.digits.iter().map(|&x| (x == 2) as u8).collect()
}

fn left_t2(p: &ModelParams, h: &TernaryIndex, lambda: C64) -> Expansion {
    let z = z_of(h);
    let pre = p.d(lambda - p.eta);
    let mut out = vec![(h.clone(), pre * p.t_inf_h(2, &z, lambda))];
    for a in 0..p.sites {
        if h.digits[a] == 1 {
            out.push((h.with(a, 0), pre * p.g(2, a, &z, lambda)));
        }
    }
    out
}

fn right_t2(p: &ModelParams, h: &TernaryIndex, lambda: C64) -> Expansion {
    let z = z_of(h);
    let pre = p.d(lambda - p.eta);
    let mut out = vec![(h.clone(), pre * p.t_inf_h(2, &z, lambda))];
    for a in 0..p.sites {
        if h.digits[a] == 0 {
            out.push((h.with(a, 1), pre * p.g(2, a, &z, lambda)));
        }
    }
    out
}

fn left_t1(p: &ModelParams, h: &TernaryIndex, lambda: C64) -> Expansion {
    let y = y_of(h);
    let mut out = vec![(h.clone(), p.t_inf_h(1, &y, lambda))];
    for a in 0..p.sites {
        let g = p.g(1, a, &y, lambda);
        match h.digits[a] {
            1 => out.push((h.with(a, 2), g)),
            2 => {
                for (k, v) in left_t2(p, &h.with(a, 1), p.xi[a]) {
                    out.push((k, g * v));
                }
            }
            _ => {}
        }
    }
    out
}

fn right_t1(p: &ModelParams, h: &TernaryIndex, lambda: C64) -> Expansion {
    let y = y_of(h);
    let mut out = vec![(h.clone(), p.t_inf_h(1, &y, lambda))];
    for a in 0..p.sites {
        let g = p.g(1, a, &y, lambda);
        match h.digits[a] {
            0 => out.push((h.with(a, 2), g)),
            2 => out.push((h.with(a, 1), g)),
            _ => {
                for (k, v) in right_t2(p, &h.with(a, 2), p.xi[a]) {
                    out.push((k, g * v));
                }
            }
        }
    }
    out
}

/// Action of T_m(lambda) on <h| (left) or |h> (right) expanded in the SoV basis, valid for a
/// degenerate twist.
pub fn interpolated_action(p: &ModelParams, h: &TernaryIndex, which: Which, side: Side, lambda: C64) -> Expansion {
    match (which, side) {
        (Which::T1, Side::Left) => left_t1(p, h, lambda),
        (Which::T2, Side::Left) => left_t2(p, h, lambda),
        (Which::T1, Side::Right) => right_t1(p, h, lambda),
        (Which::T2, Side::Right) => right_t2(p, h, lambda),
    }
}

/// Largest relative deviation of the expanded action from the dense one over `lambdas`.
pub fn interpolated_action_check(
    p: &ModelParams,
    bases: &SovBasisPair,
    h: &TernaryIndex,
    which: Which,
    side: Side,
    lambdas: &[C64],
) -> Result<f64> {
    let m = match which {
        Which::T1 => 1,
        Which::T2 => 2,
    };
    let mut worst: f64 = 0.0;
    for &l in lambdas {
        let t = transfer(p, m, l)?;
        let dense = match side {
            Side::Left => t.vecmat(&bases.covector(h)),
            Side::Right => t.matvec(&bases.vector(h)),
        };
        let mut acc = vec![cr(0.0); dense.len()];
        for (k, v) in interpolated_action(p, h, which, side, l) {
            let member = match side {
                Side::Left => bases.covector(&k),
                Side::Right => bases.vector(&k),
            };
            for (o, x) in acc.iter_mut().zip(&member) {
                *o += v * x;
            }
        }
        let scale = vec_max_abs(&dense).max(vec_max_abs(&acc)).max(f64::MIN_POSITIVE);
        let diff = dense.iter().zip(&acc).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryRow {
    pub label: &'static str,
    pub lambda: C64,
    pub constant: C64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryReport {
    pub rows: Vec<BoundaryRow>,
    /// Largest relative spread of each extracted constant across lambda.
    pub spreads: Vec<(&'static str, f64)>,
}

impl BoundaryReport {
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn max_spread(&self) -> f64 {
        self.spreads.iter().map(|s| s.1).fold(0.0, f64::max)
    }
}

/// Fits u A = c u (or A u = c u) and returns (c, relative residual).
fn eigen_fit(u: &[C64], au: &[C64]) -> (C64, f64) {
    let num: C64 = u.iter().zip(au).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = u.iter().map(|a| a.norm_sqr()).sum();
    let c = num / den;
    let scale = vec_max_abs(au).max(c.norm() * vec_max_abs(u)).max(f64::MIN_POSITIVE);
    let res = u.iter().zip(au).map(|(a, b)| (b - c * a).norm()).fold(0.0, f64::max) / scale;
    (c, res)
}

/// The boundary co-vectors <0|, <2| and vectors |h>, h in {1,2}^N, as eigenstates with the
/// predicted lambda profiles; the constants are fitted and reported.
pub fn boundary_eigenstate_check(p: &ModelParams, bases: &SovBasisPair, lambdas: &[C64]) -> Result<BoundaryReport> {
    let n = p.sites;
    let zero = bases.covector(&TernaryIndex::uniform(n, 0));
    let two = bases.covector(&TernaryIndex::uniform(n, 2));
    let e = p.eta;
    let mut rows = Vec::new();
    let mut add = |label: &'static str, l: C64, v: &[C64], av: &[C64], profile: C64| {
        let (c, res) = eigen_fit(v, av);
        rows.push(BoundaryRow { label, lambda: l, constant: c / profile, residual: res });
    };
    for &l in lambdas {
        let t1 = transfer(p, 1, l)?;
        let t2 = transfer(p, 2, l)?;
        add("<0|T2", l, &zero, &t2.vecmat(&zero), p.d(l - e) * p.d(l));
        add("<2|T2", l, &two, &t2.vecmat(&two), p.d(l - e) * p.d(l + e));
        add("<0|T1", l, &zero, &t1.vecmat(&zero), p.d(l));
        for h in TernaryIndex::all(n).filter(|h| h.count(0) == 0) {
            let v = bases.vector(&h);
            add("T2|h>", l, &v, &t2.matvec(&v), p.d(l - e) * p.d(l + e));
        }
    }
    let mut spreads = Vec::new();
    for label in ["<0|T2", "<2|T2", "<0|T1", "T2|h>"] {
        let cs: Vec<C64> = rows.iter().filter(|r| r.label == label).map(|r| r.constant).collect();
        let spread = cs.iter().map(|&z| rel_err(z, cs[0])).fold(0.0, f64::max);
        spreads.push((label, spread));
    }
    Ok(BoundaryReport { rows, spreads })
}

/// Zero pattern of one eigenstate: sites in A (t1(xi) != 0) first, then B, each ascending.
#[derive(Clone, Debug, Serialize)]
pub struct ZeroPattern {
    pub perm: Vec<usize>,
    pub m: usize,
    /// Largest |t2(xi_a - eta)| over A relative to the t2 scale.
    pub t2_zero_residual: f64,
    /// Smallest |t2(xi_b - eta)| over B relative to the t2 scale (infinity for empty B).
    pub t2_nonzero_min: f64,
    /// Largest relative deviation of t2 from its closed form at the check points.
    pub t2_closed_form_residual: f64,
}

impl ZeroPattern {
    pub fn a_sites(&self) -> &[usize] {
        &self.perm[..self.m]
    }

    pub fn b_sites(&self) -> &[usize] {
        &self.perm[self.m..]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    pub index: usize,
    /// Eigenvalue of T_1(lambda_0).
    pub t1_lambda0: C64,
    /// t_1(xi_a), t_1(xi_a - eta), t_2(xi_a), t_2(xi_a - eta)
    pub t1_xi: Vec<C64>,
    pub t1_xi_shift: Vec<C64>,
    pub t2_xi: Vec<C64>,
    pub t2_xi_shift: Vec<C64>,
    /// Right eigenvector normalized by <1|t> = 1.
    pub right: Vec<C64>,
    /// Left eigen-co-vector normalized by <t|0> = 1.
    pub left: Vec<C64>,
    /// Right and left wave-function factorization residuals.
    pub factorization: (f64, f64),
    /// t_1(xi_a) t_1(xi_a - eta) = t_2(xi_a) on the eigenvalues.
    pub fusion_residual: f64,
    /// Largest |t_1| and |t_2| over all eigenstates and sample points.
    pub scales: (f64, f64),
    pub pattern: Option<ZeroPattern>,
    /// Eigenvalue samples used for the closed-form t_2 check.
    #[serde(skip)]
    pub t2_checks: Vec<(C64, C64)>,
}

fn rayleigh(u: &[C64], t: &CMatrix, v: &[C64]) -> C64 {
    pair(u, &t.matvec(v)) / pair(u, v)
}

/// Right coordinate <h|t>/<1|t> predicted by the eigenvalues.
pub fn right_wave_function(s: &SpectralData, h: &TernaryIndex) -> C64 {
    let mut v = cr(1.0);
    for (a, &x) in h.digits.iter().enumerate() {
        match x {
            0 => v *= s.t2_xi_shift[a],
            2 => v *= s.t1_xi[a],
            _ => {}
        }
    }
    v
}

/// Left coordinate <t|h>/<t|0> predicted by the eigenvalues.
pub fn left_wave_function(s: &SpectralData, h: &TernaryIndex) -> C64 {
    let mut v = cr(1.0);
    for (a, &x) in h.digits.iter().enumerate() {
        match x {
            1 => v *= s.t2_xi[a],
            2 => v *= s.t1_xi[a],
            _ => {}
        }
    }
    v
}

/// Points off the lattice where t_2 is compared with its closed form.
pub fn check_points(p: &ModelParams) -> Vec<C64> {
    (0..4).map(|k| p.xi[0] + p.eta * (0.41 + 0.77 * k as f64) + C64::new(0.0, 0.23 * (k + 1) as f64)).collect()
}

/// One eigenstate to be sampled: the states to normalize and the probe pair whose Rayleigh
/// quotients give the eigenvalue functions (the same pair unless the spectrum is borrowed).
#[derive(Clone, Debug)]
pub struct EigenInput {
    pub t1_lambda0: C64,
    pub right: Vec<C64>,
    pub left: Vec<C64>,
    pub probe_left: Vec<C64>,
    pub probe_right: Vec<C64>,
}

/// Diagonalizes T_1(lambda_0), samples t_1 and t_2 at the inhomogeneities by Rayleigh
/// quotients, normalizes the eigenstates on the SoV reference states and checks the
/// factorized wave functions. The zero pattern is attached when the twist is degenerate.
pub fn eigensolve_sov(p: &ModelParams, bases: &SovBasisPair, lambda0: C64) -> Result<Vec<SpectralData>> {
    let eig = simple_eig(p, lambda0)?;
    let states = (0..eig.eigenvalues.len())
        .map(|i| EigenInput {
            t1_lambda0: eig.eigenvalues[i],
            right: eig.right(i),
            left: eig.left(i),
            probe_left: eig.left(i),
            probe_right: eig.right(i),
        })
        .collect();
    spectral_data(p, bases, states)
}

/// Eigendecomposition of T_1(lambda_0) with the simplicity check.
pub fn simple_eig(p: &ModelParams, lambda0: C64) -> Result<EigenDecomposition> {
    let eig = eig_general(&transfer(p, 1, lambda0)?)?;
    if eig.residual_norm > 1e-8 {
        return Err(SovError::EigFailure { residual: eig.residual_norm });
    }
    let gap = eig.relative_gap();
    if gap < 1e-6 {
        return Err(SovError::SpectrumNotSimple { gap });
    }
    Ok(eig)
}

/// Samples the eigenvalue functions of `p` on the probe pairs and expresses the states in `bases`.
pub fn spectral_data(p: &ModelParams, bases: &SovBasisPair, states: Vec<EigenInput>) -> Result<Vec<SpectralData>> {
    let n = p.sites;
    let t1: Vec<CMatrix> = p.xi.iter().map(|&x| transfer(p, 1, x)).collect::<Result<_>>()?;
    let t1s: Vec<CMatrix> = p.xi.iter().map(|&x| transfer(p, 1, x - p.eta)).collect::<Result<_>>()?;
    let t2: Vec<CMatrix> = p.xi.iter().map(|&x| transfer(p, 2, x)).collect::<Result<_>>()?;
    let t2s: Vec<CMatrix> = p.xi.iter().map(|&x| transfer(p, 2, x - p.eta)).collect::<Result<_>>()?;
    let checks = check_points(p);
    let t2c: Vec<CMatrix> = checks.iter().map(|&l| transfer(p, 2, l)).collect::<Result<_>>()?;
    let ones = bases.covector(&TernaryIndex::uniform(n, 1));
    let degenerate = p.twist.c.norm() <= TAU;
    let mut out = Vec::with_capacity(states.len());
    for (idx, st) in states.into_iter().enumerate() {
        let nr = pair(&ones, &st.right);
        let nl = pair(&st.left, &bases.ref_vector);
        if nr.norm() < 1e-300 || nl.norm() < 1e-300 {
            return Err(SovError::EigFailure { residual: f64::INFINITY });
        }
        let (u, v) = (&st.probe_left, &st.probe_right);
        let sample = |ms: &[CMatrix]| -> Vec<C64> { ms.iter().map(|t| rayleigh(u, t, v)).collect() };
        let mut s = SpectralData {
            index: idx,
            t1_lambda0: st.t1_lambda0,
            t1_xi: sample(&t1),
            t1_xi_shift: sample(&t1s),
            t2_xi: sample(&t2),
            t2_xi_shift: sample(&t2s),
            right: st.right.iter().map(|x| x / nr).collect(),
            left: st.left.iter().map(|x| x / nl).collect(),
            factorization: (0.0, 0.0),
            fusion_residual: 0.0,
            scales: (1.0, 1.0),
            pattern: None,
            t2_checks: checks.iter().zip(&t2c).map(|(&l, t)| (l, rayleigh(u, t, v))).collect(),
        };
        s.factorization = factorization_residuals(bases, &s);
        out.push(s);
    }
    let max_of = |f: &dyn Fn(&SpectralData) -> Vec<f64>| out.iter().flat_map(f).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let t1_scale = max_of(&|s| s.t1_xi.iter().chain(&s.t1_xi_shift).map(|z| z.norm()).collect());
    let t2_scale = max_of(&|s| s.t2_xi.iter().chain(&s.t2_xi_shift).map(|z| z.norm()).collect());
    for s in out.iter_mut() {
        s.scales = (t1_scale, t2_scale);
        s.fusion_residual = (0..n)
            .map(|a| (s.t1_xi[a] * s.t1_xi_shift[a] - s.t2_xi[a]).norm() / (t1_scale * t1_scale).max(t2_scale))
            .fold(0.0, f64::max);
        if degenerate {
            s.pattern = Some(zero_pattern(s, p)?);
        }
    }
    Ok(out)
}

/// Relative deviations of <h|t> and <t|h> from the factorized wave functions.
pub fn factorization_residuals(bases: &SovBasisPair, s: &SpectralData) -> (f64, f64) {
    let n = s.t1_xi.len();
    let mut lhs_r = Vec::new();
    let mut rhs_r = Vec::new();
    let mut lhs_l = Vec::new();
    let mut rhs_l = Vec::new();
    for h in TernaryIndex::all(n) {
        lhs_r.push(pair(&bases.covector(&h), &s.right));
        rhs_r.push(right_wave_function(s, &h));
        lhs_l.push(pair(&s.left, &bases.vector(&h)));
        rhs_l.push(left_wave_function(s, &h));
    }
    let res = |a: &[C64], b: &[C64]| {
        let scale = vec_max_abs(a).max(vec_max_abs(b)).max(f64::MIN_POSITIVE);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    };
    (res(&lhs_r, &rhs_r), res(&lhs_l, &rhs_l))
}

/// Splits the sites by the zeros of t_1(xi_a), relative to the spectrum-wide scale, and checks the complementary zeros of
/// t_2(xi_a - eta) and the closed form of t_2.
pub fn zero_pattern(s: &SpectralData, p: &ModelParams) -> Result<ZeroPattern> {
    let n = p.sites;
    let (scale1, scale2) = s.scales;
    let mut a_set = Vec::new();
    let mut b_set = Vec::new();
    for a in 0..n {
        let v = s.t1_xi[a].norm() / scale1;
        if (0.1 * THETA..=10.0 * THETA).contains(&v) {
            return Err(SovError::AmbiguousPattern { site: a, value: v });
        }
        if v >= THETA {
            a_set.push(a);
        } else {
            b_set.push(a);
        }
    }
    let t2_zero_residual = a_set.iter().map(|&a| s.t2_xi_shift[a].norm() / scale2).fold(0.0, f64::max);
    let t2_nonzero_min = b_set.iter().map(|&b| s.t2_xi_shift[b].norm() / scale2).fold(f64::INFINITY, f64::min);
    let closed = |l: C64| {
        let mut v = p.twist.b * p.d(l - p.eta);
        for &a in &a_set {
            v *= l - p.xs(a, 1);
        }
        for &b in &b_set {
            v *= l - p.xi[b];
        }
        v
    };
    let t2_closed_form_residual = s.t2_checks.iter().map(|&(l, t)| rel_err(t, closed(l))).fold(0.0, f64::max);
    let m = a_set.len();
    let mut perm = a_set;
    perm.extend(b_set);
    Ok(ZeroPattern { perm, m, t2_zero_residual, t2_nonzero_min, t2_closed_form_residual })
}

/// Per-site coefficients alpha_a^{(h)}; the coordinate at h is prod_a alpha_a^{(h_a)}.
#[derive(Clone, Debug, Serialize)]
pub struct SeparateState {
    pub coeffs: Vec<Vec<C64>>,
    pub side: Side,
}

impl SeparateState {
    pub fn new(coeffs: Vec<Vec<C64>>, side: Side) -> Self {
        SeparateState { coeffs, side }
    }

    /// The eigen-co-vector <t| as a separate state.
    pub fn from_left_eigenstate(s: &SpectralData) -> Self {
        let coeffs = (0..s.t1_xi.len()).map(|a| vec![cr(1.0), s.t2_xi[a], s.t1_xi[a]]).collect();
        SeparateState { coeffs, side: Side::Left }
    }

    pub fn coordinate(&self, h: &[u8]) -> C64 {
        h.iter().enumerate().map(|(a, &x)| self.coeffs[a][x as usize]).product()
    }

    /// sum_h coordinate(h) <h| / N_h (or |h> / N_h) with the measured norms.
    pub fn assemble(&self, bases: &SovBasisPair, norms: &[C64]) -> Vec<C64> {
        let n = self.coeffs.len();
        let dim = bases.dim();
        let mut out = vec![cr(0.0); dim];
        for h in TernaryIndex::all(n) {
            let w = self.coordinate(&h.digits) / norms[h.flat()];
            let member = match self.side {
                Side::Left => bases.covector(&h),
                Side::Right => bases.vector(&h),
            };
            for (o, x) in out.iter_mut().zip(&member) {
                *o += w * x;
            }
        }
        out
    }
}

/// <alpha|t> as the plain sum over h of coordinate(h) <h|t> / N_h with the predicted measure.
pub fn first_av_sum(alpha: &SeparateState, s: &SpectralData, p: &ModelParams) -> C64 {
    TernaryIndex::all(p.sites)
        .map(|h| alpha.coordinate(&h.digits) * right_wave_function(s, &h) / diag_formula(p, &h))
        .sum()
}

fn x_a(p: &ModelParams, a_sites: &[usize], l: C64) -> C64 {
    a_sites.iter().map(|&a| (l - p.xi[a] + p.eta) / (l - p.xi[a])).product()
}

fn x_b(p: &ModelParams, b_sites: &[usize], l: C64) -> C64 {
    b_sites.iter().map(|&b| (l - p.xi[b] - p.eta) / (l - p.xi[b])).product()
}

fn det(m: usize, f: impl FnMut(usize, usize) -> C64) -> C64 {
    if m == 0 {
        cr(1.0)
    } else {
        CMatrix::from_fn(m, m, f).determinant()
    }
}

/// Which placement of the t2 factor in the B-block matrix to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BlockForm {
    /// t2 attached to h = 0, as the wave function requires.
    Derived,
    /// t2 attached to h = 1.
    Printed,
}

/// Determinant form of <alpha|t_n>.
pub fn scalar_product_determinant(alpha: &SeparateState, s: &SpectralData, p: &ModelParams) -> Result<C64> {
    scalar_product_determinant_with(alpha, s, p, BlockForm::Derived)
}

pub fn scalar_product_determinant_with(alpha: &SeparateState, s: &SpectralData, p: &ModelParams, form: BlockForm) -> Result<C64> {
    let pat = s.pattern.as_ref().ok_or(SovError::PatternMissing)?;
    let (aa, bb) = (pat.a_sites(), pat.b_sites());
    let e = p.eta;
    let mut pre = cr(1.0);
    for a in 0..p.sites {
        pre *= p.d(p.xs(a, 2)) / p.d(p.xs(a, 1));
    }
    let xa: Vec<C64> = aa.iter().map(|&a| p.xi[a]).collect();
    let xa1: Vec<C64> = aa.iter().map(|&a| p.xs(a, 1)).collect();
    let xb: Vec<C64> = bb.iter().map(|&b| p.xi[b]).collect();
    pre *= vandermonde(&xa1) / vandermonde(&xa);
    // t2-underline at xi_b - eta: d(xi_b - eta) t2(xi_b - eta) / d(xi_b - 2 eta)
    let t2u = |b: usize| p.d(p.xs(b, 1)) * s.t2_xi_shift[b] / p.d(p.xs(b, 2));
    let plus = det(bb.len(), |i, j| {
        let b = bb[i];
        let mut v = cr(0.0);
        for h in 0..2 {
            let t = match (form, h) {
                (BlockForm::Derived, 0) | (BlockForm::Printed, 1) => t2u(b),
                _ => cr(1.0),
            };
            v += alpha.coeffs[b][h] * x_a(p, aa, p.xi[b]).powi(1 - h as i32) * t * (p.xi[b] - e * h as f64).powi(j as i32);
        }
        v
    });
    let minus = det(aa.len(), |i, j| {
        let a = aa[i];
        let mut v = cr(0.0);
        for h in 0..2 {
            v += alpha.coeffs[a][h + 1]
                * x_b(p, bb, p.xi[a]).powi(h as i32)
                * s.t1_xi[a].powi(h as i32)
                * (p.xi[a] - e * h as f64).powi(j as i32);
        }
        v
    });
    Ok(pre * plus / vandermonde(&xb) * minus / vandermonde(&xa))
}

/// Which assembly of the norm formula to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NormForm {
    /// Norm obtained from the scalar-product determinant with alpha = <t_n|.
    Derived,
    /// The product formula without the d-ratio prefactor and the 1/V(xi_A) factor.
    Printed,
}

/// <t_n|t_n> from the eigenvalue samples and the M_n x M_n determinant.
pub fn norm_determinant(s: &SpectralData, p: &ModelParams) -> Result<C64> {
    norm_determinant_with(s, p, NormForm::Derived)
}

pub fn norm_determinant_with(s: &SpectralData, p: &ModelParams, form: NormForm) -> Result<C64> {
    let pat = s.pattern.as_ref().ok_or(SovError::PatternMissing)?;
    let (aa, bb) = (pat.a_sites(), pat.b_sites());
    let e = p.eta;
    let xa: Vec<C64> = aa.iter().map(|&a| p.xi[a]).collect();
    let xa1: Vec<C64> = aa.iter().map(|&a| p.xs(a, 1)).collect();
    let mut v = vandermonde(&xa1) / vandermonde(&xa);
    for &b in bb {
        v *= s.t2_xi_shift[b] * x_a(p, aa, p.xi[b]);
    }
    for &a in aa {
        v *= s.t1_xi[a];
    }
    let tm = det(aa.len(), |i, j| {
        let a = aa[i];
        let xbv = x_b(p, bb, p.xi[a]);
        s.t1_xi_shift[a] * p.xi[a].powi(j as i32) + s.t1_xi[a] * xbv * (p.xi[a] - e).powi(j as i32)
    });
    v *= tm;
    if form == NormForm::Derived {
        for &a in aa {
            v *= p.d(p.xs(a, 2)) / p.d(p.xs(a, 1));
        }
        v /= vandermonde(&xa);
    }
    Ok(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalarProductRow {
    pub eigen_index: usize,
    pub m: usize,
    pub formula: C64,
    pub direct_sum: C64,
    pub oracle: C64,
    pub rel_error: f64,
}

/// Compares the determinant formula with the direct sum and with the assembled inner product.
pub fn scalar_product_row(
    alpha: &SeparateState,
    s: &SpectralData,
    p: &ModelParams,
    bases: &SovBasisPair,
    norms: &[C64],
) -> Result<ScalarProductRow> {
    let formula = scalar_product_determinant(alpha, s, p)?;
    let direct_sum = first_av_sum(alpha, s, p);
    let oracle = pair(&alpha.assemble(bases, norms), &s.right);
    let rel_error = rel_err(formula, oracle).max(rel_err(direct_sum, oracle));
    Ok(ScalarProductRow {
        eigen_index: s.index,
        m: s.pattern.as_ref().map(|q| q.m).unwrap_or(0),
        formula,
        direct_sum,
        oracle,
        rel_error,
    })
}
