//! Coupling matrix of the two SoV bases, its sparsity pattern, the diagonal measure,
//! off-diagonal coefficients, dual p-bases and the inverse measure.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SovError};
use crate::gl3_model::{transfer, ModelParams, TwistCase, TwistData};
use crate::numkernel::{cr, eig_general, pair, rel_err, vandermonde, CMatrix, C64, TAU};
use crate::sov_bases::{SovBasisPair, TernaryIndex};

/// Zero-classified cells must stay below this fraction of the largest coupling.
pub const ZERO_TOL: f64 = 1e-9;
/// OffDiag-classified cells must exceed this fraction of the largest coupling.
pub const NONZERO_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum PairClass {
    Diagonal,
    OffDiag { alpha: Vec<usize>, beta: Vec<usize>, r: usize },
    Zero,
}

/// Classifies (h, k): OffDiag iff h is k with the 1-entries on alpha set to 0 and on beta set
/// to 2, #alpha = #beta >= 1. Site indices are 0-based.
pub fn classify_pair(h: &TernaryIndex, k: &TernaryIndex) -> PairClass {
    assert_eq!(h.len(), k.len());
    if h == k {
        return PairClass::Diagonal;
    }
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    for (a, (&x, &y)) in h.digits.iter().zip(&k.digits).enumerate() {
        if x == y {
            continue;
        }
        match (y, x) {
            (1, 0) => alpha.push(a),
            (1, 2) => beta.push(a),
            _ => return PairClass::Zero,
        }
    }
    if alpha.len() == beta.len() {
        let r = alpha.len();
        PairClass::OffDiag { alpha, beta, r }
    } else {
        PairClass::Zero
    }
}

/// Sum of digits is conserved by every nonzero class.
pub fn digit_sums_agree(h: &TernaryIndex, k: &TernaryIndex) -> bool {
    h.digit_sum() == k.digit_sum()
}

/// Number of 1-entries is conserved.
pub fn one_counts_agree(h: &TernaryIndex, k: &TernaryIndex) -> bool {
    h.count(1) == k.count(1)
}

/// Predicted <h|h>.
pub fn diag_formula(p: &ModelParams, h: &TernaryIndex) -> C64 {
    let mut v = cr(1.0);
    for a in 0..p.sites {
        let s = 1 + (h.digits[a] >= 1) as i32;
        v *= p.d(p.xs(a, 1)) / p.d(p.xs(a, s));
    }
    let v12: Vec<C64> = (0..p.sites).map(|a| p.xs(a, (h.digits[a] >= 1) as i32)).collect();
    let v2: Vec<C64> = (0..p.sites).map(|a| p.xs(a, (h.digits[a] == 2) as i32)).collect();
    let v0 = vandermonde(&p.xi);
    v * v0 * v0 / (vandermonde(&v12) * vandermonde(&v2))
}

#[derive(Clone, Debug, Serialize)]
pub struct PatternViolation {
    pub h: TernaryIndex,
    pub k: TernaryIndex,
    pub class: PairClass,
    pub magnitude: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellCoefficient {
    pub h: TernaryIndex,
    pub k: TernaryIndex,
    pub r: usize,
    pub value: C64,
}

#[derive(Clone, Debug)]
pub struct GramReport {
    pub sites: usize,
    /// N[h, k] = <h|k>, rows indexed by co-vectors.
    pub gram: CMatrix,
    pub diag: Vec<C64>,
    pub predicted_diag: Vec<C64>,
    pub det_k: C64,
    /// max |N|
    pub scale: f64,
    /// Largest |N| / scale over Zero cells.
    pub zero_max: f64,
    /// Smallest |N| / scale over OffDiag cells (infinity when there are none).
    pub offdiag_min: f64,
    /// Smallest |N[h,k]| / sqrt(|N[h,h] N[k,k]|) over OffDiag cells.
    pub offdiag_min_cell: f64,
    /// Largest relative error of the diagonal against the formula.
    pub diag_max_rel: f64,
    pub offdiag_cells: usize,
    pub violations: Vec<PatternViolation>,
    pub coefficients: Vec<CellCoefficient>,
}

impl GramReport {
    pub fn entry(&self, h: &TernaryIndex, k: &TernaryIndex) -> C64 {
        self.gram[(h.flat(), k.flat())]
    }

    pub fn norm(&self, h: &TernaryIndex) -> C64 {
        self.diag[h.flat()]
    }

    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Builds and classifies the coupling matrix of a basis pair.
pub fn gram(p: &ModelParams, bases: &SovBasisPair) -> Result<GramReport> {
    gram_from_families(p, &bases.left, &bases.right, p.twist.c)
}

pub fn gram_from_families(p: &ModelParams, left: &CMatrix, right: &CMatrix, det_k: C64) -> Result<GramReport> {
    if left.cols() != right.rows() || left.rows() != right.cols() {
        return Err(SovError::InvalidParams("basis families have mismatched dimensions".into()));
    }
    let n = p.sites;
    let g = left.matmul(right);
    let dim = g.rows();
    let scale = g.max_abs();
    let diag: Vec<C64> = (0..dim).map(|i| g[(i, i)]).collect();
    let predicted_diag: Vec<C64> = (0..dim).map(|i| diag_formula(p, &TernaryIndex::from_flat(i, n))).collect();
    let diag_max_rel = diag.iter().zip(&predicted_diag).map(|(&a, &b)| rel_err(a, b)).fold(0.0, f64::max);
    let mut zero_max: f64 = 0.0;
    let mut offdiag_min = f64::INFINITY;
    let mut offdiag_min_cell = f64::INFINITY;
    let mut offdiag_cells = 0;
    let mut violations = Vec::new();
    let mut coefficients = Vec::new();
    for i in 0..dim {
        let h = TernaryIndex::from_flat(i, n);
        for j in 0..dim {
            let k = TernaryIndex::from_flat(j, n);
            let m = g[(i, j)].norm() / scale;
            match classify_pair(&h, &k) {
                PairClass::Diagonal => {
                    if rel_err(diag[i], predicted_diag[i]) > 1e-8 {
                        violations.push(PatternViolation { h: h.clone(), k, class: PairClass::Diagonal, magnitude: m });
                    }
                }
                PairClass::Zero => {
                    zero_max = zero_max.max(m);
                    if m > ZERO_TOL {
                        violations.push(PatternViolation { h: h.clone(), k, class: PairClass::Zero, magnitude: m });
                    }
                }
                class @ PairClass::OffDiag { .. } => {
                    offdiag_cells += 1;
                    offdiag_min = offdiag_min.min(m);
                    let local = g[(i, j)].norm() / (diag[i].norm() * diag[j].norm()).sqrt();
                    offdiag_min_cell = offdiag_min_cell.min(local);
                    let r = match class {
                        PairClass::OffDiag { r, .. } => r,
                        _ => unreachable!(),
                    };
                    if det_k.norm() > TAU {
                        coefficients.push(CellCoefficient {
                            h: h.clone(),
                            k: k.clone(),
                            r,
                            value: g[(i, j)] / (diag[j] * det_k.powi(r as i32)),
                        });
                    }
                    if m <= NONZERO_FLOOR && local <= NONZERO_FLOOR && det_k.norm() > TAU {
                        violations.push(PatternViolation { h: h.clone(), k, class, magnitude: m });
                    }
                }
            }
        }
    }
    Ok(GramReport {
        sites: n,
        gram: g,
        diag,
        predicted_diag,
        det_k,
        scale,
        zero_max,
        offdiag_min,
        offdiag_min_cell,
        diag_max_rel,
        offdiag_cells,
        violations,
        coefficients,
    })
}

/// C = N[h,k] / (<k|k> c^r).
pub fn extract_coefficient(report: &GramReport, h: &TernaryIndex, k: &TernaryIndex) -> Result<C64> {
    let r = match classify_pair(h, k) {
        PairClass::OffDiag { r, .. } => r,
        other => return Err(SovError::InvalidParams(format!("{h} vs {k} is {other:?}, not an off-diagonal pair"))),
    };
    if report.det_k.norm() <= TAU {
        return Err(SovError::DetKZero(report.det_k.norm()));
    }
    Ok(report.entry(h, k) / (report.norm(k) * report.det_k.powi(r as i32)))
}

/// One-pair coefficient: site `a` carries (h=0, k=1), site `b` carries (h=2, k=1); the other
/// sites of `h` are shared by h and k. Sites are 0-based.
pub fn coeff_r0_closed_form(p: &ModelParams, h: &TernaryIndex, a: usize, b: usize) -> C64 {
    let (x1, x2, e) = (p.xi[a], p.xi[b], p.eta);
    let mut v = p.d(x2 - e) / p.d(x1 - e) * p.qdet_identity(x1) * e * e / ((x1 - x2 + e) * (x1 - x2 + e));
    for c in 0..p.sites {
        if c == a || c == b {
            continue;
        }
        let hc = h.digits[c];
        let s2 = p.xs(c, (hc == 2) as i32);
        let s0 = p.xs(c, 1 - (hc == 0) as i32);
        v *= (x1 - e - s2) * (x2 - s0) / ((x2 - e - s2) * (x1 - s0));
    }
    v
}

/// Twist with eigenvalues the roots of z^3 - a z^2 + b z - c, sharing W with `base`.
pub fn twist_with_invariants(base: &TwistData, a: C64, b: C64, c: C64) -> Result<TwistData> {
    let mut comp = CMatrix::zeros(3, 3);
    comp[(0, 0)] = a;
    comp[(0, 1)] = -b;
    comp[(0, 2)] = c;
    comp[(1, 0)] = cr(1.0);
    comp[(2, 1)] = cr(1.0);
    let e = eig_general(&comp)?;
    let k = [e.eigenvalues[0], e.eigenvalues[1], e.eigenvalues[2]];
    let scale = 1.0 + k.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for i in 0..3 {
        for j in i + 1..3 {
            if (k[i] - k[j]).norm() < 1e-6 * scale {
                return Err(SovError::DegenerateFamily(format!("roots collide at c = {c}")));
            }
        }
    }
    TwistData::from_jordan(base.w.clone(), k, TwistCase::I)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingRow {
    pub h: TernaryIndex,
    pub k: TernaryIndex,
    /// Expected exponent: pair count, 0 for the diagonal.
    pub r: usize,
    pub slope: f64,
    /// Largest relative spread of the extracted coefficient across the scan.
    pub coeff_spread: f64,
}

/// Least-squares slope of log|N[h,k]| against log|c| along a family of twists with fixed
/// (tr K, b). `cells` restricts the fit to given (h, k); by default all OffDiag and diagonal
/// cells are fitted.
pub fn c_scaling_scan(
    base: &ModelParams,
    xyz: &[C64; 3],
    c_values: &[C64],
    cells: Option<&[(TernaryIndex, TernaryIndex)]>,
) -> Result<Vec<ScalingRow>> {
    if c_values.len() < 3 {
        return Err(SovError::InvalidParams("scaling scan needs at least three values of det K".into()));
    }
    let reports: Vec<GramReport> = c_values
        .iter()
        .map(|&c| {
            let twist = twist_with_invariants(&base.twist, base.twist.a, base.twist.b, c)?;
            let p = base.with_twist(twist);
            gram(&p, &SovBasisPair::dressed(&p, xyz)?)
        })
        .collect::<Result<_>>()?;
    let n = base.sites;
    let list: Vec<(TernaryIndex, TernaryIndex)> = match cells {
        Some(c) => c.to_vec(),
        None => {
            let dim = base.dim();
            let mut v = Vec::new();
            for i in 0..dim {
                for j in 0..dim {
                    let (h, k) = (TernaryIndex::from_flat(i, n), TernaryIndex::from_flat(j, n));
                    if classify_pair(&h, &k) != PairClass::Zero {
                        v.push((h, k));
                    }
                }
            }
            v
        }
    };
    let xs: Vec<f64> = c_values.iter().map(|c| c.norm().ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let mut rows = Vec::with_capacity(list.len());
    for (h, k) in list {
        let (r, expect_c) = match classify_pair(&h, &k) {
            PairClass::Diagonal => (0, false),
            PairClass::OffDiag { r, .. } => (r, true),
            PairClass::Zero => return Err(SovError::InvalidParams(format!("{h} vs {k} is a zero cell"))),
        };
        let ys: Vec<f64> = reports.iter().map(|rep| rep.entry(&h, &k).norm().ln()).collect();
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let coeffs: Vec<C64> = if expect_c {
            reports.iter().map(|rep| extract_coefficient(rep, &h, &k)).collect::<Result<_>>()?
        } else {
            reports.iter().map(|rep| rep.entry(&h, &k)).collect()
        };
        let spread = coeffs.iter().map(|&z| rel_err(z, coeffs[0])).fold(0.0, f64::max);
        rows.push(ScalingRow { h, k, r, slope: sxy / sxx, coeff_spread: spread });
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct DualBasisData {
    /// p-co-vectors as rows: D R^{-1}.
    pub p_covectors: CMatrix,
    /// p-vectors as columns: L^{-1} D.
    pub p_vectors: CMatrix,
    /// M = N^{-1} by LU.
    pub measure: CMatrix,
    /// M[h,k] = p<h|k>p / (N_h N_k)
    pub p_measure: CMatrix,
    /// Coordinates of |h>_p on the right SoV basis, column h: R^{-1} L^{-1} D = M D.
    pub expansion: CMatrix,
    /// max |p<k|h> - delta N_h| and max |<k|h>p - delta N_h|, relative to max |N_h|.
    pub ortho_residuals: (f64, f64),
    /// max |M N - I|
    pub inverse_residual: f64,
    /// max |p_measure - measure| / max |measure|
    pub inverse_agreement: f64,
}

pub fn dual_bases(bases: &SovBasisPair, report: &GramReport) -> Result<DualBasisData> {
    let dim = report.gram.rows();
    let inv_err = |e: SovError| match e {
        SovError::SingularBasis { .. } => SovError::SingularGram,
        other => other,
    };
    if report.diag.iter().any(|z| z.norm() == 0.0 || !z.is_finite()) {
        return Err(SovError::SingularGram);
    }
    let d = CMatrix::from_fn(dim, dim, |i, j| if i == j { report.diag[i] } else { cr(0.0) });
    let r_inv = bases.right.inverse_equilibrated().map_err(inv_err)?;
    let l_inv = bases.left.inverse_equilibrated().map_err(inv_err)?;
    let p_covectors = d.matmul(&r_inv);
    let p_vectors = l_inv.matmul(&d);
    let dmax = report.diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let r1 = p_covectors.matmul(&bases.right).sub(&d).max_abs() / dmax;
    let r2 = bases.left.matmul(&p_vectors).sub(&d).max_abs() / dmax;
    let pp = p_covectors.matmul(&p_vectors);
    let p_measure = CMatrix::from_fn(dim, dim, |i, j| pp[(i, j)] / (report.diag[i] * report.diag[j]));
    let measure = report.gram.inverse_equilibrated().map_err(inv_err)?;
    let inverse_residual = measure.matmul(&report.gram).sub(&CMatrix::identity(dim)).max_abs();
    let inverse_agreement = p_measure.sub(&measure).max_abs() / measure.max_abs();
    let expansion = CMatrix::from_fn(dim, dim, |i, j| measure[(i, j)] * report.diag[j]);
    Ok(DualBasisData {
        p_covectors,
        p_vectors,
        measure,
        p_measure,
        expansion,
        ortho_residuals: (r1, r2),
        inverse_residual,
        inverse_agreement,
    })
}

/// Pair substitutions (alpha, beta) of the 1-entries of h with #alpha = #beta = r.
pub fn pair_substitutions(h: &TernaryIndex, r: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let ones = h.ones();
    let mut out = Vec::new();
    for alpha in subsets(&ones, r) {
        let rest: Vec<usize> = ones.iter().copied().filter(|a| !alpha.contains(a)).collect();
        for beta in subsets(&rest, r) {
            out.push((alpha.clone(), beta));
        }
    }
    out
}

fn subsets(items: &[usize], r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![vec![]];
    }
    if items.len() < r {
        return vec![];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        for mut tail in subsets(&items[i + 1..], r - 1) {
            tail.insert(0, x);
            out.push(tail);
        }
    }
    out
}

/// C-bar_s^r = N[s, r] / (<s|s> c^{pairs}).
fn c_bar(report: &GramReport, s: &TernaryIndex, r: &TernaryIndex) -> C64 {
    let pairs = match classify_pair(s, r) {
        PairClass::OffDiag { r, .. } => r,
        _ => 0,
    };
    report.entry(s, r) / (report.norm(s) * report.det_k.powi(pairs as i32))
}

/// Expansion coefficients B_{alpha,beta,h} of |h>_p, computed bottom-up in #alpha.
/// B coefficients keyed by the (alpha, beta) site sets.
pub type BCoefficients = BTreeMap<(Vec<usize>, Vec<usize>), C64>;

pub fn b_recursion(report: &GramReport, h: &TernaryIndex) -> Result<BCoefficients> {
    if report.det_k.norm() <= TAU {
        return Err(SovError::DetKZero(report.det_k.norm()));
    }
    let mut b = BCoefficients::new();
    let max_r = h.count(1) / 2;
    for r in 1..=max_r {
        for (mu, delta) in pair_substitutions(h, r) {
            let target = h.substitute(&mu, &delta);
            let mut v = c_bar(report, &target, h);
            for ((a2, b2), coeff) in &b {
                if a2.len() < r && a2.iter().all(|x| mu.contains(x)) && b2.iter().all(|x| delta.contains(x)) {
                    v += coeff * c_bar(report, &target, &h.substitute(a2, b2));
                }
            }
            b.insert((mu, delta), -v);
        }
    }
    Ok(b)
}

/// B_{alpha,beta,h} read off the solved dual basis: expansion coordinate divided by c^r.
pub fn b_from_dual(dual: &DualBasisData, report: &GramReport, h: &TernaryIndex) -> BCoefficients {
    let mut out = BTreeMap::new();
    for r in 1..=h.count(1) / 2 {
        for (mu, delta) in pair_substitutions(h, r) {
            let s = h.substitute(&mu, &delta);
            out.insert((mu, delta), dual.expansion[(s.flat(), h.flat())] / report.det_k.powi(r as i32));
        }
    }
    out
}

/// Largest coordinate of |h>_p outside {h} and its pair substitutions, relative to the
/// largest coordinate.
pub fn expansion_leakage(dual: &DualBasisData, h: &TernaryIndex) -> f64 {
    let n = h.len();
    let col = dual.expansion.col(h.flat());
    let scale = col.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for (i, z) in col.iter().enumerate() {
        let s = TernaryIndex::from_flat(i, n);
        if classify_pair(&s, h) == PairClass::Zero {
            worst = worst.max(z.norm() / scale);
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct RecursionRow {
    pub r: usize,
    pub h_rest: TernaryIndex,
    pub lhs: C64,
    pub rhs: C64,
    pub residual: f64,
    /// r = 0 only: residual against the squared (xi_1 - xi_2 + eta) denominator.
    pub squared_denominator_residual: Option<f64>,
}

/// <h|T_2(lambda)|k>
pub fn t2_matrix_element(p: &ModelParams, bases: &SovBasisPair, h: &TernaryIndex, lambda: C64, k: &TernaryIndex) -> Result<C64> {
    let t = transfer(p, 2, lambda)?;
    Ok(pair(&bases.covector(h), &t.matvec(&bases.vector(k))))
}

/// Index with the listed leading sites (0-based 0, 1, ...) set to `head` and the rest from `rest`.
fn assemble(head: &[u8], rest: &[u8]) -> TernaryIndex {
    let mut d = head.to_vec();
    d.extend_from_slice(rest);
    TernaryIndex::new(d)
}

/// Checks the T_2 matrix-element identities for one pair (r = 0) or two pairs (r = 1) of
/// sites. The pair sites are the leading ones; the remaining sites run over `rests`.
pub fn appc_recursion_check(p: &ModelParams, xyz: &[C64; 3], r: usize, rests: &[Vec<u8>]) -> Result<Vec<RecursionRow>> {
    let bases = SovBasisPair::dressed(p, xyz)?;
    let e = p.eta;
    let x = |i: usize| p.xi[i];
    let xs = |i: usize, s: i32| p.xs(i, s);
    let mut rows = Vec::new();
    for rest in rests {
        if rest.len() + 2 * (r + 1) != p.sites {
            return Err(SovError::InvalidParams("rest length does not match the site count".into()));
        }
        let mut squared = None;
        let (lhs, rhs) = match r {
            0 => {
                let co = assemble(&[1, 1], rest);
                let ve = assemble(&[0, 1], rest);
                let lhs = t2_matrix_element(p, &bases, &co, x(1), &ve)?;
                let norm = pair(&bases.covector(&co), &bases.vector(&co));
                let mut f = p.d(x(1) - e) / p.d(x(0) - e) * e / (x(0) - x(1) + e);
                for (j, &hj) in rest.iter().enumerate() {
                    let a = j + 2;
                    let s = xs(a, 1 - (hj == 0) as i32);
                    f *= (x(1) - s) / (x(0) - s);
                }
                squared = Some(rel_err(lhs, norm * f / (x(0) - x(1) + e)));
                (lhs, norm * f)
            }
            1 => {
                // sites 0,1 carry the first pair, sites 2,3 the second; paper labels 1..4
                let qd = |i: usize| p.qdet(x(i));
                // r_{2a+1,2} for 2a+1 in {1, 3} (0-based 0, 2)
                let r_coef = |odd: usize| -> C64 {
                    let mut v = p.d(xs(1, 1)) / p.d(xs(odd, 1));
                    for even in [1usize, 3] {
                        v *= (x(1) - xs(even, 1)) / (x(odd) - xs(even, 1));
                    }
                    for o in [0usize, 2] {
                        if o != odd {
                            v *= (x(1) - x(o)) / (x(odd) - x(o));
                        }
                    }
                    for (j, &hj) in rest.iter().enumerate() {
                        let s = xs(j + 4, 1 - (hj == 0) as i32);
                        v *= (x(1) - s) / (x(odd) - s);
                    }
                    v
                };
                // s_{1,2,3,2}: 2a+1 = 3 (0-based 2), 2b+2 = 4 (0-based 3)
                let s_coef = {
                    let (ao, be) = (2usize, 3usize);
                    let mut v = cr(1.0);
                    for i in [0usize, 1] {
                        v *= (xs(ao, 1) - x(i)) / (xs(be, 1) - x(i));
                    }
                    v *= (xs(ao, 1) - x(2)) / (xs(be, 1) - x(2));
                    for (j, &hj) in rest.iter().enumerate() {
                        let s = xs(j + 4, (hj == 2) as i32);
                        v *= (xs(ao, 1) - s) / (xs(be, 1) - s);
                    }
                    v
                };
                let lhs = t2_matrix_element(p, &bases, &assemble(&[1, 1, 0, 2], rest), x(1), &assemble(&[0, 1, 1, 1], rest))?;
                let m1 = t2_matrix_element(p, &bases, &assemble(&[1, 1, 1, 1], rest), x(3), &assemble(&[1, 1, 0, 1], rest))?;
                let m2 = t2_matrix_element(p, &bases, &assemble(&[1, 1, 1, 1], rest), x(3), &assemble(&[0, 1, 1, 1], rest))?;
                let rhs = qd(2) * r_coef(0) * s_coef * m1 + qd(2) * r_coef(2) * s_coef * m2;
                (lhs, rhs)
            }
            _ => return Err(SovError::InvalidParams("only r = 0 and r = 1 are supported".into())),
        };
        rows.push(RecursionRow { r, h_rest: TernaryIndex::new(rest.clone()), lhs, rhs, residual: rel_err(lhs, rhs), squared_denominator_residual: squared });
    }
    Ok(rows)
}
