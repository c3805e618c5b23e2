//! Left and right SoV bases, their reference states and rank checks.
//!
//! Families are stored as matrices: co-vectors are rows, vectors are columns, both in flat
//! ternary order with site 1 the fastest digit.

use serde::Serialize;

use crate::error::{Result, SovError};
use crate::gl3_model::{transfer, ModelParams, TwistCase, TwistData};
use crate::numkernel::{cr, CMatrix, C64, TAU};
use crate::sampling::Sampler;

/// Multi-index h in {0,..,d-1}^N; digit 0 belongs to site 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TernaryIndex {
    pub digits: Vec<u8>,
}

impl TernaryIndex {
    pub fn new(digits: Vec<u8>) -> Self {
        assert!(digits.iter().all(|&x| x <= 2));
        TernaryIndex { digits }
    }

    pub fn from_flat(mut flat: usize, n: usize) -> Self {
        let mut digits = Vec::with_capacity(n);
        for _ in 0..n {
            digits.push((flat % 3) as u8);
            flat /= 3;
        }
        TernaryIndex { digits }
    }

    pub fn flat(&self) -> usize {
        self.digits.iter().rev().fold(0, |acc, &x| acc * 3 + x as usize)
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn all(n: usize) -> impl Iterator<Item = TernaryIndex> {
        (0..3usize.pow(n as u32)).map(move |f| TernaryIndex::from_flat(f, n))
    }

    pub fn uniform(n: usize, v: u8) -> Self {
        TernaryIndex::new(vec![v; n])
    }

    /// h_a^{(j)}: the index with site `a` (0-based) set to `j`.
    pub fn with(&self, a: usize, j: u8) -> Self {
        let mut d = self.digits.clone();
        d[a] = j;
        TernaryIndex { digits: d }
    }

    /// 1_h = {a : h_a = 1}, 0-based.
    pub fn ones(&self) -> Vec<usize> {
        self.digits.iter().enumerate().filter(|(_, &x)| x == 1).map(|(a, _)| a).collect()
    }

    pub fn count(&self, v: u8) -> usize {
        self.digits.iter().filter(|&&x| x == v).count()
    }

    pub fn digit_sum(&self) -> usize {
        self.digits.iter().map(|&x| x as usize).sum()
    }

    /// h_{alpha,beta}^{(0,2)}: alpha entries set to 0 and beta entries set to 2.
    pub fn substitute(&self, alpha: &[usize], beta: &[usize]) -> Self {
        let mut d = self.digits.clone();
        for &a in alpha {
            d[a] = 0;
        }
        for &b in beta {
            d[b] = 2;
        }
        TernaryIndex { digits: d }
    }
}

impl std::fmt::Display for TernaryIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.digits.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Powers of T_1(xi_n) on a reference state.
    PowersOfT1,
    /// T_2/T_1-dressed families.
    Dressed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Transfer,
    ProjectorCharges,
}

/// Operators the bases are generated from, evaluated at the inhomogeneities.
#[derive(Clone, Debug)]
pub struct ChargeSet {
    /// T_1(xi_n)
    pub t1_xi: Vec<CMatrix>,
    /// T_2(xi_n - eta)
    pub t2_xi_shift: Vec<CMatrix>,
    /// T_2(xi_n)
    pub t2_xi: Vec<CMatrix>,
    pub provenance: Provenance,
}

impl ChargeSet {
    pub fn from_transfer(p: &ModelParams) -> Result<Self> {
        let mut t1_xi = Vec::new();
        let mut t2_xi_shift = Vec::new();
        let mut t2_xi = Vec::new();
        for a in 0..p.sites {
            t1_xi.push(transfer(p, 1, p.xi[a])?);
            t2_xi_shift.push(transfer(p, 2, p.xi[a] - p.eta)?);
            t2_xi.push(transfer(p, 2, p.xi[a])?);
        }
        Ok(ChargeSet { t1_xi, t2_xi_shift, t2_xi, provenance: Provenance::Transfer })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// Builds a basis family from a reference state by applying, for each site and digit, the
/// listed operators. Returns rows (left) or columns (right) in flat order, base `d`.
pub fn build_family<'a>(
    d: usize,
    n: usize,
    reference: &[C64],
    side: Side,
    ops: &dyn Fn(usize, usize) -> Vec<&'a CMatrix>,
) -> CMatrix {
    // vectors indexed by the digits of sites 0..k, most recent site most significant
    let mut family: Vec<Vec<C64>> = vec![reference.to_vec()];
    for site in 0..n {
        let mut next = Vec::with_capacity(family.len() * d);
        for digit in 0..d {
            let list = ops(site, digit);
            for v in &family {
                let mut w = v.clone();
                for op in &list {
                    w = match side {
                        Side::Left => op.vecmat(&w),
                        Side::Right => op.matvec(&w),
                    };
                }
                next.push(w);
            }
        }
        family = next;
    }
    match side {
        Side::Left => CMatrix::from_rows(&family),
        Side::Right => CMatrix::from_columns(&family),
    }
}

/// sigma_min/sigma_max after scaling every member (row or column) to unit norm.
pub fn family_rank_ratio(family: &CMatrix, side: Side) -> f64 {
    let unit = |v: Vec<C64>| {
        let n = crate::numkernel::vec_norm(&v);
        if n == 0.0 {
            v
        } else {
            v.into_iter().map(|z| z / n).collect()
        }
    };
    let m = match side {
        Side::Left => CMatrix::from_rows(&(0..family.rows()).map(|i| unit(family.row(i))).collect::<Vec<_>>()),
        Side::Right => CMatrix::from_columns(&(0..family.cols()).map(|j| unit(family.col(j))).collect::<Vec<_>>()),
    };
    m.condition_ratio()
}

/// Tensor product of per-site vectors, site 1 fastest.
pub fn tensor_power(local: &[Vec<C64>]) -> Vec<C64> {
    let mut out = vec![cr(1.0)];
    for site in local {
        let mut next = Vec::with_capacity(out.len() * site.len());
        for &s in site {
            for &o in &out {
                next.push(o * s);
            }
        }
        out = next;
    }
    out
}

/// Checks the case-dependent nonvanishing condition on (x, y, z).
pub fn check_reference_condition(xyz: &[C64; 3], case: TwistCase) -> Result<()> {
    let nz = |z: C64| z.norm() > 1e-14;
    let ok = match case {
        TwistCase::I => nz(xyz[0]) && nz(xyz[1]) && nz(xyz[2]),
        TwistCase::II => nz(xyz[0]) && nz(xyz[2]),
        TwistCase::III => nz(xyz[0]),
    };
    if ok {
        Ok(())
    } else {
        Err(SovError::DegenerateReference(format!("(x,y,z) = {xyz:?} violates the case {case:?} condition")))
    }
}

/// <1| = (x) (x,y,z) W^{-1}
pub fn reference_covector(xyz: &[C64; 3], twist: &TwistData, n: usize) -> Result<Vec<C64>> {
    check_reference_condition(xyz, twist.case)?;
    let local = twist.w_inv.vecmat(xyz);
    Ok(tensor_power(&vec![local; n]))
}

/// Rows (x,y,z), (x,y,z)K_J, (x,y,z)adj(K_J) of the local reference frame.
pub fn local_frame(xyz: &[C64; 3], twist: &TwistData) -> [Vec<C64>; 3] {
    [xyz.to_vec(), twist.k_jordan.vecmat(xyz), twist.jordan_adjugate().vecmat(xyz)]
}

fn cross(u: &[C64], v: &[C64]) -> [C64; 3] {
    [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
}

/// Per-site vector in the Jordan frame annihilated by (x,y,z) and (x,y,z)K_J, with
/// (x,y,z)adj(K_J)|0,a> = 1/q-det M^{(I)}(xi_a). `a` is 0-based.
pub fn local_reference_vector(xyz: &[C64; 3], twist: &TwistData, p: &ModelParams, a: usize) -> Result<[C64; 3]> {
    let [r0, r1, r2] = local_frame(xyz, twist);
    let v = cross(&r0, &r1);
    let det = r2[0] * v[0] + r2[1] * v[1] + r2[2] * v[2];
    let scale = det * p.qdet_identity(p.xi[a]);
    if det.norm() < 1e-14 || !scale.is_finite() || scale.norm() < 1e-300 {
        return Err(SovError::DegenerateReference("local reference frame is singular".into()));
    }
    Ok([v[0] / scale, v[1] / scale, v[2] / scale])
}

/// eta^N prod_{a != b} (xi_a - xi_b + eta): rescales the tensor product of the local vectors
/// so that <0|0> = 1.
pub fn reference_normalization(p: &ModelParams) -> C64 {
    let mut v = p.eta.powi(p.sites as i32);
    for a in 0..p.sites {
        for b in 0..p.sites {
            if a != b {
                v *= p.xi[a] - p.xi[b] + p.eta;
            }
        }
    }
    v
}

/// |0> = Gamma_W (x)_a |0,a>, normalized by `reference_normalization`.
pub fn reference_vector_closed(xyz: &[C64; 3], twist: &TwistData, p: &ModelParams) -> Result<Vec<C64>> {
    let mut local = Vec::with_capacity(p.sites);
    for a in 0..p.sites {
        let v = local_reference_vector(xyz, twist, p, a)?;
        local.push(twist.w.matvec(&v));
    }
    let norm = reference_normalization(p);
    Ok(tensor_power(&local).into_iter().map(|z| z * norm).collect())
}

/// Residuals of the three local conditions at site `a`: (x,y,z)adj(K_J)|0,a> against
/// 1/q-det M^{(I)}(xi_a), and (x,y,z)K_J^h|0,a> for h = 0, 1 (relative to the frame scale).
pub fn local_property_residuals(xyz: &[C64; 3], twist: &TwistData, p: &ModelParams, a: usize) -> Result<[f64; 3]> {
    let v = local_reference_vector(xyz, twist, p, a)?;
    let [r0, r1, r2] = local_frame(xyz, twist);
    let target = cr(1.0) / p.qdet_identity(p.xi[a]);
    let dot = |r: &[C64]| r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
    let scale = |r: &[C64]| r.iter().map(|z| z.norm()).fold(0.0, f64::max) * v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok([crate::numkernel::rel_err(dot(&r2), target), dot(&r0).norm() / scale(&r0), dot(&r1).norm() / scale(&r1)])
}

/// Solves <k|v> = delta_{k,0} against a left family given as rows.
pub fn reference_vector_solve(left: &CMatrix) -> Result<Vec<C64>> {
    let ratio = family_rank_ratio(left, Side::Left);
    if ratio <= TAU {
        return Err(SovError::SingularBasis { ratio });
    }
    let mut e0 = CMatrix::zeros(left.rows(), 1);
    e0[(0, 0)] = cr(1.0);
    Ok(left.solve(&e0)?.col(0))
}

/// Left family. Variant PowersOfT1: <h| = <ref| prod T_1(xi_n)^{h_n}; variant Dressed:
/// <h| = <ref| prod T_2(xi_n - eta)^{[h_n=0]} T_1(xi_n)^{[h_n=2]}.
pub fn build_left_basis_with(charges: &ChargeSet, reference: &[C64], variant: Variant) -> CMatrix {
    let n = charges.t1_xi.len();
    let ops = |site: usize, digit: usize| -> Vec<&CMatrix> {
        match (variant, digit) {
            (Variant::PowersOfT1, k) => vec![&charges.t1_xi[site]; k],
            (Variant::Dressed, 0) => vec![&charges.t2_xi_shift[site]],
            (Variant::Dressed, 1) => vec![],
            (Variant::Dressed, _) => vec![&charges.t1_xi[site]],
        }
    };
    build_family(3, n, reference, Side::Left, &ops)
}

/// Right family. Variant PowersOfT1: prod T_1(xi_n)^{h_n}|ref>; variant Dressed:
/// prod T_2(xi_n)^{[h_n=1]} T_1(xi_n)^{[h_n=2]} |ref>.
pub fn build_right_basis_with(charges: &ChargeSet, reference: &[C64], variant: Variant) -> CMatrix {
    let n = charges.t1_xi.len();
    let ops = |site: usize, digit: usize| -> Vec<&CMatrix> {
        match (variant, digit) {
            (Variant::PowersOfT1, k) => vec![&charges.t1_xi[site]; k],
            (Variant::Dressed, 0) => vec![],
            (Variant::Dressed, 1) => vec![&charges.t2_xi[site]],
            (Variant::Dressed, _) => vec![&charges.t1_xi[site]],
        }
    };
    build_family(3, n, reference, Side::Right, &ops)
}

pub fn build_left_basis(p: &ModelParams, reference: &[C64], variant: Variant) -> Result<CMatrix> {
    Ok(build_left_basis_with(&ChargeSet::from_transfer(p)?, reference, variant))
}

pub fn build_right_basis(p: &ModelParams, reference: &[C64], variant: Variant) -> Result<CMatrix> {
    Ok(build_right_basis_with(&ChargeSet::from_transfer(p)?, reference, variant))
}

/// Largest per-row relative deviation between the dressed left family and alpha_h times the
/// powers-of-T_1 family built on <L| = <1| prod T_1(xi_n)^{-1}. Requires invertible K.
pub fn alpha_relation_residual(p: &ModelParams, reference: &[C64]) -> Result<f64> {
    let charges = ChargeSet::from_transfer(p)?;
    let mut prod = CMatrix::identity(p.dim());
    for t in &charges.t1_xi {
        prod = prod.matmul(t);
    }
    // <L| prod = <1|  <=>  prod^T L = 1
    let rhs = CMatrix::from_columns(&[reference.to_vec()]);
    let l = prod.transpose().solve(&rhs)?.col(0);
    let dressed = build_left_basis_with(&charges, reference, Variant::Dressed);
    let powers = build_left_basis_with(&charges, &l, Variant::PowersOfT1);
    let qd: Vec<C64> = p.xi.iter().map(|&x| p.qdet(x)).collect();
    let mut worst: f64 = 0.0;
    for h in TernaryIndex::all(p.sites) {
        let alpha: C64 = h.digits.iter().zip(&qd).map(|(&d, &q)| if d == 0 { q } else { cr(1.0) }).product();
        let expect: Vec<C64> = powers.row(h.flat()).into_iter().map(|z| z * alpha).collect();
        worst = worst.max(crate::numkernel::rel_diff_slices(&dressed.row(h.flat()), &expect));
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct SovBasisPair {
    /// Co-vectors as rows.
    pub left: CMatrix,
    /// Vectors as columns.
    pub right: CMatrix,
    pub variant: Variant,
    pub ref_covector: Vec<C64>,
    pub ref_vector: Vec<C64>,
    pub provenance: Provenance,
}

impl SovBasisPair {
    /// The dressed pair: <1| of tensor form, |0> from the closed form.
    pub fn dressed(p: &ModelParams, xyz: &[C64; 3]) -> Result<Self> {
        let charges = ChargeSet::from_transfer(p)?;
        Self::dressed_with(p, &charges, xyz)
    }

    pub fn dressed_with(p: &ModelParams, charges: &ChargeSet, xyz: &[C64; 3]) -> Result<Self> {
        let ref_covector = reference_covector(xyz, &p.twist, p.sites)?;
        let ref_vector = reference_vector_closed(xyz, &p.twist, p)?;
        let left = build_left_basis_with(charges, &ref_covector, Variant::Dressed);
        let right = build_right_basis_with(charges, &ref_vector, Variant::Dressed);
        Ok(SovBasisPair {
            left,
            right,
            variant: Variant::Dressed,
            ref_covector,
            ref_vector,
            provenance: charges.provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.left.rows()
    }

    pub fn covector(&self, h: &TernaryIndex) -> Vec<C64> {
        self.left.row(h.flat())
    }

    pub fn vector(&self, h: &TernaryIndex) -> Vec<C64> {
        self.right.col(h.flat())
    }

    /// sigma_min/sigma_max of the left and right families, each member scaled to unit norm.
    pub fn rank_ratios(&self) -> (f64, f64) {
        (family_rank_ratio(&self.left, Side::Left), family_rank_ratio(&self.right, Side::Right))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RetryEvent {
    pub seed: u64,
    pub reason: String,
}

/// Draws parameters and a reference co-vector whose dressed bases are both of full rank,
/// resampling with an advanced seed up to `max_retries` times.
pub fn sample_admissible(
    seed: u64,
    n: usize,
    case: TwistCase,
    max_retries: usize,
) -> Result<(ModelParams, [C64; 3], SovBasisPair, Vec<RetryEvent>)> {
    let mut log = Vec::new();
    let mut last_err = SovError::SingularBasis { ratio: 0.0 };
    for attempt in 0..=max_retries {
        let s = seed.wrapping_add(attempt as u64 * 0x9E37_79B9);
        let mut sampler = Sampler::new(s);
        let p = sampler.params(n, case)?;
        let xyz = sampler.xyz();
        match SovBasisPair::dressed(&p, &xyz) {
            Ok(pair) => {
                let (l, r) = pair.rank_ratios();
                if l > TAU && r > TAU {
                    return Ok((p, xyz, pair, log));
                }
                last_err = SovError::SingularBasis { ratio: l.min(r) };
                log.push(RetryEvent { seed: s, reason: format!("rank ratios {l:e}, {r:e}") });
            }
            Err(e) => {
                log.push(RetryEvent { seed: s, reason: e.to_string() });
                last_err = e;
            }
        }
    }
    Err(last_err)
}
