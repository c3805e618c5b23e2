//! Rational gl(2) chain with a general 2x2 twist: transfer matrix, SoV bases that are
//! orthogonal by construction, their Vandermonde measure and the eigenstate representations.

use serde::Serialize;

use crate::error::{Result, SovError};
use crate::gl3_model::{apply_transfer_free_d, commutator_residual, embed_one, embed_two, r_matrix_d};
use crate::numkernel::{eig_general, pair, rel_diff_slices, rel_err, vandermonde, vec_max_abs, CMatrix, C64, DENSE_CAP};
use crate::sov_bases::{build_family, family_rank_ratio, tensor_power, Side};

#[derive(Clone, Debug, Serialize)]
pub struct Gl2Params {
    pub sites: usize,
    pub eta: C64,
    pub xi: Vec<C64>,
    /// [[a, b], [c, d]]
    #[serde(skip)]
    pub k: CMatrix,
    /// Reference row (x, y).
    pub xy: [C64; 2],
}

impl Gl2Params {
    pub fn new(eta: C64, xi: Vec<C64>, k: CMatrix, xy: [C64; 2]) -> Result<Self> {
        if k.rows() != 2 || k.cols() != 2 {
            return Err(SovError::InvalidParams("gl2 twist must be 2x2".into()));
        }
        let p = Gl2Params { sites: xi.len(), eta, xi, k, xy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sites;
        if n == 0 {
            return Err(SovError::InvalidParams("at least one site".into()));
        }
        if self.dim() > DENSE_CAP {
            return Err(SovError::SizeCap { dim: self.dim(), cap: DENSE_CAP });
        }
        let k = &self.k;
        let scale = k.max_abs().max(1.0);
        if k[(0, 1)].norm() <= 1e-12 * scale && k[(1, 0)].norm() <= 1e-12 * scale && (k[(0, 0)] - k[(1, 1)]).norm() <= 1e-12 * scale {
            return Err(SovError::InvalidParams("K is proportional to the identity".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = self.xi[i] - self.xi[j];
                if dx.norm() < 1e-12 || (dx - self.eta).norm() < 1e-12 || (dx + self.eta).norm() < 1e-12 {
                    return Err(SovError::InvalidParams(format!("xi_{i} - xi_{j} is in {{0, +-eta}}")));
                }
            }
        }
        if self.n_k().norm() < 1e-12 {
            return Err(SovError::DegenerateReference(format!("n_K(x, y) = {}", self.n_k())));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        1usize << self.sites
    }

    fn entries(&self) -> (C64, C64, C64, C64) {
        (self.k[(0, 0)], self.k[(0, 1)], self.k[(1, 0)], self.k[(1, 1)])
    }

    /// b x^2 + (d - a) x y - c y^2
    pub fn n_k(&self) -> C64 {
        let (a, b, c, d) = self.entries();
        let [x, y] = self.xy;
        b * x * x + (d - a) * x * y - c * y * y
    }

    pub fn det_k(&self) -> C64 {
        let (a, b, c, d) = self.entries();
        a * d - b * c
    }

    /// xi_a - h eta
    pub fn xs(&self, a: usize, h: u8) -> C64 {
        self.xi[a] - self.eta * h as f64
    }

    /// a(lambda) = prod (lambda - xi_n + eta)
    pub fn a_fn(&self, lambda: C64) -> C64 {
        self.xi.iter().map(|&x| lambda - x + self.eta).product()
    }

    /// d(lambda) = prod (lambda - xi_n)
    pub fn d(&self, lambda: C64) -> C64 {
        self.xi.iter().map(|&x| lambda - x).product()
    }

    /// V(xi_1^(h_1), ..., xi_N^(h_N))
    pub fn vandermonde_h(&self, h: &[u8]) -> C64 {
        let pts: Vec<C64> = h.iter().enumerate().map(|(a, &x)| self.xs(a, x)).collect();
        vandermonde(&pts)
    }

    pub fn v(&self) -> C64 {
        vandermonde(&self.xi)
    }

    /// det K a(lambda) d(lambda - eta)
    pub fn qdet(&self, lambda: C64) -> C64 {
        self.det_k() * self.a_fn(lambda) * self.d(lambda - self.eta)
    }
}

/// Binary digits of a flat index, site 1 least significant.
pub fn binary_digits(flat: usize, n: usize) -> Vec<u8> {
    (0..n).map(|a| ((flat >> a) & 1) as u8).collect()
}

/// Dense T(lambda) = tr_a K_a R_{aN}(lambda - xi_N) ... R_{a1}(lambda - xi_1).
pub fn gl2_transfer(p: &Gl2Params, lambda: C64) -> Result<CMatrix> {
    let n = p.sites;
    let q = p.dim();
    if 2 * q > DENSE_CAP {
        return Err(SovError::SizeCap { dim: 2 * q, cap: DENSE_CAP });
    }
    let npos = n + 1;
    let mut m = embed_one(2, &p.k, n, npos);
    for site in (0..n).rev() {
        m = m.matmul(&embed_two(2, &r_matrix_d(2, lambda - p.xi[site], p.eta), n, site, npos));
    }
    Ok(CMatrix::from_fn(q, q, |i, j| m[(i, j)] + m[(q + i, q + j)]))
}

/// T(lambda) v without forming T.
pub fn gl2_apply_free(p: &Gl2Params, lambda: C64, v: &[C64]) -> Vec<C64> {
    apply_transfer_free_d(2, &p.k, p.eta, &p.xi, 1, lambda, v)
}

#[derive(Clone, Debug, Serialize)]
pub struct Gl2TransferReport {
    pub sites: usize,
    /// Dense against matrix-free action.
    pub free_vs_dense: f64,
    pub commutator: f64,
    /// Leading coefficient against tr K.
    pub leading: f64,
    /// T(xi_a) T(xi_a - eta) away from a multiple of the identity, per site.
    pub qdet_off_scalar: Vec<f64>,
    /// The scalar against det K a(xi_a) d(xi_a - eta), per site.
    pub qdet_closed_form: Vec<f64>,
}

impl Gl2TransferReport {
    pub fn max_residual(&self) -> f64 {
        self.qdet_off_scalar
            .iter()
            .chain(&self.qdet_closed_form)
            .fold(self.free_vs_dense.max(self.commutator).max(self.leading), |m, &x| m.max(x))
    }
}

/// Commutation, polynomial and fusion checks of the gl(2) transfer matrix at two points.
pub fn gl2_transfer_checks(p: &Gl2Params, lambda: C64, mu: C64) -> Result<Gl2TransferReport> {
    let tl = gl2_transfer(p, lambda)?;
    let tm = gl2_transfer(p, mu)?;
    let q = p.dim();
    let mut free_vs_dense: f64 = 0.0;
    for j in 0..q {
        let e: Vec<C64> = (0..q).map(|i| C64::new((i == j) as u8 as f64, 0.0)).collect();
        free_vs_dense = free_vs_dense.max(rel_diff_slices(&gl2_apply_free(p, lambda, &e), &tl.col(j)));
    }
    // leading coefficient as the N-th divided difference
    let n = p.sites;
    let nodes: Vec<C64> = (0..=n).map(|k| p.xi[0] + p.eta * (0.37 + 0.91 * k as f64) + C64::new(0.0, 0.29 * k as f64)).collect();
    let mut lead = CMatrix::zeros(q, q);
    for (i, &x) in nodes.iter().enumerate() {
        let mut w = C64::new(1.0, 0.0);
        for (j, &y) in nodes.iter().enumerate() {
            if i != j {
                w /= x - y;
            }
        }
        lead.axpy(w, &gl2_transfer(p, x)?);
    }
    let tr = p.k.trace();
    let leading = lead.sub(&CMatrix::scalar(q, tr)).max_abs() / tr.norm().max(1e-300);
    let mut qdet_off_scalar = Vec::new();
    let mut qdet_closed_form = Vec::new();
    for a in 0..n {
        let prod = gl2_transfer(p, p.xi[a])?.matmul(&gl2_transfer(p, p.xs(a, 1))?);
        qdet_off_scalar.push(prod.off_scalar_residual());
        let s = prod.trace() / q as f64;
        qdet_closed_form.push(rel_err(s, p.qdet(p.xi[a])));
    }
    Ok(Gl2TransferReport {
        sites: n,
        free_vs_dense,
        commutator: commutator_residual(&tl, &tm),
        leading,
        qdet_off_scalar,
        qdet_closed_form,
    })
}

#[derive(Clone, Debug)]
pub struct Gl2Bases {
    /// <h| as rows, flat binary order.
    pub left: CMatrix,
    /// |h> as columns.
    pub right: CMatrix,
    /// <0| = (x, y)^{(x) N}
    pub ref_covector: Vec<C64>,
    /// Closed-form |1>.
    pub vec_one: Vec<C64>,
    /// Closed-form |0>.
    pub vec_zero: Vec<C64>,
}

impl Gl2Bases {
    pub fn covector(&self, h: usize) -> Vec<C64> {
        self.left.row(h)
    }

    pub fn vector(&self, h: usize) -> Vec<C64> {
        self.right.col(h)
    }
}

/// prod_{i<j} (eta^2 - (xi_i - xi_j)^2)
fn n_pairs(p: &Gl2Params) -> C64 {
    let mut v = C64::new(1.0, 0.0);
    for i in 0..p.sites {
        for j in i + 1..p.sites {
            let dx = p.xi[i] - p.xi[j];
            v *= p.eta * p.eta - dx * dx;
        }
    }
    v
}

/// Tensor-form |1> and |0> normalized so that <1..1|1> = 1/(V V^(1)) and <0..0|0> = 1/V^2.
pub fn gl2_reference_vectors(p: &Gl2Params) -> (Vec<C64>, Vec<C64>) {
    let n = p.sites;
    let (a, b, c, d) = p.entries();
    let [x, y] = p.xy;
    let nk = p.n_k().powi(n as i32);
    let v = p.v();
    let v1 = p.vandermonde_h(&vec![1; n]);
    let prod_a: C64 = (0..n).map(|k| p.a_fn(p.xi[k])).product();
    // eta^N from R(0) = eta P
    let n1 = n_pairs(p) * nk * v * v1 / prod_a * p.eta.powi(n as i32);
    let n0 = nk * v * v;
    let one = tensor_power(&vec![vec![-y, x]; n]).into_iter().map(|z| z / n1).collect();
    let zero = tensor_power(&vec![vec![b * x + d * y, -(a * x + c * y)]; n]).into_iter().map(|z| z / n0).collect();
    (one, zero)
}

/// <h| = <0| prod (T(xi_a)/a(xi_a))^{h_a};  |h> = prod (T(xi_a - eta)/a(xi_a))^{1 - h_a} |1>.
pub fn gl2_bases(p: &Gl2Params) -> Result<Gl2Bases> {
    let n = p.sites;
    let ref_covector = tensor_power(&vec![p.xy.to_vec(); n]);
    let (vec_one, vec_zero) = gl2_reference_vectors(p);
    let up: Vec<CMatrix> = (0..n).map(|a| gl2_transfer(p, p.xi[a]).map(|t| t.scale(C64::new(1.0, 0.0) / p.a_fn(p.xi[a])))).collect::<Result<_>>()?;
    let down: Vec<CMatrix> =
        (0..n).map(|a| gl2_transfer(p, p.xs(a, 1)).map(|t| t.scale(C64::new(1.0, 0.0) / p.a_fn(p.xi[a])))).collect::<Result<_>>()?;
    let left_ops = |site: usize, digit: usize| -> Vec<&CMatrix> {
        if digit == 1 {
            vec![&up[site]]
        } else {
            vec![]
        }
    };
    let right_ops = |site: usize, digit: usize| -> Vec<&CMatrix> {
        if digit == 0 {
            vec![&down[site]]
        } else {
            vec![]
        }
    };
    let left = build_family(2, n, &ref_covector, Side::Left, &left_ops);
    let right = build_family(2, n, &vec_one, Side::Right, &right_ops);
    let ratio = family_rank_ratio(&left, Side::Left);
    if ratio <= 1e-12 {
        return Err(SovError::SingularBasis { ratio });
    }
    Ok(Gl2Bases { left, right, ref_covector, vec_one, vec_zero })
}

/// 1 / (V(xi) V(xi^(h)))
pub fn gl2_measure(p: &Gl2Params, h: &[u8]) -> C64 {
    C64::new(1.0, 0.0) / (p.v() * p.vandermonde_h(h))
}

#[derive(Clone, Debug, Serialize)]
pub struct Gl2OrthoReport {
    pub sites: usize,
    pub scale: f64,
    /// max |<h|k>| / scale, h != k
    pub offdiag_max: f64,
    /// Diagonal against 1/(V V^(h)).
    pub diag_max_rel: f64,
    /// <h|0> against delta_{h,0} / V^2 and <h|1> against delta_{h,1} / (V V^(1)).
    pub reference_residual: f64,
    /// |0 ... 0> built from |1> against the closed-form |0>.
    pub zero_vector_residual: f64,
    /// V sum_h V^(h) |h><h| against the identity.
    pub identity_residual: f64,
}

impl Gl2OrthoReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.offdiag_max <= tol
            && self.diag_max_rel <= tol
            && self.reference_residual <= tol
            && self.zero_vector_residual <= tol
            && self.identity_residual <= tol
    }
}

pub fn gl2_ortho_report(p: &Gl2Params, bases: &Gl2Bases) -> Gl2OrthoReport {
    let n = p.sites;
    let q = p.dim();
    let g = bases.left.matmul(&bases.right);
    let scale = g.max_abs();
    let mut offdiag_max: f64 = 0.0;
    let mut diag_max_rel: f64 = 0.0;
    for i in 0..q {
        for j in 0..q {
            if i == j {
                diag_max_rel = diag_max_rel.max(rel_err(g[(i, i)], gl2_measure(p, &binary_digits(i, n))));
            } else {
                offdiag_max = offdiag_max.max(g[(i, j)].norm() / scale);
            }
        }
    }
    let v = p.v();
    let v1 = p.vandermonde_h(&vec![1; n]);
    let zero_target: Vec<C64> = (0..q).map(|h| if h == 0 { C64::new(1.0, 0.0) / (v * v) } else { C64::new(0.0, 0.0) }).collect();
    let one_target: Vec<C64> = (0..q).map(|h| if h == q - 1 { C64::new(1.0, 0.0) / (v * v1) } else { C64::new(0.0, 0.0) }).collect();
    let reference_residual = rel_diff_slices(&bases.left.matvec(&bases.vec_zero), &zero_target)
        .max(rel_diff_slices(&bases.left.matvec(&bases.vec_one), &one_target));
    let zero_vector_residual = rel_diff_slices(&bases.vector(0), &bases.vec_zero);
    let mut ident = CMatrix::zeros(q, q);
    for h in 0..q {
        let w = v * p.vandermonde_h(&binary_digits(h, n));
        let col = bases.right.col(h);
        let row = bases.left.row(h);
        for i in 0..q {
            for j in 0..q {
                ident[(i, j)] += w * col[i] * row[j];
            }
        }
    }
    let identity_residual = ident.sub(&CMatrix::identity(q)).max_abs();
    Gl2OrthoReport { sites: n, scale, offdiag_max, diag_max_rel, reference_residual, zero_vector_residual, identity_residual }
}

#[derive(Clone, Debug, Serialize)]
pub struct Gl2EigenRow {
    pub index: usize,
    pub eigenvalue: C64,
    /// |t> rebuilt from t(xi_a) against the eigenvector normalized by <0|t> = 1/V.
    pub right_residual: f64,
    /// <t| rebuilt from t(xi_a - eta) against the co-vector normalized by <t|1> = 1/V.
    pub left_residual: f64,
    /// Invertible K only: <t| rebuilt from t(xi_a) with N_t.
    pub det_rep_residual: Option<f64>,
    /// Invertible K only: |h> = prod (T(xi_a)/(det K d(xi_a - eta)))^{h_a} |0>.
    pub right_basis_alt_residual: Option<f64>,
    /// <t|0> measured.
    pub n_t: C64,
    /// prod t(xi_a - eta)/a(xi_a).
    pub n_t_formula: C64,
    /// V(xi) <t|0> against the product.
    pub n_t_residual: f64,
}

impl Gl2EigenRow {
    pub fn max_residual(&self) -> f64 {
        let mut m = self.right_residual.max(self.left_residual).max(self.n_t_residual);
        if let Some(r) = self.det_rep_residual {
            m = m.max(r);
        }
        if let Some(r) = self.right_basis_alt_residual {
            m = m.max(r);
        }
        m
    }
}

/// Diagonalizes T(lambda_0) and checks the SoV representations of every eigenstate.
pub fn gl2_eigen_reps(p: &Gl2Params, bases: &Gl2Bases, lambda0: C64) -> Result<Vec<Gl2EigenRow>> {
    let n = p.sites;
    let q = p.dim();
    let eig = eig_general(&gl2_transfer(p, lambda0)?)?;
    if eig.residual_norm > 1e-8 {
        return Err(SovError::EigFailure { residual: eig.residual_norm });
    }
    let gap = eig.relative_gap();
    if gap < 1e-6 {
        return Err(SovError::SpectrumNotSimple { gap });
    }
    let t_xi: Vec<CMatrix> = (0..n).map(|a| gl2_transfer(p, p.xi[a])).collect::<Result<_>>()?;
    let t_xs: Vec<CMatrix> = (0..n).map(|a| gl2_transfer(p, p.xs(a, 1))).collect::<Result<_>>()?;
    let v = p.v();
    let invertible = p.det_k().norm() > 1e-9 * p.k.max_abs().powi(2);
    let alt_residual = if invertible {
        let mut worst: f64 = 0.0;
        for h in 0..q {
            let digits = binary_digits(h, n);
            let mut w = bases.vec_zero.clone();
            for a in 0..n {
                if digits[a] == 1 {
                    let s = C64::new(1.0, 0.0) / (p.det_k() * p.d(p.xs(a, 1)));
                    w = t_xi[a].matvec(&w).into_iter().map(|z| z * s).collect();
                }
            }
            worst = worst.max(rel_diff_slices(&w, &bases.vector(h)));
        }
        Some(worst)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(q);
    for idx in 0..q {
        let r = eig.right(idx);
        let l = eig.left(idx);
        let ray = |t: &CMatrix| pair(&l, &t.matvec(&r)) / pair(&l, &r);
        let tx: Vec<C64> = t_xi.iter().map(ray).collect();
        let ts: Vec<C64> = t_xs.iter().map(ray).collect();
        let nr = pair(&bases.ref_covector, &r) * v;
        let nl = pair(&l, &bases.vec_one) * v;
        let right: Vec<C64> = r.iter().map(|z| z / nr).collect();
        let left: Vec<C64> = l.iter().map(|z| z / nl).collect();
        let mut rebuilt_r = vec![C64::new(0.0, 0.0); q];
        let mut rebuilt_l = vec![C64::new(0.0, 0.0); q];
        let mut rebuilt_det = vec![C64::new(0.0, 0.0); q];
        for h in 0..q {
            let digits = binary_digits(h, n);
            let vh = p.vandermonde_h(&digits);
            let mut cr_ = vh;
            let mut cl = vh;
            let mut cd = vh;
            for a in 0..n {
                let aa = p.a_fn(p.xi[a]);
                if digits[a] == 1 {
                    cr_ *= tx[a] / aa;
                    if invertible {
                        cd *= tx[a] / (p.det_k() * p.d(p.xs(a, 1)));
                    }
                } else {
                    cl *= ts[a] / aa;
                }
            }
            let col = bases.right.col(h);
            let row = bases.left.row(h);
            for i in 0..q {
                rebuilt_r[i] += cr_ * col[i];
                rebuilt_l[i] += cl * row[i];
                rebuilt_det[i] += cd * row[i];
            }
        }
        let n_t = pair(&left, &bases.vec_zero);
        let n_t_formula: C64 = (0..n).map(|a| ts[a] / p.a_fn(p.xi[a])).product();
        let det_rep_residual = invertible.then(|| {
            let scaled: Vec<C64> = rebuilt_det.iter().map(|z| z * n_t_formula).collect();
            rel_diff_slices(&scaled, &left)
        });
        rows.push(Gl2EigenRow {
            index: idx,
            eigenvalue: eig.eigenvalues[idx],
            right_residual: rel_diff_slices(&rebuilt_r, &right),
            left_residual: rel_diff_slices(&rebuilt_l, &left),
            det_rep_residual,
            right_basis_alt_residual: alt_residual,
            n_t,
            n_t_formula,
            n_t_residual: rel_err(n_t * v, n_t_formula),
        });
    }
    Ok(rows)
}

/// Smallest |<t|0>| across the spectrum relative to the largest.
pub fn min_n_t(rows: &[Gl2EigenRow]) -> f64 {
    let vals: Vec<C64> = rows.iter().map(|r| r.n_t).collect();
    let scale = vec_max_abs(&vals).max(f64::MIN_POSITIVE);
    vals.iter().map(|z| z.norm() / scale).fold(f64::INFINITY, f64::min)
}
