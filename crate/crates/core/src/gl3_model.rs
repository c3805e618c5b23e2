//! Fundamental gl(3) Yang-Baxter model.
//!
//! Tensor legs: auxiliary legs precede quantum legs, auxiliary leg 1 is the most
//! significant digit, and quantum site 1 is the fastest-varying digit. A flat
//! quantum index is `sum_n h_n 3^(n-1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SovError};
use crate::numkernel::{antisymmetrizer, c, cr, pair, rel_diff, CMatrix, C64, DENSE_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TwistCase {
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    II,
    #[serde(rename = "iii")]
    III,
}

#[derive(Clone, Debug)]
pub struct TwistData {
    pub k_matrix: CMatrix,
    pub case: TwistCase,
    pub w: CMatrix,
    pub w_inv: CMatrix,
    pub k_jordan: CMatrix,
    pub k_adjugate: CMatrix,
    /// tr K
    pub a: C64,
    /// ((tr K)^2 - tr K^2)/2
    pub b: C64,
    /// det K
    pub c: C64,
}

/// Adjugate of a 3x3 matrix, so that adj(M) M = det(M) I.
pub fn adjugate3(m: &CMatrix) -> CMatrix {
    let e = |i: usize, j: usize| m[(i % 3, j % 3)];
    CMatrix::from_fn(3, 3, |i, j| {
        // cofactor of (j, i)
        e(j + 1, i + 1) * e(j + 2, i + 2) - e(j + 1, i + 2) * e(j + 2, i + 1)
    })
}

pub fn det3(m: &CMatrix) -> C64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

impl TwistData {
    /// Builds K = W K_J W^{-1} from explicit Jordan data; the off-diagonal entries of
    /// K_J are fixed by the case.
    pub fn from_jordan(w: CMatrix, k: [C64; 3], case: TwistCase) -> Result<Self> {
        let (y1, y2) = match case {
            TwistCase::I => (0.0, 0.0),
            TwistCase::II => (1.0, 0.0),
            TwistCase::III => (1.0, 1.0),
        };
        let sep = |a: C64, b: C64| (a - b).norm() > 1e-12 * (1.0 + a.norm() + b.norm());
        let ok = match case {
            TwistCase::I => sep(k[0], k[1]) && sep(k[0], k[2]) && sep(k[1], k[2]),
            TwistCase::II => !sep(k[0], k[1]) && sep(k[0], k[2]),
            TwistCase::III => !sep(k[0], k[1]) && !sep(k[1], k[2]),
        };
        if !ok {
            return Err(SovError::InvalidParams(format!("eigenvalues {k:?} do not match case {case:?}")));
        }
        let mut kj = CMatrix::zeros(3, 3);
        kj[(0, 0)] = k[0];
        kj[(1, 1)] = k[1];
        kj[(2, 2)] = k[2];
        kj[(0, 1)] = cr(y1);
        kj[(1, 2)] = cr(y2);
        Self::from_w_kj(w, kj, case)
    }

    pub fn from_w_kj(w: CMatrix, kj: CMatrix, case: TwistCase) -> Result<Self> {
        if w.rows() != 3 || w.cols() != 3 || kj.rows() != 3 || kj.cols() != 3 {
            return Err(SovError::InvalidParams("twist data must be 3x3".into()));
        }
        if det3(&w).norm() < 1e-12 {
            return Err(SovError::InvalidParams("W is singular".into()));
        }
        let w_inv = adjugate3(&w).scale(cr(1.0) / det3(&w));
        let k_matrix = w.matmul(&kj).matmul(&w_inv);
        Ok(Self::assemble(k_matrix, case, w, w_inv, kj))
    }

    /// Case i twist from W and three distinct eigenvalues.
    pub fn from_eigenvalues(w: CMatrix, k: [C64; 3]) -> Result<Self> {
        Self::from_jordan(w, k, TwistCase::I)
    }

    /// Diagonalizes a user-supplied K; only the diagonalizable simple-spectrum case is accepted.
    pub fn from_matrix(k_matrix: CMatrix) -> Result<Self> {
        let e = crate::numkernel::eig_general(&k_matrix)?;
        if e.relative_gap() < 1e-8 {
            return Err(SovError::InvalidParams(
                "K has a repeated eigenvalue; supply (W, K_J) explicitly for cases ii/iii".into(),
            ));
        }
        let w = e.right_eigvecs.clone();
        let k = [e.eigenvalues[0], e.eigenvalues[1], e.eigenvalues[2]];
        let mut kj = CMatrix::zeros(3, 3);
        for i in 0..3 {
            kj[(i, i)] = k[i];
        }
        let w_inv = adjugate3(&w).scale(cr(1.0) / det3(&w));
        Ok(Self::assemble(k_matrix, TwistCase::I, w, w_inv, kj))
    }

    fn assemble(k_matrix: CMatrix, case: TwistCase, w: CMatrix, w_inv: CMatrix, k_jordan: CMatrix) -> Self {
        let k_adjugate = adjugate3(&k_matrix);
        let a = k_matrix.trace();
        let b = (a * a - k_matrix.matmul(&k_matrix).trace()) * 0.5;
        let c = det3(&k_matrix);
        TwistData { k_matrix, case, w, w_inv, k_jordan, k_adjugate, a, b, c }
    }

    pub fn k(&self, i: usize) -> C64 {
        self.k_jordan[(i, i)]
    }

    pub fn y1(&self) -> C64 {
        self.k_jordan[(0, 1)]
    }

    pub fn y2(&self) -> C64 {
        self.k_jordan[(1, 2)]
    }

    pub fn jordan_adjugate(&self) -> CMatrix {
        adjugate3(&self.k_jordan)
    }

    /// Replaces one Jordan diagonal entry, keeping W and the case shape.
    pub fn with_jordan_diagonal(&self, k: [C64; 3]) -> Result<Self> {
        Self::from_jordan(self.w.clone(), k, self.case)
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub sites: usize,
    pub eta: C64,
    pub xi: Vec<C64>,
    pub twist: TwistData,
}

impl ModelParams {
    pub fn new(eta: C64, xi: Vec<C64>, twist: TwistData) -> Result<Self> {
        let p = ModelParams { sites: xi.len(), eta, xi, twist };
        p.validate()?;
        Ok(p)
    }

    /// Inhomogeneity condition xi_i - xi_j not in {0, +eta, -eta}.
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 {
            return Err(SovError::InvalidParams("need at least one site".into()));
        }
        if self.eta.norm() == 0.0 {
            return Err(SovError::InvalidParams("eta must be nonzero".into()));
        }
        for i in 0..self.sites {
            for j in 0..self.sites {
                if i == j {
                    continue;
                }
                for s in [-1.0, 0.0, 1.0] {
                    if (self.xi[i] - self.xi[j] - self.eta * s).norm() < 1e-12 {
                        return Err(SovError::InvalidParams(format!(
                            "xi_{} - xi_{} = {}*eta",
                            i + 1,
                            j + 1,
                            s
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn with_twist(&self, twist: TwistData) -> Self {
        ModelParams { twist, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        3usize.pow(self.sites as u32)
    }

    /// xi_a^{(h)} = xi_a - h eta, with a 0-based.
    pub fn xs(&self, a: usize, h: i32) -> C64 {
        self.xi[a] - self.eta * h as f64
    }

    /// d(lambda) = prod_a (lambda - xi_a)
    pub fn d(&self, lambda: C64) -> C64 {
        self.xi.iter().map(|x| lambda - x).product()
    }

    /// a(lambda) = d(lambda + eta)
    pub fn a_fn(&self, lambda: C64) -> C64 {
        self.d(lambda + self.eta)
    }

    /// q-det M^{(I)}(lambda)
    pub fn qdet_identity(&self, lambda: C64) -> C64 {
        let e = self.eta;
        self.xi.iter().map(|x| (lambda - x + e) * (lambda - x - e) * (lambda - x - e * 2.0)).product()
    }

    /// q-det M^{(K)}(lambda) = det K q-det M^{(I)}(lambda)
    pub fn qdet(&self, lambda: C64) -> C64 {
        self.twist.c * self.qdet_identity(lambda)
    }

    /// T_m^{(K, infinity)}
    pub fn t_inf(&self, m: usize) -> C64 {
        match m {
            1 => self.twist.a,
            2 => self.twist.b,
            3 => self.twist.c,
            _ => panic!("m must be 1, 2 or 3"),
        }
    }

    /// T_{m,h}^{(K,infinity)}(lambda) = T_m^infinity prod_b (lambda - xi_b^{(h_b)})
    pub fn t_inf_h(&self, m: usize, h: &[u8], lambda: C64) -> C64 {
        self.t_inf(m) * (0..self.sites).map(|b| lambda - self.xs(b, h[b] as i32)).product::<C64>()
    }

    /// Interpolation weight g_{a,h}^{(m)}(lambda), a 0-based.
    pub fn g(&self, m: usize, a: usize, h: &[u8], lambda: C64) -> C64 {
        let xa = self.xs(a, h[a] as i32);
        let mut v = cr(1.0);
        for b in 0..self.sites {
            if b != a {
                let xb = self.xs(b, h[b] as i32);
                v *= (lambda - xb) / (xa - xb);
            }
        }
        for _ in 1..m {
            for b in 0..self.sites {
                v /= xa - self.xs(b, -1);
            }
        }
        v
    }
}

/// R(lambda) = lambda I + eta P on C^3 (x) C^3.
pub fn r_matrix(lambda: C64, eta: C64) -> CMatrix {
    r_matrix_d(3, lambda, eta)
}

/// R(lambda) = lambda I + eta P on C^d (x) C^d.
pub fn r_matrix_d(d: usize, lambda: C64, eta: C64) -> CMatrix {
    let n = d * d;
    CMatrix::from_fn(n, n, |row, col| {
        let (i1, i2) = (row / d, row % d);
        let (j1, j2) = (col / d, col % d);
        let mut v = C64::new(0.0, 0.0);
        if row == col {
            v += lambda;
        }
        if i1 == j2 && i2 == j1 {
            v += eta;
        }
        v
    })
}

/// Places a two-leg operator (first factor at digit position `pa`, second at `pb`) into a
/// space of `npos` base-`d` digits. Position p carries weight d^p.
pub fn embed_two(d: usize, op: &CMatrix, pa: usize, pb: usize, npos: usize) -> CMatrix {
    assert_ne!(pa, pb);
    let dim = d.pow(npos as u32);
    let (wa, wb) = (d.pow(pa as u32), d.pow(pb as u32));
    let mut out = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let (ca, cb) = ((col / wa) % d, (col / wb) % d);
        let rest = col - ca * wa - cb * wb;
        for ra in 0..d {
            for rb in 0..d {
                let v = op[(ra * d + rb, ca * d + cb)];
                if v.re != 0.0 || v.im != 0.0 {
                    out[(rest + ra * wa + rb * wb, col)] += v;
                }
            }
        }
    }
    out
}

/// Places a one-leg operator at digit position `p`.
pub fn embed_one(d: usize, op: &CMatrix, p: usize, npos: usize) -> CMatrix {
    let dim = d.pow(npos as u32);
    let w = d.pow(p as u32);
    let mut out = CMatrix::zeros(dim, dim);
    for col in 0..dim {
        let cd = (col / w) % d;
        let rest = col - cd * w;
        for rd in 0..d {
            let v = op[(rd, cd)];
            if v.re != 0.0 || v.im != 0.0 {
                out[(rest + rd * w, col)] += v;
            }
        }
    }
    out
}

/// Yang-Baxter residual |R12(l-m) R13(l) R23(m) - R23(m) R13(l) R12(l-m)| / scale on C^3^3.
pub fn check_yang_baxter(lambda: C64, mu: C64, eta: C64) -> f64 {
    // legs 1,2,3 sit at digit positions 2,1,0
    let r12 = embed_two(3, &r_matrix(lambda - mu, eta), 2, 1, 3);
    let r13 = embed_two(3, &r_matrix(lambda, eta), 2, 0, 3);
    let r23 = embed_two(3, &r_matrix(mu, eta), 1, 0, 3);
    let lhs = r12.matmul(&r13).matmul(&r23);
    let rhs = r23.matmul(&r13).matmul(&r12);
    let d = lhs.sub(&rhs).max_abs();
    let scale = lhs.max_abs().max(rhs.max_abs());
    if scale == 0.0 {
        d
    } else {
        d / scale
    }
}

/// Scalar Yang-Baxter residual |R12(l) K1 K2 - K2 K1 R12(l)| / scale.
pub fn check_scalar_yb(k: &CMatrix, lambda: C64, eta: C64) -> f64 {
    let r = r_matrix(lambda, eta);
    let kk = crate::numkernel::kron(k, k).expect("9x9");
    let lhs = r.matmul(&kk);
    let rhs = kk.matmul(&r);
    rel_diff(&lhs, &rhs)
}

fn check_cap(dim: usize) -> Result<()> {
    if dim > DENSE_CAP {
        Err(SovError::SizeCap { dim, cap: DENSE_CAP })
    } else {
        Ok(())
    }
}

/// Monodromy M(lambda) = K R_{aN}(lambda-xi_N) ... R_{a1}(lambda-xi_1) as a dense matrix on
/// aux (x) quantum, auxiliary leg most significant.
pub fn monodromy(p: &ModelParams, lambda: C64) -> Result<CMatrix> {
    let n = p.sites;
    let dim = 3 * p.dim();
    check_cap(dim)?;
    let npos = n + 1;
    let mut m = embed_one(3, &p.twist.k_matrix, n, npos);
    for site in (0..n).rev() {
        let r = embed_two(3, &r_matrix(lambda - p.xi[site], p.eta), n, site, npos);
        m = m.matmul(&r);
    }
    Ok(m)
}

/// Auxiliary-space blocks of the monodromy: M(lambda) = sum_{ij} E_ij (x) A_ij, index 3*i+j.
pub fn monodromy_blocks(p: &ModelParams, lambda: C64) -> Result<Vec<CMatrix>> {
    check_cap(p.dim())?;
    let eta = p.eta;
    // bare product L_N ... L_1 built from site 1 outward; L_n(u)_{ik} = u d_ik + eta E_ki
    let mut bare: Vec<CMatrix> = (0..9).map(|idx| if idx / 3 == idx % 3 { CMatrix::identity(1) } else { CMatrix::zeros(1, 1) }).collect();
    for site in 0..p.sites {
        let u = lambda - p.xi[site];
        let sub = bare[0].rows();
        let mut next = vec![CMatrix::zeros(sub * 3, sub * 3); 9];
        for i in 0..3 {
            for j in 0..3 {
                let out = &mut next[3 * i + j];
                for k in 0..3 {
                    let b = &bare[3 * k + j];
                    // local factor on the new (most significant) site: u d_ik I + eta E_ki
                    for r in 0..3 {
                        for s in 0..3 {
                            let mut coef = C64::new(0.0, 0.0);
                            if i == k && r == s {
                                coef += u;
                            }
                            if r == k && s == i {
                                coef += eta;
                            }
                            if coef.re == 0.0 && coef.im == 0.0 {
                                continue;
                            }
                            for x in 0..sub {
                                for y in 0..sub {
                                    out[(r * sub + x, s * sub + y)] += coef * b[(x, y)];
                                }
                            }
                        }
                    }
                }
            }
        }
        bare = next;
    }
    let k = &p.twist.k_matrix;
    let dim = p.dim();
    let mut blocks = vec![CMatrix::zeros(dim, dim); 9];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                let kil = k[(i, l)];
                if kil.re != 0.0 || kil.im != 0.0 {
                    blocks[3 * i + j].axpy(kil, &bare[3 * l + j]);
                }
            }
        }
    }
    Ok(blocks)
}

/// Fused transfer matrix T_m(lambda) = tr_{1..m}[P^- M_1(lambda) M_2(lambda-eta) ...].
pub fn transfer(p: &ModelParams, m: usize, lambda: C64) -> Result<CMatrix> {
    assert!((1..=3).contains(&m), "m must be 1, 2 or 3");
    let blocks: Vec<Vec<CMatrix>> =
        (0..m).map(|k| monodromy_blocks(p, lambda - p.eta * k as f64)).collect::<Result<_>>()?;
    Ok(fused_trace(&blocks, 3))
}

/// tr[P^- X] with X_{(i),(j)} = prod_k A^{(k)}_{i_k j_k} for auxiliary blocks of dimension `d`.
pub(crate) fn fused_trace(blocks: &[Vec<CMatrix>], d: usize) -> CMatrix {
    let m = blocks.len();
    let dim = blocks[0][0].rows();
    let pm = antisymmetrizer(d, m);
    let adim = d.pow(m as u32);
    let digits = |mut x: usize| {
        let mut out = vec![0usize; m];
        for k in (0..m).rev() {
            out[k] = x % d;
            x /= d;
        }
        out
    };
    let mut out = CMatrix::zeros(dim, dim);
    for j in 0..adim {
        for i in 0..adim {
            let coef = pm[(j, i)];
            if coef.norm() == 0.0 {
                continue;
            }
            let (id, jd) = (digits(i), digits(j));
            let mut prod = blocks[0][d * id[0] + jd[0]].clone();
            for k in 1..m {
                prod = prod.matmul(&blocks[k][d * id[k] + jd[k]]);
            }
            out.axpy(coef, &prod);
        }
    }
    out
}

/// Dense embedding of M(lambda) on aux^m (x) quantum, acting on auxiliary leg `leg` (0 = most
/// significant) and as the identity on the other auxiliary legs.
pub fn monodromy_on_leg(p: &ModelParams, lambda: C64, leg: usize, m: usize) -> Result<CMatrix> {
    let blocks = monodromy_blocks(p, lambda)?;
    let q = p.dim();
    let dim = 3usize.pow(m as u32) * q;
    check_cap(dim)?;
    let w = 3usize.pow((m - 1 - leg) as u32);
    let mut out = CMatrix::zeros(dim, dim);
    for aux_col in 0..3usize.pow(m as u32) {
        let cj = (aux_col / w) % 3;
        let rest = aux_col - cj * w;
        for ci in 0..3 {
            let aux_row = rest + ci * w;
            let b = &blocks[3 * ci + cj];
            for x in 0..q {
                for y in 0..q {
                    out[(aux_row * q + x, aux_col * q + y)] = b[(x, y)];
                }
            }
        }
    }
    Ok(out)
}

/// RTT residual |R12(l-m) M1(l) M2(m) - M2(m) M1(l) R12(l-m)| / scale.
pub fn check_rtt(p: &ModelParams, lambda: C64, mu: C64) -> Result<f64> {
    let m1 = monodromy_on_leg(p, lambda, 0, 2)?;
    let m2 = monodromy_on_leg(p, mu, 1, 2)?;
    let q = p.dim();
    // R12 = (l-m) I + eta P12, P12 acting as a permutation of the two auxiliary legs
    let swap = |k: usize| {
        let (a, s) = (k / q, k % q);
        ((a % 3) * 3 + a / 3) * q + s
    };
    let z = lambda - mu;
    let x = m1.matmul(&m2);
    let y = m2.matmul(&m1);
    let lhs = CMatrix::from_fn(x.rows(), x.cols(), |i, j| z * x[(i, j)] + p.eta * x[(swap(i), j)]);
    let rhs = CMatrix::from_fn(y.rows(), y.cols(), |i, j| z * y[(i, j)] + p.eta * y[(i, swap(j))]);
    Ok(rel_diff(&lhs, &rhs))
}

#[derive(Clone, Debug, Serialize)]
pub struct FusionRow {
    pub site: usize,
    /// |T1(xi) T1(xi-eta) - T2(xi)| / scale
    pub fusion_12: f64,
    /// |T1(xi) T2(xi-eta) - T3(xi)| / scale
    pub fusion_23: f64,
    /// |T2(xi+eta)| / |T2(xi)|
    pub central_zero: f64,
}

pub fn fusion_residuals(p: &ModelParams) -> Result<Vec<FusionRow>> {
    let mut rows = Vec::new();
    for a in 0..p.sites {
        let x = p.xi[a];
        let t1 = transfer(p, 1, x)?;
        let t1m = transfer(p, 1, x - p.eta)?;
        let t2 = transfer(p, 2, x)?;
        let t2m = transfer(p, 2, x - p.eta)?;
        let t3 = transfer(p, 3, x)?;
        let t2z = transfer(p, 2, x + p.eta)?;
        let scale2 = t2.max_abs().max(transfer(p, 2, x + p.eta * 0.5)?.max_abs());
        rows.push(FusionRow {
            site: a + 1,
            fusion_12: rel_diff(&t1.matmul(&t1m), &t2),
            fusion_23: rel_diff(&t1.matmul(&t2m), &t3),
            central_zero: t2z.max_abs() / scale2.max(f64::MIN_POSITIVE),
        });
    }
    Ok(rows)
}

/// T_2 from the interpolation formula built on T_1 at the inhomogeneities.
pub fn t2_interpolated(p: &ModelParams, lambda: C64) -> Result<CMatrix> {
    let zero = vec![0u8; p.sites];
    let mut acc = CMatrix::scalar(p.dim(), p.t_inf_h(2, &zero, lambda));
    for a in 0..p.sites {
        let prod = transfer(p, 1, p.xi[a] - p.eta)?.matmul(&transfer(p, 1, p.xi[a])?);
        acc.axpy(p.g(2, a, &zero, lambda), &prod);
    }
    Ok(acc.scale(p.d(lambda - p.eta)))
}

/// q-det closed form det K prod_b (l-xi_b+eta)(l-xi_b-eta)(l-xi_b-2eta) times the identity.
pub fn qdet_closed_form(p: &ModelParams, lambda: C64) -> CMatrix {
    CMatrix::scalar(p.dim(), p.qdet(lambda))
}

/// R_{ab}(xi_a - xi_b) on the quantum space, sites 0-based.
fn r_sites(p: &ModelParams, a: usize, b: usize) -> CMatrix {
    embed_two(3, &r_matrix(p.xi[a] - p.xi[b], p.eta), a, b, p.sites)
}

/// R_{a; b_1..b_M} = R_{a b_M} ... R_{a b_1} with the factors in `omit` dropped. Sites 0-based.
pub fn r_chain(p: &ModelParams, a: usize, sites: &[usize], omit: &[usize]) -> CMatrix {
    let mut out = CMatrix::identity(p.dim());
    for &b in sites.iter().rev() {
        if omit.contains(&b) {
            continue;
        }
        out = out.matmul(&r_sites(p, a, b));
    }
    out
}

/// Right-hand side of the product formula for prod_j T_1(xi_{a_j}), sites 0-based ascending,
/// without the overall eta^M normalization.
pub fn product_formula_rhs(p: &ModelParams, a_idx: &[usize]) -> Result<CMatrix> {
    let n = p.sites;
    if a_idx.is_empty() || a_idx.windows(2).any(|w| w[0] >= w[1]) || *a_idx.last().unwrap() >= n {
        return Err(SovError::IndexOrder);
    }
    check_cap(p.dim())?;
    let m = a_idx.len();
    let mut coef = cr(1.0);
    for i in 0..m {
        for j in i + 1..m {
            let dx = p.xi[a_idx[i]] - p.xi[a_idx[j]];
            coef *= p.eta * p.eta - dx * dx;
        }
    }
    let mut out = CMatrix::identity(p.dim());
    for j in 0..m {
        let below: Vec<usize> = (0..a_idx[j]).collect();
        out = out.matmul(&r_chain(p, a_idx[j], &below, &a_idx[..j]));
    }
    for &a in a_idx {
        out = out.matmul(&embed_one(3, &p.twist.k_matrix, a, n));
    }
    for j in 0..m {
        let above: Vec<usize> = (a_idx[j] + 1..n).collect();
        out = out.matmul(&r_chain(p, a_idx[j], &above, &a_idx[j + 1..]));
    }
    Ok(out.scale(coef))
}

/// Relative difference between prod_j T_1(xi_{a_j}) and eta^M times the product formula.
/// Site indices are 1-based.
pub fn product_formula_check(p: &ModelParams, a_indices: &[usize]) -> Result<f64> {
    if a_indices.contains(&0) {
        return Err(SovError::IndexOrder);
    }
    let idx: Vec<usize> = a_indices.iter().map(|a| a - 1).collect();
    let rhs = product_formula_rhs(p, &idx)?.scale(p.eta.powi(idx.len() as i32));
    let mut lhs = CMatrix::identity(p.dim());
    for &a in &idx {
        lhs = lhs.matmul(&transfer(p, 1, p.xi[a])?);
    }
    Ok(rel_diff(&lhs, &rhs))
}

/// Exchange relation of the product formula for a_{l-1} < {a_l..a_k} < a_{k+1}, 1-based.
pub fn exchange_relation_check(p: &ModelParams, first: usize, middle: &[usize], last: usize) -> Result<f64> {
    let n = p.sites;
    let (f, l) = (first - 1, last - 1);
    let mid: Vec<usize> = middle.iter().map(|x| x - 1).collect();
    let above: Vec<usize> = (f + 1..n).collect();
    let below: Vec<usize> = (0..l).collect();
    let lhs = r_chain(p, f, &above, &mid).matmul(&r_chain(p, l, &below, &mid));
    let mut omit_l = vec![f];
    omit_l.extend(&mid);
    let mut omit_f = mid.clone();
    omit_f.push(l);
    let dx = p.xi[l] - p.xi[f];
    let nn = p.eta * p.eta - dx * dx;
    let rhs = r_chain(p, l, &below, &omit_l).matmul(&r_chain(p, f, &above, &omit_f)).scale(nn);
    Ok(rel_diff(&lhs, &rhs))
}

/// Applies R_{x,y}(u) = u + eta P_{xy} to a vector, legs given as digit positions.
fn apply_r_vec(v: &[C64], d: usize, px: usize, py: usize, u: C64, eta: C64) -> Vec<C64> {
    let (wx, wy) = (d.pow(px as u32), d.pow(py as u32));
    let mut out: Vec<C64> = v.iter().map(|x| x * u).collect();
    for (idx, o) in out.iter_mut().enumerate() {
        let (a, b) = ((idx / wx) % d, (idx / wy) % d);
        let src = idx - a * wx - b * wy + b * wx + a * wy;
        *o += eta * v[src];
    }
    out
}

/// Applies a d x d matrix on the leg at digit position `px`.
fn apply_one_vec(v: &[C64], d: usize, px: usize, op: &CMatrix) -> Vec<C64> {
    let w = d.pow(px as u32);
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let r = (idx / w) % d;
        let base = idx - r * w;
        for s in 0..d {
            *o += op[(r, s)] * v[base + s * w];
        }
    }
    out
}

/// T_m(lambda) v without materializing T_m; m in {1, 2}.
pub fn apply_transfer_free(p: &ModelParams, m: usize, lambda: C64, v: &[C64]) -> Vec<C64> {
    apply_transfer_free_d(3, &p.twist.k_matrix, p.eta, &p.xi, m, lambda, v)
}

pub(crate) fn apply_transfer_free_d(
    d: usize,
    k: &CMatrix,
    eta: C64,
    xi: &[C64],
    m: usize,
    lambda: C64,
    v: &[C64],
) -> Vec<C64> {
    assert!(m == 1 || m == 2, "matrix-free path supports m = 1, 2");
    let n = xi.len();
    let q = d.pow(n as u32);
    assert_eq!(v.len(), q);
    let pm = antisymmetrizer(d, m);
    let adim = d.pow(m as u32);
    let mut out = vec![C64::new(0.0, 0.0); q];
    for j in 0..adim {
        if (0..adim).all(|i| pm[(j, i)].norm() == 0.0) {
            continue;
        }
        let mut state = vec![C64::new(0.0, 0.0); adim * q];
        state[j * q..(j + 1) * q].copy_from_slice(v);
        // M_m first, then M_{m-1}, ..., M_1; aux leg k (0-based) sits at position n + m-1-k
        for leg in (0..m).rev() {
            let pos = n + m - 1 - leg;
            let u0 = lambda - eta * leg as f64;
            for site in 0..n {
                state = apply_r_vec(&state, d, pos, site, u0 - xi[site], eta);
            }
            state = apply_one_vec(&state, d, pos, k);
        }
        for i in 0..adim {
            let coef = pm[(j, i)];
            if coef.norm() == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(&state[i * q..(i + 1) * q]) {
                *o += coef * s;
            }
        }
    }
    out
}

/// Polynomial check: fits T_1 through N+1 nodes and returns the relative error of the
/// leading coefficient against tr K.
pub fn t1_leading_coefficient_error(p: &ModelParams) -> Result<f64> {
    let n = p.sites;
    let nodes: Vec<C64> = (0..=n).map(|k| p.xi[0] + p.eta * (0.37 + 0.91 * k as f64) + c(0.0, 0.29 * k as f64)).collect();
    let mut lead = CMatrix::zeros(p.dim(), p.dim());
    for (i, &x) in nodes.iter().enumerate() {
        let mut w = cr(1.0);
        for (j, &y) in nodes.iter().enumerate() {
            if i != j {
                w /= x - y;
            }
        }
        lead.axpy(w, &transfer(p, 1, x)?);
    }
    Ok(rel_diff(&lead, &CMatrix::scalar(p.dim(), p.twist.a)))
}

/// Commutator residual |[A, B]| / (|A| |B|) in max-entry norm.
pub fn commutator_residual(a: &CMatrix, b: &CMatrix) -> f64 {
    let ab = a.matmul(b);
    let ba = b.matmul(a);
    let scale = ab.max_abs().max(ba.max_abs()).max(f64::MIN_POSITIVE);
    ab.sub(&ba).max_abs() / scale
}

/// Bilinear row-vector application helper: <u| A.
pub fn covector_apply(u: &[C64], a: &CMatrix) -> Vec<C64> {
    a.vecmat(u)
}

/// Bilinear matrix element <u| A |v>.
pub fn matrix_element(u: &[C64], a: &CMatrix, v: &[C64]) -> C64 {
    pair(u, &a.matvec(v))
}
