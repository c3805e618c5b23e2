//! Conserved charges for an invertible twist built from the spectral projectors of its
//! transfer matrix, carrying the spectrum of the degenerate-twist model, and the orthogonal
//! SoV bases they generate.

use rayon::prelude::*;
use serde::Serialize;

use crate::det0_spectrum::{simple_eig, spectral_data, EigenInput, SpectralData};
use crate::error::{Result, SovError};
use crate::gl3_model::{commutator_residual, transfer, ModelParams};
use crate::numkernel::{pair, CMatrix, C64, DENSE_CAP, TAU};
use crate::sov_bases::{
    build_left_basis_with, build_right_basis_with, reference_covector, reference_vector_solve, ChargeSet, Provenance,
    SovBasisPair, Variant,
};

#[derive(Clone, Debug)]
pub struct ChargeFamily {
    /// Invertible-twist model whose eigenstates carry the projectors.
    pub model: ModelParams,
    /// Degenerate-twist model providing the eigenvalue functions.
    pub khat: ModelParams,
    pub lambda0: C64,
    /// Right eigenvectors of T_1^(K), columns.
    pub right: CMatrix,
    /// Left eigenvectors of T_1^(K), rows, with <t_a|t_a> = 1.
    pub left: CMatrix,
    pub t1_lambda0: Vec<C64>,
    /// Right and left eigenvectors of T_1^(K-hat), paired with the columns of `right`.
    pub khat_right: CMatrix,
    pub khat_left: CMatrix,
    pub khat_t1_lambda0: Vec<C64>,
    /// pairing[a] is the K-hat eigen index assigned to K eigenstate a.
    pub pairing: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FusionCheck {
    pub site: usize,
    /// |T2(xi - eta) T1(xi)|, |T2(xi - eta) T2(xi)|, |T1(xi - eta) T1(xi) - T2(xi)|, relative.
    pub residuals: [f64; 3],
}

/// Diagonalizes both models at lambda_0 and pairs eigenstates by the canonical order of their
/// T_1(lambda_0) eigenvalues.
pub fn build_tt(p: &ModelParams, khat: &ModelParams, lambda0: C64) -> Result<ChargeFamily> {
    if p.sites != khat.sites || p.eta != khat.eta || p.xi != khat.xi {
        return Err(SovError::InvalidParams("models differ in chain data".into()));
    }
    if p.twist.c.norm() <= TAU {
        return Err(SovError::DetKZero(p.twist.c.norm()));
    }
    if p.dim() > DENSE_CAP {
        return Err(SovError::SizeCap { dim: p.dim(), cap: DENSE_CAP });
    }
    let eig = simple_eig(p, lambda0)?;
    let eig_hat = simple_eig(khat, lambda0)?;
    Ok(ChargeFamily {
        model: p.clone(),
        khat: khat.clone(),
        lambda0,
        right: eig.right_eigvecs,
        left: eig.left_eigvecs,
        t1_lambda0: eig.eigenvalues,
        khat_right: eig_hat.right_eigvecs,
        khat_left: eig_hat.left_eigvecs,
        khat_t1_lambda0: eig_hat.eigenvalues,
        pairing: (0..p.dim()).collect(),
    })
}

impl ChargeFamily {
    pub fn dim(&self) -> usize {
        self.right.cols()
    }

    /// t_{m,a}^(K-hat)(lambda) for every K eigenstate a.
    pub fn eigenvalues(&self, m: usize, lambda: C64) -> Result<Vec<C64>> {
        let t = transfer(&self.khat, m, lambda)?;
        Ok(self
            .pairing
            .par_iter()
            .map(|&b| {
                let u = self.khat_left.row(b);
                let v = self.khat_right.col(b);
                pair(&u, &t.matvec(&v)) / pair(&u, &v)
            })
            .collect())
    }

    /// sum_a t_{m,a}(lambda) |t_a><t_a| / <t_a|t_a>.
    pub fn charge(&self, m: usize, lambda: C64) -> Result<CMatrix> {
        let vals = self.eigenvalues(m, lambda)?;
        let scaled = CMatrix::from_fn(self.dim(), self.dim(), |i, a| self.right[(i, a)] * vals[a]);
        Ok(scaled.matmul(&self.left))
    }

    pub fn projector(&self, a: usize) -> CMatrix {
        let d = self.dim();
        CMatrix::from_fn(d, d, |i, j| self.right[(i, a)] * self.left[(a, j)])
    }

    /// (|sum_a P_a - I|, max_ab |P_a P_b - delta_ab P_a|) in max-entry norm relative to |P_a|.
    pub fn projector_residuals(&self) -> (f64, f64) {
        let d = self.dim();
        let ps: Vec<CMatrix> = (0..d).into_par_iter().map(|a| self.projector(a)).collect();
        let mut sum = CMatrix::zeros(d, d);
        for pm in &ps {
            sum.axpy(C64::new(1.0, 0.0), pm);
        }
        let completeness = sum.sub(&CMatrix::identity(d)).max_abs();
        let idem = (0..d)
            .into_par_iter()
            .map(|a| {
                let scale = ps[a].max_abs();
                (0..d)
                    .map(|b| {
                        let prod = ps[a].matmul(&ps[b]);
                        let r = if a == b { prod.sub(&ps[a]) } else { prod };
                        r.max_abs() / (scale * ps[b].max_abs())
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        (completeness, idem)
    }

    /// Largest commutator residual among the charges and with the original transfer matrices
    /// at (lambda, mu).
    pub fn commutation_residual(&self, lambda: C64, mu: C64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in 1..=2 {
            let tl = self.charge(l, lambda)?;
            let orig = transfer(&self.model, l, lambda)?;
            for m in 1..=2 {
                let tm = self.charge(m, mu)?;
                worst = worst.max(commutator_residual(&tl, &tm)).max(commutator_residual(&orig, &tm));
            }
        }
        Ok(worst)
    }

    /// Fusion relations of the charges at every inhomogeneity.
    pub fn fusion_checks(&self) -> Result<Vec<FusionCheck>> {
        let p = &self.model;
        (0..p.sites)
            .map(|a| {
                let x = p.xi[a];
                let t1 = self.charge(1, x)?;
                let t1s = self.charge(1, x - p.eta)?;
                let t2 = self.charge(2, x)?;
                let t2s = self.charge(2, x - p.eta)?;
                let s1 = t2s.max_abs() * t1.max_abs();
                let s2 = t2s.max_abs() * t2.max_abs();
                let s3 = (t1s.max_abs() * t1.max_abs()).max(t2.max_abs());
                let floor = |s: f64| s.max(f64::MIN_POSITIVE);
                Ok(FusionCheck {
                    site: a,
                    residuals: [
                        t2s.matmul(&t1).max_abs() / floor(s1),
                        t2s.matmul(&t2).max_abs() / floor(s2),
                        t1s.matmul(&t1).sub(&t2).max_abs() / floor(s3),
                    ],
                })
            })
            .collect()
    }

    /// The charges at the inhomogeneities, as used by the basis builders.
    pub fn charge_set(&self) -> Result<ChargeSet> {
        let p = &self.model;
        let mut set = ChargeSet { t1_xi: Vec::new(), t2_xi_shift: Vec::new(), t2_xi: Vec::new(), provenance: Provenance::ProjectorCharges };
        for &x in &p.xi {
            set.t1_xi.push(self.charge(1, x)?);
            set.t2_xi_shift.push(self.charge(2, x - p.eta)?);
            set.t2_xi.push(self.charge(2, x)?);
        }
        Ok(set)
    }

    /// <t_a^(K)|t_b^(K-hat)> with both states as returned by the eigensolver.
    pub fn overlap_matrix(&self) -> CMatrix {
        self.left.matmul(&self.khat_right)
    }
}

/// SoV bases generated by the charges: <1| from the reference row, |0> solved from
/// <k|0> = delta_{k,0} against the charge-generated co-vectors.
pub fn tt_sov_bases(family: &ChargeFamily, xyz: &[C64; 3]) -> Result<SovBasisPair> {
    let p = &family.model;
    if p.dim() > DENSE_CAP {
        return Err(SovError::SizeCap { dim: p.dim(), cap: DENSE_CAP });
    }
    let charges = family.charge_set()?;
    let ref_covector = reference_covector(xyz, &family.khat.twist, p.sites)?;
    let left = build_left_basis_with(&charges, &ref_covector, Variant::Dressed);
    let ref_vector = reference_vector_solve(&left)?;
    let right = build_right_basis_with(&charges, &ref_vector, Variant::Dressed);
    Ok(SovBasisPair { left, right, variant: Variant::Dressed, ref_covector, ref_vector, provenance: Provenance::ProjectorCharges })
}

/// Eigenstates of T_1^(K) expressed in the charge bases, with the K-hat eigenvalue functions.
pub fn tt_spectral_data(family: &ChargeFamily, bases: &SovBasisPair) -> Result<Vec<SpectralData>> {
    let states = (0..family.dim())
        .map(|a| {
            let b = family.pairing[a];
            EigenInput {
                t1_lambda0: family.t1_lambda0[a],
                right: family.right.col(a),
                left: family.left.row(a),
                probe_left: family.khat_left.row(b),
                probe_right: family.khat_right.col(b),
            }
        })
        .collect();
    spectral_data(&family.khat, bases, states)
}
