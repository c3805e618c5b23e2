//! Seeded parameter sampler drawing from small rational grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SovError};
use crate::gl2_model::Gl2Params;
use crate::gl3_model::{det3, ModelParams, TwistCase, TwistData};
use crate::numkernel::{c, cr, CMatrix, C64};

/// Shifts s*eta (|s| <= GENERIC_SHIFTS) that differences of inhomogeneities must avoid.
pub const GENERIC_SHIFTS: i32 = 4;

/// Minimal distance of xi_i - xi_j - s eta from zero before a draw is rejected.
pub const NEAR_MISS: f64 = 1e-3;

pub struct Sampler {
    rng: ChaCha8Rng,
    pub seed: u64,
    /// Number of rejected draws since construction.
    pub rejections: usize,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed), seed, rejections: 0 }
    }

    /// k/den with k uniform in [-span, span].
    pub fn grid(&mut self, span: i32, den: i32) -> f64 {
        self.rng.random_range(-span..=span) as f64 / den as f64
    }

    pub fn grid_complex(&mut self, span: i32, den: i32) -> C64 {
        let re = self.grid(span, den);
        let im = self.grid(span, den);
        c(re, im)
    }

    fn nonzero_complex(&mut self, span: i32, den: i32, min_abs: f64) -> C64 {
        loop {
            let z = self.grid_complex(span, den);
            if z.norm() >= min_abs {
                return z;
            }
            self.rejections += 1;
        }
    }

    pub fn eta(&mut self) -> C64 {
        self.nonzero_complex(4, 4, 0.5)
    }

    /// Inhomogeneities avoiding xi_i - xi_j = s eta for |s| <= GENERIC_SHIFTS.
    pub fn xi(&mut self, n: usize, eta: C64) -> Vec<C64> {
        self.xi_on_grid(n, eta, 8, 4)
    }

    /// As `xi`, drawing real and imaginary parts from k/den with |k| <= span.
    pub fn xi_on_grid(&mut self, n: usize, eta: C64, span: i32, den: i32) -> Vec<C64> {
        'draw: loop {
            let xs: Vec<C64> = (0..n).map(|_| self.grid_complex(span, den)).collect();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    for s in -GENERIC_SHIFTS..=GENERIC_SHIFTS {
                        if (xs[i] - xs[j] - eta * s as f64).norm() < NEAR_MISS {
                            self.rejections += 1;
                            continue 'draw;
                        }
                    }
                }
            }
            return xs;
        }
    }

    /// A well-conditioned change of basis: identity plus a small grid perturbation.
    pub fn w_matrix(&mut self) -> CMatrix {
        loop {
            let w = CMatrix::from_fn(3, 3, |_, _| C64::new(0.0, 0.0));
            let w = {
                let mut w = w;
                for i in 0..3 {
                    for j in 0..3 {
                        let z = self.grid_complex(2, 4);
                        w[(i, j)] = if i == j { cr(1.0) + z } else { z };
                    }
                }
                w
            };
            if det3(&w).norm() >= 0.25 {
                return w;
            }
            self.rejections += 1;
        }
    }

    /// Three eigenvalues with pairwise distance at least 0.25 and modulus at least 0.5.
    pub fn distinct_eigenvalues(&mut self) -> [C64; 3] {
        loop {
            let k = [self.nonzero_complex(8, 4, 0.5), self.nonzero_complex(8, 4, 0.5), self.nonzero_complex(8, 4, 0.5)];
            if (k[0] - k[1]).norm() >= 0.25 && (k[0] - k[2]).norm() >= 0.25 && (k[1] - k[2]).norm() >= 0.25 {
                return k;
            }
            self.rejections += 1;
        }
    }

    pub fn twist(&mut self, case: TwistCase) -> Result<TwistData> {
        let w = self.w_matrix();
        let k = self.distinct_eigenvalues();
        let k = match case {
            TwistCase::I => k,
            TwistCase::II => [k[0], k[0], k[2]],
            TwistCase::III => [k[0], k[0], k[0]],
        };
        TwistData::from_jordan(w, k, case)
    }

    pub fn params(&mut self, n: usize, case: TwistCase) -> Result<ModelParams> {
        let eta = self.eta();
        let xi = self.xi(n, eta);
        let twist = self.twist(case)?;
        ModelParams::new(eta, xi, twist)
    }

    /// gl(2) chain with a grid twist, |det K| and |n_K(x, y)| at least 1/4.
    pub fn gl2_params(&mut self, n: usize) -> Result<Gl2Params> {
        let eta = self.eta();
        let xi = self.xi(n, eta);
        loop {
            let mut k = CMatrix::zeros(2, 2);
            for i in 0..2 {
                for j in 0..2 {
                    k[(i, j)] = self.grid_complex(8, 4);
                }
            }
            let xy = [self.grid_complex(4, 4), self.grid_complex(4, 4)];
            match Gl2Params::new(eta, xi.clone(), k, xy) {
                Ok(p) if p.det_k().norm() > 0.25 && p.n_k().norm() > 0.25 => return Ok(p),
                Err(e @ SovError::SizeCap { .. }) => return Err(e),
                _ => self.rejections += 1,
            }
        }
    }

    /// Reference co-vector components, all of modulus at least 0.5.
    pub fn xyz(&mut self) -> [C64; 3] {
        [self.nonzero_complex(4, 4, 0.5), self.nonzero_complex(4, 4, 0.5), self.nonzero_complex(4, 4, 0.5)]
    }

    /// A generic spectral point.
    pub fn lambda(&mut self) -> C64 {
        let re = self.rng.random_range(-2.0..2.0);
        let im = self.rng.random_range(-2.0..2.0);
        c(re, im)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.random_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn complex_unit(&mut self) -> C64 {
        c(self.uniform(-1.0, 1.0), self.uniform(-1.0, 1.0))
    }
}
