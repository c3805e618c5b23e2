use proptest::prelude::*;
use sovlab::gl2_model::*;
use sovlab::numkernel::{c, cr, rel_diff, CMatrix, C64};
use sovlab::sampling::Sampler;
use sovlab::SovError;

fn k2(a: C64, b: C64, cc: C64, d: C64) -> CMatrix {
    CMatrix::from_rows(&[vec![a, b], vec![cc, d]])
}

fn random_params(seed: u64, n: usize) -> Gl2Params {
    let mut s = Sampler::new(seed);
    let eta = s.eta();
    let xi = s.xi(n, eta);
    loop {
        let k = k2(s.grid_complex(8, 4), s.grid_complex(8, 4), s.grid_complex(8, 4), s.grid_complex(8, 4));
        let xy = [s.grid_complex(4, 4), s.grid_complex(4, 4)];
        if let Ok(p) = Gl2Params::new(eta, xi.clone(), k, xy) {
            if p.det_k().norm() > 0.25 && p.n_k().norm() > 0.25 {
                return p;
            }
        }
    }
}

#[test]
fn single_site_transfer_closed_form() {
    let p = random_params(1, 1);
    let l = c(0.7, -0.3);
    let expect = CMatrix::scalar(2, (l - p.xi[0]) * p.k.trace()).add(&p.k.scale(p.eta));
    assert!(rel_diff(&gl2_transfer(&p, l).unwrap(), &expect) < 1e-14);
}

#[test]
fn transfer_checks_up_to_three_sites() {
    for n in 1..=3 {
        for seed in 0..3 {
            let p = random_params(10 * n as u64 + seed, n);
            let r = gl2_transfer_checks(&p, c(0.3, 0.1), c(-0.4, 0.7)).unwrap();
            assert!(r.commutator <= 1e-11, "{r:?}");
            assert!(r.free_vs_dense <= 1e-12, "{r:?}");
            assert!(r.leading <= 1e-10, "{r:?}");
            assert!(r.qdet_off_scalar.iter().all(|&x| x <= 1e-10), "{r:?}");
            assert!(r.qdet_closed_form.iter().all(|&x| x <= 1e-10), "{r:?}");
        }
    }
}

#[test]
fn antiperiodic_reference_norm() {
    let mut s = Sampler::new(2);
    let eta = s.eta();
    let xi = s.xi(2, eta);
    let p = Gl2Params::new(eta, xi, k2(cr(0.0), cr(1.0), cr(1.0), cr(0.0)), [cr(1.0), cr(0.0)]).unwrap();
    assert_eq!(p.n_k(), cr(1.0));
    let bases = gl2_bases(&p).unwrap();
    assert!(gl2_ortho_report(&p, &bases).passes(1e-9));
}

#[test]
fn rejects_invalid_params() {
    let mut s = Sampler::new(3);
    let eta = s.eta();
    let xi = s.xi(2, eta);
    let scalar = k2(c(2.0, 1.0), cr(0.0), cr(0.0), c(2.0, 1.0));
    assert!(matches!(Gl2Params::new(eta, xi.clone(), scalar, [cr(1.0), cr(1.0)]), Err(SovError::InvalidParams(_))));
    // diagonal K with (x, y) = (1, 0) gives n_K = b = 0
    let diag = k2(cr(1.0), cr(0.0), cr(0.0), cr(2.0));
    assert!(matches!(Gl2Params::new(eta, xi.clone(), diag, [cr(1.0), cr(0.0)]), Err(SovError::DegenerateReference(_))));
    let clash = vec![xi[0], xi[0] + eta];
    assert!(Gl2Params::new(eta, clash, k2(cr(0.0), cr(1.0), cr(1.0), cr(0.0)), [cr(1.0), cr(0.0)]).is_err());
}

#[test]
fn bases_orthogonal_with_vandermonde_measure() {
    for n in 1..=3 {
        for seed in 0..3 {
            let p = random_params(100 + 10 * n as u64 + seed, n);
            let bases = gl2_bases(&p).unwrap();
            let r = gl2_ortho_report(&p, &bases);
            assert!(r.offdiag_max <= 1e-9, "{r:?}");
            assert!(r.diag_max_rel <= 1e-9, "{r:?}");
            assert!(r.reference_residual <= 1e-9, "{r:?}");
            assert!(r.zero_vector_residual <= 1e-9, "{r:?}");
            assert!(r.identity_residual <= 1e-8, "{r:?}");
        }
    }
}

#[test]
fn single_site_measure_values() {
    let p = random_params(7, 1);
    assert_eq!(gl2_measure(&p, &[0]), cr(1.0));
    assert_eq!(gl2_measure(&p, &[1]), cr(1.0));
}

#[test]
fn eigen_representations() {
    for (n, tol) in [(1usize, 1e-12), (2, 1e-7), (3, 1e-7)] {
        for seed in 0..3 {
            let p = random_params(200 + 10 * n as u64 + seed, n);
            let bases = gl2_bases(&p).unwrap();
            let rows = gl2_eigen_reps(&p, &bases, p.xi[0] + p.eta * (13.0 / 7.0)).unwrap();
            assert_eq!(rows.len(), p.dim());
            for r in &rows {
                assert!(r.max_residual() <= tol, "n={n} {r:?}");
                assert!(r.det_rep_residual.is_some());
                assert!(r.n_t.norm() > 0.0);
            }
            assert!(min_n_t(&rows) > 1e-8);
        }
    }
}

#[test]
fn singular_twist_skips_inverse_representation() {
    let mut s = Sampler::new(9);
    let eta = s.eta();
    let xi = s.xi(2, eta);
    let k = k2(cr(1.0), cr(2.0), cr(0.5), cr(1.0));
    let p = Gl2Params::new(eta, xi, k, [c(1.0, 0.5), c(-0.5, 1.0)]).unwrap();
    assert_eq!(p.det_k(), cr(0.0));
    let bases = gl2_bases(&p).unwrap();
    assert!(gl2_ortho_report(&p, &bases).passes(1e-9));
    for r in gl2_eigen_reps(&p, &bases, p.xi[0] + p.eta * (13.0 / 7.0)).unwrap() {
        assert!(r.det_rep_residual.is_none());
        assert!(r.right_residual <= 1e-7 && r.left_residual <= 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reference_norm_matches_bilinear_form(e in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let k = k2(cr(e[0]), cr(e[1]), cr(e[2]), cr(e[3]));
        let (x, y) = (cr(e[4]), cr(e[5]));
        // n_K(x, y) = (x, y) K (-y, x)^t
        let row = [x * k[(0, 0)] + y * k[(1, 0)], x * k[(0, 1)] + y * k[(1, 1)]];
        let oracle = -row[0] * y + row[1] * x;
        let p = Gl2Params { sites: 1, eta: cr(1.0), xi: vec![cr(0.0)], k, xy: [x, y] };
        prop_assert!((p.n_k() - oracle).norm() <= 1e-12);
    }

    #[test]
    fn binary_digits_round_trip(flat in 0usize..256) {
        let d = binary_digits(flat, 8);
        let back: usize = d.iter().enumerate().map(|(a, &x)| (x as usize) << a).sum();
        prop_assert_eq!(back, flat);
    }
}
