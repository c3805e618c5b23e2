use sovlab::det0_spectrum::*;
use sovlab::gl3_model::*;
use sovlab::numkernel::{c, cr, pair, rel_err, CMatrix, C64};
use sovlab::sampling::Sampler;
use sovlab::sov_bases::*;
use sovlab::sov_measure::gram;
use sovlab::SovError;

fn ti(d: &[u8]) -> TernaryIndex {
    TernaryIndex::new(d.to_vec())
}

/// Random case-i parameters with the smallest twist eigenvalue set to zero.
fn det0_setup(seed: u64, n: usize) -> (ModelParams, SovBasisPair) {
    for attempt in 0..10 {
        let mut s = Sampler::new(seed + 1000 * attempt);
        let p = s.params(n, TwistCase::I).unwrap();
        let Ok(khat) = make_khat(&p.twist) else { continue };
        let p = p.with_twist(khat);
        let Ok(bases) = SovBasisPair::dressed(&p, &s.xyz()) else { continue };
        let (l, r) = bases.rank_ratios();
        if l > 1e-9 && r > 1e-9 {
            return (p, bases);
        }
    }
    panic!("no admissible det0 sample for seed {seed}");
}

fn lambda0(p: &ModelParams) -> C64 {
    p.xi[0] + p.eta * (13.0 / 7.0)
}

fn eigen(p: &ModelParams, bases: &SovBasisPair) -> Vec<SpectralData> {
    eigensolve_sov(p, bases, lambda0(p)).unwrap()
}

/// Gram-measured norms <h|h>.
fn norms(p: &ModelParams, bases: &SovBasisPair) -> Vec<C64> {
    gram(p, bases).unwrap().diag
}

fn proportional(u: &[C64], v: &[C64]) -> bool {
    let k = v.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
    let r = u[k] / v[k];
    let scale = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    u.iter().zip(v).all(|(a, b)| (a - r * b).norm() <= 1e-8 * scale)
}

fn random_alpha(s: &mut Sampler, n: usize) -> SeparateState {
    let coeffs = (0..n).map(|_| (0..3).map(|_| s.complex_unit()).collect()).collect();
    SeparateState::new(coeffs, Side::Left)
}

/// <t|t> with <t| normalized like the separate state (1, t2(xi), t1(xi)).
fn direct_norm(s: &SpectralData, bases: &SovBasisPair, nh: &[C64]) -> C64 {
    let alpha = SeparateState::from_left_eigenstate(s);
    pair(&alpha.assemble(bases, nh), &s.right)
}

#[test]
fn make_khat_examples() {
    let diag = |k: [f64; 3]| TwistData::from_eigenvalues(CMatrix::identity(3), k.map(cr)).unwrap();
    let t = make_khat(&diag([1.0, 2.0, 3.0])).unwrap();
    assert_eq!([t.k(0), t.k(1), t.k(2)], [cr(0.0), cr(2.0), cr(3.0)]);
    assert_eq!(t.c, cr(0.0));
    let t = make_khat(&diag([2.0, 2.0 + 1e-3, 5.0])).unwrap();
    assert_eq!(t.k(0), cr(0.0));
    assert_eq!(t.k(1), cr(2.0 + 1e-3));
    assert!(matches!(make_khat(&diag([1e-9, 2e-9, 5.0])), Err(SovError::SpectrumCollision)));
}

#[test]
fn ortho_two_sites_diagonal_twist() {
    let mut s = Sampler::new(5);
    let eta = s.eta();
    let xi = s.xi(2, eta);
    let twist = TwistData::from_eigenvalues(CMatrix::identity(3), [cr(1.0), cr(2.0), cr(0.0)]).unwrap();
    let p = ModelParams::new(eta, xi, twist).unwrap();
    let bases = SovBasisPair::dressed(&p, &[c(1.0, 0.5), c(0.75, -0.5), c(-1.0, 0.25)]).unwrap();
    let r = ortho_suite_det0(&p, &bases).unwrap();
    assert!(r.passes(), "{r:?}");
}

#[test]
fn ortho_random_three_sites() {
    for seed in 0..3 {
        let (p, bases) = det0_setup(seed, 3);
        let r = ortho_suite_det0(&p, &bases).unwrap();
        assert!(r.passes(), "{seed} {r:?}");
    }
    let (p, bases) = det0_setup(0, 2);
    let invertible = p.with_twist(TwistData::from_eigenvalues(p.twist.w.clone(), [cr(1.0), cr(2.0), cr(3.0)]).unwrap());
    assert!(matches!(ortho_suite_det0(&invertible, &bases), Err(SovError::InvalidParams(_))));
}

#[test]
fn ortho_case_ii_degenerate_pair() {
    for seed in 0..2 {
        let mut s = Sampler::new(70 + seed);
        let eta = s.eta();
        let xi = s.xi(3, eta);
        let k = c(1.25, -0.5);
        let twist = TwistData::from_jordan(s.w_matrix(), [k, k, cr(0.0)], TwistCase::II).unwrap();
        let p = ModelParams::new(eta, xi, twist).unwrap();
        let bases = SovBasisPair::dressed(&p, &s.xyz()).unwrap();
        let r = ortho_suite_det0(&p, &bases).unwrap();
        assert!(r.passes(), "{seed} {r:?}");
    }
}

#[test]
fn interpolated_actions_match_dense() {
    for n in 1..=3 {
        let (p, bases) = det0_setup(10 + n as u64, n);
        let mut s = Sampler::new(n as u64);
        for _ in 0..10 {
            let h = TernaryIndex::from_flat(s.index(p.dim()), n);
            let lambdas: Vec<C64> = (0..3).map(|_| s.lambda()).collect();
            for which in [Which::T1, Which::T2] {
                for side in [Side::Left, Side::Right] {
                    let r = interpolated_action_check(&p, &bases, &h, which, side, &lambdas).unwrap();
                    assert!(r <= 1e-8, "n={n} {h:?} {which:?} {side:?} {r:e}");
                }
            }
        }
    }
}

#[test]
fn t2_action_without_ones_has_no_shifts() {
    let (p, bases) = det0_setup(21, 2);
    let l = c(0.3, -0.7);
    for h in TernaryIndex::all(2).filter(|h| h.count(1) == 0) {
        let e = interpolated_action(&p, &h, Which::T2, Side::Left, l);
        assert_eq!(e.len(), 1);
        assert!(interpolated_action_check(&p, &bases, &h, Which::T2, Side::Left, &[l]).unwrap() <= 1e-9);
    }
    let zero = ti(&[0, 0]);
    let e = interpolated_action(&p, &zero, Which::T2, Side::Right, l);
    let raised: Vec<TernaryIndex> = e.iter().skip(1).map(|(k, _)| k.clone()).collect();
    assert_eq!(raised, vec![ti(&[1, 0]), ti(&[0, 1])]);
    assert!(interpolated_action_check(&p, &bases, &zero, Which::T2, Side::Right, &[l]).unwrap() <= 1e-9);
}

#[test]
fn boundary_states_are_eigenstates() {
    for n in 1..=3 {
        let (p, bases) = det0_setup(30 + n as u64, n);
        let mut s = Sampler::new(n as u64 + 7);
        let lambdas: Vec<C64> = (0..5).map(|_| s.lambda()).collect();
        let r = boundary_eigenstate_check(&p, &bases, &lambdas).unwrap();
        assert!(r.max_residual() <= 1e-9, "n={n} {:e}", r.max_residual());
        assert!(r.max_spread() <= 1e-8, "n={n} {:?}", r.spreads);
    }
}

#[test]
fn single_site_eigenvalues() {
    let (p, bases) = det0_setup(40, 1);
    let spec = eigen(&p, &bases);
    let l0 = lambda0(&p);
    let tr = p.twist.a;
    let mut expect: Vec<C64> = (0..3).map(|i| (l0 - p.xi[0]) * tr + p.eta * p.twist.k(i)).collect();
    let mut got: Vec<C64> = spec.iter().map(|s| s.t1_lambda0).collect();
    let key = |z: &C64| (z.re, z.im);
    expect.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
    for (g, e) in got.iter().zip(&expect) {
        assert!(rel_err(*g, *e) < 1e-12, "{g} {e}");
    }
}

#[test]
fn spectrum_is_simple_and_factorizes() {
    for n in 1..=3 {
        let (p, bases) = det0_setup(50 + n as u64, n);
        let spec = eigen(&p, &bases);
        assert_eq!(spec.len(), p.dim());
        for (i, a) in spec.iter().enumerate() {
            for b in &spec[i + 1..] {
                assert!((a.t1_lambda0 - b.t1_lambda0).norm() > 1e-6);
            }
            let (r, l) = a.factorization;
            assert!(r <= 1e-7 && l <= 1e-7, "n={n} {i} {r:e} {l:e}");
            assert!(a.fusion_residual <= 1e-8, "n={n} {i} {:e}", a.fusion_residual);
        }
    }
}

#[test]
fn eigenstate_pairing_is_diagonal() {
    let (p, bases) = det0_setup(60, 2);
    let spec = eigen(&p, &bases);
    let scale = spec.iter().map(|s| pair(&s.left, &s.right).norm()).fold(0.0, f64::max);
    for a in &spec {
        assert!(pair(&a.left, &a.right).norm() > 1e-9 * scale);
        for b in &spec {
            if a.index != b.index {
                assert!(pair(&a.left, &b.right).norm() <= 1e-9 * scale);
            }
        }
    }
}

#[test]
fn zero_patterns() {
    for n in 1..=3 {
        let (p, bases) = det0_setup(80 + n as u64, n);
        let spec = eigen(&p, &bases);
        let zero = bases.covector(&TernaryIndex::uniform(n, 0));
        let two = bases.covector(&TernaryIndex::uniform(n, 2));
        let mut found = (false, false);
        let mut full = 0;
        for s in &spec {
            let pat = s.pattern.as_ref().unwrap();
            assert!(pat.t2_zero_residual <= 1e-8, "{:?}", pat);
            assert!(pat.t2_nonzero_min >= 1e-6, "{:?}", pat);
            assert!(pat.t2_closed_form_residual <= 1e-7, "{:?}", pat);
            for &b in pat.b_sites() {
                assert!(s.t1_xi[b].norm() < THETA * s.scales.0);
            }
            let mut sorted = pat.perm.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            // t_1 is proportional to d(lambda) on <0| and t_2(lambda - eta) to d(lambda - 2 eta) d(lambda) on <2|
            if proportional(&s.left, &zero) {
                assert_eq!(pat.m, 0);
                found.0 = true;
            }
            if proportional(&s.left, &two) {
                assert_eq!(pat.m, n);
                found.1 = true;
            }
            full += (pat.m == n) as usize;
        }
        assert!(found.0, "n={n}");
        assert!(full > 0, "n={n}");
    }
}

#[test]
fn eigenstate_coordinates_follow_wave_functions() {
    let (p, bases) = det0_setup(90, 2);
    let nh = norms(&p, &bases);
    for s in eigen(&p, &bases) {
        let alpha = SeparateState::from_left_eigenstate(&s);
        let assembled = alpha.assemble(&bases, &nh);
        let scale = s.left.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = assembled.iter().zip(&s.left).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff <= 1e-7 * scale, "{} {diff:e}", s.index);
    }
}

#[test]
fn scalar_products_random_separate_states() {
    let mut rng = Sampler::new(99);
    for (n, count, seed) in [(2usize, 20usize, 100u64), (3, 5, 101)] {
        let (p, bases) = det0_setup(seed, n);
        let nh = norms(&p, &bases);
        let spec = eigen(&p, &bases);
        for _ in 0..count {
            let s = &spec[rng.index(spec.len())];
            let alpha = random_alpha(&mut rng, n);
            let row = scalar_product_row(&alpha, s, &p, &bases, &nh).unwrap();
            assert!(row.rel_error <= 1e-7, "n={n} {row:?}");
        }
    }
}

#[test]
fn vanishing_site_gives_zero() {
    let (p, bases) = det0_setup(110, 2);
    let mut rng = Sampler::new(3);
    for s in eigen(&p, &bases) {
        let mut alpha = random_alpha(&mut rng, 2);
        alpha.coeffs[1] = vec![cr(0.0); 3];
        assert_eq!(scalar_product_determinant(&alpha, &s, &p).unwrap(), cr(0.0));
    }
}

#[test]
fn own_coefficients_give_the_norm() {
    for (n, tol, seed) in [(1usize, 1e-10, 120u64), (2, 1e-7, 121), (3, 1e-7, 122)] {
        let (p, bases) = det0_setup(seed, n);
        let nh = norms(&p, &bases);
        for s in eigen(&p, &bases) {
            let direct = direct_norm(&s, &bases, &nh);
            let formula = norm_determinant(&s, &p).unwrap();
            assert!(formula.norm() > 0.0);
            assert!(rel_err(formula, direct) <= tol, "n={n} {} {formula} {direct}", s.index);
            let alpha = SeparateState::from_left_eigenstate(&s);
            let sp = scalar_product_determinant(&alpha, &s, &p).unwrap();
            assert!(rel_err(sp, direct) <= tol);
        }
    }
}

#[test]
fn pattern_missing_without_degenerate_twist() {
    let (p, _, bases, _) = sample_admissible(5, 1, TwistCase::I, 5).unwrap();
    let spec = eigensolve_sov(&p, &bases, lambda0(&p)).unwrap();
    assert!(spec.iter().all(|s| s.pattern.is_none()));
    let alpha = SeparateState::from_left_eigenstate(&spec[0]);
    assert!(matches!(scalar_product_determinant(&alpha, &spec[0], &p), Err(SovError::PatternMissing)));
    assert!(matches!(norm_determinant(&spec[0], &p), Err(SovError::PatternMissing)));
}

/// The displayed block placement and norm product agree with the direct value only when
/// B (respectively A) is empty.
#[test]
fn displayed_forms_fail_off_their_trivial_patterns() {
    let (p, bases) = det0_setup(130, 2);
    let nh = norms(&p, &bases);
    let mut rng = Sampler::new(4);
    let mut block_failures = 0;
    let mut norm_failures = 0;
    for s in eigen(&p, &bases) {
        let pat = s.pattern.as_ref().unwrap();
        let alpha = random_alpha(&mut rng, 2);
        let oracle = pair(&alpha.assemble(&bases, &nh), &s.right);
        let printed = scalar_product_determinant_with(&alpha, &s, &p, BlockForm::Printed).unwrap();
        if pat.b_sites().is_empty() {
            assert!(rel_err(printed, oracle) <= 1e-7);
        } else if rel_err(printed, oracle) > 1e-3 {
            block_failures += 1;
        }
        let direct = direct_norm(&s, &bases, &nh);
        let printed_norm = norm_determinant_with(&s, &p, NormForm::Printed).unwrap();
        if pat.m == 0 {
            assert!(rel_err(printed_norm, direct) <= 1e-7);
        } else if rel_err(printed_norm, direct) > 1e-3 {
            norm_failures += 1;
        }
    }
    assert!(block_failures > 0);
    assert!(norm_failures > 0);
}
