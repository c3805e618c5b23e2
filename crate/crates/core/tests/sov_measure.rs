use proptest::prelude::*;
use sovlab::gl3_model::*;
use sovlab::numkernel::{cr, rel_err, C64};
use sovlab::sampling::Sampler;
use sovlab::sov_bases::*;
use sovlab::sov_measure::*;
use sovlab::SovError;

fn ti(d: &[u8]) -> TernaryIndex {
    TernaryIndex::new(d.to_vec())
}

fn setup(seed: u64, n: usize) -> (ModelParams, [C64; 3], SovBasisPair) {
    let (p, xyz, bases, _) = sample_admissible(seed, n, TwistCase::I, 5).unwrap();
    (p, xyz, bases)
}

/// Diagonal measure written as a product over site pairs.
fn diag_oracle(p: &ModelParams, h: &TernaryIndex) -> C64 {
    let n = p.sites;
    let e = p.eta;
    let s1 = |a: usize| if h.digits[a] >= 1 { 1.0 } else { 0.0 };
    let s2 = |a: usize| if h.digits[a] == 2 { 1.0 } else { 0.0 };
    let mut v = cr(1.0);
    for a in 0..n {
        let shift = 1.0 + s1(a);
        for b in 0..n {
            v *= (p.xi[a] - e - p.xi[b]) / (p.xi[a] - e * shift - p.xi[b]);
        }
        for b in a + 1..n {
            let d0 = p.xi[b] - p.xi[a];
            let d1 = (p.xi[b] - e * s1(b)) - (p.xi[a] - e * s1(a));
            let d2 = (p.xi[b] - e * s2(b)) - (p.xi[a] - e * s2(a));
            v *= d0 * d0 / (d1 * d2);
        }
    }
    v
}

#[test]
fn classify_examples() {
    assert_eq!(classify_pair(&ti(&[2, 0, 1]), &ti(&[2, 0, 1])), PairClass::Diagonal);
    assert_eq!(
        classify_pair(&ti(&[0, 2]), &ti(&[1, 1])),
        PairClass::OffDiag { alpha: vec![0], beta: vec![1], r: 1 }
    );
    assert_eq!(classify_pair(&ti(&[0, 1]), &ti(&[1, 0])), PairClass::Zero);
    assert_eq!(classify_pair(&ti(&[1, 1]), &ti(&[0, 2])), PairClass::Zero);
    assert_eq!(
        classify_pair(&ti(&[0, 0, 2, 2]), &ti(&[1, 1, 1, 1])),
        PairClass::OffDiag { alpha: vec![0, 1], beta: vec![2, 3], r: 2 }
    );
    assert_eq!(classify_pair(&ti(&[0, 0, 2]), &ti(&[1, 1, 1])), PairClass::Zero);
}

#[test]
fn single_site_diagonal() {
    let mut s = Sampler::new(2);
    let p = s.params(1, TwistCase::I).unwrap();
    let bases = SovBasisPair::dressed(&p, &s.xyz()).unwrap();
    let g = gram(&p, &bases).unwrap();
    for (i, expect) in [1.0, 0.5, 0.5].into_iter().enumerate() {
        assert!((g.diag[i] - cr(expect)).norm() < 1e-12, "{i} {}", g.diag[i]);
        assert!((diag_formula(&p, &TernaryIndex::from_flat(i, 1)) - cr(expect)).norm() < 1e-14);
    }
    assert!(g.zero_max <= 1e-9);
    assert!(g.passes());
}

#[test]
fn two_site_row_has_two_couplings() {
    let (p, _, bases) = setup(4, 2);
    let g = gram(&p, &bases).unwrap();
    assert!((g.entry(&ti(&[0, 0]), &ti(&[0, 0])) - cr(1.0)).norm() < 1e-12);
    let k = ti(&[1, 1]);
    let nonzero: Vec<TernaryIndex> = TernaryIndex::all(2)
        .filter(|h| *h != k && g.entry(h, &k).norm() > 1e-9 * g.scale)
        .collect();
    assert_eq!(nonzero, vec![ti(&[2, 0]), ti(&[0, 2])]);
}

#[test]
fn pattern_and_diagonal_up_to_three_sites() {
    for n in 1..=3 {
        for seed in 0..5 {
            let (p, _, bases) = setup(60 + seed, n);
            let g = gram(&p, &bases).unwrap();
            assert!(g.zero_max <= 1e-9, "n={n} seed={seed} {:e}", g.zero_max);
            if n >= 2 {
                assert!(g.offdiag_min > 1e-6, "n={n} seed={seed} {:e}", g.offdiag_min);
            }
            assert!(g.diag_max_rel <= 1e-8, "n={n} {:e}", g.diag_max_rel);
            assert!(g.passes(), "{:?}", &g.violations[..g.violations.len().min(3)]);
            for h in TernaryIndex::all(n) {
                assert!(rel_err(g.norm(&h), diag_oracle(&p, &h)) < 1e-9, "{h}");
            }
        }
    }
}

#[test]
fn four_site_pattern_relative_to_cells() {
    let (p, _, bases) = setup(1, 4);
    let g = gram(&p, &bases).unwrap();
    assert!(g.zero_max <= 1e-9);
    assert!(g.offdiag_min_cell > 1e-6);
    assert!(g.diag_max_rel <= 1e-8);
    assert!(g.passes());
}

#[test]
fn diagonal_is_twist_independent() {
    let mut s = Sampler::new(70);
    let p = s.params(3, TwistCase::I).unwrap();
    let xyz = s.xyz();
    let g1 = gram(&p, &SovBasisPair::dressed(&p, &xyz).unwrap()).unwrap();
    for case in [TwistCase::I, TwistCase::II, TwistCase::III] {
        let q = p.with_twist(s.twist(case).unwrap());
        let g2 = gram(&q, &SovBasisPair::dressed(&q, &s.xyz()).unwrap()).unwrap();
        for (a, b) in g1.diag.iter().zip(&g2.diag) {
            assert!(rel_err(*a, *b) < 1e-9, "{case:?}");
        }
    }
}

#[test]
fn one_pair_coefficient_closed_form() {
    for seed in 0..3 {
        let (p, _, bases) = setup(80 + seed, 2);
        let g = gram(&p, &bases).unwrap();
        for (h, a, b) in [(ti(&[0, 2]), 0, 1), (ti(&[2, 0]), 1, 0)] {
            let c = extract_coefficient(&g, &h, &ti(&[1, 1])).unwrap();
            assert!(rel_err(c, coeff_r0_closed_form(&p, &h, a, b)) < 1e-8, "{h}");
        }
        let (p, _, bases) = setup(90 + seed, 3);
        let g = gram(&p, &bases).unwrap();
        for h3 in [0u8, 2] {
            let h = ti(&[0, 2, h3]);
            let c = extract_coefficient(&g, &h, &ti(&[1, 1, h3])).unwrap();
            assert!(rel_err(c, coeff_r0_closed_form(&p, &h, 0, 1)) < 1e-8, "{h}");
        }
        // every one-pair cell at N = 3, including a spectator 1
        for cell in g.coefficients.iter().filter(|c| c.r == 1) {
            let (a, b) = match classify_pair(&cell.h, &cell.k) {
                PairClass::OffDiag { alpha, beta, .. } => (alpha[0], beta[0]),
                _ => unreachable!(),
            };
            assert!(rel_err(cell.value, coeff_r0_closed_form(&p, &cell.h, a, b)) < 1e-8);
        }
    }
}

#[test]
fn extract_rejects_zero_cells_and_vanishing_det() {
    let (p, xyz, bases) = setup(3, 2);
    let g = gram(&p, &bases).unwrap();
    assert!(extract_coefficient(&g, &ti(&[0, 1]), &ti(&[1, 0])).is_err());
    let twist = twist_with_invariants(&p.twist, p.twist.a, p.twist.b, cr(0.0)).unwrap();
    let q = p.with_twist(twist);
    let g0 = gram(&q, &SovBasisPair::dressed(&q, &xyz).unwrap()).unwrap();
    assert!(matches!(extract_coefficient(&g0, &ti(&[0, 2]), &ti(&[1, 1])), Err(SovError::DetKZero(_))));
}

#[test]
fn couplings_vanish_with_det_k_but_coefficient_stays() {
    let (p, xyz, _) = setup(12, 2);
    let (h, k) = (ti(&[0, 2]), ti(&[1, 1]));
    let mut last = None;
    for c in [cr(1e-2), cr(1e-4), cr(1e-6)] {
        let q = p.with_twist(twist_with_invariants(&p.twist, p.twist.a, p.twist.b, c).unwrap());
        let g = gram(&q, &SovBasisPair::dressed(&q, &xyz).unwrap()).unwrap();
        let coeff = extract_coefficient(&g, &h, &k).unwrap();
        assert!(g.entry(&h, &k).norm() < 10.0 * c.norm() * coeff.norm() * g.norm(&k).norm());
        if let Some(prev) = last {
            assert!(rel_err(coeff, prev) < 1e-6);
        }
        last = Some(coeff);
    }
}

#[test]
fn det_k_scaling_slopes() {
    let cs = [c(0.5, 0.25), c(-1.25, 0.75), c(2.0, -1.5), c(0.25, 1.0)];
    for n in [2usize, 3] {
        let (p, xyz, _) = setup(20 + n as u64, n);
        let rows = c_scaling_scan(&p, &xyz, &cs, None).unwrap();
        assert!(rows.iter().any(|r| r.r == 1));
        for row in rows {
            assert!((row.slope - row.r as f64).abs() <= 1e-3, "{} {} {}", row.h, row.k, row.slope);
            assert!(row.coeff_spread <= 1e-6, "{} {} {:e}", row.h, row.k, row.coeff_spread);
        }
    }
    let (p, xyz, _) = setup(24, 4);
    let cells = [
        (ti(&[0, 0, 2, 2]), ti(&[1, 1, 1, 1])),
        (ti(&[0, 2, 1, 1]), ti(&[1, 1, 1, 1])),
        (ti(&[1, 1, 1, 1]), ti(&[1, 1, 1, 1])),
    ];
    let rows = c_scaling_scan(&p, &xyz, &cs, Some(&cells)).unwrap();
    let expect = [2.0, 1.0, 0.0];
    for (row, e) in rows.iter().zip(expect) {
        assert!((row.slope - e).abs() <= 1e-3, "{} {}", row.h, row.slope);
        assert!(row.coeff_spread <= 1e-6);
    }
    assert!(c_scaling_scan(&p, &xyz, &cs[..2], Some(&cells)).is_err());
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn equal_coefficients_for_equal_invariants() {
    let (p, xyz, _) = setup(33, 3);
    let t1 = twist_with_invariants(&p.twist, p.twist.a, p.twist.b, c(0.75, -0.5)).unwrap();
    let t2 = twist_with_invariants(&p.twist, p.twist.a, p.twist.b, c(-1.5, 1.25)).unwrap();
    let (q1, q2) = (p.with_twist(t1), p.with_twist(t2));
    let g1 = gram(&q1, &SovBasisPair::dressed(&q1, &xyz).unwrap()).unwrap();
    let g2 = gram(&q2, &SovBasisPair::dressed(&q2, &xyz).unwrap()).unwrap();
    assert!(!g1.coefficients.is_empty());
    for (a, b) in g1.coefficients.iter().zip(&g2.coefficients) {
        assert_eq!((&a.h, &a.k), (&b.h, &b.k));
        assert!(rel_err(a.value, b.value) < 1e-6);
    }
}

#[test]
fn dual_bases_invert_the_gram() {
    for n in 2..=3 {
        for seed in 0..3 {
            let (p, _, bases) = setup(40 + seed, n);
            let g = gram(&p, &bases).unwrap();
            let d = dual_bases(&bases, &g).unwrap();
            assert!(d.inverse_residual <= 1e-8, "n={n} {:e}", d.inverse_residual);
            assert!(d.inverse_agreement <= 1e-8);
            assert!(d.ortho_residuals.0 <= 1e-8 && d.ortho_residuals.1 <= 1e-8);
            for h in TernaryIndex::all(n) {
                assert!(expansion_leakage(&d, &h) <= 1e-8, "{h}");
            }
            // the measure shares the sparsity pattern of the Gram matrix
            let mscale = d.measure.max_abs();
            for h in TernaryIndex::all(n) {
                for k in TernaryIndex::all(n) {
                    if classify_pair(&k, &h) == PairClass::Zero && classify_pair(&h, &k) == PairClass::Zero {
                        assert!(d.measure[(h.flat(), k.flat())].norm() <= 1e-9 * mscale);
                    }
                }
            }
        }
    }
}

#[test]
fn vanishing_det_k_gives_diagonal_gram() {
    let (p, xyz, _) = setup(5, 3);
    let q = p.with_twist(twist_with_invariants(&p.twist, p.twist.a, p.twist.b, cr(0.0)).unwrap());
    let bases = SovBasisPair::dressed(&q, &xyz).unwrap();
    let g = gram(&q, &bases).unwrap();
    let dim = q.dim();
    for i in 0..dim {
        for j in 0..dim {
            if i != j {
                assert!(g.gram[(i, j)].norm() <= 1e-9 * g.scale);
            }
        }
    }
    assert!(g.diag_max_rel <= 1e-8);
    let d = dual_bases(&bases, &g).unwrap();
    // with a diagonal Gram matrix the orthogonality conditions are met by the SoV bases themselves
    let lscale = bases.left.max_abs();
    let rscale = bases.right.max_abs();
    assert!(d.p_covectors.sub(&bases.left).max_abs() <= 1e-8 * lscale);
    assert!(d.p_vectors.sub(&bases.right).max_abs() <= 1e-8 * rscale);
    for h in TernaryIndex::all(3) {
        assert!(expansion_leakage(&d, &h) <= 1e-9);
    }
}

#[test]
fn b_recursion_matches_dual_expansion() {
    for (n, seed) in [(2usize, 1u64), (4, 1)] {
        let (p, _, bases) = setup(seed, n);
        let g = gram(&p, &bases).unwrap();
        let d = dual_bases(&bases, &g).unwrap();
        let h = TernaryIndex::uniform(n, 1);
        let rec = b_recursion(&g, &h).unwrap();
        let solved = b_from_dual(&d, &g, &h);
        assert_eq!(rec.len(), solved.len());
        for (key, v) in &rec {
            assert!(rel_err(*v, solved[key]) <= 1e-7, "{key:?}");
        }
        if n == 4 {
            assert_eq!(rec.keys().filter(|(a, _)| a.len() == 2).count(), 6);
        }
    }
}

#[test]
fn t2_matrix_element_recursions() {
    for (n, seed) in [(2usize, 0u64), (3, 1)] {
        let (p, xyz, _) = setup(seed, n);
        let rests: Vec<Vec<u8>> = if n == 2 { vec![vec![]] } else { vec![vec![0], vec![1], vec![2]] };
        for row in appc_recursion_check(&p, &xyz, 0, &rests).unwrap() {
            assert!(row.residual <= 1e-9, "{:e}", row.residual);
        }
    }
    let (p, xyz, _) = setup(2, 4);
    for row in appc_recursion_check(&p, &xyz, 1, &[vec![]]).unwrap() {
        assert!(row.residual <= 1e-8, "{:e}", row.residual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn nonzero_classes_keep_digit_sums(
        h in proptest::collection::vec(0u8..3, 1..6),
        k in proptest::collection::vec(0u8..3, 1..6),
    ) {
        let n = h.len().min(k.len());
        let (h, k) = (ti(&h[..n]), ti(&k[..n]));
        match classify_pair(&h, &k) {
            PairClass::Zero => {}
            PairClass::Diagonal => prop_assert!(one_counts_agree(&h, &k)),
            PairClass::OffDiag { alpha, beta, r } => {
                prop_assert!(digit_sums_agree(&h, &k));
                prop_assert_eq!(alpha.len(), r);
                prop_assert_eq!(beta.len(), r);
                prop_assert_eq!(k.substitute(&alpha, &beta), h);
            }
        }
    }

    #[test]
    fn substitution_is_classified_back(k in proptest::collection::vec(0u8..3, 2..7), pick in 0usize..64) {
        let k = ti(&k);
        let subs: Vec<_> = (1..=k.count(1) / 2).flat_map(|r| pair_substitutions(&k, r)).collect();
        prop_assume!(!subs.is_empty());
        let (alpha, beta) = subs[pick % subs.len()].clone();
        let h = k.substitute(&alpha, &beta);
        prop_assert_eq!(classify_pair(&h, &k), PairClass::OffDiag { r: alpha.len(), alpha, beta });
    }
}

