//! Randomized invariants. Case counts are kept small: most properties
//! involve eigendecompositions of matrices up to 64 x 64.

mod common;

use clh_core::algebra::generate_algebra;
use clh_core::budget::Budget;
use clh_core::factorized::{stabilizer_ground_energy, Pauli, PauliTerm, PauliWord};
use clh_core::linalg::{c, column_space, null_space, rank, thin_svd, CMat, Tolerance};
use clh_core::model::dualize;
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn low_rank(seed: u64, rows: usize, cols: usize, r: usize) -> CMat {
    let mut rng = common::rng(seed);
    let a = common::gaussian(&mut rng, rows, r);
    let b = common::gaussian(&mut rng, r, cols);
    a * b
}

fn pauli() -> impl Strategy<Value = Pauli> {
    prop_oneof![Just(Pauli::I), Just(Pauli::X), Just(Pauli::Y), Just(Pauli::Z)]
}

fn word(n: usize) -> impl Strategy<Value = PauliWord> {
    proptest::collection::vec(pauli(), n).prop_map(PauliWord)
}

fn min_eigenvalue(h: &CMat) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_and_counts_rank(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9, r in 0usize..5) {
        let m = low_rank(seed, rows, cols, r);
        let (s, u, v) = thin_svd(&m);
        let mut back = CMat::zeros(rows, cols);
        for k in 0..s.len() {
            back += &u[k] * v[k].adjoint() * c(s[k], 0.0);
        }
        prop_assert!((&back - &m).norm() <= 1e-9 * m.norm().max(1.0));
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert_eq!(rank(&m, 1e-9), r.min(rows).min(cols));
        prop_assert_eq!(column_space(&m, 1e-9).len(), r.min(rows).min(cols));
    }

    #[test]
    fn null_space_is_annihilated_and_complete(seed in any::<u64>(), rows in 1usize..9, cols in 1usize..9, r in 0usize..5) {
        let m = low_rank(seed, rows, cols, r);
        let ns = null_space(&m, 1e-9);
        prop_assert_eq!(ns.len(), cols - r.min(rows).min(cols));
        for (i, v) in ns.iter().enumerate() {
            prop_assert!((&m * v).norm() <= 1e-9 * m.norm().max(1.0));
            for w in &ns[..i] {
                prop_assert!(w.dotc(v).norm() <= 1e-9);
            }
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn pauli_words_round_trip_and_anticommute(a in word(4), b in word(4)) {
        let text = a.to_string();
        prop_assert_eq!(text.parse::<PauliWord>().unwrap(), a.clone());
        let (ma, mb) = (a.matrix(), b.matrix());
        let anti = (&ma * &mb + &mb * &ma).norm() < 1e-12;
        let comm = (&ma * &mb - &mb * &ma).norm() < 1e-12;
        prop_assert!(anti != comm);
        prop_assert_eq!(a.anticommutes(&b), anti);
    }

    #[test]
    fn stabilizer_energy_matches_dense(words in proptest::collection::vec(word(4), 1..9), coeffs in proptest::collection::vec(-2.0f64..2.0, 8), offset in -1.0f64..1.0) {
        // Keep a commuting subfamily, repeats and products included.
        let mut kept: Vec<PauliWord> = Vec::new();
        for w in words {
            if kept.iter().all(|k| !k.anticommutes(&w)) {
                kept.push(w);
            }
        }
        let terms: Vec<PauliTerm> = kept
            .iter()
            .zip(&coeffs)
            .enumerate()
            .map(|(k, (w, &a))| PauliTerm { id: k as u64, coeff: a, word: w.to_string() })
            .collect();
        let mut h = CMat::identity(16, 16) * c(offset, 0.0);
        for (w, t) in kept.iter().zip(&terms) {
            h += w.matrix() * c(t.coeff, 0.0);
        }
        let (e, signs) = stabilizer_ground_energy(&terms, offset, &mut Budget::new(1 << 20)).unwrap();
        prop_assert!((e - min_eigenvalue(&h)).abs() <= 1e-9, "{} vs {}", e, min_eigenvalue(&h));
        let from_signs: f64 = offset + terms.iter().map(|t| t.coeff * signs[&t.id]).sum::<f64>();
        prop_assert!((from_signs - e).abs() <= 1e-9);
    }

    #[test]
    fn generated_algebra_is_closed(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (d, _, _, gens) = common::planted_algebra(&mut rng);
        let tol = Tolerance::default();
        let alg = generate_algebra(&gens, d, &tol);
        for g in &gens {
            prop_assert!(alg.contains(g, &tol));
        }
        prop_assert!(alg.contains(&CMat::identity(d, d), &tol));
        for x in &alg.basis {
            prop_assert!(alg.contains(&x.adjoint(), &tol));
            for y in &alg.basis {
                prop_assert!(alg.contains(&(x * y), &tol));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dualize_is_an_involution(seed in any::<u64>(), conjugate in any::<bool>()) {
        let inst = common::toric_variant(&mut common::rng(seed), conjugate);
        let twice = dualize(&dualize(&inst).unwrap()).unwrap();
        prop_assert_eq!(twice.to_json_string(), inst.to_json_string());
    }
}
