use chainfeed::{matrix_exponential, ComplexTensor, Error, Mps, SiteLabel, Truncation};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_mps(rng: &mut ChaCha8Rng, dims: &[usize], chi: usize) -> Mps {
    let n = dims.len();
    let mut tensors = Vec::new();
    for (i, &d) in dims.iter().enumerate() {
        let l = if i == 0 { 1 } else { chi };
        let r = if i == n - 1 { 1 } else { chi };
        let data = (0..l * d * r).map(|_| rand_c(rng)).collect();
        tensors.push(ComplexTensor::new(vec![l, d, r], data).unwrap());
    }
    let labels = (1..=n).map(SiteLabel::spin).collect();
    Mps::from_tensors(labels, tensors).unwrap()
}

fn random_unitary(rng: &mut ChaCha8Rng, n: usize) -> ComplexTensor {
    let mut h = ComplexTensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..=i {
            let z = if i == j { C64::new(rand_c(rng).re, 0.0) } else { rand_c(rng) };
            h.set(&[i, j], z);
            h.set(&[j, i], z.conj());
        }
    }
    matrix_exponential(&h.scale(C64::new(0.0, 1.0))).unwrap()
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Applies a `k`-site gate to sites `start..start+k` of a dense vector.
fn dense_apply(psi: &[C64], dims: &[usize], gate: &ComplexTensor, start: usize, k: usize) -> Vec<C64> {
    let left: usize = dims[..start].iter().product();
    let mid: usize = dims[start..start + k].iter().product();
    let right: usize = dims[start + k..].iter().product();
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for a in 0..left {
        for i in 0..mid {
            for j in 0..mid {
                let g = gate.get(&[i, j]);
                for b in 0..right {
                    out[(a * mid + i) * right + b] += g * psi[(a * mid + j) * right + b];
                }
            }
        }
    }
    out
}

fn dense_swap(psi: &[C64], dims: &[usize], left: usize) -> Vec<C64> {
    let pre: usize = dims[..left].iter().product();
    let (d1, d2) = (dims[left], dims[left + 1]);
    let post: usize = dims[left + 2..].iter().product();
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    for a in 0..pre {
        for i in 0..d1 {
            for j in 0..d2 {
                for b in 0..post {
                    out[((a * d2 + j) * d1 + i) * post + b] = psi[((a * d1 + i) * d2 + j) * post + b];
                }
            }
        }
    }
    out
}

fn dense_expect(psi: &[C64], dims: &[usize], op: &ComplexTensor, pos: usize) -> C64 {
    let phi = dense_apply(psi, dims, op, pos, 1);
    psi.iter().zip(&phi).map(|(a, b)| a.conj() * b).sum()
}

fn random_hermitian_op(rng: &mut ChaCha8Rng, d: usize) -> ComplexTensor {
    let mut h = ComplexTensor::zeros(&[d, d]);
    for i in 0..d {
        for j in 0..=i {
            let z = if i == j { C64::new(rand_c(rng).re, 0.0) } else { rand_c(rng) };
            h.set(&[i, j], z);
            h.set(&[j, i], z.conj());
        }
    }
    h
}

const EXACT: Truncation = Truncation { cutoff: 0.0, max_bond: 64 };

#[test]
fn centre_round_trip_preserves_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mps = random_mps(&mut rng, &[2, 3, 2], 3);
    let before = mps.to_dense();
    mps.move_center(2).unwrap();
    mps.check_gauge(1e-12).unwrap();
    mps.move_center(0).unwrap();
    mps.check_gauge(1e-12).unwrap();
    assert!(max_diff(&before, &mps.to_dense()) < 1e-12);
}

#[test]
fn swap_matches_dense_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = [2, 2, 3, 2];
    let mut mps = random_mps(&mut rng, &dims, 4);
    let psi = mps.to_dense();
    mps.move_center(1).unwrap();
    mps.swap_adjacent(1, EXACT).unwrap();
    assert_eq!(mps.center(), 2);
    let expected = dense_swap(&psi, &dims, 1);
    assert!(max_diff(&expected, &mps.to_dense()) < 1e-10);
    mps.check_gauge(1e-10).unwrap();
    mps.swap_adjacent(1, EXACT).unwrap();
    assert!(max_diff(&psi, &mps.to_dense()) < 1e-10);
}

#[test]
fn swap_gate_equals_swap_adjacent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut a = random_mps(&mut rng, &[2, 2, 2], 2);
    let mut b = a.clone();
    let mut swap = ComplexTensor::zeros(&[4, 4]);
    for i in 0..2 {
        for j in 0..2 {
            swap.set(&[j * 2 + i, i * 2 + j], C64::new(1.0, 0.0));
        }
    }
    a.swap_adjacent(0, EXACT).unwrap();
    b.apply_gate(&swap, &[0, 1], EXACT, 1).unwrap();
    assert!(max_diff(&a.to_dense(), &b.to_dense()) < 1e-12);
}

#[test]
fn identity_gate_leaves_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mps = random_mps(&mut rng, &[2, 2, 2, 2], 3);
    let psi = mps.to_dense();
    mps.move_center(1).unwrap();
    mps.apply_gate(&ComplexTensor::identity(8), &[1, 2, 3], EXACT, 2).unwrap();
    assert!(max_diff(&psi, &mps.to_dense()) < 1e-12);
}

#[test]
fn gate_dimension_mismatch_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mps = random_mps(&mut rng, &[2, 3], 2);
    let err = mps.apply_gate(&ComplexTensor::identity(4), &[0, 1], EXACT, 0).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn capacity_error_when_exact_rank_exceeds_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mps = random_mps(&mut rng, &[2, 2, 2, 2], 4);
    mps.move_center(1).unwrap();
    let u = random_unitary(&mut rng, 4);
    let err = mps.apply_gate(&u, &[1, 2], Truncation::exact(1), 1).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)), "{err}");
}

#[test]
fn truncation_ledger_matches_norm_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mps = random_mps(&mut rng, &[2, 2, 2, 2, 2, 2], 8);
    let trunc = Truncation { cutoff: 0.2, max_bond: 3 };
    for step in 0..6 {
        let p = step % 5;
        mps.move_center(p).unwrap();
        let u = random_unitary(&mut rng, 4);
        mps.apply_gate(&u, &[p, p + 1], trunc, p + 1).unwrap();
        mps.swap_adjacent(p, trunc).unwrap();
    }
    assert!(mps.discarded_weight() > 0.0);
    let deficit = 1.0 - mps.norm_squared();
    assert!((deficit - mps.discarded_weight()).abs() < 1e-10, "{deficit} vs {}", mps.discarded_weight());
}

#[test]
fn retirement_preserves_remaining_expectations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dims = [2, 2, 2, 2];
    let mut mps = random_mps(&mut rng, &dims, 4);
    let ops: Vec<_> = (0..4).map(|_| random_hermitian_op(&mut rng, 2)).collect();
    let before: Vec<C64> = (1..4).map(|p| mps.expect_local(&ops[p], p).unwrap()).collect();
    mps.move_center(2).unwrap();
    mps.retire_leftmost().unwrap();
    assert!((mps.norm_squared() - 1.0).abs() < 1e-12);
    for p in 0..3 {
        let v = mps.expect_local(&ops[p + 1], p).unwrap();
        assert!((v - before[p]).norm() < 1e-12);
    }
    // centre moves through the open boundary stay consistent
    mps.move_center(0).unwrap();
    mps.check_gauge(1e-12).unwrap();
    let v = mps.expect_local(&ops[1], 0).unwrap();
    assert!((v - before[0]).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn two_site_gate_matches_dense(seed in any::<u64>(), n in 2usize..=6, pos_frac in 0.0f64..1.0, ca in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![2; n];
        let mut mps = random_mps(&mut rng, &dims, 3);
        let p = ((n - 1) as f64 * pos_frac) as usize % (n - 1);
        let psi = mps.to_dense();
        let u = random_unitary(&mut rng, 4);
        mps.move_center(p).unwrap();
        mps.apply_gate(&u, &[p, p + 1], EXACT, p + ca).unwrap();
        let expected = dense_apply(&psi, &dims, &u, p, 2);
        prop_assert!(max_diff(&expected, &mps.to_dense()) < 1e-10);
        prop_assert!(mps.gauge_defect() < 1e-10);
        prop_assert!((mps.norm_squared() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn three_site_gate_matches_dense(seed in any::<u64>(), ca in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![2, 2, 3, 2, 2];
        let mut mps = random_mps(&mut rng, &dims, 3);
        let psi = mps.to_dense();
        let u = random_unitary(&mut rng, 12);
        mps.move_center(2).unwrap();
        mps.apply_gate(&u, &[1, 2, 3], EXACT, 1 + ca).unwrap();
        let expected = dense_apply(&psi, &dims, &u, 1, 3);
        prop_assert!(max_diff(&expected, &mps.to_dense()) < 1e-10);
        prop_assert!(mps.gauge_defect() < 1e-10);
    }

    #[test]
    fn expectations_gauge_invariant(seed in any::<u64>(), moves in proptest::collection::vec(0usize..5, 1..6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![2, 3, 2, 2, 2];
        let mut mps = random_mps(&mut rng, &dims, 4);
        let psi = mps.to_dense();
        let ops: Vec<_> = dims.iter().map(|&d| random_hermitian_op(&mut rng, d)).collect();
        for m in moves {
            mps.move_center(m).unwrap();
            for (p, op) in ops.iter().enumerate() {
                let v = mps.expect_local(op, p).unwrap();
                let dense = dense_expect(&psi, &dims, op, p);
                prop_assert!((v - dense).norm() < 1e-10);
                prop_assert!(v.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn swap_is_an_involution(seed in any::<u64>(), left in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = vec![2, 3, 2, 3, 2];
        let mut mps = random_mps(&mut rng, &dims, 4);
        let psi = mps.to_dense();
        mps.move_center(left).unwrap();
        mps.swap_adjacent(left, EXACT).unwrap();
        let once = mps.to_dense();
        prop_assert!(max_diff(&dense_swap(&psi, &dims, left), &once) < 1e-10);
        mps.swap_adjacent(left, EXACT).unwrap();
        prop_assert!(max_diff(&psi, &mps.to_dense()) < 1e-10);
        prop_assert!(mps.discarded_weight() < 1e-20);
    }
}
