use chainfeed::{contract, matrix_exponential, truncated_svd, ComplexTensor};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> ComplexTensor {
    let data = (0..r * c)
        .map(|_| C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect();
    ComplexTensor::new(vec![r, c], data).unwrap()
}

fn naive_matmul(a: &ComplexTensor, b: &ComplexTensor) -> ComplexTensor {
    let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = ComplexTensor::zeros(&[n, m]);
    for i in 0..n {
        for j in 0..m {
            let mut s = C64::new(0.0, 0.0);
            for p in 0..k {
                s += a.get(&[i, p]) * b.get(&[p, j]);
            }
            out.set(&[i, j], s);
        }
    }
    out
}

/// Eigenvalues of a Hermitian matrix via cyclic Jacobi on its real
/// 2n×2n embedding; each eigenvalue appears twice there.
fn hermitian_eigenvalues(h: &ComplexTensor) -> Vec<f64> {
    let n = h.shape()[0];
    let m = 2 * n;
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            let z = h.get(&[i, j]);
            a[i][j] = z.re;
            a[i + n][j + n] = z.re;
            a[i][j + n] = -z.im;
            a[i + n][j] = z.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..m).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev.into_iter().step_by(2).collect()
}

#[test]
fn contraction_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_matrix(&mut rng, 3, 4, 1.0);
    let b = random_matrix(&mut rng, 4, 5, 1.0);
    let c = contract(&a, &b, &[(1, 0)]).unwrap();
    assert_eq!(c.shape(), &[3, 5]);
    assert!(c.max_abs_diff(&naive_matmul(&a, &b)) < 1e-14);
}

#[test]
fn contraction_over_leading_axes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_matrix(&mut rng, 4, 3, 1.0);
    let b = random_matrix(&mut rng, 4, 5, 1.0);
    let c = contract(&a, &b, &[(0, 0)]).unwrap();
    let at = a.permute(&[1, 0]).unwrap();
    assert!(c.max_abs_diff(&naive_matmul(&at, &b)) < 1e-14);
}

#[test]
fn truncated_svd_matches_eigen_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = random_matrix(&mut rng, 8, 8, 1.0);
    let s = truncated_svd(&m, 0.0, 3).unwrap();
    let gram = m.adjoint().unwrap().matmul(&m).unwrap();
    let sigma_sq = hermitian_eigenvalues(&gram);
    let expected: f64 = sigma_sq[3..].iter().sum();
    assert!((s.discarded_weight - expected).abs() < 1e-10 * expected.max(1.0));
    for (k, v) in s.singular_values.iter().enumerate() {
        assert!((v * v - sigma_sq[k]).abs() < 1e-10);
    }
    assert_eq!(s.numerical_rank, 8);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn contraction_is_bilinear(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 3, 4, 1.0);
        let b = random_matrix(&mut rng, 4, 2, 1.0);
        let alpha = C64::new(re, im);
        let lhs = contract(&a.scale(alpha), &b, &[(1, 0)]).unwrap();
        let rhs = contract(&a, &b, &[(1, 0)]).unwrap().scale(alpha);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn svd_reconstruction_error_is_discarded_weight(
        seed in any::<u64>(), r in 1usize..9, c in 1usize..9, cutoff in 0.0f64..0.5, max_bond in 1usize..9,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, r, c, 1.0);
        let s = truncated_svd(&m, cutoff, max_bond).unwrap();
        let k = s.singular_values.len();
        prop_assert!(k >= 1 && k <= max_bond);
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        let smax = s.singular_values[0];
        prop_assert!(k == 1 || s.singular_values.iter().all(|&v| v > cutoff * smax));
        let u = &s.left_isometry;
        let v = &s.right_isometry;
        prop_assert!(u.adjoint().unwrap().matmul(u).unwrap().max_abs_diff(&ComplexTensor::identity(k)) < 1e-12);
        prop_assert!(v.matmul(&v.adjoint().unwrap()).unwrap().max_abs_diff(&ComplexTensor::identity(k)) < 1e-12);
        let mut us = u.clone();
        for i in 0..r {
            for j in 0..k {
                us.set(&[i, j], u.get(&[i, j]) * s.singular_values[j]);
            }
        }
        let rec = us.matmul(v).unwrap();
        let err = m.sub(&rec).unwrap().norm_sqr();
        prop_assert!((err - s.discarded_weight).abs() < 1e-10);
        let kept: f64 = s.singular_values.iter().map(|x| x * x).sum();
        prop_assert!((m.norm_sqr() - kept - s.discarded_weight).abs() < 1e-10 * m.norm_sqr());
    }

    #[test]
    fn exponential_inverse(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = random_matrix(&mut rng, n, n, 1.0);
        let norm = m.frobenius_norm();
        if norm > 1.0 {
            m = m.scale(C64::new(1.0 / norm, 0.0));
        }
        let e = matrix_exponential(&m).unwrap();
        let einv = matrix_exponential(&m.scale(C64::new(-1.0, 0.0))).unwrap();
        prop_assert!(e.matmul(&einv).unwrap().max_abs_diff(&ComplexTensor::identity(n)) < 1e-10);
    }

    #[test]
    fn exponential_of_anti_hermitian_is_unitary(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, n, 1.0);
        let k = m.sub(&m.adjoint().unwrap()).unwrap();
        let u = matrix_exponential(&k).unwrap();
        prop_assert!(u.unitarity_defect().unwrap() < 1e-10);
    }

    #[test]
    fn exponential_matches_taylor_series(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, n, n, 0.2);
        let mut term = ComplexTensor::identity(n);
        let mut sum = ComplexTensor::identity(n);
        for j in 1..30 {
            term = term.matmul(&m).unwrap().scale(C64::new(1.0 / j as f64, 0.0));
            sum = sum.add(&term).unwrap();
        }
        prop_assert!(matrix_exponential(&m).unwrap().max_abs_diff(&sum) < 1e-12);
    }
}
