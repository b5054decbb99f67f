//! Dense kernels for the tiny matrices that dominate bin bookkeeping.
//!
//! For a 4×4 block the general-purpose decompositions spend most of their
//! time in setup; plain loops over a working copy are several times faster.
//! Both routines also serve as the fallback when the general ones return
//! non-finite factors.

use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Largest `min(rows, cols)` sent to the Jacobi SVD; past this the sweep
/// count makes the general routine faster.
pub(crate) const SMALL_SVD_DIM: usize = 4;
/// Largest `min(rows, cols)` sent to the Householder QR.
pub(crate) const SMALL_QR_DIM: usize = 16;

/// Relative off-diagonal tolerance of the Jacobi sweeps.
const JACOBI_TOL: f64 = 1e-15;
const MAX_SWEEPS: usize = 60;

/// Thin SVD in row-major parts: `u` is `rows × n`, `vh` is `n × cols`,
/// singular values descending, `n = min(rows, cols)`.
pub(crate) struct ThinSvd {
    pub u: Vec<C64>,
    pub s: Vec<f64>,
    pub vh: Vec<C64>,
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Columns are rotated pairwise until every pair is orthogonal relative to
/// their norms, which keeps small singular values accurate to working
/// precision relative to themselves.
pub(crate) fn jacobi_svd(a: &[C64], rows: usize, cols: usize) -> ThinSvd {
    if rows < cols {
        let mut ah = vec![ZERO; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                ah[c * rows + r] = a[r * cols + c].conj();
            }
        }
        let t = jacobi_svd(&ah, cols, rows);
        let n = rows;
        let mut u = vec![ZERO; rows * n];
        let mut vh = vec![ZERO; n * cols];
        for k in 0..n {
            for r in 0..rows {
                u[r * n + k] = t.vh[k * rows + r].conj();
            }
            for c in 0..cols {
                vh[k * cols + c] = t.u[c * n + k].conj();
            }
        }
        return ThinSvd { u, s: t.s, vh };
    }

    let n = cols;
    // column-major working copies
    let mut w = vec![ZERO; rows * n];
    for r in 0..rows {
        for c in 0..n {
            w[c * rows + r] = a[r * cols + c];
        }
    }
    let mut v = vec![ZERO; n * n];
    for j in 0..n {
        v[j * n + j] = C64::new(1.0, 0.0);
    }
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (wp, wq) = (&w[p * rows..(p + 1) * rows], &w[q * rows..(q + 1) * rows]);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = ZERO;
                for i in 0..rows {
                    alpha += wp[i].norm_sqr();
                    beta += wq[i].norm_sqr();
                    gamma += wp[i].conj() * wq[i];
                }
                let g = gamma.norm();
                if g == 0.0 || g <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = (gamma / g).conj();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, rows, p, q, phase, c, s);
                rotate(&mut v, n, p, q, phase, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..n).map(|j| w[j * rows..(j + 1) * rows].iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = vec![ZERO; rows * n];
    let mut vh = vec![ZERO; n * n];
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sigma = norms[j];
        s.push(sigma);
        if sigma > 0.0 {
            for r in 0..rows {
                u[r * n + k] = w[j * rows + r] / sigma;
            }
        }
        for c in 0..n {
            vh[k * n + c] = v[j * n + c].conj();
        }
    }
    ThinSvd { u, s, vh }
}

/// Column pair update `(x_p, x_q) ← (c·x_p − s·e·x_q, s·x_p + c·e·x_q)` on a
/// column-major array with columns of length `len`.
fn rotate(m: &mut [C64], len: usize, p: usize, q: usize, phase: C64, c: f64, s: f64) {
    let (head, tail) = m.split_at_mut(q * len);
    let xp = &mut head[p * len..(p + 1) * len];
    let xq = &mut tail[..len];
    for i in 0..len {
        let a = xp[i];
        let b = xq[i] * phase;
        xp[i] = a * c - b * s;
        xq[i] = a * s + b * c;
    }
}

/// Householder thin QR of a row-major `rows × cols` matrix: `q` is
/// `rows × k`, `r` is `k × cols`, `k = min(rows, cols)`.
pub(crate) fn householder_qr(a: &[C64], rows: usize, cols: usize) -> (Vec<C64>, Vec<C64>) {
    let k = rows.min(cols);
    let mut m = a.to_vec();
    let mut reflectors: Vec<Option<(Vec<C64>, f64)>> = Vec::with_capacity(k);
    for j in 0..k {
        let norm = (j..rows).map(|i| m[i * cols + j].norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            reflectors.push(None);
            continue;
        }
        let x0 = m[j * cols + j];
        let unit = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -unit * norm;
        let mut v: Vec<C64> = (j..rows).map(|i| m[i * cols + j]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        if vv == 0.0 {
            reflectors.push(None);
            continue;
        }
        for c in j..cols {
            let dot: C64 = v.iter().enumerate().map(|(t, vi)| vi.conj() * m[(j + t) * cols + c]).sum();
            let f = dot * (2.0 / vv);
            for (t, vi) in v.iter().enumerate() {
                m[(j + t) * cols + c] -= vi * f;
            }
        }
        reflectors.push(Some((v, vv)));
    }
    let mut r = vec![ZERO; k * cols];
    for i in 0..k {
        for c in i..cols {
            r[i * cols + c] = m[i * cols + c];
        }
    }
    let mut q = vec![ZERO; rows * k];
    for i in 0..k {
        q[i * k + i] = C64::new(1.0, 0.0);
    }
    for j in (0..k).rev() {
        if let Some((v, vv)) = &reflectors[j] {
            for c in 0..k {
                let dot: C64 = v.iter().enumerate().map(|(t, vi)| vi.conj() * q[(j + t) * k + c]).sum();
                let f = dot * (2.0 / vv);
                for (t, vi) in v.iter().enumerate() {
                    q[(j + t) * k + c] -= vi * f;
                }
            }
        }
    }
    (q, r)
}
