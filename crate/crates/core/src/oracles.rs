//! Reference solutions for small problems.
//!
//! * [`lindblad_run`]: dense master equation for the chain with the last site
//!   decaying at rate Γ, no feedback.
//! * [`single_emitter_delay_run`]: one excited emitter in front of the
//!   delayed loop, solved as a delay differential equation for its amplitude.
//!
//! The delay equation is written for the same gate convention as the
//! simulator: before the first round trip the amplitude decays as
//! `ċ = −(Γ/2)c`; afterwards both the outgoing and the returning channel are
//! coupled at full strength,
//! `ċ(t) = −Γc(t) + Γe^{iφ}c(t−τ)`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::model::{excited_projector, heisenberg_bond, sigma_minus, SimulationConfig};
use crate::tensor::{gemm, ComplexTensor};

/// Largest chain handled by the dense oracle.
pub const MAX_DENSE_SITES: usize = 8;

/// Hermitian, unit-trace matrix on the `2^N` chain space.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub dim: usize,
    pub data: Vec<C64>,
}

impl DensityMatrix {
    pub fn pure(psi: &[C64]) -> Self {
        let dim = psi.len();
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] = psi[i] * psi[j].conj();
            }
        }
        Self { dim, data }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        worst
    }

    /// `⟨σ₁₁⟩` of chain site `n` (1-based, site 1 most significant).
    pub fn site_density(&self, n_sites: usize, n: usize) -> f64 {
        let shift = n_sites - n;
        (0..self.dim)
            .filter(|i| (i >> shift) & 1 == 0)
            .map(|i| self.data[i * self.dim + i].re)
            .sum()
    }
}

/// Site densities of the dense reference over time.
#[derive(Clone, Debug)]
pub struct OracleTrajectory {
    pub times: Vec<f64>,
    pub site_densities: Vec<Vec<f64>>,
    pub trace: Vec<f64>,
    pub purity: Vec<f64>,
}

/// Embeds a single-site operator at chain site `n` (1-based).
fn embed(op: &ComplexTensor, n_sites: usize, n: usize) -> ComplexTensor {
    let mut out = ComplexTensor::identity(1);
    for site in 1..=n_sites {
        let factor = if site == n { op.clone() } else { ComplexTensor::identity(2) };
        out = out.kron(&factor).unwrap();
    }
    out
}

/// `J Σ σ·σ` over nearest-neighbour bonds.
pub fn chain_hamiltonian(n_sites: usize, coupling_j: f64) -> ComplexTensor {
    let dim = 1 << n_sites;
    let mut h = ComplexTensor::zeros(&[dim, dim]);
    let bond = heisenberg_bond().scale(C64::new(coupling_j, 0.0));
    for b in 1..n_sites {
        let left = ComplexTensor::identity(1 << (b - 1));
        let right = ComplexTensor::identity(1 << (n_sites - b - 1));
        let term = left.kron(&bond).unwrap().kron(&right).unwrap();
        h = h.add(&term).unwrap();
    }
    h
}

/// Product state with the listed 1-based sites excited.
pub fn product_vector(n_sites: usize, pattern: &[usize]) -> Result<Vec<C64>> {
    let mut index = 0usize;
    for site in 1..=n_sites {
        index <<= 1;
        if !pattern.contains(&site) {
            index |= 1;
        }
    }
    for &s in pattern {
        if s == 0 || s > n_sites {
            return Err(Error::Validation(format!("site {s} outside 1..={n_sites}")));
        }
    }
    let mut psi = vec![C64::new(0.0, 0.0); 1 << n_sites];
    psi[index] = C64::new(1.0, 0.0);
    Ok(psi)
}

/// Integrates `dρ/dt = −i[H, ρ] + Γ(σ⁻ρσ⁺ − ½{σ⁺σ⁻, ρ})` (decay on the last
/// site) with fixed-step RK4 of step at most `config.dt / 10`, sampling the
/// site densities at every time in `t_grid` (non-decreasing, ≥ 0).
pub fn lindblad_run(config: &SimulationConfig, pattern: &[usize], t_grid: &[f64]) -> Result<OracleTrajectory> {
    let n = config.n_sites;
    if n > MAX_DENSE_SITES {
        return Err(Error::Capacity(format!(
            "dense master equation limited to {MAX_DENSE_SITES} sites, got {n}"
        )));
    }
    if n == 0 {
        return Err(Error::Validation("n_sites must be at least 1".into()));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Validation("t_grid must be non-decreasing and non-negative".into()));
    }
    let dim = 1 << n;
    let h = chain_hamiltonian(n, config.coupling_j);
    let lower = embed(&sigma_minus(), n, n).scale(C64::new(config.decay_gamma.sqrt(), 0.0));
    let lower_dag = lower.adjoint()?;
    let ldl = lower_dag.matmul(&lower)?;
    // ρ̇ = Aρ + ρA† + LρL†, with A = −iH − ½L†L
    let a = h.scale(C64::new(0.0, -1.0)).sub(&ldl.scale(C64::new(0.5, 0.0)))?;
    let a_dag = a.adjoint()?;
    let rhs = |rho: &[C64]| -> Vec<C64> {
        let mut out = gemm(a.data(), rho, dim, dim, dim);
        let r2 = gemm(rho, a_dag.data(), dim, dim, dim);
        let lr = gemm(lower.data(), rho, dim, dim, dim);
        let lrl = gemm(&lr, lower_dag.data(), dim, dim, dim);
        for i in 0..out.len() {
            out[i] += r2[i] + lrl[i];
        }
        out
    };

    let mut rho = DensityMatrix::pure(&product_vector(n, pattern)?).data;
    let h_max = config.dt / 10.0;
    let mut t = 0.0;
    let mut traj = OracleTrajectory {
        times: Vec::with_capacity(t_grid.len()),
        site_densities: Vec::with_capacity(t_grid.len()),
        trace: Vec::with_capacity(t_grid.len()),
        purity: Vec::with_capacity(t_grid.len()),
    };
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / h_max).ceil().max(1.0) as usize;
            let hs = span / steps as f64;
            for _ in 0..steps {
                rho = rk4(&rho, hs, &rhs);
            }
            t = target;
        }
        let dm = DensityMatrix { dim, data: rho.clone() };
        traj.times.push(target);
        traj.site_densities.push((1..=n).map(|s| dm.site_density(n, s)).collect());
        traj.trace.push(dm.trace().re);
        traj.purity.push(dm.purity());
    }
    Ok(traj)
}

fn rk4(y: &[C64], h: f64, f: &impl Fn(&[C64]) -> Vec<C64>) -> Vec<C64> {
    let k1 = f(y);
    let y2: Vec<C64> = y.iter().zip(&k1).map(|(a, b)| a + b * (0.5 * h)).collect();
    let k2 = f(&y2);
    let y3: Vec<C64> = y.iter().zip(&k2).map(|(a, b)| a + b * (0.5 * h)).collect();
    let k3 = f(&y3);
    let y4: Vec<C64> = y.iter().zip(&k3).map(|(a, b)| a + b * h).collect();
    let k4 = f(&y4);
    (0..y.len())
        .map(|i| y[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0))
        .collect()
}

/// Excited-state population of a single emitter with delayed feedback.
///
/// Solved by the method of steps on a uniform grid aligned with multiples of
/// `tau`: RK4 inside each delay interval, with the retarded amplitude taken
/// from cubic Hermite interpolation of the already-computed history.
pub fn single_emitter_delay_run(gamma: f64, tau: f64, phi: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    if !(gamma.is_finite() && gamma >= 0.0 && tau.is_finite() && tau >= 0.0 && phi.is_finite()) {
        return Err(Error::Validation(format!(
            "need finite gamma ≥ 0 and tau ≥ 0, got gamma = {gamma}, tau = {tau}"
        )));
    }
    let t_end = t_grid.iter().copied().fold(0.0, f64::max);
    let phase = C64::from_polar(1.0, phi);
    if tau == 0.0 {
        let rate = (phase - 1.0) * gamma;
        return Ok(t_grid.iter().map(|&t| (rate * t).exp().norm_sqr()).collect());
    }
    if tau >= t_end || gamma == 0.0 {
        return Ok(t_grid.iter().map(|&t| (-gamma * t).exp()).collect());
    }
    let target_h = (0.002 / gamma).min(tau / 4.0);
    let per_tau = (tau / target_h).ceil() as usize;
    let h = tau / per_tau as f64;
    let nodes = (t_end / h).ceil() as usize + 1;

    // value, right derivative (for the step that starts here) and left
    // derivative (for the step that ends here) at every node
    let mut c = vec![C64::new(1.0, 0.0); nodes + 1];
    let mut d_right = vec![C64::new(0.0, 0.0); nodes + 1];
    let mut d_left = vec![C64::new(0.0, 0.0); nodes + 1];
    let hermite = |c: &[C64], dr: &[C64], dl: &[C64], j: usize, s: f64| -> C64 {
        let (h00, h10, h01, h11) = (
            2.0 * s * s * s - 3.0 * s * s + 1.0,
            s * s * s - 2.0 * s * s + s,
            -2.0 * s * s * s + 3.0 * s * s,
            s * s * s - s * s,
        );
        c[j] * h00 + dr[j] * (h10 * h) + c[j + 1] * h01 + dl[j + 1] * (h11 * h)
    };
    for i in 0..nodes {
        // the step [t_i, t_i + h] lies in delay interval m
        let m = i / per_tau;
        let f = |y: C64, retarded: C64| -> C64 {
            if m == 0 {
                y * (-0.5 * gamma)
            } else {
                y * (-gamma) + retarded * phase * gamma
            }
        };
        let (r0, rmid, r1) = if m == 0 {
            (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0))
        } else {
            let j = i - per_tau;
            (c[j], hermite(&c, &d_right, &d_left, j, 0.5), c[j + 1])
        };
        let y = c[i];
        let k1 = f(y, r0);
        let k2 = f(y + k1 * (0.5 * h), rmid);
        let k3 = f(y + k2 * (0.5 * h), rmid);
        let k4 = f(y + k3 * h, r1);
        c[i + 1] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        d_right[i] = k1;
        d_left[i + 1] = f(c[i + 1], r1);
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            let x = t / h;
            let j = (x.floor() as usize).min(nodes - 1);
            hermite(&c, &d_right, &d_left, j, x - j as f64).norm_sqr()
        })
        .collect())
}

/// Dense excited-state projector of one chain site, for tests.
pub fn site_projector(n_sites: usize, n: usize) -> ComplexTensor {
    embed(&excited_projector(), n_sites, n)
}
