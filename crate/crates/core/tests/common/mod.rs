//! Dense state-vector replay of the engine's gate sequence.
//!
//! Every bin that will ever exist gets its own tensor factor from the start,
//! so no swaps, truncations or retirements are needed. Only usable for a
//! handful of sites and steps.

#![allow(dead_code)]

use chainfeed::{ComplexTensor, GateSet, SimulationConfig};
use num_complex::Complex64 as C64;

pub struct DenseRun {
    pub site_densities: Vec<Vec<f64>>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub loop_occupation: Vec<f64>,
    pub norms: Vec<f64>,
}

struct Dense {
    dims: Vec<usize>,
    psi: Vec<C64>,
}

impl Dense {
    fn stride(&self, site: usize) -> usize {
        self.dims[site + 1..].iter().product()
    }

    fn apply(&mut self, gate: &ComplexTensor, sites: &[usize]) {
        let local: Vec<usize> = sites.iter().map(|&s| self.dims[s]).collect();
        let d: usize = local.iter().product();
        assert_eq!(gate.shape(), &[d, d]);
        let strides: Vec<usize> = sites.iter().map(|&s| self.stride(s)).collect();
        let offsets: Vec<usize> = (0..d)
            .map(|mut a| {
                let mut off = 0;
                for j in (0..sites.len()).rev() {
                    off += (a % local[j]) * strides[j];
                    a /= local[j];
                }
                off
            })
            .collect();
        let g = gate.data();
        let mut visited = vec![false; self.psi.len()];
        let mut buf = vec![C64::new(0.0, 0.0); d];
        for base in 0..self.psi.len() {
            // a base index has every gate site at 0
            if visited[base] || sites.iter().zip(&strides).any(|(&s, &st)| (base / st) % self.dims[s] != 0) {
                continue;
            }
            for (a, &off) in offsets.iter().enumerate() {
                buf[a] = self.psi[base + off];
                visited[base + off] = true;
            }
            for (a, &off) in offsets.iter().enumerate() {
                self.psi[base + off] = (0..d).map(|b| g[a * d + b] * buf[b]).sum();
            }
        }
    }

    /// `Σ w(level) |ψ|²` over the level of one site.
    fn weighted(&self, site: usize, w: impl Fn(usize) -> f64) -> f64 {
        let st = self.stride(site);
        self.psi.iter().enumerate().map(|(i, z)| w((i / st) % self.dims[site]) * z.norm_sqr()).sum()
    }
}

/// Applies the engine's per-step gate order to a dense vector and records
/// the same observables the trajectory holds.
pub fn dense_gate_sequence(config: &SimulationConfig, pattern: &[usize]) -> DenseRun {
    let gates = GateSet::build(config).unwrap();
    let n = config.n_sites;
    let steps = config.n_steps;
    let l = config.delay_steps();
    let db = config.bin_dim;
    let mut dims = vec![2; n];
    dims.extend(std::iter::repeat(db).take(steps));
    let total: usize = dims.iter().product();
    assert!(total <= 1 << 20, "dense replay too large: {total}");

    // spin level 0 is the excited state
    let mut index = 0;
    for s in 0..n {
        let level = if pattern.contains(&(s + 1)) { 0 } else { 1 };
        index = index * 2 + level;
    }
    index *= db.pow(steps as u32);
    let mut psi = vec![C64::new(0.0, 0.0); total];
    psi[index] = C64::new(1.0, 0.0);
    let mut st = Dense { dims, psi };

    let scale = pattern.len().max(1) as f64;
    let mut out = DenseRun {
        site_densities: Vec::new(),
        increments: Vec::new(),
        cumulative: Vec::new(),
        loop_occupation: Vec::new(),
        norms: Vec::new(),
    };
    let mut registered = 0.0;
    for k in 0..steps {
        for i in 0..n - 1 {
            st.apply(&gates.chain_bond_gates[i], &[i, i + 1]);
        }
        let bin = |j: usize| n + j;
        let inc = match (&gates.feedback_gate, k >= l) {
            (Some(fb), true) => {
                st.apply(fb, &[n - 1, bin(k), bin(k - l)]);
                st.weighted(bin(k - l), |m| m as f64)
            }
            _ => {
                st.apply(&gates.emission_gate, &[n - 1, bin(k)]);
                if config.feedback_enabled {
                    0.0
                } else {
                    st.weighted(bin(k), |m| m as f64)
                }
            }
        };
        for i in (0..n - 1).rev() {
            st.apply(&gates.chain_bond_gates[i], &[i, i + 1]);
        }
        registered += inc;
        out.site_densities.push((0..n).map(|s| st.weighted(s, |m| if m == 0 { 1.0 } else { 0.0 })).collect());
        out.increments.push(inc);
        out.cumulative.push(registered / scale);
        let in_loop = if config.feedback_enabled { (k + 1).saturating_sub(l)..k + 1 } else { 0..0 };
        out.loop_occupation.push(in_loop.map(|j| st.weighted(bin(j), |m| m as f64)).sum());
        out.norms.push(st.psi.iter().map(|z| z.norm_sqr()).sum());
    }
    out
}

/// Largest difference between an engine trajectory and the dense replay
/// over every recorded observable.
pub fn max_trajectory_gap(traj: &chainfeed::Trajectory, dense: &DenseRun) -> f64 {
    let mut gap: f64 = 0.0;
    for k in 0..traj.len() {
        for (a, b) in traj.site_densities[k].iter().zip(&dense.site_densities[k]) {
            gap = gap.max((a - b).abs());
        }
        gap = gap.max((traj.detector_increments[k] - dense.increments[k]).abs());
        gap = gap.max((traj.detector_cumulative[k] - dense.cumulative[k]).abs());
        gap = gap.max((traj.loop_occupation[k] - dense.loop_occupation[k]).abs());
        gap = gap.max((traj.chain_total[k] - dense.site_densities[k].iter().sum::<f64>()).abs());
        gap = gap.max((1.0 - traj.norm_deficit[k] - dense.norms[k]).abs());
    }
    gap
}
