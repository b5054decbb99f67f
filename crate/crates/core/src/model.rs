//! Physical model: configuration, local operators and the per-step gates.
//!
//! Spin basis: index 0 is the excited state, index 1 the ground state, so
//! `σ⁺ = |0⟩⟨1|` and `σ⁺σ⁻ = diag(1, 0)`. Time-bin basis: Fock states
//! `0..bin_dim`, index 0 the vacuum. Multi-site gates index their sites
//! row-major with the leftmost (spin) site most significant.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matrix_exponential, ComplexTensor};

const DELAY_RATIO_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_sites: usize,
    pub coupling_j: f64,
    pub decay_gamma: f64,
    #[serde(default)]
    pub delay_tau: f64,
    #[serde(default)]
    pub feedback_phase: f64,
    pub dt: f64,
    pub n_steps: usize,
    #[serde(default = "default_bin_dim")]
    pub bin_dim: usize,
    #[serde(default = "default_cutoff")]
    pub svd_cutoff: f64,
    #[serde(default = "default_max_bond")]
    pub max_bond: usize,
    #[serde(default)]
    pub feedback_enabled: bool,
}

fn default_bin_dim() -> usize {
    2
}

fn default_cutoff() -> f64 {
    1e-10
}

fn default_max_bond() -> usize {
    64
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_sites: 4,
            coupling_j: 0.1,
            decay_gamma: 0.24,
            delay_tau: 0.0,
            feedback_phase: 0.0,
            dt: 0.04,
            n_steps: 1000,
            bin_dim: default_bin_dim(),
            svd_cutoff: default_cutoff(),
            max_bond: default_max_bond(),
            feedback_enabled: false,
        }
    }
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Config { line, message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Validation(msg) => {
                let key = msg.split_whitespace().next().unwrap_or("");
                Error::Config { line: key_line(text, key), message: msg }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Checks every field. Validation messages start with the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.n_sites == 0 {
            return bad("n_sites must be at least 1".into());
        }
        if !self.coupling_j.is_finite() {
            return bad("coupling_j must be finite".into());
        }
        if !(self.decay_gamma.is_finite() && self.decay_gamma >= 0.0) {
            return bad(format!("decay_gamma must be finite and ≥ 0, got {}", self.decay_gamma));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.delay_tau.is_finite() && self.delay_tau >= 0.0) {
            return bad(format!("delay_tau must be finite and ≥ 0, got {}", self.delay_tau));
        }
        if !self.feedback_phase.is_finite() {
            return bad("feedback_phase must be finite".into());
        }
        if self.bin_dim < 2 {
            return bad(format!("bin_dim must be at least 2, got {}", self.bin_dim));
        }
        if !(self.svd_cutoff.is_finite() && self.svd_cutoff >= 0.0) {
            return bad(format!("svd_cutoff must be ≥ 0, got {}", self.svd_cutoff));
        }
        if self.max_bond == 0 {
            return bad("max_bond must be at least 1".into());
        }
        let gdt = self.decay_gamma * self.dt;
        if gdt > 0.5 {
            return bad(format!("dt gives decay_gamma·dt = {gdt:.3}, above the hard limit 0.5"));
        }
        if gdt > 0.1 {
            log::warn!("decay_gamma·dt = {gdt:.3} exceeds 0.1; expect visible time-step error");
        }
        if self.feedback_enabled {
            let ratio = self.delay_tau / self.dt;
            let l = ratio.round();
            if l < 1.0 {
                return bad(format!(
                    "delay_tau = {} is shorter than one time step; feedback needs delay_tau ≥ dt",
                    self.delay_tau
                ));
            }
            if (ratio - l).abs() > DELAY_RATIO_TOL * l.max(1.0) {
                return bad(format!(
                    "delay_tau = {} is not an integer multiple of dt = {} (ratio {ratio})",
                    self.delay_tau, self.dt
                ));
            }
        }
        Ok(())
    }

    /// Delay in time steps, `l = τ/Δt`. Zero when feedback is disabled.
    pub fn delay_steps(&self) -> usize {
        if self.feedback_enabled {
            (self.delay_tau / self.dt).round() as usize
        } else {
            0
        }
    }

    pub fn total_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Emission angle per step, chosen so a lone excited site keeps
    /// exactly `e^{−ΓΔt}` of its population after one emission gate.
    pub fn emission_angle(&self) -> f64 {
        (-0.5 * self.decay_gamma * self.dt).exp().acos()
    }
}

/// Line (1-based) of the first `key = ...` assignment, or 0 if absent.
fn key_line(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
        .unwrap_or(0)
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn sigma_plus() -> ComplexTensor {
    ComplexTensor::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap()
}

pub fn sigma_minus() -> ComplexTensor {
    ComplexTensor::from_real(2, 2, &[0.0, 0.0, 1.0, 0.0]).unwrap()
}

pub fn sigma_x() -> ComplexTensor {
    ComplexTensor::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
}

pub fn sigma_y() -> ComplexTensor {
    let i = C64::new(0.0, 1.0);
    ComplexTensor::new(vec![2, 2], vec![c(0.0), -i, i, c(0.0)]).unwrap()
}

pub fn sigma_z() -> ComplexTensor {
    ComplexTensor::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
}

/// `σ⁺σ⁻`, the excited-state projector.
pub fn excited_projector() -> ComplexTensor {
    ComplexTensor::from_real(2, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap()
}

pub fn excited_state() -> Vec<C64> {
    vec![c(1.0), c(0.0)]
}

pub fn ground_state() -> Vec<C64> {
    vec![c(0.0), c(1.0)]
}

pub fn vacuum(bin_dim: usize) -> Vec<C64> {
    let mut v = vec![c(0.0); bin_dim];
    v[0] = c(1.0);
    v
}

/// Time-bin noise increments in the truncated Fock basis.
#[derive(Clone, Debug)]
pub struct BinOperators {
    /// `ΔB`, with `⟨i−1|ΔB|i⟩ = √(iΔt)`.
    pub annihilate: ComplexTensor,
    pub create: ComplexTensor,
    /// `ΔB†ΔB/Δt = diag(0, 1, …, d_b − 1)`.
    pub number: ComplexTensor,
    pub dt: f64,
}

pub fn build_bin_operators(dt: f64, bin_dim: usize) -> Result<BinOperators> {
    if bin_dim < 2 {
        return Err(Error::Validation(format!("bin_dim must be at least 2, got {bin_dim}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let mut a = ComplexTensor::zeros(&[bin_dim, bin_dim]);
    for i in 1..bin_dim {
        a.set(&[i - 1, i], c((i as f64 * dt).sqrt()));
    }
    let create = a.adjoint()?;
    let number = create.matmul(&a)?.scale(c(1.0 / dt));
    Ok(BinOperators { annihilate: a, create, number, dt })
}

/// `σ·σ` for one bond.
pub fn heisenberg_bond() -> ComplexTensor {
    let xx = sigma_x().kron(&sigma_x()).unwrap();
    let yy = sigma_y().kron(&sigma_y()).unwrap();
    let zz = sigma_z().kron(&sigma_z()).unwrap();
    xx.add(&yy).unwrap().add(&zz).unwrap()
}

/// One half-step bond gate `exp(−i(Δt/2)J σ·σ)` per chain bond.
pub fn build_chain_gates(config: &SimulationConfig) -> Result<Vec<ComplexTensor>> {
    let g = matrix_exponential(&heisenberg_bond().scale(C64::new(0.0, -0.5 * config.dt * config.coupling_j)))?;
    Ok(vec![g; config.n_sites.saturating_sub(1)])
}

/// `ΔB/√Δt`: the bin ladder operator with unit time normalisation.
fn unit_ladder(ops: &BinOperators) -> ComplexTensor {
    ops.annihilate.scale(c(1.0 / ops.dt.sqrt()))
}

/// `exp(θ(σ⁺⊗b − σ⁻⊗b†))` on (spin, current bin).
pub fn build_emission_gate(config: &SimulationConfig, ops: &BinOperators) -> Result<ComplexTensor> {
    let theta = config.emission_angle();
    let b = unit_ladder(ops);
    let k = sigma_plus()
        .kron(&b)?
        .sub(&sigma_minus().kron(&b.adjoint()?)?)?
        .scale(c(theta));
    matrix_exponential(&k)
}

/// Generator of the feedback gate on (spin, current bin, feedback bin), with
/// an explicit weight on the returning channel.
pub fn feedback_generator(theta: f64, return_weight: C64, ops: &BinOperators) -> Result<ComplexTensor> {
    let b = unit_ladder(ops);
    let id = ComplexTensor::identity(b.rows());
    let channel = b.kron(&id)?.sub(&id.kron(&b)?.scale(return_weight))?;
    let k = sigma_plus()
        .kron(&channel)?
        .sub(&sigma_minus().kron(&channel.adjoint()?)?)?
        .scale(c(theta));
    Ok(k)
}

/// `exp(K)` with `K = √Γ'[σ⁺⊗(ΔB_k − e^{iφ}ΔB_{k−l}) − h.c.]`.
pub fn build_feedback_gate(config: &SimulationConfig, ops: &BinOperators) -> Result<ComplexTensor> {
    let phase = C64::from_polar(1.0, config.feedback_phase);
    matrix_exponential(&feedback_generator(config.emission_angle(), phase, ops)?)
}

#[derive(Clone, Debug)]
pub struct GateSet {
    pub chain_bond_gates: Vec<ComplexTensor>,
    pub emission_gate: ComplexTensor,
    pub feedback_gate: Option<ComplexTensor>,
    pub bin_ops: BinOperators,
}

impl GateSet {
    pub fn build(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let bin_ops = build_bin_operators(config.dt, config.bin_dim)?;
        let feedback_gate = if config.feedback_enabled {
            Some(build_feedback_gate(config, &bin_ops)?)
        } else {
            None
        };
        Ok(Self {
            chain_bond_gates: build_chain_gates(config)?,
            emission_gate: build_emission_gate(config, &bin_ops)?,
            feedback_gate,
            bin_ops,
        })
    }

    /// Largest unitarity defect over all gates.
    pub fn unitarity_defect(&self) -> f64 {
        self.chain_bond_gates
            .iter()
            .chain(std::iter::once(&self.emission_gate))
            .chain(self.feedback_gate.iter())
            .map(|g| g.unitarity_defect().unwrap())
            .fold(0.0, f64::max)
    }
}

/// Reduces a phase to `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    phi.rem_euclid(2.0 * PI)
}
