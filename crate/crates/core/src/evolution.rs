//! Time stepping.
//!
//! Train layout at the start of every step: chain sites `s_1..s_N` at
//! positions `0..N−1`, then the bins still inside the feedback loop, newest
//! first. The orthogonality centre is parked at position 0.
//!
//! Step `k`:
//! 1. forward half sweep of chain bond gates, centre ends on `s_N`;
//! 2. a vacuum bin `b_k` is inserted right after `s_N`;
//! 3. with feedback on and `k ≥ l`, bin `b_{k−l}` is swapped down next to
//!    `b_k`, the three-site feedback gate acts on `(s_N, b_k, b_{k−l})`, the
//!    detector reads `b_{k−l}`, and that bin is swapped to the left end and
//!    retired; otherwise the emission gate acts on `(s_N, b_k)`, and without
//!    feedback `b_k` is read and retired at once;
//! 4. backward half sweep, centre ends on `s_1`.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{excited_projector, excited_state, ground_state, vacuum, GateSet, SimulationConfig};
use crate::mps::{Mps, SiteLabel, Truncation};

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Trajectory {
    pub n_sites: usize,
    pub dt: f64,
    pub delay_steps: usize,
    pub initial_excitations: usize,
    pub times: Vec<f64>,
    pub site_densities: Vec<Vec<f64>>,
    /// Photons registered by the detector during each step.
    pub detector_increments: Vec<f64>,
    /// `I(t)`: registered photons divided by the initial excitation count
    /// (raw count when the initial state has none).
    pub detector_cumulative: Vec<f64>,
    pub chain_total: Vec<f64>,
    /// Photons in bins emitted but not yet read by the detector.
    pub loop_occupation: Vec<f64>,
    /// `1 − ⟨ψ|ψ⟩`.
    pub norm_deficit: Vec<f64>,
    /// Accumulated truncation weight.
    pub discarded_weight: Vec<f64>,
    pub bond_dims: Vec<usize>,
    pub max_bond_seen: usize,
}

impl Trajectory {
    fn new(config: &SimulationConfig, initial_excitations: usize) -> Self {
        Self {
            n_sites: config.n_sites,
            dt: config.dt,
            delay_steps: config.delay_steps(),
            initial_excitations,
            times: Vec::new(),
            site_densities: Vec::new(),
            detector_increments: Vec::new(),
            detector_cumulative: Vec::new(),
            chain_total: Vec::new(),
            loop_occupation: Vec::new(),
            norm_deficit: Vec::new(),
            discarded_weight: Vec::new(),
            bond_dims: Vec::new(),
            max_bond_seen: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Density of chain site `n` (1-based) over time.
    pub fn site_series(&self, n: usize) -> Vec<f64> {
        self.site_densities.iter().map(|row| row[n - 1]).collect()
    }

    /// Registered photons so far, unnormalised.
    pub fn detector_count(&self) -> f64 {
        self.detector_increments.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_sites).map(|n| format!("n{n}")));
        header.extend(
            ["detector_inc", "detector_cum", "chain_total", "norm_deficit", "max_bond"]
                .iter()
                .map(|s| s.to_string()),
        );
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.site_densities[i].iter().map(|x| x.to_string()));
            row.push(self.detector_increments[i].to_string());
            row.push(self.detector_cumulative[i].to_string());
            row.push(self.chain_total[i].to_string());
            row.push(self.norm_deficit[i].to_string());
            row.push(self.bond_dims[i].to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Chain in the given 1-based excitation pattern, no bins yet.
pub fn initial_state(config: &SimulationConfig, pattern: &[usize]) -> Result<Mps> {
    let n = config.n_sites;
    let mut excited = vec![false; n];
    for &site in pattern {
        if site == 0 || site > n {
            return Err(Error::Validation(format!("site {site} outside 1..={n}")));
        }
        if std::mem::replace(&mut excited[site - 1], true) {
            return Err(Error::Validation(format!("site {site} listed twice")));
        }
    }
    let labels = (1..=n).map(SiteLabel::spin).collect();
    let states: Vec<_> = excited
        .iter()
        .map(|&e| if e { excited_state() } else { ground_state() })
        .collect();
    Mps::from_product_state(labels, &states)
}

pub struct Simulation {
    config: SimulationConfig,
    gates: GateSet,
    trunc: Truncation,
    mps: Mps,
    step: usize,
    delay: usize,
    /// Occupations of the bins inside the loop, oldest first.
    in_loop: VecDeque<f64>,
    registered: f64,
    trajectory: Trajectory,
}

impl Simulation {
    pub fn new(config: &SimulationConfig, pattern: &[usize]) -> Result<Self> {
        config.validate()?;
        let gates = GateSet::build(config)?;
        let mps = initial_state(config, pattern)?;
        Ok(Self {
            trunc: Truncation { cutoff: config.svd_cutoff, max_bond: config.max_bond },
            gates,
            mps,
            step: 0,
            delay: config.delay_steps(),
            in_loop: VecDeque::new(),
            registered: 0.0,
            trajectory: Trajectory::new(config, pattern.len()),
            config: config.clone(),
        })
    }

    pub fn state(&self) -> &Mps {
        &self.mps
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.n_steps
    }

    /// Advances by one time step and records observables.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::Usage(format!("all {} steps already taken", self.config.n_steps)));
        }
        if self.mps.center() != 0 {
            return Err(Error::Gauge(format!(
                "step {} expects the centre parked at 0, found {}",
                self.step,
                self.mps.center()
            )));
        }
        let n = self.config.n_sites;
        let k = self.step;
        let number = self.gates.bin_ops.number.clone();

        for i in 0..n - 1 {
            self.mps.apply_gate(&self.gates.chain_bond_gates[i], &[i, i + 1], self.trunc, i + 1)?;
        }
        self.mps.insert_product_site(n, SiteLabel::bin(k), &vacuum(self.config.bin_dim))?;

        let increment;
        if let (Some(gate), true) = (&self.gates.feedback_gate, k >= self.delay) {
            let l = self.delay;
            debug_assert_eq!(self.mps.labels()[n + l], SiteLabel::bin(k - l));
            self.mps.move_center(n + l)?;
            for p in (n + 2..=n + l).rev() {
                self.mps.swap_adjacent(p - 1, self.trunc)?;
            }
            self.mps.apply_gate(gate, &[n - 1, n, n + 1], self.trunc, n + 1)?;
            increment = self.mps.expect_local(&number, n + 1)?.re;
            let fresh = self.mps.expect_local(&number, n)?.re;
            self.in_loop.pop_front();
            self.in_loop.push_back(fresh);
            self.retire_from(n + 1)?;
        } else {
            self.mps.apply_gate(&self.gates.emission_gate, &[n - 1, n], self.trunc, n)?;
            let fresh = self.mps.expect_local(&number, n)?.re;
            if self.config.feedback_enabled {
                increment = 0.0;
                self.in_loop.push_back(fresh);
            } else {
                increment = fresh;
                self.retire_from(n)?;
            }
        }

        self.mps.move_center(n - 1)?;
        for i in (0..n - 1).rev() {
            self.mps.apply_gate(&self.gates.chain_bond_gates[i], &[i, i + 1], self.trunc, i)?;
        }
        self.mps.move_center(0)?;

        self.step += 1;
        self.registered += increment;
        self.record(increment)
    }

    /// Swaps the bin at `pos` (holding the centre) to the left end and drops it.
    fn retire_from(&mut self, pos: usize) -> Result<()> {
        debug_assert_eq!(self.mps.center(), pos);
        for p in (1..=pos).rev() {
            self.mps.swap_adjacent(p - 1, self.trunc)?;
        }
        self.mps.move_center(1)?;
        self.mps.retire_leftmost()?;
        Ok(())
    }

    fn record(&mut self, increment: f64) -> Result<()> {
        let n = self.config.n_sites;
        let proj = excited_projector();
        let mut densities = Vec::with_capacity(n);
        for i in 0..n {
            densities.push(self.mps.expect_local(&proj, i)?.re);
        }
        if densities.iter().any(|x| !x.is_finite()) || !increment.is_finite() {
            return Err(Error::Numeric(format!("non-finite observable at step {}", self.step)));
        }
        let t = &mut self.trajectory;
        let scale = t.initial_excitations.max(1) as f64;
        t.times.push(self.step as f64 * self.config.dt);
        t.chain_total.push(densities.iter().sum());
        t.site_densities.push(densities);
        t.detector_increments.push(increment);
        t.detector_cumulative.push(self.registered / scale);
        t.loop_occupation.push(self.in_loop.iter().sum());
        t.norm_deficit.push(1.0 - self.mps.norm_squared());
        t.discarded_weight.push(self.mps.discarded_weight());
        t.bond_dims.push(self.mps.max_bond());
        t.max_bond_seen = self.mps.max_bond_seen();
        Ok(())
    }

    /// Steps until the configured end or until `stop` returns true.
    pub fn run_until(&mut self, mut stop: impl FnMut(&Trajectory) -> bool) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
            if stop(&self.trajectory) {
                break;
            }
        }
        Ok(())
    }
}

/// Runs the full configured number of steps.
pub fn run(config: &SimulationConfig, pattern: &[usize]) -> Result<Trajectory> {
    let mut sim = Simulation::new(config, pattern)?;
    sim.run_until(|_| false)?;
    Ok(sim.into_trajectory())
}
