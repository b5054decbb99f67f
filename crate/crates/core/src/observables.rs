//! Detector signal, steady-state classification and excitation accounting.
//!
//! Classification thresholds are plain numbers with defaults; nothing here
//! guesses when the data cannot support a verdict.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Trajectory;

/// Fraction of `I(end)` that defines the convergence time.
pub const CONVERGENCE_FRACTION: f64 = 0.999;

/// Normalised detector signal `I(t)`.
pub fn detector_signal(trajectory: &Trajectory, initial_excitations: usize) -> Result<Vec<f64>> {
    if initial_excitations == 0 {
        if trajectory.detector_increments.iter().any(|&x| x.abs() > 1e-12) {
            return Err(Error::Accounting(
                "detector registered photons from a state with no excitations".into(),
            ));
        }
        return Ok(vec![0.0; trajectory.len()]);
    }
    let scale = initial_excitations as f64;
    let mut acc = 0.0;
    Ok(trajectory
        .detector_increments
        .iter()
        .map(|&x| {
            acc += x;
            acc / scale
        })
        .collect())
}

/// First time at which `signal ≥ 0.999 · signal(end)`; `None` for an empty or
/// identically zero signal.
pub fn convergence_time(times: &[f64], signal: &[f64]) -> Option<f64> {
    let last = *signal.last()?;
    if last <= 0.0 {
        return None;
    }
    let target = CONVERGENCE_FRACTION * last;
    signal.iter().position(|&x| x >= target).map(|i| times[i])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyState {
    Lost,
    ConstantTrapped,
    OscillatingTrapped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Mean chain total below this counts as lost.
    pub loss: f64,
    /// Peak-to-peak site density above this counts as oscillating.
    pub amplitude: f64,
    /// Largest tolerated relative drop of the oscillation amplitude per period.
    pub decay_per_period: f64,
    /// Largest tolerated relative peak-to-peak of the chain total.
    pub conservation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { loss: 0.01, amplitude: 0.005, decay_per_period: 0.01, conservation: 1e-2 }
    }
}

impl Thresholds {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            loss: self.loss * factor,
            amplitude: self.amplitude * factor,
            decay_per_period: self.decay_per_period * factor,
            conservation: self.conservation * factor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrappingVerdict {
    pub class: SteadyState,
    /// Mean chain total over the window.
    pub trapped_total: f64,
    /// Largest site-density peak-to-peak over the window.
    pub oscillation_amplitude: f64,
    pub oscillation_period: Option<f64>,
    /// Mean relative amplitude drop per period, when oscillating.
    pub amplitude_decay_per_period: Option<f64>,
    /// Peak-to-peak of the chain total over its mean.
    pub chain_total_variation: f64,
    pub window_start: f64,
    pub thresholds: Thresholds,
}

impl TrappingVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serialises")
    }
}

fn peak_to_peak(xs: &[f64]) -> f64 {
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Times of upward zero crossings of `xs − mean(xs)`, linearly interpolated.
pub fn rising_crossings(times: &[f64], xs: &[f64]) -> Vec<f64> {
    let m = mean(xs);
    let mut out = Vec::new();
    for i in 1..xs.len() {
        let (a, b) = (xs[i - 1] - m, xs[i] - m);
        if a < 0.0 && b >= 0.0 {
            let s = a / (a - b);
            out.push(times[i - 1] + s * (times[i] - times[i - 1]));
        }
    }
    out
}

/// Mean spacing of upward zero crossings; needs at least two crossings.
pub fn oscillation_period(times: &[f64], xs: &[f64]) -> Option<f64> {
    let c = rising_crossings(times, xs);
    if c.len() < 2 {
        return None;
    }
    Some((c[c.len() - 1] - c[0]) / (c.len() - 1) as f64)
}

/// Peak-to-peak of `xs` in consecutive whole periods, ending at the last sample.
pub fn per_period_amplitudes(times: &[f64], xs: &[f64], period: f64) -> Vec<f64> {
    let end = match times.last() {
        Some(&t) => t,
        None => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut hi = end;
    loop {
        let lo = hi - period;
        if lo < times[0] {
            break;
        }
        let seg: Vec<f64> = times.iter().zip(xs).filter(|(t, _)| **t > lo && **t <= hi).map(|(_, x)| *x).collect();
        if seg.len() < 4 {
            break;
        }
        out.push(peak_to_peak(&seg));
        hi = lo;
    }
    out.reverse();
    out
}

/// Three-way verdict over the last `window_fraction` of the trajectory.
///
/// The window must hold at least three delay periods (16 samples minimum)
/// and, for an oscillating state, three whole oscillation periods. A
/// chain total that still drifts, or an oscillation that still decays, is
/// reported as insufficient data.
pub fn classify_steady_state(
    trajectory: &Trajectory,
    window_fraction: f64,
    thresholds: &Thresholds,
) -> Result<TrappingVerdict> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Validation(format!("window fraction {window_fraction} outside (0, 1]")));
    }
    let len = trajectory.len();
    let start = len - ((len as f64 * window_fraction).floor() as usize).min(len);
    let times = &trajectory.times[start..];
    let needed = (3 * trajectory.delay_steps).max(16);
    if times.len() < needed {
        return Err(Error::InsufficientData(format!(
            "window holds {} samples, need at least {needed}",
            times.len()
        )));
    }
    let totals = &trajectory.chain_total[start..];
    let trapped_total = mean(totals);
    let chain_total_variation = if trapped_total > 0.0 { peak_to_peak(totals) / trapped_total } else { 0.0 };

    let mut oscillation_amplitude = 0.0;
    let mut widest = 0;
    for n in 0..trajectory.n_sites {
        let series: Vec<f64> = trajectory.site_densities[start..].iter().map(|r| r[n]).collect();
        let a = peak_to_peak(&series);
        if a > oscillation_amplitude {
            oscillation_amplitude = a;
            widest = n;
        }
    }
    let mut verdict = TrappingVerdict {
        class: SteadyState::Lost,
        trapped_total,
        oscillation_amplitude,
        oscillation_period: None,
        amplitude_decay_per_period: None,
        chain_total_variation,
        window_start: times[0],
        thresholds: *thresholds,
    };
    if trapped_total < thresholds.loss {
        return Ok(verdict);
    }
    if chain_total_variation > thresholds.conservation {
        return Err(Error::InsufficientData(format!(
            "chain total still drifts by {chain_total_variation:.3e} (relative) inside the window"
        )));
    }
    if oscillation_amplitude <= thresholds.amplitude {
        verdict.class = SteadyState::ConstantTrapped;
        return Ok(verdict);
    }
    let series: Vec<f64> = trajectory.site_densities[start..].iter().map(|r| r[widest]).collect();
    let period = oscillation_period(times, &series).ok_or_else(|| {
        Error::InsufficientData("densities vary but show fewer than two oscillations in the window".into())
    })?;
    let amps = per_period_amplitudes(times, &series, period);
    if amps.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "window covers {} whole periods of {period:.4}, need 3",
            amps.len()
        )));
    }
    let decay = 1.0 - (amps[amps.len() - 1] / amps[0]).powf(1.0 / (amps.len() - 1) as f64);
    verdict.oscillation_period = Some(period);
    verdict.amplitude_decay_per_period = Some(decay);
    if decay > thresholds.decay_per_period {
        return Err(Error::InsufficientData(format!(
            "oscillation amplitude still decays by {decay:.3e} per period"
        )));
    }
    verdict.class = SteadyState::OscillatingTrapped;
    Ok(verdict)
}

/// Excitation bookkeeping across chain, loop, detector and truncation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerReport {
    pub initial_excitations: usize,
    /// `chain + loop + registered − initial` at every step.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Largest residual explainable by truncation: `initial · norm deficit`
    /// plus a round-off floor.
    pub budget: f64,
    pub flagged: bool,
    /// Largest `|norm deficit − discarded weight|`.
    pub norm_mismatch: f64,
}

/// Round-off allowance per step in the excitation ledger.
const LEDGER_FLOOR_PER_STEP: f64 = 1e-13;

pub fn excitation_ledger(trajectory: &Trajectory) -> LedgerReport {
    let n0 = trajectory.initial_excitations as f64;
    let mut registered = 0.0;
    let mut residuals = Vec::with_capacity(trajectory.len());
    let mut max_residual: f64 = 0.0;
    let mut norm_mismatch: f64 = 0.0;
    let mut worst_deficit: f64 = 0.0;
    for i in 0..trajectory.len() {
        registered += trajectory.detector_increments[i];
        let r = trajectory.chain_total[i] + trajectory.loop_occupation[i] + registered - n0;
        max_residual = max_residual.max(r.abs());
        residuals.push(r);
        norm_mismatch = norm_mismatch.max((trajectory.norm_deficit[i] - trajectory.discarded_weight[i]).abs());
        worst_deficit = worst_deficit.max(trajectory.norm_deficit[i].abs());
    }
    let budget = n0.max(1.0) * worst_deficit + LEDGER_FLOOR_PER_STEP * trajectory.len().max(1) as f64;
    LedgerReport {
        initial_excitations: trajectory.initial_excitations,
        residuals,
        max_residual,
        budget,
        flagged: max_residual > budget,
        norm_mismatch,
    }
}
