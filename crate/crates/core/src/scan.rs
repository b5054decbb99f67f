//! Survival over the feedback phase / delay plane.
//!
//! Every grid point is an independent feedback run started from one chain
//! excitation; survival is `1 − I(T)`. Points are handed out from a shared
//! counter to a fixed pool of threads and written back by grid index, so the
//! result does not depend on scheduling.
//!
//! Trapping lines are found column by column (fixed delay) as circular peaks
//! of the survival that pass both an absolute level and a prominence test.
//! Two lines crossing show up as two peaks in one column collapsing into a
//! single peak in the next; the crossing is placed at the first maximum of
//! survival along the merged ridge.

use std::f64::consts::TAU as TWO_PI;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::Simulation;
use crate::model::SimulationConfig;

/// How long each grid point is integrated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationTime {
    /// `T = max(10/Γ, 8τ)`.
    Auto,
    /// Same `T` for every point.
    Fixed(f64),
}

impl IntegrationTime {
    pub fn resolve(&self, gamma: f64, tau: f64) -> f64 {
        match *self {
            IntegrationTime::Auto => (10.0 / gamma).max(8.0 * tau),
            IntegrationTime::Fixed(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub workers: usize,
    /// Initially excited sites, 1-based; `None` means the last site.
    pub pattern: Option<Vec<usize>>,
    pub integration_time: IntegrationTime,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            pattern: None,
            integration_time: IntegrationTime::Auto,
        }
    }
}

impl ScanOptions {
    fn pattern_for(&self, config: &SimulationConfig) -> Vec<usize> {
        self.pattern.clone().unwrap_or_else(|| vec![config.n_sites])
    }
}

/// Peak acceptance for trapping lines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakCriteria {
    /// Minimum survival at the peak.
    pub threshold: f64,
    /// Minimum height above the higher of the two saddles towards taller peaks.
    pub prominence: f64,
}

impl Default for PeakCriteria {
    fn default() -> Self {
        Self { threshold: 0.02, prominence: 0.02 }
    }
}

/// `n` equally spaced phases in `[0, 2π)`, starting at 0.
pub fn uniform_phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| TWO_PI * i as f64 / n as f64).collect()
}

/// Runs `f(0..n)` on a pool of `workers` threads; results come back in index order.
pub fn parallel_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let workers = workers.clamp(1, n.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                slots.lock().unwrap()[i] = Some(value);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|x| x.expect("every index visited")).collect()
}

/// Feedback configuration for one grid point.
pub fn point_config(base: &SimulationConfig, phi: f64, tau: f64, horizon: f64) -> SimulationConfig {
    SimulationConfig {
        feedback_enabled: true,
        feedback_phase: phi,
        delay_tau: tau,
        n_steps: (horizon / base.dt - 1e-9).ceil().max(1.0) as usize,
        ..base.clone()
    }
}

/// `1 − I(T)` for one run.
pub fn survival(config: &SimulationConfig, pattern: &[usize]) -> Result<f64> {
    config.validate()?;
    let mut sim = Simulation::new(config, pattern)?;
    sim.run_until(|_| false)?;
    let tr = sim.trajectory();
    Ok(1.0 - tr.detector_cumulative.last().copied().unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFailure {
    pub tau_index: usize,
    pub phi_index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityMap {
    pub phi_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// `survival[i_tau][i_phi]`; NaN where the run failed.
    pub survival: Vec<Vec<f64>>,
    /// Integration time used for each delay.
    pub integration_times: Vec<f64>,
    pub pattern: Vec<usize>,
    pub failures: Vec<PointFailure>,
}

fn check_increasing(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Validation(format!("{name} grid is empty")));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!("{name} grid must be finite and strictly increasing")));
    }
    Ok(())
}

/// Checks that `tau` is a positive whole number of steps `dt`.
pub fn check_delay(tau: f64, dt: f64) -> Result<usize> {
    let steps = (tau / dt).round();
    if steps < 1.0 || ((tau / dt) - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::Validation(format!("delay {tau} is not a positive multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

pub fn stability_map(
    base: &SimulationConfig,
    phi_grid: &[f64],
    tau_grid: &[f64],
    options: &ScanOptions,
) -> Result<StabilityMap> {
    check_increasing("phi", phi_grid)?;
    check_increasing("tau", tau_grid)?;
    if phi_grid[0] < 0.0 || *phi_grid.last().unwrap() >= TWO_PI {
        return Err(Error::Validation("phi grid must lie in [0, 2π)".into()));
    }
    for &tau in tau_grid {
        check_delay(tau, base.dt)?;
    }
    let pattern = options.pattern_for(base);
    let integration_times: Vec<f64> =
        tau_grid.iter().map(|&tau| options.integration_time.resolve(base.decay_gamma, tau)).collect();
    let np = phi_grid.len();
    let results = parallel_map(np * tau_grid.len(), options.workers, |i| {
        let (it, ip) = (i / np, i % np);
        let cfg = point_config(base, phi_grid[ip], tau_grid[it], integration_times[it]);
        survival(&cfg, &pattern)
    });
    let mut survival_grid = vec![vec![f64::NAN; np]; tau_grid.len()];
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (it, ip) = (i / np, i % np);
        match r {
            Ok(s) => survival_grid[it][ip] = s,
            Err(e) => {
                log::warn!("scan point tau = {}, phi = {} failed: {e}", tau_grid[it], phi_grid[ip]);
                failures.push(PointFailure { tau_index: it, phi_index: ip, message: e.to_string() })
            }
        }
    }
    Ok(StabilityMap {
        phi_grid: phi_grid.to_vec(),
        tau_grid: tau_grid.to_vec(),
        survival: survival_grid,
        integration_times,
        pattern,
        failures,
    })
}

impl StabilityMap {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "phi,tau,survival")?;
        for (it, row) in self.survival.iter().enumerate() {
            for (ip, s) in row.iter().enumerate() {
                writeln!(w, "{},{},{}", self.phi_grid[ip], self.tau_grid[it], s)?;
            }
        }
        Ok(())
    }
}

/// One accepted survival peak along the phase axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub value: f64,
    pub prominence: f64,
    /// Contiguous cells at or above the threshold around the peak.
    pub width_cells: usize,
}

fn circ(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

fn circular_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(n - d)
}

/// Circular local maxima of `row` passing `criteria`. A flat top is
/// reported once, at its last cell. NaN cells never qualify.
pub fn circular_peaks(row: &[f64], criteria: &PeakCriteria) -> Vec<Peak> {
    let n = row.len();
    if n < 3 {
        return Vec::new();
    }
    let val = |i: isize| {
        let v = row[circ(i, n)];
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let global_min = (0..n as isize).map(val).fold(f64::INFINITY, f64::min);
    let mut peaks = Vec::new();
    for i in 0..n as isize {
        let v = val(i);
        if !(v >= val(i - 1) && v > val(i + 1)) || v < criteria.threshold {
            continue;
        }
        // walk both ways to the first strictly higher cell
        let mut saddle = f64::NEG_INFINITY;
        let mut unbounded = true;
        for dir in [-1isize, 1] {
            let mut lowest = v;
            for step in 1..n as isize {
                let x = val(i + dir * step);
                if x > v {
                    saddle = saddle.max(lowest);
                    unbounded = false;
                    break;
                }
                lowest = lowest.min(x);
            }
        }
        let prominence = if unbounded { v - global_min } else { v - saddle };
        if prominence < criteria.prominence {
            continue;
        }
        let mut width = 1;
        for dir in [-1isize, 1] {
            for step in 1..n as isize {
                if val(i + dir * step) >= criteria.threshold && width < n {
                    width += 1;
                } else {
                    break;
                }
            }
        }
        peaks.push(Peak { index: circ(i, n), value: v, prominence, width_cells: width.min(n) });
    }
    peaks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub tau: f64,
    pub phi_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub count: usize,
    pub warnings: Vec<String>,
}

/// Counts the trapping phases in one survival row.
pub fn count_row(tau: f64, phi_grid: &[f64], row: &[f64], criteria: &PeakCriteria) -> PhaseCount {
    let peaks = circular_peaks(row, criteria);
    let warnings = peaks
        .iter()
        .filter(|p| p.width_cells < 2)
        .map(|p| {
            format!(
                "trapping interval at phi = {:.4} spans fewer than 2 grid cells; phase grid too coarse",
                phi_grid[p.index]
            )
        })
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }
    PhaseCount {
        tau,
        phi_grid: phi_grid.to_vec(),
        survival: row.to_vec(),
        count: peaks.len(),
        peaks,
        warnings,
    }
}

/// Number of distinct phases in `[0, 2π)` that trap population at delay `tau`.
pub fn count_trapping_phases(
    base: &SimulationConfig,
    tau: f64,
    phi_count: usize,
    criteria: &PeakCriteria,
    options: &ScanOptions,
) -> Result<PhaseCount> {
    if phi_count < 3 {
        return Err(Error::Validation(format!("need at least 3 phase points, got {phi_count}")));
    }
    let phi_grid = uniform_phase_grid(phi_count);
    let map = stability_map(base, &phi_grid, &[tau], options)?;
    if let Some(f) = map.failures.first() {
        return Err(Error::Numeric(format!(
            "run at phi = {} failed: {}",
            phi_grid[f.phi_index], f.message
        )));
    }
    Ok(count_row(tau, &phi_grid, &map.survival[0], criteria))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyPoint {
    pub phi: f64,
    pub tau: f64,
    pub survival: f64,
    pub phi_index: usize,
    pub tau_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeReport {
    /// Accepted peak indices per delay column.
    pub column_peaks: Vec<Vec<usize>>,
    pub points: Vec<DegeneracyPoint>,
    pub merge_radius: usize,
    pub criteria: PeakCriteria,
}

/// Default linking radius, in phase cells, for [`find_degeneracy_points`].
pub const DEFAULT_MERGE_RADIUS: usize = 2;

/// Crossings of trapping lines in `map`.
///
/// Peaks in neighbouring columns within `2·merge_radius` cells are treated as
/// the same line. A merge is a peak whose neighbourhood held two peaks in the
/// previous column but holds only itself now (a split is the mirror image).
/// From a merge the single ridge is followed forward, from a split
/// backward, and the first survival maximum along it is a candidate; a ridge
/// that only falls from the highest incoming line yields nothing. Candidates
/// within `merge_radius` cells of each other collapse onto the tallest.
pub fn find_degeneracy_points(map: &StabilityMap, criteria: &PeakCriteria, merge_radius: usize) -> RidgeReport {
    let np = map.phi_grid.len();
    let nt = map.tau_grid.len();
    let link = 2 * merge_radius.max(1);
    let columns: Vec<Vec<usize>> =
        map.survival.iter().map(|row| circular_peaks(row, criteria).into_iter().map(|p| p.index).collect()).collect();
    let near = |c: usize, q: usize| -> Vec<usize> {
        columns[c].iter().copied().filter(|&p| circular_distance(p, q, np) <= link).collect()
    };
    let value = |c: usize, q: usize| map.survival[c][q];

    // nearest peak in the neighbouring column if it is the only one nearby
    let step = |c: usize, q: usize, forward: bool| -> Option<usize> {
        let next = if forward { c.checked_add(1).filter(|&x| x < nt)? } else { c.checked_sub(1)? };
        let cand = near(next, q);
        (cand.len() == 1).then(|| cand[0])
    };

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for c in 0..nt {
        for &q in &columns[c] {
            if near(c, q).len() != 1 {
                continue;
            }
            for forward in [true, false] {
                let prev = if forward { c.checked_sub(1) } else { Some(c + 1).filter(|&x| x < nt) };
                let Some(prev) = prev else { continue };
                let incoming = near(prev, q);
                if incoming.len() < 2 {
                    continue;
                }
                let start = incoming.iter().map(|&p| value(prev, p)).fold(f64::NEG_INFINITY, f64::max);
                let (mut cc, mut qq) = (c, q);
                let mut best = value(c, q);
                if best < start {
                    continue;
                }
                loop {
                    match step(cc, qq, forward) {
                        Some(nq) => {
                            let nc = if forward { cc + 1 } else { cc - 1 };
                            let v = value(nc, nq);
                            if v < best {
                                break;
                            }
                            best = v;
                            cc = nc;
                            qq = nq;
                        }
                        None => break,
                    }
                }
                candidates.push((cc, qq));
            }
        }
    }

    // collapse nearby candidates onto the tallest
    candidates.sort_by(|a, b| value(b.0, b.1).total_cmp(&value(a.0, a.1)).then(a.cmp(b)));
    let mut points: Vec<DegeneracyPoint> = Vec::new();
    for (c, q) in candidates {
        let close = points.iter().any(|p| {
            p.tau_index.abs_diff(c) <= merge_radius && circular_distance(p.phi_index, q, np) <= merge_radius
        });
        if !close {
            points.push(DegeneracyPoint {
                phi: map.phi_grid[q],
                tau: map.tau_grid[c],
                survival: value(c, q),
                phi_index: q,
                tau_index: c,
            });
        }
    }
    points.sort_by(|a, b| (a.tau_index, a.phi_index).cmp(&(b.tau_index, b.phi_index)));
    RidgeReport { column_peaks: columns, points, merge_radius, criteria: *criteria }
}

/// Local search around a grid crossing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Delay steps per run; `dt = τ / delay_steps`.
    pub delay_steps: usize,
    pub tau_span: f64,
    pub phi_span: f64,
    /// Alternating phase/delay golden-section passes.
    pub passes: usize,
    /// Evaluations per golden-section search.
    pub evaluations: usize,
    pub integration_time: f64,
}

/// Maximises survival around `(phi, tau)` by alternating golden-section
/// searches in phase and delay. Each run uses `dt = τ / delay_steps`, so the
/// delay is always a whole number of steps.
pub fn refine_degeneracy_point(
    base: &SimulationConfig,
    phi: f64,
    tau: f64,
    refine: &RefineOptions,
    options: &ScanOptions,
) -> Result<(f64, f64)> {
    if refine.delay_steps == 0 || refine.evaluations < 3 {
        return Err(Error::Validation("refinement needs delay_steps ≥ 1 and evaluations ≥ 3".into()));
    }
    let pattern = options.pattern_for(base);
    let objective = |phi: f64, tau: f64| -> Result<f64> {
        let dt = tau / refine.delay_steps as f64;
        let cfg = point_config(&SimulationConfig { dt, ..base.clone() }, phi, tau, refine.integration_time);
        survival(&cfg, &pattern)
    };
    let golden = |lo: f64, hi: f64, f: &dyn Fn(f64) -> Result<f64>| -> Result<f64> {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let (mut f1, mut f2) = (f(x1)?, f(x2)?);
        for _ in 2..refine.evaluations {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = f(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = f(x2)?;
            }
        }
        Ok(if f1 >= f2 { x1 } else { x2 })
    };
    let (mut p, mut t) = (phi, tau);
    for _ in 0..refine.passes {
        p = golden(p - refine.phi_span, p + refine.phi_span, &|x| objective(x, t))?;
        t = golden((t - refine.tau_span).max(1e-9), t + refine.tau_span, &|x| objective(p, x))?;
    }
    Ok((p.rem_euclid(TWO_PI), t))
}

/// JSON sidecar for an exported map.
#[derive(Clone, Debug, Serialize)]
pub struct MapSidecar<'a> {
    pub phi_grid: &'a [f64],
    pub tau_grid: &'a [f64],
    pub integration_times: &'a [f64],
    pub pattern: &'a [usize],
    pub criteria: PeakCriteria,
    pub merge_radius: usize,
    pub column_peaks: &'a [Vec<usize>],
    pub degeneracy_points: &'a [DegeneracyPoint],
    pub trapping_counts: Vec<(f64, usize)>,
    pub failures: &'a [PointFailure],
}

impl StabilityMap {
    pub fn sidecar<'a>(&'a self, ridges: &'a RidgeReport) -> MapSidecar<'a> {
        MapSidecar {
            phi_grid: &self.phi_grid,
            tau_grid: &self.tau_grid,
            integration_times: &self.integration_times,
            pattern: &self.pattern,
            criteria: ridges.criteria,
            merge_radius: ridges.merge_radius,
            column_peaks: &ridges.column_peaks,
            degeneracy_points: &ridges.points,
            trapping_counts: self.tau_grid.iter().zip(&ridges.column_peaks).map(|(&t, p)| (t, p.len())).collect(),
            failures: &self.failures,
        }
    }
}
