use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use chainfeed::observables::{
    classify_steady_state, convergence_time, detector_signal, excitation_ledger, Thresholds,
};
use chainfeed::oracles::{lindblad_run, single_emitter_delay_run, MAX_DENSE_SITES};
use chainfeed::scan::{
    check_delay, find_degeneracy_points, stability_map, uniform_phase_grid, IntegrationTime,
    PeakCriteria, ScanOptions, DEFAULT_MERGE_RADIUS,
};
use chainfeed::{run, Error, SimulationConfig, Trajectory};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_GATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "chainfeed",
    version,
    about = "Spin chain with delayed coherent feedback, MPS time evolution"
)]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// Evolve one configuration; writes the trajectory and a steady-state verdict.
    Evolve {
        #[command(flatten)]
        common: Common,
        /// Fraction of the run used for the steady-state verdict.
        #[arg(long, default_value_t = 0.25)]
        window: f64,
    },
    /// Survival map over feedback phase and delay.
    Scan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 32)]
        phi_count: usize,
        /// Comma-separated delays; each must be a multiple of dt.
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        #[arg(long, default_value_t = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))]
        workers: usize,
        /// Fixed integration time in units of 1/Γ; default max(10/Γ, 8τ).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MERGE_RADIUS)]
        merge_radius: usize,
        #[arg(long, default_value_t = PeakCriteria::default().threshold)]
        threshold: f64,
        #[arg(long, default_value_t = PeakCriteria::default().prominence)]
        prominence: f64,
    },
    /// MPS against the matching oracle; exits 4 when the deviation exceeds the gate.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-3)]
        gate: f64,
        /// Single-emitter feedback only: sweep this many phases instead of the configured one.
        #[arg(long)]
        phi_count: Option<usize>,
    },
    /// Oracle trajectory alone.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// 1-based sites excited initially; default the last site.
    #[arg(long, value_delimiter = ',')]
    pattern: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct RunManifest {
    mode: &'static str,
    config_path: PathBuf,
    output_dir: PathBuf,
    /// The engine draws no random numbers; identical inputs give identical data files.
    deterministic: bool,
    tool_version: &'static str,
    started_unix: u64,
    status: &'static str,
    wall_clock_seconds: Option<f64>,
    peak_bond: Option<usize>,
    outputs: Vec<String>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Validation(_) | Error::Usage(_) => EXIT_CONFIG,
            Error::Capacity(_) => EXIT_CAPACITY,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

/// Output directory plus the manifest that describes it.
struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn start(mode: &'static str, common: &Common) -> Result<Self, Failure> {
        fs::create_dir_all(&common.out)?;
        let manifest = RunManifest {
            mode,
            config_path: common.config.clone(),
            output_dir: common.out.clone(),
            deterministic: true,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            status: "running",
            wall_clock_seconds: None,
            peak_bond: None,
            outputs: Vec::new(),
        };
        let run = Run {
            dir: common.out.clone(),
            manifest,
            started: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome {
        let text = serde_json::to_string_pretty(value).expect("report serialises");
        self.manifest.outputs.push(name.to_string());
        fs::write(self.dir.join(name), text + "\n")?;
        Ok(())
    }

    fn finish(&mut self, status: &'static str, peak_bond: Option<usize>) -> Outcome {
        self.manifest.status = status;
        self.manifest.peak_bond = peak_bond;
        self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        self.write_manifest()
    }
}

fn load_config(path: &Path) -> Result<SimulationConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    })?;
    SimulationConfig::from_toml_str(&text).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", path.display(), f.message),
            ..f
        }
    })
}

fn pattern_or_default(common: &Common, config: &SimulationConfig) -> Vec<usize> {
    common
        .pattern
        .clone()
        .unwrap_or_else(|| vec![config.n_sites])
}

#[derive(Serialize)]
struct EvolveSummary {
    initial_excitations: usize,
    detector_signal_final: f64,
    convergence_time: Option<f64>,
    peak_bond: usize,
    total_discarded_weight: f64,
    ledger_max_residual: f64,
    ledger_flagged: bool,
}

#[derive(Serialize)]
struct NoVerdict {
    insufficient_data: String,
}

fn cmd_evolve(common: &Common, window: f64) -> Outcome {
    let config = load_config(&common.config)?;
    let pattern = pattern_or_default(common, &config);
    let mut out = Run::start("evolve", common)?;
    let traj = run(&config, &pattern)?;
    traj.write_csv(out.create("trajectory.csv")?)?;

    let signal = detector_signal(&traj, traj.initial_excitations)?;
    let ledger = excitation_ledger(&traj);
    let summary = EvolveSummary {
        initial_excitations: traj.initial_excitations,
        detector_signal_final: signal.last().copied().unwrap_or(0.0),
        convergence_time: convergence_time(&traj.times, &signal),
        peak_bond: traj.max_bond_seen,
        total_discarded_weight: traj.discarded_weight.last().copied().unwrap_or(0.0),
        ledger_max_residual: ledger.max_residual,
        ledger_flagged: ledger.flagged,
    };
    out.write_json("summary.json", &summary)?;
    match classify_steady_state(&traj, window, &Thresholds::default()) {
        Ok(v) => {
            println!(
                "verdict {}",
                serde_json::to_string(&v.class).expect("class serialises")
            );
            out.manifest.outputs.push("verdict.json".into());
            fs::write(out.dir.join("verdict.json"), v.to_json() + "\n")?;
        }
        Err(Error::InsufficientData(msg)) => {
            println!("verdict insufficient_data: {msg}");
            out.write_json(
                "verdict.json",
                &NoVerdict {
                    insufficient_data: msg,
                },
            )?;
        }
        Err(e) => return Err(e.into()),
    }
    println!(
        "I(T) = {:.6}, T_c = {}, peak bond {}",
        summary.detector_signal_final,
        summary
            .convergence_time
            .map_or("none".into(), |t| format!("{t:.4}")),
        summary.peak_bond
    );
    out.finish("ok", Some(traj.max_bond_seen))
}

#[allow(clippy::too_many_arguments)]
fn cmd_scan(
    common: &Common,
    phi_count: usize,
    taus: &[f64],
    workers: usize,
    horizon: Option<f64>,
    merge_radius: usize,
    criteria: PeakCriteria,
) -> Outcome {
    let config = load_config(&common.config)?;
    if phi_count == 0 {
        return Err(Error::Usage("--phi-count must be at least 1".into()).into());
    }
    let integration_time = match horizon {
        Some(gt) if gt > 0.0 && config.decay_gamma > 0.0 => {
            IntegrationTime::Fixed(gt / config.decay_gamma)
        }
        Some(_) => {
            return Err(Error::Usage("--horizon needs a positive value and Γ > 0".into()).into())
        }
        None => IntegrationTime::Auto,
    };
    for &tau in taus {
        check_delay(tau, config.dt)?;
    }
    let opts = ScanOptions {
        workers: workers.max(1),
        pattern: common.pattern.clone(),
        integration_time,
    };
    let mut out = Run::start("scan", common)?;
    let map = stability_map(&config, &uniform_phase_grid(phi_count), taus, &opts)?;
    map.write_csv(out.create("map.csv")?)?;
    let ridges = find_degeneracy_points(&map, &criteria, merge_radius);
    let sidecar = map.sidecar(&ridges);
    for (tau, count) in &sidecar.trapping_counts {
        println!("tau {tau} trapping phases {count}");
    }
    for p in &ridges.points {
        println!(
            "degeneracy point phi {:.6} tau {:.6} survival {:.6}",
            p.phi, p.tau, p.survival
        );
    }
    if !map.failures.is_empty() {
        eprintln!("{} grid points failed; see map.json", map.failures.len());
    }
    out.write_json("map.json", &sidecar)?;
    out.finish("ok", None)
}

#[derive(Serialize)]
struct BenchmarkReport {
    arm: &'static str,
    gate: f64,
    max_deviation: f64,
    passed: bool,
    per_phase: Vec<PhaseDeviation>,
}

#[derive(Serialize)]
struct PhaseDeviation {
    phi: f64,
    max_deviation: f64,
}

/// Picks the oracle for this config: `true` for the single-emitter delay
/// equation, `false` for the Lindblad equation.
fn check_oracle_inputs(config: &SimulationConfig, pattern: &[usize]) -> Result<bool, Failure> {
    if !config.feedback_enabled {
        if config.n_sites > MAX_DENSE_SITES {
            return Err(Error::Capacity(format!(
                "dense oracle handles at most {MAX_DENSE_SITES} sites, config has {}",
                config.n_sites
            ))
            .into());
        }
        return Ok(false);
    }
    if config.n_sites != 1 {
        return Err(Error::Usage(format!(
            "no oracle for feedback with {} sites; the delay oracle covers a single emitter",
            config.n_sites
        ))
        .into());
    }
    if pattern != [1] {
        return Err(Error::Usage(
            "the delay oracle starts from the excited emitter; pattern must be 1".into(),
        )
        .into());
    }
    Ok(true)
}

fn write_oracle_csv<W: std::io::Write>(
    mut w: W,
    times: &[f64],
    rows: &[Vec<f64>],
) -> std::io::Result<()> {
    let n = rows.first().map_or(0, |r| r.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|k| format!("n{k}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, row) in times.iter().zip(rows) {
        let cells: Vec<String> = std::iter::once(t.to_string())
            .chain(row.iter().map(|x| x.to_string()))
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

fn max_site_deviation(traj: &Trajectory, oracle: &[Vec<f64>]) -> f64 {
    traj.site_densities
        .iter()
        .zip(oracle)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn cmd_benchmark(common: &Common, gate: f64, phi_count: Option<usize>) -> Outcome {
    let config = load_config(&common.config)?;
    let pattern = pattern_or_default(common, &config);
    let delay = check_oracle_inputs(&config, &pattern)?;
    let mut out = Run::start("benchmark", common)?;
    let mut peak = 0;
    let report = if delay {
        let phis = match phi_count {
            Some(n) => uniform_phase_grid(n),
            None => vec![config.feedback_phase],
        };
        let mut w = out.create("comparison.csv")?;
        use std::io::Write;
        writeln!(w, "phi,t,mps,oracle")?;
        let mut per_phase = Vec::new();
        for &phi in &phis {
            let cfg = SimulationConfig {
                feedback_phase: phi,
                ..config.clone()
            };
            let traj = run(&cfg, &pattern)?;
            peak = peak.max(traj.max_bond_seen);
            let exact = single_emitter_delay_run(cfg.decay_gamma, cfg.delay_tau, phi, &traj.times)?;
            let mut dev: f64 = 0.0;
            for ((t, row), e) in traj.times.iter().zip(&traj.site_densities).zip(&exact) {
                writeln!(w, "{phi},{t},{},{e}", row[0])?;
                dev = dev.max((row[0] - e).abs());
            }
            per_phase.push(PhaseDeviation {
                phi,
                max_deviation: dev,
            });
        }
        w.flush()?;
        let max_deviation = per_phase
            .iter()
            .map(|p| p.max_deviation)
            .fold(0.0, f64::max);
        BenchmarkReport {
            arm: "delay",
            gate,
            max_deviation,
            passed: max_deviation <= gate,
            per_phase,
        }
    } else {
        let traj = run(&config, &pattern)?;
        peak = traj.max_bond_seen;
        let oracle = lindblad_run(&config, &pattern, &traj.times)?;
        traj.write_csv(out.create("mps.csv")?)?;
        write_oracle_csv(
            out.create("oracle.csv")?,
            &oracle.times,
            &oracle.site_densities,
        )?;
        let max_deviation = max_site_deviation(&traj, &oracle.site_densities);
        let per_phase = vec![PhaseDeviation {
            phi: config.feedback_phase,
            max_deviation,
        }];
        BenchmarkReport {
            arm: "lindblad",
            gate,
            max_deviation,
            passed: max_deviation <= gate,
            per_phase,
        }
    };
    out.write_json("benchmark.json", &report)?;
    println!(
        "{} arm: max deviation {:.3e} (gate {:.1e})",
        report.arm, report.max_deviation, gate
    );
    if report.passed {
        out.finish("ok", Some(peak))
    } else {
        out.finish("gate_failed", Some(peak))?;
        Err(Failure {
            code: EXIT_GATE,
            message: format!(
                "deviation {:.3e} exceeds gate {gate:.1e}",
                report.max_deviation
            ),
        })
    }
}

fn cmd_oracle(common: &Common) -> Outcome {
    let config = load_config(&common.config)?;
    let pattern = pattern_or_default(common, &config);
    let delay = check_oracle_inputs(&config, &pattern)?;
    let mut out = Run::start("oracle", common)?;
    let times: Vec<f64> = (1..=config.n_steps).map(|k| k as f64 * config.dt).collect();
    if delay {
        let pop = single_emitter_delay_run(
            config.decay_gamma,
            config.delay_tau,
            config.feedback_phase,
            &times,
        )?;
        let rows: Vec<Vec<f64>> = pop.into_iter().map(|p| vec![p]).collect();
        write_oracle_csv(out.create("oracle.csv")?, &times, &rows)?;
    } else {
        let oracle = lindblad_run(&config, &pattern, &times)?;
        write_oracle_csv(
            out.create("oracle.csv")?,
            &oracle.times,
            &oracle.site_densities,
        )?;
    }
    out.finish("ok", None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.mode {
        Mode::Evolve { common, window } => cmd_evolve(common, *window),
        Mode::Scan {
            common,
            phi_count,
            taus,
            workers,
            horizon,
            merge_radius,
            threshold,
            prominence,
        } => cmd_scan(
            common,
            *phi_count,
            taus,
            *workers,
            *horizon,
            *merge_radius,
            PeakCriteria {
                threshold: *threshold,
                prominence: *prominence,
            },
        ),
        Mode::Benchmark {
            common,
            gate,
            phi_count,
        } => cmd_benchmark(common, *gate, *phi_count),
        Mode::Oracle { common } => cmd_oracle(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
