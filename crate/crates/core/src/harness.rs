//! Experiment orchestration: initialization, the SDMA baseline, λ sweeps
//! and file exports.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::admm::{self, AdmmConfig, AdmmOutcome, AdmmStatus, HistoryRow, Initialization, Iterate};
use crate::comm::{self, RateReport};
use crate::error::{invalid, Error, Result};
use crate::model::{
    complex_gaussian_vector, equivalent_channel_amplitude, linear_to_dbm, CMatrix, Method, Scenario, ScenarioConfig,
};
use crate::radar::{self, BeampatternProfile};
use crate::{sdr, wmmse};

/// Keeps the dual draw independent of the channel draw for the same seed.
const DUAL_STREAM: u64 = 0xD0A1_5EED;

/// Maximum-ratio precoders before the per-antenna repair: private
/// columns along h_k, the common column along Σ h_k (the strongest user's
/// channel if the sum vanishes), each with power P_t/(K+1).
pub fn mrc_precoders(scenario: &Scenario) -> Result<CMatrix> {
    scenario.validate()?;
    let nt = scenario.num_antennas;
    let k = scenario.num_users;
    let stream_power = scenario.power_budget / (k + 1) as f64;
    let mut p = CMatrix::zeros(nt, k + 1);

    let sum = scenario.channels.iter().fold(crate::CVector::zeros(nt), |acc, h| acc + h);
    let largest = scenario.channels.iter().map(|h| h.norm()).fold(0.0, f64::max);
    let common = if sum.norm() > 1e-12 * largest.max(1e-300) {
        sum
    } else {
        let dominant = scenario
            .channels
            .iter()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .expect("at least one user");
        dominant.clone()
    };
    let columns = std::iter::once(&common).chain(scenario.channels.iter());
    for (j, h) in columns.enumerate() {
        let norm = h.norm();
        if norm > 0.0 {
            p.set_column(j, &(h * num_complex::Complex64::new(stream_power.sqrt() / norm, 0.0)));
        }
    }
    Ok(p)
}

/// MRC starting point: [`mrc_precoders`] with rows repaired to P_t/N_t,
/// α = 1, c = 1, v = u, and a seeded standard complex Gaussian dual.
pub fn mrc_initialization(scenario: &Scenario) -> Result<Initialization> {
    let p = mrc_precoders(scenario)?;
    let (nt, k) = (scenario.num_antennas, scenario.num_users);
    let precoders = sdr::row_projection(scenario, Method::Rsma, &p);
    let iterate = Iterate {
        alpha: 1.0,
        allocation: vec![1.0; k],
        precoders,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed ^ DUAL_STREAM);
    let draws = complex_gaussian_vector(nt * (k + 1), &mut rng);
    let dual = CMatrix::from_iterator(nt, k + 1, draws.iter().copied());
    Ok(Initialization {
        v: iterate.clone(),
        u: iterate,
        dual,
    })
}

/// Restricts an initialization to the SDMA layout: zero common column,
/// zero common-rate split.
pub fn sdma_initialization(scenario: &Scenario, init: &Initialization) -> Initialization {
    let strip = |it: &Iterate| {
        let mut precoders = it.precoders.clone();
        precoders.column_mut(0).fill(num_complex::Complex64::new(0.0, 0.0));
        Iterate {
            alpha: it.alpha,
            allocation: vec![0.0; it.allocation.len()],
            precoders: sdr::row_projection(scenario, Method::Sdma, &precoders),
        }
    };
    let mut dual = init.dual.clone();
    dual.column_mut(0).fill(num_complex::Complex64::new(0.0, 0.0));
    Initialization {
        v: strip(&init.v),
        u: strip(&init.u),
        dual,
    }
}

pub fn solve_sdma(scenario: &Scenario, config: &AdmmConfig, init: &Initialization) -> Result<AdmmOutcome> {
    admm::run(scenario, Method::Sdma, config, sdma_initialization(scenario, init))
}

/// One end-to-end run from the MRC starting point.
pub fn solve(scenario: &Scenario, method: Method, config: &AdmmConfig) -> Result<AdmmOutcome> {
    let init = mrc_initialization(scenario)?;
    match method {
        Method::Rsma => admm::run(scenario, Method::Rsma, config, init),
        Method::Sdma => solve_sdma(scenario, config, &init),
    }
}

/// λ values swept when none are given.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// What to run: scenario template, solver configuration, methods, λ list
/// and seeds.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub config: AdmmConfig,
    pub methods: Vec<Method>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            config: AdmmConfig::default(),
            methods: vec![Method::Rsma, Method::Sdma],
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            seeds: vec![0],
            output_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("seed list is empty"));
        }
        if self.methods.is_empty() {
            return Err(invalid("method list is empty"));
        }
        if let Some(bad) = self.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(invalid(format!("lambda values must be nonnegative and finite, got {bad}")));
        }
        self.config.validate()
    }
}

/// One finished solve together with the scenario it ran on.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub lambda: f64,
    pub outcome: AdmmOutcome,
}

impl RunRecord {
    pub fn tag(&self) -> String {
        format!(
            "{}_seed{}_lambda{}",
            self.outcome.method.label().to_lowercase(),
            self.scenario.rng_seed,
            self.lambda
        )
    }
}

/// Every (seed, method) pair at the experiment's configured λ, run in parallel.
pub fn run_experiments(spec: &ExperimentSpec) -> Result<Vec<Result<RunRecord>>> {
    spec.validate()?;
    let jobs: Vec<(u64, Method)> = spec
        .seeds
        .iter()
        .flat_map(|&seed| spec.methods.iter().map(move |&m| (seed, m)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(seed, method)| {
            let scenario = spec.scenario.clone().with_seed(seed).build()?;
            let outcome = solve(&scenario, method, &spec.config)?;
            Ok(RunRecord {
                scenario,
                lambda: spec.config.lambda,
                outcome,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub weighted_sum_rate: f64,
    pub mse_sum: f64,
    pub mse_mean: f64,
    pub objective: f64,
    pub iterations: usize,
    pub status: AdmmStatus,
}

impl RunSummary {
    pub fn of(outcome: &AdmmOutcome) -> Self {
        Self {
            weighted_sum_rate: outcome.rates.weighted_sum_rate,
            mse_sum: outcome.beampattern.mse_sum,
            mse_mean: outcome.beampattern.mse_mean,
            objective: outcome.objective,
            iterations: outcome.iterations,
            status: outcome.status,
        }
    }
}

/// One row of the tradeoff table; failed runs keep their error message.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub method: Method,
    pub seed: u64,
    pub result: std::result::Result<RunSummary, String>,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        matches!(&self.result, Ok(s) if s.status == AdmmStatus::Converged)
    }
}

/// Runs every (seed, λ, method) combination; channels depend only on the
/// seed, so each λ sees the same draw.
pub fn tradeoff_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if spec.lambdas.len() < 2 {
        return Err(invalid("a tradeoff sweep needs at least two lambda values"));
    }
    let scenarios: Vec<(u64, std::result::Result<Scenario, String>)> = spec
        .seeds
        .iter()
        .map(|&seed| (seed, spec.scenario.clone().with_seed(seed).build().map_err(|e| e.to_string())))
        .collect();
    let jobs: Vec<(usize, f64, Method)> = (0..scenarios.len())
        .flat_map(|i| {
            spec.lambdas
                .iter()
                .flat_map(move |&l| spec.methods.iter().map(move |&m| (i, l, m)))
        })
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(i, lambda, method)| {
            let (seed, scenario) = &scenarios[i];
            let config = AdmmConfig {
                lambda,
                ..spec.config.clone()
            };
            let result = scenario.clone().and_then(|s| {
                solve(&s, method, &config)
                    .map(|o| RunSummary::of(&o))
                    .map_err(|e| e.to_string())
            });
            SweepRow {
                lambda,
                method,
                seed: *seed,
                result,
            }
        })
        .collect())
}

/// Fraction of B(θ) carried by each stream at the grid point nearest θ.
pub fn stream_shares(profile: &BeampatternProfile, theta: f64) -> Vec<f64> {
    let m = profile.nearest_index(theta);
    let total = profile.total[m];
    profile
        .per_stream
        .iter()
        .map(|s| if total > 0.0 { s[m] / total } else { 0.0 })
        .collect()
}

fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let io = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn num(x: f64) -> String {
    x.to_string()
}

fn strings<const N: usize>(names: [&str; N]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Writes data files for the given runs and sweep plus a metadata file;
/// returns the paths written. Output is byte-identical across reruns.
pub fn export_artifacts(
    spec: &ExperimentSpec,
    runs: &[RunRecord],
    sweep: &[SweepRow],
    directory: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(directory).map_err(|e| Error::Io {
        path: directory.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();

    let mut seen_seeds = Vec::new();
    for run in runs {
        let tag = run.tag();
        let s = &run.scenario;
        let o = &run.outcome;
        let k = s.num_users;
        let profile = &o.beampattern;

        let path = directory.join(format!("{tag}_beampattern.csv"));
        let mut header = strings(["angle_deg", "total", "stream_common"]);
        header.extend((1..=k).map(|i| format!("stream_{i}")));
        let rows = (0..profile.angles.len()).map(|m| {
            let mut row = vec![num(profile.angles[m].to_degrees()), num(profile.total[m])];
            row.extend(profile.per_stream.iter().map(|st| num(st[m])));
            row
        });
        write_csv(&path, &header, rows)?;
        written.push(path);

        let path = directory.join(format!("{tag}_desired.csv"));
        let rows = (0..profile.angles.len()).map(|m| {
            vec![
                num(profile.angles[m].to_degrees()),
                num(s.desired_pattern[m]),
                num(profile.desired_scaled[m]),
            ]
        });
        write_csv(&path, &strings(["angle_deg", "desired", "desired_scaled"]), rows)?;
        written.push(path);

        let path = directory.join(format!("{tag}_antenna_power.csv"));
        let rows = radar::per_antenna_power(&o.solution.precoders)
            .into_iter()
            .enumerate()
            .map(|(n, p)| vec![(n + 1).to_string(), num(p)]);
        write_csv(&path, &strings(["antenna", "power"]), rows)?;
        written.push(path);

        let path = directory.join(format!("{tag}_history.csv"));
        let header: Vec<String> = HistoryRow::CSV_HEADER.iter().map(|h| h.to_string()).collect();
        let rows = o.history.iter().map(|h| {
            vec![
                h.iteration.to_string(),
                num(h.primal_residual),
                num(h.dual_residual),
                num(h.objective),
                num(h.weighted_sum_rate),
                num(h.pattern_mse),
            ]
        });
        write_csv(&path, &header, rows)?;
        written.push(path);

        if !seen_seeds.contains(&s.rng_seed) {
            seen_seeds.push(s.rng_seed);
            let path = directory.join(format!("channel_amplitude_seed{}.csv", s.rng_seed));
            let amplitudes = s
                .channels
                .iter()
                .map(|h| equivalent_channel_amplitude(h, &s.angle_grid, s.element_spacing))
                .collect::<Result<Vec<_>>>()?;
            let mut header = strings(["angle_deg"]);
            header.extend((1..=k).map(|i| format!("user_{i}")));
            let rows = s.angle_grid.iter().enumerate().map(|(m, th)| {
                let mut row = vec![num(th.to_degrees())];
                row.extend(amplitudes.iter().map(|a| num(a[m])));
                row
            });
            write_csv(&path, &header, rows)?;
            written.push(path);
        }
    }

    if let Some(first) = runs.first() {
        let k = first.scenario.num_users;
        let path = directory.join("rates.csv");
        let mut header = strings(["method", "seed", "lambda"]);
        header.extend(RateReport::csv_header(k));
        let rows = runs.iter().map(|r| {
            let mut row = vec![
                r.outcome.method.label().to_string(),
                r.scenario.rng_seed.to_string(),
                num(r.lambda),
            ];
            row.extend(r.outcome.rates.csv_fields().into_iter().map(num));
            row
        });
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    if !sweep.is_empty() {
        let path = directory.join("tradeoff.csv");
        let header = strings([
            "lambda", "method", "seed", "wsr", "mse_sum", "mse_mean", "iterations", "status",
        ]);
        let rows = sweep.iter().map(|row| {
            let head = vec![num(row.lambda), row.method.label().to_string(), row.seed.to_string()];
            let tail = match &row.result {
                Ok(s) => vec![
                    num(s.weighted_sum_rate),
                    num(s.mse_sum),
                    num(s.mse_mean),
                    s.iterations.to_string(),
                    s.status.label().to_string(),
                ],
                Err(_) => vec![String::new(), String::new(), String::new(), String::new(), "failed".into()],
            };
            head.into_iter().chain(tail).collect::<Vec<_>>()
        });
        write_csv(&path, &header, rows)?;
        written.push(path);
    }

    let path = directory.join("metadata.txt");
    std::fs::write(&path, metadata(spec, runs, sweep)).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    written.push(path);
    Ok(written)
}

fn metadata(spec: &ExperimentSpec, runs: &[RunRecord], sweep: &[SweepRow]) -> String {
    use std::fmt::Write;
    let s = &spec.scenario;
    let c = &spec.config;
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "[scenario]");
    let _ = writeln!(out, "num_antennas = {}", s.num_antennas);
    let _ = writeln!(out, "num_users = {}", s.num_users);
    let _ = writeln!(out, "element_spacing = {}", s.element_spacing);
    let _ = writeln!(out, "grid_deg = {}:{}:{}", s.grid_start_deg, s.grid_step_deg, s.grid_stop_deg);
    let _ = writeln!(
        out,
        "mainlobe_deg = center {} width {} peak {}",
        s.mainlobe_center_deg, s.mainlobe_width_deg, s.peak_level
    );
    match &s.user_weights {
        Some(w) => {
            let _ = writeln!(out, "user_weights = {w:?}");
        }
        None => {
            let _ = writeln!(out, "user_weights = equal");
        }
    }
    let _ = writeln!(
        out,
        "power_budget = {} (linear, {} dBm)",
        s.power_budget,
        linear_to_dbm(s.power_budget)
    );
    let _ = writeln!(
        out,
        "noise_power = {} (linear, {} dBm)",
        s.noise_power,
        linear_to_dbm(s.noise_power)
    );
    let _ = writeln!(out, "[admm]");
    let _ = writeln!(out, "rho = {}", c.rho);
    let _ = writeln!(out, "epsilon = {}", c.epsilon);
    let _ = writeln!(out, "max_iters = {}", c.max_iters);
    let _ = writeln!(out, "lambda = {}", c.lambda);
    let _ = writeln!(out, "ao_tolerance = {}", c.wmmse.ao_tolerance);
    let _ = writeln!(out, "max_ao_iters = {}", c.wmmse.max_ao_iters);
    let _ = writeln!(out, "num_randomizations = {}", c.sdr.num_randomizations);
    let _ = writeln!(out, "sdp_tolerance = {}", c.sdr.sdp.tolerance);
    let _ = writeln!(out, "[experiment]");
    let methods: Vec<&str> = spec.methods.iter().map(|m| m.label()).collect();
    let _ = writeln!(out, "methods = {}", methods.join(","));
    let _ = writeln!(out, "lambdas = {:?}", spec.lambdas);
    let _ = writeln!(out, "seeds = {:?}", spec.seeds);
    let _ = writeln!(out, "[results]");
    for r in runs {
        let sc = &r.scenario;
        let _ = writeln!(
            out,
            "{} status={} iterations={} objective={} antennas={} users={} grid_points={} power_budget={} noise_power={}",
            r.tag(),
            r.outcome.status.label(),
            r.outcome.iterations,
            r.outcome.objective,
            sc.num_antennas,
            sc.num_users,
            sc.angle_grid.len(),
            sc.power_budget,
            sc.noise_power
        );
    }
    for row in sweep {
        if let Err(e) = &row.result {
            let _ = writeln!(out, "failed lambda={} method={} seed={}: {e}", row.lambda, row.method, row.seed);
        }
    }
    out
}

/// Outcome of one self-check in [`validation_suite`].
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Quick invariant and oracle checks on scenarios drawn from `template`
/// with seeds `0..cases`, plus one end-to-end RSMA/SDMA pair.
pub fn validation_suite(template: &ScenarioConfig, config: &AdmmConfig, cases: u64) -> Result<Vec<Check>> {
    config.validate()?;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(template.seed ^ DUAL_STREAM);

    let mut worst = 0.0f64;
    for seed in 0..cases {
        let s = template.clone().with_seed(seed).build()?;
        let p = random_precoders(&s, &mut rng);
        let (common, private) = wmmse::rates_via_wmmse(&p, &s.channels, s.noise_power)?;
        let direct_c = comm::common_stream_rates(&p, &s.channels, s.noise_power)?;
        let direct_p = comm::private_rates(&p, &s.channels, s.noise_power)?;
        for (a, b) in common.iter().zip(&direct_c).chain(private.iter().zip(&direct_p)) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-300));
        }
    }
    checks.push(Check {
        name: "rate-wmmse equivalence",
        passed: worst <= 1e-9,
        detail: format!("max relative error {worst:.3e} over {cases} cases"),
    });

    let mut worst_closed = 0.0f64;
    let mut worst_power = 0.0f64;
    let sdr_settings = config.sdr.clone();
    for seed in 0..cases {
        let s = template.clone().with_seed(seed).build()?;
        let target = random_precoders(&s, &mut rng);
        let out = sdr::solve_u_for_target(&s, Method::Rsma, &target, config.rho, 0.0, &sdr_settings, None)?;
        let closed = sdr::row_projection(&s, Method::Rsma, &target);
        worst_closed = worst_closed.max((&out.precoders - &closed).camax());
        for e in radar::per_antenna_power(&out.precoders) {
            worst_power = worst_power.max((e - s.antenna_power()).abs() / s.antenna_power());
        }
    }
    checks.push(Check {
        name: "u-update closed form at lambda=0",
        passed: worst_closed <= 1e-8,
        detail: format!("max deviation {worst_closed:.3e}"),
    });
    checks.push(Check {
        name: "per-antenna power after u-update",
        passed: worst_power <= 1e-8,
        detail: format!("max relative error {worst_power:.3e}"),
    });

    let s = template.build()?;
    let init = mrc_initialization(&s)?;
    let rsma = admm::run(&s, Method::Rsma, config, init.clone())?;
    let sdma = solve_sdma(&s, config, &init)?;
    let at_sdma = admm::joint_objective(&s, &sdma.solution, config.lambda)?;
    checks.push(Check {
        name: "admm convergence",
        passed: rsma.status == AdmmStatus::Converged,
        detail: format!("{} after {} iterations", rsma.status.label(), rsma.iterations),
    });
    checks.push(Check {
        name: "sdma common stream unused",
        passed: sdma.rates.common_portions.iter().all(|&c| c == 0.0)
            && sdma.solution.common_precoder().norm() == 0.0,
        detail: format!("common portions {:?}", sdma.rates.common_portions),
    });
    checks.push(Check {
        name: "rsma objective at least sdma",
        passed: rsma.objective >= at_sdma - 10.0 * config.epsilon,
        detail: format!("rsma {:.6} vs sdma {:.6}", rsma.objective, at_sdma),
    });
    let gap = rsma.bounds.iter().map(|b| b.relative_gap()).fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "sdr relaxation bound",
        passed: (-1e-6..=0.1).contains(&gap),
        detail: format!("largest relative gap {gap:.3e}"),
    });
    Ok(checks)
}

fn random_precoders(s: &Scenario, rng: &mut ChaCha8Rng) -> CMatrix {
    let scale = (s.power_budget / s.num_streams() as f64 / s.num_antennas as f64).sqrt();
    let draws = complex_gaussian_vector(s.num_antennas * s.num_streams(), rng);
    CMatrix::from_iterator(s.num_antennas, s.num_streams(), draws.iter().map(|z| z * scale))
}
