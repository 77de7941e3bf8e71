use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rsma_radcom::harness::{self, ExperimentSpec, RunRecord};
use rsma_radcom::model::dbm_to_linear;
use rsma_radcom::{AdmmConfig, AdmmStatus, Method, RateReport, Scenario, ScenarioConfig};

/// Rate-splitting precoder design for dual-function radar-communication arrays.
#[derive(Parser, Debug)]
#[command(name = "rsma-radcom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one scenario per seed and print the rate table.
    Solve(SolveArgs),
    /// Sweep λ and write the WSR / pattern-MSE tradeoff table.
    Sweep(SweepArgs),
    /// Run the built-in invariant and oracle checks.
    Validate(ValidateArgs),
    /// Solve and write every data file (beampatterns, powers, rates, history).
    Export(ExportArgs),
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// Load the scenario (channels included) from a TOML file instead of generating it.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["antennas", "users", "seeds"])]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    antennas: usize,
    #[arg(long, default_value_t = 2)]
    users: usize,
    /// Element spacing in wavelengths.
    #[arg(long, default_value_t = 0.5)]
    spacing: f64,
    #[arg(long, default_value_t = -90.0, allow_negative_numbers = true)]
    grid_start: f64,
    #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
    grid_stop: f64,
    #[arg(long, default_value_t = 1.0)]
    grid_step: f64,
    /// Mainlobe center of the desired pattern, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mainlobe_center: f64,
    /// Mainlobe width of the desired pattern, degrees.
    #[arg(long, default_value_t = 20.0)]
    mainlobe_width: f64,
    #[arg(long, default_value_t = 1.0)]
    peak: f64,
    /// Comma-separated user weights (default: equal, 1/K each).
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Transmit power budget in linear units (mW).
    #[arg(long, conflicts_with = "power_dbm")]
    power: Option<f64>,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    power_dbm: f64,
    /// Noise power in linear units (mW).
    #[arg(long, conflicts_with = "noise_dbm")]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    noise_dbm: f64,
    /// Seeds, comma-separated or as a range `a..b` (end exclusive).
    #[arg(long, default_value = "0")]
    seeds: String,
}

impl ScenarioArgs {
    fn template(&self) -> ScenarioConfig {
        ScenarioConfig {
            num_antennas: self.antennas,
            num_users: self.users,
            element_spacing: self.spacing,
            grid_start_deg: self.grid_start,
            grid_stop_deg: self.grid_stop,
            grid_step_deg: self.grid_step,
            mainlobe_center_deg: self.mainlobe_center,
            mainlobe_width_deg: self.mainlobe_width,
            peak_level: self.peak,
            user_weights: self.weights.clone(),
            power_budget: self.power.unwrap_or_else(|| dbm_to_linear(self.power_dbm)),
            noise_power: self.noise.unwrap_or_else(|| dbm_to_linear(self.noise_dbm)),
            seed: 0,
        }
    }

    fn seed_list(&self) -> Result<Vec<u64>> {
        parse_seeds(&self.seeds)
    }

    /// Scenarios to run: the loaded file, or one per seed.
    fn scenarios(&self) -> Result<Vec<Scenario>> {
        if let Some(path) = &self.scenario {
            let s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
            return Ok(vec![s]);
        }
        let template = self.template();
        self.seed_list()?
            .into_iter()
            .map(|seed| template.clone().with_seed(seed).build().map_err(Into::into))
            .collect()
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range `{text}`"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("bad seed range `{text}`"))?;
        (a..b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`")))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        bail!("seed list `{text}` is empty");
    }
    Ok(seeds)
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    /// ADMM penalty ρ.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Stopping tolerance on both residual norms.
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Beampattern regularization weight λ.
    #[arg(long, default_value_t = 1e-3)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-4)]
    ao_tolerance: f64,
    #[arg(long, default_value_t = 200)]
    max_ao_iters: usize,
    /// Gaussian randomizations in the rank-one extraction.
    #[arg(long, default_value_t = 100)]
    randomizations: usize,
    #[arg(long, default_value_t = 1e-6)]
    sdp_tolerance: f64,
}

impl SolverArgs {
    fn config(&self) -> AdmmConfig {
        let mut c = AdmmConfig {
            rho: self.rho,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            lambda: self.lambda,
            ..AdmmConfig::default()
        };
        c.wmmse.ao_tolerance = self.ao_tolerance;
        c.wmmse.max_ao_iters = self.max_ao_iters;
        c.sdr.num_randomizations = self.randomizations;
        c.sdr.sdp.tolerance = self.sdp_tolerance;
        c
    }
}

fn parse_methods(text: &str) -> Result<Vec<Method>> {
    match text {
        "both" | "all" => Ok(vec![Method::Rsma, Method::Sdma]),
        other => other
            .split(',')
            .map(|m| m.trim().parse::<Method>().map_err(Into::into))
            .collect(),
    }
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// `rsma`, `sdma`, `both`, or a comma list.
    #[arg(long, default_value = "both")]
    method: String,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    run: SolveArgs,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write each generated scenario as TOML next to the data.
    #[arg(long)]
    save_scenarios: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "both")]
    method: String,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_LAMBDAS.to_vec())]
    lambdas: Vec<f64>,
    /// Output directory for tradeoff.csv and metadata.txt.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Random cases per oracle check.
    #[arg(long, default_value_t = 20)]
    cases: u64,
}

fn run_solves(args: &SolveArgs) -> Result<(ExperimentSpec, Vec<RunRecord>)> {
    let methods = parse_methods(&args.method)?;
    let config = args.solver.config();
    config.validate()?;
    let spec = ExperimentSpec {
        scenario: args.scenario.template(),
        config: config.clone(),
        methods: methods.clone(),
        lambdas: vec![config.lambda],
        seeds: match &args.scenario.scenario {
            Some(_) => vec![],
            None => args.scenario.seed_list()?,
        },
        output_dir: None,
    };
    let mut records = Vec::new();
    for scenario in args.scenario.scenarios()? {
        for &method in &methods {
            let outcome = harness::solve(&scenario, method, &config)
                .with_context(|| format!("{method} run on seed {}", scenario.rng_seed))?;
            records.push(RunRecord {
                scenario: scenario.clone(),
                lambda: config.lambda,
                outcome,
            });
        }
    }
    Ok((spec, records))
}

fn print_rates(records: &[RunRecord]) {
    let Some(first) = records.first() else { return };
    let mut header = vec!["method".to_string(), "seed".to_string()];
    header.extend(RateReport::csv_header(first.scenario.num_users));
    header.extend(["mse_sum", "objective", "iterations", "status"].map(String::from));
    println!("{}", header.join(","));
    for r in records {
        let o = &r.outcome;
        let mut row = vec![o.method.label().to_string(), r.scenario.rng_seed.to_string()];
        row.extend(o.rates.csv_fields().iter().map(|v| format!("{v:.4}")));
        row.push(format!("{:.4}", o.beampattern.mse_sum));
        row.push(format!("{:.4}", o.objective));
        row.push(o.iterations.to_string());
        row.push(o.status.label().to_string());
        println!("{}", row.join(","));
    }
}

fn all_converged(records: &[RunRecord]) -> bool {
    records.iter().all(|r| r.outcome.status == AdmmStatus::Converged)
}

fn exit_for(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    // Usage errors share exit code 1 with runtime errors; 2 is reserved for
    // runs that hit the iteration cap.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(args) => {
            let (_, records) = run_solves(&args)?;
            print_rates(&records);
            Ok(exit_for(all_converged(&records)))
        }
        Command::Export(args) => {
            let (mut spec, records) = run_solves(&args.run)?;
            spec.output_dir = Some(args.out.clone());
            let mut written = harness::export_artifacts(&spec, &records, &[], &args.out)?;
            if args.save_scenarios {
                for r in &records {
                    let path = args.out.join(format!("scenario_seed{}.toml", r.scenario.rng_seed));
                    if !written.contains(&path) {
                        r.scenario.save(&path)?;
                        written.push(path);
                    }
                }
            }
            print_rates(&records);
            for p in &written {
                eprintln!("wrote {}", p.display());
            }
            Ok(exit_for(all_converged(&records)))
        }
        Command::Sweep(args) => {
            if args.scenario.scenario.is_some() {
                bail!("sweep generates scenarios from seeds; --scenario is not supported here");
            }
            let spec = ExperimentSpec {
                scenario: args.scenario.template(),
                config: args.solver.config(),
                methods: parse_methods(&args.method)?,
                lambdas: args.lambdas.clone(),
                seeds: args.scenario.seed_list()?,
                output_dir: args.out.clone(),
            };
            let rows = harness::tradeoff_sweep(&spec)?;
            println!("lambda,method,seed,wsr,mse_sum,iterations,status");
            for row in &rows {
                match &row.result {
                    Ok(s) => println!(
                        "{},{},{},{:.4},{:.4},{},{}",
                        row.lambda,
                        row.method,
                        row.seed,
                        s.weighted_sum_rate,
                        s.mse_sum,
                        s.iterations,
                        s.status.label()
                    ),
                    Err(e) => println!("{},{},{},,,,failed: {e}", row.lambda, row.method, row.seed),
                }
            }
            if let Some(dir) = &args.out {
                for p in harness::export_artifacts(&spec, &[], &rows, dir)? {
                    eprintln!("wrote {}", p.display());
                }
            }
            Ok(exit_for(rows.iter().all(|r| r.converged())))
        }
        Command::Validate(args) => {
            let template = args.scenario.template().with_seed(args.scenario.seed_list()?[0]);
            let checks = harness::validation_suite(&template, &args.solver.config(), args.cases)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(exit_for(ok))
        }
    }
}
