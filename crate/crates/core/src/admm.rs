//! Consensus ADMM over a communication copy v and a radar copy u of the
//! design variables, coupled only through the precoder block.
//!
//! Each iteration runs the rate-WMMSE v-update toward `u − d`, the SDR
//! u-update toward `v + d`, then the scaled dual step `d += v − u`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::comm::{self, RateReport};
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{CMatrix, CVector, Method, PrecoderSolution, Scenario};
use crate::radar::{self, BeampatternProfile};
use crate::sdr::{self, SdrSettings};
use crate::wmmse::{self, WmmseSettings};

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub lambda: f64,
    pub wmmse: WmmseSettings,
    pub sdr: SdrSettings,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            epsilon: 1e-2,
            max_iters: 200,
            lambda: 1e-3,
            wmmse: WmmseSettings::default(),
            sdr: SdrSettings::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(invalid(format!("rho must be positive and finite, got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be nonnegative and finite, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// One copy of the design variables: scale α, common-rate split c and
/// precoders P (N_t × (K+1)).
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub alpha: f64,
    pub allocation: Vec<f64>,
    pub precoders: CMatrix,
}

impl Iterate {
    /// Stacks into the `[α, c, vec(P)]` layout.
    pub fn to_layout(&self) -> CVector {
        let k = self.allocation.len();
        let mut x = CVector::zeros(1 + k + self.precoders.len());
        x[0] = Complex64::new(self.alpha, 0.0);
        for (i, &c) in self.allocation.iter().enumerate() {
            x[1 + i] = Complex64::new(c, 0.0);
        }
        for (i, z) in self.precoders.iter().enumerate() {
            x[1 + k + i] = *z;
        }
        x
    }

    pub fn from_layout(x: &CVector, num_antennas: usize, num_users: usize) -> Result<Self> {
        check_dim("layout length", layout_len(num_antennas, num_users), x.len())?;
        let k = num_users;
        Ok(Self {
            alpha: x[0].re,
            allocation: (0..k).map(|i| x[1 + i].re).collect(),
            precoders: CMatrix::from_iterator(num_antennas, k + 1, x.iter().skip(1 + k).copied()),
        })
    }
}

/// Starting point for [`run`].
#[derive(Debug, Clone)]
pub struct Initialization {
    pub v: Iterate,
    pub u: Iterate,
    /// Scaled dual, shaped like the precoders.
    pub dual: CMatrix,
}

pub fn layout_len(num_antennas: usize, num_users: usize) -> usize {
    (num_users + 1) * num_antennas + num_users + 1
}

/// Diagonal selectors on the `[α, c, vec(P)]` layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// F_k: the common-rate portion of user k (1-based).
    CommonRate(usize),
    /// D_p: the whole precoder block.
    Precoders,
    /// D_c: the common-stream precoder.
    CommonPrecoder,
    /// D_k: the private precoder of user k (1-based).
    PrivatePrecoder(usize),
}

/// Applies a selector as a mask, keeping the layout length.
pub fn selection_apply(which: Selector, x: &CVector, num_antennas: usize, num_users: usize) -> Result<CVector> {
    check_dim("layout length", layout_len(num_antennas, num_users), x.len())?;
    let p0 = 1 + num_users;
    let range = match which {
        Selector::CommonRate(k) if (1..=num_users).contains(&k) => k..k + 1,
        Selector::PrivatePrecoder(k) if (1..=num_users).contains(&k) => {
            p0 + k * num_antennas..p0 + (k + 1) * num_antennas
        }
        Selector::CommonRate(k) | Selector::PrivatePrecoder(k) => {
            return Err(invalid(format!("user index {k} outside 1..={num_users}")))
        }
        Selector::Precoders => p0..x.len(),
        Selector::CommonPrecoder => p0..p0 + num_antennas,
    };
    let mut out = CVector::zeros(x.len());
    out.rows_range_mut(range.clone()).copy_from(&x.rows_range(range));
    Ok(out)
}

/// Real stacking `[Re vec(P); Im vec(P)]`; an isometry.
pub fn real_stack(p: &CMatrix) -> DVector<f64> {
    let n = p.len();
    DVector::from_fn(2 * n, |i, _| if i < n { p[i].re } else { p[i - n].im })
}

pub fn dual_update(dual: &CMatrix, v: &CMatrix, u: &CMatrix) -> CMatrix {
    dual + (v - u)
}

/// (‖D_p(v − u)‖₂, ‖D_p(u − u_prev)‖₂).
pub fn residuals(v: &CMatrix, u: &CMatrix, u_prev: &CMatrix) -> (f64, f64) {
    (real_stack(&(v - u)).norm(), real_stack(&(u - u_prev)).norm())
}

/// WSR(P, c) − λ Σ_m (α P_d(θ_m) − B(θ_m))².
pub fn joint_objective(scenario: &Scenario, solution: &PrecoderSolution, lambda: f64) -> Result<f64> {
    let rates = comm::weighted_sum_rate(
        &solution.precoders,
        &solution.common_rate_allocation,
        &scenario.channels,
        &scenario.user_weights,
        scenario.noise_power,
    )?;
    let mse = radar::pattern_mse(
        solution.pattern_scale,
        &solution.precoders,
        &scenario.desired_pattern,
        &scenario.angle_grid,
        scenario.element_spacing,
    )?;
    Ok(rates.weighted_sum_rate - lambda * mse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    Converged,
    IterationLimit,
}

impl AdmmStatus {
    pub fn label(self) -> &'static str {
        match self {
            AdmmStatus::Converged => "converged",
            AdmmStatus::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub weighted_sum_rate: f64,
    pub pattern_mse: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: [&'static str; 6] = ["iter", "primal_residual", "dual_residual", "objective", "wsr", "mse"];
}

/// Relaxation bound bookkeeping for one u-update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdrBound {
    pub iteration: usize,
    /// Relaxation objective at the solver's final iterate.
    pub sdp_objective: f64,
    /// Certified lower bound on the relaxation's optimum.
    pub sdp_lower_bound: f64,
    pub extracted_objective: f64,
    pub linear_copy_objective: f64,
}

impl SdrBound {
    /// (extracted − certified bound) / |extracted|.
    pub fn relative_gap(&self) -> f64 {
        (self.extracted_objective - self.sdp_lower_bound) / self.extracted_objective.abs().max(1e-12)
    }
}

/// Full iteration state, exposed for stepping and inspection.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub v: Iterate,
    pub u: Iterate,
    pub dual: CMatrix,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iteration: usize,
    pub history: Vec<HistoryRow>,
    pub bounds: Vec<SdrBound>,
}

impl AdmmState {
    pub fn new(scenario: &Scenario, init: Initialization) -> Result<Self> {
        for (name, it) in [("v", &init.v), ("u", &init.u)] {
            check_dim(name, scenario.num_antennas, it.precoders.nrows())?;
            check_dim(name, scenario.num_streams(), it.precoders.ncols())?;
            check_dim(name, scenario.num_users, it.allocation.len())?;
        }
        check_dim("dual rows", scenario.num_antennas, init.dual.nrows())?;
        check_dim("dual columns", scenario.num_streams(), init.dual.ncols())?;
        let (r, _) = residuals(&init.v.precoders, &init.u.precoders, &init.u.precoders);
        Ok(Self {
            v: init.v,
            u: init.u,
            dual: init.dual,
            primal_residual: r,
            dual_residual: f64::INFINITY,
            iteration: 0,
            history: Vec::new(),
            bounds: Vec::new(),
        })
    }

    /// Reported solution: u-side precoder and scale with the v-side split
    /// re-projected onto Σc ≤ R_c(u).
    pub fn solution(&self, scenario: &Scenario, method: Method) -> Result<PrecoderSolution> {
        let allocation = match method {
            Method::Sdma => vec![0.0; scenario.num_users],
            Method::Rsma => {
                let rc = comm::common_rate(&self.u.precoders, &scenario.channels, scenario.noise_power)?;
                comm::project_allocation(&self.v.allocation, rc)
            }
        };
        Ok(PrecoderSolution {
            precoders: self.u.precoders.clone(),
            common_rate_allocation: allocation,
            pattern_scale: self.u.alpha,
        })
    }

    pub fn converged(&self, epsilon: f64) -> bool {
        self.primal_residual <= epsilon && self.dual_residual <= epsilon
    }

    /// One outer iteration.
    pub fn step(&mut self, scenario: &Scenario, method: Method, config: &AdmmConfig) -> Result<()> {
        let iteration = self.iteration + 1;
        let wrap = |e: Error| Error::Iteration {
            iteration,
            source: Box::new(e),
        };

        let v_out = wmmse::solve_v_subproblem(
            scenario,
            method,
            &self.u.precoders,
            &self.dual,
            config.rho,
            &config.wmmse,
            Some(&self.v.precoders),
        )
        .map_err(wrap)?;
        self.v.precoders = v_out.precoders;
        self.v.allocation = v_out.allocation;

        let mut sdr_settings = config.sdr.clone();
        sdr_settings.seed = randomization_seed(scenario.rng_seed, iteration);
        let u_out = sdr::solve_u_subproblem(
            scenario,
            method,
            &self.v.precoders,
            &self.dual,
            config.rho,
            config.lambda,
            &sdr_settings,
            Some((&self.u.precoders, self.u.alpha)),
        )
        .map_err(wrap)?;
        self.bounds.push(SdrBound {
            iteration,
            sdp_objective: u_out.sdp_objective,
            sdp_lower_bound: u_out.sdp_lower_bound,
            extracted_objective: u_out.objective,
            linear_copy_objective: u_out.linear_copy_objective,
        });
        let u_prev = std::mem::replace(&mut self.u.precoders, u_out.precoders);
        self.u.alpha = u_out.pattern_scale;
        self.v.alpha = u_out.pattern_scale;

        self.dual = dual_update(&self.dual, &self.v.precoders, &self.u.precoders);
        let (r, q) = residuals(&self.v.precoders, &self.u.precoders, &u_prev);
        self.primal_residual = r;
        self.dual_residual = q;
        self.iteration = iteration;

        let solution = self.solution(scenario, method).map_err(wrap)?;
        let rates = comm::weighted_sum_rate(
            &solution.precoders,
            &solution.common_rate_allocation,
            &scenario.channels,
            &scenario.user_weights,
            scenario.noise_power,
        )
        .map_err(wrap)?;
        let mse = radar::pattern_mse(
            solution.pattern_scale,
            &solution.precoders,
            &scenario.desired_pattern,
            &scenario.angle_grid,
            scenario.element_spacing,
        )
        .map_err(wrap)?;
        self.history.push(HistoryRow {
            iteration,
            primal_residual: r,
            dual_residual: q,
            objective: rates.weighted_sum_rate - config.lambda * mse,
            weighted_sum_rate: rates.weighted_sum_rate,
            pattern_mse: mse,
        });
        Ok(())
    }
}

fn randomization_seed(scenario_seed: u64, iteration: usize) -> u64 {
    scenario_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(iteration as u64)
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub method: Method,
    pub solution: PrecoderSolution,
    pub rates: RateReport,
    pub beampattern: BeampatternProfile,
    pub objective: f64,
    pub status: AdmmStatus,
    pub iterations: usize,
    pub history: Vec<HistoryRow>,
    pub bounds: Vec<SdrBound>,
    /// Final communication-side iterate.
    pub v: Iterate,
}

pub fn run(scenario: &Scenario, method: Method, config: &AdmmConfig, init: Initialization) -> Result<AdmmOutcome> {
    scenario.validate()?;
    config.validate()?;
    let mut state = AdmmState::new(scenario, init)?;
    let mut status = AdmmStatus::IterationLimit;
    while state.iteration < config.max_iters {
        state.step(scenario, method, config)?;
        if state.converged(config.epsilon) {
            status = AdmmStatus::Converged;
            break;
        }
    }
    finish(scenario, method, config, state, status)
}

fn finish(
    scenario: &Scenario,
    method: Method,
    config: &AdmmConfig,
    state: AdmmState,
    status: AdmmStatus,
) -> Result<AdmmOutcome> {
    let solution = state.solution(scenario, method)?;
    let rates = comm::weighted_sum_rate(
        &solution.precoders,
        &solution.common_rate_allocation,
        &scenario.channels,
        &scenario.user_weights,
        scenario.noise_power,
    )?;
    let beampattern = radar::beampattern(&solution.precoders, &scenario.angle_grid, scenario.element_spacing)?
        .compare(solution.pattern_scale, &scenario.desired_pattern)?;
    let objective = rates.weighted_sum_rate - config.lambda * beampattern.mse_sum;
    Ok(AdmmOutcome {
        method,
        solution,
        rates,
        beampattern,
        objective,
        status,
        iterations: state.iteration,
        history: state.history,
        bounds: state.bounds,
        v: state.v,
    })
}
