//! Communication-side ADMM update: proximally regularised weighted-sum-rate
//! maximisation over (P, c), solved by rate–WMMSE alternating optimisation.
//!
//! For fixed MMSE equalizers g and weights w, every rate is replaced by the
//! augmented weighted MSE ξ = wε − ln w (nats), which makes the precoder
//! subproblem a convex QCQP in the real-stacked precoder and the common-rate
//! split. Objectives are reported in bits so that the proximal weight ρ has
//! the same meaning as in the outer ADMM.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::comm::{self, allocate_common_rate};
use crate::conic::{ConvexQcqp, Quadratic, SolveStatus};
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{CMatrix, CVector, Method, Scenario};

/// Which stream a user is decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Common,
    /// Private stream of the given 0-based user.
    Private(usize),
}

/// (|hᴴp_stream|², total received power T for that decoding stage).
fn stage_powers(precoders: &CMatrix, h: &CVector, stream: Stream, noise_power: f64) -> (Complex64, f64) {
    let gains: Vec<Complex64> = precoders.column_iter().map(|p| h.dotc(&p)).collect();
    match stream {
        Stream::Common => {
            let t = gains.iter().map(|g| g.norm_sqr()).sum::<f64>() + noise_power;
            (gains[0], t)
        }
        Stream::Private(k) => {
            let t = gains[1..].iter().map(|g| g.norm_sqr()).sum::<f64>() + noise_power;
            (gains[k + 1], t)
        }
    }
}

/// MMSE receive coefficient g = (hᴴp_stream)* / T.
pub fn mmse_equalizer(precoders: &CMatrix, h: &CVector, stream: Stream, noise_power: f64) -> Complex64 {
    let (a, t) = stage_powers(precoders, h, stream, noise_power);
    a.conj() / t
}

/// Mean squared error |g|²T − 2Re(g hᴴp) + 1 of an arbitrary equalizer.
pub fn mse(precoders: &CMatrix, h: &CVector, stream: Stream, noise_power: f64, g: Complex64) -> f64 {
    let (a, t) = stage_powers(precoders, h, stream, noise_power);
    g.norm_sqr() * t - 2.0 * (g * a).re + 1.0
}

/// MSE weight minimising ξ = wε − ln w, i.e. w = 1/ε.
pub fn optimal_weight(mmse: f64) -> Result<f64> {
    if !(mmse > 0.0) {
        return Err(invalid(format!("MMSE must be positive, got {mmse}")));
    }
    Ok(1.0 / mmse)
}

/// ξ = wε − ln w in nats.
pub fn augmented_wmse(weight: f64, mse: f64) -> f64 {
    weight * mse - weight.ln()
}

/// Rates in bits recovered through equalizer → MSE → weight → 1 − ξ.
/// Returns (common-stream rate per user, private rate per user).
pub fn rates_via_wmmse(precoders: &CMatrix, channels: &[CVector], noise_power: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let rate = |h: &CVector, stream| -> Result<f64> {
        let g = mmse_equalizer(precoders, h, stream, noise_power);
        let eps = mse(precoders, h, stream, noise_power, g).clamp(f64::MIN_POSITIVE, 1.0);
        let w = optimal_weight(eps)?;
        Ok((1.0 - augmented_wmse(w, eps)) / LN_2)
    };
    let common = channels.iter().map(|h| rate(h, Stream::Common)).collect::<Result<_>>()?;
    let private = channels
        .iter()
        .enumerate()
        .map(|(k, h)| rate(h, Stream::Private(k)))
        .collect::<Result<_>>()?;
    Ok((common, private))
}

/// Equalizers and weights of one AO round.
#[derive(Debug, Clone, PartialEq)]
pub struct WmmseState {
    pub common_equalizers: Vec<Complex64>,
    pub private_equalizers: Vec<Complex64>,
    pub common_weights: Vec<f64>,
    pub private_weights: Vec<f64>,
}

impl WmmseState {
    pub fn at(precoders: &CMatrix, channels: &[CVector], noise_power: f64) -> Result<Self> {
        let mut state = WmmseState {
            common_equalizers: Vec::with_capacity(channels.len()),
            private_equalizers: Vec::with_capacity(channels.len()),
            common_weights: Vec::with_capacity(channels.len()),
            private_weights: Vec::with_capacity(channels.len()),
        };
        for (k, h) in channels.iter().enumerate() {
            for (stream, gs, ws) in [
                (Stream::Common, &mut state.common_equalizers, &mut state.common_weights),
                (Stream::Private(k), &mut state.private_equalizers, &mut state.private_weights),
            ] {
                let g = mmse_equalizer(precoders, h, stream, noise_power);
                let eps = mse(precoders, h, stream, noise_power, g).clamp(1e-300, 1.0);
                gs.push(g);
                ws.push(optimal_weight(eps)?);
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone)]
pub struct WmmseSettings {
    /// Stop once an AO round lowers the objective by less than this.
    pub ao_tolerance: f64,
    pub max_ao_iters: usize,
    pub qcqp_tolerance: f64,
    pub qcqp_max_iters: usize,
}

impl Default for WmmseSettings {
    fn default() -> Self {
        Self {
            ao_tolerance: 1e-4,
            max_ao_iters: 200,
            qcqp_tolerance: 1e-9,
            qcqp_max_iters: 200,
        }
    }
}

/// Result of one communication-side update.
#[derive(Debug, Clone)]
pub struct VUpdate {
    pub precoders: CMatrix,
    pub allocation: Vec<f64>,
    /// Subproblem objective after every AO round, starting with the initial point.
    pub trace: Vec<f64>,
    pub state: WmmseState,
    pub converged: bool,
}

impl VUpdate {
    pub fn objective(&self) -> f64 {
        *self.trace.last().unwrap_or(&f64::NAN)
    }
}

/// −Σ μ_k (C_k + R_k(P)) + (ρ/2)‖vec P − target‖², in bits.
pub fn v_objective(
    scenario: &Scenario,
    precoders: &CMatrix,
    allocation: &[f64],
    target: &CMatrix,
    rho: f64,
) -> Result<f64> {
    let private = comm::private_rates(precoders, &scenario.channels, scenario.noise_power)?;
    let wsr: f64 = scenario
        .user_weights
        .iter()
        .zip(private.iter().zip(allocation))
        .map(|(mu, (r, c))| mu * (c + r))
        .sum();
    Ok(-wsr + 0.5 * rho * (precoders - target).norm_squared())
}

/// Solves the v-update with target D_p u − d built from the radar-side
/// precoder `u` and the scaled dual `dual`.
pub fn solve_v_subproblem(
    scenario: &Scenario,
    method: Method,
    u: &CMatrix,
    dual: &CMatrix,
    rho: f64,
    settings: &WmmseSettings,
    warm_start: Option<&CMatrix>,
) -> Result<VUpdate> {
    check_dim("u precoder columns", scenario.num_streams(), u.ncols())?;
    check_dim("dual columns", scenario.num_streams(), dual.ncols())?;
    solve_v_for_target(scenario, method, &(u - dual), rho, settings, warm_start)
}

/// AO loop for min −WSR(P, c) + (ρ/2)‖P − target‖² under the common-rate
/// constraints; `warm_start` defaults to the target.
pub fn solve_v_for_target(
    scenario: &Scenario,
    method: Method,
    target: &CMatrix,
    rho: f64,
    settings: &WmmseSettings,
    warm_start: Option<&CMatrix>,
) -> Result<VUpdate> {
    if !(rho > 0.0) {
        return Err(invalid(format!("penalty must be positive, got {rho}")));
    }
    check_dim("target rows", scenario.num_antennas, target.nrows())?;
    check_dim("target columns", scenario.num_streams(), target.ncols())?;
    let layout = Layout::new(scenario, method);
    let noise = scenario.noise_power;

    let mut precoders = warm_start.cloned().unwrap_or_else(|| target.clone());
    check_dim("warm start columns", scenario.num_streams(), precoders.ncols())?;
    if method == Method::Sdma {
        precoders.column_mut(0).fill(Complex64::new(0.0, 0.0));
    }
    let mut allocation = best_allocation(scenario, method, &precoders)?;
    let mut objective = v_objective(scenario, &precoders, &allocation, target, rho)?;
    let mut trace = vec![objective];
    let mut state = WmmseState::at(&precoders, &scenario.channels, noise)?;
    let mut converged = false;

    for _ in 0..settings.max_ao_iters {
        let problem = layout.build(scenario, &state, target, rho)?;
        let x0 = layout.pack(&precoders, &allocation);
        let sol = problem.solve(settings.qcqp_tolerance, settings.qcqp_max_iters, Some(&x0))?;
        if sol.status == SolveStatus::Infeasible || !sol.x.iter().all(|v| v.is_finite()) {
            return Err(Error::Solver {
                solver: "wmmse precoder QCQP",
                detail: format!(
                    "status {:?} after {} iterations (stationarity {:.3e}, violation {:.3e})",
                    sol.status, sol.iterations, sol.stationarity, sol.max_violation
                ),
            });
        }
        let candidate = layout.unpack(&sol.x);
        let candidate_alloc = best_allocation(scenario, method, &candidate)?;
        let candidate_obj = v_objective(scenario, &candidate, &candidate_alloc, target, rho)?;
        if candidate_obj > objective {
            // Inexact subsolve at a stationary point; keep the incumbent.
            converged = true;
            break;
        }
        let decrease = objective - candidate_obj;
        precoders = candidate;
        allocation = candidate_alloc;
        objective = candidate_obj;
        trace.push(objective);
        state = WmmseState::at(&precoders, &scenario.channels, noise)?;
        if decrease < settings.ao_tolerance {
            converged = true;
            break;
        }
    }

    Ok(VUpdate {
        precoders,
        allocation,
        trace,
        state,
        converged,
    })
}

/// Optimal split of R_c(P) for fixed precoders (zero under SDMA).
fn best_allocation(scenario: &Scenario, method: Method, precoders: &CMatrix) -> Result<Vec<f64>> {
    match method {
        Method::Sdma => Ok(vec![0.0; scenario.num_users]),
        Method::Rsma => {
            let rc = comm::common_rate(precoders, &scenario.channels, scenario.noise_power)?;
            Ok(allocate_common_rate(rc, &scenario.user_weights))
        }
    }
}

/// Real stacking of the free precoder columns followed by c.
struct Layout {
    nt: usize,
    streams: usize,
    first_stream: usize,
    num_users: usize,
    with_split: bool,
}

impl Layout {
    fn new(scenario: &Scenario, method: Method) -> Self {
        let sdma = method == Method::Sdma;
        Self {
            nt: scenario.num_antennas,
            streams: scenario.num_streams(),
            first_stream: usize::from(sdma),
            num_users: scenario.num_users,
            with_split: !sdma,
        }
    }

    fn num_complex(&self) -> usize {
        self.nt * (self.streams - self.first_stream)
    }

    fn dim(&self) -> usize {
        2 * self.num_complex() + if self.with_split { self.num_users } else { 0 }
    }

    fn base(&self, stream: usize) -> Option<usize> {
        (stream >= self.first_stream).then(|| (stream - self.first_stream) * self.nt)
    }

    fn split_index(&self, user: usize) -> usize {
        2 * self.num_complex() + user
    }

    fn pack(&self, precoders: &CMatrix, allocation: &[f64]) -> DVector<f64> {
        let nc = self.num_complex();
        let mut x = DVector::zeros(self.dim());
        for i in self.first_stream..self.streams {
            let base = self.base(i).unwrap();
            for n in 0..self.nt {
                x[base + n] = precoders[(n, i)].re;
                x[nc + base + n] = precoders[(n, i)].im;
            }
        }
        if self.with_split {
            for (k, c) in allocation.iter().enumerate() {
                x[self.split_index(k)] = *c;
            }
        }
        x
    }

    fn unpack(&self, x: &DVector<f64>) -> CMatrix {
        let nc = self.num_complex();
        let mut p = CMatrix::zeros(self.nt, self.streams);
        for i in self.first_stream..self.streams {
            let base = self.base(i).unwrap();
            for n in 0..self.nt {
                p[(n, i)] = Complex64::new(x[base + n], x[nc + base + n]);
            }
        }
        p
    }

    /// Adds a·p_iᴴ(hhᴴ)p_i to ½xᵀHx.
    fn add_gain(&self, hess: &mut DMatrix<f64>, stream: usize, h: &CVector, a: f64) {
        let Some(base) = self.base(stream) else { return };
        let nc = self.num_complex();
        for r in 0..self.nt {
            for c in 0..self.nt {
                let m = h[r] * h[c].conj();
                let (jr, jc) = (base + r, base + c);
                hess[(jr, jc)] += 2.0 * a * m.re;
                hess[(nc + jr, nc + jc)] += 2.0 * a * m.re;
                hess[(jr, nc + jc)] -= 2.0 * a * m.im;
                hess[(nc + jr, jc)] += 2.0 * a * m.im;
            }
        }
    }

    /// Adds −2a·Re(g hᴴ p_i) to the linear term.
    fn add_cross(&self, lin: &mut DVector<f64>, stream: usize, h: &CVector, g: Complex64, a: f64) {
        let Some(base) = self.base(stream) else { return };
        let nc = self.num_complex();
        for n in 0..self.nt {
            let beta = g.conj() * h[n];
            lin[base + n] -= 2.0 * a * beta.re;
            lin[nc + base + n] -= 2.0 * a * beta.im;
        }
    }

    fn build(&self, scenario: &Scenario, state: &WmmseState, target: &CMatrix, rho: f64) -> Result<ConvexQcqp> {
        let n = self.dim();
        let nc = self.num_complex();
        let noise = scenario.noise_power;
        let mut hess = DMatrix::zeros(n, n);
        let mut lin = DVector::zeros(n);
        let mut constant = 0.0;

        // Proximal term over every stream (pinned columns contribute a constant).
        let t = self.pack(target, &[]);
        for j in 0..2 * nc {
            hess[(j, j)] += rho;
        }
        lin.rows_mut(0, 2 * nc).axpy(-rho, &t.rows(0, 2 * nc), 1.0);
        constant += 0.5 * rho * target.norm_squared();

        for (k, h) in scenario.channels.iter().enumerate() {
            let mu = scenario.user_weights[k];
            let g = state.private_equalizers[k];
            let w = state.private_weights[k];
            let a = mu * w / LN_2;
            for j in 1..self.streams {
                self.add_gain(&mut hess, j, h, a * g.norm_sqr());
            }
            self.add_cross(&mut lin, k + 1, h, g, a);
            constant += a * (g.norm_sqr() * noise + 1.0) + mu * (-w.ln() - 1.0) / LN_2;
            if self.with_split {
                lin[self.split_index(k)] -= mu;
            }
        }

        let mut problem = ConvexQcqp::new(Quadratic::new(hess, lin, constant))?;
        if !self.with_split {
            return Ok(problem);
        }
        for (k, h) in scenario.channels.iter().enumerate() {
            let g = state.common_equalizers[k];
            let w = state.common_weights[k];
            let b = w / LN_2;
            let mut ch = DMatrix::zeros(n, n);
            let mut cl = DVector::zeros(n);
            for j in 0..self.streams {
                self.add_gain(&mut ch, j, h, b * g.norm_sqr());
            }
            self.add_cross(&mut cl, 0, h, g, b);
            for user in 0..self.num_users {
                cl[self.split_index(user)] = 1.0;
            }
            let cc = b * (g.norm_sqr() * noise + 1.0) + (-w.ln() - 1.0) / LN_2;
            problem.add_inequality(Quadratic::new(ch, cl, cc))?;
        }
        for user in 0..self.num_users {
            let mut cl = DVector::zeros(n);
            cl[self.split_index(user)] = -1.0;
            problem.add_inequality(Quadratic::affine(cl, 0.0))?;
        }
        Ok(problem)
    }
}
