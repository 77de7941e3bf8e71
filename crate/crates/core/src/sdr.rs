//! Radar-side ADMM update: beampattern matching plus a proximal pull toward
//! the communication iterate, under equal per-antenna power.
//!
//! The quartic pattern term is lifted: every stream block p_i p_iᴴ becomes a
//! matrix U_i, coupled to a linear copy p_i through the Schur block
//! `[[U_i, p_i], [p_iᴴ, 1]] ⪰ 0`. The objective and the power constraint
//! only touch the diagonal blocks of the full lifted matrix, and any set of
//! PSD Schur blocks completes to a PSD full lifting with off-diagonal blocks
//! p_i p_jᴴ, so the per-stream form is the same relaxation at a fraction of
//! the size. A rank-one precoder is then extracted from candidates (linear
//! copy, dominant eigenvector, Gaussian randomisations), each repaired to
//! exact per-antenna power and refined by monotone projected gradient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conic::{hvec, hvec_len, Cone, SdpProblem, SdpSettings, SolveStatus};
use crate::error::{check_dim, invalid, Error, Result};
use crate::model::{complex_gaussian_vector, CMatrix, CVector, Method, Scenario};
use crate::radar::{self, ALPHA_MIN};

#[derive(Debug, Clone)]
pub struct SdrSettings {
    pub num_randomizations: usize,
    pub sdp: SdpSettings,
    /// Projected-gradient refinement steps applied to the best candidate.
    pub refine_iters: usize,
    pub seed: u64,
}

impl Default for SdrSettings {
    fn default() -> Self {
        Self {
            num_randomizations: 100,
            sdp: SdpSettings {
                tolerance: 1e-6,
                max_iters: 50_000,
                ..SdpSettings::default()
            },
            refine_iters: 500,
            seed: 0,
        }
    }
}

/// Streams the radar-side update may use; the SDMA baseline leaves the
/// common column at zero.
fn active_streams(scenario: &Scenario, method: Method) -> std::ops::Range<usize> {
    match method {
        Method::Rsma => 0..scenario.num_streams(),
        Method::Sdma => 1..scenario.num_streams(),
    }
}

/// The relaxed u-update as an SDP, with the bookkeeping needed to map its
/// solution back to precoder units.
#[derive(Debug, Clone)]
pub struct SdrProblem {
    pub sdp: SdpProblem,
    streams: std::ops::Range<usize>,
    num_antennas: usize,
    total_streams: usize,
    /// Variables are normalised by P_t (matrices) and √P_t (vectors).
    power_scale: f64,
    pattern_weight: f64,
    peak_desired: f64,
}

/// Solution of the relaxation in physical units.
#[derive(Debug, Clone)]
pub struct SdrLifting {
    /// Lifted stream blocks U_i (N_t × N_t), zero for inactive streams.
    pub stream_blocks: Vec<CMatrix>,
    /// Linear copy p_u reshaped to N_t × (K+1).
    pub linear_copy: CMatrix,
    pub pattern_scale: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub min_eigenvalue: f64,
    /// Raw solver point and equality multipliers, kept for the dual bound.
    pub point: DVector<f64>,
    pub multipliers: DVector<f64>,
}

impl SdrLifting {
    /// Full N_t(K+1) lifting completed with off-diagonal blocks p_i p_jᴴ.
    pub fn full_lifting(&self) -> CMatrix {
        let nt = self.linear_copy.nrows();
        let s = self.linear_copy.ncols();
        let p = stack(&self.linear_copy);
        let mut u = &p * p.adjoint();
        for i in 0..s {
            let pi = self.linear_copy.column(i);
            let resid = &self.stream_blocks[i] - pi * pi.adjoint();
            let mut view = u.view_mut((i * nt, i * nt), (nt, nt));
            view += resid;
        }
        u
    }
}

/// vec(P) with stream columns stacked.
fn stack(p: &CMatrix) -> CVector {
    CVector::from_iterator(p.len(), p.iter().copied())
}

fn unstack(v: &CVector, nt: usize, s: usize) -> CMatrix {
    CMatrix::from_iterator(nt, s, v.iter().copied())
}

pub fn build_sdr(
    scenario: &Scenario,
    method: Method,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
) -> Result<SdrProblem> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!("lambda must be nonnegative, got {lambda}")));
    }
    if !(rho > 0.0) {
        return Err(invalid(format!("penalty must be positive, got {rho}")));
    }
    let nt = scenario.num_antennas;
    check_dim("target rows", nt, target.nrows())?;
    check_dim("target columns", scenario.num_streams(), target.ncols())?;
    let streams = active_streams(scenario, method);
    let num_blocks = streams.len();
    let m = nt + 1;
    let block_len = hvec_len(m);

    let mut cones = vec![Cone::Nonnegative(1)];
    cones.extend(std::iter::repeat_n(Cone::Hermitian(m), num_blocks));
    let mut sdp = SdpProblem::new(cones);
    let n = sdp.dim();
    let s = scenario.power_budget;
    let alpha_shift = ALPHA_MIN / s;

    // Embeds an N_t × N_t (or border) Hermitian functional into a block slot.
    let place = |row: &mut DVector<f64>, block: usize, g: &CMatrix| {
        let off = 1 + block * block_len;
        for (i, v) in hvec(g).into_iter().enumerate() {
            row[off + i] += v;
        }
    };

    // Pattern term: λ s² Σ_m (P_d α̂ − Σ_i a_mᴴ Û_i a_m)².
    let steering = scenario.steering_matrix();
    let weight = lambda * s * s;
    let mut pattern_constant = 0.0;
    if weight > 0.0 {
        let mut q = DMatrix::zeros(n, n);
        let mut lin = DVector::zeros(n);
        let mut constant = 0.0;
        for (mi, &pd) in scenario.desired_pattern.iter().enumerate() {
            let a = steering.column(mi);
            let mut g = CMatrix::zeros(m, m);
            g.view_mut((0, 0), (nt, nt)).copy_from(&(a * a.adjoint()));
            let mut ell = DVector::zeros(n);
            ell[0] = pd;
            for b in 0..num_blocks {
                place(&mut ell, b, &(-&g));
            }
            let e = pd * alpha_shift;
            q.ger(2.0 * weight, &ell, &ell, 1.0);
            lin.axpy(2.0 * weight * e, &ell, 1.0);
            constant += weight * e * e;
        }
        sdp.set_quadratic(q)?;
        *sdp.linear_mut() += lin;
        pattern_constant = constant;
    }

    // Proximal term: (ρ/2)(s Σ tr Û_i − 2√s Re(tᴴp̂) + ‖t‖²).
    let mut lin = DVector::zeros(n);
    let mut top = CMatrix::zeros(m, m);
    for d in 0..nt {
        top[(d, d)] = Complex64::new(1.0, 0.0);
    }
    for (b, stream) in streams.clone().enumerate() {
        place(&mut lin, b, &(&top * Complex64::new(0.5 * rho * s, 0.0)));
        let mut g = CMatrix::zeros(m, m);
        for d in 0..nt {
            let t = target[(d, stream)];
            g[(d, nt)] = t * 0.5;
            g[(nt, d)] = t.conj() * 0.5;
        }
        place(&mut lin, b, &(&g * Complex64::new(-rho * s.sqrt(), 0.0)));
    }
    *sdp.linear_mut() += lin;
    let prox_const = 0.5 * rho * (0..scenario.num_streams())
        .map(|i| target.column(i).norm_squared())
        .sum::<f64>();
    sdp.set_constant(pattern_constant + prox_const);

    // Per-antenna power: Σ_i Û_i[d, d] = 1/N_t.
    for d in 0..nt {
        let mut row = DVector::zeros(n);
        let mut g = CMatrix::zeros(m, m);
        g[(d, d)] = Complex64::new(1.0, 0.0);
        for b in 0..num_blocks {
            place(&mut row, b, &g);
        }
        sdp.add_equality(row, 1.0 / nt as f64)?;
    }
    // Schur corner fixed to one.
    for b in 0..num_blocks {
        let mut row = DVector::zeros(n);
        let mut g = CMatrix::zeros(m, m);
        g[(nt, nt)] = Complex64::new(1.0, 0.0);
        place(&mut row, b, &g);
        sdp.add_equality(row, 1.0)?;
    }

    Ok(SdrProblem {
        sdp,
        streams,
        num_antennas: nt,
        total_streams: scenario.num_streams(),
        power_scale: s,
        pattern_weight: weight,
        peak_desired: scenario.desired_pattern.iter().copied().fold(0.0, f64::max),
    })
}

impl SdrProblem {
    /// Stacked SDP point corresponding to a rank-one precoder.
    pub fn lift(&self, precoders: &CMatrix, alpha: f64) -> DVector<f64> {
        let nt = self.num_antennas;
        let m = nt + 1;
        let block_len = hvec_len(m);
        let mut x = DVector::zeros(self.sdp.dim());
        x[0] = ((alpha - ALPHA_MIN) / self.power_scale).max(0.0);
        let inv = 1.0 / self.power_scale.sqrt();
        for (b, stream) in self.streams.clone().enumerate() {
            let mut w = CVector::zeros(m);
            for d in 0..nt {
                w[d] = precoders[(d, stream)] * inv;
            }
            w[nt] = Complex64::new(1.0, 0.0);
            let v = hvec(&(&w * w.adjoint()));
            x.rows_mut(1 + b * block_len, block_len).copy_from_slice(&v);
        }
        x
    }

    pub fn solve(&self, settings: &SdpSettings) -> Result<SdrLifting> {
        let sol = self.sdp.solve(settings)?;
        let nt = self.num_antennas;
        let s = self.power_scale;
        let mut blocks = vec![CMatrix::zeros(nt, nt); self.total_streams];
        let mut copy = CMatrix::zeros(nt, self.total_streams);
        for (b, stream) in self.streams.clone().enumerate() {
            let w = sol.blocks[1 + b].as_hermitian().expect("hermitian block");
            blocks[stream] = w.view((0, 0), (nt, nt)) * Complex64::new(s, 0.0);
            for d in 0..nt {
                copy[(d, stream)] = w[(d, nt)] * s.sqrt();
            }
        }
        let alpha = sol.blocks[0].as_scalars().expect("scale")[0] * s + ALPHA_MIN;
        Ok(SdrLifting {
            stream_blocks: blocks,
            linear_copy: copy,
            pattern_scale: alpha,
            objective: sol.objective,
            status: sol.status,
            iterations: sol.iterations,
            min_eigenvalue: sol.min_eigenvalue * s,
            point: sol.x,
            multipliers: sol.multipliers,
        })
    }

    /// Certified lower bound on the optimum of the relaxation, given the
    /// objective of any feasible point.
    ///
    /// Every block has trace at most 2 (the power rows sum to one over all
    /// blocks, the corner is one). The scale is bounded on the sublevel set
    /// of `incumbent`: both objective terms are nonnegative and the lifted
    /// pattern never exceeds N_t, so a larger α̂ alone would cost more.
    pub fn lower_bound(&self, lifting: &SdrLifting, incumbent: f64) -> Result<f64> {
        let mut x = lifting.point.clone();
        check_dim("lifting point", self.sdp.dim(), x.len())?;
        let q = self.sdp.quadratic();
        if q[(0, 0)] > 0.0 {
            let g0 = q.row(0).dot(&x.transpose()) + self.sdp.linear()[0];
            x[0] = (x[0] - g0 / q[(0, 0)]).max(0.0);
        }
        let alpha_bound = if self.pattern_weight > 0.0 && self.peak_desired > 0.0 {
            (self.num_antennas as f64 + (incumbent.max(0.0) / self.pattern_weight).sqrt()) / self.peak_desired
        } else {
            f64::INFINITY
        };
        let mut sizes = vec![alpha_bound];
        sizes.extend(std::iter::repeat_n(2.0, self.streams.len()));
        self.sdp.dual_bound(&x, &lifting.multipliers, &sizes)
    }
}

/// Rescales every row of `p` (restricted to `streams`) to squared norm
/// `row_power`; all-zero rows become uniform-magnitude, zero-phase rows.
pub fn repair_rows(p: &mut CMatrix, row_power: f64, streams: std::ops::Range<usize>) {
    let target = row_power.sqrt();
    let width = streams.len() as f64;
    for d in 0..p.nrows() {
        let norm = streams.clone().map(|i| p[(d, i)].norm_sqr()).sum::<f64>().sqrt();
        for i in 0..p.ncols() {
            if !streams.contains(&i) {
                p[(d, i)] = Complex64::new(0.0, 0.0);
            } else if norm > 1e-300 {
                p[(d, i)] *= target / norm;
            } else {
                p[(d, i)] = Complex64::new(target / width.sqrt(), 0.0);
            }
        }
    }
}

/// λ = 0 closed form: each antenna row of the target rescaled to √(P_t/N_t).
pub fn row_projection(scenario: &Scenario, method: Method, target: &CMatrix) -> CMatrix {
    let mut p = target.clone();
    repair_rows(&mut p, scenario.antenna_power(), active_streams(scenario, method));
    p
}

/// True u-update objective with the scale optimised out; returns (value, α).
pub fn u_objective(
    scenario: &Scenario,
    steering: &CMatrix,
    precoders: &CMatrix,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
) -> (f64, f64) {
    let pattern = radar::total_pattern(steering, precoders);
    let alpha = radar::optimal_scale_for_pattern(&scenario.desired_pattern, &pattern).unwrap_or(ALPHA_MIN);
    let mse = radar::squared_deviation(alpha, &scenario.desired_pattern, &pattern);
    (lambda * mse + 0.5 * rho * (precoders - target).norm_squared(), alpha)
}

/// Objective of the u-update for an explicit scale α.
pub fn u_objective_at(
    scenario: &Scenario,
    steering: &CMatrix,
    precoders: &CMatrix,
    alpha: f64,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
) -> f64 {
    let pattern = radar::total_pattern(steering, precoders);
    lambda * radar::squared_deviation(alpha, &scenario.desired_pattern, &pattern)
        + 0.5 * rho * (precoders - target).norm_squared()
}

/// Rotates each stream column by the phase that best aligns it with the
/// target; the pattern and row powers are unchanged.
fn align_phases(p: &mut CMatrix, target: &CMatrix) {
    for i in 0..p.ncols() {
        let inner = target.column(i).dotc(&p.column(i));
        if inner.norm() > 0.0 {
            let rot = Complex64::from_polar(1.0, -inner.arg());
            for d in 0..p.nrows() {
                p[(d, i)] *= rot;
            }
        }
    }
}

/// Outcome of the rank-one extraction.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub precoders: CMatrix,
    pub pattern_scale: f64,
    pub objective: f64,
    /// Objective of the repaired linear copy alone.
    pub linear_copy_objective: f64,
    pub candidates_evaluated: usize,
}

/// Builds candidates from the lifting, repairs them to exact per-antenna
/// power and keeps the best, then refines it by projected gradient.
#[allow(clippy::too_many_arguments)]
pub fn extract_rank_one(
    lifting: &SdrLifting,
    scenario: &Scenario,
    method: Method,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
    num_randomizations: usize,
    seed: u64,
    refine_iters: usize,
) -> Result<Extraction> {
    let nt = scenario.num_antennas;
    let s = scenario.num_streams();
    let streams = active_streams(scenario, method);
    let steering = scenario.steering_matrix();
    let row_power = scenario.antenna_power();

    let full = lifting.full_lifting();
    let eig = SymmetricEigen::new(full.clone());
    let lam_min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(1.0);
    if lam_min < -1e-6 * scale {
        return Err(Error::NotPsd { min_eigenvalue: lam_min });
    }

    let mut candidates: Vec<CMatrix> = vec![lifting.linear_copy.clone()];
    let top = eig.eigenvalues.imax();
    let lead = eig.eigenvectors.column(top) * Complex64::new(eig.eigenvalues[top].max(0.0).sqrt(), 0.0);
    candidates.push(unstack(&lead.into_owned(), nt, s));
    if num_randomizations > 0 {
        let sqrt_u = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..num_randomizations {
            let z = complex_gaussian_vector(nt * s, &mut rng);
            candidates.push(unstack(&(&sqrt_u * z), nt, s));
        }
    }

    let evaluate = |c: &CMatrix| -> (CMatrix, f64) {
        let mut p = c.clone();
        repair_rows(&mut p, row_power, streams.clone());
        align_phases(&mut p, target);
        let (obj, _) = u_objective(scenario, &steering, &p, target, rho, lambda);
        (p, obj)
    };

    let mut repaired_copy = lifting.linear_copy.clone();
    repair_rows(&mut repaired_copy, row_power, streams.clone());
    let linear_copy_objective = u_objective(scenario, &steering, &repaired_copy, target, rho, lambda).0;

    let (mut best, mut best_obj) = evaluate(&candidates[0]);
    for c in &candidates[1..] {
        let (p, obj) = evaluate(c);
        if obj < best_obj {
            best = p;
            best_obj = obj;
        }
    }

    let (refined, refined_obj) = refine(scenario, &steering, best, best_obj, target, rho, lambda, streams, refine_iters);
    let (objective, alpha) = u_objective(scenario, &steering, &refined, target, rho, lambda);
    debug_assert!(objective <= refined_obj + 1e-9 * refined_obj.abs().max(1.0));
    Ok(Extraction {
        precoders: refined,
        pattern_scale: alpha,
        objective,
        linear_copy_objective,
        candidates_evaluated: candidates.len(),
    })
}

/// Projected gradient on the product of antenna-row spheres, accepting
/// only strict decreases.
#[allow(clippy::too_many_arguments)]
fn refine(
    scenario: &Scenario,
    steering: &CMatrix,
    mut p: CMatrix,
    mut obj: f64,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
    streams: std::ops::Range<usize>,
    iters: usize,
) -> (CMatrix, f64) {
    let row_power = scenario.antenna_power();
    let mut step = 1.0 / rho;
    let pattern_term = |x: &CMatrix| u_objective(scenario, steering, x, target, 0.0, lambda).0;
    for _ in 0..iters {
        let projected = steering.adjoint() * &p;
        let pattern: Vec<f64> = projected
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let alpha = radar::optimal_scale_for_pattern(&scenario.desired_pattern, &pattern).unwrap_or(ALPHA_MIN);
        // ∇ = 4λ Σ_m (B_m − αP_d) a_m a_mᴴ p + ρ(p − t)
        let mut weighted = projected;
        for (mut row, (d, b)) in weighted
            .row_iter_mut()
            .zip(scenario.desired_pattern.iter().zip(&pattern))
        {
            row *= Complex64::new(4.0 * lambda * (b - alpha * d), 0.0);
        }
        let grad = steering * weighted + (&p - target) * Complex64::new(rho, 0.0);

        // Near the optimum the objective itself stops resolving the step, so
        // the proximal part of the change is taken in difference form,
        // ½ρ(‖x−t‖² − ‖p−t‖²) = ½ρ Re⟨x−p, x+p−2t⟩, and ties are accepted.
        let pattern_part = pattern_term(&p);
        let mut progressed = false;
        let mut trial_step = (step * 2.0).min(1.0 / rho);
        for _ in 0..40 {
            let mut trial = &p - &grad * Complex64::new(trial_step, 0.0);
            repair_rows(&mut trial, row_power, streams.clone());
            let prox_change = 0.5 * rho * (&trial - &p).dotc(&(&trial + &p - target * Complex64::new(2.0, 0.0))).re;
            let change = pattern_term(&trial) - pattern_part + prox_change;
            if change <= 0.0 {
                let (val, _) = u_objective(scenario, steering, &trial, target, rho, lambda);
                let moved = (&trial - &p).norm();
                progressed = -change > 1e-13 * obj.abs() || moved > 1e-12 * p.norm();
                p = trial;
                obj = val;
                step = trial_step;
                break;
            }
            trial_step *= 0.5;
        }
        if !progressed {
            break;
        }
    }
    (p, obj)
}

/// Result of one radar-side update.
#[derive(Debug, Clone)]
pub struct UUpdate {
    pub precoders: CMatrix,
    pub pattern_scale: f64,
    pub objective: f64,
    pub sdp_objective: f64,
    /// Certified lower bound on the relaxation's optimum.
    pub sdp_lower_bound: f64,
    pub linear_copy_objective: f64,
    pub sdp_status: SolveStatus,
    pub sdp_iterations: usize,
}

/// Radar-side update toward D_p v + d.
#[allow(clippy::too_many_arguments)]
pub fn solve_u_subproblem(
    scenario: &Scenario,
    method: Method,
    v: &CMatrix,
    dual: &CMatrix,
    rho: f64,
    lambda: f64,
    settings: &SdrSettings,
    warm_start: Option<(&CMatrix, f64)>,
) -> Result<UUpdate> {
    check_dim("v precoder columns", scenario.num_streams(), v.ncols())?;
    check_dim("dual columns", scenario.num_streams(), dual.ncols())?;
    let target = v + dual;
    solve_u_for_target(scenario, method, &target, rho, lambda, settings, warm_start)
}

pub fn solve_u_for_target(
    scenario: &Scenario,
    method: Method,
    target: &CMatrix,
    rho: f64,
    lambda: f64,
    settings: &SdrSettings,
    warm_start: Option<(&CMatrix, f64)>,
) -> Result<UUpdate> {
    let problem = build_sdr(scenario, method, target, rho, lambda)?;
    let mut sdp_settings = settings.sdp.clone();
    if let Some((p0, alpha0)) = warm_start {
        sdp_settings.initial_point = Some(problem.lift(p0, alpha0));
    }
    let lifting = problem.solve(&sdp_settings)?;
    if !lifting.objective.is_finite() {
        return Err(Error::Solver {
            solver: "sdr",
            detail: format!("non-finite SDP objective after {} iterations", lifting.iterations),
        });
    }
    let extraction = extract_rank_one(
        &lifting,
        scenario,
        method,
        target,
        rho,
        lambda,
        settings.num_randomizations,
        settings.seed,
        settings.refine_iters,
    )?;
    let sdp_lower_bound = problem.lower_bound(&lifting, extraction.objective)?;
    Ok(UUpdate {
        sdp_lower_bound,
        precoders: extraction.precoders,
        pattern_scale: extraction.pattern_scale,
        objective: extraction.objective,
        sdp_objective: lifting.objective,
        linear_copy_objective: extraction.linear_copy_objective,
        sdp_status: lifting.status,
        sdp_iterations: lifting.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_channels, ScenarioConfig};
    use approx::assert_abs_diff_eq;

    fn scenario(seed: u64) -> Scenario {
        ScenarioConfig::default().with_seed(seed).build().unwrap()
    }

    fn random_target(seed: u64, scale: f64) -> CMatrix {
        CMatrix::from_columns(&generate_channels(3, 4, seed)) * Complex64::new(scale, 0.0)
    }

    #[test]
    fn rank_one_points_are_feasible_for_the_relaxation() {
        let s = scenario(1);
        let t = random_target(2, 3.0);
        let prob = build_sdr(&s, Method::Rsma, &t, 1.0, 1e-3).unwrap();
        let p = row_projection(&s, Method::Rsma, &t);
        let x = prob.lift(&p, 2.0);
        assert!(prob.sdp.equality_residual(&x) < 1e-12);
        let steering = s.steering_matrix();
        let direct = u_objective_at(&s, &steering, &p, 2.0, &t, 1.0, 1e-3);
        let lifted = prob.sdp.objective_value(&x);
        assert!((direct - lifted).abs() < 1e-8 * direct.abs().max(1.0), "{direct} vs {lifted}");
    }

    #[test]
    fn zero_lambda_leaves_only_the_prox_term() {
        let s = scenario(1);
        let t = random_target(3, 2.0);
        let prob = build_sdr(&s, Method::Rsma, &t, 1.0, 0.0).unwrap();
        let p = row_projection(&s, Method::Rsma, &t);
        let x = prob.lift(&p, 5.0);
        assert_abs_diff_eq!(prob.sdp.objective_value(&x), 0.5 * (&p - &t).norm_squared(), epsilon = 1e-9);
    }

    #[test]
    fn single_antenna_single_stream_power_is_pinned() {
        let s = ScenarioConfig {
            num_antennas: 1,
            num_users: 1,
            ..ScenarioConfig::default()
        }
        .build()
        .unwrap();
        let t = CMatrix::from_element(1, 2, Complex64::new(0.3, 0.1));
        let out = solve_u_for_target(&s, Method::Sdma, &t, 1.0, 0.0, &SdrSettings::default(), None).unwrap();
        assert_abs_diff_eq!(out.precoders[(0, 1)].norm_sqr(), s.power_budget, epsilon = 1e-9);
        assert_eq!(out.precoders[(0, 0)].norm(), 0.0);
    }

    #[test]
    fn zero_lambda_matches_closed_form() {
        let s = scenario(4);
        for seed in 0..5 {
            let t = random_target(100 + seed, 2.5);
            let out = solve_u_for_target(&s, Method::Rsma, &t, 1.0, 0.0, &SdrSettings::default(), None).unwrap();
            let closed = row_projection(&s, Method::Rsma, &t);
            assert!((&out.precoders - &closed).camax() < 1e-8);
        }
    }

    #[test]
    fn feasible_target_is_returned_unchanged() {
        let s = scenario(4);
        let t = row_projection(&s, Method::Rsma, &random_target(7, 1.0));
        let out = solve_u_for_target(&s, Method::Rsma, &t, 1.0, 0.0, &SdrSettings::default(), None).unwrap();
        assert!((&out.precoders - &t).camax() < 1e-8);
    }

    #[test]
    fn zero_rows_become_uniform() {
        let mut p = CMatrix::zeros(2, 3);
        p[(0, 1)] = Complex64::new(2.0, 0.0);
        repair_rows(&mut p, 4.0, 0..3);
        assert_abs_diff_eq!(p[(0, 1)].re, 2.0);
        for i in 0..3 {
            assert_abs_diff_eq!(p[(1, i)].re, 2.0 / 3f64.sqrt(), epsilon = 1e-15);
            assert_eq!(p[(1, i)].im, 0.0);
        }
    }

    #[test]
    fn output_is_bounded_by_relaxation_and_linear_copy() {
        let s = scenario(9);
        let t = random_target(11, 3.0);
        let out = solve_u_for_target(&s, Method::Rsma, &t, 1.0, 1e-3, &SdrSettings::default(), None).unwrap();
        let tol = 1e-5 * out.objective.abs().max(1.0);
        assert!(out.objective + tol >= out.sdp_objective, "{} < {}", out.objective, out.sdp_objective);
        assert!(out.sdp_lower_bound <= out.objective);
        // The certificate pays for the solver's dual residual.
        let slack = out.sdp_objective - out.sdp_lower_bound;
        assert!(slack <= 1e-4 * out.objective.abs(), "{} vs {}", out.sdp_lower_bound, out.sdp_objective);
        assert!(out.objective <= out.linear_copy_objective + 1e-12);
        for e in radar::per_antenna_power(&out.precoders) {
            assert!((e - s.antenna_power()).abs() <= 1e-10 * s.antenna_power());
        }
    }

    #[test]
    fn deterministic_without_randomization() {
        let s = scenario(9);
        let t = random_target(12, 3.0);
        let settings = SdrSettings {
            num_randomizations: 0,
            ..SdrSettings::default()
        };
        let a = solve_u_for_target(&s, Method::Rsma, &t, 1.0, 1e-3, &settings, None).unwrap();
        let b = solve_u_for_target(&s, Method::Rsma, &t, 1.0, 1e-3, &settings, None).unwrap();
        assert_eq!(a.precoders, b.precoders);
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = scenario(1);
        let t = random_target(1, 1.0);
        assert!(build_sdr(&s, Method::Rsma, &t, 1.0, -1.0).is_err());
        assert!(build_sdr(&s, Method::Rsma, &t, 0.0, 1.0).is_err());
        assert!(build_sdr(&s, Method::Rsma, &CMatrix::zeros(3, 3), 1.0, 1.0).is_err());
    }
}
