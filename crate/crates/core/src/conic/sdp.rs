use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use super::vec::{hmat, hvec, smat, svec, svec_len};
use super::{check_psd, SolveStatus, DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE};
use crate::error::{check_dim, invalid, Error, Result};

/// One factor of the cone the variable vector lives in. Factors are laid
/// out consecutively in the order given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Free(usize),
    Nonnegative(usize),
    /// Real symmetric PSD block of the given order, stored with [`svec`].
    Symmetric(usize),
    /// Hermitian PSD block of the given order, stored with [`hvec`].
    Hermitian(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Nonnegative(n) => n,
            Cone::Symmetric(m) => svec_len(m),
            Cone::Hermitian(m) => m * m,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn project(&self, v: &mut [f64]) -> f64 {
        match *self {
            Cone::Free(_) => 0.0,
            Cone::Nonnegative(_) => {
                v.iter_mut().for_each(|x| *x = x.max(0.0));
                0.0
            }
            Cone::Symmetric(m) => {
                let eig = SymmetricEigen::new(smat(v, m));
                let lam_min = eig.eigenvalues.min();
                let clipped = eig.eigenvalues.map(|l| l.max(0.0));
                let x = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
                v.copy_from_slice(&svec(&x));
                lam_min
            }
            Cone::Hermitian(m) => {
                let eig = SymmetricEigen::new(hmat(v, m));
                let lam_min = eig.eigenvalues.min();
                let clipped = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0), 0.0));
                let x = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.adjoint();
                v.copy_from_slice(&hvec(&x));
                lam_min
            }
        }
    }
}

/// Value of one cone factor in a solution.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockValue {
    Free(Vec<f64>),
    Nonnegative(Vec<f64>),
    Symmetric(DMatrix<f64>),
    Hermitian(DMatrix<Complex64>),
}

impl BlockValue {
    pub fn as_symmetric(&self) -> Option<&DMatrix<f64>> {
        match self {
            BlockValue::Symmetric(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_hermitian(&self) -> Option<&DMatrix<Complex64>> {
        match self {
            BlockValue::Hermitian(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_scalars(&self) -> Option<&[f64]> {
        match self {
            BlockValue::Free(v) | BlockValue::Nonnegative(v) => Some(v),
            _ => None,
        }
    }
}

/// minimise ½xᵀQx + cᵀx + k  s.t. Ax = b, x ∈ K₁ × … × K_r.
///
/// Matrix variables are PSD blocks; scalar auxiliaries are free or
/// nonnegative factors. Linear functionals of a block X are expressed via
/// the vectorisation of their Frobenius representative.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
    quadratic: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
    eq_rows: Vec<DVector<f64>>,
    eq_rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SdpSettings {
    pub tolerance: f64,
    pub max_iters: usize,
    /// Initial ADMM penalty; adapted on the fly.
    pub penalty: f64,
    pub relaxation: f64,
    pub initial_point: Option<DVector<f64>>,
    pub record_trace: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
            penalty: 1.0,
            relaxation: 1.6,
            initial_point: None,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Stacked variable vector (cone-feasible iterate).
    pub x: DVector<f64>,
    pub blocks: Vec<BlockValue>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub equality_residual: f64,
    /// |primal − dual objective| surrogate, relative to 1 + |objective|.
    pub gap: f64,
    pub min_eigenvalue: f64,
    /// Equality multipliers ν, in the units of the unscaled problem.
    pub multipliers: DVector<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub penalty: f64,
    pub objective: f64,
}

impl SdpSolution {
    /// Iterate trace as whitespace-separated text, one line per record.
    pub fn format_trace(&self) -> String {
        let mut out = String::from("iter primal dual penalty objective\n");
        for t in &self.trace {
            let _ = writeln!(
                out,
                "{} {:.6e} {:.6e} {:.3e} {:.10e}",
                t.iteration, t.primal_residual, t.dual_residual, t.penalty, t.objective
            );
        }
        out
    }
}

impl SdpProblem {
    pub fn new(cones: Vec<Cone>) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut n = 0;
        for c in &cones {
            offsets.push(n);
            n += c.len();
        }
        Self {
            cones,
            offsets,
            quadratic: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            constant: 0.0,
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// Start index of cone factor `block` in the stacked vector.
    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn linear_mut(&mut self) -> &mut DVector<f64> {
        &mut self.linear
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn set_constant(&mut self, constant: f64) {
        self.constant = constant;
    }

    /// Sets the (PSD) Hessian of the quadratic objective term.
    pub fn set_quadratic(&mut self, q: DMatrix<f64>) -> Result<()> {
        check_dim("sdp quadratic rows", self.dim(), q.nrows())?;
        check_dim("sdp quadratic cols", self.dim(), q.ncols())?;
        check_psd(&q)?;
        self.quadratic = (&q + q.transpose()) * 0.5;
        Ok(())
    }

    pub fn add_equality(&mut self, row: DVector<f64>, rhs: f64) -> Result<()> {
        check_dim("sdp equality row", self.dim(), row.len())?;
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        Ok(())
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.quadratic * x)) + self.linear.dot(x) + self.constant
    }

    pub fn equality_residual(&self, x: &DVector<f64>) -> f64 {
        self.eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .map(|(r, b)| (r.dot(x) - b).abs())
            .fold(0.0, f64::max)
    }

    /// Lagrangian lower bound on the optimal value, valid for any `x` and
    /// any equality multipliers `nu`.
    ///
    /// Convexity gives f(y) ≥ f(x) + ∇f(x)ᵀ(y − x), and for feasible y the
    /// linear part equals −νᵀb + wᵀy with w = ∇f(x) + Aᵀν. Each cone factor
    /// then contributes its worst case over the feasible set, which needs a
    /// size bound per factor: the trace for PSD blocks, the entry sum for
    /// nonnegative blocks and the largest magnitude for free blocks. An
    /// infinite size bound is allowed where w is already dual feasible.
    pub fn dual_bound(&self, x: &DVector<f64>, nu: &DVector<f64>, size_bounds: &[f64]) -> Result<f64> {
        check_dim("dual bound point", self.dim(), x.len())?;
        check_dim("dual bound multipliers", self.eq_rows.len(), nu.len())?;
        check_dim("dual bound cone sizes", self.cones.len(), size_bounds.len())?;
        let grad = &self.quadratic * x + &self.linear;
        let mut w = grad.clone();
        let mut nu_b = 0.0;
        for ((row, rhs), &m) in self.eq_rows.iter().zip(&self.eq_rhs).zip(nu.iter()) {
            w.axpy(m, row, 1.0);
            nu_b += m * rhs;
        }
        // Worst case of c·y over a factor of size `bound`, where `c` ≤ 0 is
        // the most negative direction; zero when there is none.
        let worst = |c: f64, bound: f64| if c >= 0.0 { 0.0 } else { c * bound };
        let mut bound = self.objective_value(x) - grad.dot(x) - nu_b;
        for ((cone, &off), &size) in self.cones.iter().zip(&self.offsets).zip(size_bounds) {
            let v = &w.as_slice()[off..off + cone.len()];
            bound += match *cone {
                Cone::Free(_) => worst(-v.iter().map(|c| c.abs()).sum::<f64>(), size),
                Cone::Nonnegative(_) => worst(v.iter().copied().fold(0.0, f64::min), size),
                Cone::Symmetric(m) => worst(SymmetricEigen::new(smat(v, m)).eigenvalues.min(), size),
                Cone::Hermitian(m) => worst(SymmetricEigen::new(hmat(v, m)).eigenvalues.min(), size),
            };
        }
        Ok(bound)
    }

    /// Splits a stacked vector into per-cone values.
    pub fn unpack(&self, x: &DVector<f64>) -> Vec<BlockValue> {
        self.cones
            .iter()
            .zip(&self.offsets)
            .map(|(cone, &off)| {
                let v = &x.as_slice()[off..off + cone.len()];
                match *cone {
                    Cone::Free(_) => BlockValue::Free(v.to_vec()),
                    Cone::Nonnegative(_) => BlockValue::Nonnegative(v.to_vec()),
                    Cone::Symmetric(m) => BlockValue::Symmetric(smat(v, m)),
                    Cone::Hermitian(m) => BlockValue::Hermitian(hmat(v, m)),
                }
            })
            .collect()
    }

    fn project(&self, v: &mut DVector<f64>) -> f64 {
        let mut lam_min = f64::INFINITY;
        for (cone, &off) in self.cones.iter().zip(&self.offsets) {
            let slice = &mut v.as_mut_slice()[off..off + cone.len()];
            if matches!(cone, Cone::Symmetric(_) | Cone::Hermitian(_)) {
                lam_min = lam_min.min(cone.project(slice));
            } else {
                cone.project(slice);
            }
        }
        lam_min
    }

    fn min_block_eigenvalue(&self, x: &DVector<f64>) -> f64 {
        self.unpack(x)
            .iter()
            .filter_map(|b| match b {
                BlockValue::Symmetric(m) => Some(SymmetricEigen::new(m.clone()).eigenvalues.min()),
                BlockValue::Hermitian(m) => Some(SymmetricEigen::new(m.clone()).eigenvalues.min()),
                _ => None,
            })
            .fold(0.0, f64::min)
    }

    pub fn solve_with(&self, tolerance: f64, max_iters: usize) -> Result<SdpSolution> {
        self.solve(&SdpSettings {
            tolerance,
            max_iters,
            ..SdpSettings::default()
        })
    }

    /// Operator splitting: the x-step solves the equality-constrained QP
    /// with a proximal term, the z-step projects onto the cone, followed by
    /// a scaled dual ascent. The penalty is rebalanced every 25 iterations.
    pub fn solve(&self, settings: &SdpSettings) -> Result<SdpSolution> {
        if !(settings.tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        if !(settings.penalty > 0.0) || !(settings.relaxation > 0.0 && settings.relaxation < 2.0) {
            return Err(invalid("penalty must be positive and relaxation in (0, 2)"));
        }
        let n = self.dim();
        let p = self.eq_rows.len();
        let tol = settings.tolerance;

        // Objective scaling keeps the penalty heuristics unit-free.
        let scale = self
            .linear
            .amax()
            .max(self.quadratic.amax())
            .max(1.0);
        let q = &self.quadratic / scale;
        let c = &self.linear / scale;
        let mut a = DMatrix::zeros(p, n);
        for (i, row) in self.eq_rows.iter().enumerate() {
            a.set_row(i, &row.transpose());
        }
        let b = DVector::from_vec(self.eq_rhs.clone());

        let mut z = match &settings.initial_point {
            Some(x0) => {
                check_dim("sdp initial point", n, x0.len())?;
                x0.clone()
            }
            None => DVector::zeros(n),
        };
        self.project(&mut z);
        let mut y = DVector::<f64>::zeros(n);
        let mut sigma = settings.penalty;
        let mut factor = kkt_factor(&q, &a, sigma)?;
        let mut nu = DVector::<f64>::zeros(p);
        let mut x_tilde = z.clone();
        let mut status = SolveStatus::IterationLimit;
        let mut iterations = settings.max_iters;
        let mut trace = Vec::new();
        let (mut prim, mut dual) = (f64::INFINITY, f64::INFINITY);

        for it in 0..settings.max_iters {
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(&z * sigma - &y - &c));
            rhs.rows_mut(n, p).copy_from(&b);
            let sol = factor.solve(&rhs);
            x_tilde = sol.rows(0, n).into_owned();
            nu = sol.rows(n, p).into_owned();

            let x_relaxed = &x_tilde * settings.relaxation + &z * (1.0 - settings.relaxation);
            let z_prev = z.clone();
            let mut v = &x_relaxed + &y / sigma;
            self.project(&mut v);
            z = v;
            y += (&x_relaxed - &z) * sigma;

            if it % 5 == 4 || it + 1 == settings.max_iters {
                let qx = &q * &x_tilde;
                let at_nu = a.transpose() * &nu;
                prim = (&x_tilde - &z).amax();
                dual = (&qx + &c + &at_nu + &y).amax();
                let _ = &z_prev;
                let prim_scale = x_tilde.amax().max(z.amax());
                let dual_scale = qx.amax().max(c.amax()).max(at_nu.amax()).max(y.amax());
                let obj = 0.5 * z.dot(&(&q * &z)) + c.dot(&z);
                let gap = (z.dot(&(&q * &z)) + c.dot(&z) + b.dot(&nu)).abs() / (1.0 + obj.abs());
                if settings.record_trace {
                    trace.push(TraceEntry {
                        iteration: it + 1,
                        primal_residual: prim,
                        dual_residual: dual,
                        penalty: sigma,
                        objective: obj * scale + self.constant,
                    });
                }
                if prim <= tol * (1.0 + prim_scale) && dual <= tol * (1.0 + dual_scale) && gap <= tol {
                    status = SolveStatus::Converged;
                    iterations = it + 1;
                    break;
                }
                if it % 25 == 24 {
                    let ratio = ((prim / (1e-30 + prim_scale)) / (dual / (1e-30 + dual_scale) + 1e-30)).sqrt();
                    if !(0.2..=5.0).contains(&ratio) {
                        let new_sigma = (sigma * ratio).clamp(1e-6, 1e6);
                        if new_sigma != sigma {
                            sigma = new_sigma;
                            factor = kkt_factor(&q, &a, sigma)?;
                        }
                    }
                }
            }
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::Solver {
                    solver: "sdp",
                    detail: format!("iterate diverged at iteration {it}"),
                });
            }
        }

        let gap = {
            let obj = 0.5 * z.dot(&(&q * &z)) + c.dot(&z);
            (z.dot(&(&q * &z)) + c.dot(&z) + b.dot(&nu)).abs() / (1.0 + obj.abs())
        };
        let _ = x_tilde;
        Ok(SdpSolution {
            objective: self.objective_value(&z),
            blocks: self.unpack(&z),
            min_eigenvalue: self.min_block_eigenvalue(&z),
            equality_residual: self.equality_residual(&z),
            primal_residual: prim,
            dual_residual: dual * scale,
            gap,
            status,
            iterations,
            trace,
            multipliers: nu * scale,
            x: z,
        })
    }
}

/// LU of the quasi-definite KKT matrix [[Q + σI, Aᵀ], [A, −δI]].
struct KktFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    matrix: DMatrix<f64>,
}

impl KktFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut sol = self.lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len()));
        for _ in 0..2 {
            let r = rhs - &self.matrix * &sol;
            if let Some(corr) = self.lu.solve(&r) {
                sol += corr;
            }
        }
        sol
    }
}

fn kkt_factor(q: &DMatrix<f64>, a: &DMatrix<f64>, sigma: f64) -> Result<KktFactor> {
    let n = q.nrows();
    let p = a.nrows();
    let mut k = DMatrix::zeros(n + p, n + p);
    k.view_mut((0, 0), (n, n)).copy_from(q);
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    if p > 0 {
        k.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        k.view_mut((n, 0), (p, n)).copy_from(a);
        for i in 0..p {
            k[(n + i, n + i)] = -1e-10;
        }
    }
    let lu = k.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::Solver {
            solver: "sdp",
            detail: "singular KKT matrix".into(),
        });
    }
    Ok(KktFactor { lu, matrix: k })
}
