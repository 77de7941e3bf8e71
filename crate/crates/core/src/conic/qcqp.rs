use nalgebra::{DMatrix, DVector};

use super::{check_psd, SolveStatus};
use crate::error::{check_dim, invalid, Error, Result};

/// f(x) = ½ xᵀHx + gᵀx + c.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Self {
        Self {
            hessian,
            linear,
            constant,
        }
    }

    pub fn affine(linear: DVector<f64>, constant: f64) -> Self {
        let n = linear.len();
        Self::new(DMatrix::zeros(n, n), linear, constant)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }

    fn is_affine(&self) -> bool {
        self.hessian.iter().all(|&v| v == 0.0)
    }
}

/// minimise f₀(x) s.t. fᵢ(x) ≤ 0, Ax = b with every fᵢ convex quadratic.
#[derive(Debug, Clone)]
pub struct ConvexQcqp {
    objective: Quadratic,
    inequalities: Vec<Quadratic>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Multipliers of the inequalities, in insertion order.
    pub inequality_multipliers: DVector<f64>,
    pub equality_multipliers: DVector<f64>,
    /// ‖∇f₀ + Σ zᵢ∇fᵢ + Aᵀy‖∞, relative to the objective gradient scale.
    pub stationarity: f64,
    /// maxᵢ |zᵢ fᵢ(x)|.
    pub complementarity: f64,
    /// Largest violation over inequalities and equalities.
    pub max_violation: f64,
}

impl ConvexQcqp {
    pub fn new(objective: Quadratic) -> Result<Self> {
        validate_quadratic(&objective, objective.dim())?;
        let n = objective.dim();
        Ok(Self {
            objective,
            inequalities: Vec::new(),
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn objective(&self) -> &Quadratic {
        &self.objective
    }

    pub fn inequalities(&self) -> &[Quadratic] {
        &self.inequalities
    }

    pub fn add_inequality(&mut self, constraint: Quadratic) -> Result<()> {
        validate_quadratic(&constraint, self.dim())?;
        self.inequalities.push(constraint);
        Ok(())
    }

    pub fn set_equalities(&mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<()> {
        check_dim("equality matrix columns", self.dim(), a.ncols())?;
        check_dim("equality rhs", a.nrows(), b.len())?;
        self.eq_matrix = a;
        self.eq_rhs = b;
        Ok(())
    }

    /// Largest constraint violation at `x`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let ineq = self
            .inequalities
            .iter()
            .map(|f| f.eval(x).max(0.0))
            .fold(0.0, f64::max);
        let eq = (&self.eq_matrix * x - &self.eq_rhs).amax();
        ineq.max(eq)
    }

    /// Mehrotra predictor-corrector on the slack form fᵢ(x) + sᵢ = 0.
    pub fn solve(
        &self,
        tolerance: f64,
        max_iters: usize,
        initial: Option<&DVector<f64>>,
    ) -> Result<QcqpSolution> {
        if !(tolerance > 0.0) {
            return Err(invalid("tolerance must be positive"));
        }
        let n = self.dim();
        let m = self.inequalities.len();
        let p = self.eq_matrix.nrows();
        let mut x = match initial {
            Some(x0) => {
                check_dim("initial point", n, x0.len())?;
                x0.clone()
            }
            None => DVector::zeros(n),
        };
        let mut s = DVector::from_iterator(
            m,
            self.inequalities.iter().map(|f| (-f.eval(&x)).max(1.0)),
        );
        let mut z = DVector::from_element(m, 1.0);
        let mut y = DVector::zeros(p);
        let affine: Vec<bool> = self.inequalities.iter().map(Quadratic::is_affine).collect();

        let mut status = SolveStatus::IterationLimit;
        let mut iterations = 0;
        let mut stalled = 0usize;

        for it in 0..max_iters {
            iterations = it;
            let kkt = self.residuals(&x, &s, &z, &y);
            let mu = if m > 0 { s.dot(&z) / m as f64 } else { 0.0 };
            let measures = self.measures(&x, &z, &y);
            if measures.stationarity <= tolerance
                && measures.max_violation <= tolerance
                && measures.complementarity <= tolerance
                && mu <= tolerance
            {
                status = SolveStatus::Converged;
                break;
            }
            if m > 0 && z.amax() > 1e6 && self.certifies_infeasibility(&z, &y, tolerance) {
                status = SolveStatus::Infeasible;
                break;
            }

            // Reduced Newton matrix.
            let grads: Vec<DVector<f64>> = self.inequalities.iter().map(|f| f.gradient(&x)).collect();
            let mut h = self.objective.hessian.clone();
            for i in 0..m {
                if !affine[i] {
                    h += &self.inequalities[i].hessian * z[i];
                }
                h += &grads[i] * grads[i].transpose() * (z[i] / s[i]);
            }
            let dim = n + p;
            let mut k = DMatrix::zeros(dim, dim);
            k.view_mut((0, 0), (n, n)).copy_from(&h);
            if p > 0 {
                k.view_mut((0, n), (n, p)).copy_from(&self.eq_matrix.transpose());
                k.view_mut((n, 0), (p, n)).copy_from(&self.eq_matrix);
            }
            // Degenerate directions (e.g. a non-unique optimum) leave the
            // reduced matrix singular; escalate the regularization until
            // the factorization succeeds.
            let scale = h.amax().max(1.0);
            let mut factored = None;
            for reg in [1e-14, 1e-11, 1e-8, 1e-5] {
                let mut kr = k.clone();
                for i in 0..n {
                    kr[(i, i)] += reg * scale;
                }
                for i in 0..p {
                    kr[(n + i, n + i)] -= reg * scale;
                }
                let lu = kr.clone().lu();
                if lu.is_invertible() {
                    factored = Some((kr, lu));
                    break;
                }
            }
            let Some((k, lu)) = factored else {
                return Err(Error::Solver {
                    solver: "qcqp",
                    detail: format!("singular Newton system at iteration {it}"),
                });
            };

            // (Δx, Δs, Δz, Δy)
            type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);
            let solve_dir = |rc: &DVector<f64>| -> Option<Direction> {
                // Δz = (−rc + z∘rp)/s + (z/s)∘GΔx, Δs = −rp − GΔx
                let mut rhs = DVector::zeros(dim);
                let mut top = -&kkt.dual;
                for i in 0..m {
                    let coef = (-rc[i] + z[i] * kkt.ineq[i]) / s[i];
                    top -= &grads[i] * coef;
                }
                rhs.rows_mut(0, n).copy_from(&top);
                if p > 0 {
                    rhs.rows_mut(n, p).copy_from(&(-&kkt.eq));
                }
                let mut sol = lu.solve(&rhs)?;
                // one step of iterative refinement
                let refine = &rhs - &k * &sol;
                if let Some(corr) = lu.solve(&refine) {
                    sol += corr;
                }
                let dx = sol.rows(0, n).into_owned();
                let dy = sol.rows(n, p).into_owned();
                let mut ds = DVector::zeros(m);
                let mut dz = DVector::zeros(m);
                for i in 0..m {
                    let gdx = grads[i].dot(&dx);
                    ds[i] = -kkt.ineq[i] - gdx;
                    dz[i] = (-rc[i] - z[i] * ds[i]) / s[i];
                }
                Some((dx, ds, dz, dy))
            };

            let rc_aff = s.component_mul(&z);
            let Some((_, ds_a, dz_a, _)) = solve_dir(&rc_aff) else {
                return Err(Error::Solver {
                    solver: "qcqp",
                    detail: format!("singular Newton system at iteration {it}"),
                });
            };
            let sigma = if m > 0 {
                let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
                let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
                (mu_aff / mu).clamp(0.0, 1.0).powi(3)
            } else {
                0.0
            };
            let rc = DVector::from_iterator(
                m,
                (0..m).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu),
            );
            let Some((dx, ds, dz, dy)) = solve_dir(&rc) else {
                return Err(Error::Solver {
                    solver: "qcqp",
                    detail: format!("singular Newton system at iteration {it}"),
                });
            };

            let mut alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
            let merit0 = kkt.merit(&s, &z, sigma * mu);
            let mut accepted = false;
            for _ in 0..40 {
                let xn = &x + &dx * alpha;
                let sn = &s + &ds * alpha;
                let zn = &z + &dz * alpha;
                let yn = &y + &dy * alpha;
                let r = self.residuals(&xn, &sn, &zn, &yn);
                if r.merit(&sn, &zn, sigma * mu) <= (1.0 - 1e-4 * alpha) * merit0 {
                    x = xn;
                    s = sn;
                    z = zn;
                    y = yn;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // Take a tiny step anyway so the iteration cannot cycle.
                x += &dx * alpha;
                s += &ds * alpha;
                z += &dz * alpha;
                y += &dy * alpha;
                stalled += 1;
                if stalled > 50 {
                    if m > 0 && self.certifies_infeasibility(&z, &y, tolerance) {
                        status = SolveStatus::Infeasible;
                    }
                    break;
                }
            } else {
                stalled = 0;
            }
            iterations = it + 1;
        }

        let measures = self.measures(&x, &z, &y);
        Ok(QcqpSolution {
            objective: self.objective.eval(&x),
            x,
            status,
            iterations,
            inequality_multipliers: z,
            equality_multipliers: y,
            stationarity: measures.stationarity,
            complementarity: measures.complementarity,
            max_violation: measures.max_violation,
        })
    }

    fn residuals(&self, x: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Residuals {
        let mut dual = self.objective.gradient(x);
        let mut ineq = DVector::zeros(self.inequalities.len());
        for (i, f) in self.inequalities.iter().enumerate() {
            dual += f.gradient(x) * z[i];
            ineq[i] = f.eval(x) + s[i];
        }
        if !y.is_empty() {
            dual += self.eq_matrix.transpose() * y;
        }
        let eq = &self.eq_matrix * x - &self.eq_rhs;
        Residuals { dual, ineq, eq }
    }

    fn measures(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> Measures {
        let mut dual = self.objective.gradient(x);
        let mut complementarity: f64 = 0.0;
        for (i, f) in self.inequalities.iter().enumerate() {
            dual += f.gradient(x) * z[i];
            complementarity = complementarity.max((z[i] * f.eval(x)).abs());
        }
        if !y.is_empty() {
            dual += self.eq_matrix.transpose() * y;
        }
        let scale = 1.0
            + (&self.objective.hessian * x)
                .amax()
                .max(self.objective.linear.amax());
        Measures {
            stationarity: dual.amax() / scale,
            complementarity,
            max_violation: self.violation(x),
        }
    }

    /// Checks whether the normalised multipliers prove infeasibility:
    /// min_x Σ ẑᵢ fᵢ(x) + ŷᵀ(Ax − b) > 0.
    fn certifies_infeasibility(&self, z: &DVector<f64>, y: &DVector<f64>, tolerance: f64) -> bool {
        let total = z.sum();
        if !(total > 0.0) {
            return false;
        }
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let mut c = 0.0;
        for (i, f) in self.inequalities.iter().enumerate() {
            let w = z[i] / total;
            h += &f.hessian * w;
            g += &f.linear * w;
            c += f.constant * w;
        }
        if !y.is_empty() {
            let yh = y / total;
            g += self.eq_matrix.transpose() * &yh;
            c -= yh.dot(&self.eq_rhs);
        }
        let svd = h.clone().svd(true, true);
        let Ok(xs) = svd.solve(&(-&g), 1e-12) else {
            return false;
        };
        if (&h * &xs + &g).amax() > 1e-8 * (1.0 + g.amax()) {
            return false;
        }
        let value = 0.5 * xs.dot(&(&h * &xs)) + g.dot(&xs) + c;
        value > tolerance
    }
}

struct Residuals {
    dual: DVector<f64>,
    ineq: DVector<f64>,
    eq: DVector<f64>,
}

impl Residuals {
    fn merit(&self, s: &DVector<f64>, z: &DVector<f64>, target: f64) -> f64 {
        let cent: f64 = s.iter().zip(z.iter()).map(|(a, b)| (a * b - target).powi(2)).sum();
        self.dual.norm_squared() + self.ineq.norm_squared() + self.eq.norm_squared() + cent
    }
}

struct Measures {
    stationarity: f64,
    complementarity: f64,
    max_violation: f64,
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(f64::INFINITY, f64::min)
}

fn validate_quadratic(q: &Quadratic, n: usize) -> Result<()> {
    check_dim("quadratic linear term", n, q.linear.len())?;
    check_dim("quadratic hessian rows", n, q.hessian.nrows())?;
    check_dim("quadratic hessian cols", n, q.hessian.ncols())?;
    if !q.is_affine() {
        check_psd(&q.hessian)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ident(n: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::identity(n, n) * scale
    }

    #[test]
    fn unconstrained_projection() {
        let x0 = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        // ‖x − x₀‖² = xᵀx − 2x₀ᵀx + ‖x₀‖²
        let obj = Quadratic::new(ident(3, 2.0), -&x0 * 2.0, x0.norm_squared());
        let sol = ConvexQcqp::new(obj).unwrap().solve(1e-9, 100, None).unwrap();
        assert!(sol.status.is_converged());
        for i in 0..3 {
            assert_abs_diff_eq!(sol.x[i], x0[i], epsilon = 1e-8);
        }
        assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_constraint() {
        let mut prob = ConvexQcqp::new(Quadratic::new(ident(3, 2.0), DVector::zeros(3), 0.0)).unwrap();
        prob.add_inequality(Quadratic::affine(DVector::from_vec(vec![-1.0, 0.0, 0.0]), 1.0))
            .unwrap();
        let sol = prob.solve(1e-9, 200, None).unwrap();
        assert!(sol.status.is_converged());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.x[1], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.inequality_multipliers[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn active_quadratic_constraint() {
        // min x² − 10x s.t. x² − 4 ≤ 0 → x = 2, z = 1.5
        let mut prob =
            ConvexQcqp::new(Quadratic::new(ident(1, 2.0), DVector::from_vec(vec![-10.0]), 0.0)).unwrap();
        prob.add_inequality(Quadratic::new(ident(1, 2.0), DVector::zeros(1), -4.0)).unwrap();
        let sol = prob.solve(1e-9, 200, None).unwrap();
        assert!(sol.status.is_converged());
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.inequality_multipliers[0], 1.5, epsilon = 1e-6);
    }

    #[test]
    fn equality_constrained() {
        // min ‖x‖² s.t. x₁ + x₂ = 2 → (1,1)
        let mut prob = ConvexQcqp::new(Quadratic::new(ident(2, 2.0), DVector::zeros(2), 0.0)).unwrap();
        prob.set_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0]))
            .unwrap();
        let sol = prob.solve(1e-9, 100, None).unwrap();
        assert!(sol.status.is_converged());
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        let mut prob = ConvexQcqp::new(Quadratic::new(ident(1, 2.0), DVector::zeros(1), 0.0)).unwrap();
        prob.add_inequality(Quadratic::new(ident(1, 2.0), DVector::zeros(1), 1.0)).unwrap();
        let sol = prob.solve(1e-8, 500, None).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn reports_iteration_limit() {
        let mut prob =
            ConvexQcqp::new(Quadratic::new(ident(1, 2.0), DVector::from_vec(vec![-10.0]), 0.0)).unwrap();
        prob.add_inequality(Quadratic::new(ident(1, 2.0), DVector::zeros(1), -4.0)).unwrap();
        let sol = prob.solve(1e-12, 1, None).unwrap();
        assert_eq!(sol.status, SolveStatus::IterationLimit);
    }

    #[test]
    fn rejects_nonconvex_data() {
        let bad = Quadratic::new(-ident(2, 1.0), DVector::zeros(2), 0.0);
        assert!(matches!(ConvexQcqp::new(bad), Err(Error::NotPsd { .. })));
        let obj = Quadratic::new(ident(2, 1.0), DVector::zeros(2), 0.0);
        assert!(ConvexQcqp::new(obj.clone()).unwrap().solve(0.0, 10, None).is_err());
    }
}
