//! Log-barrier interior-point method for small convex programs with a
//! quadratic objective, linear inequalities and at most one convex
//! quadratic constraint.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min ½vᵀPv + cᵀv` s.t. `A v ≤ b` and optionally `vᵀQv ≤ ε`.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub p: Option<DMatrix<f64>>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub quad: Option<(DMatrix<f64>, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierOptions {
    pub t0: f64,
    pub growth: f64,
    /// Stop once the barrier's duality-gap bound `constraints / t` is below this.
    pub gap_tol: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            t0: 1.0,
            growth: 20.0,
            gap_tol: 1e-8,
            max_newton: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub v: DVector<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

impl ConvexProgram {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        let lin = self.c.dot(v);
        match &self.p {
            Some(p) => lin + 0.5 * v.dot(&(p * v)),
            None => lin,
        }
    }

    fn constraint_count(&self) -> usize {
        self.a.nrows() + usize::from(self.quad.is_some())
    }

    /// Slacks of every constraint; `None` if some slack is not positive.
    fn slacks(&self, v: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
        let s = &self.b - &self.a * v;
        if s.iter().any(|x| !(*x > 0.0)) {
            return None;
        }
        let sq = match &self.quad {
            Some((q, eps)) => {
                let r = eps - v.dot(&(q * v));
                if !(r > 0.0) {
                    return None;
                }
                r
            }
            None => f64::INFINITY,
        };
        Some((s, sq))
    }

    fn barrier_value(&self, t: f64, v: &DVector<f64>) -> Option<f64> {
        let (s, sq) = self.slacks(v)?;
        let mut phi = t * self.objective(v) - s.iter().map(|x| x.ln()).sum::<f64>();
        if self.quad.is_some() {
            phi -= sq.ln();
        }
        Some(phi)
    }

    pub fn is_strictly_feasible(&self, v: &DVector<f64>) -> bool {
        self.slacks(v).is_some()
    }
}

pub fn minimize(
    prog: &ConvexProgram,
    start: &DVector<f64>,
    opts: &BarrierOptions,
) -> Result<BarrierSolution> {
    let n = prog.dim();
    if start.len() != n {
        return Err(Error::Dimension {
            what: "barrier start",
            expected: n,
            got: start.len(),
        });
    }
    if !prog.is_strictly_feasible(start) {
        return Err(Error::InvalidArgument(
            "barrier start point is not strictly feasible".into(),
        ));
    }
    let mut v = start.clone();
    let mut t = opts.t0;
    let mut steps = 0;
    let m = prog.constraint_count().max(1) as f64;
    loop {
        // Newton centering for fixed t.
        let mut inner = 0;
        loop {
            let (s, sq) = prog.slacks(&v).expect("iterate stays interior");
            let mut grad = prog.c.clone() * t;
            let mut hess = match &prog.p {
                Some(p) => {
                    grad += p * &v * t;
                    p * t
                }
                None => DMatrix::zeros(n, n),
            };
            let inv = s.map(|x| 1.0 / x);
            grad += prog.a.tr_mul(&inv);
            let mut scaled = prog.a.clone();
            for (i, w) in inv.iter().enumerate() {
                scaled.row_mut(i).scale_mut(*w);
            }
            hess += scaled.tr_mul(&scaled);
            if let Some((q, _)) = &prog.quad {
                let dq = q * &v * 2.0;
                grad += &dq / sq;
                hess += q * (2.0 / sq) + &dq * dq.transpose() / (sq * sq);
            }
            let step = newton_direction(&hess, &grad)?;
            let decrement = -grad.dot(&step);
            let phi0 = prog.barrier_value(t, &v).expect("interior");
            if decrement / 2.0 <= 1e-9 * phi0.abs().max(1.0) {
                break;
            }
            let mut alpha = 1.0;
            let mut gain = 0.0;
            while alpha > 1e-16 {
                let cand = &v + &step * alpha;
                if let Some(phi) = prog.barrier_value(t, &cand) {
                    if phi <= phi0 - 0.25 * alpha * decrement {
                        v = cand;
                        gain = phi0 - phi;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            steps += 1;
            inner += 1;
            // Stalled: round-off dominates the remaining decrease.
            if gain <= 1e-12 * phi0.abs().max(1.0) || inner >= 100 {
                break;
            }
            if steps > opts.max_newton {
                return Err(Error::NotConverged {
                    what: "barrier method",
                    iterations: steps,
                });
            }
        }
        if m / t < opts.gap_tol {
            break;
        }
        t *= opts.growth;
    }
    Ok(BarrierSolution {
        objective: prog.objective(&v),
        v,
        newton_steps: steps,
    })
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = hess.clone().cholesky() {
        return Ok(-ch.solve(grad));
    }
    let scale = hess.diagonal().amax().max(1e-300);
    let mut shift = 1e-14 * scale;
    for _ in 0..10 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += shift;
        }
        if let Some(ch) = h.cholesky() {
            return Ok(-ch.solve(grad));
        }
        shift *= 100.0;
    }
    Err(Error::Singular("barrier Newton system"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_program_in_box() {
        // min −x − y in the unit box with x + y ≤ 1.5
        let prog = ConvexProgram {
            p: None,
            c: DVector::from_vec(vec![-1.0, -1.0]),
            a: DMatrix::from_row_slice(5, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 1.0, 1.0]),
            b: DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 1.5]),
            quad: None,
        };
        let s = minimize(&prog, &DVector::zeros(2), &BarrierOptions::default()).unwrap();
        assert_relative_eq!(s.objective, -1.5, epsilon = 1e-7);
    }

    #[test]
    fn quadratic_constraint_disc() {
        // max x on the disc x² + y² ≤ 4
        let prog = ConvexProgram {
            p: None,
            c: DVector::from_vec(vec![-1.0, 0.0]),
            a: DMatrix::zeros(0, 2),
            b: DVector::zeros(0),
            quad: Some((DMatrix::identity(2, 2), 4.0)),
        };
        let s = minimize(&prog, &DVector::zeros(2), &BarrierOptions::default()).unwrap();
        assert_relative_eq!(s.v[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_objective_with_active_constraint() {
        // min (x−3)² s.t. x ≤ 1 → x = 1
        let prog = ConvexProgram {
            p: Some(DMatrix::from_element(1, 1, 2.0)),
            c: DVector::from_vec(vec![-6.0]),
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_vec(vec![1.0]),
            quad: None,
        };
        let s = minimize(
            &prog,
            &DVector::from_vec(vec![0.0]),
            &BarrierOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(s.v[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn infeasible_start_rejected() {
        let prog = ConvexProgram {
            p: None,
            c: DVector::from_vec(vec![1.0]),
            a: DMatrix::from_element(1, 1, 1.0),
            b: DVector::from_vec(vec![0.0]),
            quad: None,
        };
        assert!(minimize(&prog, &DVector::zeros(1), &BarrierOptions::default()).is_err());
    }
}
