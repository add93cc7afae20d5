//! Nonlinear real-power model with fixed voltage magnitudes: power flow
//! and Gauss-Newton state estimation over the lossless branch model
//! `p_ij = V_i V_j sin(θ_i − θ_j) / x_ij`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::case::PowerCase;
use crate::error::{Error, Result};
use crate::estimation::DetectorConfig;
use crate::geometry::{pattern_of_flows, CongestionPattern};
use crate::meters::{canonical_meters, Meter};
use crate::network::{build_dc_model, DcModel};

pub const AC_TOL: f64 = 1e-8;
pub const AC_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcState {
    /// Per-bus voltage magnitude (p.u.).
    pub vm: Vec<f64>,
    /// Per-bus phase angle (rad), zero at the reference bus.
    pub va: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcEstimate {
    pub state: AcState,
    pub flows_mw: Vec<f64>,
    pub pattern: CongestionPattern,
    pub statistic: f64,
    pub threshold: f64,
    pub detected: bool,
    pub iterations: usize,
    /// Objective after each accepted iteration, starting at the flat start.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    from: usize,
    to: usize,
    b: f64,
    closed: bool,
}

#[derive(Debug, Clone, Copy)]
enum Row {
    Injection(usize),
    Flow { line: usize, sign: f64 },
}

/// AC measurement functions for one topology.
#[derive(Debug, Clone)]
pub struct AcModel {
    dc: DcModel,
    lines: Vec<Line>,
    rows: Vec<Row>,
    reference: usize,
    /// State column of each bus; `None` at the reference.
    column: Vec<Option<usize>>,
    injection_row: Vec<usize>,
    active: Vec<bool>,
}

impl AcModel {
    pub fn new(case: &PowerCase) -> Result<Self> {
        let dc = build_dc_model(case)?;
        let lines = case
            .branches
            .iter()
            .map(|br| Line {
                from: case.bus_index(br.from).expect("validated"),
                to: case.bus_index(br.to).expect("validated"),
                b: br.susceptance(),
                closed: br.closed,
            })
            .collect();
        let rows: Vec<Row> = canonical_meters(case)
            .into_iter()
            .map(|m| match m {
                Meter::Injection { bus } => Row::Injection(case.bus_index(bus).expect("canonical")),
                Meter::Flow { branch, reverse } => Row::Flow {
                    line: case.branch_index(branch).expect("canonical"),
                    sign: if reverse { -1.0 } else { 1.0 },
                },
            })
            .collect();
        let column = (0..case.bus_count())
            .map(|i| case.state_column(i))
            .collect();
        let active = dc.zero_rows().iter().map(|z| !z).collect();
        let mut injection_row = vec![0; case.bus_count()];
        for (r, row) in rows.iter().enumerate() {
            if let Row::Injection(i) = row {
                injection_row[*i] = r;
            }
        }
        Ok(Self {
            injection_row,
            reference: case.reference_index(),
            dc,
            lines,
            rows,
            column,
            active,
        })
    }

    pub fn dc_model(&self) -> &DcModel {
        &self.dc
    }

    pub fn bus_count(&self) -> usize {
        self.column.len()
    }

    pub fn state_dim(&self) -> usize {
        self.dc.state_dim()
    }

    pub fn meter_count(&self) -> usize {
        self.rows.len()
    }

    /// Meters with a nonzero measurement function.
    pub fn active_meter_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    fn check_vm(&self, vm: &[f64]) -> Result<()> {
        if vm.len() != self.bus_count() {
            return Err(Error::Dimension {
                what: "voltage magnitudes",
                expected: self.bus_count(),
                got: vm.len(),
            });
        }
        if let Some(v) = vm.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "voltage magnitude {v} must be positive"
            )));
        }
        Ok(())
    }

    /// Full angle vector from the reduced state.
    pub fn angles(&self, x: &DVector<f64>) -> Vec<f64> {
        self.column
            .iter()
            .map(|c| c.map_or(0.0, |c| x[c]))
            .collect()
    }

    /// Reduced state from a full angle vector.
    pub fn reduced(&self, va: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim());
        for (i, c) in self.column.iter().enumerate() {
            if let Some(c) = c {
                x[*c] = va[i] - va[self.reference];
            }
        }
        x
    }

    /// Branch flows (p.u.) from `from` to `to`.
    pub fn flows_pu(&self, x: &DVector<f64>, vm: &[f64]) -> DVector<f64> {
        let th = self.angles(x);
        DVector::from_iterator(
            self.lines.len(),
            self.lines.iter().map(|l| {
                if l.closed {
                    vm[l.from] * vm[l.to] * l.b * (th[l.from] - th[l.to]).sin()
                } else {
                    0.0
                }
            }),
        )
    }

    /// Meter values `h(x)` (p.u.).
    pub fn measure(&self, x: &DVector<f64>, vm: &[f64]) -> DVector<f64> {
        let f = self.flows_pu(x, vm);
        let mut inj = vec![0.0; self.bus_count()];
        for (k, l) in self.lines.iter().enumerate() {
            inj[l.from] += f[k];
            inj[l.to] -= f[k];
        }
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| match *r {
                Row::Injection(i) => inj[i],
                Row::Flow { line, sign } => sign * f[line],
            }),
        )
    }

    /// `∂h/∂x` (m × n).
    pub fn jacobian(&self, x: &DVector<f64>, vm: &[f64]) -> DMatrix<f64> {
        let th = self.angles(x);
        let n = self.state_dim();
        // d p_k / d θ_from = g_k, d p_k / d θ_to = −g_k
        let mut df = DMatrix::<f64>::zeros(self.lines.len(), n);
        for (k, l) in self.lines.iter().enumerate() {
            if !l.closed {
                continue;
            }
            let g = vm[l.from] * vm[l.to] * l.b * (th[l.from] - th[l.to]).cos();
            if let Some(c) = self.column[l.from] {
                df[(k, c)] += g;
            }
            if let Some(c) = self.column[l.to] {
                df[(k, c)] -= g;
            }
        }
        let mut jac = DMatrix::<f64>::zeros(self.rows.len(), n);
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                Row::Flow { line, sign } => {
                    for c in 0..n {
                        jac[(r, c)] = sign * df[(line, c)];
                    }
                }
                Row::Injection(_) => {}
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            if !l.closed {
                continue;
            }
            let (ri, rj) = (self.injection_row[l.from], self.injection_row[l.to]);
            for c in [self.column[l.from], self.column[l.to]]
                .into_iter()
                .flatten()
            {
                jac[(ri, c)] += df[(k, c)];
                jac[(rj, c)] -= df[(k, c)];
            }
        }
        jac
    }

    /// Newton-Raphson power flow for the given injections (MW, summing to
    /// zero) and fixed magnitudes.
    pub fn power_flow(&self, injections_mw: &[f64], vm: &[f64]) -> Result<AcState> {
        self.check_vm(vm)?;
        let nb = self.bus_count();
        if injections_mw.len() != nb {
            return Err(Error::Dimension {
                what: "bus injections",
                expected: nb,
                got: injections_mw.len(),
            });
        }
        let total: f64 = injections_mw.iter().sum();
        let scale: f64 = injections_mw.iter().map(|p| p.abs()).sum::<f64>().max(1.0);
        if total.abs() > 1e-9 * scale {
            return Err(Error::InvalidArgument(format!(
                "injections are unbalanced by {total} MW; the lossless model has no slack to absorb it"
            )));
        }
        let base = self.dc.base_mva();
        let n = self.state_dim();
        let target = DVector::from_iterator(
            n,
            (0..nb)
                .filter(|&i| self.column[i].is_some())
                .map(|i| injections_mw[i] / base),
        );
        let inj_rows: Vec<usize> = (0..nb).filter(|&i| self.column[i].is_some()).collect();
        let mut x = DVector::zeros(n);
        for _ in 0..=AC_MAX_ITER {
            let h = self.measure(&x, vm);
            let p = DVector::from_iterator(n, inj_rows.iter().map(|&i| h[i]));
            let mismatch = &target - p;
            if mismatch.amax() <= AC_TOL {
                return Ok(AcState {
                    vm: vm.to_vec(),
                    va: self.angles(&x),
                });
            }
            let jac = self.jacobian(&x, vm).select_rows(&inj_rows);
            let dx = jac
                .lu()
                .solve(&mismatch)
                .ok_or(Error::Singular("power flow Jacobian"))?;
            x += dx;
        }
        Err(Error::NotConverged {
            what: "AC power flow",
            iterations: AC_MAX_ITER,
        })
    }

    /// Gauss-Newton weighted least squares from a flat start with step
    /// halving. Divergence is reported as [`Error::NotConverged`].
    pub fn estimate(
        &self,
        z: &DVector<f64>,
        noise_std: &[f64],
        vm: &[f64],
        alpha: f64,
    ) -> Result<AcEstimate> {
        self.check_vm(vm)?;
        let m = self.meter_count();
        if z.len() != m || noise_std.len() != m {
            return Err(Error::Dimension {
                what: "measurement vector",
                expected: m,
                got: z.len().min(noise_std.len()),
            });
        }
        let weight = DVector::from_iterator(
            m,
            (0..m).map(|i| {
                if self.active[i] {
                    1.0 / noise_std[i]
                } else {
                    0.0
                }
            }),
        );
        let objective = |x: &DVector<f64>| {
            (z - self.measure(x, vm))
                .component_mul(&weight)
                .norm_squared()
        };
        let n = self.state_dim();
        let mut x = DVector::zeros(n);
        let mut j = objective(&x);
        let mut trace = vec![j];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < AC_MAX_ITER {
            iterations += 1;
            let r = (z - self.measure(&x, vm)).component_mul(&weight);
            let mut jw = self.jacobian(&x, vm);
            for i in 0..m {
                jw.row_mut(i).scale_mut(weight[i]);
            }
            let step = jw
                .clone()
                .svd(true, true)
                .solve(&r, 1e-12)
                .map_err(|_| Error::Singular("Gauss-Newton system"))?;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand = &x + &step * t;
                let jc = objective(&cand);
                if jc <= j {
                    accepted = Some((cand, jc));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, jc)) = accepted else {
                converged = step.norm() * t <= AC_TOL;
                break;
            };
            let moved = (&cand - &x).norm();
            x = cand;
            j = jc;
            trace.push(j);
            if moved <= AC_TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                what: "AC state estimation",
                iterations,
            });
        }
        let dof = self.active_meter_count().saturating_sub(n);
        let detector = DetectorConfig::new(alpha, dof)?;
        let flows: Vec<f64> = self
            .flows_pu(&x, vm)
            .iter()
            .map(|f| f * self.dc.base_mva())
            .collect();
        Ok(AcEstimate {
            state: AcState {
                vm: vm.to_vec(),
                va: self.angles(&x),
            },
            pattern: pattern_of_flows(&self.dc, &flows),
            flows_mw: flows,
            statistic: j,
            threshold: detector.threshold,
            detected: detector.fires(j),
            iterations,
            trace,
        })
    }
}

/// Power flow on the closed-breaker topology of `case`.
pub fn ac_power_flow(
    case: &PowerCase,
    injections_mw: &[f64],
    magnitudes: &[f64],
) -> Result<AcState> {
    AcModel::new(case)?.power_flow(injections_mw, magnitudes)
}

/// Gauss-Newton estimate on `case` with `claimed_removed` lines open.
pub fn ac_wls_estimate(
    case: &PowerCase,
    claimed_removed: &BTreeSet<usize>,
    z: &DVector<f64>,
    noise_std: &[f64],
    magnitudes: &[f64],
    alpha: f64,
) -> Result<AcEstimate> {
    let claimed = crate::network::apply_topology(case, claimed_removed)?;
    AcModel::new(&claimed)?.estimate(z, noise_std, magnitudes, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{ieee14, t3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_injections_give_flat_state() {
        let b = ieee14();
        let s = ac_power_flow(&b.case, &[0.0; 14], &[1.0; 14]).unwrap();
        assert!(s.va.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn unbalanced_injections_rejected() {
        let b = t3();
        assert!(ac_power_flow(&b.case, &[10.0, 0.0, 0.0], &[1.0; 3]).is_err());
        assert!(ac_power_flow(&b.case, &[0.0; 3], &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn small_angles_match_dc() {
        let b = t3();
        let ac = AcModel::new(&b.case).unwrap();
        let inj = [-50.0, 20.0, 30.0];
        let s = ac.power_flow(&inj, &[1.0; 3]).unwrap();
        let x = ac.reduced(&s.va);
        let spread = s.va.iter().fold(0.0f64, |a, v| a.max(v.abs())) * 2.0;
        assert!(spread <= 0.05 * 2.0);
        let acf = ac.flows_pu(&x, &[1.0; 3]) * 100.0;
        let dc = ac.dc_model();
        let xdc = dc.state_from_injections(&inj).unwrap();
        let dcf = dc.branch_flows(&xdc).unwrap();
        for k in 0..3 {
            assert!(
                (acf[k] - dcf[k]).abs() <= 0.01 * dcf[k].abs().max(1.0),
                "{k}"
            );
        }
        // balance at non-reference buses
        let h = ac.measure(&x, &[1.0; 3]);
        for i in 0..3 {
            assert!((h[i] * 100.0 - inj[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = ieee14();
        let ac = AcModel::new(&b.case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = DVector::from_fn(13, |_, _| rng.random_range(-0.3..0.3));
            let vm: Vec<f64> = (0..14).map(|_| rng.random_range(0.95..1.05)).collect();
            let jac = ac.jacobian(&x, &vm);
            let h = 1e-6;
            for c in 0..13 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let fd = (ac.measure(&xp, &vm) - ac.measure(&xm, &vm)) / (2.0 * h);
                let col = jac.column(c);
                let err = (&fd - col).amax();
                assert!(err <= 1e-5 * col.amax().max(1.0));
            }
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let b = ieee14();
        let ac = AcModel::new(&b.case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut inj: Vec<f64> = (0..14).map(|_| rng.random_range(-40.0..40.0)).collect();
        let total: f64 = inj.iter().sum();
        inj[0] -= total;
        let vm: Vec<f64> = (0..14)
            .map(|_| 1.0 + 0.01 * rng.random_range(-1.0..1.0))
            .collect();
        let s = ac.power_flow(&inj, &vm).unwrap();
        let x = ac.reduced(&s.va);
        let z = ac.measure(&x, &vm);
        let est = ac.estimate(&z, b.meters.noise_std(), &vm, 0.1).unwrap();
        for i in 0..14 {
            assert!((est.state.va[i] - s.va[i]).abs() < 1e-6);
        }
        assert!(est.statistic < 1e-10);
        assert!(!est.detected);
        assert!(est.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn noisy_estimate_objective_decreases() {
        let b = ieee14();
        let ac = AcModel::new(&b.case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DVector::from_fn(13, |_, _| rng.random_range(-0.2..0.0));
        let vm = vec![1.0; 14];
        let z =
            ac.measure(&x, &vm) + DVector::from_fn(54, |_, _| 0.01 * rng.random_range(-1.0..1.0));
        let est = ac.estimate(&z, b.meters.noise_std(), &vm, 0.1).unwrap();
        assert!(est.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!((ac.reduced(&est.state.va) - x).amax() < 0.02);
    }

    #[test]
    fn open_branch_meters_are_ignored() {
        let b = t3();
        let id = b.case.resolve_branch("1-3").unwrap();
        let removed: BTreeSet<usize> = [id].into_iter().collect();
        let claimed = crate::network::apply_topology(&b.case, &removed).unwrap();
        let ac = AcModel::new(&claimed).unwrap();
        assert_eq!(ac.active_meter_count(), 7);
        let x = DVector::from_vec(vec![-0.05, -0.1]);
        let mut z = ac.measure(&x, &[1.0; 3]);
        let lm = b.meters.line_meters(&b.case, id).unwrap();
        z[lm.forward] = 5.0;
        let est =
            ac_wls_estimate(&b.case, &removed, &z, b.meters.noise_std(), &[1.0; 3], 0.1).unwrap();
        assert!(est.statistic < 1e-10);
    }
}
