//! DC network model: flow sensitivities, the measurement matrix, PTDFs and
//! topology edits.
//!
//! Everything inside [`DcModel`] is per-unit on the case MVA base; the
//! accessors that say `_mw` convert.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::case::PowerCase;
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, write_matrix_csv};
use crate::meters::{canonical_meters, Meter};

#[derive(Debug, Clone)]
pub struct DcModel {
    base_mva: f64,
    bus_ids: Vec<usize>,
    reference: usize,
    branch_ids: Vec<usize>,
    closed: Vec<bool>,
    limits_pu: Vec<Option<f64>>,
    /// `F`: branches × n, p.u. flow per rad.
    flow_sens: DMatrix<f64>,
    /// `H`: m × n.
    measurement: DMatrix<f64>,
    /// PTDF: branches × buses, reference column zero.
    ptdf: DMatrix<f64>,
    /// Inverse of the reduced susceptance matrix (rad per p.u.).
    bred_inv: DMatrix<f64>,
    zero_rows: Vec<bool>,
}

/// Builds `F`, `H` and the PTDF for the closed-breaker topology of `case`.
pub fn build_dc_model(case: &PowerCase) -> Result<DcModel> {
    case.check_connected(&BTreeSet::new())?;
    let nb = case.bus_count();
    let n = case.state_dim();
    let nl = case.branch_count();

    let mut flow_sens = DMatrix::zeros(nl, n);
    for (k, br) in case.branches.iter().enumerate() {
        if !br.closed {
            continue;
        }
        let b = br.susceptance();
        let i = case.bus_index(br.from).expect("validated");
        let j = case.bus_index(br.to).expect("validated");
        if let Some(c) = case.state_column(i) {
            flow_sens[(k, c)] += b;
        }
        if let Some(c) = case.state_column(j) {
            flow_sens[(k, c)] -= b;
        }
    }

    let meters = canonical_meters(case);
    let mut measurement = DMatrix::zeros(meters.len(), n);
    for (row, meter) in meters.iter().enumerate() {
        match *meter {
            Meter::Injection { bus } => {
                for (k, br) in case.branches.iter().enumerate() {
                    let sign = if br.from == bus {
                        1.0
                    } else if br.to == bus {
                        -1.0
                    } else {
                        continue;
                    };
                    for c in 0..n {
                        measurement[(row, c)] += sign * flow_sens[(k, c)];
                    }
                }
            }
            Meter::Flow { branch, reverse } => {
                let k = case.branch_index(branch).expect("canonical meter");
                let sign = if reverse { -1.0 } else { 1.0 };
                for c in 0..n {
                    measurement[(row, c)] = sign * flow_sens[(k, c)];
                }
            }
        }
    }

    // Reduced susceptance matrix B = Cᵀ diag(b) C restricted to non-reference buses.
    let mut bred = DMatrix::zeros(n, n);
    for br in case.closed_branches() {
        let b = br.susceptance();
        let ci = case.state_column(case.bus_index(br.from).expect("validated"));
        let cj = case.state_column(case.bus_index(br.to).expect("validated"));
        if let Some(i) = ci {
            bred[(i, i)] += b;
        }
        if let Some(j) = cj {
            bred[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (ci, cj) {
            bred[(i, j)] -= b;
            bred[(j, i)] -= b;
        }
    }
    let mut ptdf = DMatrix::zeros(nl, nb);
    let binv: DMatrix<f64> = if n > 0 {
        bred.clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::Singular("reduced susceptance matrix"))?
    } else {
        DMatrix::zeros(0, 0)
    };
    if n > 0 {
        let reduced: DMatrix<f64> = &flow_sens * &binv;
        for bus in 0..nb {
            if let Some(c) = case.state_column(bus) {
                ptdf.set_column(bus, &reduced.column(c));
            }
        }
    }

    let zero_rows = (0..measurement.nrows())
        .map(|r| measurement.row(r).iter().all(|v| *v == 0.0))
        .collect();

    let model = DcModel {
        base_mva: case.base_mva,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        reference: case.reference_index(),
        branch_ids: case.branches.iter().map(|b| b.id).collect(),
        closed: case.branches.iter().map(|b| b.closed).collect(),
        limits_pu: case
            .branches
            .iter()
            .map(|b| b.limit_mw.map(|l| l / case.base_mva))
            .collect(),
        flow_sens,
        measurement,
        ptdf,
        bred_inv: binv,
        zero_rows,
    };
    let rank = numerical_rank(&model.measurement);
    if rank < n {
        return Err(Error::Unobservable { rank, dim: n });
    }
    Ok(model)
}

impl DcModel {
    pub fn state_dim(&self) -> usize {
        self.flow_sens.ncols()
    }

    pub fn meter_count(&self) -> usize {
        self.measurement.nrows()
    }

    pub fn bus_count(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn branch_count(&self) -> usize {
        self.branch_ids.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn bus_ids(&self) -> &[usize] {
        &self.bus_ids
    }

    pub fn reference_index(&self) -> usize {
        self.reference
    }

    pub fn branch_ids(&self) -> &[usize] {
        &self.branch_ids
    }

    pub fn branch_index(&self, id: usize) -> Option<usize> {
        self.branch_ids.binary_search(&id).ok()
    }

    pub fn is_closed(&self, k: usize) -> bool {
        self.closed[k]
    }

    /// Flow sensitivity `F` (p.u./rad).
    pub fn flow_sensitivity(&self) -> &DMatrix<f64> {
        &self.flow_sens
    }

    /// Measurement matrix `H` (p.u./rad).
    pub fn measurement_matrix(&self) -> &DMatrix<f64> {
        &self.measurement
    }

    /// PTDF (branches × buses, dimensionless).
    pub fn ptdf(&self) -> &DMatrix<f64> {
        &self.ptdf
    }

    /// Rows of `H` that are identically zero (meters of open branches).
    pub fn zero_rows(&self) -> &[bool] {
        &self.zero_rows
    }

    pub fn active_meter_count(&self) -> usize {
        self.zero_rows.iter().filter(|z| !**z).count()
    }

    pub fn limit_pu(&self, k: usize) -> Option<f64> {
        self.limits_pu[k]
    }

    pub fn limit_mw(&self, k: usize) -> Option<f64> {
        self.limits_pu[k].map(|l| l * self.base_mva)
    }

    /// Indices (not ids) of branches with a flow limit.
    pub fn limited(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.branch_ids.len()).filter(|&k| self.limits_pu[k].is_some())
    }

    /// `f = F x`, in MW.
    pub fn branch_flows(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.branch_flows_pu(x)? * self.base_mva)
    }

    pub fn branch_flows_pu(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                what: "state vector",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(&self.flow_sens * x)
    }

    /// Noiseless measurements `H x` (p.u.).
    pub fn measure(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                what: "state vector",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(&self.measurement * x)
    }

    /// Phase angles produced by per-bus injections (MW), reference at zero.
    pub fn state_from_injections(&self, injections_mw: &[f64]) -> Result<DVector<f64>> {
        if injections_mw.len() != self.bus_count() {
            return Err(Error::Dimension {
                what: "injection vector",
                expected: self.bus_count(),
                got: injections_mw.len(),
            });
        }
        let p = DVector::from_iterator(
            self.state_dim(),
            (0..self.bus_count())
                .filter(|&b| b != self.reference)
                .map(|b| injections_mw[b] / self.base_mva),
        );
        Ok(&self.bred_inv * p)
    }

    /// Full column rank of `H`.
    pub fn is_observable(&self) -> bool {
        numerical_rank(&self.measurement) == self.state_dim()
    }

    /// Observability using only the listed meter rows.
    pub fn is_observable_with(&self, rows: &[usize]) -> bool {
        let sub = self.measurement.select_rows(rows.iter());
        numerical_rank(&sub) == self.state_dim()
    }

    /// Writes `F.csv`, `H.csv` and `ptdf.csv` into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [
            ("F.csv", &self.flow_sens),
            ("H.csv", &self.measurement),
            ("ptdf.csv", &self.ptdf),
        ] {
            write_matrix_csv(std::fs::File::create(dir.join(name))?, m)?;
        }
        Ok(())
    }
}

/// Opens the breakers of `removed`. Errors when a branch is unknown or
/// already open, or when the result is disconnected.
pub fn apply_topology(case: &PowerCase, removed: &BTreeSet<usize>) -> Result<PowerCase> {
    let mut out = case.clone();
    for &id in removed {
        let k = case
            .branch_index(id)
            .ok_or_else(|| Error::InvalidArgument(format!("branch {id} does not exist")))?;
        if !case.branches[k].closed {
            return Err(Error::InvalidArgument(format!(
                "branch {id} is already open"
            )));
        }
        out.branches[k].closed = false;
    }
    out.check_connected(&BTreeSet::new())?;
    Ok(out)
}
