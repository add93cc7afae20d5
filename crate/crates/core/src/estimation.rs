//! Weighted least-squares state estimation and the residual detector.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::case::PowerCase;
use crate::chi2::detector_threshold;
use crate::error::{Error, Result};
use crate::geometry::{region_of_state, CongestionPattern};
use crate::meters::MeterConfig;
use crate::network::{apply_topology, build_dc_model, DcModel};

/// `K`, `U = I − HK` and `W = UᵀR⁻¹U` for one topology and noise level.
///
/// Built from a QR factorization of the whitened measurement matrix
/// `R^{-1/2} H = QR`. Meters with an identically zero model row are left
/// out of the weighting, so they neither inform the estimate nor enter the
/// residual statistic. `U` and `W` are materialized on first use.
#[derive(Debug)]
pub struct EstimatorOperators {
    h: DMatrix<f64>,
    gain: DMatrix<f64>,
    q: DMatrix<f64>,
    weight: DVector<f64>,
    residual: OnceLock<DMatrix<f64>>,
    kernel: OnceLock<DMatrix<f64>>,
}

impl EstimatorOperators {
    pub fn new(model: &DcModel, noise_std: &[f64]) -> Result<Self> {
        let h = model.measurement_matrix();
        let (m, n) = (h.nrows(), h.ncols());
        if noise_std.len() != m {
            return Err(Error::Dimension {
                what: "noise std vector",
                expected: m,
                got: noise_std.len(),
            });
        }
        let weight = DVector::from_iterator(
            m,
            noise_std
                .iter()
                .zip(model.zero_rows())
                .map(|(s, zero)| if *zero { 0.0 } else { 1.0 / s }),
        );
        let mut hw = h.clone();
        for (i, w) in weight.iter().enumerate() {
            hw.row_mut(i).scale_mut(*w);
        }
        let qr = hw.qr();
        let r = qr.r();
        let q = qr.q();
        let dmax = r.diagonal().amax();
        let rank = r
            .diagonal()
            .iter()
            .filter(|d| d.abs() > 1e-10 * dmax)
            .count();
        if n > 0 && (dmax == 0.0 || rank < n) {
            return Err(Error::Unobservable { rank, dim: n });
        }
        let mut rhs = q.transpose();
        for (j, w) in weight.iter().enumerate() {
            rhs.column_mut(j).scale_mut(*w);
        }
        let gain = r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::Singular("gain factor"))?;
        Ok(Self {
            h: h.clone(),
            gain,
            q,
            weight,
            residual: OnceLock::new(),
            kernel: OnceLock::new(),
        })
    }

    /// `K` (n × m).
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    /// `U = I − HK` (m × m).
    pub fn residual_operator(&self) -> &DMatrix<f64> {
        self.residual.get_or_init(|| {
            let m = self.h.nrows();
            DMatrix::identity(m, m) - &self.h * &self.gain
        })
    }

    /// `W = UᵀR⁻¹U` (m × m), symmetric PSD with `WH = 0`.
    pub fn detection_kernel(&self) -> &DMatrix<f64> {
        self.kernel.get_or_init(|| {
            let m = self.h.nrows();
            let mut p = DMatrix::identity(m, m) - &self.q * self.q.transpose();
            for i in 0..m {
                p.row_mut(i).scale_mut(self.weight[i]);
                p.column_mut(i).scale_mut(self.weight[i]);
            }
            p
        })
    }

    /// `W v` without forming `W`.
    pub fn kernel_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let dv = v.component_mul(&self.weight);
        let proj = &dv - &self.q * (self.q.transpose() * &dv);
        proj.component_mul(&self.weight)
    }

    pub fn estimate_state(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.gain * z
    }

    /// `zᵀWz`, evaluated as the weighted residual norm.
    pub fn statistic(&self, z: &DVector<f64>) -> f64 {
        let r = z - &self.h * self.estimate_state(z);
        r.component_mul(&self.weight).norm_squared()
    }

    pub fn meter_count(&self) -> usize {
        self.h.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub dof: usize,
    pub threshold: f64,
}

impl DetectorConfig {
    pub fn new(alpha: f64, dof: usize) -> Result<Self> {
        Ok(Self {
            alpha,
            dof,
            threshold: detector_threshold(dof, alpha)?,
        })
    }

    /// Degrees of freedom = meters with a nonzero model row − n.
    pub fn for_model(model: &DcModel, alpha: f64) -> Result<Self> {
        let active = model.active_meter_count();
        let n = model.state_dim();
        if active <= n {
            return Err(Error::InvalidArgument(format!(
                "{active} informative meters leave no redundancy for {n} states"
            )));
        }
        Self::new(alpha, active - n)
    }

    pub fn fires(&self, statistic: f64) -> bool {
        statistic >= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub x_hat: Vec<f64>,
    pub flows_mw: Vec<f64>,
    pub pattern: CongestionPattern,
    pub statistic: f64,
    pub threshold: f64,
    pub detected: bool,
}

/// Operators plus detector for one topology, reusable across snapshots.
#[derive(Debug)]
pub struct Estimator {
    model: Arc<DcModel>,
    ops: EstimatorOperators,
    detector: DetectorConfig,
}

impl Estimator {
    pub fn new(model: Arc<DcModel>, meters: &MeterConfig, alpha: f64) -> Result<Self> {
        let ops = EstimatorOperators::new(&model, meters.noise_std())?;
        let detector = DetectorConfig::for_model(&model, alpha)?;
        Ok(Self {
            model,
            ops,
            detector,
        })
    }

    pub fn model(&self) -> &DcModel {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<DcModel> {
        Arc::clone(&self.model)
    }

    pub fn operators(&self) -> &EstimatorOperators {
        &self.ops
    }

    pub fn detector(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn estimate(&self, z: &DVector<f64>) -> Result<EstimateReport> {
        let m = self.model.meter_count();
        if z.len() != m {
            return Err(Error::Dimension {
                what: "measurement vector",
                expected: m,
                got: z.len(),
            });
        }
        let x_hat = self.ops.estimate_state(z);
        let statistic = self.ops.statistic(z);
        let flows = self.model.branch_flows(&x_hat)?;
        Ok(EstimateReport {
            pattern: region_of_state(&self.model, &x_hat),
            x_hat: x_hat.iter().copied().collect(),
            flows_mw: flows.iter().copied().collect(),
            statistic,
            threshold: self.detector.threshold,
            detected: self.detector.fires(statistic),
        })
    }
}

/// One-shot estimate on `model`.
pub fn estimate(
    model: &DcModel,
    meters: &MeterConfig,
    z: &DVector<f64>,
    alpha: f64,
) -> Result<EstimateReport> {
    Estimator::new(Arc::new(model.clone()), meters, alpha)?.estimate(z)
}

/// Estimate under the topology the operator believes in, i.e. `case` with
/// `claimed_removed` open.
pub fn topo_estimate(
    case: &PowerCase,
    meters: &MeterConfig,
    claimed_removed: &BTreeSet<usize>,
    z: &DVector<f64>,
    alpha: f64,
) -> Result<EstimateReport> {
    let claimed = apply_topology(case, claimed_removed)?;
    let model = build_dc_model(&claimed)?;
    Estimator::new(Arc::new(model), meters, alpha)?.estimate(z)
}
