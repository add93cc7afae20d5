use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DEFAULT_CANDIDATE_CAP, DEFAULT_CANDIDATE_THRESHOLD_MW};
use crate::meter_attack::{AttackModel, SearchMethod};

/// Which measurement and estimation model the trials run through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineModel {
    #[default]
    Dc,
    Ac,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AttackSpec {
    None,
    Meter {
        model: AttackModel,
        /// `aᵀWa` budgets for M1/M2; bounds on the residual statistic for
        /// M3 (empty means the detector threshold).
        #[serde(default)]
        budgets: Vec<f64>,
        #[serde(default = "default_search")]
        search: SearchMethod,
        /// Lines drawn at random per trial; the attacker controls their
        /// flow meters and endpoint injection meters.
        #[serde(default = "default_lines_per_trial")]
        lines_per_trial: usize,
        /// Fixed line set instead of random draws.
        #[serde(default)]
        lines: Option<Vec<usize>>,
    },
    Topology {
        #[serde(default = "default_lines_per_trial")]
        lines_per_trial: usize,
        #[serde(default = "default_max_removals")]
        max_removals: usize,
        #[serde(default)]
        lines: Option<Vec<usize>>,
    },
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec::None
    }
}

fn default_search() -> SearchMethod {
    SearchMethod::Exhaustive
}
fn default_lines_per_trial() -> usize {
    2
}
fn default_max_removals() -> usize {
    2
}
fn default_alpha() -> f64 {
    0.1
}
fn default_threshold() -> f64 {
    DEFAULT_CANDIDATE_THRESHOLD_MW
}
fn default_cap() -> usize {
    DEFAULT_CANDIDATE_CAP
}
fn default_magnitude_std() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Built-in case name or path to a case file.
    pub case: String,
    #[serde(default)]
    pub model: PipelineModel,
    #[serde(default)]
    pub attack: AttackSpec,
    pub trials: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub candidate_threshold_mw: f64,
    #[serde(default = "default_cap")]
    pub candidate_cap: usize,
    /// Overrides the case's prior phase std (rad).
    #[serde(default)]
    pub prior_std_rad: Option<f64>,
    /// Std of the AC voltage magnitudes around 1 p.u.
    #[serde(default = "default_magnitude_std")]
    pub magnitude_std: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(case: impl Into<String>, attack: AttackSpec, trials: usize, seed: u64) -> Self {
        Self {
            case: case.into(),
            model: PipelineModel::Dc,
            attack,
            trials,
            alpha: default_alpha(),
            seed,
            candidate_threshold_mw: default_threshold(),
            candidate_cap: default_cap(),
            prior_std_rad: None,
            magnitude_std: default_magnitude_std(),
            threads: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("scenario", msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} must lie in (0, 1)", self.alpha));
        }
        if !(self.candidate_threshold_mw > 0.0) {
            return bad("candidate threshold must be positive".into());
        }
        if self.candidate_cap > 16 {
            return bad(format!("candidate cap {} exceeds 16", self.candidate_cap));
        }
        if let Some(s) = self.prior_std_rad {
            if !(s >= 0.0) {
                return bad("prior std must be nonnegative".into());
            }
        }
        if !(self.magnitude_std >= 0.0) {
            return bad("magnitude std must be nonnegative".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        match &self.attack {
            AttackSpec::None => {}
            AttackSpec::Meter {
                model,
                budgets,
                lines_per_trial,
                lines,
                ..
            } => {
                if *model != AttackModel::M3 && budgets.is_empty() {
                    return bad("meter attacks under m1/m2 need a budget grid".into());
                }
                if budgets.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
                    return bad("budgets must be positive".into());
                }
                if budgets.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("budgets must be strictly increasing".into());
                }
                if lines.is_none() && *lines_per_trial == 0 {
                    return bad("lines_per_trial must be at least 1".into());
                }
            }
            AttackSpec::Topology {
                lines_per_trial,
                max_removals,
                lines,
            } => {
                if *max_removals == 0 {
                    return bad("max_removals must be at least 1".into());
                }
                if lines.is_none() && *lines_per_trial == 0 {
                    return bad("lines_per_trial must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}
