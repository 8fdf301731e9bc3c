//! Serializable per-run records.

use serde::Serialize;

/// One time step of an integration run.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    /// Time at the start of the step.
    pub t: f64,
    pub h: f64,
    pub accepted: bool,
    /// Adaptive-Krylov evaluations made during this step.
    pub projections: usize,
    /// Matvecs consumed by those evaluations.
    pub matvecs: usize,
    /// Extra operator applications (downshifts, grouped-row polynomials).
    pub aux_applies: usize,
    /// Embedded-estimator magnitude (infinity norm), when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err_estimate: Option<f64>,
    /// Weighted controller error for adaptive runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err_weighted: Option<f64>,
}

/// Record of one integration run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub method: String,
    pub strategy: String,
    pub problem: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    pub steps: Vec<StepRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_error: Option<f64>,
    pub total_matvecs: usize,
    pub total_projections: usize,
    pub wall_time_s: f64,
    /// Final state vector; kept out of the JSON payload.
    #[serde(skip)]
    pub final_state: Vec<f64>,
    /// Final integration time reached (equals the span end on success).
    pub t_final: f64,
}

impl RunReport {
    pub fn accepted_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.accepted).count()
    }

    pub fn rejected_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.accepted).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunReport serializes")
    }
}
