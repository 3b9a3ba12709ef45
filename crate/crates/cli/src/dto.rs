//! JSON-serializable mirrors of the core types, with shape checks on load.

use locred::ocp::{DecisionVector, ProblemDefinition, Scenario};
use locred::reduction::{IterationRecord, RunOutcome, RunStatus};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionDto {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
}

impl DecisionDto {
    pub fn from_core(d: &DecisionVector) -> Self {
        Self { q: d.q.iter().copied().collect(), r: d.r.iter().copied().collect(), gamma: d.gamma }
    }

    pub fn into_core(self, problem: &ProblemDefinition) -> Result<DecisionVector, String> {
        if self.q.len() != problem.n_q || self.r.len() != problem.n_r {
            return Err(format!(
                "decision has q of length {} and r of length {}, the model expects {} and {}",
                self.q.len(),
                self.r.len(),
                problem.n_q,
                problem.n_r
            ));
        }
        Ok(DecisionVector {
            q: DVector::from_vec(self.q),
            r: DVector::from_vec(self.r),
            gamma: self.gamma,
        })
    }
}

/// Scenario as a list of per-step disturbance rows plus static parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioDto {
    pub w: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl ScenarioDto {
    pub fn from_core(s: &Scenario) -> Self {
        let w = (0..s.w.nrows())
            .map(|k| (0..s.w.ncols()).map(|j| s.w[(k, j)]).collect())
            .collect();
        Self { w, d: s.d.iter().copied().collect() }
    }

    pub fn into_core(self, problem: &ProblemDefinition) -> Result<Scenario, String> {
        if self.w.len() != problem.horizon
            || self.w.iter().any(|row| row.len() != problem.n_w)
            || self.d.len() != problem.n_d
        {
            return Err(format!(
                "scenario shape mismatch: model expects {} steps of {} disturbances and {} static parameters",
                problem.horizon, problem.n_w, problem.n_d
            ));
        }
        let w = DMatrix::from_fn(problem.horizon, problem.n_w, |k, j| self.w[k][j]);
        Ok(Scenario { w, d: DVector::from_vec(self.d) })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReportDto {
    pub status: String,
    pub iterations: usize,
    pub scenario_count: usize,
    pub gamma: f64,
    pub final_g_max: f64,
    pub decision: DecisionDto,
    pub scenarios: Vec<ScenarioDto>,
}

pub fn status_name(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Success => "success",
        RunStatus::Stalled => "stalled",
        RunStatus::MaxIterations => "max-iterations",
    }
}

impl SolveReportDto {
    pub fn from_outcome(outcome: &RunOutcome) -> Self {
        Self {
            status: status_name(outcome.status).to_string(),
            iterations: outcome.records.len(),
            scenario_count: outcome.scenario_set.len(),
            gamma: outcome.decision.gamma,
            final_g_max: outcome.records.last().map_or(f64::NAN, |r| r.g_max),
            decision: DecisionDto::from_core(&outcome.decision),
            scenarios: outcome.scenario_set.scenarios().iter().map(ScenarioDto::from_core).collect(),
        }
    }
}

/// Iteration history as CSV (`iteration,g_max,gamma,scenario_count,lower_status,elapsed_s`).
pub fn history_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iteration,g_max,gamma,scenario_count,lower_status,elapsed_s\n");
    for r in records {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{},{:?},{:.3}\n",
            r.iteration,
            r.g_max,
            r.gamma,
            r.scenario_count,
            r.lower_status,
            r.elapsed.as_secs_f64()
        ));
    }
    out
}

/// Worst-case candidates as CSV (`rank,g,d...` with the scenario JSON inline).
pub fn candidates_csv(candidates: &[(Scenario, f64)]) -> String {
    let mut out = String::from("rank,g,scenario_json\n");
    for (rank, (scenario, g)) in candidates.iter().enumerate() {
        let dto = ScenarioDto::from_core(scenario);
        let json = serde_json::to_string(&dto).expect("scenario serializes");
        out.push_str(&format!("{rank},{g:.17e},\"{}\"\n", json.replace('"', "\"\"")));
    }
    out
}
