//! Monte Carlo validation of a fixed decision against the uncertainty box.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ocp::{evaluate_g, max_constraint, rollout, DecisionVector, ProblemDefinition, Scenario};

/// Per-sample summary row.
#[derive(Clone, Copy, Debug)]
pub struct SampleRecord {
    pub index: usize,
    /// Aggregated `G` (constraints and cost-epigraph residual).
    pub g: f64,
    /// Maximum constraint entry only.
    pub max_constraint: f64,
    pub cost: f64,
    pub diverged: bool,
}

/// Aggregate statistics over uniform scenario samples.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub seed: u64,
    /// Largest constraint entry seen over all samples (cost excluded).
    pub max_violation: f64,
    /// Fraction of samples with `G > 0`.
    pub violation_rate: f64,
    /// Scenario attaining the largest `G`, with its value.
    pub worst_scenario: Option<Scenario>,
    pub worst_g: f64,
    pub mean_cost: f64,
    pub max_cost: f64,
    /// Per-step state envelope: `envelope[k][i] = (min, max)` of state `i`
    /// at step `k`, over all non-diverged samples. Length `horizon + 1`.
    pub state_envelope: Vec<Vec<(f64, f64)>>,
    pub diverged: usize,
    pub records: Vec<SampleRecord>,
}

/// Sample `n_samples` scenarios uniformly from the box and evaluate the
/// closed loop under `decision` on each.
///
/// Sample `i` draws from its own seeded stream, so the first `n` scenarios
/// of a run with more samples are identical to a run with exactly `n`:
/// enlarging the sample budget only appends scenarios.
pub fn validate(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    n_samples: usize,
    seed: u64,
) -> ValidationReport {
    let results: Vec<(SampleRecord, Option<(Scenario, Vec<DVector<f64>>, f64)>)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let scenario = problem.bounds.sample(&mut rng);
            match rollout(problem, decision, &scenario) {
                Ok(r) => {
                    let g = evaluate_g(&r, decision.gamma).value;
                    let rec = SampleRecord {
                        index: i,
                        g,
                        max_constraint: max_constraint(&r),
                        cost: r.cost,
                        diverged: false,
                    };
                    (rec, Some((scenario, r.states, g)))
                }
                Err(_) => (
                    SampleRecord {
                        index: i,
                        g: f64::INFINITY,
                        max_constraint: f64::INFINITY,
                        cost: f64::NAN,
                        diverged: true,
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut report = ValidationReport {
        n_samples,
        seed,
        max_violation: f64::NEG_INFINITY,
        violation_rate: 0.0,
        worst_scenario: None,
        worst_g: f64::NEG_INFINITY,
        mean_cost: 0.0,
        max_cost: f64::NEG_INFINITY,
        state_envelope: vec![vec![(f64::INFINITY, f64::NEG_INFINITY); problem.n_x]; problem.horizon + 1],
        diverged: 0,
        records: Vec::with_capacity(n_samples),
    };

    let mut violations = 0usize;
    let mut cost_sum = 0.0;
    let mut costs_seen = 0usize;
    for (rec, detail) in results {
        if rec.diverged {
            report.diverged += 1;
            violations += 1; // a diverged trajectory counts as violating
        } else {
            report.max_violation = report.max_violation.max(rec.max_constraint);
            if rec.g > 0.0 {
                violations += 1;
            }
            cost_sum += rec.cost;
            costs_seen += 1;
            report.max_cost = report.max_cost.max(rec.cost);
        }
        if let Some((scenario, states, g)) = detail {
            if g > report.worst_g {
                report.worst_g = g;
                report.worst_scenario = Some(scenario);
            }
            for (k, x) in states.iter().enumerate() {
                for (i, v) in x.iter().enumerate() {
                    let (lo, hi) = report.state_envelope[k][i];
                    report.state_envelope[k][i] = (lo.min(*v), hi.max(*v));
                }
            }
        }
        report.records.push(rec);
    }
    if n_samples > 0 {
        report.violation_rate = violations as f64 / n_samples as f64;
    }
    if costs_seen > 0 {
        report.mean_cost = cost_sum / costs_seen as f64;
    }
    report
}

/// Render per-sample rows as CSV (`index,g,max_constraint,cost,diverged`).
pub fn records_csv(report: &ValidationReport) -> String {
    let mut out = String::from("index,g,max_constraint,cost,diverged\n");
    for r in &report.records {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{}\n",
            r.index, r.g, r.max_constraint, r.cost, r.diverged
        ));
    }
    out
}

/// Render the state envelope as CSV with one row per step.
pub fn envelope_csv(report: &ValidationReport) -> String {
    let n_x = report.state_envelope.first().map_or(0, |v| v.len());
    let mut out = String::from("step");
    for i in 0..n_x {
        out.push_str(&format!(",x{i}_min,x{i}_max"));
    }
    out.push('\n');
    for (k, row) in report.state_envelope.iter().enumerate() {
        out.push_str(&k.to_string());
        for (lo, hi) in row {
            out.push_str(&format!(",{lo:.17e},{hi:.17e}"));
        }
        out.push('\n');
    }
    out
}
