//! The outer local-reduction loop: alternate a scenario-constrained policy
//! optimization (lower level) with a multistart worst-case scenario search
//! (upper level), growing the scenario set until no violating realisation
//! is found.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

use crate::nlp::{self, NlpOptions, NlpProblem, NlpStatus};
use crate::ocp::{
    evaluate_g, evaluate_g_max, rollout, DecisionVector, OcpError, ProblemDefinition, Scenario,
};

#[derive(Error, Debug)]
pub enum ReductionError {
    #[error("initial scenario set must be nonempty")]
    EmptyInitialSet,
    #[error("scenario does not match the problem dimensions")]
    ScenarioShape,
    #[error("all upper-level starts failed: {0}")]
    AllStartsFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Nlp(#[from] nlp::NlpError),
}

/// Finite scenario set with epsilon-similarity bookkeeping.
///
/// Two scenarios are considered similar when *both* norm tests pass:
/// `(1/N) ||w_a - w_b||_2^2 <= eps` and `||d_a - d_b||_2^2 <= eps`.
/// The set never stores two similar scenarios.
#[derive(Clone, Debug)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
    epsilon: f64,
}

impl ScenarioSet {
    pub fn new(epsilon: f64) -> Self {
        assert!(epsilon > 0.0);
        Self { scenarios: Vec::new(), epsilon }
    }

    /// Singleton set holding the nominal (box-midpoint) scenario.
    pub fn nominal(problem: &ProblemDefinition, epsilon: f64) -> Self {
        let mut set = Self::new(epsilon);
        set.insert_if_new(problem.bounds.nominal_scenario());
        set
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        assert!(epsilon > 0.0);
        self.epsilon = epsilon;
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    fn similar(&self, a: &Scenario, b: &Scenario) -> bool {
        let n = a.w.nrows().max(1) as f64;
        let w_norm: f64 = a.w.iter().zip(b.w.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let d_norm: f64 = a.d.iter().zip(b.d.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        w_norm <= self.epsilon && d_norm <= self.epsilon
    }

    /// TRUE iff the candidate is not epsilon-similar to any stored scenario.
    pub fn is_new(&self, candidate: &Scenario) -> bool {
        self.scenarios.iter().all(|s| !self.similar(s, candidate))
    }

    /// Insert the candidate if it passes the similarity test.
    pub fn insert_if_new(&mut self, candidate: Scenario) -> bool {
        if self.is_new(&candidate) {
            self.scenarios.push(candidate);
            true
        } else {
            false
        }
    }
}

/// Knobs for the outer loop.
#[derive(Clone, Debug)]
pub struct LocalReductionConfig {
    /// Scenario-similarity threshold.
    pub epsilon: f64,
    /// Constraint-violation tolerance: the loop stops once the worst-case
    /// `G` falls at or below this.
    pub tol_g: f64,
    pub max_iterations: usize,
    /// Start points per smooth component in the upper-level search.
    pub multistarts: usize,
    /// Scenarios accepted per outer iteration.
    pub scenarios_per_iteration: usize,
    /// Cap on the number of constraint components kept in the upper-level
    /// search. Components are ranked by their value at the start points and
    /// only the most promising ones are maximized; the cost-epigraph
    /// component is always kept. Zero keeps every component.
    pub component_budget: usize,
    pub seed: u64,
    /// Options for the lower-level (policy) solves.
    pub lower_options: NlpOptions,
    /// Options for each upper-level maximization.
    pub upper_options: NlpOptions,
}

impl Default for LocalReductionConfig {
    fn default() -> Self {
        let mut lower = NlpOptions::default();
        lower.tolerance = 1e-8;
        lower.max_outer_iterations = 30;
        let mut upper = NlpOptions::default();
        upper.tolerance = 1e-9;
        upper.max_inner_iterations = 150;
        Self {
            epsilon: 1e-3,
            tol_g: 1e-6,
            max_iterations: 100,
            multistarts: 8,
            scenarios_per_iteration: 1,
            component_budget: 16,
            seed: 0,
            lower_options: lower,
            upper_options: upper,
        }
    }
}

/// Result of one lower-level solve.
#[derive(Clone, Debug)]
pub struct LowerSolve {
    pub decision: DecisionVector,
    pub status: NlpStatus,
    pub constraint_violation: f64,
    pub kkt_residual: f64,
}

/// Per-iteration log entry.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    pub g_max: f64,
    pub worst_scenario: Scenario,
    pub gamma: f64,
    pub scenario_count: usize,
    pub lower_status: NlpStatus,
    pub elapsed: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    /// No scenario with `G > tol_g` could be found: robust to the box as far
    /// as the local searches can tell.
    Success,
    /// Violating candidates exist but all are epsilon-similar to stored
    /// scenarios, even after halving epsilon once.
    Stalled,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub decision: DecisionVector,
    pub scenario_set: ScenarioSet,
    pub records: Vec<IterationRecord>,
}

fn scenario_to_flat(s: &Scenario) -> Vec<f64> {
    let mut v = Vec::with_capacity(s.w.len() + s.d.len());
    for k in 0..s.w.nrows() {
        for j in 0..s.w.ncols() {
            v.push(s.w[(k, j)]);
        }
    }
    v.extend(s.d.iter());
    v
}

fn scenario_from_flat(flat: &[f64], horizon: usize, n_w: usize, n_d: usize) -> Scenario {
    let w = DMatrix::from_fn(horizon, n_w, |k, j| flat[k * n_w + j]);
    let d = DVector::from_column_slice(&flat[horizon * n_w..horizon * n_w + n_d]);
    Scenario { w, d }
}

/// Solve the scenario-constrained lower-level problem: minimize gamma over
/// `(q, r, gamma)` subject to every constraint entry of every scenario being
/// feasible and every scenario cost staying below gamma. Trajectories are
/// substituted by rollout, so the policy parameters are the only variables.
pub fn solve_lower(
    problem: &ProblemDefinition,
    set: &ScenarioSet,
    warm: &DecisionVector,
    options: &NlpOptions,
) -> Result<LowerSolve, ReductionError> {
    if set.is_empty() {
        return Err(ReductionError::EmptyInitialSet);
    }
    let n_q = problem.n_q;
    let n_r = problem.n_r;
    let n = n_q + n_r + 1;
    let scenarios: Vec<Scenario> = set.scenarios().to_vec();
    let rows_per_scenario = problem.horizon * problem.n_g + 1;
    let m = scenarios.len() * rows_per_scenario;

    // warm-start gamma at the achieved epigraph value so the cost rows start
    // feasible; also sets the scale used to normalize them
    let mut gamma_init = warm.gamma;
    let mut cost_scale = 1.0f64;
    {
        let mut max_cost = f64::NEG_INFINITY;
        for s in &scenarios {
            if let Ok(r) = rollout(problem, warm, s) {
                max_cost = max_cost.max(r.cost);
            }
        }
        if max_cost.is_finite() {
            gamma_init = gamma_init.max(max_cost);
            cost_scale = max_cost.abs().max(1.0);
        }
    }

    // optimize in diagonally scaled coordinates y = z / s, with the model's
    // parameter magnitudes on [q; r] and the cost magnitude on gamma, so the
    // inner quasi-Newton solver sees O(1) variables and an O(1) objective
    let mut scale: Vec<f64> = problem.decision_scaling.iter().copied().collect();
    assert_eq!(scale.len(), n_q + n_r, "decision_scaling length");
    assert!(scale.iter().all(|s| *s > 0.0), "decision_scaling must be positive");
    scale.push(cost_scale);
    let unscale = {
        let scale = scale.clone();
        move |y: &[f64]| -> Vec<f64> { y.iter().zip(&scale).map(|(v, s)| v * s).collect() }
    };

    let mut x_init = warm.to_flat();
    x_init[n - 1] = gamma_init;
    let y_init: Vec<f64> = x_init.iter().zip(&scale).map(|(v, s)| v / s).collect();

    let prob = problem.clone();
    let scen = scenarios.clone();
    let unscale_c = unscale.clone();
    let constraints: nlp::VectorFn = Arc::new(move |y: &[f64]| {
        let z = unscale_c(y);
        let decision = DecisionVector::from_flat(&z, n_q, n_r);
        let mut g = Vec::with_capacity(scen.len() * rows_per_scenario);
        for s in &scen {
            match rollout(&prob, &decision, s) {
                Ok(r) => {
                    for gk in &r.g_values {
                        g.extend(gk.iter());
                    }
                    g.push((r.cost - decision.gamma) / cost_scale);
                }
                Err(_) => {
                    g.extend(std::iter::repeat(f64::NAN).take(rows_per_scenario));
                }
            }
        }
        g
    });

    // parallel central-difference Jacobian; pairs with the analytic
    // objective gradient so the augmented Lagrangian uses exact chain rule
    let cons_for_jac = constraints.clone();
    let jacobian: nlp::JacobianFn = Arc::new(move |z: &[f64]| {
        let cols: Vec<Vec<f64>> = (0..z.len())
            .into_par_iter()
            .map(|i| {
                let h = (1e-7 * z[i].abs()).max(1e-6);
                let mut zp = z.to_vec();
                zp[i] = z[i] + h;
                let gp = cons_for_jac(&zp);
                zp[i] = z[i] - h;
                let gm = cons_for_jac(&zp);
                gp.iter().zip(gm.iter()).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect();
        let mut jac = vec![0.0; m * z.len()];
        for (i, col) in cols.iter().enumerate() {
            for (row, v) in col.iter().enumerate() {
                jac[row * z.len() + i] = *v;
            }
        }
        jac
    });

    let nlp_problem = NlpProblem::new(
        n,
        Arc::new(move |y: &[f64]| y[n - 1]),
    )
    .with_objective_grad(Arc::new(move |y: &[f64]| {
        let mut g = vec![0.0; y.len()];
        g[y.len() - 1] = 1.0;
        g
    }))
    .with_inequality(m, constraints)
    .with_inequality_jacobian(jacobian)
    .with_box(vec![-1e9; n], vec![1e9; n]);

    let result = nlp::minimize(&nlp_problem, &y_init, options)?;
    let z = unscale(&result.x);
    let mut decision = DecisionVector::from_flat(&z, n_q, n_r);

    // gamma only enters through the cost-epigraph rows, so lifting it to the
    // achieved worst cost makes those rows exactly feasible without touching
    // anything else; report the remaining violation in raw (unscaled) units
    let mut raw_violation = 0.0f64;
    for s in &scenarios {
        match rollout(problem, &decision, s) {
            Ok(r) => {
                decision.gamma = decision.gamma.max(r.cost);
                for gk in &r.g_values {
                    for v in gk.iter() {
                        raw_violation = raw_violation.max(*v);
                    }
                }
            }
            Err(_) => raw_violation = f64::INFINITY,
        }
    }

    Ok(LowerSolve {
        decision,
        status: result.status,
        constraint_violation: raw_violation.max(0.0),
        kkt_residual: result.kkt_residual,
    })
}

/// One smooth component of `G`.
#[derive(Clone, Copy, Debug)]
enum Component {
    Constraint { row: usize, step: usize },
    Cost,
}

/// Multistart local maximization of `G` over the uncertainty box.
///
/// `G` itself is a max and therefore nonsmooth, so every constraint entry
/// `(row, step)` and the cost-epigraph residual is maximized separately
/// (each is smooth), from a set of start points per component: the box
/// center, sampled corners, and uniform draws. Candidates are ranked by
/// their full `G` value and deduplicated with the epsilon-similarity test.
pub fn find_worst_case(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    set_epsilon: f64,
    config: &LocalReductionConfig,
) -> Result<Vec<(Scenario, f64)>, ReductionError> {
    if config.multistarts == 0 {
        return Err(ReductionError::InvalidConfig("multistarts must be >= 1".into()));
    }
    let bounds = &problem.bounds;
    let dim = problem.horizon * problem.n_w + problem.n_d;
    let lower = {
        let mut v = scenario_to_flat(&Scenario {
            w: bounds.w_lower().clone(),
            d: bounds.d_lower().clone(),
        });
        v.truncate(dim);
        v
    };
    let upper = {
        let mut v = scenario_to_flat(&Scenario {
            w: bounds.w_upper().clone(),
            d: bounds.d_upper().clone(),
        });
        v.truncate(dim);
        v
    };

    // start points: center first, then alternating sampled corners and
    // uniform draws, all from a seeded stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.multistarts);
    let center: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
    starts.push(center);
    while starts.len() < config.multistarts {
        if starts.len() % 2 == 1 {
            starts.push(
                lower
                    .iter()
                    .zip(&upper)
                    .map(|(l, u)| if rng.gen::<bool>() { *u } else { *l })
                    .collect(),
            );
        } else {
            starts.push(
                lower
                    .iter()
                    .zip(&upper)
                    .map(|(l, u)| if u > l { rng.gen_range(*l..=*u) } else { *l })
                    .collect(),
            );
        }
    }

    // score every constraint component at the start points (one rollout per
    // start scores them all) and keep only the most promising ones; the
    // cost-epigraph component is always maximized
    let start_rollouts: Vec<Option<crate::ocp::Rollout>> = starts
        .iter()
        .map(|s| rollout(problem, decision, &scenario_from_flat(s, problem.horizon, problem.n_w, problem.n_d)).ok())
        .collect();
    let mut scored: Vec<(Component, f64)> = Vec::with_capacity(problem.horizon * problem.n_g);
    for step in 0..problem.horizon {
        for row in 0..problem.n_g {
            let score = start_rollouts
                .iter()
                .flatten()
                .map(|r| r.g_values[step][row])
                .filter(|v| v.is_finite())
                .fold(f64::NEG_INFINITY, f64::max);
            scored.push((Component::Constraint { row, step }, score));
        }
    }
    if config.component_budget > 0 && scored.len() > config.component_budget {
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        scored.truncate(config.component_budget);
    }
    let mut components: Vec<Component> = scored.into_iter().map(|(c, _)| c).collect();
    components.push(Component::Cost);

    let jobs: Vec<(usize, Component, Vec<f64>)> = components
        .iter()
        .flat_map(|c| starts.iter().map(move |s| (*c, s.clone())))
        .enumerate()
        .map(|(i, (c, s))| (i, c, s))
        .collect();

    let horizon = problem.horizon;
    let (n_w, n_d) = (problem.n_w, problem.n_d);
    let gamma = decision.gamma;

    let results: Vec<Result<(usize, Scenario, f64), String>> = jobs
        .into_par_iter()
        .map(|(job_index, component, start)| {
            // the rollout is causal, so the constraint at a given step can
            // only depend on the disturbances up to that step; maximize over
            // that prefix (plus the static parameters) and keep the start
            // point's values on the untouched tail
            let active: Vec<usize> = match component {
                Component::Constraint { step, .. } => (0..(step + 1) * n_w)
                    .chain(horizon * n_w..dim)
                    .collect(),
                Component::Cost => (0..dim).collect(),
            };
            let base = start.clone();
            let objective: nlp::ScalarFn = {
                let problem = problem.clone();
                let decision = decision.clone();
                let active = active.clone();
                let base = base.clone();
                Arc::new(move |x: &[f64]| {
                    let mut flat = base.clone();
                    for (i, &idx) in active.iter().enumerate() {
                        flat[idx] = x[i];
                    }
                    let scenario = scenario_from_flat(&flat, horizon, n_w, n_d);
                    match rollout(&problem, &decision, &scenario) {
                        Ok(r) => match component {
                            Component::Constraint { row, step } => r.g_values[step][row],
                            Component::Cost => r.cost - gamma,
                        },
                        Err(_) => f64::NAN,
                    }
                })
            };
            let lower_a: Vec<f64> = active.iter().map(|&i| lower[i]).collect();
            let upper_a: Vec<f64> = active.iter().map(|&i| upper[i]).collect();
            let start_a: Vec<f64> = active.iter().map(|&i| start[i]).collect();
            let nlp_problem =
                NlpProblem::new(active.len(), objective).with_box(lower_a, upper_a);
            match nlp::maximize(&nlp_problem, &start_a, &config.upper_options) {
                Ok(res) => {
                    let mut flat = base;
                    for (i, &idx) in active.iter().enumerate() {
                        flat[idx] = res.x[i];
                    }
                    let mut scenario = scenario_from_flat(&flat, horizon, n_w, n_d);
                    problem.bounds.clamp(&mut scenario);
                    match rollout(problem, decision, &scenario) {
                        Ok(r) => {
                            let g = evaluate_g(&r, gamma);
                            Ok((job_index, scenario, g.value))
                        }
                        Err(e) => Err(format!("job {job_index}: {e}")),
                    }
                }
                Err(e) => Err(format!("job {job_index}: {e}")),
            }
        })
        .collect();

    let mut candidates: Vec<(usize, Scenario, f64)> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for r in results {
        match r {
            Ok(c) => candidates.push(c),
            Err(e) => failures.push(e),
        }
    }
    if candidates.is_empty() {
        return Err(ReductionError::AllStartsFailed(failures.join("; ")));
    }

    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));

    // deduplicate by the epsilon test, keeping the best representative
    let mut dedup = ScenarioSet::new(set_epsilon);
    let mut out: Vec<(Scenario, f64)> = Vec::new();
    for (_, scenario, g) in candidates {
        if dedup.insert_if_new(scenario.clone()) {
            out.push((scenario, g));
        }
    }
    Ok(out)
}

/// Run the full local-reduction loop from a warm-start decision.
pub fn run_with_warm(
    problem: &ProblemDefinition,
    config: &LocalReductionConfig,
    initial_set: ScenarioSet,
    warm: DecisionVector,
) -> Result<RunOutcome, ReductionError> {
    if initial_set.is_empty() {
        return Err(ReductionError::EmptyInitialSet);
    }
    let mut set = initial_set;
    set.set_epsilon(config.epsilon);
    let mut warm = warm;
    let mut records = Vec::new();
    let mut epsilon_halved = false;
    let mut status = RunStatus::MaxIterations;
    let mut decision = warm.clone();
    let mut prev_gamma = f64::NEG_INFINITY;

    for iteration in 1..=config.max_iterations {
        let t0 = Instant::now();
        let lower = solve_lower(problem, &set, &warm, &config.lower_options)?;
        decision = lower.decision.clone();
        if lower.status != NlpStatus::Converged {
            log::warn!(
                "iteration {iteration}: lower-level solve ended with {:?} (violation {:.3e}); continuing with best iterate",
                lower.status,
                lower.constraint_violation
            );
        }
        if decision.gamma < prev_gamma - config.tol_g {
            log::warn!(
                "iteration {iteration}: gamma decreased from {prev_gamma} to {} (local solver caveat)",
                decision.gamma
            );
        }
        prev_gamma = decision.gamma;

        let candidates = find_worst_case(problem, &decision, set.epsilon(), config)?;
        let (top_scenario, top_g) = (&candidates[0].0, candidates[0].1);

        if top_g <= config.tol_g {
            records.push(IterationRecord {
                iteration,
                g_max: top_g,
                worst_scenario: top_scenario.clone(),
                gamma: decision.gamma,
                scenario_count: set.len(),
                lower_status: lower.status,
                elapsed: t0.elapsed(),
            });
            status = RunStatus::Success;
            break;
        }

        let mut accepted = 0;
        for (scenario, g) in candidates.iter() {
            if accepted >= config.scenarios_per_iteration {
                break;
            }
            if *g > config.tol_g && set.insert_if_new(scenario.clone()) {
                accepted += 1;
            }
        }
        if accepted == 0 && !epsilon_halved {
            // violating candidates exist but all look similar: halve the
            // similarity threshold once before declaring a stall
            epsilon_halved = true;
            set.set_epsilon(set.epsilon() / 2.0);
            for (scenario, g) in candidates.iter() {
                if accepted >= config.scenarios_per_iteration {
                    break;
                }
                if *g > config.tol_g && set.insert_if_new(scenario.clone()) {
                    accepted += 1;
                }
            }
        }

        records.push(IterationRecord {
            iteration,
            g_max: top_g,
            worst_scenario: top_scenario.clone(),
            gamma: decision.gamma,
            scenario_count: set.len(),
            lower_status: lower.status,
            elapsed: t0.elapsed(),
        });

        if accepted == 0 {
            status = RunStatus::Stalled;
            break;
        }
        warm = decision.clone();
    }

    Ok(RunOutcome { status, decision, scenario_set: set, records })
}

/// Run the loop with the default all-zero warm start.
pub fn run(
    problem: &ProblemDefinition,
    config: &LocalReductionConfig,
    initial_set: ScenarioSet,
) -> Result<RunOutcome, ReductionError> {
    let warm = DecisionVector::zeros(problem.n_q, problem.n_r);
    run_with_warm(problem, config, initial_set, warm)
}

/// Certificate replay: the worst `G` found at a decision, for reporting.
pub fn worst_case_value(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    config: &LocalReductionConfig,
) -> Result<(Scenario, f64), ReductionError> {
    let candidates = find_worst_case(problem, decision, config.epsilon, config)?;
    Ok(candidates.into_iter().next().expect("nonempty candidate list"))
}

/// Evaluate `G_max` restricted to the stored set (exact enumeration).
pub fn g_max_on_set(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    set: &ScenarioSet,
) -> Result<f64, ReductionError> {
    let (g, _) = evaluate_g_max(problem, decision, set.scenarios())?;
    Ok(g.value)
}
