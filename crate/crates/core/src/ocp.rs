//! Domain types for uncertain optimal control problems, closed-loop rollout
//! simulation, and the aggregated constraint functional `G`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Discrete dynamics `(k, x_k, u_k, w_k, d) -> x_{k+1}`.
pub type DynamicsFn =
    Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Causal feedback policy `(k, x_0..x_k, q, r) -> u_k`.
///
/// The policy receives the full state history prefix so that dynamic
/// feedback laws can be expressed; the shipped models only look at the
/// last entry.
pub type PolicyFn =
    Arc<dyn Fn(usize, &[DVector<f64>], &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Stage cost `(k, x_k, u_k, w_k, d) -> scalar`.
pub type StageCostFn =
    Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Terminal cost `(x_N, w_last, d) -> scalar`.
///
/// The disturbance trajectory only runs through `w_{N-1}`, so a terminal
/// cost that requests a disturbance argument receives `w_{N-1}` (an empty
/// vector when `n_w = 0`). Shipped models ignore it.
pub type TerminalCostFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// Per-step inequality constraints `(k, x_k, u_k, w_k, d) -> g_k`, feasible
/// iff every entry is `<= 0`. Evaluated for `k = 0..N-1`; constraints on the
/// terminal state must be folded into `g_{N-1}` through the dynamics.
pub type ConstraintFn =
    Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Error, Debug)]
pub enum OcpError {
    #[error("state became non-finite during rollout at step {step}")]
    DivergedRollout { step: usize },
    #[error("scenario set is empty")]
    EmptyScenarioSet,
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid uncertainty bounds: {0}")]
    InvalidBounds(String),
}

/// Box bounds for the uncertainty: a per-step box for the disturbance
/// trajectory `w` and a single box for the constant parameter vector `d`.
///
/// The disturbance box is stored per step (`N x n_w` matrices) so that
/// schedules such as day/night disturbance ranges can be represented; use
/// [`UncertaintyBounds::uniform`] when the box does not vary with time.
#[derive(Clone, Debug)]
pub struct UncertaintyBounds {
    w_lower: DMatrix<f64>,
    w_upper: DMatrix<f64>,
    d_lower: DVector<f64>,
    d_upper: DVector<f64>,
}

impl UncertaintyBounds {
    pub fn new(
        w_lower: DMatrix<f64>,
        w_upper: DMatrix<f64>,
        d_lower: DVector<f64>,
        d_upper: DVector<f64>,
    ) -> Result<Self, OcpError> {
        if w_lower.shape() != w_upper.shape() {
            return Err(OcpError::InvalidBounds(format!(
                "w_lower is {:?} but w_upper is {:?}",
                w_lower.shape(),
                w_upper.shape()
            )));
        }
        if d_lower.len() != d_upper.len() {
            return Err(OcpError::DimensionMismatch {
                what: "d bounds",
                expected: d_lower.len(),
                actual: d_upper.len(),
            });
        }
        let all_finite = w_lower.iter().chain(w_upper.iter()).chain(d_lower.iter()).chain(d_upper.iter());
        if !all_finite.into_iter().all(|v| v.is_finite()) {
            return Err(OcpError::InvalidBounds("bounds must be finite".into()));
        }
        if w_lower.iter().zip(w_upper.iter()).any(|(l, u)| l > u)
            || d_lower.iter().zip(d_upper.iter()).any(|(l, u)| l > u)
        {
            return Err(OcpError::InvalidBounds("lower > upper componentwise".into()));
        }
        Ok(Self { w_lower, w_upper, d_lower, d_upper })
    }

    /// Bounds with a time-invariant disturbance box replicated over the horizon.
    pub fn uniform(
        horizon: usize,
        w_lower: &DVector<f64>,
        w_upper: &DVector<f64>,
        d_lower: DVector<f64>,
        d_upper: DVector<f64>,
    ) -> Result<Self, OcpError> {
        let n_w = w_lower.len();
        let wl = DMatrix::from_fn(horizon, n_w, |_, j| w_lower[j]);
        let wu = DMatrix::from_fn(horizon, n_w, |_, j| w_upper[j]);
        Self::new(wl, wu, d_lower, d_upper)
    }

    pub fn horizon(&self) -> usize {
        self.w_lower.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.w_lower.ncols()
    }

    pub fn n_d(&self) -> usize {
        self.d_lower.len()
    }

    pub fn w_lower(&self) -> &DMatrix<f64> {
        &self.w_lower
    }

    pub fn w_upper(&self) -> &DMatrix<f64> {
        &self.w_upper
    }

    pub fn d_lower(&self) -> &DVector<f64> {
        &self.d_lower
    }

    pub fn d_upper(&self) -> &DVector<f64> {
        &self.d_upper
    }

    /// The scenario at the midpoint of every box.
    pub fn nominal_scenario(&self) -> Scenario {
        Scenario {
            w: DMatrix::from_fn(self.horizon(), self.n_w(), |k, j| {
                0.5 * (self.w_lower[(k, j)] + self.w_upper[(k, j)])
            }),
            d: DVector::from_fn(self.n_d(), |i, _| 0.5 * (self.d_lower[i] + self.d_upper[i])),
        }
    }

    /// Componentwise membership test with a small absolute slack.
    pub fn contains(&self, scenario: &Scenario) -> bool {
        const SLACK: f64 = 1e-9;
        if scenario.w.shape() != self.w_lower.shape() || scenario.d.len() != self.n_d() {
            return false;
        }
        let w_ok = scenario.w.iter().zip(self.w_lower.iter().zip(self.w_upper.iter()))
            .all(|(v, (l, u))| *v >= l - SLACK && *v <= u + SLACK);
        let d_ok = scenario.d.iter().zip(self.d_lower.iter().zip(self.d_upper.iter()))
            .all(|(v, (l, u))| *v >= l - SLACK && *v <= u + SLACK);
        w_ok && d_ok
    }

    /// Clamp a point into the box (used to repair numerically out-of-box iterates).
    pub fn clamp(&self, scenario: &mut Scenario) {
        for k in 0..self.horizon() {
            for j in 0..self.n_w() {
                scenario.w[(k, j)] = scenario.w[(k, j)].clamp(self.w_lower[(k, j)], self.w_upper[(k, j)]);
            }
        }
        for i in 0..self.n_d() {
            scenario.d[i] = scenario.d[i].clamp(self.d_lower[i], self.d_upper[i]);
        }
    }

    /// Draw a scenario uniformly from the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Scenario {
        let w = DMatrix::from_fn(self.horizon(), self.n_w(), |k, j| {
            let (l, u) = (self.w_lower[(k, j)], self.w_upper[(k, j)]);
            if u > l { rng.gen_range(l..=u) } else { l }
        });
        let d = DVector::from_fn(self.n_d(), |i, _| {
            let (l, u) = (self.d_lower[i], self.d_upper[i]);
            if u > l { rng.gen_range(l..=u) } else { l }
        });
        Scenario { w, d }
    }
}

/// One realisation of the uncertainty: a disturbance trajectory
/// `w_0..w_{N-1}` (rows of `w`) and a constant parameter vector `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Scenario {
    /// Disturbance at step `k` as a column vector.
    pub fn w_at(&self, k: usize) -> DVector<f64> {
        self.w.row(k).transpose()
    }
}

/// Policy parameters plus the epigraph variable bounding the cost.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionVector {
    /// Time-varying policy parameters `q_0..`.
    pub q: DVector<f64>,
    /// Time-invariant policy parameters (feedback gains and the like).
    pub r: DVector<f64>,
    /// Epigraph bound on the cost.
    pub gamma: f64,
}

impl DecisionVector {
    pub fn zeros(n_q: usize, n_r: usize) -> Self {
        Self { q: DVector::zeros(n_q), r: DVector::zeros(n_r), gamma: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite())
            && self.r.iter().all(|v| v.is_finite())
            && self.gamma.is_finite()
    }

    /// Flat layout `[q; r; gamma]` used by the lower-level NLP.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.q.len() + self.r.len() + 1);
        out.extend(self.q.iter());
        out.extend(self.r.iter());
        out.push(self.gamma);
        out
    }

    pub fn from_flat(flat: &[f64], n_q: usize, n_r: usize) -> Self {
        assert_eq!(flat.len(), n_q + n_r + 1, "flat decision length");
        Self {
            q: DVector::from_column_slice(&flat[..n_q]),
            r: DVector::from_column_slice(&flat[n_q..n_q + n_r]),
            gamma: flat[n_q + n_r],
        }
    }
}

/// An uncertain optimal control problem over a finite horizon.
///
/// All callables must be deterministic and pure: rollout results are cached
/// and re-evaluated freely across threads.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub n_d: usize,
    pub n_q: usize,
    pub n_r: usize,
    pub n_g: usize,
    pub x0: DVector<f64>,
    pub dynamics: DynamicsFn,
    pub policy: PolicyFn,
    pub stage_cost: StageCostFn,
    pub terminal_cost: TerminalCostFn,
    pub constraints: ConstraintFn,
    pub bounds: UncertaintyBounds,
    /// Typical magnitude of each policy parameter (`[q; r]` layout), used to
    /// precondition the lower-level solve. Entries must be positive; use
    /// [`ProblemDefinition::unit_scaling`] when parameters are already O(1).
    pub decision_scaling: DVector<f64>,
}

impl ProblemDefinition {
    /// All-ones scaling for `n_q + n_r` parameters.
    pub fn unit_scaling(n_q: usize, n_r: usize) -> DVector<f64> {
        DVector::from_element(n_q + n_r, 1.0)
    }

    fn check_inputs(&self, decision: &DecisionVector, scenario: &Scenario) -> Result<(), OcpError> {
        if decision.q.len() != self.n_q {
            return Err(OcpError::DimensionMismatch { what: "q", expected: self.n_q, actual: decision.q.len() });
        }
        if decision.r.len() != self.n_r {
            return Err(OcpError::DimensionMismatch { what: "r", expected: self.n_r, actual: decision.r.len() });
        }
        if scenario.d.len() != self.n_d {
            return Err(OcpError::DimensionMismatch { what: "d", expected: self.n_d, actual: scenario.d.len() });
        }
        if scenario.w.ncols() != self.n_w {
            return Err(OcpError::DimensionMismatch { what: "w columns", expected: self.n_w, actual: scenario.w.ncols() });
        }
        if scenario.w.nrows() != self.horizon {
            return Err(OcpError::DimensionMismatch { what: "w rows", expected: self.horizon, actual: scenario.w.nrows() });
        }
        Ok(())
    }
}

/// Closed-loop trajectory with per-step constraint evaluations and total cost.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// States `x_0..x_N`.
    pub states: Vec<DVector<f64>>,
    /// Inputs `u_0..u_{N-1}`.
    pub inputs: Vec<DVector<f64>>,
    /// Constraint vectors `g_0..g_{N-1}`.
    pub g_values: Vec<DVector<f64>>,
    /// Total cost `J_N`.
    pub cost: f64,
}

/// Simulate the closed loop `z(q, r, w, d)` and evaluate costs and
/// constraints along the way.
pub fn rollout(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    scenario: &Scenario,
) -> Result<Rollout, OcpError> {
    problem.check_inputs(decision, scenario)?;
    let n = problem.horizon;
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    let mut g_values = Vec::with_capacity(n);
    let mut cost = 0.0;
    states.push(problem.x0.clone());

    for k in 0..n {
        let w_k = scenario.w_at(k);
        let u_k = (problem.policy)(k, &states, &decision.q, &decision.r);
        if !u_k.iter().all(|v| v.is_finite()) {
            return Err(OcpError::DivergedRollout { step: k });
        }
        let x_k = &states[k];
        let x_next = (problem.dynamics)(k, x_k, &u_k, &w_k, &scenario.d);
        if !x_next.iter().all(|v| v.is_finite()) {
            return Err(OcpError::DivergedRollout { step: k });
        }
        g_values.push((problem.constraints)(k, x_k, &u_k, &w_k, &scenario.d));
        cost += (problem.stage_cost)(k, x_k, &u_k, &w_k, &scenario.d);
        inputs.push(u_k);
        states.push(x_next);
    }

    let w_last = if n > 0 {
        scenario.w_at(n - 1)
    } else {
        DVector::zeros(problem.n_w)
    };
    cost += (problem.terminal_cost)(&states[n], &w_last, &scenario.d);
    if !cost.is_finite() {
        return Err(OcpError::DivergedRollout { step: n });
    }

    Ok(Rollout { states, inputs, g_values, cost })
}

/// Which component attains the aggregated constraint maximum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GArgmax {
    /// Constraint entry `row` at time step `step`.
    Constraint { row: usize, step: usize },
    /// The cost-epigraph residual `J_N - gamma`.
    Cost,
}

/// Value and argmax of the aggregated constraint functional.
#[derive(Clone, Copy, Debug)]
pub struct GValue {
    pub value: f64,
    pub argmax: GArgmax,
}

/// Maximum constraint entry over all steps, ignoring the cost component.
/// Negative infinity when the problem has no inequality rows.
pub fn max_constraint(rollout: &Rollout) -> f64 {
    rollout
        .g_values
        .iter()
        .flat_map(|g| g.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Evaluate `G = max{ max_{h,k} g_{h,k}, J_N - gamma }` on a rollout.
pub fn evaluate_g(rollout: &Rollout, gamma: f64) -> GValue {
    let mut best = GValue { value: rollout.cost - gamma, argmax: GArgmax::Cost };
    for (k, g) in rollout.g_values.iter().enumerate() {
        for (h, &v) in g.iter().enumerate() {
            if v > best.value {
                best = GValue { value: v, argmax: GArgmax::Constraint { row: h, step: k } };
            }
        }
    }
    best
}

/// `G_max` over a finite scenario list by exact enumeration.
///
/// Returns the maximal `G` together with the index of the attaining scenario.
pub fn evaluate_g_max(
    problem: &ProblemDefinition,
    decision: &DecisionVector,
    scenarios: &[Scenario],
) -> Result<(GValue, usize), OcpError> {
    if scenarios.is_empty() {
        return Err(OcpError::EmptyScenarioSet);
    }
    let mut best: Option<(GValue, usize)> = None;
    for (i, scenario) in scenarios.iter().enumerate() {
        let r = rollout(problem, decision, scenario)?;
        let g = evaluate_g(&r, decision.gamma);
        match &best {
            Some((b, _)) if b.value >= g.value => {}
            _ => best = Some((g, i)),
        }
    }
    Ok(best.expect("nonempty scenario list"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_problem(n: usize, x0: f64) -> ProblemDefinition {
        let bounds = UncertaintyBounds::uniform(
            n,
            &DVector::zeros(0),
            &DVector::zeros(0),
            DVector::zeros(0),
            DVector::zeros(0),
        )
        .unwrap();
        ProblemDefinition {
            horizon: n,
            n_x: 1,
            n_u: 1,
            n_w: 0,
            n_d: 0,
            n_q: 0,
            n_r: 0,
            n_g: 0,
            x0: DVector::from_element(1, x0),
            dynamics: Arc::new(|_, x, _, _, _| x.clone()),
            policy: Arc::new(|_, _, _, _| DVector::zeros(1)),
            stage_cost: Arc::new(|_, _, _, _, _| 0.0),
            terminal_cost: Arc::new(|_, _, _| 0.0),
            constraints: Arc::new(|_, _, _, _, _| DVector::zeros(0)),
            bounds,
            decision_scaling: ProblemDefinition::unit_scaling(0, 0),
        }
    }

    #[test]
    fn identity_dynamics_keeps_state() {
        let p = identity_problem(1, 3.25);
        let d = DecisionVector::zeros(0, 0);
        let s = p.bounds.nominal_scenario();
        let r = rollout(&p, &d, &s).unwrap();
        assert_eq!(r.states.len(), 2);
        assert_eq!(r.states[0][0], 3.25);
        assert_eq!(r.states[1][0], 3.25);
    }

    #[test]
    fn rollout_is_deterministic() {
        let p = crate::models::example1_problem();
        let d = DecisionVector::zeros(p.n_q, p.n_r);
        let mut s = p.bounds.nominal_scenario();
        s.d[0] = 0.31;
        let a = rollout(&p, &d, &s).unwrap();
        let b = rollout(&p, &d, &s).unwrap();
        for (xa, xb) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(xa, xb);
        }
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
    }

    #[test]
    fn evaluate_g_trivial_cases() {
        // all g entries = -1, J - gamma = -2 -> G = -1 at some constraint entry
        let r = Rollout {
            states: vec![],
            inputs: vec![],
            g_values: vec![DVector::from_element(2, -1.0); 3],
            cost: 1.0,
        };
        let g = evaluate_g(&r, 3.0);
        assert_eq!(g.value, -1.0);
        assert!(matches!(g.argmax, GArgmax::Constraint { .. }));

        // g <= 0, J = 5, gamma = 3 -> G = 2 attained by the cost component
        let r = Rollout {
            states: vec![],
            inputs: vec![],
            g_values: vec![DVector::from_element(2, -0.5); 3],
            cost: 5.0,
        };
        let g = evaluate_g(&r, 3.0);
        assert_eq!(g.value, 2.0);
        assert_eq!(g.argmax, GArgmax::Cost);
    }

    #[test]
    fn g_max_singleton_and_pairwise() {
        let p = crate::models::example1_problem();
        let d = DecisionVector::zeros(p.n_q, p.n_r);
        let mut s1 = p.bounds.nominal_scenario();
        s1.d[0] = -0.4;
        let single = evaluate_g_max(&p, &d, std::slice::from_ref(&s1)).unwrap();
        let r1 = rollout(&p, &d, &s1).unwrap();
        assert_eq!(single.0.value, evaluate_g(&r1, d.gamma).value);
        assert_eq!(single.1, 0);

        let mut s2 = p.bounds.nominal_scenario();
        s2.d[0] = 0.195;
        let (g, idx) = evaluate_g_max(&p, &d, &[s1.clone(), s2.clone()]).unwrap();
        let g2 = evaluate_g(&rollout(&p, &d, &s2).unwrap(), d.gamma);
        assert_eq!(idx, 1);
        assert_relative_eq!(g.value, g2.value);
    }

    #[test]
    fn g_max_rejects_empty_set() {
        let p = crate::models::example1_problem();
        let d = DecisionVector::zeros(p.n_q, p.n_r);
        assert!(matches!(
            evaluate_g_max(&p, &d, &[]),
            Err(OcpError::EmptyScenarioSet)
        ));
    }

    #[test]
    fn diverged_rollout_reports_step() {
        let mut p = identity_problem(4, 1.0);
        p.dynamics = Arc::new(|k, x, _, _, _| {
            if k == 2 { DVector::from_element(1, f64::NAN) } else { x.clone() }
        });
        let d = DecisionVector::zeros(0, 0);
        let s = p.bounds.nominal_scenario();
        match rollout(&p, &d, &s) {
            Err(OcpError::DivergedRollout { step }) => assert_eq!(step, 2),
            other => panic!("expected diverged rollout, got {other:?}"),
        }
    }

    #[test]
    fn nominal_scenario_is_contained() {
        let p = crate::models::building_problem(crate::models::Scale::Desk);
        let s = p.bounds.nominal_scenario();
        assert!(p.bounds.contains(&s));
    }
}
