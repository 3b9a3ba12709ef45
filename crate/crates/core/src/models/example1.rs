//! Scalar worst-case analysis example.
//!
//! `x_{k+1} = (A + d) x_k + B u_k` with `A = -0.5`, `B = 1`, `x0 = 0`,
//! a fixed input sequence, and the single constraint `x_5 <= 0` folded into
//! the last stage. The decision vector is empty apart from the epigraph
//! variable, so solving this problem is a pure worst-case analysis: the
//! constraint cannot be made robust and the interesting output is the
//! worst-case parameter, which sits in the *interior* of `[-0.5, 0.5]`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::ocp::{ProblemDefinition, UncertaintyBounds};

pub const EXAMPLE1_INPUTS: [f64; 5] = [-1.0, 1.0, -1.0, -1.0, 1.0];
const A: f64 = -0.5;

pub fn example1_problem() -> ProblemDefinition {
    let bounds = UncertaintyBounds::uniform(
        5,
        &DVector::zeros(0),
        &DVector::zeros(0),
        DVector::from_element(1, -0.5),
        DVector::from_element(1, 0.5),
    )
    .expect("static bounds are well formed");

    ProblemDefinition {
        horizon: 5,
        n_x: 1,
        n_u: 1,
        n_w: 0,
        n_d: 1,
        n_q: 0,
        n_r: 0,
        n_g: 1,
        x0: DVector::zeros(1),
        dynamics: Arc::new(|_, x, u, _, d| DVector::from_element(1, (A + d[0]) * x[0] + u[0])),
        policy: Arc::new(|k, _, _, _| DVector::from_element(1, EXAMPLE1_INPUTS[k])),
        stage_cost: Arc::new(|_, _, _, _, _| 0.0),
        terminal_cost: Arc::new(|_, _, _| 0.0),
        constraints: Arc::new(|k, x, u, _, d| {
            // only the terminal state is constrained: x_5 <= 0, expressed
            // through the last-stage dynamics
            if k == 4 {
                DVector::from_element(1, (A + d[0]) * x[0] + u[0])
            } else {
                DVector::from_element(1, -1.0)
            }
        }),
        bounds,
        decision_scaling: ProblemDefinition::unit_scaling(0, 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{evaluate_g, rollout, DecisionVector, Scenario};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn scenario(d: f64) -> Scenario {
        Scenario { w: DMatrix::zeros(5, 0), d: DVector::from_element(1, d) }
    }

    /// Terminal state as a function of `d`, by independent polynomial
    /// evaluation: x_5 = sum_j u_{4-j} (A + d)^j.
    fn x5_oracle(d: f64) -> f64 {
        let t = A + d;
        (0..5).map(|j| EXAMPLE1_INPUTS[4 - j] * t.powi(j as i32)).sum()
    }

    #[test]
    fn five_step_hand_iteration() {
        // at d = 0: x_5 = 1 + 0.5 - 0.25 - 0.125 - 0.0625 = 1.0625
        let p = example1_problem();
        let dec = DecisionVector::zeros(0, 0);
        let r = rollout(&p, &dec, &scenario(0.0)).unwrap();
        assert_relative_eq!(r.states[5][0], 1.0625);
        assert_relative_eq!(r.states[5][0], x5_oracle(0.0));
    }

    #[test]
    fn boundary_values_collapse() {
        let p = example1_problem();
        let dec = DecisionVector::zeros(0, 0);
        // d = 0.5: A + d = 0, so x_5 = u_4 = 1
        let r = rollout(&p, &dec, &scenario(0.5)).unwrap();
        assert_relative_eq!(r.states[5][0], 1.0);
        // d = -0.5: x_5 = p(-1) = 1 + 1 - 1 - 1 - 1 = -1
        let r = rollout(&p, &dec, &scenario(-0.5)).unwrap();
        assert_relative_eq!(r.states[5][0], -1.0);
        assert_relative_eq!(x5_oracle(-0.5), -1.0);
    }

    #[test]
    fn g_equals_terminal_state_when_gamma_large() {
        let p = example1_problem();
        let dec = DecisionVector { q: DVector::zeros(0), r: DVector::zeros(0), gamma: 1e9 };
        // worst interior point found by a grid oracle on the quartic
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=1_000_000 {
            let d = -0.5 + i as f64 * 1e-6;
            let v = x5_oracle(d);
            if v > best.0 {
                best = (v, d);
            }
        }
        assert!((best.1 - 0.195).abs() < 1e-3, "grid argmax {}", best.1);
        assert!((best.0 - 1.1749).abs() < 1e-3);
        let r = rollout(&p, &dec, &scenario(best.1)).unwrap();
        let g = evaluate_g(&r, dec.gamma);
        assert_relative_eq!(g.value, best.0, epsilon = 1e-12);
    }
}
