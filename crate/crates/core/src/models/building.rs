//! Single-zone building thermal model with comfort constraints.
//!
//! Discrete linear dynamics `x_{k+1} = A x_k + B sat(u_k) + W w_k` over a
//! 48 h horizon starting at 6:00, with day/night comfort bounds on the
//! indoor temperature and day/night boxes on the three exogenous
//! disturbances (internal heat gain, solar radiation, external temperature).
//!
//! Uncertainty layout, `d` in R^14:
//! `d[0..9]`  multipliers on the `A` entries (row-major),
//! `d[9..12]` multipliers on the `B` entries,
//! `d[12]`    additive offset on the initial wall temperature,
//! `d[13]`    additive offset on the initial corridor temperature.
//!
//! The initial-condition offsets are folded into the first dynamics step
//! (the stored `x0` stays fixed), the same device the formulation uses to
//! fold terminal-state constraints into the last stage.
//!
//! Policy: `u_k = K * x_k_temp + q_k` with `r = [K]` and one `q` per step.
//! Constraints at stage `k` bound the *next* indoor temperature
//! `x_{k+1}_temp`, so the whole trajectory `x_1..x_N` is covered.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use super::constants::*;
use super::saturation::SmoothSaturation;
use super::Scale;
use crate::ocp::{ProblemDefinition, UncertaintyBounds};

fn building_saturation() -> &'static SmoothSaturation {
    static SAT: OnceLock<SmoothSaturation> = OnceLock::new();
    SAT.get_or_init(|| SmoothSaturation::fit_to_limits(BUILDING_U_LIMITS.0, BUILDING_U_LIMITS.1))
}

pub fn horizon(scale: Scale) -> usize {
    match scale {
        Scale::Paper => 192,
        Scale::Desk => 24,
    }
}

/// Day/night schedule: the horizon spans 48 h from 6:00, so each quarter of
/// it is one 12 h block, alternating day, night, day, night.
pub fn is_day(step: usize, horizon: usize) -> bool {
    (step % (horizon / 2)) < horizon / 4
}

fn t_min(step: usize, horizon: usize) -> f64 {
    if is_day(step, horizon) {
        T_MIN_DAY
    } else {
        T_MIN_NIGHT
    }
}

fn w_box(step: usize, horizon: usize) -> [(f64, f64); 3] {
    if is_day(step, horizon) {
        [GAIN_DAY, SOLAR_DAY, EXT_TEMP_DAY]
    } else {
        [GAIN_NIGHT, SOLAR_NIGHT, EXT_TEMP_NIGHT]
    }
}

/// One step of the uncertain dynamics. Exposed for test oracles.
pub fn building_step(
    k: usize,
    x: &DVector<f64>,
    u_raw: f64,
    w: &DVector<f64>,
    d: &DVector<f64>,
) -> DVector<f64> {
    let sat = building_saturation();
    let mut x_eff = x.clone();
    if k == 0 {
        x_eff[1] += d[12];
        x_eff[2] += d[13];
    }
    let u_sat = sat.eval(u_raw);
    let mut next = DVector::zeros(3);
    for i in 0..3 {
        let mut acc = 0.0;
        for j in 0..3 {
            acc += BUILDING_A[i][j] * d[3 * i + j] * x_eff[j];
        }
        acc += BUILDING_B[i] * d[9 + i] * u_sat;
        for j in 0..3 {
            acc += BUILDING_W[i][j] * w[j];
        }
        next[i] = acc;
    }
    next
}

pub fn building_problem(scale: Scale) -> ProblemDefinition {
    let n = horizon(scale);

    let w_lower = DMatrix::from_fn(n, 3, |k, j| w_box(k, n)[j].0);
    let w_upper = DMatrix::from_fn(n, 3, |k, j| w_box(k, n)[j].1);
    let mut d_lower = DVector::from_element(14, MODEL_MULT_RANGE.0);
    let mut d_upper = DVector::from_element(14, MODEL_MULT_RANGE.1);
    d_lower[12] = INIT_OFFSET_RANGE.0;
    d_lower[13] = INIT_OFFSET_RANGE.0;
    d_upper[12] = INIT_OFFSET_RANGE.1;
    d_upper[13] = INIT_OFFSET_RANGE.1;
    let bounds = UncertaintyBounds::new(w_lower, w_upper, d_lower, d_upper)
        .expect("static bounds are well formed");

    let n_f = n as f64;
    ProblemDefinition {
        horizon: n,
        n_x: 3,
        n_u: 1,
        n_w: 3,
        n_d: 14,
        n_q: n,
        n_r: 1,
        n_g: 2,
        x0: DVector::from_column_slice(&BUILDING_X0),
        dynamics: Arc::new(|k, x, u, w, d| building_step(k, x, u[0], w, d)),
        policy: Arc::new(|k, history, q, r| {
            let x_temp = history.last().expect("nonempty history")[0];
            DVector::from_element(1, r[0] * x_temp + q[k])
        }),
        // energy is paid on the delivered (saturated) power, not on the raw
        // policy output
        stage_cost: Arc::new(move |_, _, u, _, _| {
            let applied = building_saturation().eval(u[0]);
            applied * applied / n_f
        }),
        terminal_cost: Arc::new(|_, _, _| 0.0),
        constraints: Arc::new(move |k, x, u, w, d| {
            let next = building_step(k, x, u[0], w, d);
            DVector::from_column_slice(&[t_min(k + 1, n) - next[0], next[0] - T_MAX])
        }),
        bounds,
        // offsets live on the actuator-input scale (its full span), the
        // feedback gain on W-per-degree
        decision_scaling: {
            let mut s = DVector::from_element(n + 1, BUILDING_U_LIMITS.1 - BUILDING_U_LIMITS.0);
            s[n] = 200.0;
            s
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{rollout, DecisionVector, Scenario};
    use approx::assert_relative_eq;

    fn nominal_d() -> DVector<f64> {
        let mut d = DVector::from_element(14, 1.0);
        d[12] = 0.0;
        d[13] = 0.0;
        d
    }

    /// Inverse of the saturation by bisection, used to hit an exact u_sat.
    fn sat_inverse(target: f64) -> f64 {
        let sat = building_saturation();
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sat.eval(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn one_step_matches_matrix_oracle() {
        // u chosen so that the saturated input is exactly zero, making the
        // step x1 = A x0 + W w; oracle is an independent hand multiply.
        let x0 = DVector::from_column_slice(&BUILDING_X0);
        let w = DVector::from_column_slice(&[5.0, 5.0, 7.0]);
        let u0 = sat_inverse(0.0);
        let x1 = building_step(0, &x0, u0, &w, &nominal_d());
        for i in 0..3 {
            let mut expect = 0.0;
            for j in 0..3 {
                expect += BUILDING_A[i][j] * BUILDING_X0[j] + BUILDING_W[i][j] * w[j];
            }
            assert_relative_eq!(x1[i], expect, max_relative = 1e-9);
        }
    }

    #[test]
    fn comfort_constraint_rows_daytime() {
        let p = building_problem(Scale::Desk);
        let x = DVector::from_column_slice(&[24.0, 24.0, 24.0]);
        let u = DVector::from_element(1, sat_inverse(0.0));
        let w = DVector::zeros(3);
        // step 0 is daytime, as is step 1 it constrains
        let g = (p.constraints)(0, &x, &u, &w, &nominal_d());
        let next = building_step(0, &x, u[0], &w, &nominal_d());
        assert_relative_eq!(g[0], 23.0 - next[0]);
        assert_relative_eq!(g[1], next[0] - 26.0);
    }

    #[test]
    fn uncertainty_box_layout() {
        let p = building_problem(Scale::Desk);
        for i in 0..12 {
            assert_eq!(p.bounds.d_lower()[i], 0.98);
            assert_eq!(p.bounds.d_upper()[i], 1.02);
        }
        for i in 12..14 {
            assert_eq!(p.bounds.d_lower()[i], -1.0);
            assert_eq!(p.bounds.d_upper()[i], 1.0);
        }
        // Table I boxes on the first day/night blocks
        assert_eq!(p.bounds.w_lower().row(0).transpose(), DVector::from_column_slice(&[4.0, 4.0, 6.0]));
        assert_eq!(p.bounds.w_upper().row(0).transpose(), DVector::from_column_slice(&[6.0, 6.0, 8.0]));
        let night = p.horizon / 4;
        assert_eq!(p.bounds.w_lower().row(night).transpose(), DVector::from_column_slice(&[0.0, 0.0, 2.0]));
        assert_eq!(p.bounds.w_upper().row(night).transpose(), DVector::from_column_slice(&[2.0, 0.0, 4.0]));
    }

    #[test]
    fn schedule_alternates_day_night() {
        for &n in &[24usize, 192] {
            assert!(is_day(0, n));
            assert!(is_day(n / 4 - 1, n));
            assert!(!is_day(n / 4, n));
            assert!(!is_day(n / 2 - 1, n));
            assert!(is_day(n / 2, n));
            assert!(!is_day(3 * n / 4, n));
            assert!(is_day(n, n)); // 48 h later: 6:00, day again
        }
    }

    #[test]
    fn rollout_is_affine_in_inputs_for_fixed_d() {
        // superposition on the pre-saturation-free path: with the policy and
        // saturation bypassed via q chosen at sat_inverse(.), check affinity
        // of the state response in (x0-offsets, w) numerically.
        let p = building_problem(Scale::Desk);
        let zero_u = sat_inverse(0.0);
        let dec = DecisionVector {
            q: DVector::from_element(p.n_q, zero_u),
            r: DVector::zeros(1),
            gamma: 0.0,
        };
        // affine map x_N(w); test superposition of two disturbance profiles
        let mut d = nominal_d();
        d[12] = 0.3;
        let base = p.bounds.nominal_scenario().w * 0.0;
        let mk = |w: DMatrix<f64>| Scenario { w, d: d.clone() };
        let wa = DMatrix::from_fn(p.horizon, 3, |k, j| 0.5 + 0.1 * (k + j) as f64 % 2.0);
        let wb = DMatrix::from_fn(p.horizon, 3, |k, j| 1.0 + 0.05 * (k * j) as f64 % 1.0);
        let x_of = |w: DMatrix<f64>| {
            rollout(&p, &dec, &mk(w)).unwrap().states[p.horizon].clone()
        };
        let x0v = x_of(base.clone());
        let xa = x_of(wa.clone());
        let xb = x_of(wb.clone());
        let xab = x_of(wa + wb);
        // x(a+b) - x(0) = (x(a) - x(0)) + (x(b) - x(0)) for a linear response
        // around the zero-disturbance trajectory (note: u_sat is constant 0
        // along all four rollouts because q is fixed and K = 0... only if the
        // policy does not feed back, which holds here with K=0 and fixed q)
        for i in 0..3 {
            let lhs = xab[i] - x0v[i];
            let rhs = (xa[i] - x0v[i]) + (xb[i] - x0v[i]);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn saturation_keeps_inputs_within_one_percent_of_limits() {
        let sat = building_saturation();
        let range = BUILDING_U_LIMITS.1 - BUILDING_U_LIMITS.0;
        for i in 0..=1000 {
            let u = -1e5 + i as f64 * 200.0;
            let v = sat.eval(u);
            assert!(v >= BUILDING_U_LIMITS.0 - 0.01 * range);
            assert!(v <= BUILDING_U_LIMITS.1 + 0.01 * range);
        }
    }
}
