//! Centrifugal compressor flow control.
//!
//! Five physical states (suction pressure, discharge pressure, compressor
//! mass flow, shaft speed, recycle mass flow) plus two controller integrals
//! (the flow PI and the auxiliary recycle PI), discretized with the
//! modified Euler (Heun) scheme at a 0.5 s step.
//!
//! Uncertainty layout, `d` in R^9:
//! `d[0..3]` multipliers on the valve gains `k_in, k_out, k_rec` (+-5%),
//! `d[3..9]` multipliers on the map coefficients `alpha_0..alpha_5` (+-2%).
//!
//! Decision: PI gains `r = [K_p, K_i]` on the flow error (no time-varying
//! parameters). The torque and the recycle valve command pass through
//! smooth saturations fit to their hard limits.

use std::sync::{Arc, OnceLock};

use nalgebra::DVector;

use super::constants::*;
use super::saturation::SmoothSaturation;
use super::Scale;
use crate::ocp::{DecisionVector, ProblemDefinition, UncertaintyBounds};

fn torque_saturation() -> &'static SmoothSaturation {
    static SAT: OnceLock<SmoothSaturation> = OnceLock::new();
    SAT.get_or_init(|| SmoothSaturation::fit_to_limits(TORQUE_LIMITS.0, TORQUE_LIMITS.1))
}

fn recycle_saturation() -> &'static SmoothSaturation {
    static SAT: OnceLock<SmoothSaturation> = OnceLock::new();
    SAT.get_or_init(|| SmoothSaturation::fit_to_limits(RECYCLE_LIMITS.0, RECYCLE_LIMITS.1))
}

/// Pressure ratio map `Pi(m, omega)` with explicit coefficients.
pub fn pressure_ratio(m: f64, omega: f64, alpha: &[f64; 6]) -> f64 {
    alpha[0] + alpha[1] * m + alpha[2] * omega + alpha[3] * m * omega
        + alpha[4] * m * m
        + alpha[5] * omega * omega
}

/// Smooth `sqrt(max(z, 0))`: the argument is replaced by
/// `(z + sqrt(z^2 + eps^2)) / 2` before the root.
fn sqrt_smooth(z: f64, eps: f64) -> f64 {
    (0.5 * (z + (z * z + eps * eps).sqrt())).sqrt()
}

/// State indices.
const PS: usize = 0;
const PD: usize = 1;
const M: usize = 2;
const OMEGA: usize = 3;
const MR: usize = 4;
const I_FLOW: usize = 5;
const I_AUX: usize = 6;

fn vector_field(x: &DVector<f64>, u_raw: f64, d: &DVector<f64>, c: &CompressorDefaults) -> DVector<f64> {
    let k_in = d[0];
    let k_out = d[1];
    let k_rec = d[2];
    let mut alpha = COMPRESSOR_ALPHA;
    for (i, a) in alpha.iter_mut().enumerate() {
        *a *= d[3 + i];
    }

    let (ps, pd, m, omega, m_r) = (x[PS], x[PD], x[M], x[OMEGA], x[MR]);
    let tau = torque_saturation().eval(u_raw);
    let u_rec_raw = c.aux_kp * (c.m_r_setpoint - m_r) + c.aux_ki * x[I_AUX];
    let u_rec = recycle_saturation().eval(u_rec_raw);

    let m_in = 0.4 * k_in * c.a_in * sqrt_smooth(c.p_in - ps, c.sqrt_epsilon);
    let m_out = 0.8 * k_out * c.a_out * sqrt_smooth(pd - c.p_out, c.sqrt_epsilon);
    let m_sp = k_rec * u_rec * c.a_rec * sqrt_smooth(pd - ps, c.sqrt_epsilon);
    let pi = pressure_ratio(m, omega, &alpha);

    let cs = c.a01 * c.a01 / c.v_s;
    let cd = c.a01 * c.a01 / c.v_d;
    let cm = c.a1 / c.l_c;

    DVector::from_column_slice(&[
        cs * (m_in - m + m_r),
        cd * (m - m_out - m_r),
        cm * (pi * ps - pd),
        (tau - c.k_tau * m * omega) / c.j_rotor,
        (m_sp - m_r) / c.tau_r,
        m - COMPRESSOR_M_TARGET,
        c.m_r_setpoint - m_r,
    ])
}

/// One Heun step with the control held over the interval.
pub fn compressor_step(
    x: &DVector<f64>,
    u_raw: f64,
    d: &DVector<f64>,
    c: &CompressorDefaults,
    h: f64,
) -> DVector<f64> {
    let k1 = vector_field(x, u_raw, d, c);
    let predictor = x + h * &k1;
    let k2 = vector_field(&predictor, u_raw, d, c);
    x + (h / 2.0) * (k1 + k2)
}

pub fn final_time(scale: Scale) -> f64 {
    match scale {
        Scale::Paper => COMPRESSOR_T_FINAL,
        Scale::Desk => 20.0,
    }
}

pub fn compressor_problem(scale: Scale) -> ProblemDefinition {
    compressor_problem_with(scale, CompressorDefaults::default())
}

pub fn compressor_problem_with(scale: Scale, defaults: CompressorDefaults) -> ProblemDefinition {
    compressor_problem_custom(final_time(scale), COMPRESSOR_STEP, defaults)
}

/// Build the problem for an arbitrary horizon and step (used by the
/// discretization-order test).
pub fn compressor_problem_custom(
    t_final: f64,
    h: f64,
    defaults: CompressorDefaults,
) -> ProblemDefinition {
    let n = (t_final / h).round() as usize;
    let c = Arc::new(defaults);

    let mut d_lower = DVector::zeros(9);
    let mut d_upper = DVector::zeros(9);
    for i in 0..3 {
        d_lower[i] = 1.0 - VALVE_GAIN_REL;
        d_upper[i] = 1.0 + VALVE_GAIN_REL;
    }
    for i in 3..9 {
        d_lower[i] = 1.0 - ALPHA_REL;
        d_upper[i] = 1.0 + ALPHA_REL;
    }
    let bounds = UncertaintyBounds::uniform(
        n,
        &DVector::zeros(0),
        &DVector::zeros(0),
        d_lower,
        d_upper,
    )
    .expect("static bounds are well formed");

    let mut x0 = DVector::zeros(7);
    for i in 0..5 {
        x0[i] = c.x0[i];
    }

    let (w_mr, w_omega, w_track) = COMPRESSOR_WEIGHTS;
    let c_dyn = c.clone();
    let c_con = c.clone();

    ProblemDefinition {
        horizon: n,
        n_x: 7,
        n_u: 1,
        n_w: 0,
        n_d: 9,
        n_q: 0,
        n_r: 2,
        n_g: 4,
        x0,
        dynamics: Arc::new(move |_, x, u, _, d| compressor_step(x, u[0], d, &c_dyn, h)),
        policy: {
            let c = c.clone();
            Arc::new(move |_, history, _, r| {
                let x = history.last().expect("nonempty history");
                DVector::from_element(
                    1,
                    c.torque_ff + r[0] * (x[M] - COMPRESSOR_M_TARGET) + r[1] * x[I_FLOW],
                )
            })
        },
        stage_cost: Arc::new(move |_, x, _, _, _| {
            let track = x[M] - COMPRESSOR_M_TARGET;
            h * (w_mr * x[MR] * x[MR] + w_omega * x[OMEGA] * x[OMEGA] + w_track * track * track)
        }),
        terminal_cost: Arc::new(|_, _, _| 0.0),
        constraints: Arc::new(move |_, x, u, _, d| {
            let next = compressor_step(x, u[0], d, &c_con, h);
            DVector::from_column_slice(&[
                COMPRESSOR_M_BOX.0 - next[M],
                next[M] - COMPRESSOR_M_BOX.1,
                COMPRESSOR_OMEGA_BOX.0 - next[OMEGA],
                next[OMEGA] - COMPRESSOR_OMEGA_BOX.1,
            ])
        }),
        bounds,
        // PI gains of order ten
        decision_scaling: DVector::from_element(2, 10.0),
    }
}

/// A stabilizing starting guess for the PI gains (non-paper default): the
/// torque must rise when the flow drops below target, so both gains are
/// negative.
pub fn compressor_initial_decision() -> DecisionVector {
    DecisionVector {
        q: DVector::zeros(0),
        r: DVector::from_column_slice(&[-10.0, -2.0]),
        gamma: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{rollout, Scenario};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn nominal_scenario(n: usize) -> Scenario {
        Scenario { w: DMatrix::zeros(n, 0), d: DVector::from_element(9, 1.0) }
    }

    #[test]
    fn pressure_ratio_matches_polynomial_oracle() {
        // direct evaluation of the quadratic map at (100, 700)
        let oracle = 2.691 + (-0.014) * 100.0 + (-0.041) * 700.0
            + 0.0009 * 100.0 * 700.0
            + 0.0002 * 100.0f64.powi(2)
            + 0.00002 * 700.0f64.powi(2);
        assert_relative_eq!(oracle, 47.391, epsilon = 1e-12);
        assert_relative_eq!(pressure_ratio(100.0, 700.0, &COMPRESSOR_ALPHA), oracle);
    }

    #[test]
    fn uncertainty_box_is_nine_dimensional() {
        let p = compressor_problem(Scale::Desk);
        assert_eq!(p.n_d, 9);
        assert_eq!(p.n_w, 0);
        for i in 0..3 {
            assert_eq!(p.bounds.d_lower()[i], 0.95);
            assert_eq!(p.bounds.d_upper()[i], 1.05);
        }
        for i in 3..9 {
            assert_eq!(p.bounds.d_lower()[i], 0.98);
            assert_eq!(p.bounds.d_upper()[i], 1.02);
        }
    }

    #[test]
    fn zero_gain_rollout_matches_forward_integration_oracle() {
        // with K_p = K_i = 0 the torque input is identically the
        // feedforward; an independent forward Heun integration must
        // reproduce the rollout
        let p = compressor_problem(Scale::Desk);
        let dec = DecisionVector { q: DVector::zeros(0), r: DVector::zeros(2), gamma: 0.0 };
        let s = nominal_scenario(p.horizon);
        let r = rollout(&p, &dec, &s).unwrap();
        let c = CompressorDefaults::default();
        let mut x = p.x0.clone();
        for k in 0..p.horizon {
            x = compressor_step(&x, c.torque_ff, &s.d, &c, COMPRESSOR_STEP);
            for i in 0..7 {
                assert_relative_eq!(r.states[k + 1][i], x[i], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn heun_is_second_order() {
        // terminal-state error vs a fine reference must shrink ~4x when the
        // step is halved; the torque is held constant so only the
        // integrator error varies (a sampled feedback law would add an
        // O(h) sampling effect on top)
        let c = CompressorDefaults::default();
        let u = c.torque_ff;
        let d = DVector::from_element(9, 1.0);
        let t_final = 10.0;
        let term = |h: f64| {
            let n = (t_final / h).round() as usize;
            let mut x = DVector::zeros(7);
            for i in 0..5 {
                x[i] = c.x0[i];
            }
            for _ in 0..n {
                x = compressor_step(&x, u, &d, &c, h);
            }
            x
        };
        let reference = term(0.5 / 32.0);
        let err = |h: f64| (term(h) - &reference).norm();
        let ratio = err(0.5) / err(0.25);
        assert!(
            (ratio - 4.0).abs() <= 1.0,
            "convergence ratio {ratio} not within 4 +- 25%"
        );
    }

    #[test]
    fn nominal_closed_loop_stays_within_safety_boxes() {
        let p = compressor_problem(Scale::Desk);
        let dec = compressor_initial_decision();
        let s = nominal_scenario(p.horizon);
        let r = rollout(&p, &dec, &s).unwrap();
        for x in &r.states {
            assert!(x[M] > 60.0 && x[M] < 110.0, "m = {}", x[M]);
            assert!(x[OMEGA] > 540.0 && x[OMEGA] < 890.0, "omega = {}", x[OMEGA]);
        }
    }
}
