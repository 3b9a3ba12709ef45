//! Numeric constants for the shipped models.
//!
//! Constants fall in two groups: values transcribed from the source model
//! descriptions (building matrices, disturbance ranges, comfort bounds,
//! compressor map coefficients, constraint boxes, saturation coefficients)
//! and filled-in physical defaults for quantities the descriptions leave
//! unspecified. Every filled-in value is tagged "non-paper default" and can
//! be overridden through [`CompressorDefaults`].

/// Building state matrix `A` (3x3, row-major).
pub const BUILDING_A: [[f64; 3]; 3] = [
    [0.8511, 0.0541, 0.0707],
    [0.1293, 0.8635, 0.0055],
    [0.0989, 0.0032, 0.7541],
];

/// Building input matrix `B` (3x1).
pub const BUILDING_B: [f64; 3] = [3.5e-3, 0.3e-3, 0.2e-3];

/// Building disturbance matrix `W` (3x3, row-major).
pub const BUILDING_W: [[f64; 3]; 3] = [
    [22.217e-3, 1.7912e-3, 42.2123e-3],
    [1.5376e-3, 0.6944e-3, 2.29214e-3],
    [103.1813e-3, 0.1032e-3, 196.0444e-3],
];

/// Initial state: indoor, wall, corridor temperature in deg C.
pub const BUILDING_X0: [f64; 3] = [25.0, 24.0, 24.0];

pub const T_MAX: f64 = 26.0;
pub const T_MIN_DAY: f64 = 23.0;
pub const T_MIN_NIGHT: f64 = 17.0;

/// Disturbance ranges (lower, upper) by day/night: internal heat gain,
/// solar radiation, external temperature.
pub const GAIN_DAY: (f64, f64) = (4.0, 6.0);
pub const GAIN_NIGHT: (f64, f64) = (0.0, 2.0);
pub const SOLAR_DAY: (f64, f64) = (4.0, 6.0);
pub const SOLAR_NIGHT: (f64, f64) = (0.0, 0.0);
pub const EXT_TEMP_DAY: (f64, f64) = (6.0, 8.0);
pub const EXT_TEMP_NIGHT: (f64, f64) = (2.0, 4.0);

/// Multiplicative uncertainty range on the `A` and `B` entries.
pub const MODEL_MULT_RANGE: (f64, f64) = (0.98, 1.02);
/// Additive uncertainty range on the wall/corridor initial temperatures.
pub const INIT_OFFSET_RANGE: (f64, f64) = (-1.0, 1.0);

/// Hard control limits in W.
pub const BUILDING_U_LIMITS: (f64, f64) = (-500.0, 1200.0);
/// Saturation coefficients as printed in the source description; kept for
/// comparison. With these constants the printed closed form is not a usable
/// (monotone increasing, limit-respecting) saturation, so the shipped models
/// use coefficients refit to the hard limits instead.
pub const BUILDING_SAT_PRINTED: [f64; 4] = [-5030.0, 2.937, 0.003, 1207.0];

/// Compressor map coefficients `alpha_0..alpha_5`.
pub const COMPRESSOR_ALPHA: [f64; 6] = [2.691, -0.014, -0.041, 0.0009, 0.0002, 0.00002];

/// Target mass flow in kg/s.
pub const COMPRESSOR_M_TARGET: f64 = 100.0;
/// Objective weights on recycle flow, speed, and flow tracking error.
pub const COMPRESSOR_WEIGHTS: (f64, f64, f64) = (100.0, 0.1, 1000.0);
/// Horizon in seconds at full scale.
pub const COMPRESSOR_T_FINAL: f64 = 100.0;
/// Discretization step in seconds (modified Euler).
pub const COMPRESSOR_STEP: f64 = 0.5;

/// Safety boxes.
pub const COMPRESSOR_M_BOX: (f64, f64) = (65.0, 105.0);
pub const COMPRESSOR_OMEGA_BOX: (f64, f64) = (550.0, 876.0);

/// Torque limits in N m.
pub const TORQUE_LIMITS: (f64, f64) = (0.0, 1000.0);
pub const TORQUE_SAT_PRINTED: [f64; 4] = [73.324, 0.072, 0.005, 0.0];
/// Recycle valve command limits.
pub const RECYCLE_LIMITS: (f64, f64) = (0.0, 1.0);
pub const RECYCLE_SAT_PRINTED: [f64; 4] = [0.072, 0.071, 5.279, -0.001];

/// Relative half-width of the valve gain uncertainty.
pub const VALVE_GAIN_REL: f64 = 0.05;
/// Relative half-width of the map coefficient uncertainty.
pub const ALPHA_REL: f64 = 0.02;

/// Physical and closure constants for the compressor that the source
/// description does not reprint. All values here are non-paper defaults,
/// chosen so that the nominal closed loop is stable under the 0.5 s
/// discretization and the safety constraints are activatable.
#[derive(Clone, Debug)]
pub struct CompressorDefaults {
    /// Speed-of-sound constant in the pressure dynamics (non-paper default,
    /// scaled units).
    pub a01: f64,
    /// Suction volume (non-paper default).
    pub v_s: f64,
    /// Discharge volume (non-paper default).
    pub v_d: f64,
    /// Duct cross-section (non-paper default).
    pub a1: f64,
    /// Duct length (non-paper default).
    pub l_c: f64,
    /// Shaft inertia (non-paper default).
    pub j_rotor: f64,
    /// Recycle flow time constant in s (non-paper default).
    pub tau_r: f64,
    /// Reaction torque closure `tau_c = k_tau * m * omega` (non-paper default).
    pub k_tau: f64,
    /// Inlet/outlet/recycle valve orifice areas (non-paper defaults; the
    /// nominal valve gains are folded into the areas, so `k = 1` nominally).
    pub a_in: f64,
    pub a_out: f64,
    pub a_rec: f64,
    /// External suction-side pressure (non-paper default).
    pub p_in: f64,
    /// External discharge-side pressure (non-paper default).
    pub p_out: f64,
    /// Auxiliary PI gains regulating the recycle flow toward its
    /// surge-margin setpoint (non-paper defaults).
    pub aux_kp: f64,
    pub aux_ki: f64,
    /// Surge-margin setpoint for the recycle mass flow in kg/s (non-paper
    /// default).
    pub m_r_setpoint: f64,
    /// Feedforward torque command added to the PI output (non-paper
    /// default). Holds the shaft near the speed where the map balances the
    /// target flow, so the decision gains only shape the transient.
    pub torque_ff: f64,
    /// Smoothing scale for the square roots in the valve equations.
    pub sqrt_epsilon: f64,
    /// Initial physical state `(p_s, p_d, m, omega, m_r)` (non-paper default).
    pub x0: [f64; 5],
}

impl Default for CompressorDefaults {
    fn default() -> Self {
        Self {
            a01: 10.0,
            v_s: 250.0,
            v_d: 250.0,
            // the flow state is open-loop unstable through the map
            // (d(pi)/dm > 0 near the target), so the duct constant a1/l_c
            // is kept small enough for the suction-pressure coupling to
            // dominate the linearization
            a1: 0.001,
            l_c: 1.0,
            j_rotor: 10.0,
            tau_r: 2.0,
            k_tau: 0.01,
            a_in: 35.36,
            a_out: 17.68,
            a_rec: 0.5,
            p_in: 150.0,
            p_out: 4689.1,
            aux_kp: 0.2,
            aux_ki: 0.05,
            m_r_setpoint: 5.0,
            torque_ff: 670.0,
            sqrt_epsilon: 1e-6,
            x0: [105.0, 4700.0, 96.0, 680.0, 5.0],
        }
    }
}

impl CompressorDefaults {
    /// Override a named scalar field; returns false for unknown names.
    /// Used by configuration files.
    pub fn set_by_name(&mut self, name: &str, value: f64) -> bool {
        match name {
            "a01" => self.a01 = value,
            "v_s" => self.v_s = value,
            "v_d" => self.v_d = value,
            "a1" => self.a1 = value,
            "l_c" => self.l_c = value,
            "j_rotor" => self.j_rotor = value,
            "tau_r" => self.tau_r = value,
            "k_tau" => self.k_tau = value,
            "a_in" => self.a_in = value,
            "a_out" => self.a_out = value,
            "a_rec" => self.a_rec = value,
            "p_in" => self.p_in = value,
            "p_out" => self.p_out = value,
            "aux_kp" => self.aux_kp = value,
            "aux_ki" => self.aux_ki = value,
            "m_r_setpoint" => self.m_r_setpoint = value,
            "torque_ff" => self.torque_ff = value,
            "sqrt_epsilon" => self.sqrt_epsilon = value,
            _ => return false,
        }
        true
    }
}
