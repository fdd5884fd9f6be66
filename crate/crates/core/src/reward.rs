//! Reward coefficients and the bounded exponential shaping of the objective.

/// Penalty for exceeding the per-subcarrier user cap.
pub const OMEGA_U_INT: f64 = -5.0;
pub const OMEGA_U_JO: f64 = 1.5;
pub const OMEGA_JO: f64 = 0.25;
/// Penalty for a failed disparity check on one of the agent's subcarriers.
pub const OMEGA_P_INT_I: f64 = -8.0;
/// Weight of the agent's rate margin, in bit/s/Hz of the total band.
pub const OMEGA_P_INT_II: f64 = 3.0;
pub const OMEGA_P_JO: f64 = 16.0;
pub const OMEGA_M_JO: f64 = 0.45;
/// Cap on the argument of the joint-reward exponential.
pub const EXP_CAP: f64 = 50.0;

/// `scale * exp(min(exponent * objective / W, EXP_CAP))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointShaping {
    pub scale: f64,
    pub exponent: f64,
}

impl JointShaping {
    pub fn shaped(&self, objective: f64, bandwidth: f64) -> f64 {
        self.scale * (self.exponent * objective / bandwidth).min(EXP_CAP).exp()
    }
}

pub const SA_JOINT: JointShaping = JointShaping {
    scale: OMEGA_U_JO,
    exponent: OMEGA_JO,
};

pub const PA_JOINT: JointShaping = JointShaping {
    scale: OMEGA_P_JO,
    exponent: OMEGA_M_JO,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub sa_capacity: f64,
    pub sa_joint: JointShaping,
    pub pa_pdsc: f64,
    pub pa_margin: f64,
    pub pa_joint: JointShaping,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            sa_capacity: OMEGA_U_INT,
            sa_joint: SA_JOINT,
            pa_pdsc: OMEGA_P_INT_I,
            pa_margin: OMEGA_P_INT_II,
            pa_joint: PA_JOINT,
        }
    }
}
