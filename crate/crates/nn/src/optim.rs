use crate::error::{NnError, Result};
use crate::network::Network;

/// RMSProp: `acc <- rho * acc + (1 - rho) * g^2`, `p <- p - lr * g / sqrt(acc + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    accumulators: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            rho,
            epsilon,
            accumulators: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        if self.accumulators.is_empty() {
            self.accumulators = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.accumulators.len() != net.params().len() {
            return Err(NnError::InvalidSpec(
                "optimizer state belongs to a different network".into(),
            ));
        }
        for (param, acc) in net.params_mut().iter_mut().zip(&mut self.accumulators) {
            if acc.len() != param.len() {
                return Err(NnError::InvalidSpec(
                    "optimizer state belongs to a different network".into(),
                ));
            }
            let grads = param.grad().to_vec();
            for ((p, a), g) in param.data_mut().iter_mut().zip(acc.iter_mut()).zip(&grads) {
                *a = self.rho * *a + (1.0 - self.rho) * g * g;
                *p -= self.learning_rate * g / (*a + self.epsilon).sqrt();
            }
            param.zero_grad();
        }
        if net.params().iter().any(|p| p.data().iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFinite("parameters after optimizer step"));
        }
        Ok(())
    }
}
