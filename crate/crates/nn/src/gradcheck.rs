//! Central finite-difference comparison of analytic gradients.

use rand::Rng;

use crate::error::Result;
use crate::network::Network;
use crate::tensor::Tensor;

/// Denominator floor of the relative error, absorbing round-off on near-zero gradients.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub max_rel_error_params: f64,
    pub max_rel_error_input: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.max_rel_error_params.max(self.max_rel_error_input)
    }
}

/// `|a - n| / max(|a| + |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_FLOOR)
}

/// Checks every parameter and input coordinate of `net` at `input` for the
/// scalar loss `sum(c * y)` with random weights `c`.
pub fn check<R: Rng + ?Sized>(net: &Network, input: &Tensor, step: f64, rng: &mut R) -> Result<GradReport> {
    let (y, cache) = net.forward(input)?;
    let weights: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = |n: &Network, x: &Tensor| -> Result<f64> {
        let out = n.predict(x)?;
        Ok(out.data().iter().zip(&weights).map(|(a, b)| a * b).sum())
    };

    let mut work = net.clone();
    work.zero_grad();
    let upstream = Tensor::from_vec(y.shape(), weights.clone())?;
    let dx = work.backward(&cache, &upstream)?;
    let analytic = work.flat_grads();

    let base = net.flat_params();
    let mut probe = net.clone();
    let mut max_p: f64 = 0.0;
    for i in 0..base.len() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + step;
        probe.set_flat_params(&shifted)?;
        let plus = loss(&probe, input)?;
        shifted[i] = base[i] - step;
        probe.set_flat_params(&shifted)?;
        let minus = loss(&probe, input)?;
        max_p = max_p.max(relative_error(analytic[i], (plus - minus) / (2.0 * step)));
    }

    let mut max_x: f64 = 0.0;
    let mut x = input.clone();
    for i in 0..input.len() {
        let orig = input.data()[i];
        x.data_mut()[i] = orig + step;
        let plus = loss(net, &x)?;
        x.data_mut()[i] = orig - step;
        let minus = loss(net, &x)?;
        x.data_mut()[i] = orig;
        max_x = max_x.max(relative_error(dx.data()[i], (plus - minus) / (2.0 * step)));
    }
    Ok(GradReport {
        max_rel_error_params: max_p,
        max_rel_error_input: max_x,
        checked: base.len() + input.len(),
    })
}
