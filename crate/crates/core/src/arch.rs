//! Network layouts for the SA and PA agents and the state-CNN.

use mcnoma_nn::{Activation, LayerSpec, NetworkSpec};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Width of every fully connected hidden layer and residual block.
    pub n_full: usize,
    /// Residual blocks per actor and per critic.
    pub d_res: usize,
    /// Width of the last hidden layer before the output.
    pub penultimate: usize,
    /// Units per user in the SA actor's hierarchical input layer.
    pub per_user: usize,
    /// Output channels of the two state-CNN convolutions.
    pub cnn_channels: [usize; 2],
    /// Fully connected hidden layers after the state-CNN's convolutions.
    pub d_cnn: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            n_full: 64,
            d_res: 2,
            penultimate: 64,
            per_user: 8,
            cnn_channels: [8, 16],
            d_cnn: 2,
        }
    }
}

pub const CNN_KERNEL: usize = 3;
pub const CNN_POOL: usize = 2;

fn dense(inputs: usize, outputs: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense {
        inputs,
        outputs,
        activation,
    }
}

/// Length of the per-user SA feature group: weight, rate floor, gains,
/// occupancy, current-user flag.
pub fn sa_group_len(num_subcarriers: usize) -> usize {
    3 + 2 * num_subcarriers
}

pub fn sa_state_len(num_users: usize, num_subcarriers: usize) -> usize {
    num_users * sa_group_len(num_subcarriers)
}

/// Raw SA action: one count output then `N_F` subcarrier scores.
pub fn sa_action_len(num_subcarriers: usize) -> usize {
    1 + num_subcarriers
}

/// PA self-observation length `3 N_F + 2`.
pub fn pa_self_len(num_subcarriers: usize) -> usize {
    3 * num_subcarriers + 2
}

fn trunk(arch: &ArchConfig, inputs: usize, extra_fc: bool, out: usize, out_act: Activation) -> Vec<LayerSpec> {
    let mut layers = vec![dense(inputs, arch.n_full, Activation::Relu)];
    if extra_fc {
        layers.push(dense(arch.n_full, arch.n_full, Activation::Relu));
    }
    layers.extend((0..arch.d_res).map(|_| LayerSpec::Residual { width: arch.n_full }));
    layers.push(dense(arch.n_full, arch.penultimate, Activation::Relu));
    layers.push(dense(arch.penultimate, out, out_act));
    layers
}

/// The two SA actor heads: the count network (one sigmoid output) and the
/// subcarrier-score network (`N_F` sigmoid outputs). Both start with a
/// hierarchical layer that routes each user's feature group separately.
pub fn sa_actor_specs(arch: &ArchConfig, num_users: usize, num_subcarriers: usize) -> Result<Vec<NetworkSpec>> {
    let head = |out: usize| -> Result<NetworkSpec> {
        let mut layers = vec![LayerSpec::Hierarchical {
            groups: num_users,
            blocks: vec![1, 1, num_subcarriers, num_subcarriers, 1],
            outputs_per_group: arch.per_user,
            activation: Activation::Relu,
        }];
        layers.extend(trunk(arch, num_users * arch.per_user, false, out, Activation::Sigmoid));
        Ok(NetworkSpec::new(vec![sa_state_len(num_users, num_subcarriers)], layers)?)
    };
    Ok(vec![head(1)?, head(num_subcarriers)?])
}

pub fn sa_critic_spec(arch: &ArchConfig, num_users: usize, num_subcarriers: usize) -> Result<NetworkSpec> {
    let inputs = sa_state_len(num_users, num_subcarriers) + sa_action_len(num_subcarriers);
    Ok(NetworkSpec::new(vec![inputs], trunk(arch, inputs, true, 1, Activation::Identity))?)
}

/// PA actor reads `[self, compressed others]` and emits one tanh output per subcarrier.
pub fn pa_actor_spec(arch: &ArchConfig, num_subcarriers: usize) -> Result<NetworkSpec> {
    let inputs = 2 * pa_self_len(num_subcarriers);
    Ok(NetworkSpec::new(vec![inputs], trunk(arch, inputs, false, num_subcarriers, Activation::Tanh))?)
}

/// Centralized PA critic over `[self, compressed others, all actions]`.
pub fn pa_critic_spec(arch: &ArchConfig, num_users: usize, num_subcarriers: usize) -> Result<NetworkSpec> {
    let inputs = 2 * pa_self_len(num_subcarriers) + num_users * num_subcarriers;
    Ok(NetworkSpec::new(vec![inputs], trunk(arch, inputs, true, 1, Activation::Identity))?)
}

/// Smallest side `>= max(n, 10)` congruent to 2 mod 4, so that two
/// conv3 + pool2 stages tile exactly and leave at least one cell.
pub fn cnn_side(n: usize) -> usize {
    let mut side = n.max(10);
    while side % 4 != 2 {
        side += 1;
    }
    side
}

/// State-CNN over the zero-padded `(M - 1) x (3 N_F + 2)` view of the other
/// agents; `None` for a single agent.
pub fn state_cnn_spec(arch: &ArchConfig, num_users: usize, num_subcarriers: usize) -> Result<Option<NetworkSpec>> {
    if num_users < 2 {
        return Ok(None);
    }
    let h = cnn_side(num_users - 1);
    let w = cnn_side(pa_self_len(num_subcarriers));
    let [c1, c2] = arch.cnn_channels;
    let mut layers = vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: c1,
            kernel: CNN_KERNEL,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool2d { window: CNN_POOL },
        LayerSpec::Conv2d {
            in_channels: c1,
            out_channels: c2,
            kernel: CNN_KERNEL,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool2d { window: CNN_POOL },
        LayerSpec::Flatten,
    ];
    let pooled = |n: usize| ((n - 2) / 2 - 2) / 2;
    let flat = c2 * pooled(h) * pooled(w);
    let mut width = flat;
    for _ in 0..arch.d_cnn {
        layers.push(dense(width, arch.n_full, Activation::Relu));
        width = arch.n_full;
    }
    layers.push(dense(width, pa_self_len(num_subcarriers), Activation::Sigmoid));
    Ok(Some(NetworkSpec::new(vec![1, h, w], layers)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_sides() {
        assert_eq!(cnn_side(3), 10);
        assert_eq!(cnn_side(11), 14);
        assert_eq!(cnn_side(14), 14);
        assert_eq!(cnn_side(15), 18);
    }

    #[test]
    fn desk_shapes() {
        let arch = ArchConfig::default();
        let cnn = state_cnn_spec(&arch, 4, 3).unwrap().unwrap();
        assert_eq!(cnn.input_shape(), [1, 10, 14]);
        assert_eq!(cnn.output_len(), 11);
        assert!(state_cnn_spec(&arch, 1, 3).unwrap().is_none());
        let heads = sa_actor_specs(&arch, 4, 3).unwrap();
        assert_eq!(heads[0].input_len(), 36);
        assert_eq!((heads[0].output_len(), heads[1].output_len()), (1, 3));
        assert_eq!(sa_critic_spec(&arch, 4, 3).unwrap().input_len(), 40);
        assert_eq!(pa_actor_spec(&arch, 3).unwrap().output_len(), 3);
        assert_eq!(pa_critic_spec(&arch, 4, 3).unwrap().input_len(), 34);
    }

    #[test]
    fn cnn_fits_many_shapes() {
        let arch = ArchConfig::default();
        for m in 2..12 {
            for nf in 1..8 {
                assert!(state_cnn_spec(&arch, m, nf).unwrap().is_some());
            }
        }
    }
}
