//! DDPG machinery: replay buffers, actor/critic pairs with target copies,
//! single-agent updates and centralized-critic multi-agent updates.

use std::collections::VecDeque;

use mcnoma_nn::{soft_update, ForwardCache, Network, NetworkSpec, RmsProp, Tensor};
use rand::Rng;

use crate::error::{CoreError, Result};

pub const RMSPROP_RHO: f64 = 0.9;
/// Final-layer weights start this much smaller than the default init, so
/// bounded heads begin unsaturated and initial Q estimates sit near zero.
pub const OUTPUT_INIT_SCALE: f64 = 1e-2;
pub const RMSPROP_EPS: f64 = 1e-8;

/// One replay record. `action` is the raw actor output before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Terminal step of an episode; the bootstrap term is dropped.
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest record is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
    inserted: u64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
            inserted: 0,
        }
    }

    pub fn store(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn inserted(&self) -> u64 {
        self.inserted
    }
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&T>> {
        if batch > self.items.len() || batch == 0 {
            return Err(CoreError::Underfull {
                len: self.items.len(),
                requested: batch,
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|k| &self.items[k])
            .collect())
    }
}

/// Several networks reading the same input; outputs are concatenated.
#[derive(Debug, Clone)]
pub struct Actor {
    heads: Vec<Network>,
    optimizers: Vec<RmsProp>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(specs: Vec<NetworkSpec>, learning_rate: f64, rng: &mut R) -> Result<Self> {
        let input = specs.first().map(|s| s.input_len()).ok_or_else(|| {
            CoreError::Shape("actor needs at least one head".into())
        })?;
        if specs.iter().any(|s| s.input_shape() != [input]) {
            return Err(CoreError::Shape("actor heads must share a flat input".into()));
        }
        let heads: Vec<Network> = specs
            .into_iter()
            .map(|s| {
                let mut net = Network::new(s, rng);
                net.scale_output_weights(OUTPUT_INIT_SCALE);
                net
            })
            .collect();
        let optimizers = heads
            .iter()
            .map(|_| RmsProp::new(learning_rate, RMSPROP_RHO, RMSPROP_EPS))
            .collect();
        Ok(Self { heads, optimizers })
    }

    pub fn heads(&self) -> &[Network] {
        &self.heads
    }
    pub fn heads_mut(&mut self) -> &mut [Network] {
        &mut self.heads
    }
    pub fn input_len(&self) -> usize {
        self.heads[0].spec().input_len()
    }
    pub fn output_len(&self) -> usize {
        self.heads.iter().map(|h| h.spec().output_len()).sum()
    }

    pub fn act(&self, states: &Tensor) -> Result<Tensor> {
        let outs = self
            .heads
            .iter()
            .map(|h| h.predict(states))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(concat_columns(&outs)?)
    }

    fn forward(&self, states: &Tensor) -> Result<(Tensor, Vec<ForwardCache>)> {
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut caches = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (o, c) = h.forward(states)?;
            outs.push(o);
            caches.push(c);
        }
        Ok((concat_columns(&outs)?, caches))
    }

    fn backward_and_step(&mut self, caches: &[ForwardCache], upstream: &Tensor) -> Result<f64> {
        let mut offset = 0;
        let mut norm_sq = 0.0;
        for ((head, opt), cache) in self.heads.iter_mut().zip(&mut self.optimizers).zip(caches) {
            let width = head.spec().output_len();
            let part = slice_columns(upstream, offset, width)?;
            offset += width;
            head.zero_grad();
            head.backward(cache, &part)?;
            norm_sq += head.grad_norm().powi(2);
            opt.step(head)?;
        }
        debug_assert_eq!(offset, upstream.row_len());
        Ok(norm_sq.sqrt())
    }

    pub fn soft_update_from(&mut self, online: &Actor, tau: f64) -> Result<()> {
        for (t, o) in self.heads.iter_mut().zip(&online.heads) {
            soft_update(t, o, tau)?;
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.heads.iter().flat_map(Network::flat_params).collect()
    }
}

/// Hyper-parameters shared by every actor/critic pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgParams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// Online and target actor/critic networks with their optimizers.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Actor,
    pub actor_target: Actor,
    pub critic: Network,
    pub critic_target: Network,
    critic_opt: RmsProp,
    pub gamma: f64,
    pub tau: f64,
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(
        actor_specs: Vec<NetworkSpec>,
        critic_spec: NetworkSpec,
        params: DdpgParams,
        rng: &mut R,
    ) -> Result<Self> {
        if !(params.gamma >= 0.0 && params.gamma < 1.0) {
            return Err(CoreError::InvalidScenario(format!("discount must lie in [0, 1), got {}", params.gamma)));
        }
        if !(0.0..=1.0).contains(&params.tau) {
            return Err(CoreError::InvalidScenario(format!("tau must lie in [0, 1], got {}", params.tau)));
        }
        let actor = Actor::new(actor_specs, params.actor_lr, rng)?;
        let mut critic = Network::new(critic_spec, rng);
        critic.scale_output_weights(OUTPUT_INIT_SCALE);
        if critic.spec().output_len() != 1 {
            return Err(CoreError::Shape("critic must output a single value".into()));
        }
        Ok(Self {
            actor_target: actor.clone(),
            actor,
            critic_target: critic.clone(),
            critic,
            critic_opt: RmsProp::new(params.critic_lr, RMSPROP_RHO, RMSPROP_EPS),
            gamma: params.gamma,
            tau: params.tau,
        })
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::from_vec(&[1, state.len()], state.to_vec()).map_err(CoreError::from)?;
        Ok(self.actor.act(&t)?.into_data())
    }

    /// Critic value for single (state, action).
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut row = state.to_vec();
        row.extend_from_slice(action);
        let t = Tensor::from_vec(&[1, row.len()], row)?;
        Ok(self.critic.predict(&t)?.data()[0])
    }

    /// One RMSProp step on the mean squared TD error against
    /// `r + gamma (1 - done) Q'(s', mu'(s'))`; returns the pre-step loss.
    pub fn critic_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(CoreError::Underfull { len: 0, requested: 1 });
        }
        let next = Tensor::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
        let next_actions = self.actor_target.act(&next)?;
        self.critic_update_with(batch, &next_actions)
    }

    /// As [`Self::critic_update`] with caller-chosen next-state actions,
    /// one row per transition.
    pub fn critic_update_with(&mut self, batch: &[&Transition], next_actions: &Tensor) -> Result<f64> {
        if batch.is_empty() {
            return Err(CoreError::Underfull { len: 0, requested: 1 });
        }
        if next_actions.batch() != batch.len() {
            return Err(CoreError::Shape("one next action per transition required".into()));
        }
        let next = Tensor::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
        let next_q = self.critic_target.predict(&hcat(&next, next_actions)?)?;
        let targets: Vec<f64> = batch
            .iter()
            .zip(next_q.data())
            .map(|(t, q)| t.reward + if t.done { 0.0 } else { self.gamma * q })
            .collect();

        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let actions = Tensor::from_rows(&batch.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;
        let input = hcat(&states, &actions)?;
        td_step(&mut self.critic, &mut self.critic_opt, &input, &targets).map(|(loss, _)| loss)
    }

    /// One RMSProp step ascending `Q(s, mu(s))`; returns the actor gradient norm.
    pub fn actor_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(CoreError::Underfull { len: 0, requested: 1 });
        }
        let states = Tensor::from_rows(&batch.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let (actions, caches) = self.actor.forward(&states)?;
        let input = hcat(&states, &actions)?;
        let dq = action_gradient(&mut self.critic, &input, states.row_len(), actions.row_len())?;
        self.actor.backward_and_step(&caches, &dq)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        self.actor_target.soft_update_from(&self.actor, self.tau)?;
        soft_update(&mut self.critic_target, &self.critic, self.tau)?;
        Ok(())
    }
}

/// Forward, MSE loss against `targets`, backward and one optimizer step.
/// Returns the pre-step loss and the input gradient.
fn td_step(net: &mut Network, opt: &mut RmsProp, input: &Tensor, targets: &[f64]) -> Result<(f64, Tensor)> {
    let (q, cache) = net.forward(input)?;
    let b = targets.len() as f64;
    let diff: Vec<f64> = q.data().iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b;
    if !loss.is_finite() {
        return Err(CoreError::NonFinite("critic loss".into()));
    }
    let upstream = Tensor::from_vec(q.shape(), diff.iter().map(|d| 2.0 * d / b).collect())?;
    net.zero_grad();
    let dinput = net.backward(&cache, &upstream)?;
    opt.step(net)?;
    Ok((loss, dinput))
}

/// `-dQ/da / B` for the action columns `[skip, skip + width)` of the critic
/// input; critic parameter gradients are discarded.
fn action_gradient(critic: &mut Network, input: &Tensor, skip: usize, width: usize) -> Result<Tensor> {
    let (q, cache) = critic.forward(input)?;
    let b = q.batch() as f64;
    let upstream = Tensor::from_vec(q.shape(), vec![-1.0 / b; q.len()])?;
    let dinput = critic.backward(&cache, &upstream)?;
    critic.zero_grad();
    Ok(slice_columns(&dinput, skip, width)?)
}

pub fn hcat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    concat_columns(&[a.clone(), b.clone()])
}

fn concat_columns(parts: &[Tensor]) -> Result<Tensor> {
    let batch = parts.first().map_or(0, Tensor::batch);
    if parts.iter().any(|p| p.batch() != batch) {
        return Err(CoreError::Shape("column concatenation across different batch sizes".into()));
    }
    let width: usize = parts.iter().map(Tensor::row_len).sum();
    let mut data = Vec::with_capacity(batch * width);
    for r in 0..batch {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Ok(Tensor::from_vec(&[batch, width], data)?)
}

fn slice_columns(t: &Tensor, offset: usize, width: usize) -> Result<Tensor> {
    let batch = t.batch();
    let mut data = Vec::with_capacity(batch * width);
    for r in 0..batch {
        data.extend_from_slice(&t.row(r)[offset..offset + width]);
    }
    Ok(Tensor::from_vec(&[batch, width], data)?)
}

/// One joint multi-agent replay record; per-agent vectors are indexed by agent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransition {
    pub selfs: Vec<Vec<f64>>,
    /// Each agent's (masked) view of the others, flattened row-major.
    pub others: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_selfs: Vec<Vec<f64>>,
    pub next_others: Vec<Vec<f64>>,
    pub done: bool,
}

/// Maps an agent's flattened view of the others to the compressed
/// observation fed to its actor and critic.
#[derive(Debug, Clone)]
pub struct Compressor {
    net: Network,
    optimizer: RmsProp,
    rows: usize,
    cols: usize,
}

impl Compressor {
    /// `rows x cols` views are zero-padded into the network's `[1, H, W]` input.
    pub fn new(net: Network, rows: usize, cols: usize, learning_rate: f64) -> Result<Self> {
        let shape = net.spec().input_shape();
        if shape.len() != 3 || shape[0] != 1 || shape[1] < rows || shape[2] < cols {
            return Err(CoreError::Shape(format!(
                "compressor input {shape:?} cannot hold a {rows}x{cols} view"
            )));
        }
        Ok(Self {
            net,
            optimizer: RmsProp::new(learning_rate, RMSPROP_RHO, RMSPROP_EPS),
            rows,
            cols,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }
    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }
    pub fn output_len(&self) -> usize {
        self.net.spec().output_len()
    }

    fn pad(&self, views: &[&[f64]]) -> Result<Tensor> {
        let shape = self.net.spec().input_shape();
        let (h, w) = (shape[1], shape[2]);
        let mut data = vec![0.0; views.len() * h * w];
        for (b, v) in views.iter().enumerate() {
            if v.len() != self.rows * self.cols {
                return Err(CoreError::Shape(format!(
                    "view of {} entries, expected {}x{}",
                    v.len(),
                    self.rows,
                    self.cols
                )));
            }
            for r in 0..self.rows {
                let dst = b * h * w + r * w;
                data[dst..dst + self.cols].copy_from_slice(&v[r * self.cols..(r + 1) * self.cols]);
            }
        }
        Ok(Tensor::from_vec(&[views.len(), 1, h, w], data)?)
    }

    pub fn compress(&self, views: &[&[f64]]) -> Result<Tensor> {
        Ok(self.net.predict(&self.pad(views)?)?)
    }

    fn forward(&self, views: &[&[f64]]) -> Result<(Tensor, ForwardCache)> {
        Ok(self.net.forward(&self.pad(views)?)?)
    }

    fn backward_and_step(&mut self, cache: &ForwardCache, upstream: &Tensor) -> Result<()> {
        self.net.zero_grad();
        self.net.backward(cache, upstream)?;
        self.optimizer.step(&mut self.net)?;
        Ok(())
    }
}

/// A multi-agent learner: its own compressor (absent with a single agent,
/// where the compressed observation is a zero vector of `info_len`) plus an
/// actor/critic pair whose critic reads `[self, info, a_1 .. a_M]`.
#[derive(Debug, Clone)]
pub struct MaAgent {
    pub compressor: Option<Compressor>,
    pub info_len: usize,
    pub ac: ActorCritic,
}

impl MaAgent {
    pub fn info(&self, views: &[&[f64]]) -> Result<Tensor> {
        match &self.compressor {
            Some(c) => c.compress(views),
            None => Ok(Tensor::zeros(&[views.len(), self.info_len])),
        }
    }

    /// Actor input `[self, info]` for one observation.
    pub fn actor_input(&self, self_state: &[f64], others: &[f64]) -> Result<Vec<f64>> {
        let info = self.info(&[others])?;
        let mut row = self_state.to_vec();
        row.extend_from_slice(info.data());
        Ok(row)
    }

    pub fn act(&self, self_state: &[f64], others: &[f64]) -> Result<Vec<f64>> {
        self.ac.act(&self.actor_input(self_state, others)?)
    }
}

fn rows_of<'a>(batch: &'a [&JointTransition], pick: impl Fn(&'a JointTransition) -> &'a [f64]) -> Vec<&'a [f64]> {
    batch.iter().map(|t| pick(t)).collect()
}

/// Centralized TD step for agent `m`: targets use every agent's target actor
/// at the next observations; the loss gradient also trains agent `m`'s
/// compressor. Returns the pre-step loss.
/// Target-actor actions on the next observations of `batch`, one tensor
/// per agent. Observations pass through each agent's online compressor.
pub fn ma_target_actions(agents: &[MaAgent], batch: &[&JointTransition]) -> Result<Vec<Tensor>> {
    agents
        .iter()
        .enumerate()
        .map(|(k, agent)| {
            let selfs = Tensor::from_rows(&rows_of(batch, |t| t.next_selfs[k].as_slice()))?;
            let info = agent.info(&rows_of(batch, |t| t.next_others[k].as_slice()))?;
            agent.ac.actor_target.act(&hcat(&selfs, &info)?)
        })
        .collect()
}

pub fn ma_critic_update(agents: &mut [MaAgent], m: usize, batch: &[&JointTransition]) -> Result<f64> {
    let next_actions = ma_target_actions(agents, batch)?;
    ma_critic_update_with(agents, m, batch, next_actions)
}

/// Critic step for agent `m` given precomputed next-step target actions,
/// so that one sampled batch can serve every agent of a round.
pub fn ma_critic_update_with(
    agents: &mut [MaAgent],
    m: usize,
    batch: &[&JointTransition],
    next_actions: Vec<Tensor>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Underfull { len: 0, requested: 1 });
    }
    let n_agents = agents.len();
    if m >= n_agents || next_actions.len() != n_agents {
        return Err(CoreError::Shape(format!("agent {m} of {n_agents}, {} action blocks", next_actions.len())));
    }
    let next_self = Tensor::from_rows(&rows_of(batch, |t| t.next_selfs[m].as_slice()))?;
    let next_info = agents[m].info(&rows_of(batch, |t| t.next_others[m].as_slice()))?;
    let mut next_parts = vec![next_self, next_info];
    next_parts.extend(next_actions);
    let agent = &mut agents[m];
    let next_q = agent.ac.critic_target.predict(&concat_columns(&next_parts)?)?;
    let targets: Vec<f64> = batch
        .iter()
        .zip(next_q.data())
        .map(|(t, q)| t.rewards[m] + if t.done { 0.0 } else { agent.ac.gamma * q })
        .collect();

    let selfs = Tensor::from_rows(&rows_of(batch, |t| t.selfs[m].as_slice()))?;
    let views = rows_of(batch, |t| t.others[m].as_slice());
    let (info, cnn_cache) = match &agent.compressor {
        Some(c) => {
            let (i, cache) = c.forward(&views)?;
            (i, Some(cache))
        }
        None => (Tensor::zeros(&[batch.len(), agent.info_len]), None),
    };
    let mut parts = vec![selfs.clone(), info.clone()];
    for k in 0..n_agents {
        parts.push(Tensor::from_rows(&rows_of(batch, |t| t.actions[k].as_slice()))?);
    }
    let input = concat_columns(&parts)?;
    let (loss, dinput) = td_step(&mut agent.ac.critic, &mut agent.ac.critic_opt, &input, &targets)?;
    if let (Some(c), Some(cache)) = (agent.compressor.as_mut(), cnn_cache) {
        let dinfo = slice_columns(&dinput, selfs.row_len(), info.row_len())?;
        c.backward_and_step(&cache, &dinfo)?;
    }
    Ok(loss)
}

/// Policy step for agent `m`: gradient of its centralized critic with
/// respect to its own action only, other agents' actions held at their
/// batch values. Returns the actor gradient norm.
pub fn ma_actor_update(agents: &mut [MaAgent], m: usize, batch: &[&JointTransition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoreError::Underfull { len: 0, requested: 1 });
    }
    let n_agents = agents.len();
    let agent = &mut agents[m];
    let selfs = Tensor::from_rows(&rows_of(batch, |t| t.selfs[m].as_slice()))?;
    let info = agent.info(&rows_of(batch, |t| t.others[m].as_slice()))?;
    let actor_in = hcat(&selfs, &info)?;
    let (own, caches) = agent.ac.actor.forward(&actor_in)?;
    let mut parts = vec![selfs.clone(), info.clone()];
    let mut offset = selfs.row_len() + info.row_len();
    for k in 0..n_agents {
        if k == m {
            parts.push(own.clone());
        } else {
            let a = Tensor::from_rows(&rows_of(batch, |t| t.actions[k].as_slice()))?;
            if k < m {
                offset += a.row_len();
            }
            parts.push(a);
        }
    }
    let input = concat_columns(&parts)?;
    let dq = action_gradient(&mut agent.ac.critic, &input, offset, own.row_len())?;
    agent.ac.actor.backward_and_step(&caches, &dq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcnoma_nn::{Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(i: usize, o: usize, a: Activation) -> LayerSpec {
        LayerSpec::Dense {
            inputs: i,
            outputs: o,
            activation: a,
        }
    }

    fn pair(seed: u64, gamma: f64) -> ActorCritic {
        let actor = NetworkSpec::new(vec![2], vec![dense(2, 8, Activation::Relu), dense(8, 1, Activation::Tanh)]).unwrap();
        let critic = NetworkSpec::new(vec![3], vec![dense(3, 16, Activation::Relu), dense(16, 1, Activation::Identity)]).unwrap();
        let params = DdpgParams {
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            gamma,
            tau: 0.01,
        };
        ActorCritic::new(vec![actor], critic, params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn transition(k: usize) -> Transition {
        let x = k as f64 / 10.0;
        Transition {
            state: vec![x, 1.0 - x],
            action: vec![x - 0.5],
            reward: x.sin(),
            next_state: vec![1.0 - x, x],
            done: k % 5 == 0,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..4 {
            b.store(k);
        }
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(b.is_full());
        assert_eq!(b.inserted(), 4);
    }

    #[test]
    fn full_sample_is_permutation() {
        let mut b = ReplayBuffer::new(10);
        for k in 0..10 {
            b.store(k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut got: Vec<i32> = b.sample(10, &mut rng).unwrap().into_iter().copied().collect();
        got.sort();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
        assert!(matches!(b.sample(11, &mut rng), Err(CoreError::Underfull { .. })));
    }

    #[test]
    fn gamma_zero_identical_batch_loss_is_q_squared() {
        let mut ac = pair(1, 0.0);
        let t = Transition {
            reward: 0.0,
            ..transition(3)
        };
        let q = ac.q_value(&t.state, &t.action).unwrap();
        let loss = ac.critic_update(&[&t, &t, &t]).unwrap();
        assert!((loss - q * q).abs() < 1e-12);
    }

    #[test]
    fn critic_fits_fixed_batch() {
        let mut ac = pair(4, 0.0);
        let data: Vec<Transition> = (0..32).map(transition).collect();
        let batch: Vec<&Transition> = data.iter().collect();
        let first = ac.critic_update(&batch).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = ac.critic_update(&batch).unwrap();
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }

    #[test]
    fn soft_update_contracts_gap() {
        let mut ac = pair(5, 0.9);
        let data: Vec<Transition> = (0..8).map(transition).collect();
        let batch: Vec<&Transition> = data.iter().collect();
        ac.critic_update(&batch).unwrap();
        let before: Vec<f64> = ac
            .critic
            .flat_params()
            .iter()
            .zip(ac.critic_target.flat_params())
            .map(|(o, t)| t - o)
            .collect();
        ac.soft_update_targets().unwrap();
        let after: Vec<f64> = ac
            .critic
            .flat_params()
            .iter()
            .zip(ac.critic_target.flat_params())
            .map(|(o, t)| t - o)
            .collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - 0.99 * b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }
}
