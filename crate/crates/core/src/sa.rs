//! Subcarrier-assignment agent: state encoding, the two-head action decoder,
//! rewards and the per-user episode rollout.

use mcnoma_nn::{Network, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{sa_action_len, sa_actor_specs, sa_critic_spec, ArchConfig};
use crate::ddpg::{ActorCritic, DdpgParams, Transition};
use crate::error::{CoreError, Result};
use crate::noma::{Assignment, RateReport};
use crate::reward::{RewardWeights, OMEGA_U_INT, SA_JOINT};
use crate::scenario::Scenario;

/// Rate floor in bit/s/Hz of one subcarrier.
pub fn rate_feature(s: &Scenario, user: usize) -> f64 {
    s.qos_min()[user] / s.subcarrier_bandwidth()
}

/// Full-power single-user spectral efficiency, scaled by 1/10.
pub fn gain_feature(s: &Scenario, subcarrier: usize, user: usize) -> f64 {
    (1.0 + s.total_power() * s.gain(subcarrier, user) / s.noise_var()).log2() / 10.0
}

/// Users by descending weight; equal weights keep the lower id first.
pub fn user_order(s: &Scenario) -> Vec<usize> {
    let mut order: Vec<usize> = (0..s.num_users()).collect();
    order.sort_by(|&a, &b| s.weights()[b].total_cmp(&s.weights()[a]).then(a.cmp(&b)));
    order
}

/// `[weights, rate floors, gains, occupancy, current-user flag]`, each block
/// user-major so user `u` owns a contiguous slice of every block.
pub fn encode_sa_state(s: &Scenario, occupancy: &Assignment, user: usize) -> Vec<f64> {
    let (m, nf) = (s.num_users(), s.num_subcarriers());
    let mut out = Vec::with_capacity(m * (3 + 2 * nf));
    out.extend_from_slice(s.weights());
    out.extend((0..m).map(|u| rate_feature(s, u)));
    for u in 0..m {
        out.extend((0..nf).map(|i| gain_feature(s, i, u)));
    }
    for u in 0..m {
        out.extend((0..nf).map(|i| f64::from(occupancy.get(i, u))));
    }
    out.extend((0..m).map(|u| if u == user { 1.0 } else { 0.0 }));
    out
}

/// Subcarriers granted by raw head outputs: `k = clamp(round(a N_F), 1, N_F)`
/// top scores of `b`, ties to the lower index. Returned in ascending order.
pub fn decode_sa_action(a_out: f64, b_out: &[f64]) -> Vec<usize> {
    let nf = b_out.len();
    let k = if a_out.is_finite() {
        ((a_out * nf as f64).round().max(1.0) as usize).min(nf)
    } else {
        1
    };
    let mut idx: Vec<usize> = (0..nf).collect();
    idx.sort_by(|&x, &y| b_out[y].total_cmp(&b_out[x]).then(x.cmp(&y)));
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

pub fn capacity_violated(occupancy: &Assignment, max_per_subcarrier: usize) -> bool {
    (0..occupancy.num_subcarriers()).any(|i| occupancy.load(i) > max_per_subcarrier)
}

pub fn sa_internal_reward(occupancy: &Assignment, s: &Scenario) -> f64 {
    sa_internal_reward_with(occupancy, s, OMEGA_U_INT)
}

pub fn sa_internal_reward_with(occupancy: &Assignment, s: &Scenario, penalty: f64) -> f64 {
    if capacity_violated(occupancy, s.max_per_subcarrier()) {
        penalty
    } else {
        0.0
    }
}

pub fn sa_joint_reward(report: &RateReport, s: &Scenario) -> f64 {
    SA_JOINT.shaped(report.objective, s.bandwidth())
}

/// `[k / N_F, 1 on chosen subcarriers, 0 elsewhere]`; decodes back to `chosen`.
pub fn canonical_action(chosen: &[usize], num_subcarriers: usize) -> Vec<f64> {
    let mut out = vec![0.0; num_subcarriers + 1];
    out[0] = chosen.len() as f64 / num_subcarriers as f64;
    for &i in chosen {
        out[1 + i] = 1.0;
    }
    out
}

/// Discrete assignments near a raw action, at most `cap` of them: the
/// decoded set first, then the top-`k` score prefix for every other `k`,
/// then every single swap of the prefixes with `k` within one of the
/// decoded count. Each set is sorted ascending and appears once.
pub fn candidate_actions(raw: &[f64], cap: usize) -> Vec<Vec<usize>> {
    let nf = raw.len() - 1;
    let decoded = decode_sa_action(raw[0], &raw[1..]);
    let mut rank: Vec<usize> = (0..nf).collect();
    rank.sort_by(|&x, &y| raw[1 + y].total_cmp(&raw[1 + x]).then(x.cmp(&y)));
    let k0 = decoded.len();
    let mut out: Vec<Vec<usize>> = Vec::new();
    let push = |mut set: Vec<usize>, out: &mut Vec<Vec<usize>>| {
        set.sort_unstable();
        if out.len() < cap && !out.contains(&set) {
            out.push(set);
        }
    };
    push(decoded, &mut out);
    for k in 1..=nf {
        push(rank[..k].to_vec(), &mut out);
    }
    for k in k0.saturating_sub(1).max(1)..=(k0 + 1).min(nf) {
        for inside in 0..k {
            for outside in k..nf {
                let mut set = rank[..k].to_vec();
                set[inside] = rank[outside];
                push(set, &mut out);
            }
        }
    }
    out
}

/// The SA actor (count and score heads) with its critic.
#[derive(Debug, Clone)]
pub struct SaAgent {
    pub ac: ActorCritic,
    /// Critic-ranked candidate assignments per decision; 0 decodes the raw
    /// actor output directly.
    pub candidates: usize,
}

impl SaAgent {
    pub fn new<R: Rng + ?Sized>(
        arch: &ArchConfig,
        params: DdpgParams,
        num_users: usize,
        num_subcarriers: usize,
        candidates: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let ac = ActorCritic::new(
            sa_actor_specs(arch, num_users, num_subcarriers)?,
            sa_critic_spec(arch, num_users, num_subcarriers)?,
            params,
            rng,
        )?;
        Ok(Self { ac, candidates })
    }

    /// Raw `[a, b_1 .. b_NF]` in `[0, 1]`.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.ac.act(state)
    }

    /// For each row of `states`, the candidate of `protos` that `critic`
    /// values highest, as a canonical action. Ties keep the earlier candidate.
    pub fn refine(&self, critic: &Network, states: &Tensor, protos: &Tensor) -> Result<Tensor> {
        let nf = protos.row_len() - 1;
        let sets: Vec<Vec<Vec<usize>>> = (0..states.batch())
            .map(|r| candidate_actions(protos.row(r), self.candidates.max(1)))
            .collect();
        let mut rows = Vec::new();
        for (r, cands) in sets.iter().enumerate() {
            for c in cands {
                let mut row = states.row(r).to_vec();
                row.extend(canonical_action(c, nf));
                rows.push(row);
            }
        }
        let q = critic.predict(&Tensor::from_rows(&rows)?)?;
        let mut out = Vec::with_capacity(sets.len());
        let mut at = 0;
        for cands in &sets {
            let values = &q.data()[at..at + cands.len()];
            let best = (0..cands.len()).fold(0, |b, k| if values[k] > values[b] { k } else { b });
            out.push(canonical_action(&cands[best], nf));
            at += cands.len();
        }
        Ok(Tensor::from_rows(&out)?)
    }

    /// One critic step, one actor step and a target soft update; returns
    /// the pre-step critic loss. With candidates enabled the bootstrap
    /// action is the target critic's pick among the target actor's
    /// candidates.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<f64> {
        let loss = if self.candidates == 0 {
            self.ac.critic_update(batch)?
        } else {
            let next = Tensor::from_rows(&batch.iter().map(|t| t.next_state.as_slice()).collect::<Vec<_>>())?;
            let protos = self.ac.actor_target.act(&next)?;
            let next_actions = self.refine(&self.ac.critic_target, &next, &protos)?;
            self.ac.critic_update_with(batch, &next_actions)?
        };
        self.ac.actor_update(batch)?;
        self.ac.soft_update_targets()?;
        Ok(loss)
    }
}

/// Gaussian exploration on raw outputs, clipped to `[lo, hi]`.
pub struct Exploration<'a, R: Rng + ?Sized> {
    pub std: f64,
    pub rng: &'a mut R,
}

impl<R: Rng + ?Sized> Exploration<'_, R> {
    pub fn perturb(&mut self, raw: &mut [f64], lo: f64, hi: f64) {
        if self.std > 0.0 {
            let normal = Normal::new(0.0, self.std).expect("finite positive std");
            for x in raw.iter_mut() {
                *x = (*x + normal.sample(&mut *self.rng)).clamp(lo, hi);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SaEpisode {
    pub assignment: Assignment,
    /// One per user step, in processing order; rewards are internal only.
    pub transitions: Vec<Transition>,
    /// C4 and C6 hold for the final assignment.
    pub suitable: bool,
}

/// `M` steps, one user each in `user_order`; each step grants the decoded
/// subcarriers to its user.
pub fn sa_rollout<R: Rng + ?Sized>(
    s: &Scenario,
    agent: &SaAgent,
    weights: &RewardWeights,
    mut explore: Option<Exploration<'_, R>>,
) -> Result<SaEpisode> {
    let nf = s.num_subcarriers();
    if agent.ac.actor.output_len() != sa_action_len(nf) {
        return Err(CoreError::Shape("SA agent does not match the scenario".into()));
    }
    let order = user_order(s);
    let mut occupancy = Assignment::for_scenario(s);
    let mut transitions = Vec::with_capacity(order.len());
    for (t, &user) in order.iter().enumerate() {
        let state = encode_sa_state(s, &occupancy, user);
        let mut raw = agent.act(&state)?;
        if let Some(e) = explore.as_mut() {
            e.perturb(&mut raw, 0.0, 1.0);
        }
        let (chosen, action) = if agent.candidates == 0 {
            (decode_sa_action(raw[0], &raw[1..]), raw)
        } else {
            let mut cands = candidate_actions(&raw, agent.candidates);
            // uniform candidate with probability equal to the noise level
            let random = explore.as_mut().and_then(|e| {
                let hit = e.rng.gen_bool(e.std.clamp(0.0, 1.0));
                hit.then(|| e.rng.gen_range(0..cands.len()))
            });
            let pick = match random {
                Some(k) => k,
                None => {
                    let st = Tensor::from_vec(&[1, state.len()], state.clone())?;
                    let proto = Tensor::from_vec(&[1, raw.len()], raw.clone())?;
                    let best = agent.refine(&agent.ac.critic, &st, &proto)?;
                    let chosen: Vec<usize> = (0..nf).filter(|&i| best.row(0)[1 + i] > 0.5).collect();
                    cands.iter().position(|c| *c == chosen).expect("refined pick is a candidate")
                }
            };
            let chosen = cands.swap_remove(pick);
            let action = canonical_action(&chosen, nf);
            (chosen, action)
        };
        for i in chosen {
            occupancy.set(i, user, 1);
        }
        let done = t + 1 == order.len();
        let next_user = if done { user } else { order[t + 1] };
        transitions.push(Transition {
            state,
            action,
            reward: sa_internal_reward_with(&occupancy, s, weights.sa_capacity),
            next_state: encode_sa_state(s, &occupancy, next_user),
            done,
        });
    }
    let suitable = !capacity_violated(&occupancy, s.max_per_subcarrier());
    Ok(SaEpisode {
        assignment: occupancy,
        transitions,
        suitable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, ScenarioConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DdpgParams {
        DdpgParams {
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            gamma: 0.99,
            tau: 0.01,
        }
    }

    fn scenario(m: usize, nf: usize, nmax: usize) -> Scenario {
        generate(&ScenarioConfig {
            num_users: m,
            num_subcarriers: nf,
            max_per_subcarrier: nmax,
            ..ScenarioConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_sa_action(0.0, &[0.2, 0.7, 0.1]), vec![1]);
        assert_eq!(decode_sa_action(1.0, &[0.9, 0.0, 0.5]), vec![0, 1, 2]);
        assert_eq!(decode_sa_action(0.5, &[0.1, 0.9, 0.3, 0.8]), vec![1, 3]);
        assert_eq!(decode_sa_action(0.0, &[0.5, 0.5]), vec![0]);
    }

    #[test]
    fn internal_reward_is_binary_penalty() {
        let s = scenario(3, 2, 1);
        let mut a = Assignment::for_scenario(&s);
        a.set(0, 0, 1);
        assert_eq!(sa_internal_reward(&a, &s), 0.0);
        a.set(0, 1, 1);
        assert_eq!(sa_internal_reward(&a, &s), -5.0);
        a.set(1, 1, 1);
        a.set(1, 2, 1);
        assert_eq!(sa_internal_reward(&a, &s), -5.0);
    }

    #[test]
    fn joint_reward_at_zero_objective() {
        assert_eq!(SA_JOINT.shaped(0.0, 5e6), 1.5);
        assert_eq!(SA_JOINT.shaped(4.0 * 5e6, 5e6), 1.5 * 1f64.exp());
        assert_eq!(SA_JOINT.shaped(1e300, 1.0), 1.5 * 50f64.exp());
    }

    #[test]
    fn state_layout() {
        let s = scenario(3, 2, 2);
        let mut a = Assignment::for_scenario(&s);
        a.set(1, 2, 1);
        let st = encode_sa_state(&s, &a, 1);
        assert_eq!(st.len(), 3 * 7);
        assert_eq!(&st[..3], s.weights());
        assert_eq!(st[6 + 2 * 2 + 1], gain_feature(&s, 1, 2));
        assert_eq!(&st[12..18], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&st[18..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let s = scenario(4, 3, 4);
        let agent = SaAgent::new(&ArchConfig::default(), params(), 4, 3, 0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let e1 = sa_rollout::<ChaCha8Rng>(&s, &agent, &RewardWeights::default(), None).unwrap();
        let e2 = sa_rollout::<ChaCha8Rng>(&s, &agent, &RewardWeights::default(), None).unwrap();
        assert_eq!(e1.assignment, e2.assignment);
        assert_eq!(e1.transitions.len(), 4);
        assert!(e1.suitable, "N_max = M can never be exceeded");
        assert!(e1.transitions.last().unwrap().done);
        assert!(e1.transitions.iter().all(|t| t.reward == 0.0));
        for u in 0..4 {
            assert!(e1.assignment.subcarriers_of(u).count() >= 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy = sa_rollout(&s, &agent, &RewardWeights::default(), Some(Exploration { std: 0.3, rng: &mut rng })).unwrap();
        assert!(noisy.transitions.iter().all(|t| t.action.iter().all(|x| (0.0..=1.0).contains(x))));
    }

    #[test]
    fn candidates_start_with_decoded_set_and_are_unique() {
        let raw = [0.4, 0.9, 0.1, 0.6, 0.3];
        let c = candidate_actions(&raw, 64);
        assert_eq!(c[0], decode_sa_action(raw[0], &raw[1..]));
        assert_eq!(c[0], vec![0, 2]);
        for k in 1..=4 {
            let mut prefix = vec![0, 2, 3, 1][..k].to_vec();
            prefix.sort_unstable();
            assert!(c.contains(&prefix), "missing prefix {prefix:?}");
        }
        assert!(c.contains(&vec![1, 2]), "single swap of the decoded set");
        for (k, x) in c.iter().enumerate() {
            assert!(!x.is_empty() && x.windows(2).all(|w| w[0] < w[1]));
            assert!(!c[..k].contains(x));
        }
        assert_eq!(candidate_actions(&raw, 3).len(), 3);
        assert_eq!(candidate_actions(&raw, 1), vec![vec![0, 2]]);
    }

    #[test]
    fn canonical_action_decodes_to_itself() {
        for chosen in [vec![0], vec![1, 2], vec![0, 1, 2, 3]] {
            let a = canonical_action(&chosen, 4);
            assert_eq!(decode_sa_action(a[0], &a[1..]), chosen);
        }
    }

    #[test]
    fn refine_returns_a_canonical_candidate() {
        let agent = SaAgent::new(&ArchConfig::default(), params(), 3, 3, 16, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let s = scenario(3, 3, 2);
        let st = encode_sa_state(&s, &Assignment::for_scenario(&s), 0);
        let raw = agent.act(&st).unwrap();
        let states = Tensor::from_rows(&[st.clone(), st]).unwrap();
        let protos = Tensor::from_rows(&[raw.clone(), raw.clone()]).unwrap();
        let out = agent.refine(&agent.ac.critic, &states, &protos).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert_eq!(out.row(0), out.row(1));
        let chosen: Vec<usize> = (0..3).filter(|&i| out.row(0)[1 + i] > 0.5).collect();
        assert!(candidate_actions(&raw, 16).contains(&chosen));
        assert_eq!(out.row(0)[0], chosen.len() as f64 / 3.0);
    }
}
