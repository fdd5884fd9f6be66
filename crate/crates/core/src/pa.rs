//! Power-allocation agents: observations with partial visibility of the
//! other agents, ternary indicator steps, rewards and synchronized rollouts.

use rand::Rng;

use crate::arch::{pa_actor_spec, pa_critic_spec, pa_self_len, state_cnn_spec, ArchConfig};
use crate::ddpg::{ActorCritic, Compressor, DdpgParams, JointTransition, MaAgent};
use crate::error::{CoreError, Result};
use crate::noma::{evaluate, sic_order, Assignment, PowerAllocation, RateReport};
use crate::reward::RewardWeights;
use crate::sa::{gain_feature, rate_feature, Exploration};
use crate::scenario::Scenario;
use mcnoma_nn::Network;

/// Field groups of a PA self observation, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsCategory {
    Weight,
    RateFloor,
    Gains,
    Assignment,
    Indicator,
}

impl ObsCategory {
    pub const ALL: [ObsCategory; 5] = [
        ObsCategory::Weight,
        ObsCategory::RateFloor,
        ObsCategory::Gains,
        ObsCategory::Assignment,
        ObsCategory::Indicator,
    ];

    /// Column range inside a self observation.
    pub fn columns(self, num_subcarriers: usize) -> std::ops::Range<usize> {
        let nf = num_subcarriers;
        match self {
            ObsCategory::Weight => 0..1,
            ObsCategory::RateFloor => 1..2,
            ObsCategory::Gains => 2..2 + nf,
            ObsCategory::Assignment => 2 + nf..2 + 2 * nf,
            ObsCategory::Indicator => 2 + 2 * nf..2 + 3 * nf,
        }
    }
}

/// Which entries of the other agents' observations an agent perceives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpdMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl IpdMask {
    pub fn full(num_users: usize, num_subcarriers: usize) -> Self {
        Self::from_categories(num_users, num_subcarriers, &ObsCategory::ALL)
    }

    pub fn from_categories(num_users: usize, num_subcarriers: usize, observed: &[ObsCategory]) -> Self {
        let rows = num_users.saturating_sub(1);
        let cols = pa_self_len(num_subcarriers);
        let mut row = vec![false; cols];
        for c in observed {
            for k in c.columns(num_subcarriers) {
                row[k] = true;
            }
        }
        Self {
            rows,
            cols,
            bits: row.iter().copied().cycle().take(rows * cols).collect(),
        }
    }

    pub fn from_bits(num_users: usize, num_subcarriers: usize, bits: Vec<bool>) -> Result<Self> {
        let rows = num_users.saturating_sub(1);
        let cols = pa_self_len(num_subcarriers);
        if bits.len() != rows * cols {
            return Err(CoreError::Shape(format!(
                "mask has {} entries, expected {rows}x{cols}",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Observed fraction of entries; 1 when there is nothing to observe.
    pub fn zeta(&self) -> f64 {
        if self.bits.is_empty() {
            return 1.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }
}

/// Indicator `1` on every assigned slot, `0` elsewhere.
pub fn initial_indicator(a: &Assignment) -> Vec<f64> {
    a.as_slice().iter().map(|&o| if o != 0 { 1.0 } else { 0.0 }).collect()
}

/// Starting indicator of a PA episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaInit {
    /// `1` on every assigned slot.
    Uniform,
    /// `2^r` for the user at decoding rank `r` of each subcarrier, so every
    /// rank holds more indicator mass than all stronger users together.
    RankOrdered,
}

pub fn initial_indicator_for(s: &Scenario, a: &Assignment, init: PaInit) -> Result<Vec<f64>> {
    match init {
        PaInit::Uniform => Ok(initial_indicator(a)),
        PaInit::RankOrdered => {
            let order = sic_order(s, a)?;
            let nu = s.num_users();
            let mut v = vec![0.0; s.num_subcarriers() * nu];
            for i in 0..s.num_subcarriers() {
                for (r, &m) in order.users(i).iter().enumerate() {
                    v[i * nu + m] = 2f64.powi(r as i32);
                }
            }
            Ok(v)
        }
    }
}

/// Episode parameters shared by every PA rollout of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PaSettings {
    pub steps: usize,
    /// Indicator change `theta` per ternary action unit.
    pub step_size: f64,
    pub init: PaInit,
    pub mask: IpdMask,
}

/// `[weight, rate floor, gains, assignment row, indicator row]` of agent `m`.
/// `v` is the full row-major `[subcarrier][user]` indicator.
pub fn pa_self_state(s: &Scenario, a: &Assignment, v: &[f64], m: usize) -> Vec<f64> {
    let (nf, nu) = (s.num_subcarriers(), s.num_users());
    let mut out = Vec::with_capacity(pa_self_len(nf));
    out.push(s.weights()[m]);
    out.push(rate_feature(s, m));
    out.extend((0..nf).map(|i| gain_feature(s, i, m)));
    out.extend((0..nf).map(|i| f64::from(a.get(i, m))));
    let total: f64 = v.iter().sum();
    let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
    out.extend((0..nf).map(|i| v[i * nu + m] * scale));
    out
}

/// Self observation plus the masked `(M - 1) x (3 N_F + 2)` view of the
/// other agents (ascending id, unobserved entries zero), flattened.
pub fn encode_pa_state(s: &Scenario, a: &Assignment, v: &[f64], m: usize, mask: &IpdMask) -> Result<(Vec<f64>, Vec<f64>)> {
    let nu = s.num_users();
    if mask.rows != nu.saturating_sub(1) || mask.cols != pa_self_len(s.num_subcarriers()) {
        return Err(CoreError::Shape("IPD mask does not match the scenario".into()));
    }
    let selfs: Vec<Vec<f64>> = (0..nu).map(|k| pa_self_state(s, a, v, k)).collect();
    Ok(view_from_selfs(&selfs, m, mask))
}

fn view_from_selfs(selfs: &[Vec<f64>], m: usize, mask: &IpdMask) -> (Vec<f64>, Vec<f64>) {
    let mut others = Vec::with_capacity(mask.bits.len());
    for (_, row) in selfs.iter().enumerate().filter(|(k, _)| *k != m) {
        others.extend(row.iter().zip(&mask.bits[others.len()..]).map(|(x, &b)| if b { *x } else { 0.0 }));
    }
    (selfs[m].clone(), others)
}

/// Strict thresholds at `+-1/3`.
pub fn discretize_pa_action(raw: &[f64]) -> Vec<i8> {
    raw.iter()
        .map(|&x| {
            if x < -1.0 / 3.0 {
                -1
            } else if x > 1.0 / 3.0 {
                1
            } else {
                0
            }
        })
        .collect()
}

/// `max(v + step * action, 0)`, forced to zero off the agent's subcarriers.
pub fn apply_pa_action(v: &[f64], action: &[i8], step: f64, assigned: &[bool]) -> Vec<f64> {
    v.iter()
        .zip(action)
        .zip(assigned)
        .map(|((&x, &r), &on)| if on { (x + step * f64::from(r)).max(0.0) } else { 0.0 })
        .collect()
}

/// `-8` if any subcarrier of agent `m` fails the disparity check, plus `3`
/// times its rate margin in bit/s/Hz of the total band.
pub fn pa_internal_reward(s: &Scenario, a: &Assignment, report: &RateReport, m: usize) -> f64 {
    pa_internal_reward_with(s, a, report, m, &RewardWeights::default())
}

pub fn pa_internal_reward_with(s: &Scenario, a: &Assignment, report: &RateReport, m: usize, w: &RewardWeights) -> f64 {
    let penalty = if report.pdsc_ok_for(a, m) { 0.0 } else { w.pa_pdsc };
    penalty + w.pa_margin * (report.user_totals[m] - s.qos_min()[m]) / s.bandwidth()
}

/// Per-agent share factors `Theta_m / sum(Theta)`; all zero if the sum is zero.
pub fn pa_shares(s: &Scenario, report: &RateReport) -> Vec<f64> {
    let theta: Vec<f64> = report.user_totals.iter().zip(s.weights()).map(|(r, w)| w * r).collect();
    let total: f64 = theta.iter().sum();
    if total > 0.0 {
        theta.iter().map(|t| t / total).collect()
    } else {
        vec![0.0; theta.len()]
    }
}

pub fn pa_joint_rewards(s: &Scenario, report: &RateReport) -> Vec<f64> {
    pa_joint_rewards_with(s, report, &RewardWeights::default())
}

pub fn pa_joint_rewards_with(s: &Scenario, report: &RateReport, w: &RewardWeights) -> Vec<f64> {
    let shaped = w.pa_joint.shaped(report.objective, s.bandwidth());
    pa_shares(s, report).into_iter().map(|f| f * shaped).collect()
}

/// Builds one PA learner per user.
pub fn new_pa_agents<R: Rng + ?Sized>(
    arch: &ArchConfig,
    params: DdpgParams,
    num_users: usize,
    num_subcarriers: usize,
    rng: &mut R,
) -> Result<Vec<MaAgent>> {
    let self_len = pa_self_len(num_subcarriers);
    (0..num_users)
        .map(|_| {
            let compressor = state_cnn_spec(arch, num_users, num_subcarriers)?
                .map(|spec| {
                    Compressor::new(Network::new(spec, rng), num_users - 1, self_len, params.critic_lr)
                })
                .transpose()?;
            let ac = ActorCritic::new(
                vec![pa_actor_spec(arch, num_subcarriers)?],
                pa_critic_spec(arch, num_users, num_subcarriers)?,
                params,
                rng,
            )?;
            Ok(MaAgent {
                compressor,
                info_len: self_len,
                ac,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PaEpisode {
    pub powers: PowerAllocation,
    pub report: RateReport,
    /// One per step; rewards are internal only.
    pub steps: Vec<JointTransition>,
    /// Highest-objective iterate, start included, that meets every
    /// constraint; earliest on ties.
    pub best: Option<(PowerAllocation, RateReport)>,
}

impl PaEpisode {
    /// C2 and C5 hold at the final step.
    pub fn suitable(&self) -> bool {
        self.report.flags.power_suitable()
    }
}

/// `steps` synchronized decisions: every agent acts on the same snapshot,
/// then the indicator is updated and renormalized into watts.
pub fn pa_rollout<R: Rng + ?Sized>(
    s: &Scenario,
    a: &Assignment,
    agents: &[MaAgent],
    settings: &PaSettings,
    weights: &RewardWeights,
    mut explore: Option<Exploration<'_, R>>,
) -> Result<PaEpisode> {
    let (nf, nu) = (s.num_subcarriers(), s.num_users());
    if agents.len() != nu {
        return Err(CoreError::Shape(format!("{} PA agents for {nu} users", agents.len())));
    }
    let PaSettings {
        steps,
        step_size,
        init,
        ref mask,
    } = *settings;
    let mut v = initial_indicator_for(s, a, init)?;
    let observe = |v: &[f64]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let selfs: Vec<Vec<f64>> = (0..nu).map(|k| pa_self_state(s, a, v, k)).collect();
        if mask.rows != nu.saturating_sub(1) || mask.cols != pa_self_len(nf) {
            return Err(CoreError::Shape("IPD mask does not match the scenario".into()));
        }
        let others = (0..nu).map(|m| view_from_selfs(&selfs, m, mask).1).collect();
        Ok((selfs, others))
    };
    let (mut selfs, mut others) = observe(&v)?;
    let mut transitions = Vec::with_capacity(steps);
    let mut powers = PowerAllocation::from_indicator(s, v.clone())?;
    let mut report = evaluate(s, a, &powers)?;
    let mut best = None;
    let mut track = |p: &PowerAllocation, r: &RateReport| {
        if r.flags.all() && best.as_ref().map_or(true, |(_, b): &(PowerAllocation, RateReport)| r.objective > b.objective) {
            best = Some((p.clone(), r.clone()));
        }
    };
    track(&powers, &report);
    for t in 0..steps {
        let mut actions = Vec::with_capacity(nu);
        for (m, agent) in agents.iter().enumerate() {
            let mut raw = agent.act(&selfs[m], &others[m])?;
            if let Some(e) = explore.as_mut() {
                e.perturb(&mut raw, -1.0, 1.0);
            }
            actions.push(raw);
        }
        let mut next_v = v.clone();
        for (m, raw) in actions.iter().enumerate() {
            let row: Vec<f64> = (0..nf).map(|i| v[i * nu + m]).collect();
            let assigned: Vec<bool> = (0..nf).map(|i| a.is_assigned(i, m)).collect();
            let updated = apply_pa_action(&row, &discretize_pa_action(raw), step_size, &assigned);
            for i in 0..nf {
                next_v[i * nu + m] = updated[i];
            }
        }
        v = next_v;
        powers = PowerAllocation::from_indicator(s, v.clone())?;
        report = evaluate(s, a, &powers)?;
        track(&powers, &report);
        let rewards = (0..nu).map(|m| pa_internal_reward_with(s, a, &report, m, weights)).collect();
        let (next_selfs, next_others) = observe(&v)?;
        transitions.push(JointTransition {
            selfs: std::mem::replace(&mut selfs, next_selfs.clone()),
            others: std::mem::replace(&mut others, next_others.clone()),
            actions,
            rewards,
            next_selfs,
            next_others,
            done: t + 1 == steps,
        });
    }
    Ok(PaEpisode {
        powers,
        report,
        steps: transitions,
        best,
    })
}
