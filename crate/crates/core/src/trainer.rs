//! Alternating SA/PA training with suitability gating, replay-driven updates,
//! periodic greedy evaluation, checkpoints and the MAC-count audit.

use std::io::{Read, Write};
use std::time::Instant;

use mcnoma_nn::checkpoint::{read_params, write_params};
use mcnoma_nn::{instrumentation, LayerSpec, Network, NnError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{state_cnn_spec, ArchConfig};
use crate::config::KvConfig;
use crate::ddpg::{ma_actor_update, ma_critic_update_with, ma_target_actions, DdpgParams, JointTransition, MaAgent, ReplayBuffer, Transition};
use crate::error::{CoreError, Result};
use crate::noma::{evaluate, Assignment, PowerAllocation, RateReport};
use crate::pa::{initial_indicator_for, new_pa_agents, pa_joint_rewards_with, pa_rollout, IpdMask, ObsCategory, PaInit, PaSettings};
use crate::reward::RewardWeights;
use crate::sa::{sa_rollout, Exploration, SaAgent};
use crate::scenario::{generate, Scenario, ScenarioConfig};

/// Which transitions of a completed epoch receive the joint reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointCredit {
    AllSteps,
    LastStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub episodes: usize,
    /// Cap on internal-reward SA episodes after an unsuitable assignment.
    pub sa_retries: usize,
    /// Cap on internal-reward PA episodes after an unsuitable allocation.
    pub pa_retries: usize,
    pub pa_steps: usize,
    pub sa_actor_lr: f64,
    pub sa_critic_lr: f64,
    pub pa_actor_lr: f64,
    pub pa_critic_lr: f64,
    pub sa_buffer: usize,
    pub pa_buffer: usize,
    pub batch: usize,
    pub gamma: f64,
    pub tau: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    /// Indicator step `theta` per ternary action unit.
    pub step_size: f64,
    pub pa_init: PaInit,
    /// Gradient steps per SA training call.
    pub sa_updates: usize,
    /// Critic-ranked candidate assignments per SA decision; 0 decodes the
    /// actor output directly.
    pub sa_candidates: usize,
    /// Greedy rollouts report the best feasible PA iterate instead of the last.
    pub pa_best_iterate: bool,
    /// Gradient steps per agent per PA training call.
    pub pa_updates: usize,
    /// Greedy evaluation period in epochs; 0 evaluates only at the end.
    pub eval_every: usize,
    pub joint_credit: JointCredit,
    pub rewards: RewardWeights,
    /// Observation categories of the other agents each PA agent perceives.
    pub observed: Vec<ObsCategory>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchConfig::default(),
            episodes: 2000,
            sa_retries: 200,
            pa_retries: 20,
            pa_steps: 30,
            sa_actor_lr: 1e-3,
            sa_critic_lr: 3e-3,
            pa_actor_lr: 2e-3,
            pa_critic_lr: 5e-3,
            sa_buffer: 512,
            pa_buffer: 2048,
            batch: 128,
            gamma: 0.99,
            tau: 0.01,
            noise_start: 0.3,
            noise_end: 0.02,
            step_size: 0.01,
            pa_init: PaInit::RankOrdered,
            sa_updates: 1,
            sa_candidates: 64,
            pa_best_iterate: true,
            pa_updates: 1,
            eval_every: 5,
            joint_credit: JointCredit::AllSteps,
            rewards: RewardWeights::default(),
            observed: ObsCategory::ALL.to_vec(),
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "episodes",
    "sa_retries",
    "pa_retries",
    "pa_steps",
    "n_full",
    "d_res",
    "sa_actor_lr",
    "sa_critic_lr",
    "pa_actor_lr",
    "pa_critic_lr",
    "sa_buffer",
    "pa_buffer",
    "batch",
    "gamma",
    "tau",
    "noise_start",
    "noise_end",
    "pa_step_size",
    "sa_updates",
    "sa_candidates",
    "pa_best_iterate",
    "pa_updates",
    "eval_every",
    "joint_credit",
    "pa_init",
    "ipd_observed",
    "train_seed",
];

fn parse_category(name: &str) -> Result<ObsCategory> {
    Ok(match name {
        "weight" => ObsCategory::Weight,
        "rate_floor" => ObsCategory::RateFloor,
        "gains" => ObsCategory::Gains,
        "assignment" => ObsCategory::Assignment,
        "indicator" => ObsCategory::Indicator,
        other => {
            return Err(CoreError::ConfigValue {
                key: "ipd_observed".into(),
                message: format!("unknown category `{other}`"),
            })
        }
    })
}

impl TrainConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let pa_init = match kv.get_or("pa_init", "ranked".to_string())?.as_str() {
            "ranked" => PaInit::RankOrdered,
            "uniform" => PaInit::Uniform,
            other => {
                return Err(CoreError::ConfigValue {
                    key: "pa_init".into(),
                    message: format!("expected `ranked` or `uniform`, got `{other}`"),
                })
            }
        };
        let joint_credit = match kv.get_or("joint_credit", "all".to_string())?.as_str() {
            "all" => JointCredit::AllSteps,
            "last" => JointCredit::LastStep,
            other => {
                return Err(CoreError::ConfigValue {
                    key: "joint_credit".into(),
                    message: format!("expected `all` or `last`, got `{other}`"),
                })
            }
        };
        let observed = match kv.get_list::<String>("ipd_observed")? {
            Some(names) => names
                .iter()
                .filter(|n| !n.is_empty() && n.as_str() != "none")
                .map(|n| parse_category(n))
                .collect::<Result<Vec<_>>>()?,
            None => d.observed.clone(),
        };
        let cfg = Self {
            arch: ArchConfig {
                n_full: kv.get_or("n_full", d.arch.n_full)?,
                d_res: kv.get_or("d_res", d.arch.d_res)?,
                ..d.arch
            },
            episodes: kv.get_or("episodes", d.episodes)?,
            sa_retries: kv.get_or("sa_retries", d.sa_retries)?,
            pa_retries: kv.get_or("pa_retries", d.pa_retries)?,
            pa_steps: kv.get_or("pa_steps", d.pa_steps)?,
            sa_actor_lr: kv.get_or("sa_actor_lr", d.sa_actor_lr)?,
            sa_critic_lr: kv.get_or("sa_critic_lr", d.sa_critic_lr)?,
            pa_actor_lr: kv.get_or("pa_actor_lr", d.pa_actor_lr)?,
            pa_critic_lr: kv.get_or("pa_critic_lr", d.pa_critic_lr)?,
            sa_buffer: kv.get_or("sa_buffer", d.sa_buffer)?,
            pa_buffer: kv.get_or("pa_buffer", d.pa_buffer)?,
            batch: kv.get_or("batch", d.batch)?,
            gamma: kv.get_or("gamma", d.gamma)?,
            tau: kv.get_or("tau", d.tau)?,
            noise_start: kv.get_or("noise_start", d.noise_start)?,
            noise_end: kv.get_or("noise_end", d.noise_end)?,
            step_size: kv.get_or("pa_step_size", d.step_size)?,
            pa_init,
            sa_updates: kv.get_or("sa_updates", d.sa_updates)?,
            sa_candidates: kv.get_or("sa_candidates", d.sa_candidates)?,
            pa_best_iterate: kv.get_or("pa_best_iterate", d.pa_best_iterate)?,
            pa_updates: kv.get_or("pa_updates", d.pa_updates)?,
            eval_every: kv.get_or("eval_every", d.eval_every)?,
            joint_credit,
            rewards: d.rewards,
            observed,
            seed: kv.get_or("train_seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(CoreError::ConfigValue {
                key: key.into(),
                message: message.into(),
            })
        };
        for (key, v) in [
            ("episodes", self.episodes),
            ("sa_retries", self.sa_retries),
            ("pa_retries", self.pa_retries),
            ("pa_steps", self.pa_steps),
            ("batch", self.batch),
            ("n_full", self.arch.n_full),
            ("sa_updates", self.sa_updates),
            ("pa_updates", self.pa_updates),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if self.batch > self.sa_buffer || self.batch > self.pa_buffer {
            return bad("batch", "must not exceed either replay capacity");
        }
        for (key, v) in [
            ("sa_actor_lr", self.sa_actor_lr),
            ("sa_critic_lr", self.sa_critic_lr),
            ("pa_actor_lr", self.pa_actor_lr),
            ("pa_critic_lr", self.pa_critic_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be positive and finite");
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau", "must lie in (0, 1]");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return bad("noise_start", "noise levels must be nonnegative");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("pa_step_size", "must be positive and finite");
        }
        Ok(())
    }

    pub fn sa_params(&self) -> DdpgParams {
        DdpgParams {
            actor_lr: self.sa_actor_lr,
            critic_lr: self.sa_critic_lr,
            gamma: self.gamma,
            tau: self.tau,
        }
    }

    pub fn pa_params(&self) -> DdpgParams {
        DdpgParams {
            actor_lr: self.pa_actor_lr,
            critic_lr: self.pa_critic_lr,
            gamma: self.gamma,
            tau: self.tau,
        }
    }

    pub fn rollout_settings(&self, s: &Scenario) -> RolloutSettings {
        RolloutSettings {
            pa: PaSettings {
                steps: self.pa_steps,
                step_size: self.step_size,
                init: self.pa_init,
                mask: IpdMask::from_categories(s.num_users(), s.num_subcarriers(), &self.observed),
            },
            rewards: self.rewards,
            best_iterate: self.pa_best_iterate,
        }
    }

    /// Linear anneal from `noise_start` at the first epoch to `noise_end` at the last.
    pub fn noise_at(&self, epoch: usize) -> f64 {
        if self.episodes <= 1 {
            return self.noise_start;
        }
        let f = epoch as f64 / (self.episodes - 1) as f64;
        self.noise_start + (self.noise_end - self.noise_start) * f
    }
}

/// Everything a PA rollout needs besides the agents.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSettings {
    pub pa: PaSettings,
    pub rewards: RewardWeights,
    /// See [`TrainConfig::pa_best_iterate`].
    pub best_iterate: bool,
}

/// The SA agent and one PA agent per user.
#[derive(Debug, Clone)]
pub struct Agents {
    pub arch: ArchConfig,
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub sa: SaAgent,
    pub pa: Vec<MaAgent>,
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MCNOMACK";
const CHECKPOINT_VERSION: u32 = 1;

impl Agents {
    pub fn new(cfg: &TrainConfig, num_users: usize, num_subcarriers: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            arch: cfg.arch,
            num_users,
            num_subcarriers,
            sa: SaAgent::new(&cfg.arch, cfg.sa_params(), num_users, num_subcarriers, cfg.sa_candidates, rng)?,
            pa: new_pa_agents(&cfg.arch, cfg.pa_params(), num_users, num_subcarriers, rng)?,
        })
    }

    /// Every online and target network in checkpoint order.
    pub fn networks(&self) -> Vec<&Network> {
        let mut out: Vec<&Network> = Vec::new();
        let ac = &self.sa.ac;
        out.extend(ac.actor.heads());
        out.extend(ac.actor_target.heads());
        out.push(&ac.critic);
        out.push(&ac.critic_target);
        for agent in &self.pa {
            if let Some(c) = &agent.compressor {
                out.push(c.network());
            }
            out.extend(agent.ac.actor.heads());
            out.extend(agent.ac.actor_target.heads());
            out.push(&agent.ac.critic);
            out.push(&agent.ac.critic_target);
        }
        out
    }

    fn networks_mut(&mut self) -> Vec<&mut Network> {
        let mut out: Vec<&mut Network> = Vec::new();
        let ac = &mut self.sa.ac;
        out.extend(ac.actor.heads_mut().iter_mut());
        out.extend(ac.actor_target.heads_mut().iter_mut());
        out.push(&mut ac.critic);
        out.push(&mut ac.critic_target);
        for agent in &mut self.pa {
            if let Some(c) = agent.compressor.as_mut() {
                out.push(c.network_mut());
            }
            out.extend(agent.ac.actor.heads_mut().iter_mut());
            out.extend(agent.ac.actor_target.heads_mut().iter_mut());
            out.push(&mut agent.ac.critic);
            out.push(&mut agent.ac.critic_target);
        }
        out
    }

    fn header(&self) -> [u64; 9] {
        let a = &self.arch;
        [
            self.num_users as u64,
            self.num_subcarriers as u64,
            a.n_full as u64,
            a.d_res as u64,
            a.penultimate as u64,
            a.per_user as u64,
            a.cnn_channels[0] as u64,
            a.cnn_channels[1] as u64,
            a.d_cnn as u64,
        ]
    }

    /// Parameters of every network; optimizer state is not saved.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for v in self.header() {
            w.write_all(&v.to_le_bytes())?;
        }
        for net in self.networks() {
            write_params(net, &mut w)?;
        }
        Ok(())
    }

    /// Rebuilds agents from a checkpoint; optimizers restart from zero
    /// accumulators with `cfg`'s learning rates.
    pub fn load<R: Read>(mut r: R, cfg: &TrainConfig) -> Result<Self> {
        let bad = |m: &str| CoreError::Nn(NnError::Checkpoint(m.into()));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not an agent checkpoint"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        if u32::from_le_bytes(word) != CHECKPOINT_VERSION {
            return Err(bad("unsupported agent checkpoint version"));
        }
        let mut h = [0u64; 9];
        for v in h.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            *v = u64::from_le_bytes(b);
        }
        let [m, nf, n_full, d_res, penultimate, per_user, c0, c1, d_cnn] = h.map(|v| v as usize);
        if m == 0 || nf == 0 || n_full == 0 || m > 4096 || nf > 4096 || n_full > 1 << 16 {
            return Err(bad("implausible agent checkpoint header"));
        }
        let cfg = TrainConfig {
            arch: ArchConfig {
                n_full,
                d_res,
                penultimate,
                per_user,
                cnn_channels: [c0, c1],
                d_cnn,
            },
            ..cfg.clone()
        };
        let mut agents = Self::new(&cfg, m, nf, &mut ChaCha8Rng::seed_from_u64(0))?;
        for net in agents.networks_mut() {
            *net = read_params(net.spec().clone(), &mut r)?;
        }
        Ok(agents)
    }

    pub fn save_to_path(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_from_path(path: &std::path::Path, cfg: &TrainConfig) -> Result<Self> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?), cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochOutcome {
    /// Both modules were suitable; the joint reward was produced.
    Joint,
    /// The assignment broke a capacity limit; SA retrained on internal rewards.
    SaRetry,
    /// The allocation broke a disparity or rate floor; PA retrained on internal rewards.
    PaRetry,
}

impl EpochOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            EpochOutcome::Joint => "joint",
            EpochOutcome::SaRetry => "sa_retry",
            EpochOutcome::PaRetry => "pa_retry",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub outcome: EpochOutcome,
    /// Objective of the epoch's exploratory solution; NaN unless `Joint`.
    pub objective: f64,
    /// Mean pre-step SA critic loss; NaN without updates.
    pub sa_loss: f64,
    /// Mean pre-step PA critic loss over agents and updates; NaN without updates.
    pub pa_loss: f64,
    pub sa_updates: usize,
    pub pa_updates: usize,
    /// Retry episodes whose assignment was still unsuitable.
    pub sa_failures: usize,
    /// Retry episodes whose allocation was still unsuitable.
    pub pa_failures: usize,
    /// Greedy-policy objective when evaluated this epoch and feasible; NaN otherwise.
    pub greedy_objective: f64,
    pub macs_forward: u64,
    pub macs_backward: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// Timing is excluded unless asked for, so logs of equal runs compare equal bytewise.
    pub fn write_csv<W: Write>(&self, w: W, include_timing: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![
            "epoch",
            "outcome",
            "objective",
            "sa_loss",
            "pa_loss",
            "sa_updates",
            "pa_updates",
            "sa_failures",
            "pa_failures",
            "greedy_objective",
            "macs_forward",
            "macs_backward",
        ];
        if include_timing {
            header.push("wall_ms");
        }
        out.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                r.outcome.as_str().to_string(),
                r.objective.to_string(),
                r.sa_loss.to_string(),
                r.pa_loss.to_string(),
                r.sa_updates.to_string(),
                r.pa_updates.to_string(),
                r.sa_failures.to_string(),
                r.pa_failures.to_string(),
                r.greedy_objective.to_string(),
                r.macs_forward.to_string(),
                r.macs_backward.to_string(),
            ];
            if include_timing {
                row.push(format!("{:.3}", r.wall_ms));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn updates(&self) -> (usize, usize) {
        self.records
            .iter()
            .fold((0, 0), |(a, b), r| (a + r.sa_updates, b + r.pa_updates))
    }
}

/// A policy's greedy solution on one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyReport {
    pub assignment: Assignment,
    pub powers: PowerAllocation,
    pub report: RateReport,
    pub episodes: usize,
    /// Objective in bit/s, averaged over episodes.
    pub objective: f64,
    /// Average throughput in bit/s/Hz.
    pub throughput: f64,
    pub effective_throughput: f64,
    pub qos_satisfaction: f64,
}

impl PolicyReport {
    pub fn feasible(&self) -> bool {
        self.report.flags.all()
    }
}

fn greedy_rollout(s: &Scenario, agents: &Agents, settings: &RolloutSettings) -> Result<(Assignment, PowerAllocation, RateReport)> {
    let sa = sa_rollout::<ChaCha8Rng>(s, &agents.sa, &settings.rewards, None)?;
    if !sa.suitable {
        let p = PowerAllocation::from_indicator(s, initial_indicator_for(s, &sa.assignment, settings.pa.init)?)?;
        let report = evaluate(s, &sa.assignment, &p)?;
        return Ok((sa.assignment, p, report));
    }
    let pa = pa_rollout::<ChaCha8Rng>(
        s,
        &sa.assignment,
        &agents.pa,
        &settings.pa,
        &settings.rewards,
        None,
    )?;
    match pa.best {
        Some((p, r)) if settings.best_iterate => Ok((sa.assignment, p, r)),
        _ => Ok((sa.assignment, pa.powers, pa.report)),
    }
}

/// Noise-free rollouts averaged over `episodes`.
pub fn evaluate_policy(s: &Scenario, agents: &Agents, settings: &RolloutSettings, episodes: usize) -> Result<PolicyReport> {
    if episodes == 0 {
        return Err(CoreError::ConfigValue {
            key: "episodes".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut sums = [0.0; 4];
    let mut last = None;
    for _ in 0..episodes {
        let (a, p, r) = greedy_rollout(s, agents, settings)?;
        sums[0] += r.objective;
        sums[1] += r.total_throughput() / s.bandwidth();
        sums[2] += r.effective_throughput;
        sums[3] += r.qos_satisfaction;
        last = Some((a, p, r));
    }
    let (assignment, powers, report) = last.expect("at least one episode");
    let k = episodes as f64;
    Ok(PolicyReport {
        assignment,
        powers,
        report,
        episodes,
        objective: sums[0] / k,
        throughput: sums[1] / k,
        effective_throughput: sums[2] / k,
        qos_satisfaction: sums[3] / k,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best greedy-evaluated agents, or the final ones if no greedy
    /// evaluation was feasible.
    pub agents: Agents,
    pub final_agents: Agents,
    pub best: Option<(usize, PolicyReport)>,
    pub log: TrainLog,
    /// Set when a non-finite training signal stopped the run early.
    pub aborted: Option<String>,
}

fn is_non_finite(e: &CoreError) -> bool {
    matches!(e, CoreError::NonFinite(_) | CoreError::Nn(NnError::NonFinite(_)))
}

struct Trainer<'a> {
    s: &'a Scenario,
    cfg: &'a TrainConfig,
    settings: RolloutSettings,
    agents: Agents,
    sa_buf: ReplayBuffer<Transition>,
    pa_buf: ReplayBuffer<JointTransition>,
    explore_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
}

#[derive(Default)]
struct Tally {
    sa_loss: f64,
    pa_loss: f64,
    sa_updates: usize,
    pa_updates: usize,
    pa_agent_updates: usize,
    sa_failures: usize,
    pa_failures: usize,
}

impl Trainer<'_> {
    fn train_sa(&mut self, tally: &mut Tally) -> Result<()> {
        if !self.sa_buf.is_full() {
            return Ok(());
        }
        for _ in 0..self.cfg.sa_updates {
            let batch = self.sa_buf.sample(self.cfg.batch, &mut self.sample_rng)?;
            tally.sa_loss += self.agents.sa.update(&batch)?;
            tally.sa_updates += 1;
        }
        Ok(())
    }

    fn train_pa(&mut self, tally: &mut Tally) -> Result<()> {
        if !self.pa_buf.is_full() {
            return Ok(());
        }
        for _ in 0..self.cfg.pa_updates {
            let batch = self.pa_buf.sample(self.cfg.batch, &mut self.sample_rng)?;
            let next_actions = ma_target_actions(&self.agents.pa, &batch)?;
            for m in 0..self.agents.pa.len() {
                tally.pa_loss += ma_critic_update_with(&mut self.agents.pa, m, &batch, next_actions.clone())?;
                ma_actor_update(&mut self.agents.pa, m, &batch)?;
                self.agents.pa[m].ac.soft_update_targets()?;
                tally.pa_agent_updates += 1;
            }
            tally.pa_updates += 1;
        }
        Ok(())
    }

    fn sa_episode(&mut self, noise: f64) -> Result<crate::sa::SaEpisode> {
        sa_rollout(
            self.s,
            &self.agents.sa,
            &self.settings.rewards,
            Some(Exploration {
                std: noise,
                rng: &mut self.explore_rng,
            }),
        )
    }

    fn pa_episode(&mut self, a: &Assignment, noise: f64) -> Result<crate::pa::PaEpisode> {
        pa_rollout(
            self.s,
            a,
            &self.agents.pa,
            &self.settings.pa,
            &self.settings.rewards,
            Some(Exploration {
                std: noise,
                rng: &mut self.explore_rng,
            }),
        )
    }

    fn epoch(&mut self, epoch: usize, tally: &mut Tally) -> Result<(EpochOutcome, f64)> {
        let noise = self.cfg.noise_at(epoch);
        let sa = self.sa_episode(noise)?;
        if !sa.suitable {
            for _ in 0..self.cfg.sa_retries {
                let retry = self.sa_episode(noise)?;
                let ok = retry.suitable;
                for t in retry.transitions {
                    self.sa_buf.store(t);
                }
                self.train_sa(tally)?;
                if ok {
                    break;
                }
                tally.sa_failures += 1;
            }
            return Ok((EpochOutcome::SaRetry, f64::NAN));
        }
        let pa = self.pa_episode(&sa.assignment, noise)?;
        if !pa.suitable() {
            for _ in 0..self.cfg.pa_retries {
                let retry = self.pa_episode(&sa.assignment, noise)?;
                let ok = retry.suitable();
                for t in retry.steps {
                    self.pa_buf.store(t);
                }
                self.train_pa(tally)?;
                if ok {
                    break;
                }
                tally.pa_failures += 1;
            }
            return Ok((EpochOutcome::PaRetry, f64::NAN));
        }
        let sa_joint = self.settings.rewards.sa_joint.shaped(pa.report.objective, self.s.bandwidth());
        let pa_joint = pa_joint_rewards_with(self.s, &pa.report, &self.settings.rewards);
        let credit = self.cfg.joint_credit;
        let n_sa = sa.transitions.len();
        for (k, mut t) in sa.transitions.into_iter().enumerate() {
            if credit == JointCredit::AllSteps || k + 1 == n_sa {
                t.reward += sa_joint;
            }
            self.sa_buf.store(t);
        }
        let n_pa = pa.steps.len();
        for (k, mut t) in pa.steps.into_iter().enumerate() {
            if credit == JointCredit::AllSteps || k + 1 == n_pa {
                for (r, j) in t.rewards.iter_mut().zip(&pa_joint) {
                    *r += j;
                }
            }
            self.pa_buf.store(t);
        }
        self.train_sa(tally)?;
        self.train_pa(tally)?;
        Ok((EpochOutcome::Joint, pa.report.objective))
    }
}

/// Runs the alternating training loop on one scenario.
pub fn train(s: &Scenario, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(s, cfg, |_| {})
}

/// As [`train`], calling `progress` after every epoch.
pub fn train_with_progress(s: &Scenario, cfg: &TrainConfig, mut progress: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(k);
        r
    };
    let agents = Agents::new(cfg, s.num_users(), s.num_subcarriers(), &mut stream(0))?;
    let mut t = Trainer {
        s,
        cfg,
        settings: cfg.rollout_settings(s),
        agents,
        sa_buf: ReplayBuffer::new(cfg.sa_buffer),
        pa_buf: ReplayBuffer::new(cfg.pa_buffer),
        explore_rng: stream(1),
        sample_rng: stream(2),
    };
    let mut log = TrainLog::default();
    let mut best: Option<(usize, PolicyReport, Agents)> = None;
    let mut aborted = None;
    for epoch in 0..cfg.episodes {
        let started = Instant::now();
        let before = instrumentation::snapshot();
        let mut tally = Tally::default();
        let (outcome, objective) = match t.epoch(epoch, &mut tally) {
            Ok(v) => v,
            Err(e) if is_non_finite(&e) => {
                aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let last = epoch + 1 == cfg.episodes;
        let mut greedy_objective = f64::NAN;
        if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            let r = evaluate_policy(s, &t.agents, &t.settings, 1)?;
            if r.feasible() {
                greedy_objective = r.objective;
                if best.as_ref().map_or(true, |(_, b, _)| r.objective > b.objective) {
                    best = Some((epoch, r, t.agents.clone()));
                }
            }
        }
        let after = instrumentation::snapshot();
        let rec = EpochRecord {
            epoch,
            outcome,
            objective,
            sa_loss: if tally.sa_updates > 0 { tally.sa_loss / tally.sa_updates as f64 } else { f64::NAN },
            pa_loss: if tally.pa_agent_updates > 0 {
                tally.pa_loss / tally.pa_agent_updates as f64
            } else {
                f64::NAN
            },
            sa_updates: tally.sa_updates,
            pa_updates: tally.pa_updates,
            sa_failures: tally.sa_failures,
            pa_failures: tally.pa_failures,
            greedy_objective,
            macs_forward: after.forward.wrapping_sub(before.forward),
            macs_backward: after.backward.wrapping_sub(before.backward),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        progress(&rec);
        log.records.push(rec);
    }
    let final_agents = t.agents;
    let (agents, best) = match best {
        Some((epoch, report, agents)) => (agents, Some((epoch, report))),
        None => (final_agents.clone(), None),
    };
    Ok(TrainOutcome {
        agents,
        final_agents,
        best,
        log,
        aborted,
    })
}

/// Measured forward MACs per SA episode and per PA episode (one agent,
/// agents running in parallel) against the closed-form predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityAudit {
    pub sa_measured: u64,
    pub sa_predicted: f64,
    pub pa_measured: u64,
    pub pa_predicted: f64,
}

impl ComplexityAudit {
    pub fn sa_ratio(&self) -> f64 {
        self.sa_measured as f64 / self.sa_predicted
    }
    pub fn pa_ratio(&self) -> f64 {
        self.pa_measured as f64 / self.pa_predicted
    }
}

/// `M N_full (4 d_Res N_full + N_full + 4 N_F)` per SA episode.
pub fn predicted_sa_macs(arch: &ArchConfig, num_users: usize, num_subcarriers: usize) -> f64 {
    let n = arch.n_full as f64;
    num_users as f64 * n * (4.0 * arch.d_res as f64 * n + n + 4.0 * num_subcarriers as f64)
}

/// `T (sum_l conv_l + (d_net N_full + 14 N_F) N_full)` per PA episode with
/// `d_net = 4 d_Res + 1 + d_cnn`; the convolution terms use the actual
/// output map sizes of the state-CNN.
pub fn predicted_pa_macs(arch: &ArchConfig, num_users: usize, num_subcarriers: usize, steps: usize) -> Result<f64> {
    let (conv, d_cnn) = match state_cnn_spec(arch, num_users, num_subcarriers)? {
        Some(spec) => {
            let conv: u64 = spec
                .layers()
                .iter()
                .enumerate()
                .filter(|(_, l)| matches!(l, LayerSpec::Conv2d { .. }))
                .map(|(k, l)| l.macs(spec.shape_at(k)))
                .sum();
            (conv as f64, arch.d_cnn as f64)
        }
        None => (0.0, 0.0),
    };
    let n = arch.n_full as f64;
    let d_net = 4.0 * arch.d_res as f64 + 1.0 + d_cnn;
    Ok(steps as f64 * (conv + (d_net * n + 14.0 * num_subcarriers as f64) * n))
}

/// Runs one greedy SA episode and one greedy PA episode on a synthetic
/// scenario, evaluating each decision's critic as well, and counts the
/// forward MACs.
pub fn complexity_audit(arch: &ArchConfig, num_users: usize, num_subcarriers: usize, steps: usize) -> Result<ComplexityAudit> {
    // the closed forms count one actor and one critic pass per decision
    let cfg = TrainConfig {
        arch: *arch,
        pa_steps: steps,
        sa_candidates: 0,
        ..TrainConfig::default()
    };
    let s = generate(&ScenarioConfig {
        num_users,
        num_subcarriers,
        max_per_subcarrier: num_users,
        ..ScenarioConfig::default()
    })?;
    let agents = Agents::new(&cfg, num_users, num_subcarriers, &mut ChaCha8Rng::seed_from_u64(0))?;
    let settings = cfg.rollout_settings(&s);

    instrumentation::reset();
    let sa = sa_rollout::<ChaCha8Rng>(&s, &agents.sa, &settings.rewards, None)?;
    for t in &sa.transitions {
        agents.sa.ac.q_value(&t.state, &t.action)?;
    }
    let sa_measured = instrumentation::snapshot().forward;

    let mut full = Assignment::for_scenario(&s);
    for i in 0..num_subcarriers {
        for m in 0..num_users {
            full.set(i, m, 1);
        }
    }
    instrumentation::reset();
    let pa = {
        let pa_settings = PaSettings { steps, ..settings.pa.clone() };
        pa_rollout::<ChaCha8Rng>(&s, &full, &agents.pa, &pa_settings, &settings.rewards, None)?
    };
    for t in &pa.steps {
        let joint: Vec<f64> = t.actions.concat();
        for (m, agent) in agents.pa.iter().enumerate() {
            let mut state = agent.actor_input(&t.selfs[m], &t.others[m])?;
            state.extend_from_slice(&joint);
            let x = mcnoma_nn::Tensor::from_vec(&[1, state.len()], state)?;
            agent.ac.critic.predict(&x)?;
        }
    }
    let pa_measured = instrumentation::snapshot().forward / num_users as u64;
    Ok(ComplexityAudit {
        sa_measured,
        sa_predicted: predicted_sa_macs(arch, num_users, num_subcarriers),
        pa_measured,
        pa_predicted: predicted_pa_macs(arch, num_users, num_subcarriers, steps)?,
    })
}
