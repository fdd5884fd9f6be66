//! Scenario sweeps comparing the solvers over one parameter axis, with one
//! CSV per metric.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::baselines::{exhaustive_solve, greedy_sa, oma_solve, random_sa, with_grid_pa, DEFAULT_BUDGET};
use crate::config::KvConfig;
use crate::error::{CoreError, Result};
use crate::noma::{evaluate, Assignment, PowerAllocation};
use crate::scenario::{generate, Scenario, ScenarioConfig, SCENARIO_KEYS};
use crate::trainer::{evaluate_policy, train, TrainConfig, TRAIN_KEYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    NumUsers,
    TotalPowerDbm,
    MaxPerSubcarrier,
    QosMean,
    SicErrorSq,
    PdscThresholdDbm,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::NumUsers,
        SweepAxis::TotalPowerDbm,
        SweepAxis::MaxPerSubcarrier,
        SweepAxis::QosMean,
        SweepAxis::SicErrorSq,
        SweepAxis::PdscThresholdDbm,
    ];

    /// The scenario key the axis overrides.
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::NumUsers => "num_users",
            SweepAxis::TotalPowerDbm => "total_power_dbm",
            SweepAxis::MaxPerSubcarrier => "max_per_subcarrier",
            SweepAxis::QosMean => "qos_mean",
            SweepAxis::SicErrorSq => "sic_error_sq",
            SweepAxis::PdscThresholdDbm => "pdsc_threshold_dbm",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.key() == name).ok_or_else(|| CoreError::ConfigValue {
            key: "sweep_axis".into(),
            message: format!("unknown axis `{name}`"),
        })
    }

    /// `base` with the axis set to `value`; count axes must be whole numbers.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(CoreError::ConfigValue {
                    key: "sweep_values".into(),
                    message: format!("`{value}` is not a positive count for {}", self.key()),
                })
            }
        };
        let mut c = base.clone();
        match self {
            SweepAxis::NumUsers => c.num_users = count()?,
            SweepAxis::MaxPerSubcarrier => c.max_per_subcarrier = count()?,
            SweepAxis::TotalPowerDbm => c.total_power_dbm = value,
            SweepAxis::QosMean => c.qos_mean = value,
            SweepAxis::SicErrorSq => c.sic_error_sq = value,
            SweepAxis::PdscThresholdDbm => c.pdsc_threshold_dbm = value,
        }
        if self == SweepAxis::NumUsers {
            c.max_per_subcarrier = c.max_per_subcarrier.min(c.num_users);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Exhaustive,
    GreedyGrid,
    RandomGrid,
    Oma,
    Drl,
}

impl Solver {
    pub const ALL: [Solver; 5] = [Solver::Exhaustive, Solver::GreedyGrid, Solver::RandomGrid, Solver::Oma, Solver::Drl];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Exhaustive => "exhaustive",
            Solver::GreedyGrid => "greedy+grid",
            Solver::RandomGrid => "random+grid",
            Solver::Oma => "oma",
            Solver::Drl => "drl-jrm",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "exhaustive" => Ok(Solver::Exhaustive),
            "greedy+grid" | "greedy" => Ok(Solver::GreedyGrid),
            "random+grid" | "random" => Ok(Solver::RandomGrid),
            "oma" => Ok(Solver::Oma),
            "drl-jrm" | "drl" => Ok(Solver::Drl),
            other => Err(CoreError::ConfigValue {
                key: "solvers".into(),
                message: format!("unknown solver `{other}`"),
            }),
        }
    }
}

/// Per-instance quantities aggregated into the output CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Weighted-sum objective, bit/s/Hz.
    Objective,
    /// Sum throughput, bit/s/Hz.
    Throughput,
    /// Throughput of QoS-satisfied users, bit/s/Hz.
    EffectiveThroughput,
    QosSatisfaction,
    /// 1 when every constraint holds.
    Feasible,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Objective,
        Metric::Throughput,
        Metric::EffectiveThroughput,
        Metric::QosSatisfaction,
        Metric::Feasible,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Objective => "objective",
            Metric::Throughput => "throughput",
            Metric::EffectiveThroughput => "effective_throughput",
            Metric::QosSatisfaction => "qos_satisfaction",
            Metric::Feasible => "feasible",
        }
    }
}

pub const CSV_HEADER: [&str; 5] = ["axis_value", "solver", "mean", "std", "episodes"];

pub const EXPERIMENT_KEYS: &[&str] = &[
    "sweep_axis",
    "sweep_values",
    "solvers",
    "instances",
    "grid_levels",
    "search_budget",
    "eval_episodes",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub solvers: Vec<Solver>,
    /// Scenario draws per sweep point; draw `k` uses seed `rng_seed + k`.
    pub instances: usize,
    pub grid_levels: usize,
    pub budget: f64,
    /// Greedy evaluation rollouts of trained agents.
    pub eval_episodes: usize,
}

impl ExperimentConfig {
    /// Every key of `kv` must belong to the scenario, training or sweep set.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let known: Vec<&str> = SCENARIO_KEYS.iter().chain(TRAIN_KEYS).chain(EXPERIMENT_KEYS).copied().collect();
        if let Some(k) = kv.unknown_keys(&known).first() {
            return Err(CoreError::ConfigValue {
                key: (*k).to_string(),
                message: "unknown key".into(),
            });
        }
        let missing = |key: &str| CoreError::ConfigValue {
            key: key.into(),
            message: "required".into(),
        };
        let axis = SweepAxis::parse(&kv.get::<String>("sweep_axis")?.ok_or_else(|| missing("sweep_axis"))?)?;
        let values: Vec<f64> = kv.get_list("sweep_values")?.ok_or_else(|| missing("sweep_values"))?;
        let solvers = kv
            .get_list::<String>("solvers")?
            .ok_or_else(|| missing("solvers"))?
            .iter()
            .map(|s| Solver::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            scenario: ScenarioConfig::from_kv(kv)?,
            train: TrainConfig::from_kv(kv)?,
            axis,
            values,
            solvers,
            instances: kv.get_or("instances", 3)?,
            grid_levels: kv.get_or("grid_levels", 4)?,
            budget: kv.get_or("search_budget", DEFAULT_BUDGET)?,
            eval_episodes: kv.get_or("eval_episodes", 1)?,
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
        if self.values.is_empty() {
            return bad("sweep_values", "need at least one value");
        }
        if self.solvers.is_empty() {
            return bad("solvers", "need at least one solver");
        }
        if self.instances == 0 {
            return bad("instances", "must be at least 1");
        }
        if self.eval_episodes == 0 {
            return bad("eval_episodes", "must be at least 1");
        }
        if !(self.budget > 0.0) {
            return bad("search_budget", "must be positive");
        }
        for &v in &self.values {
            self.axis.apply(&self.scenario, v)?;
        }
        Ok(())
    }

    /// Scenario seeds shifted by `offset`, keeping everything else.
    pub fn with_seed_offset(&self, offset: u64) -> Self {
        let mut c = self.clone();
        c.scenario.rng_seed = c.scenario.rng_seed.wrapping_add(offset);
        c.train.seed = c.train.seed.wrapping_add(offset);
        c
    }
}

/// Scenario and training settings of a single-run config; sweep keys are
/// rejected along with unknown ones.
pub fn training_setup(kv: &KvConfig) -> Result<(ScenarioConfig, TrainConfig)> {
    let known: Vec<&str> = SCENARIO_KEYS.iter().chain(TRAIN_KEYS).copied().collect();
    if let Some(k) = kv.unknown_keys(&known).first() {
        return Err(CoreError::ConfigValue {
            key: (*k).to_string(),
            message: "unknown key".into(),
        });
    }
    Ok((ScenarioConfig::from_kv(kv)?, TrainConfig::from_kv(kv)?))
}

/// One solver's verified result on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub objective: f64,
    pub throughput: f64,
    pub effective_throughput: f64,
    pub qos_satisfaction: f64,
    pub feasible: bool,
}

impl Sample {
    /// Re-evaluates `(a, p)` from scratch. Infeasible points score zero on
    /// every rate metric and keep their true QoS satisfaction.
    pub fn verified(s: &Scenario, a: &Assignment, p: &PowerAllocation) -> Result<Self> {
        let r = evaluate(s, a, p)?;
        let feasible = r.flags.all();
        let w = s.bandwidth();
        let gate = |x: f64| if feasible { x / w } else { 0.0 };
        Ok(Self {
            objective: gate(r.objective),
            throughput: gate(r.total_throughput()),
            effective_throughput: gate(r.effective_throughput),
            qos_satisfaction: r.qos_satisfaction,
            feasible,
        })
    }

    pub fn infeasible(qos_satisfaction: f64) -> Self {
        Self {
            objective: 0.0,
            throughput: 0.0,
            effective_throughput: 0.0,
            qos_satisfaction,
            feasible: false,
        }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::Objective => self.objective,
            Metric::Throughput => self.throughput,
            Metric::EffectiveThroughput => self.effective_throughput,
            Metric::QosSatisfaction => self.qos_satisfaction,
            Metric::Feasible => f64::from(u8::from(self.feasible)),
        }
    }
}

/// Runs `solver` on `s`; `instance` seeds the random assignment and the
/// training streams.
pub fn solve(s: &Scenario, solver: Solver, cfg: &ExperimentConfig, instance: u64) -> Result<Sample> {
    let (levels, budget) = (cfg.grid_levels, cfg.budget);
    match solver {
        Solver::Exhaustive => match exhaustive_solve(s, levels, budget)?.solution() {
            Some(sol) => Sample::verified(s, &sol.assignment, &sol.powers),
            None => Ok(Sample::infeasible(0.0)),
        },
        Solver::GreedyGrid => {
            let (sol, _) = with_grid_pa(s, greedy_sa(s), levels, budget)?;
            Sample::verified(s, &sol.assignment, &sol.powers)
        }
        Solver::RandomGrid => {
            let (sol, _) = with_grid_pa(s, random_sa(s, cfg.scenario.rng_seed.wrapping_add(instance)), levels, budget)?;
            Sample::verified(s, &sol.assignment, &sol.powers)
        }
        Solver::Oma => {
            let (sol, _) = oma_solve(s, levels, budget)?;
            Sample::verified(s, &sol.assignment, &sol.powers)
        }
        Solver::Drl => {
            let train_cfg = TrainConfig {
                seed: cfg.train.seed.wrapping_add(instance),
                ..cfg.train.clone()
            };
            let outcome = train(s, &train_cfg)?;
            if let Some(reason) = outcome.aborted {
                return Err(CoreError::NonFinite(reason));
            }
            let report = evaluate_policy(s, &outcome.agents, &train_cfg.rollout_settings(s), cfg.eval_episodes)?;
            Sample::verified(s, &report.assignment, &report.powers)
        }
    }
}

/// Aggregate of one (axis value, solver) cell for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub axis_value: f64,
    pub solver: Solver,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub episodes: usize,
}

/// Samples of every (value, solver) cell, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<(f64, Solver, Vec<Sample>)>,
}

impl SweepResult {
    pub fn rows(&self, metric: Metric) -> Vec<Row> {
        self.cells
            .iter()
            .map(|(v, solver, samples)| {
                let xs: Vec<f64> = samples.iter().map(|s| s.metric(metric)).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                Row {
                    axis_value: *v,
                    solver: *solver,
                    mean,
                    std: var.sqrt(),
                    episodes: xs.len(),
                }
            })
            .collect()
    }

    pub fn mean(&self, value: f64, solver: Solver, metric: Metric) -> Option<f64> {
        self.rows(metric)
            .into_iter()
            .find(|r| r.axis_value == value && r.solver == solver)
            .map(|r| r.mean)
    }

    pub fn write_csv<W: Write>(&self, metric: Metric, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in self.rows(metric) {
            out.write_record([
                r.axis_value.to_string(),
                r.solver.name().to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.episodes.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<metric>.csv` for every metric into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        Metric::ALL
            .iter()
            .map(|&m| {
                let path = dir.join(format!("{}.csv", m.name()));
                self.write_csv(m, std::fs::File::create(&path)?)?;
                Ok(path)
            })
            .collect()
    }
}

/// Evaluates every (value, instance, solver) job on up to `threads`
/// workers. Results land in fixed slots, so output is independent of
/// scheduling.
pub fn sweep(cfg: &ExperimentConfig, threads: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.values.len())
        .flat_map(|v| (0..cfg.solvers.len()).flat_map(move |s| (0..cfg.instances).map(move |k| (v, s, k))))
        .collect();
    let slots: Vec<Mutex<Option<Result<Sample>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let run = |j: usize| -> Result<Sample> {
        let (v, s, k) = jobs[j];
        let point = cfg.axis.apply(&cfg.scenario, cfg.values[v])?;
        let scenario = generate(&point.with_seed(point.rng_seed.wrapping_add(k as u64)))?;
        solve(&scenario, cfg.solvers[s], cfg, k as u64)
    };
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let r = run(j);
                *slots[j].lock().expect("unpoisoned slot") = Some(r);
            });
        }
    });
    let mut samples = Vec::with_capacity(jobs.len());
    for slot in slots {
        samples.push(slot.into_inner().expect("unpoisoned slot").expect("every job ran")?);
    }
    let per_cell = cfg.instances;
    let cells = samples
        .chunks(per_cell)
        .zip(jobs.chunks(per_cell))
        .map(|(chunk, js)| {
            let (v, s, _) = js[0];
            (cfg.values[v], cfg.solvers[s], chunk.to_vec())
        })
        .collect();
    Ok(SweepResult { axis: cfg.axis, cells })
}

/// [`sweep`] then one CSV per metric in `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, threads: usize) -> Result<Vec<PathBuf>> {
    sweep(cfg, threads)?.write_all(out_dir)
}
