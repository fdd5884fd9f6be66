//! Self-checks runnable from the command line, grouped into suites.

use std::fmt;
use std::io::Write;

use mcnoma_nn::{gradcheck, Network, NetworkSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{pa_actor_spec, pa_critic_spec, sa_actor_specs, sa_critic_spec, state_cnn_spec, ArchConfig};
use crate::baselines::{exhaustive_solve, greedy_sa, grid_pa, oma_solve, random_sa, with_grid_pa, DEFAULT_BUDGET};
use crate::error::{CoreError, Result};
use crate::noma::{evaluate, pdsc_satisfied, rate, sic_order, Assignment, PowerAllocation};
use crate::scenario::{generate, Scenario, ScenarioConfig};
use crate::trainer::{
    complexity_audit, evaluate_policy, predicted_pa_macs, predicted_sa_macs, train, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    CoreMath,
    Gradients,
    Oracle,
    Training,
    Complexity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::CoreMath, Suite::Gradients, Suite::Oracle, Suite::Training, Suite::Complexity];

    pub fn name(self) -> &'static str {
        match self {
            Suite::CoreMath => "core-math",
            Suite::Gradients => "gradients",
            Suite::Oracle => "oracle",
            Suite::Training => "training",
            Suite::Complexity => "complexity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| CoreError::ConfigValue {
            key: "suite".into(),
            message: format!("unknown suite `{name}`"),
        })
    }
}

/// One named check: `value` must not exceed `limit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    fn new(suite: Suite, name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            value,
            limit,
        }
    }

    /// NaN never passes.
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed()).count()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["suite", "check", "value", "limit", "passed"])?;
        for c in &self.checks {
            out.write_record([
                c.suite.name(),
                &c.name,
                &c.value.to_string(),
                &c.limit.to_string(),
                if c.passed() { "pass" } else { "FAIL" },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            writeln!(
                f,
                "{:<4} {:<11} {:<width$}  {:>12.4e} <= {:.1e}",
                if c.passed() { "pass" } else { "FAIL" },
                c.suite.name(),
                c.name,
                c.value,
                c.limit,
            )?;
        }
        write!(f, "{} checks, {} failed", self.checks.len(), self.failures())
    }
}

/// Runs `suite` with every random stream derived from `seed`.
pub fn run_suite(suite: Suite, seed: u64) -> Result<VerifyReport> {
    let checks = match suite {
        Suite::CoreMath => core_math(seed)?,
        Suite::Gradients => gradients(seed)?,
        Suite::Oracle => oracle(seed)?,
        Suite::Training => training(seed)?,
        Suite::Complexity => complexity()?,
    };
    Ok(VerifyReport { checks })
}

pub fn run_all(seed: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for s in Suite::ALL {
        report.checks.extend(run_suite(s, seed)?.checks);
    }
    Ok(report)
}

fn small_config(rng: &mut ChaCha8Rng, max_users: usize, max_subcarriers: usize) -> ScenarioConfig {
    let num_users = rng.gen_range(2..=max_users);
    ScenarioConfig {
        num_users,
        num_subcarriers: rng.gen_range(1..=max_subcarriers),
        max_per_subcarrier: rng.gen_range(1..=num_users.min(3)),
        rng_seed: rng.gen(),
        ..ScenarioConfig::default()
    }
}

/// Random capacity-respecting occupancy.
pub fn random_assignment<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Assignment {
    let mut a = Assignment::for_scenario(s);
    for i in 0..s.num_subcarriers() {
        for m in 0..s.num_users() {
            if a.load(i) < s.max_per_subcarrier() && rng.gen_bool(0.5) {
                a.set(i, m, 1);
            }
        }
    }
    a
}

fn core_math(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut order_bad, mut rate_err, mut pdsc_mismatch, mut budget_err, mut negative) = (0.0, 0.0f64, 0.0, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let s = generate(&small_config(&mut rng, 6, 4))?;
        let a = random_assignment(&s, &mut rng);
        let v: Vec<f64> = (0..s.num_users() * s.num_subcarriers()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = PowerAllocation::from_indicator(&s, v)?;
        budget_err = budget_err.max((p.total() - s.total_power()).abs() / s.total_power());
        negative = negative.max(-p.powers().iter().copied().fold(0.0, f64::min));

        let order = sic_order(&s, &a)?;
        let report = evaluate(&s, &a, &p)?;
        for i in 0..s.num_subcarriers() {
            let users = order.users(i);
            if users.windows(2).any(|w| s.gain(i, w[0]) < s.gain(i, w[1])) {
                order_bad += 1.0;
            }
            let mut pdsc = true;
            for (j, &u) in users.iter().enumerate() {
                let slow = rate(&s, &order, &p, i, j);
                let fast = report.rate(i, u);
                rate_err = rate_err.max((slow - fast).abs() / slow.abs().max(f64::MIN_POSITIVE));
                pdsc &= pdsc_satisfied(&s, &order, &p, i, j);
            }
            if pdsc != report.pdsc_by_subcarrier[i] {
                pdsc_mismatch += 1.0;
            }
        }
    }
    let c = |n: &str, v: f64, l: f64| Check::new(Suite::CoreMath, n, v, l);
    Ok(vec![
        c("sic_order_violations", order_bad, 0.0),
        c("kernel_vs_reference_rate_rel_error", rate_err, 1e-12),
        c("pdsc_verdict_mismatches", pdsc_mismatch, 0.0),
        c("power_budget_rel_error", budget_err, 1e-9),
        c("negative_power", negative, 0.0),
    ])
}

/// A deliberately narrow architecture so finite differences stay cheap.
pub fn tiny_arch() -> ArchConfig {
    ArchConfig {
        n_full: 6,
        d_res: 1,
        penultimate: 5,
        per_user: 2,
        cnn_channels: [2, 3],
        d_cnn: 1,
    }
}

fn gradient_error(spec: NetworkSpec, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut net = Network::new(spec.clone(), rng);
    // offset biases so ReLU kinks do not line up with zero inputs
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    let mut shape = vec![2];
    shape.extend_from_slice(spec.input_shape());
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    Ok(gradcheck::check(&net, &x, 1e-5, rng)?.max_rel_error())
}

fn gradients(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = tiny_arch();
    let (m, nf) = (3, 2);
    let mut specs: Vec<(String, NetworkSpec)> = sa_actor_specs(&arch, m, nf)?
        .into_iter()
        .enumerate()
        .map(|(k, s)| (format!("sa_actor_head{k}"), s))
        .collect();
    specs.push(("sa_critic".into(), sa_critic_spec(&arch, m, nf)?));
    specs.push(("pa_actor".into(), pa_actor_spec(&arch, nf)?));
    specs.push(("pa_critic".into(), pa_critic_spec(&arch, m, nf)?));
    if let Some(cnn) = state_cnn_spec(&arch, m, nf)? {
        specs.push(("state_cnn".into(), cnn));
    }
    specs
        .into_iter()
        .map(|(name, spec)| Ok(Check::new(Suite::Gradients, format!("{name}_max_rel_error"), gradient_error(spec, &mut rng)?, 1e-4)))
        .collect()
}

fn oracle(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_ratio, mut refinement_loss) = (0.0f64, 0.0f64);
    for k in 0..10 {
        let cfg = ScenarioConfig {
            num_users: 3,
            num_subcarriers: 2,
            max_per_subcarrier: 2,
            rng_seed: rng.gen(),
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg)?;
        let Some(opt4) = exhaustive_solve(&s, 4, DEFAULT_BUDGET)?.solution().cloned() else {
            continue;
        };
        let opt8 = exhaustive_solve(&s, 8, DEFAULT_BUDGET)?
            .solution()
            .cloned()
            .ok_or_else(|| CoreError::InvalidScenario("finer grid lost feasibility".into()))?;
        refinement_loss = refinement_loss.max((opt4.objective() - opt8.objective()) / opt8.objective());
        let heuristics = [
            with_grid_pa(&s, greedy_sa(&s), 4, DEFAULT_BUDGET)?.0,
            with_grid_pa(&s, random_sa(&s, k), 4, DEFAULT_BUDGET)?.0,
            oma_solve(&s, 4, DEFAULT_BUDGET)?.0,
        ];
        for h in heuristics.iter().filter(|h| h.report.flags.all()) {
            worst_ratio = worst_ratio.max(h.objective() / opt4.objective());
        }
        // grid PA on the optimal assignment reproduces the optimum
        let again = grid_pa(&s, &opt4.assignment, 4, DEFAULT_BUDGET)?;
        if again.report.flags.all() {
            worst_ratio = worst_ratio.max(again.report.objective / opt4.objective());
        }
    }
    Ok(vec![
        Check::new(Suite::Oracle, "max_heuristic_over_optimal", worst_ratio, 1.0 + 1e-9),
        Check::new(Suite::Oracle, "grid_refinement_rel_loss", refinement_loss, 0.0),
    ])
}

fn training(seed: u64) -> Result<Vec<Check>> {
    let s = generate(&ScenarioConfig {
        num_users: 3,
        num_subcarriers: 2,
        max_per_subcarrier: 2,
        rng_seed: seed,
        ..ScenarioConfig::default()
    })?;
    let cfg = TrainConfig {
        arch: ArchConfig {
            n_full: 16,
            penultimate: 16,
            ..ArchConfig::default()
        },
        episodes: 60,
        sa_retries: 10,
        pa_retries: 5,
        pa_steps: 5,
        sa_buffer: 16,
        pa_buffer: 32,
        batch: 8,
        eval_every: 10,
        seed,
        ..TrainConfig::default()
    };
    let a = train(&s, &cfg)?;
    let b = train(&s, &cfg)?;
    let log_csv = |o: &crate::trainer::TrainOutcome| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        o.log.write_csv(&mut buf, false)?;
        Ok(buf)
    };
    let finite = a
        .log
        .records
        .iter()
        .all(|r| [r.sa_loss, r.pa_loss].iter().all(|x| x.is_nan() || x.is_finite()));
    let (sa_updates, pa_updates) = a.log.updates();
    let policy = evaluate_policy(&s, &a.agents, &cfg.rollout_settings(&s), 1)?;
    let c = |n: &str, v: f64, l: f64| Check::new(Suite::Training, n, v, l);
    let flag = |ok: bool| if ok { 0.0 } else { 1.0 };
    Ok(vec![
        c("aborted", flag(a.aborted.is_none()), 0.0),
        c("logged_epochs_missing", (cfg.episodes as f64 - a.log.records.len() as f64).abs(), 0.0),
        c("non_finite_losses", flag(finite), 0.0),
        c("no_gradient_updates", flag(sa_updates > 0 && pa_updates > 0), 0.0),
        c("rerun_log_differs", flag(log_csv(&a)? == log_csv(&b)?), 0.0),
        c("greedy_objective_non_finite", flag(policy.objective.is_finite()), 0.0),
    ])
}

fn complexity() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let settings = [
        (ArchConfig::default(), 4, 3),
        (
            ArchConfig {
                n_full: 128,
                d_res: 3,
                penultimate: 128,
                ..ArchConfig::default()
            },
            6,
            4,
        ),
    ];
    let steps = 5;
    for (k, (arch, m, nf)) in settings.iter().enumerate() {
        let audit = complexity_audit(arch, *m, *nf, steps)?;
        // ratio within [1/2, 2] expressed as |log2 ratio| <= 1
        checks.push(Check::new(Suite::Complexity, format!("setting{k}_sa_log2_ratio"), audit.sa_ratio().log2().abs(), 1.0));
        checks.push(Check::new(Suite::Complexity, format!("setting{k}_pa_log2_ratio"), audit.pa_ratio().log2().abs(), 1.0));
    }
    let base = ArchConfig {
        n_full: 128,
        penultimate: 128,
        ..ArchConfig::default()
    };
    let wide = ArchConfig {
        n_full: 2 * base.n_full,
        penultimate: 2 * base.penultimate,
        ..base
    };
    let (m, nf) = (4, 3);
    let measured = |arch: &ArchConfig, m: usize| -> Result<f64> { Ok(complexity_audit(arch, m, nf, steps)?.sa_measured as f64) };
    let sa_width_measured = measured(&wide, m)? / measured(&base, m)?;
    let sa_width_predicted = predicted_sa_macs(&wide, m, nf) / predicted_sa_macs(&base, m, nf);
    let sa_users_measured = measured(&base, 2 * m)? / measured(&base, m)?;
    let sa_users_predicted = predicted_sa_macs(&base, 2 * m, nf) / predicted_sa_macs(&base, m, nf);
    let pa_width_measured = complexity_audit(&wide, m, nf, steps)?.pa_measured as f64 / complexity_audit(&base, m, nf, steps)?.pa_measured as f64;
    let pa_width_predicted = predicted_pa_macs(&wide, m, nf, steps)? / predicted_pa_macs(&base, m, nf, steps)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b;
    checks.push(Check::new(Suite::Complexity, "sa_double_width_scaling_rel_error", rel(sa_width_measured, sa_width_predicted), 0.1));
    checks.push(Check::new(Suite::Complexity, "sa_double_users_scaling_rel_error", rel(sa_users_measured, sa_users_predicted), 0.1));
    checks.push(Check::new(Suite::Complexity, "pa_double_width_scaling_rel_error", rel(pa_width_measured, pa_width_predicted), 0.1));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::parse(s.name()).unwrap(), s);
        }
        assert!(Suite::parse("everything").is_err());
    }

    #[test]
    fn nan_never_passes() {
        assert!(!Check::new(Suite::Oracle, "x", f64::NAN, 1.0).passed());
        assert!(Check::new(Suite::Oracle, "x", 1.0, 1.0).passed());
    }

    #[test]
    fn core_math_passes_and_is_deterministic() {
        let a = run_suite(Suite::CoreMath, 3).unwrap();
        assert!(a.passed(), "{a}");
        assert_eq!(a, run_suite(Suite::CoreMath, 3).unwrap());
    }

    #[test]
    fn csv_has_fixed_header() {
        let r = VerifyReport {
            checks: vec![Check::new(Suite::Gradients, "g", 1e-7, 1e-4)],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "suite,check,value,limit,passed\ngradients,g,0.0000001,0.0001,pass\n");
    }
}
