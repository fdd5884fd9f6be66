//! Exact small-instance oracle and heuristic allocators.
//!
//! Powers come from an integer indicator grid `{1..L}` per occupied slot,
//! normalized to the budget, so C1 and C3 hold for every grid point.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::noma::{
    evaluate, sort_by_gain, subcarrier_kernel, Assignment, PowerAllocation, RateReport, MAX_MULTIPLEXED,
    REL_TOL,
};
use crate::scenario::Scenario;

pub const DEFAULT_BUDGET: f64 = 1e8;

/// An (assignment, powers) pair with its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    pub powers: PowerAllocation,
    pub report: RateReport,
}

impl Solution {
    pub fn new(s: &Scenario, assignment: Assignment, powers: PowerAllocation) -> Result<Self> {
        let report = evaluate(s, &assignment, &powers)?;
        Ok(Self {
            assignment,
            powers,
            report,
        })
    }

    pub fn objective(&self) -> f64 {
        self.report.objective
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExhaustiveOutcome {
    Optimal(Solution),
    /// No grid point satisfies C1 to C6.
    Infeasible,
}

impl ExhaustiveOutcome {
    pub fn solution(&self) -> Option<&Solution> {
        match self {
            ExhaustiveOutcome::Optimal(s) => Some(s),
            ExhaustiveOutcome::Infeasible => None,
        }
    }
}

/// Result of the fixed-assignment power search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPa {
    pub powers: PowerAllocation,
    pub report: RateReport,
    /// True when no grid point met both C2 and C5 and the best point under
    /// a relaxed key was returned.
    pub fallback: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `(sum_{s=0}^{N_max} C(M, s) L^s)^{N_F}` joint (assignment, grid) points.
pub fn search_space_size(s: &Scenario, levels: usize) -> f64 {
    let per_subcarrier: f64 = (0..=s.max_per_subcarrier())
        .map(|k| binomial(s.num_users(), k) * (levels as f64).powi(k as i32))
        .sum();
    per_subcarrier.powi(s.num_subcarriers() as i32)
}

/// One subcarrier's occupancy and indicator row.
#[derive(Debug, Clone)]
struct SubConfig {
    /// Indicator per user, 0 where unassigned.
    row: Vec<u8>,
    /// Occupying users in decoding order.
    users: Vec<usize>,
    sum: usize,
}

/// Rows in lexicographic order with at most `cap` nonzero entries.
fn enumerate_rows(m: usize, levels: usize, cap: usize, fixed: Option<&[bool]>) -> Vec<Vec<u8>> {
    fn rec(pos: usize, m: usize, levels: usize, cap: usize, fixed: Option<&[bool]>, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos == m {
            out.push(cur.clone());
            return;
        }
        let used = cur.iter().filter(|&&v| v != 0).count();
        let choices: Vec<u8> = match fixed {
            Some(mask) if mask[pos] => (1..=levels as u8).collect(),
            Some(_) => vec![0],
            None if used < cap => (0..=levels as u8).collect(),
            None => vec![0],
        };
        for v in choices {
            cur.push(v);
            rec(pos + 1, m, levels, cap, fixed, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, levels, cap, fixed, &mut Vec::with_capacity(m), &mut out);
    out
}

fn configs_for(s: &Scenario, i: usize, rows: Vec<Vec<u8>>) -> Vec<SubConfig> {
    rows.into_iter()
        .map(|row| {
            let mut users: Vec<usize> = (0..row.len()).filter(|&m| row[m] != 0).collect();
            sort_by_gain(s, i, &mut users);
            let sum = row.iter().map(|&v| v as usize).sum();
            SubConfig { row, users, sum }
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Only C1 to C6 feasible points, with bound pruning.
    Feasible,
    /// Tiered key `(C2 and C5) > C2 > any`, no pruning.
    Tiered,
}

/// Precomputed per-subcarrier outcomes for one indicator total.
struct Table {
    objective: Vec<f64>,
    rates: Vec<f64>,
    pdsc: Vec<bool>,
    buckets: Vec<Vec<usize>>,
}

struct Search<'a> {
    s: &'a Scenario,
    configs: Vec<Vec<SubConfig>>,
    mode: Mode,
    tables: Vec<Table>,
    obj_suffix: Vec<f64>,
    rate_suffix: Vec<f64>,
    max_sum: Vec<usize>,
    sum_suffix: Vec<usize>,
    chosen: Vec<usize>,
    stack: Vec<f64>,
    best: Option<(u8, f64, Vec<usize>)>,
}

impl<'a> Search<'a> {
    fn new(s: &'a Scenario, configs: Vec<Vec<SubConfig>>, mode: Mode) -> Self {
        let nf = configs.len();
        let max_sum: Vec<usize> = configs.iter().map(|c| c.iter().map(|x| x.sum).max().unwrap_or(0)).collect();
        let mut sum_suffix = vec![0; nf + 1];
        for i in (0..nf).rev() {
            sum_suffix[i] = sum_suffix[i + 1] + max_sum[i];
        }
        Self {
            s,
            configs,
            mode,
            tables: Vec::new(),
            obj_suffix: Vec::new(),
            rate_suffix: Vec::new(),
            max_sum,
            sum_suffix,
            chosen: vec![0; nf],
            stack: vec![0.0; (nf + 1) * s.num_users()],
            best: None,
        }
    }

    fn run(mut self) -> Option<(u8, Vec<usize>)> {
        let total = self.sum_suffix[0];
        for sum in 1..=total {
            self.prepare(sum);
            self.descend(0, sum, 0.0, true);
        }
        self.best.map(|(tier, _, key)| (tier, key))
    }

    fn prepare(&mut self, sum: usize) {
        let s = self.s;
        let m = s.num_users();
        let nf = self.configs.len();
        let mut powers = [0.0; MAX_MULTIPLEXED];
        let mut out = [0.0; MAX_MULTIPLEXED];
        self.tables.clear();
        for (i, configs) in self.configs.iter().enumerate() {
            let mut t = Table {
                objective: vec![0.0; configs.len()],
                rates: vec![0.0; configs.len() * m],
                pdsc: vec![true; configs.len()],
                buckets: vec![Vec::new(); self.max_sum[i] + 1],
            };
            for (c, cfg) in configs.iter().enumerate() {
                for (j, &u) in cfg.users.iter().enumerate() {
                    powers[j] = s.total_power() * f64::from(cfg.row[u]) / sum as f64;
                }
                let n = cfg.users.len();
                t.pdsc[c] = subcarrier_kernel(s, i, &cfg.users, &powers[..n], &mut out[..n]);
                let mut obj = 0.0;
                for (j, &u) in cfg.users.iter().enumerate() {
                    t.rates[c * m + u] = out[j];
                    obj += s.weights()[u] * out[j];
                }
                t.objective[c] = obj;
                if self.mode == Mode::Tiered || t.pdsc[c] {
                    t.buckets[cfg.sum].push(c);
                }
            }
            self.tables.push(t);
        }
        self.obj_suffix = vec![0.0; nf + 1];
        self.rate_suffix = vec![0.0; (nf + 1) * m];
        for i in (0..nf).rev() {
            let t = &self.tables[i];
            let live = t.buckets.iter().flatten();
            let best_obj = live.clone().map(|&c| t.objective[c]).fold(0.0, f64::max);
            self.obj_suffix[i] = self.obj_suffix[i + 1] + best_obj;
            for u in 0..m {
                let best_rate = live.clone().map(|&c| t.rates[c * m + u]).fold(0.0, f64::max);
                self.rate_suffix[i * m + u] = self.rate_suffix[(i + 1) * m + u] + best_rate;
            }
        }
    }

    /// Per-user running totals live in `self.stack[i * m..(i + 1) * m]`.
    fn descend(&mut self, i: usize, remaining: usize, partial: f64, pdsc: bool) {
        let nf = self.configs.len();
        let m = self.s.num_users();
        if i == nf {
            if remaining == 0 {
                self.leaf(partial, pdsc);
            }
            return;
        }
        if remaining > self.sum_suffix[i] {
            return;
        }
        if self.mode == Mode::Feasible {
            if let Some((_, best, _)) = &self.best {
                if partial + self.obj_suffix[i] < best - 1e-12 * best.abs() {
                    return;
                }
            }
            let q = self.s.qos_min();
            for u in 0..m {
                if self.stack[i * m + u] + self.rate_suffix[i * m + u] < q[u] * (1.0 - REL_TOL) {
                    return;
                }
            }
        }
        let lo = remaining.saturating_sub(self.sum_suffix[i + 1]);
        let hi = remaining.min(self.max_sum[i]);
        for part in lo..=hi {
            for k in 0..self.tables[i].buckets[part].len() {
                let t = &self.tables[i];
                let c = t.buckets[part][k];
                let obj = t.objective[c];
                let ok = t.pdsc[c];
                for u in 0..m {
                    self.stack[(i + 1) * m + u] = self.stack[i * m + u] + t.rates[c * m + u];
                }
                self.chosen[i] = c;
                self.descend(i + 1, remaining - part, partial + obj, pdsc && ok);
            }
        }
    }

    fn leaf(&mut self, objective: f64, pdsc: bool) {
        let m = self.s.num_users();
        let nf = self.configs.len();
        let qos = self.stack[nf * m..]
            .iter()
            .zip(self.s.qos_min())
            .all(|(r, q)| *r >= q * (1.0 - REL_TOL));
        let tier = match (pdsc, qos) {
            (true, true) => 2,
            (true, false) => 1,
            _ => 0,
        };
        if self.mode == Mode::Feasible && tier < 2 {
            return;
        }
        let better = match &self.best {
            None => true,
            Some((bt, bo, key)) => {
                tier > *bt || (tier == *bt && (objective > *bo || (objective == *bo && self.chosen < *key)))
            }
        };
        if better {
            self.best = Some((tier, objective, self.chosen.clone()));
        }
    }
}

fn materialize(s: &Scenario, configs: &[Vec<SubConfig>], key: &[usize]) -> Result<(Assignment, PowerAllocation)> {
    let m = s.num_users();
    let mut occupancy = Vec::with_capacity(s.num_subcarriers() * m);
    let mut indicator = Vec::with_capacity(s.num_subcarriers() * m);
    for (i, &c) in key.iter().enumerate() {
        let row = &configs[i][c].row;
        occupancy.extend(row.iter().map(|&v| u8::from(v != 0)));
        indicator.extend(row.iter().map(|&v| f64::from(v)));
    }
    Ok((
        Assignment::from_vec(s.num_subcarriers(), m, occupancy)?,
        PowerAllocation::from_indicator(s, indicator)?,
    ))
}

fn check_budget(size: f64, budget: f64) -> Result<()> {
    if size > budget {
        return Err(CoreError::BudgetExceeded { size, budget });
    }
    Ok(())
}

/// Exact maximizer of the weighted-sum objective over every assignment with
/// at most `N_max` users per subcarrier and every indicator grid point.
/// Equal objectives resolve to the lexicographically smallest indicator.
pub fn exhaustive_solve(s: &Scenario, levels: usize, budget: f64) -> Result<ExhaustiveOutcome> {
    if levels == 0 || levels > u8::MAX as usize {
        return Err(CoreError::InvalidScenario(format!("grid levels must lie in [1, 255], got {levels}")));
    }
    check_budget(search_space_size(s, levels), budget)?;
    let cap = s.max_per_subcarrier().min(MAX_MULTIPLEXED);
    let configs: Vec<Vec<SubConfig>> = (0..s.num_subcarriers())
        .map(|i| configs_for(s, i, enumerate_rows(s.num_users(), levels, cap, None)))
        .collect();
    let Some((_, key)) = Search::new(s, configs.clone(), Mode::Feasible).run() else {
        return Ok(ExhaustiveOutcome::Infeasible);
    };
    let (a, p) = materialize(s, &configs, &key)?;
    let sol = Solution::new(s, a, p)?;
    debug_assert!(sol.report.flags.all(), "{:?}", sol.report.flags);
    Ok(ExhaustiveOutcome::Optimal(sol))
}

/// Best grid power allocation for a fixed assignment.
pub fn grid_pa(s: &Scenario, a: &Assignment, levels: usize, budget: f64) -> Result<GridPa> {
    if levels == 0 || levels > u8::MAX as usize {
        return Err(CoreError::InvalidScenario(format!("grid levels must lie in [1, 255], got {levels}")));
    }
    if a.num_subcarriers() != s.num_subcarriers() || a.num_users() != s.num_users() {
        return Err(CoreError::Shape("assignment does not match the scenario".into()));
    }
    check_budget((levels as f64).powi(a.slot_count() as i32), budget)?;
    let m = s.num_users();
    let mut configs = Vec::with_capacity(s.num_subcarriers());
    for i in 0..s.num_subcarriers() {
        let mask: Vec<bool> = (0..m).map(|u| a.is_assigned(i, u)).collect();
        if mask.iter().filter(|&&b| b).count() > MAX_MULTIPLEXED {
            return Err(CoreError::Shape(format!("more than {MAX_MULTIPLEXED} users on subcarrier {i}")));
        }
        configs.push(configs_for(s, i, enumerate_rows(m, levels, m, Some(&mask))));
    }
    if a.slot_count() == 0 {
        let powers = PowerAllocation::zeros(s);
        let report = evaluate(s, a, &powers)?;
        return Ok(GridPa {
            powers,
            report,
            fallback: true,
        });
    }
    let (tier, key) = Search::new(s, configs.clone(), Mode::Tiered)
        .run()
        .expect("tiered search accepts every point");
    let (_, powers) = materialize(s, &configs, &key)?;
    let report = evaluate(s, a, &powers)?;
    Ok(GridPa {
        powers,
        report,
        fallback: tier < 2,
    })
}

fn ranked_users(s: &Scenario) -> Vec<usize> {
    let score = |u: usize| {
        let best = (0..s.num_subcarriers()).map(|i| s.gain(i, u)).fold(0.0, f64::max);
        s.weights()[u] * best
    };
    let mut users: Vec<usize> = (0..s.num_users()).collect();
    users.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    users
}

/// Greedy assignment: users by descending `weight * best gain` each take
/// their best subcarrier with spare capacity, then idle subcarriers go to
/// the user with the highest weighted gain still under the per-user cap
/// `ceil(N_F * N_max / M)`.
pub fn greedy_sa(s: &Scenario) -> Assignment {
    let (nf, m, nmax) = (s.num_subcarriers(), s.num_users(), s.max_per_subcarrier());
    let cap = (nf * nmax).div_ceil(m);
    let mut a = Assignment::for_scenario(s);
    let mut held = vec![0usize; m];
    for u in ranked_users(s) {
        let mut subs: Vec<usize> = (0..nf).collect();
        subs.sort_by(|&x, &y| s.gain(y, u).total_cmp(&s.gain(x, u)).then(x.cmp(&y)));
        if let Some(&i) = subs.iter().find(|&&i| a.load(i) < nmax) {
            a.set(i, u, 1);
            held[u] += 1;
        }
    }
    for i in 0..nf {
        if a.load(i) > 0 {
            continue;
        }
        let pick = (0..m)
            .filter(|&u| held[u] < cap)
            .max_by(|&x, &y| {
                (s.weights()[x] * s.gain(i, x))
                    .total_cmp(&(s.weights()[y] * s.gain(i, y)))
                    .then(y.cmp(&x))
            });
        if let Some(u) = pick {
            a.set(i, u, 1);
            held[u] += 1;
        }
    }
    a
}

/// Uniform sample over C4/C6-feasible assignments that cover every user,
/// by rejection; coverage is dropped when `N_F * N_max < M`.
pub fn random_sa(s: &Scenario, seed: u64) -> Assignment {
    const MAX_ATTEMPTS: usize = 100_000;
    let (nf, m, nmax) = (s.num_subcarriers(), s.num_users(), s.max_per_subcarrier());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = (0u64..1 << m)
        .filter(|mask| (mask.count_ones() as usize) <= nmax)
        .map(|mask| (0..m).filter(|u| mask >> u & 1 == 1).collect())
        .collect();
    let coverable = nf * nmax >= m;
    for _ in 0..MAX_ATTEMPTS {
        let mut a = Assignment::for_scenario(s);
        for i in 0..nf {
            for &u in &subsets[rng.gen_range(0..subsets.len())] {
                a.set(i, u, 1);
            }
        }
        if !coverable || (0..m).all(|u| a.subcarriers_of(u).next().is_some()) {
            return a;
        }
    }
    // constructive fallback: shuffled round-robin cover
    let mut a = Assignment::for_scenario(s);
    let mut users: Vec<usize> = (0..m).collect();
    users.shuffle(&mut rng);
    for (k, u) in users.into_iter().enumerate() {
        a.set(k % nf, u, 1);
    }
    a
}

/// Orthogonal baseline: one user per subcarrier, unserved users first,
/// chosen by weighted gain; powers from [`grid_pa`].
pub fn oma_solve(s: &Scenario, levels: usize, budget: f64) -> Result<(Solution, bool)> {
    let (nf, m) = (s.num_subcarriers(), s.num_users());
    let mut a = Assignment::for_scenario(s);
    let mut served = vec![false; m];
    for i in 0..nf {
        let pool: Vec<usize> = if served.iter().all(|&b| b) {
            (0..m).collect()
        } else {
            (0..m).filter(|&u| !served[u]).collect()
        };
        let u = pool
            .into_iter()
            .max_by(|&x, &y| {
                (s.weights()[x] * s.gain(i, x))
                    .total_cmp(&(s.weights()[y] * s.gain(i, y)))
                    .then(y.cmp(&x))
            })
            .expect("at least one user");
        a.set(i, u, 1);
        served[u] = true;
    }
    let pa = grid_pa(s, &a, levels, budget)?;
    Ok((
        Solution {
            assignment: a,
            powers: pa.powers,
            report: pa.report,
        },
        pa.fallback,
    ))
}

/// A heuristic assignment completed by [`grid_pa`].
pub fn with_grid_pa(s: &Scenario, a: Assignment, levels: usize, budget: f64) -> Result<(Solution, bool)> {
    let pa = grid_pa(s, &a, levels, budget)?;
    Ok((
        Solution {
            assignment: a,
            powers: pa.powers,
            report: pa.report,
        },
        pa.fallback,
    ))
}
