//! Deterministic MC-NOMA downlink math: SIC ordering, rates under residual
//! interference, power-disparity checks, the weighted-sum objective and the
//! constraint flags C1 to C6.

use std::io::Write;

use crate::error::{CoreError, Result};
use crate::scenario::Scenario;

/// Absolute tolerance on power comparisons, watts.
pub const POWER_TOL: f64 = 1e-12;
/// Relative tolerance on budget, rate and objective comparisons.
pub const REL_TOL: f64 = 1e-9;

/// Binary user-by-subcarrier occupancy, row-major `[subcarrier][user]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    num_subcarriers: usize,
    num_users: usize,
    occupancy: Vec<u8>,
}

impl Assignment {
    pub fn empty(num_subcarriers: usize, num_users: usize) -> Self {
        Self {
            num_subcarriers,
            num_users,
            occupancy: vec![0; num_subcarriers * num_users],
        }
    }

    /// Entries other than 0/1 are accepted and reported by the C6 flag.
    pub fn from_vec(num_subcarriers: usize, num_users: usize, occupancy: Vec<u8>) -> Result<Self> {
        if occupancy.len() != num_subcarriers * num_users {
            return Err(CoreError::Shape(format!(
                "occupancy has {} entries, expected {num_subcarriers}x{num_users}",
                occupancy.len()
            )));
        }
        Ok(Self {
            num_subcarriers,
            num_users,
            occupancy,
        })
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::empty(s.num_subcarriers(), s.num_users())
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }
    pub fn num_users(&self) -> usize {
        self.num_users
    }
    pub fn as_slice(&self) -> &[u8] {
        &self.occupancy
    }
    #[inline]
    pub fn get(&self, subcarrier: usize, user: usize) -> u8 {
        self.occupancy[subcarrier * self.num_users + user]
    }
    #[inline]
    pub fn is_assigned(&self, subcarrier: usize, user: usize) -> bool {
        self.get(subcarrier, user) != 0
    }
    pub fn set(&mut self, subcarrier: usize, user: usize, value: u8) {
        self.occupancy[subcarrier * self.num_users + user] = value;
    }
    /// `J_i`.
    pub fn load(&self, subcarrier: usize) -> usize {
        self.occupancy[subcarrier * self.num_users..(subcarrier + 1) * self.num_users]
            .iter()
            .filter(|&&o| o != 0)
            .count()
    }
    pub fn subcarriers_of(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_subcarriers).filter(move |&i| self.is_assigned(i, user))
    }
    pub fn slot_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o != 0).count()
    }

    fn check_shape(&self, s: &Scenario) -> Result<()> {
        if self.num_subcarriers != s.num_subcarriers() || self.num_users != s.num_users() {
            return Err(CoreError::Shape(format!(
                "assignment is {}x{}, scenario is {}x{}",
                self.num_subcarriers,
                self.num_users,
                s.num_subcarriers(),
                s.num_users()
            )));
        }
        Ok(())
    }
}

/// `p = P * v / sum(v)`; all zeros when `sum(v) == 0`.
pub fn normalize_power(indicator: &[f64], total_power: f64) -> Vec<f64> {
    let sum: f64 = indicator.iter().sum();
    if sum > 0.0 {
        indicator.iter().map(|v| total_power * v / sum).collect()
    } else {
        vec![0.0; indicator.len()]
    }
}

/// Power indicator and the watts derived from it, row-major `[subcarrier][user]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    num_subcarriers: usize,
    num_users: usize,
    indicator: Vec<f64>,
    powers: Vec<f64>,
}

impl PowerAllocation {
    pub fn from_indicator(s: &Scenario, indicator: Vec<f64>) -> Result<Self> {
        let (nf, m) = (s.num_subcarriers(), s.num_users());
        if indicator.len() != nf * m {
            return Err(CoreError::Shape(format!(
                "indicator has {} entries, expected {nf}x{m}",
                indicator.len()
            )));
        }
        let powers = normalize_power(&indicator, s.total_power());
        Ok(Self {
            num_subcarriers: nf,
            num_users: m,
            indicator,
            powers,
        })
    }

    /// Raw watts, bypassing normalization; the indicator mirrors the powers.
    pub fn from_powers(s: &Scenario, powers: Vec<f64>) -> Result<Self> {
        let (nf, m) = (s.num_subcarriers(), s.num_users());
        if powers.len() != nf * m {
            return Err(CoreError::Shape(format!(
                "power matrix has {} entries, expected {nf}x{m}",
                powers.len()
            )));
        }
        Ok(Self {
            num_subcarriers: nf,
            num_users: m,
            indicator: powers.clone(),
            powers,
        })
    }

    pub fn zeros(s: &Scenario) -> Self {
        let n = s.num_subcarriers() * s.num_users();
        Self {
            num_subcarriers: s.num_subcarriers(),
            num_users: s.num_users(),
            indicator: vec![0.0; n],
            powers: vec![0.0; n],
        }
    }

    pub fn indicator(&self) -> &[f64] {
        &self.indicator
    }
    pub fn powers(&self) -> &[f64] {
        &self.powers
    }
    #[inline]
    pub fn power(&self, subcarrier: usize, user: usize) -> f64 {
        self.powers[subcarrier * self.num_users + user]
    }
    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Per-subcarrier decoding order, strongest gain first; equal gains keep the
/// lower user id first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SicOrder {
    per_subcarrier: Vec<Vec<usize>>,
}

impl SicOrder {
    pub fn users(&self, subcarrier: usize) -> &[usize] {
        &self.per_subcarrier[subcarrier]
    }
    pub fn len(&self) -> usize {
        self.per_subcarrier.len()
    }
    pub fn is_empty(&self) -> bool {
        self.per_subcarrier.is_empty()
    }
}

pub fn sic_order(s: &Scenario, a: &Assignment) -> Result<SicOrder> {
    a.check_shape(s)?;
    let per_subcarrier = (0..s.num_subcarriers())
        .map(|i| {
            let mut users: Vec<usize> = (0..s.num_users()).filter(|&m| a.is_assigned(i, m)).collect();
            sort_by_gain(s, i, &mut users);
            users
        })
        .collect();
    Ok(SicOrder { per_subcarrier })
}

/// Stable descending sort by gain on subcarrier `i`.
pub(crate) fn sort_by_gain(s: &Scenario, i: usize, users: &mut [usize]) {
    users.sort_by(|&a, &b| s.gain(i, b).total_cmp(&s.gain(i, a)).then(a.cmp(&b)));
}

/// `eps^2 * sum_{k>j} p_k g_k` on subcarrier `i`; `j` is a 0-based rank.
pub fn residual_interference(s: &Scenario, order: &SicOrder, p: &PowerAllocation, i: usize, j: usize) -> f64 {
    let users = order.users(i);
    s.sic_error_sq()
        * users[j + 1..]
            .iter()
            .map(|&k| p.power(i, k) * s.gain(i, k))
            .sum::<f64>()
}

/// Rate of the user at 0-based rank `j` on subcarrier `i`, bit/s.
pub fn rate(s: &Scenario, order: &SicOrder, p: &PowerAllocation, i: usize, j: usize) -> f64 {
    let users = order.users(i);
    let me = users[j];
    let g = s.gain(i, me);
    let stronger: f64 = users[..j].iter().map(|&k| p.power(i, k)).sum();
    let interference = stronger * g + residual_interference(s, order, p, i, j) + s.noise_var();
    s.subcarrier_bandwidth() * (1.0 + p.power(i, me) * g / interference).log2()
}

/// Power-disparity check for rank `j` on subcarrier `i`.
pub fn pdsc_satisfied(s: &Scenario, order: &SicOrder, p: &PowerAllocation, i: usize, j: usize) -> bool {
    let users = order.users(i);
    let me = users[j];
    let stronger: f64 = users[..j].iter().map(|&k| p.power(i, k)).sum();
    pdsc_holds(s.gain(i, me), p.power(i, me) - stronger, s.pdsc_threshold())
}

#[inline]
fn pdsc_holds(gain: f64, margin: f64, threshold: f64) -> bool {
    margin >= threshold / gain - POWER_TOL
}

/// Rates and the PDSC verdict for users on one subcarrier.
///
/// `users` are in decoding order and `powers[j]` belongs to `users[j]`.
/// Writes `rates[j]`; returns whether every rank satisfies PDSC.
#[inline]
pub(crate) fn subcarrier_kernel(s: &Scenario, i: usize, users: &[usize], powers: &[f64], rates: &mut [f64]) -> bool {
    let eps = s.sic_error_sq();
    let noise = s.noise_var();
    let bw = s.subcarrier_bandwidth();
    let n = users.len();
    let mut weaker = [0.0f64; 32];
    let mut tail = 0.0;
    for j in (0..n).rev() {
        weaker[j] = tail;
        tail += powers[j] * s.gain(i, users[j]);
    }
    let mut stronger = 0.0;
    let mut pdsc = true;
    for j in 0..n {
        let g = s.gain(i, users[j]);
        let interference = stronger * g + eps * weaker[j] + noise;
        rates[j] = bw * (1.0 + powers[j] * g / interference).log2();
        pdsc &= pdsc_holds(g, powers[j] - stronger, s.pdsc_threshold());
        stronger += powers[j];
    }
    pdsc
}

/// Upper bound on users per subcarrier handled by the rate kernel.
pub const MAX_MULTIPLEXED: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConstraintFlags {
    /// C1: total power within budget.
    pub power_budget: bool,
    /// C2: power disparity and sensitivity at every decoding rank.
    pub pdsc: bool,
    /// C3: nonnegative powers.
    pub nonnegative: bool,
    /// C4: at most `N_max` users per subcarrier.
    pub capacity: bool,
    /// C5: every user reaches its minimum rate.
    pub qos: bool,
    /// C6: binary occupancy.
    pub binary: bool,
}

impl ConstraintFlags {
    pub fn all(&self) -> bool {
        self.power_budget && self.pdsc && self.nonnegative && self.capacity && self.qos && self.binary
    }
    /// Suitable assignment: C4 and C6.
    pub fn assignment_suitable(&self) -> bool {
        self.capacity && self.binary
    }
    /// Suitable power allocation: C2 and C5 (C1, C3 hold by normalization).
    pub fn power_suitable(&self) -> bool {
        self.pdsc && self.qos
    }
    pub fn as_array(&self) -> [bool; 6] {
        [self.power_budget, self.pdsc, self.nonnegative, self.capacity, self.qos, self.binary]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    num_users: usize,
    /// Row-major `[subcarrier][user]`, bit/s; zero where unassigned.
    pub rates: Vec<f64>,
    pub user_totals: Vec<f64>,
    pub objective: f64,
    pub flags: ConstraintFlags,
    /// Per-subcarrier PDSC verdict.
    pub pdsc_by_subcarrier: Vec<bool>,
    pub effective_throughput: f64,
    pub qos_satisfaction: f64,
}

impl RateReport {
    pub fn rate(&self, subcarrier: usize, user: usize) -> f64 {
        self.rates[subcarrier * self.num_users + user]
    }

    pub fn total_throughput(&self) -> f64 {
        self.user_totals.iter().sum()
    }

    /// Whether every subcarrier that user `m` occupies passes PDSC.
    pub fn pdsc_ok_for(&self, a: &Assignment, user: usize) -> bool {
        a.subcarriers_of(user).all(|i| self.pdsc_by_subcarrier[i])
    }

    /// One `rate` row per (subcarrier, user) then one row per summary value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["kind", "subcarrier", "user", "value"])?;
        let nf = self.rates.len() / self.num_users.max(1);
        for i in 0..nf {
            for m in 0..self.num_users {
                out.write_record(["rate", &i.to_string(), &m.to_string(), &self.rate(i, m).to_string()])?;
            }
        }
        let f = self.flags;
        for (name, v) in [
            ("objective", self.objective),
            ("effective_throughput", self.effective_throughput),
            ("qos_satisfaction", self.qos_satisfaction),
            ("c1", f64::from(u8::from(f.power_budget))),
            ("c2", f64::from(u8::from(f.pdsc))),
            ("c3", f64::from(u8::from(f.nonnegative))),
            ("c4", f64::from(u8::from(f.capacity))),
            ("c5", f64::from(u8::from(f.qos))),
            ("c6", f64::from(u8::from(f.binary))),
        ] {
            out.write_record(["summary", "", name, &v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Full evaluation of an (assignment, powers) pair. Infeasibility is
/// reported through flags; only shape mismatches are errors.
pub fn evaluate(s: &Scenario, a: &Assignment, p: &PowerAllocation) -> Result<RateReport> {
    a.check_shape(s)?;
    if p.num_subcarriers != s.num_subcarriers() || p.num_users != s.num_users() {
        return Err(CoreError::Shape("power allocation does not match the scenario".into()));
    }
    let (nf, m) = (s.num_subcarriers(), s.num_users());
    let order = sic_order(s, a)?;
    let mut rates = vec![0.0; nf * m];
    let mut pdsc_by_subcarrier = vec![true; nf];
    let mut capacity = true;
    let mut buf_p = [0.0; MAX_MULTIPLEXED];
    let mut buf_r = [0.0; MAX_MULTIPLEXED];
    for i in 0..nf {
        let users = order.users(i);
        capacity &= users.len() <= s.max_per_subcarrier();
        if users.len() > MAX_MULTIPLEXED {
            return Err(CoreError::Shape(format!(
                "{} users on subcarrier {i} exceeds the supported {MAX_MULTIPLEXED}",
                users.len()
            )));
        }
        for (j, &u) in users.iter().enumerate() {
            buf_p[j] = p.power(i, u);
        }
        pdsc_by_subcarrier[i] = subcarrier_kernel(s, i, users, &buf_p[..users.len()], &mut buf_r[..users.len()]);
        for (j, &u) in users.iter().enumerate() {
            rates[i * m + u] = buf_r[j];
        }
    }
    let user_totals: Vec<f64> = (0..m).map(|u| (0..nf).map(|i| rates[i * m + u]).sum()).collect();
    let objective = user_totals.iter().zip(s.weights()).map(|(r, w)| w * r).sum();
    let flags = ConstraintFlags {
        power_budget: p.total() <= s.total_power() * (1.0 + REL_TOL),
        pdsc: pdsc_by_subcarrier.iter().all(|&b| b),
        nonnegative: p.powers().iter().all(|&v| v >= -POWER_TOL),
        capacity,
        qos: user_totals
            .iter()
            .zip(s.qos_min())
            .all(|(r, q)| *r >= q * (1.0 - REL_TOL)),
        binary: a.as_slice().iter().all(|&o| o <= 1),
    };
    let mut report = RateReport {
        num_users: m,
        rates,
        user_totals,
        objective,
        flags,
        pdsc_by_subcarrier,
        effective_throughput: 0.0,
        qos_satisfaction: 0.0,
    };
    report.effective_throughput = effective_throughput(&report, s);
    report.qos_satisfaction = qos_satisfaction_rate(&report, s);
    Ok(report)
}

/// Throughput of users meeting their minimum rate, with `sgn(0) = 1`.
pub fn effective_throughput(report: &RateReport, s: &Scenario) -> f64 {
    report
        .user_totals
        .iter()
        .zip(s.qos_min())
        .map(|(&r, &q)| {
            let sgn = if r - q >= 0.0 { 1.0 } else { -1.0 };
            0.5 * r * (sgn + 1.0)
        })
        .sum()
}

/// Fraction of users meeting their minimum rate.
pub fn qos_satisfaction_rate(report: &RateReport, s: &Scenario) -> f64 {
    let met = report
        .user_totals
        .iter()
        .zip(s.qos_min())
        .filter(|(r, q)| *r >= *q)
        .count();
    met as f64 / s.num_users() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioParts;

    fn scenario(nf: usize, gains: Vec<f64>, sigma2: f64, eps: f64, p_delta: f64) -> Scenario {
        let m = gains.len() / nf;
        Scenario::from_parts(ScenarioParts {
            num_subcarriers: nf,
            max_per_subcarrier: m,
            gains,
            distances: (1..=m).map(|d| d as f64).collect(),
            qos_min: vec![1.0; m],
            total_power: 4.0,
            noise_var: sigma2,
            pdsc_threshold: p_delta,
            sic_error_sq: eps,
            bandwidth: nf as f64,
        })
        .unwrap()
    }

    fn full(s: &Scenario) -> Assignment {
        Assignment::from_vec(s.num_subcarriers(), s.num_users(), vec![1; s.num_subcarriers() * s.num_users()]).unwrap()
    }

    #[test]
    fn order_strongest_first_with_id_tiebreak() {
        let s = scenario(1, vec![4.0, 1.0, 9.0], 1.0, 0.0, 0.0);
        assert_eq!(sic_order(&s, &full(&s)).unwrap().users(0), &[2, 0, 1]);
        let t = scenario(1, vec![2.0, 2.0, 1.0], 1.0, 0.0, 0.0);
        assert_eq!(sic_order(&t, &full(&t)).unwrap().users(0), &[0, 1, 2]);
        let mut single = Assignment::for_scenario(&s);
        single.set(0, 1, 1);
        assert_eq!(sic_order(&s, &single).unwrap().users(0), &[1]);
    }

    #[test]
    fn residual_interference_cases() {
        let s = scenario(1, vec![3.0, 1.0, 1.0], 1.0, 1e-4, 0.0);
        let a = full(&s);
        let o = sic_order(&s, &a).unwrap();
        let p = PowerAllocation::from_powers(&s, vec![0.5, 1.0, 1.0]).unwrap();
        assert!((residual_interference(&s, &o, &p, 0, 0) - 2e-4).abs() < 1e-18);
        assert_eq!(residual_interference(&s, &o, &p, 0, 2), 0.0);
        let perfect = scenario(1, vec![3.0, 1.0, 1.0], 1.0, 0.0, 0.0);
        assert_eq!(residual_interference(&perfect, &o, &p, 0, 0), 0.0);
    }

    #[test]
    fn rate_hand_values() {
        // single user at unit SNR: one bit per hertz of subcarrier bandwidth
        let s = scenario(1, vec![1.0], 1.0, 0.0, 0.0);
        let o = sic_order(&s, &full(&s)).unwrap();
        let p = PowerAllocation::from_powers(&s, vec![1.0]).unwrap();
        assert_eq!(rate(&s, &o, &p, 0, 0), 1.0);
        let z = PowerAllocation::from_powers(&s, vec![0.0]).unwrap();
        assert_eq!(rate(&s, &o, &z, 0, 0), 0.0);

        // two users, perfect SIC: the strongest sees only noise
        let t = scenario(1, vec![1.0, 0.5], 1.0, 0.0, 0.0);
        let o = sic_order(&t, &full(&t)).unwrap();
        let p = PowerAllocation::from_powers(&t, vec![1.0, 3.0]).unwrap();
        assert_eq!(rate(&t, &o, &p, 0, 0), 1.0);
        // weaker: 3 * 0.5 / (1 * 0.5 + 1) = 1 => one bit
        assert_eq!(rate(&t, &o, &p, 0, 1), 1.0);
    }

    #[test]
    fn pdsc_cases() {
        let s = scenario(1, vec![1.0, 0.5], 1.0, 0.0, 0.1);
        let o = sic_order(&s, &full(&s)).unwrap();
        let p = PowerAllocation::from_powers(&s, vec![0.5, 0.3]).unwrap();
        assert!(pdsc_satisfied(&s, &o, &p, 0, 0));
        assert!(!pdsc_satisfied(&s, &o, &p, 0, 1));
        // boundary: 0.5 * (0.7 - 0.5) = 0.1
        let edge = PowerAllocation::from_powers(&s, vec![0.5, 0.7]).unwrap();
        assert!(pdsc_satisfied(&s, &o, &edge, 0, 1));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_power(&[1.0, 1.0, 2.0], 4.0), vec![1.0, 1.0, 2.0]);
        assert_eq!(normalize_power(&[0.0, 0.0], 4.0), vec![0.0, 0.0]);
        let v = [0.3, 1.7, 2.2, 0.0];
        let p = normalize_power(&v, 3.5);
        assert!((p.iter().sum::<f64>() - 3.5).abs() / 3.5 < 1e-12);
    }

    #[test]
    fn evaluate_flags() {
        let s = scenario(1, vec![1.0, 0.5], 1e-3, 0.0, 0.01);
        let a = full(&s);
        let zero = PowerAllocation::zeros(&s);
        let r = evaluate(&s, &a, &zero).unwrap();
        assert_eq!(r.objective, 0.0);
        assert!(!r.flags.qos);

        // stronger user 1 W, weaker user 3 W: PDSC 1 >= 0.01, 0.5 * 2 >= 0.01
        let good = PowerAllocation::from_indicator(&s, vec![1.0, 3.0]).unwrap();
        let r = evaluate(&s, &a, &good).unwrap();
        assert!(r.flags.all(), "{:?}", r.flags);

        let doubled = PowerAllocation::from_powers(&s, vec![2.0, 6.0]).unwrap();
        assert!(!evaluate(&s, &a, &doubled).unwrap().flags.power_budget);

        let over = Assignment::from_vec(1, 2, vec![2, 1]).unwrap();
        assert!(!evaluate(&s, &over, &good).unwrap().flags.binary);
    }

    #[test]
    fn qos_metrics() {
        let s = scenario(1, vec![1.0, 0.5], 1.0, 0.0, 0.0);
        let mut r = evaluate(&s, &full(&s), &PowerAllocation::zeros(&s)).unwrap();
        r.user_totals = vec![1.0, 0.5];
        assert_eq!(effective_throughput(&r, &s), 1.0);
        assert_eq!(qos_satisfaction_rate(&r, &s), 0.5);
        r.user_totals = vec![2.0, 3.0];
        assert_eq!(effective_throughput(&r, &s), 5.0);
        assert_eq!(qos_satisfaction_rate(&r, &s), 1.0);
        r.user_totals = vec![0.0, 0.0];
        assert_eq!(effective_throughput(&r, &s), 0.0);
    }

    #[test]
    fn csv_has_rate_and_summary_rows() {
        let s = scenario(2, vec![1.0, 0.5, 0.7, 0.2], 1.0, 0.0, 0.0);
        let p = PowerAllocation::from_indicator(&s, vec![1.0; 4]).unwrap();
        let r = evaluate(&s, &full(&s), &p).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 + 9);
        assert!(text.contains("summary,,objective,"));
    }
}
