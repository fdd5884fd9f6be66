//! Immutable MC-NOMA downlink problem instances.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::config::KvConfig;
use crate::error::{CoreError, Result};

/// `10^(x/10) * 1e-3`.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

/// Generation parameters. Power-like fields are in dBm and converted once.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub max_per_subcarrier: usize,
    pub total_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub pdsc_threshold_dbm: f64,
    pub sic_error_sq: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub pathloss_exponent: f64,
    pub pathloss_intercept_db: f64,
    pub qos_mean: f64,
    pub qos_std: f64,
    /// Lower truncation of the sampled minimum rates, bit/s.
    pub qos_floor: f64,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_users: 4,
            num_subcarriers: 3,
            max_per_subcarrier: 2,
            total_power_dbm: 30.0,
            bandwidth_hz: 5e6,
            noise_psd_dbm_per_hz: -173.0,
            pdsc_threshold_dbm: -110.0,
            sic_error_sq: 1e-4,
            radius_min: 30.0,
            radius_max: 300.0,
            pathloss_exponent: 3.6,
            pathloss_intercept_db: 38.46,
            qos_mean: 80e3,
            qos_std: 10e3,
            qos_floor: 1e3,
            rng_seed: 0,
        }
    }
}

pub const SCENARIO_KEYS: &[&str] = &[
    "num_users",
    "num_subcarriers",
    "max_per_subcarrier",
    "total_power_dbm",
    "bandwidth_hz",
    "noise_psd_dbm_per_hz",
    "pdsc_threshold_dbm",
    "sic_error_sq",
    "radius_min",
    "radius_max",
    "pathloss_exponent",
    "pathloss_intercept_db",
    "qos_mean",
    "qos_std",
    "qos_floor",
    "rng_seed",
];

impl ScenarioConfig {
    /// Overlays any scenario keys present in `kv` on the defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            num_users: kv.get_or("num_users", d.num_users)?,
            num_subcarriers: kv.get_or("num_subcarriers", d.num_subcarriers)?,
            max_per_subcarrier: kv.get_or("max_per_subcarrier", d.max_per_subcarrier)?,
            total_power_dbm: kv.get_or("total_power_dbm", d.total_power_dbm)?,
            bandwidth_hz: kv.get_or("bandwidth_hz", d.bandwidth_hz)?,
            noise_psd_dbm_per_hz: kv.get_or("noise_psd_dbm_per_hz", d.noise_psd_dbm_per_hz)?,
            pdsc_threshold_dbm: kv.get_or("pdsc_threshold_dbm", d.pdsc_threshold_dbm)?,
            sic_error_sq: kv.get_or("sic_error_sq", d.sic_error_sq)?,
            radius_min: kv.get_or("radius_min", d.radius_min)?,
            radius_max: kv.get_or("radius_max", d.radius_max)?,
            pathloss_exponent: kv.get_or("pathloss_exponent", d.pathloss_exponent)?,
            pathloss_intercept_db: kv.get_or("pathloss_intercept_db", d.pathloss_intercept_db)?,
            qos_mean: kv.get_or("qos_mean", d.qos_mean)?,
            qos_std: kv.get_or("qos_std", d.qos_std)?,
            qos_floor: kv.get_or("qos_floor", d.qos_floor)?,
            rng_seed: kv.get_or("rng_seed", d.rng_seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidScenario(m));
        if self.num_users == 0 || self.num_subcarriers == 0 {
            return bad("need at least one user and one subcarrier".into());
        }
        if self.max_per_subcarrier == 0 || self.max_per_subcarrier > self.num_users {
            return bad(format!(
                "max_per_subcarrier must lie in [1, {}], got {}",
                self.num_users, self.max_per_subcarrier
            ));
        }
        for (name, v) in [
            ("total_power_dbm", self.total_power_dbm),
            ("noise_psd_dbm_per_hz", self.noise_psd_dbm_per_hz),
            ("pdsc_threshold_dbm", self.pdsc_threshold_dbm),
            ("pathloss_intercept_db", self.pathloss_intercept_db),
            ("pathloss_exponent", self.pathloss_exponent),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(self.sic_error_sq >= 0.0 && self.sic_error_sq <= 1.0) {
            return bad(format!("sic_error_sq must lie in [0, 1], got {}", self.sic_error_sq));
        }
        if !(self.radius_min > 0.0) {
            return bad(format!("radius_min must be positive, got {}", self.radius_min));
        }
        if !(self.radius_min < self.radius_max) || !self.radius_max.is_finite() {
            return bad("radius_min must be below a finite radius_max".into());
        }
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return bad("bandwidth_hz must be positive".into());
        }
        if !(self.qos_std >= 0.0) || !self.qos_mean.is_finite() {
            return bad(format!("qos_std must be nonnegative, got {}", self.qos_std));
        }
        if !(self.qos_floor > 0.0) {
            return bad("qos_floor must be positive".into());
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }
}

/// Everything needed to build a [`Scenario`] by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParts {
    pub num_subcarriers: usize,
    pub max_per_subcarrier: usize,
    /// Linear power gains, row-major `[subcarrier][user]`.
    pub gains: Vec<f64>,
    pub distances: Vec<f64>,
    pub qos_min: Vec<f64>,
    pub total_power: f64,
    pub noise_var: f64,
    pub pdsc_threshold: f64,
    pub sic_error_sq: f64,
    pub bandwidth: f64,
}

/// A problem instance; all powers in watts, rates in bit/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    num_users: usize,
    num_subcarriers: usize,
    max_per_subcarrier: usize,
    gains: Vec<f64>,
    distances: Vec<f64>,
    weights: Vec<f64>,
    qos_min: Vec<f64>,
    total_power: f64,
    noise_var: f64,
    pdsc_threshold: f64,
    sic_error_sq: f64,
    bandwidth: f64,
}

impl Scenario {
    /// Validates the parts; weights are derived as `d / max d`.
    pub fn from_parts(p: ScenarioParts) -> Result<Self> {
        let bad = |m: String| Err(CoreError::InvalidScenario(m));
        let m = p.distances.len();
        if m == 0 || p.num_subcarriers == 0 {
            return bad("need at least one user and one subcarrier".into());
        }
        if p.gains.len() != m * p.num_subcarriers || p.qos_min.len() != m {
            return bad("gain or QoS vector length does not match the user count".into());
        }
        if p.max_per_subcarrier == 0 || p.max_per_subcarrier > m {
            return bad(format!("max_per_subcarrier must lie in [1, {m}]"));
        }
        if p.gains.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return bad("gains must be positive and finite".into());
        }
        if p.distances.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return bad("distances must be positive and finite".into());
        }
        if p.qos_min.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad("minimum rates must be positive".into());
        }
        for (name, v) in [
            ("total_power", p.total_power),
            ("noise_var", p.noise_var),
            ("bandwidth", p.bandwidth),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if !(p.pdsc_threshold >= 0.0) || !p.pdsc_threshold.is_finite() {
            return bad("pdsc_threshold must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&p.sic_error_sq) {
            return bad("sic_error_sq must lie in [0, 1]".into());
        }
        let dmax = p.distances.iter().copied().fold(f64::MIN, f64::max);
        let weights = p.distances.iter().map(|d| d / dmax).collect();
        Ok(Self {
            num_users: m,
            num_subcarriers: p.num_subcarriers,
            max_per_subcarrier: p.max_per_subcarrier,
            gains: p.gains,
            distances: p.distances,
            weights,
            qos_min: p.qos_min,
            total_power: p.total_power,
            noise_var: p.noise_var,
            pdsc_threshold: p.pdsc_threshold,
            sic_error_sq: p.sic_error_sq,
            bandwidth: p.bandwidth,
        })
    }

    pub fn to_parts(&self) -> ScenarioParts {
        ScenarioParts {
            num_subcarriers: self.num_subcarriers,
            max_per_subcarrier: self.max_per_subcarrier,
            gains: self.gains.clone(),
            distances: self.distances.clone(),
            qos_min: self.qos_min.clone(),
            total_power: self.total_power,
            noise_var: self.noise_var,
            pdsc_threshold: self.pdsc_threshold,
            sic_error_sq: self.sic_error_sq,
            bandwidth: self.bandwidth,
        }
    }

    /// Copy with some parts replaced; revalidated.
    pub fn modified(&self, edit: impl FnOnce(&mut ScenarioParts)) -> Result<Self> {
        let mut parts = self.to_parts();
        edit(&mut parts);
        Self::from_parts(parts)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }
    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }
    pub fn max_per_subcarrier(&self) -> usize {
        self.max_per_subcarrier
    }
    /// Row-major `[subcarrier][user]`.
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }
    #[inline]
    pub fn gain(&self, subcarrier: usize, user: usize) -> f64 {
        self.gains[subcarrier * self.num_users + user]
    }
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn qos_min(&self) -> &[f64] {
        &self.qos_min
    }
    pub fn total_power(&self) -> f64 {
        self.total_power
    }
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
    pub fn pdsc_threshold(&self) -> f64 {
        self.pdsc_threshold
    }
    pub fn sic_error_sq(&self) -> f64 {
        self.sic_error_sq
    }
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
    /// `W / N_F`.
    pub fn subcarrier_bandwidth(&self) -> f64 {
        self.bandwidth / self.num_subcarriers as f64
    }

    /// Writes a CSV block file that [`Scenario::load`] reads back bit-for-bit.
    pub fn dump<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        out.write_record(["mcnoma-scenario", "1"])?;
        out.write_record([
            "params".to_string(),
            self.num_users.to_string(),
            self.num_subcarriers.to_string(),
            self.max_per_subcarrier.to_string(),
            self.total_power.to_string(),
            self.noise_var.to_string(),
            self.pdsc_threshold.to_string(),
            self.sic_error_sq.to_string(),
            self.bandwidth.to_string(),
        ])?;
        for i in 0..self.num_subcarriers {
            let mut rec = vec![format!("gains{i}")];
            rec.extend((0..self.num_users).map(|m| self.gain(i, m).to_string()));
            out.write_record(&rec)?;
        }
        for (name, v) in [("distance", &self.distances), ("qos_min", &self.qos_min)] {
            let mut rec = vec![name.to_string()];
            rec.extend(v.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let fmt = |m: &str| CoreError::ScenarioFormat(m.to_string());
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
        if rows.first().map(|r| r.get(0)) != Some(Some("mcnoma-scenario")) {
            return Err(fmt("missing header record"));
        }
        let params = rows.get(1).ok_or_else(|| fmt("missing params record"))?;
        if params.len() != 9 || &params[0] != "params" {
            return Err(fmt("params record must have 8 fields"));
        }
        let int = |k: usize| params[k].parse::<usize>().map_err(|_| fmt("bad integer in params"));
        let float = |k: usize| params[k].parse::<f64>().map_err(|_| fmt("bad number in params"));
        let (m, nf, nmax) = (int(1)?, int(2)?, int(3)?);
        let floats = |rec: &csv::StringRecord, label: &str| -> Result<Vec<f64>> {
            if rec.get(0) != Some(label) || rec.len() != m + 1 {
                return Err(fmt(&format!("expected `{label}` record with {m} values")));
            }
            rec.iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| fmt("bad number")))
                .collect()
        };
        if rows.len() != 2 + nf + 2 {
            return Err(fmt("unexpected record count"));
        }
        let mut gains = Vec::with_capacity(nf * m);
        for i in 0..nf {
            gains.extend(floats(&rows[2 + i], &format!("gains{i}"))?);
        }
        Self::from_parts(ScenarioParts {
            num_subcarriers: nf,
            max_per_subcarrier: nmax,
            gains,
            distances: floats(&rows[2 + nf], "distance")?,
            qos_min: floats(&rows[3 + nf], "qos_min")?,
            total_power: float(4)?,
            noise_var: float(5)?,
            pdsc_threshold: float(6)?,
            sic_error_sq: float(7)?,
            bandwidth: float(8)?,
        })
    }
}

/// Samples an instance: users uniform in the annulus, Rayleigh block fading
/// over log-distance path loss, truncated-normal minimum rates.
pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let m = config.num_users;
    let nf = config.num_subcarriers;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let (r2min, r2max) = (config.radius_min.powi(2), config.radius_max.powi(2));
    let distances: Vec<f64> = (0..m)
        .map(|_| (rng.gen::<f64>() * (r2max - r2min) + r2min).sqrt())
        .collect();

    let mut gains = Vec::with_capacity(nf * m);
    for _ in 0..nf {
        for &d in &distances {
            let pl_db = config.pathloss_intercept_db + 10.0 * config.pathloss_exponent * d.log10();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            // CN(0, 1): each component has variance 1/2
            let fading = 0.5 * (re * re + im * im);
            gains.push(fading.max(f64::MIN_POSITIVE) / 10f64.powf(pl_db / 10.0));
        }
    }

    let qos = Normal::new(config.qos_mean, config.qos_std)
        .map_err(|e| CoreError::InvalidScenario(e.to_string()))?;
    let qos_min = (0..m)
        .map(|_| qos.sample(&mut rng).max(config.qos_floor))
        .collect();

    Scenario::from_parts(ScenarioParts {
        num_subcarriers: nf,
        max_per_subcarrier: config.max_per_subcarrier,
        gains,
        distances,
        qos_min,
        total_power: dbm_to_watts(config.total_power_dbm),
        noise_var: config.bandwidth_hz * dbm_to_watts(config.noise_psd_dbm_per_hz) / nf as f64,
        pdsc_threshold: dbm_to_watts(config.pdsc_threshold_dbm),
        sic_error_sq: config.sic_error_sq,
        bandwidth: config.bandwidth_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn dbm_conversion_points() {
        assert!(rel(dbm_to_watts(0.0), 1e-3) < 1e-15);
        assert!(rel(dbm_to_watts(30.0), 1.0) < 1e-15);
        // 10^4.2 * 1e-3
        assert!((dbm_to_watts(42.0) - 15.848_931_924_611_135).abs() < 1e-12);
        assert!((watts_to_dbm(dbm_to_watts(-17.5)) + 17.5).abs() < 1e-12);
    }

    #[test]
    fn noise_variance_of_wideband_setup() {
        let cfg = ScenarioConfig {
            num_users: 60,
            num_subcarriers: 64,
            max_per_subcarrier: 4,
            ..ScenarioConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let expected = 5e6 * 10f64.powf(-17.3) * 1e-3 / 64.0;
        assert!(rel(s.noise_var(), expected) < 1e-12);
    }

    #[test]
    fn weights_are_distance_ratios() {
        let s = Scenario::from_parts(ScenarioParts {
            num_subcarriers: 1,
            max_per_subcarrier: 1,
            gains: vec![1.0, 1.0],
            distances: vec![100.0, 200.0],
            qos_min: vec![1.0, 1.0],
            total_power: 1.0,
            noise_var: 1.0,
            pdsc_threshold: 0.0,
            sic_error_sq: 0.0,
            bandwidth: 1.0,
        })
        .unwrap();
        assert_eq!(s.weights(), &[0.5, 1.0]);
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = ScenarioConfig::default().with_seed(17);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert_ne!(generate(&cfg).unwrap(), generate(&cfg.with_seed(18)).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ScenarioConfig::default();
        for cfg in [
            ScenarioConfig { radius_min: 0.0, ..base.clone() },
            ScenarioConfig { qos_std: -1.0, ..base.clone() },
            ScenarioConfig { max_per_subcarrier: 5, ..base.clone() },
            ScenarioConfig { sic_error_sq: -0.1, ..base.clone() },
            ScenarioConfig { total_power_dbm: f64::NAN, ..base.clone() },
            ScenarioConfig { radius_max: 10.0, ..base.clone() },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn dump_load_round_trip() {
        let s = generate(&ScenarioConfig::default().with_seed(5)).unwrap();
        let mut buf = Vec::new();
        s.dump(&mut buf).unwrap();
        assert_eq!(Scenario::load(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn kv_overlay() {
        let kv = KvConfig::parse("num_users = 3\nsic_error_sq = 0.01\n").unwrap();
        let cfg = ScenarioConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.num_users, 3);
        assert_eq!(cfg.sic_error_sq, 0.01);
        assert_eq!(cfg.num_subcarriers, ScenarioConfig::default().num_subcarriers);
    }
}
