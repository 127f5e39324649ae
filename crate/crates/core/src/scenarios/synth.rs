//! Seeded synthetic wind-error history with an explicit conditional law.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{Duration, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    parse_timestamp, EnvironmentVector, ScenarioRecord, ScenarioStore, StoreError,
    TIMESTAMP_FORMAT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRegion {
    pub name: String,
    pub capacity: f64,
}

/// Conditional distribution of regional errors given the environment.
///
/// With `d = level - level_center`:
/// mean  = skew * (level_bias * d + temperature_bias * (T - 75) / 10)
/// scale = base_sigma * exp(skew * (level_spread * d + ramp_spread * tanh(r / ramp_reference)
///         + humidity_spread * (H - 60) / 20))
/// Regions share a common shock with correlation `region_correlation`. Shocks are split-normal
/// with tilt `a = asymmetry * tanh(skew * (level_center - level) / asymmetry_scale)`: the upper
/// half is stretched by `1 + a`, the lower half by `1 - a`. Low output leans to upside surprises,
/// high output to shortfalls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthLaw {
    pub regions: Vec<SynthRegion>,
    pub skew: f64,
    pub level_center: f64,
    pub level_bias: f64,
    pub temperature_bias: f64,
    pub base_sigma: f64,
    pub level_spread: f64,
    pub ramp_spread: f64,
    pub ramp_reference: f64,
    pub humidity_spread: f64,
    pub region_correlation: f64,
    #[serde(default)]
    pub asymmetry: f64,
    #[serde(default = "default_asymmetry_scale")]
    pub asymmetry_scale: f64,
}

fn default_asymmetry_scale() -> f64 {
    0.1
}

impl Default for SynthLaw {
    fn default() -> Self {
        Self {
            regions: vec![
                SynthRegion {
                    name: "west".into(),
                    capacity: 1200.0,
                },
                SynthRegion {
                    name: "south".into(),
                    capacity: 1200.0,
                },
            ],
            skew: 1.0,
            level_center: 0.25,
            level_bias: -0.02,
            temperature_bias: -0.002,
            base_sigma: 0.008,
            level_spread: -1.5,
            ramp_spread: 0.3,
            ramp_reference: 0.01,
            humidity_spread: 0.05,
            region_correlation: 0.6,
            asymmetry: 0.8,
            asymmetry_scale: 0.1,
        }
    }
}

impl SynthLaw {
    pub fn mean(&self, env: &EnvironmentVector) -> f64 {
        let d = env.forecast_level - self.level_center;
        self.skew * (self.level_bias * d + self.temperature_bias * (env.temperature - 75.0) / 10.0)
    }

    pub fn scale(&self, env: &EnvironmentVector) -> f64 {
        let d = env.forecast_level - self.level_center;
        let exponent = self.level_spread * d
            + self.ramp_spread * (env.ramp_rate / self.ramp_reference).tanh()
            + self.humidity_spread * (env.humidity - 60.0) / 20.0;
        self.base_sigma * (self.skew * exponent).exp()
    }

    pub fn tilt(&self, env: &EnvironmentVector) -> f64 {
        let d = self.level_center - env.forecast_level;
        self.asymmetry * (self.skew * d / self.asymmetry_scale).tanh()
    }

    /// One draw of per-region errors (per-unit), clipped to [-1, 1].
    pub fn sample<R: Rng + ?Sized>(&self, env: &EnvironmentVector, rng: &mut R) -> Vec<f64> {
        let mu = self.mean(env);
        let sigma = self.scale(env);
        let tilt = self.tilt(env);
        let shared: f64 = rng.sample(StandardNormal);
        let a = self.region_correlation.clamp(0.0, 1.0).sqrt();
        let b = (1.0 - self.region_correlation.clamp(0.0, 1.0)).sqrt();
        self.regions
            .iter()
            .map(|_| {
                let own: f64 = rng.sample(StandardNormal);
                let z = a * shared + b * own;
                let stretch = if z > 0.0 { 1.0 + tilt } else { 1.0 - tilt };
                (mu + sigma * stretch * z).clamp(-1.0, 1.0)
            })
            .collect()
    }

    pub fn region_names(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.name.clone()).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.regions.iter().map(|r| r.capacity).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Value {
            row: 0,
            message: format!("bad law file: {e}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub records: usize,
    pub start: String,
    pub step_minutes: i64,
    pub law: SynthLaw,
    pub level_mean: f64,
    pub level_reversion: f64,
    pub level_volatility: f64,
    pub level_min: f64,
    pub level_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            records: 25_920,
            start: "2022-01-01T00:00:00".into(),
            step_minutes: 5,
            law: SynthLaw::default(),
            level_mean: 0.25,
            level_reversion: 0.004,
            level_volatility: 0.012,
            level_min: 0.02,
            level_max: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn with_skew(mut self, skew: f64) -> Self {
        self.law.skew = skew;
        self
    }

    pub fn with_records(mut self, records: usize) -> Self {
        self.records = records;
        self
    }
}

/// Environment path plus law draws, deterministic per seed.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<ScenarioStore, StoreError> {
    let start = parse_timestamp(&config.start).ok_or_else(|| StoreError::Value {
        row: 0,
        message: format!("bad start timestamp '{}'", config.start),
    })?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut err_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let step = Duration::minutes(config.step_minutes);

    let mut level = config.level_mean;
    let mut records = Vec::with_capacity(config.records);
    for k in 0..config.records {
        let timestamp = start + step * k as i32;
        let previous = level;
        if k > 0 {
            let z: f64 = env_rng.sample(StandardNormal);
            level += config.level_reversion * (config.level_mean - level)
                + config.level_volatility * z;
            level = level.clamp(config.level_min, config.level_max);
        }
        let ramp = level - previous;
        let hour = timestamp.hour() as f64 + timestamp.minute() as f64 / 60.0;
        let daily = (2.0 * std::f64::consts::PI * (hour - 9.0) / 24.0).sin();
        let z_t: f64 = env_rng.sample(StandardNormal);
        let z_h: f64 = env_rng.sample(StandardNormal);
        let temperature = 75.0 + 10.0 * daily - 8.0 * (level - config.level_mean) + 1.5 * z_t;
        let humidity =
            (60.0 - 12.0 * daily + 10.0 * (level - config.level_mean) + 4.0 * z_h).clamp(5.0, 100.0);
        let env = EnvironmentVector {
            forecast_level: level,
            ramp_rate: ramp,
            temperature,
            humidity,
        };
        let error = config.law.sample(&env, &mut err_rng);
        records.push(ScenarioRecord {
            timestamp,
            error,
            env,
        });
    }
    Ok(ScenarioStore::from_records(config.law.region_names(), records)?
        .with_region_weights(config.law.capacities()))
}

/// `count` independent law draws at one fixed environment, stamped at `step_minutes` spacing.
pub fn law_store(
    law: &SynthLaw,
    env: &EnvironmentVector,
    count: usize,
    seed: u64,
) -> Result<ScenarioStore, StoreError> {
    let start = parse_timestamp("2000-01-01T00:00:00").expect("fixed timestamp parses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|k| ScenarioRecord {
            timestamp: start + Duration::minutes(5 * k as i64),
            error: law.sample(env, &mut rng),
            env: *env,
        })
        .collect();
    Ok(ScenarioStore::from_records(law.region_names(), records)?.with_region_weights(law.capacities()))
}

pub fn write_csv(path: impl AsRef<Path>, store: &ScenarioStore) -> Result<(), StoreError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "timestamp")?;
    for r in store.regions() {
        write!(out, ",err_{r}")?;
    }
    writeln!(out, ",forecast_level,ramp_rate,temperature,humidity")?;
    for rec in store.records() {
        write!(out, "{}", rec.timestamp.format(TIMESTAMP_FORMAT))?;
        for e in &rec.error {
            write!(out, ",{e:.8}")?;
        }
        writeln!(
            out,
            ",{:.8},{:.8},{:.4},{:.4}",
            rec.env.forecast_level, rec.env.ramp_rate, rec.env.temperature, rec.env.humidity
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `<file>.law.json` next to a generated CSV.
pub fn law_sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".law.json");
    PathBuf::from(name)
}

/// Writes the CSV and its law sidecar; returns the in-memory store.
pub fn synth_generate(
    config: &SynthConfig,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<ScenarioStore, StoreError> {
    let store = generate(config, seed)?;
    write_csv(path.as_ref(), &store)?;
    let law = serde_json::to_string_pretty(&config.law).expect("law serializes");
    std::fs::write(law_sidecar_path(path.as_ref()), law)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDateTime;
    use crate::scenarios::{fit_correlations, ingest_csv, TimeWindow};

    fn everything() -> TimeWindow {
        TimeWindow::new(NaiveDateTime::MIN, NaiveDateTime::MAX)
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::default().with_records(2000);
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        synth_generate(&cfg, 11, &a).unwrap();
        synth_generate(&cfg, 11, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let c = dir.path().join("c.csv");
        synth_generate(&cfg, 12, &c).unwrap();
        assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

        let law = SynthLaw::load(law_sidecar_path(&a)).unwrap();
        assert_eq!(law, cfg.law);
    }

    #[test]
    fn round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let cfg = SynthConfig::default().with_records(51_840);
        let store = synth_generate(&cfg, 5, &path).unwrap();
        let back = ingest_csv(&path, &cfg.law.region_names()).unwrap();
        assert_eq!(back.len(), 51_840);
        assert_eq!(back.records()[100].timestamp, store.records()[100].timestamp);
        assert!((back.records()[7].error[1] - store.records()[7].error[1]).abs() < 1e-8);
    }

    #[test]
    fn skew_drives_level_correlation() {
        let cfg = SynthConfig::default();
        let mut above = 0;
        for seed in 0..100 {
            let store = generate(&cfg, seed).unwrap();
            let p = fit_correlations(&store, everything()).unwrap();
            if p.rho[0].abs() > 0.3 {
                above += 1;
            }
        }
        assert!(above >= 99, "{above}/100 seeds with |rho_1| > 0.3");

        let flat = SynthConfig::default().with_skew(0.0);
        let mut small = 0;
        for seed in 0..100 {
            let store = generate(&flat, seed).unwrap();
            let p = fit_correlations(&store, everything()).unwrap();
            if p.rho.iter().all(|r| r.abs() < 0.05) {
                small += 1;
            }
        }
        assert!(small >= 99, "{small}/100 seeds with all |rho| < 0.05");
    }
}
