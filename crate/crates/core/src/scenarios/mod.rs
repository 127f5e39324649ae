//! Historical forecast-error records, covariate correlation profiles and
//! environment-filtered sampling.

mod synth;

pub use synth::{
    generate, law_sidecar_path, law_store, synth_generate, write_csv, SynthConfig, SynthLaw, SynthRegion,
};

use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Minimum window size for fitting correlations.
pub const MIN_FIT_RECORDS: usize = 30;

pub const PARAMETER_NAMES: [&str; 4] = [
    "Wind Power Forecasting Value",
    "(Absolute) Wind Power Changing Rate",
    "Temperature",
    "Relative Humidity",
];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing column '{0}'")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Value { row: usize, message: String },
    #[error("timestamps must be strictly increasing (row {row}: {timestamp})")]
    NonMonotone { row: usize, timestamp: String },
    #[error("window holds {found} records, at least {needed} required")]
    WindowTooSmall { found: usize, needed: usize },
    #[error(
        "requested {requested} scenarios but only {remaining} unsampled records remain; \
         reset the risk budget (epsilon, beta)"
    )]
    Exhausted { requested: usize, remaining: usize },
}

/// Raw covariates of one forecasting instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentVector {
    pub forecast_level: f64,
    pub ramp_rate: f64,
    pub temperature: f64,
    pub humidity: f64,
}

impl EnvironmentVector {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.forecast_level,
            self.ramp_rate,
            self.temperature,
            self.humidity,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub timestamp: NaiveDateTime,
    /// Per-region error, per-unit of regional capacity.
    pub error: Vec<f64>,
    pub env: EnvironmentVector,
}

/// Half-open time range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
}

impl TimeWindow {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Self {
        Self { start, end }
    }

    /// The `days` preceding `end`.
    pub fn lookback(end: NaiveDateTime, days: i64) -> Self {
        Self {
            start: end - Duration::days(days),
            end,
        }
    }

    pub fn contains(&self, t: NaiveDateTime) -> bool {
        t >= self.start && t < self.end
    }
}

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let t = text.trim().trim_end_matches('Z');
    NaiveDateTime::parse_from_str(t, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M"))
        .ok()
}

#[derive(Debug, Clone)]
pub struct ScenarioStore {
    regions: Vec<String>,
    weights: Vec<f64>,
    records: Vec<ScenarioRecord>,
}

impl ScenarioStore {
    /// Builds a store from records already in memory; sorts them by timestamp.
    pub fn from_records(
        regions: Vec<String>,
        mut records: Vec<ScenarioRecord>,
    ) -> Result<Self, StoreError> {
        records.sort_by_key(|r| r.timestamp);
        for (row, pair) in records.windows(2).enumerate() {
            if pair[0].timestamp == pair[1].timestamp {
                return Err(StoreError::NonMonotone {
                    row: row + 1,
                    timestamp: pair[1].timestamp.format(TIMESTAMP_FORMAT).to_string(),
                });
            }
        }
        for (row, r) in records.iter().enumerate() {
            if r.error.len() != regions.len() {
                return Err(StoreError::Value {
                    row,
                    message: format!("expected {} region errors", regions.len()),
                });
            }
        }
        let weights = vec![1.0; regions.len()];
        Ok(Self {
            regions,
            weights,
            records,
        })
    }

    /// Weights used to aggregate regional errors into one signal (e.g. capacities).
    pub fn with_region_weights(mut self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.regions.len());
        assert!(weights.iter().sum::<f64>() > 0.0);
        self.weights = weights;
        self
    }

    pub fn regions(&self) -> &[String] {
        &self.regions
    }

    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r == name)
    }

    pub fn records(&self) -> &[ScenarioRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn aggregate_error(&self, record: &ScenarioRecord) -> f64 {
        let total: f64 = self.weights.iter().sum();
        record
            .error
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| e * w)
            .sum::<f64>()
            / total
    }

    /// Index range of records inside the window.
    pub fn window_range(&self, window: TimeWindow) -> std::ops::Range<usize> {
        let lo = self.records.partition_point(|r| r.timestamp < window.start);
        let hi = self.records.partition_point(|r| r.timestamp < window.end);
        lo..hi.max(lo)
    }

    pub fn position(&self, t: NaiveDateTime) -> Option<usize> {
        self.records.binary_search_by_key(&t, |r| r.timestamp).ok()
    }

    /// Records in `window` ordered by environment distance to `target`,
    /// earlier timestamps first on ties.
    pub fn rank(
        &self,
        profile: &CorrelationProfile,
        target: &EnvironmentVector,
        window: TimeWindow,
    ) -> SampleCursor {
        let v_target = indicator_vector(profile, target);
        let mut scored: Vec<(f64, usize)> = self
            .window_range(window)
            .map(|k| {
                let v = indicator_vector(profile, &self.records[k].env);
                let d = v
                    .iter()
                    .zip(&v_target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                (d, k)
            })
            .collect();
        // Records are time-sorted, so index order is timestamp order.
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        SampleCursor {
            order: scored.iter().map(|&(_, k)| k).collect(),
            distances: Some(scored.iter().map(|&(d, _)| d).collect()),
            next: 0,
        }
    }

    /// Uniformly shuffled records of `window`, deterministic per seed.
    pub fn shuffled(&self, window: TimeWindow, seed: u64) -> SampleCursor {
        let mut order: Vec<usize> = self.window_range(window).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        SampleCursor {
            order,
            distances: None,
            next: 0,
        }
    }
}

/// An ordering over store records consumed without replacement.
#[derive(Debug, Clone)]
pub struct SampleCursor {
    order: Vec<usize>,
    distances: Option<Vec<f64>>,
    next: usize,
}

impl SampleCursor {
    pub fn remaining(&self) -> usize {
        self.order.len() - self.next
    }

    pub fn consumed(&self) -> usize {
        self.next
    }

    pub fn capacity(&self) -> usize {
        self.order.len()
    }

    /// Next `k` record indices.
    pub fn take(&mut self, k: usize) -> Result<&[usize], StoreError> {
        if k > self.remaining() {
            return Err(StoreError::Exhausted {
                requested: k,
                remaining: self.remaining(),
            });
        }
        let out = &self.order[self.next..self.next + k];
        self.next += k;
        Ok(out)
    }

    /// Distances aligned with the consumption order, when ranked.
    pub fn distances(&self) -> Option<&[f64]> {
        self.distances.as_deref()
    }
}

/// The `k` records of the store nearest to `target` in environment distance.
pub fn rank_and_sample<'a>(
    store: &'a ScenarioStore,
    profile: &CorrelationProfile,
    target: &EnvironmentVector,
    k: usize,
) -> Result<Vec<&'a ScenarioRecord>, StoreError> {
    let all = TimeWindow::new(NaiveDateTime::MIN, NaiveDateTime::MAX);
    let mut cursor = store.rank(profile, target, all);
    Ok(cursor.take(k)?.iter().map(|&i| &store.records[i]).collect())
}

/// `k` records drawn uniformly without replacement from `window`.
pub fn random_sample(
    store: &ScenarioStore,
    window: TimeWindow,
    k: usize,
    seed: u64,
) -> Result<Vec<&ScenarioRecord>, StoreError> {
    let mut cursor = store.shuffled(window, seed);
    Ok(cursor.take(k)?.iter().map(|&i| &store.records[i]).collect())
}

pub fn ingest_csv(path: impl AsRef<Path>, regions: &[String]) -> Result<ScenarioStore, StoreError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize, StoreError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StoreError::MissingColumn(name.to_string()))
    };
    let ts_col = column("timestamp")?;
    let err_cols: Vec<usize> = regions
        .iter()
        .map(|r| column(&format!("err_{r}")))
        .collect::<Result<_, _>>()?;
    let env_cols = [
        column("forecast_level")?,
        column("ramp_rate")?,
        column("temperature")?,
        column("humidity")?,
    ];

    let mut records = Vec::new();
    let mut last: Option<NaiveDateTime> = None;
    for (row, result) in reader.records().enumerate() {
        let rec = result?;
        let row_no = row + 1;
        let field = |col: usize| -> Result<f64, StoreError> {
            let raw = rec.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| StoreError::Value {
                row: row_no,
                message: format!("column '{}' is not a number: '{raw}'", &headers[col]),
            })?;
            if !v.is_finite() {
                return Err(StoreError::Value {
                    row: row_no,
                    message: format!("column '{}' is not finite", &headers[col]),
                });
            }
            Ok(v)
        };
        let ts_text = rec.get(ts_col).unwrap_or("");
        let timestamp = parse_timestamp(ts_text).ok_or_else(|| StoreError::Value {
            row: row_no,
            message: format!("bad timestamp '{ts_text}'"),
        })?;
        if let Some(prev) = last {
            if timestamp <= prev {
                return Err(StoreError::NonMonotone {
                    row: row_no,
                    timestamp: ts_text.to_string(),
                });
            }
        }
        last = Some(timestamp);

        let error: Vec<f64> = err_cols.iter().map(|&c| field(c)).collect::<Result<_, _>>()?;
        if let Some(e) = error.iter().find(|e| e.abs() > 1.0) {
            return Err(StoreError::Value {
                row: row_no,
                message: format!("error {e} outside [-1, 1]"),
            });
        }
        let env = EnvironmentVector {
            forecast_level: field(env_cols[0])?,
            ramp_rate: field(env_cols[1])?,
            temperature: field(env_cols[2])?,
            humidity: field(env_cols[3])?,
        };
        if !(0.0..=1.0).contains(&env.forecast_level) {
            return Err(StoreError::Value {
                row: row_no,
                message: format!("forecast_level {} outside [0, 1]", env.forecast_level),
            });
        }
        if !(0.0..=100.0).contains(&env.humidity) {
            return Err(StoreError::Value {
                row: row_no,
                message: format!("humidity {} outside [0, 100]", env.humidity),
            });
        }
        records.push(ScenarioRecord {
            timestamp,
            error,
            env,
        });
    }
    ScenarioStore::from_records(regions.to_vec(), records)
}

/// Pearson coefficients of the four covariates against the aggregate error,
/// plus the min-max bounds used to normalize covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub rho: [f64; 4],
    /// `(min, max)` per covariate over the fitting window.
    pub bounds: [(f64, f64); 4],
    pub window: TimeWindow,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CorrelationProfile {
    /// Normalized covariates: level, temperature and humidity to [0, 1],
    /// ramp rate to [-1, 1]. Degenerate ranges map to the midpoint.
    pub fn normalize(&self, env: &EnvironmentVector) -> [f64; 4] {
        let raw = env.as_array();
        let mut p = [0.0; 4];
        for k in 0..4 {
            let (lo, hi) = self.bounds[k];
            let unit = if hi > lo { (raw[k] - lo) / (hi - lo) } else { 0.5 };
            p[k] = if k == 1 { 2.0 * unit - 1.0 } else { unit };
        }
        p
    }
}

/// Streaming Pearson correlation (Welford co-moment updates).
#[derive(Debug, Default, Clone, Copy)]
struct Comoment {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl Comoment {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    /// `None` when either side has zero variance.
    fn correlation(&self) -> Option<f64> {
        let scale = (self.m2_x * self.m2_y).sqrt();
        let tiny = 1e-300;
        if self.m2_x <= tiny || self.m2_y <= tiny || scale <= tiny {
            return None;
        }
        // Relative variance test: constant columns accumulate rounding noise only.
        let rel_x = self.m2_x / (self.n * (self.mean_x * self.mean_x).max(1e-300));
        let rel_y = self.m2_y / (self.n * (self.mean_y * self.mean_y).max(1e-300));
        if rel_x < 1e-24 || rel_y < 1e-24 {
            return None;
        }
        Some((self.c_xy / scale).clamp(-1.0, 1.0))
    }
}

/// Sample Pearson correlation of two equally long series; `None` on zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let mut acc = Comoment::default();
    for (&a, &b) in x.iter().zip(y) {
        acc.push(a, b);
    }
    acc.correlation()
}

pub fn fit_correlations(
    store: &ScenarioStore,
    window: TimeWindow,
) -> Result<CorrelationProfile, StoreError> {
    let range = store.window_range(window);
    if range.len() < MIN_FIT_RECORDS {
        return Err(StoreError::WindowTooSmall {
            found: range.len(),
            needed: MIN_FIT_RECORDS,
        });
    }
    let mut acc = [Comoment::default(); 4];
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 4];
    for rec in &store.records[range] {
        let e = store.aggregate_error(rec);
        let raw = rec.env.as_array();
        for k in 0..4 {
            // Ramp rate is correlated with the error magnitude, the rest with the signed error.
            let target = if k == 1 { e.abs() } else { e };
            acc[k].push(raw[k], target);
            bounds[k].0 = bounds[k].0.min(raw[k]);
            bounds[k].1 = bounds[k].1.max(raw[k]);
        }
    }
    let mut rho = [0.0; 4];
    let mut warnings = Vec::new();
    for k in 0..4 {
        match acc[k].correlation() {
            Some(r) => rho[k] = r,
            None => {
                let msg = format!(
                    "zero variance in '{}' or error over the window; coefficient set to 0",
                    PARAMETER_NAMES[k]
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }
    Ok(CorrelationProfile {
        rho,
        bounds,
        window,
        warnings,
    })
}

/// `v = [rho_1 p_1, ..., rho_4 p_4]` with `p` normalized under the profile.
pub fn indicator_vector(profile: &CorrelationProfile, env: &EnvironmentVector) -> [f64; 4] {
    let p = profile.normalize(env);
    let mut v = [0.0; 4];
    for k in 0..4 {
        v[k] = profile.rho[k] * p[k];
    }
    v
}

/// Euclidean distance between indicator vectors.
pub fn environment_distance(
    profile: &CorrelationProfile,
    a: &EnvironmentVector,
    b: &EnvironmentVector,
) -> f64 {
    let va = indicator_vector(profile, a);
    let vb = indicator_vector(profile, b);
    va.iter()
        .zip(&vb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Correlation table in two-column text form.
pub fn format_profile_table(profile: &CorrelationProfile) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<45} {:>11}\n",
        "Correlation between forecasting error and", "Coefficient"
    ));
    for k in 0..4 {
        out.push_str(&format!("{:<45} {:>11.2}\n", PARAMETER_NAMES[k], profile.rho[k]));
    }
    out
}
