use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{reject_float_columns, ColumnSchema, EncodedRelation, KeyCodec, RawTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrMode {
    LowCorr,
    HighCorr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub cardinality: u32,
    pub mode: CorrMode,
    /// Key period of the pattern; ignored for `LowCorr`.
    pub period: u64,
    /// Fraction of rows whose value is redrawn uniformly.
    pub noise_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: u64,
    pub columns: Vec<ColumnSpec>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n_columns` identical periodic columns.
    pub fn high_corr(rows: u64, n_columns: usize, cardinality: u32, period: u64, noise_rate: f64, seed: u64) -> Self {
        let col = ColumnSpec {
            cardinality,
            mode: CorrMode::HighCorr,
            period,
            noise_rate,
        };
        Self {
            rows,
            columns: vec![col; n_columns],
            seed,
        }
    }

    pub fn low_corr(rows: u64, n_columns: usize, cardinality: u32, seed: u64) -> Self {
        let col = ColumnSpec {
            cardinality,
            mode: CorrMode::LowCorr,
            period: 1,
            noise_rate: 0.0,
        };
        Self {
            rows,
            columns: vec![col; n_columns],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::InvalidConfig("synthetic relation needs a value column".into()));
        }
        for (i, c) in self.columns.iter().enumerate() {
            if c.cardinality == 0 {
                return Err(Error::InvalidConfig(format!(
                    "column {i}: cardinality must be positive"
                )));
            }
            if !(0.0..=1.0).contains(&c.noise_rate) {
                return Err(Error::InvalidConfig(format!(
                    "column {i}: noise_rate must be in [0, 1]"
                )));
            }
            if c.period == 0 {
                return Err(Error::InvalidConfig(format!("column {i}: period must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub relation: EncodedRelation,
    /// Measured Pearson correlation between key and code, per column.
    pub pearson: Vec<f64>,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Keys `0..rows`. A high-correlation column is `g(key mod period)` for a
/// seeded random table `g`, with `noise_rate` of rows redrawn.
pub fn generate(spec: &SyntheticSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.rows as usize;
    let keys: Vec<u64> = (0..spec.rows).collect();
    let mut schemas = Vec::with_capacity(spec.columns.len());
    let mut columns = Vec::with_capacity(spec.columns.len());
    for (i, c) in spec.columns.iter().enumerate() {
        let table: Vec<u32> = match c.mode {
            CorrMode::HighCorr => (0..c.period).map(|_| rng.gen_range(0..c.cardinality)).collect(),
            CorrMode::LowCorr => Vec::new(),
        };
        let col: Vec<u32> = keys
            .iter()
            .map(|&k| match c.mode {
                CorrMode::LowCorr => rng.gen_range(0..c.cardinality),
                CorrMode::HighCorr if c.noise_rate > 0.0 && rng.gen_bool(c.noise_rate) => {
                    rng.gen_range(0..c.cardinality)
                }
                CorrMode::HighCorr => table[(k % c.period) as usize],
            })
            .collect();
        schemas
            .push(ColumnSchema::value(format!("c{i}")).with_dictionary((0..c.cardinality).map(|v| format!("v{v}")))?);
        columns.push(col);
    }
    let xs: Vec<f64> = keys.iter().map(|&k| k as f64).collect();
    let pearson = columns
        .iter()
        .map(|col| pearson(&xs, &col.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect();
    let relation = EncodedRelation::new(KeyCodec::single("id", 0, spec.rows.max(1))?, schemas, keys, columns)?;
    debug_assert_eq!(relation.len(), n);
    Ok(Generated { relation, pearson })
}

/// Reads a headed CSV; every column not named in `key_columns` is a value.
pub fn ingest_csv(path: &Path, key_columns: &[String]) -> Result<EncodedRelation> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingComponent(path.to_path_buf())
            }
            _ => Error::Parse(e.to_string()),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_owned).collect::<Vec<_>>())
                .map_err(|e| Error::Parse(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    reject_float_columns(&headers, &rows)?;
    RawTable { headers, rows }.encode(key_columns)
}
