//! Sample-size sweeps: train one student per `(n, repetition)` cell and record
//! its error on a shared held-out set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkParams, NetworkSpec};
use crate::rng::derive_seed;
use crate::training::{gen_teacher_data, init_params, train, train_from, InitScheme, TrainConfig};

// Salts separating the sub-seeds of one cell.
const DATA_SALT: u64 = 0;
const TRAIN_SALT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherSource {
    Explicit {
        params: NetworkParams,
    },
    /// Randomly initialized teacher with the student's input and output sizes.
    Random {
        hidden: Vec<usize>,
        seed: u64,
        #[serde(default)]
        init: InitScheme,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    #[default]
    Fresh,
    /// Start every student at the teacher's weights.
    Teacher,
}

fn default_test_size() -> usize {
    10_000
}

fn default_test_seed() -> u64 {
    0x7e57
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Student architecture.
    pub spec: NetworkSpec,
    pub teacher: TeacherSource,
    pub sigma: f64,
    pub n_grid: Vec<usize>,
    /// One base seed per repetition.
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
    /// Draw held-out targets without noise, so the error is the excess risk.
    #[serde(default)]
    pub noiseless_test: bool,
    #[serde(default)]
    pub train_config: TrainConfig,
    #[serde(default)]
    pub student_init: StudentInit,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.spec.validate()?;
        self.train_config.validate()?;
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("n_grid must be nonempty with positive entries".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid {:?} is not strictly increasing", self.n_grid));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.test_size == 0 {
            return bad("test_size must be positive".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn teacher(&self) -> Result<NetworkParams> {
        let params = match &self.teacher {
            TeacherSource::Explicit { params } => params.clone(),
            TeacherSource::Random { hidden, seed, init } => {
                let spec = NetworkSpec {
                    hidden: hidden.clone(),
                    ..self.spec.clone()
                };
                init_params(&spec, *init, *seed)?
            }
        };
        if params.input_dim() != self.spec.input_dim || params.output_dim() != self.spec.output_dim {
            return Err(Error::InvalidConfig(format!(
                "teacher maps {}→{}, student maps {}→{}",
                params.input_dim(),
                params.output_dim(),
                self.spec.input_dim,
                self.spec.output_dim
            )));
        }
        if self.student_init == StudentInit::Teacher && !params.matches(&self.spec) {
            return Err(Error::InvalidConfig(
                "student_init = teacher needs identical architectures".into(),
            ));
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub n: usize,
    pub seed_index: usize,
    pub test_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub n: usize,
    pub mean_error: f64,
    /// Sample standard deviation over `√count`; 0 when `count = 1`.
    pub std_error: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub rows: Vec<SeriesRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl ErrorSeries {
    pub fn from_rows(mut rows: Vec<SeriesRow>) -> Result<Self> {
        rows.sort_by_key(|r| (r.n, r.seed_index));
        if let Some(w) = rows.windows(2).find(|w| (w[0].n, w[0].seed_index) == (w[1].n, w[1].seed_index)) {
            return Err(Error::InvalidConfig(format!(
                "duplicate cell n = {}, seed_index = {}",
                w[0].n, w[0].seed_index
            )));
        }
        let aggregate = aggregate(&rows)?;
        Ok(ErrorSeries { rows, aggregate })
    }
}

/// Seed of the `(n, seed_index)` cell for base seed `base`.
pub fn cell_seed(base: u64, n: usize, seed_index: usize) -> u64 {
    derive_seed(base, &[n as u64, seed_index as u64])
}

pub fn run_sweep(config: &SweepConfig) -> Result<ErrorSeries> {
    config.validate()?;
    let teacher = config.teacher()?;
    let test_sigma = if config.noiseless_test { 0.0 } else { config.sigma };
    let test_set = gen_teacher_data(&teacher, config.test_size, test_sigma, config.test_seed)?;

    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.seeds.len()).map(move |s| (n, s)))
        .collect();
    let results: Vec<Result<SeriesRow>> = cells
        .par_iter()
        .map(|&(n, seed_index)| {
            let seed = cell_seed(config.seeds[seed_index], n, seed_index);
            let cell = || -> Result<f64> {
                let data = gen_teacher_data(&teacher, n, config.sigma, derive_seed(seed, &[DATA_SALT]))?;
                let train_cfg = TrainConfig {
                    seed: derive_seed(seed, &[TRAIN_SALT]),
                    ..config.train_config.clone()
                };
                let report = match config.student_init {
                    StudentInit::Fresh => train(&config.spec, &data, &test_set, &train_cfg)?,
                    StudentInit::Teacher => train_from(teacher.clone(), &data, &test_set, &train_cfg)?,
                };
                Ok(report.test_error)
            };
            cell()
                .map(|test_error| SeriesRow {
                    n,
                    seed_index,
                    test_error,
                })
                .map_err(|e| Error::Cell {
                    n,
                    seed_index,
                    source: Box::new(e),
                })
        })
        .collect();
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    ErrorSeries::from_rows(rows)
}

/// Per-`n` mean, standard error and count, in increasing `n`.
pub fn aggregate(rows: &[SeriesRow]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut groups: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.n).or_default().push((r.seed_index, r.test_error));
    }
    Ok(groups
        .into_iter()
        .map(|(n, mut cells)| {
            // Fixed summation order makes the result independent of row order.
            cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let count = cells.len();
            let mean = cells.iter().map(|c| c.1).sum::<f64>() / count as f64;
            let std_error = if count > 1 {
                let var = cells.iter().map(|c| (c.1 - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow {
                n,
                mean_error: mean,
                std_error,
                count,
            }
        })
        .collect())
}

pub const ROWS_HEADER: &str = "n,seed_index,test_error";
pub const AGGREGATE_HEADER: &str = "n,mean_error,std_error,count";

pub fn rows_csv(rows: &[SeriesRow]) -> String {
    let mut out = format!("{ROWS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.16e}", r.n, r.seed_index, r.test_error);
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.16e},{:.16e},{}", r.n, r.mean_error, r.std_error, r.count);
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_csv<T>(text: &str, header: &str, parse: impl Fn(&[&str]) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(parse_err(1, format!("expected header '{header}', found '{h}'"))),
        None => return Err(parse_err(1, "empty file")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        out.push(parse(&fields).map_err(|m| parse_err(i + 1, m))?);
    }
    if out.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(fields: &[&str], k: usize, name: &str) -> std::result::Result<T, String> {
    let raw = fields.get(k).ok_or_else(|| format!("missing field '{name}'"))?;
    raw.parse().map_err(|_| format!("field '{name}' has invalid value '{raw}'"))
}

fn expect_fields(fields: &[&str], n: usize) -> std::result::Result<(), String> {
    if fields.len() != n {
        return Err(format!("expected {n} fields, found {}", fields.len()));
    }
    Ok(())
}

pub fn parse_rows_csv(text: &str) -> Result<Vec<SeriesRow>> {
    parse_csv(text, ROWS_HEADER, |f| {
        expect_fields(f, 3)?;
        Ok(SeriesRow {
            n: field(f, 0, "n")?,
            seed_index: field(f, 1, "seed_index")?,
            test_error: field(f, 2, "test_error")?,
        })
    })
}

pub fn parse_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    parse_csv(text, AGGREGATE_HEADER, |f| {
        expect_fields(f, 4)?;
        Ok(AggregateRow {
            n: field(f, 0, "n")?,
            mean_error: field(f, 1, "mean_error")?,
            std_error: field(f, 2, "std_error")?,
            count: field(f, 3, "count")?,
        })
    })
}

/// Writes the per-cell rows; the aggregate is recomputed on load.
pub fn save_series(series: &ErrorSeries, path: &Path) -> Result<()> {
    std::fs::write(path, rows_csv(&series.rows))?;
    Ok(())
}

pub fn load_series(path: &Path) -> Result<ErrorSeries> {
    let text = std::fs::read_to_string(path)?;
    ErrorSeries::from_rows(parse_rows_csv(&text)?)
}

pub fn save_aggregate(rows: &[AggregateRow], path: &Path) -> Result<()> {
    std::fs::write(path, aggregate_csv(rows))?;
    Ok(())
}

pub fn load_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    parse_aggregate_csv(&std::fs::read_to_string(path)?)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Ties share the average of their positions.
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties; `NaN` when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
