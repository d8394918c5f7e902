//! Right-censored survival data: records, datasets, CSV ingestion and
//! train/test splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed subject: follow-up time, event status, cause and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    /// `true` when the event was observed (`d = I(Y <= C)`).
    pub event: bool,
    /// Cause in `1..=K`; ignored when `event` is false.
    pub cause: usize,
    pub features: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, features: Vec<f64>) -> Self {
        Self {
            time,
            event,
            cause: 1,
            features,
        }
    }

    pub fn with_cause(mut self, cause: usize) -> Self {
        self.cause = cause;
        self
    }

    /// Status as a real number, `d ∈ {0, 1}`.
    pub fn status(&self) -> f64 {
        if self.event {
            1.0
        } else {
            0.0
        }
    }

    /// Cause-specific status `d_k = d · 1(e = k)`.
    pub fn cause_status(&self, k: usize) -> f64 {
        if self.event && self.cause == k {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    p: usize,
    k: usize,
}

impl SurvivalDataset {
    /// Validates every record against the declared feature dimension `p`
    /// and cause count `k`.
    pub fn new(records: Vec<SurvivalRecord>, p: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("cause count must be at least 1".into()));
        }
        for (row, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time > 0.0) {
                return Err(Error::Validation(format!(
                    "row {row}: time must be positive and finite, got {}",
                    r.time
                )));
            }
            if r.features.len() != p {
                return Err(Error::Validation(format!(
                    "row {row}: expected {p} features, got {}",
                    r.features.len()
                )));
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("row {row}: non-finite feature")));
            }
            if r.event && !(1..=k).contains(&r.cause) {
                return Err(Error::Validation(format!(
                    "row {row}: cause {} outside 1..={k}",
                    r.cause
                )));
            }
        }
        Ok(Self { records, p, k })
    }

    /// Builds a single-risk dataset from parallel columns.
    pub fn from_columns(times: &[f64], events: &[bool], features: &[Vec<f64>]) -> Result<Self> {
        if times.len() != events.len() || times.len() != features.len() {
            return Err(Error::Validation("column lengths differ".into()));
        }
        let p = features.first().map_or(0, Vec::len);
        let records = times
            .iter()
            .zip(events)
            .zip(features)
            .map(|((&t, &d), x)| SurvivalRecord::new(t, d, x.clone()))
            .collect();
        Self::new(records, p, 1)
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn n_cause_events(&self, k: usize) -> usize {
        self.records.iter().filter(|r| r.event && r.cause == k).count()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    /// Sub-dataset with the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            p: self.p,
            k: self.k,
        }
    }

    /// Copy with every event relabelled to cause 1 and `K = 1`.
    pub fn single_risk(&self) -> Self {
        Self {
            records: self
                .records
                .iter()
                .map(|r| SurvivalRecord { cause: 1, ..r.clone() })
                .collect(),
            p: self.p,
            k: 1,
        }
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub time: String,
    pub status: String,
    /// Cause column name; used only if present in the header.
    pub cause: Option<String>,
    /// Explicit feature columns. `None` means every remaining column.
    pub features: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            time: "time".into(),
            status: "status".into(),
            cause: Some("cause".into()),
            features: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let time_col = find(&schema.time)
        .ok_or_else(|| Error::Validation(format!("missing column `{}`", schema.time)))?;
    let status_col = find(&schema.status)
        .ok_or_else(|| Error::Validation(format!("missing column `{}`", schema.status)))?;
    let cause_col = schema.cause.as_deref().and_then(find);
    let feature_cols: Vec<usize> = match &schema.features {
        Some(names) => names
            .iter()
            .map(|n| find(n).ok_or_else(|| Error::Validation(format!("missing column `{n}`"))))
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&c| c != time_col && c != status_col && Some(c) != cause_col)
            .collect(),
    };

    let mut records = Vec::new();
    let mut max_cause = 1;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: cannot parse `{raw}`", &headers[c]),
            })
        };
        let time = cell(time_col)?;
        if !(time > 0.0 && time.is_finite()) {
            return Err(Error::Validation(format!("row {row}: time must be > 0, got {time}")));
        }
        let status = cell(status_col)?;
        let event = if status == 0.0 {
            false
        } else if status == 1.0 {
            true
        } else {
            return Err(Error::Validation(format!(
                "row {row}: status must be 0 or 1, got {status}"
            )));
        };
        let cause = match cause_col {
            Some(c) if event => {
                let v = cell(c)?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Validation(format!(
                        "row {row}: cause must be a positive integer, got {v}"
                    )));
                }
                v as usize
            }
            _ => 1,
        };
        max_cause = max_cause.max(cause);
        let features = feature_cols.iter().map(|&c| cell(c)).collect::<Result<Vec<_>>>()?;
        records.push(SurvivalRecord {
            time,
            event,
            cause,
            features,
        });
    }
    SurvivalDataset::new(records, feature_cols.len(), max_cause)
}

/// Writes `time,status[,cause],x1..xp`; the cause column is emitted when `K > 1`.
pub fn write_csv<W: std::io::Write>(data: &SurvivalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time".to_string(), "status".to_string()];
    if data.k() > 1 {
        header.push("cause".into());
    }
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.time.to_string(), u8::from(r.event).to_string()];
        if data.k() > 1 {
            row.push(if r.event { r.cause } else { 0 }.to_string());
        }
        row.extend(r.features.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

const SPLIT_RETRIES: usize = 100;

/// Random disjoint partition into `(train, test)`; the test part is
/// guaranteed to contain at least one event.
pub fn split(
    data: &SurvivalDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let (train, test) = split_indices(data, train_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

pub fn split_indices(
    data: &SurvivalDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.n();
    if n < 2 {
        return Err(Error::Validation("need at least two records to split".into()));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..SPLIT_RETRIES {
        idx.shuffle(&mut rng);
        let (train, test) = idx.split_at(n_train);
        if test.iter().any(|&i| data.records[i].event) {
            return Ok((train.to_vec(), test.to_vec()));
        }
    }
    Err(Error::Validation(format!(
        "no split with an event in the test part after {SPLIT_RETRIES} attempts"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SurvivalDataset> {
        read_csv(s.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn loads_simple_csv() {
        let d = parse("time,status,x1\n1.0,1,0.5\n2.0,0,-0.3").unwrap();
        assert_eq!((d.n(), d.p(), d.k()), (2, 1, 1));
        assert_eq!(d.records()[1].features, vec![-0.3]);
        assert!(!d.records()[1].event);
    }

    #[test]
    fn status_two_without_cause_is_rejected() {
        let err = parse("time,status,x1\n1.0,1,0.5\n2.0,2,0.1").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("row 1")), "{err}");
    }

    #[test]
    fn cause_column_sets_k() {
        let d = parse("time,status,cause,x\n1,1,1,0\n2,1,2,0\n3,0,0,1").unwrap();
        assert_eq!(d.k(), 2);
        assert_eq!(d.p(), 1);
    }

    #[test]
    fn bad_cells_report_row() {
        let err = parse("time,status\n1,1\nabc,1").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
        let err = parse("time,status\n0,1").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn csv_round_trip() {
        let d = parse("time,status,cause,x1\n1.5,1,2,0.25\n2,0,0,-1").unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }

    fn ten() -> SurvivalDataset {
        let times: Vec<f64> = (1..=10).map(f64::from).collect();
        let events = vec![true; 10];
        let x = vec![vec![]; 10];
        SurvivalDataset::from_columns(&times, &events, &x).unwrap()
    }

    #[test]
    fn split_sizes_and_reproducibility() {
        let d = ten();
        let (a, b) = split_indices(&d, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(&d, 0.8, 3).unwrap(), (a, b));
        assert!(split(&d, 1.0, 0).is_err());
    }

    #[test]
    fn split_fails_without_events() {
        let x = vec![vec![]; 4];
        let d = SurvivalDataset::from_columns(&[1., 2., 3., 4.], &[false; 4], &x).unwrap();
        assert!(split(&d, 0.5, 1).is_err());
    }
}
