//! Record schema, dataset files, splitting and raw-vector construction.

mod io;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset};
pub use synth::{synthesize_dataset, GeneratorParams, IndicatorForm};

use crate::charts::normalize_series;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of indicator series per record.
pub const NUM_INDICATORS: usize = 141;

/// Number of indicators rendered as charts by default.
pub const NUM_CHART_INDICATORS: usize = 76;

/// Default raw-vector length for desk-scale runs.
pub const DEFAULT_RAW_LEN: usize = 1024;

/// Raw-vector length used by full-scale configurations.
pub const FULL_RAW_LEN: usize = 25_500;

/// Default number of points on the normalized-flux grid.
pub const DEFAULT_GRID: usize = 101;

const INDICATORS_TXT: &str = include_str!("../../indicators.txt");

/// The canonical, ordered indicator names (`indicators.txt`).
pub fn indicator_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(|| {
        INDICATORS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    })
}

/// The default chart selection: the last 76 canonical indicators.
pub fn default_chart_selection() -> Vec<String> {
    let names = indicator_names();
    names[names.len() - NUM_CHART_INDICATORS..].to_vec()
}

/// One sample: indicator series plus the q profile on the npsip grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub indicators: BTreeMap<String, Vec<f64>>,
    pub npsip: Vec<f64>,
    pub q: Vec<f64>,
}

impl RawRecord {
    pub fn grid_size(&self) -> usize {
        self.q.len()
    }

    pub fn indicator(&self, name: &str) -> Option<&[f64]> {
        self.indicators.get(name).map(Vec::as_slice)
    }

    /// Checks the record against the canonical schema.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, detail: String| Error::Validation {
            record: self.id.clone(),
            field: field.to_string(),
            detail,
        };
        let names = indicator_names();
        for name in names {
            match self.indicators.get(name) {
                None => return Err(fail(name, "missing indicator".into())),
                Some(s) if s.is_empty() => return Err(fail(name, "empty series".into())),
                Some(s) => {
                    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                        return Err(fail(name, format!("non-finite value at index {i}")));
                    }
                }
            }
        }
        if self.indicators.len() != names.len() {
            let known: HashSet<&str> = names.iter().map(String::as_str).collect();
            let extra = self
                .indicators
                .keys()
                .find(|k| !known.contains(k.as_str()))
                .expect("more keys than canonical names");
            return Err(fail(extra, "not a canonical indicator name".into()));
        }

        let g = self.npsip.len();
        if g < 2 {
            return Err(fail("npsip", format!("grid needs at least 2 points, has {g}")));
        }
        if self.q.len() != g {
            return Err(fail(
                "q",
                format!("length {} differs from npsip length {g}", self.q.len()),
            ));
        }
        if let Some(i) = self.npsip.iter().position(|v| !v.is_finite()) {
            return Err(fail("npsip", format!("non-finite value at index {i}")));
        }
        if let Some(i) = self.q.iter().position(|v| !v.is_finite()) {
            return Err(fail("q", format!("non-finite value at index {i}")));
        }
        if self.npsip[0] != 0.0 || self.npsip[g - 1] != 1.0 {
            return Err(fail("npsip", "grid must start at 0 and end at 1".into()));
        }
        if let Some(i) = self.npsip.windows(2).position(|w| w[1] <= w[0]) {
            return Err(fail(
                "npsip",
                format!("not strictly increasing at index {}", i + 1),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64 },
    File(PathBuf),
    InMemory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<RawRecord>,
    pub split: SplitTag,
    pub provenance: Provenance,
}

impl Dataset {
    /// Validates every record and checks ids are unique.
    pub fn new(records: Vec<RawRecord>, split: SplitTag, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation {
                    record: r.id.clone(),
                    field: "id".into(),
                    detail: "duplicate id".into(),
                });
            }
        }
        Ok(Dataset {
            records,
            split,
            provenance,
        })
    }

    pub fn records(&self) -> &[RawRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RawRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Grid size shared by all records, if the dataset is non-empty and
    /// consistent.
    pub fn grid_size(&self) -> Option<usize> {
        let g = self.records.first()?.grid_size();
        self.records.iter().all(|r| r.grid_size() == g).then_some(g)
    }

    pub fn into_records(self) -> Vec<RawRecord> {
        self.records
    }
}

/// Shuffles with `seed` and splits into (train, test).
///
/// The train side gets `floor(len · (1 − test_fraction))` records.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    // The epsilon absorbs representation error in products like 10 · 0.8.
    let n_train = ((n as f64) * (1.0 - test_fraction) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize], tag| Dataset {
        records: idx.iter().map(|&i| dataset.records[i].clone()).collect(),
        split: tag,
        provenance: dataset.provenance.clone(),
    };
    Ok((
        pick(&order[..n_train], SplitTag::Train),
        pick(&order[n_train..], SplitTag::Test),
    ))
}

/// Writes the raw vector of `record` into `out` (length `n`).
///
/// Indicators are min-max normalized individually and concatenated in
/// canonical order; the result is truncated or zero-padded at the tail.
pub(crate) fn vectorize_raw_into(record: &RawRecord, out: &mut [f64]) -> Result<()> {
    let n = out.len();
    let mut filled = 0;
    for name in indicator_names() {
        if filled == n {
            break;
        }
        let series = record.indicator(name).ok_or_else(|| Error::Validation {
            record: record.id.clone(),
            field: name.clone(),
            detail: "missing indicator".into(),
        })?;
        let take = series.len().min(n - filled);
        let normalized = normalize_series(series)?;
        out[filled..filled + take].copy_from_slice(&normalized[..take]);
        filled += take;
    }
    out[filled..].fill(0.0);
    Ok(())
}

/// The length-`n` raw input vector of a record.
pub fn vectorize_raw(record: &RawRecord, n: usize) -> Result<Tensor<f64>> {
    if n < NUM_INDICATORS {
        return Err(Error::Config(format!(
            "raw vector length must be at least {NUM_INDICATORS}, got {n}"
        )));
    }
    let mut out = vec![0.0; n];
    vectorize_raw_into(record, &mut out)?;
    Tensor::from_vec(vec![n], out)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// A valid record whose indicator `i` is `len` copies of `i as f64`
    /// (or a ramp when `ramp` is set).
    pub fn simple_record(id: &str, len: usize, ramp: bool) -> RawRecord {
        let indicators = indicator_names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let s = (0..len)
                    .map(|t| if ramp { (i + t) as f64 } else { i as f64 })
                    .collect();
                (name.clone(), s)
            })
            .collect();
        RawRecord {
            id: id.into(),
            indicators,
            npsip: vec![0.0, 0.5, 1.0],
            q: vec![1.0, 2.0, 3.0],
        }
    }
}
