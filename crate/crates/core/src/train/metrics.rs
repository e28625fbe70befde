use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub mse: f64,
    pub wall_seconds: f64,
}

/// Per-epoch MSE rows, in the order they were recorded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "epoch,split,mse,wall_seconds";

impl MetricsLog {
    pub fn push(&mut self, epoch: usize, split: Split, mse: f64, wall_seconds: f64) {
        self.rows.push(MetricsRow {
            epoch,
            split,
            mse,
            wall_seconds,
        });
    }

    pub fn rows_for(&self, split: Split) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// MSE of the latest row for `split`.
    pub fn last(&self, split: Split) -> Option<f64> {
        self.rows_for(split).last().map(|r| r.mse)
    }

    pub fn first(&self, split: Split) -> Option<f64> {
        self.rows_for(split).next().map(|r| r.mse)
    }

    /// CSV text; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:?},{:?}", r.epoch, r.split.as_str(), r.mse, r.wall_seconds);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == METRICS_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    detail: format!("expected header `{METRICS_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            let bad = |detail: &str| Error::Parse {
                line: i + 1,
                detail: detail.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let split = match f[1] {
                "train" => Split::Train,
                "test" => Split::Test,
                _ => return Err(bad("split must be train or test")),
            };
            rows.push(MetricsRow {
                epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
                split,
                mse: f[2].parse().map_err(|_| bad("bad mse"))?,
                wall_seconds: f[3].parse().map_err(|_| bad("bad wall_seconds"))?,
            });
        }
        Ok(MetricsLog { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
