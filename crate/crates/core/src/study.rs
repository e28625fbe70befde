//! Ablation runner: one training run per (setting, seed).

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Variants mlp_only, mlp_attn, multimodal.
    Components,
    /// Interval-sampling cap M.
    SamplePoints,
    /// Chart height = width.
    Resolution,
    /// Fusion blocks L.
    Blocks,
}

impl StudyKind {
    pub const ALL: [StudyKind; 4] = [
        StudyKind::Components,
        StudyKind::SamplePoints,
        StudyKind::Resolution,
        StudyKind::Blocks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Components => "components",
            StudyKind::SamplePoints => "sample_points",
            StudyKind::Resolution => "resolution",
            StudyKind::Blocks => "blocks",
        }
    }

    pub fn default_settings(self) -> Vec<String> {
        let v: &[&str] = match self {
            StudyKind::Components => &["mlp_only", "mlp_attn", "multimodal"],
            StudyKind::SamplePoints => &["50", "100", "200", "500"],
            StudyKind::Resolution => &["56", "112", "224", "320"],
            StudyKind::Blocks => &["1", "2", "3", "4"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

impl std::fmt::Display for StudyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StudyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!("unknown study `{s}` (expected components, sample_points, resolution or blocks)")
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub settings: Vec<String>,
    pub seeds: Vec<u64>,
    /// Configuration shared by every run before the setting is applied.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl StudySpec {
    /// Desk-scale defaults: seeds 0, 1, 2 and [`ModelConfig::desk`].
    pub fn desk(kind: StudyKind) -> Self {
        StudySpec {
            kind,
            settings: kind.default_settings(),
            seeds: vec![0, 1, 2],
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.settings.is_empty() {
            return Err(Error::Config("study sweep is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("study needs at least one seed".into()));
        }
        for s in &self.settings {
            self.configure(s, self.seeds[0])?;
        }
        Ok(())
    }

    /// Configs of one run. Setting values are not range-checked here; a bad
    /// model configuration surfaces as a failed run.
    pub fn configure(&self, setting: &str, seed: u64) -> Result<(ModelConfig, TrainConfig)> {
        let mut model = self.model.clone();
        let mut train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let number = || {
            setting.parse::<usize>().map_err(|_| {
                Error::Config(format!("{} setting `{setting}` is not a whole number", self.kind))
            })
        };
        match self.kind {
            StudyKind::Components => {
                train.variant = setting.parse::<Variant>().map_err(Error::Config)?;
            }
            StudyKind::SamplePoints => model.max_points = number()?,
            StudyKind::Resolution => {
                let r = number()?;
                model.height = r;
                model.width = r;
            }
            StudyKind::Blocks => model.fusion_blocks = number()?,
        }
        Ok((model, train))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub study: StudyKind,
    pub setting: String,
    pub seed: u64,
    /// Absent when the run failed.
    pub test_mse: Option<f64>,
    pub wall_seconds: f64,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl StudyRow {
    pub fn ok(&self) -> bool {
        self.test_mse.is_some()
    }
}

pub const STUDY_HEADER: &str = "study,setting,seed,test_mse,wall_seconds,status";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

/// Quotes a CSV field when it contains a separator, quote or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl StudyResult {
    /// Settings in first-seen order with the median test MSE of their
    /// successful runs.
    pub fn medians(&self) -> Vec<(String, Option<f64>)> {
        let mut settings: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !settings.contains(&r.setting.as_str()) {
                settings.push(&r.setting);
            }
        }
        settings
            .into_iter()
            .map(|s| {
                let v = self.rows.iter().filter(|r| r.setting == s).filter_map(|r| r.test_mse).collect();
                (s.to_string(), median(v))
            })
            .collect()
    }

    pub fn median_of(&self, setting: &str) -> Option<f64> {
        self.medians().into_iter().find(|(s, _)| s == setting).and_then(|(_, m)| m)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(STUDY_HEADER);
        s.push('\n');
        for r in &self.rows {
            let mse = r.test_mse.map(|v| format!("{v:?}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{:?},{}",
                r.study,
                csv_field(&r.setting),
                r.seed,
                mse,
                r.wall_seconds,
                csv_field(&r.status)
            );
        }
        s
    }

    /// `study,setting,median_test_mse,runs_ok,runs`
    pub fn medians_csv(&self) -> String {
        let mut s = String::from("study,setting,median_test_mse,runs_ok,runs\n");
        for (setting, m) in self.medians() {
            let rows: Vec<&StudyRow> = self.rows.iter().filter(|r| r.setting == setting).collect();
            let study = rows[0].study;
            let _ = writeln!(
                s,
                "{study},{},{},{},{}",
                csv_field(&setting),
                m.map(|v| format!("{v:?}")).unwrap_or_default(),
                rows.iter().filter(|r| r.ok()).count(),
                rows.len()
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Runs every (setting, seed) pair in sweep order.
///
/// A failing run is recorded with its error and the study continues.
/// `progress` sees each row as it completes.
pub fn run_study(
    spec: &StudySpec,
    train_set: &Dataset,
    test_set: &Dataset,
    mut progress: impl FnMut(&StudyRow),
) -> Result<StudyResult> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.settings.len() * spec.seeds.len());
    for setting in &spec.settings {
        for &seed in &spec.seeds {
            let start = Instant::now();
            let (model, config) = spec.configure(setting, seed)?;
            let outcome = train(&model, &config, train_set, Some(test_set));
            let wall = if config.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            let (test_mse, status) = match outcome {
                Ok(out) => match out.metrics.last(crate::train::Split::Test) {
                    Some(v) => (Some(v), "ok".to_string()),
                    None => (None, "failed: no test evaluation".to_string()),
                },
                Err(e) => (None, format!("failed: {e}")),
            };
            let row = StudyRow {
                study: spec.kind,
                setting: setting.clone(),
                seed,
                test_mse,
                wall_seconds: wall,
                status,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(StudyResult { rows })
}
