//! Synthetic records with a known closed form.
//!
//! Every record draws θ = (q0, q_edge, α) and sets
//! `q(ψ) = q0 + (q_edge − q0)·ψ^α` on a uniform ψ grid. Informative
//! indicators are power curves whose exponent depends on θ (see
//! [`IndicatorForm`]); distractor
//! indicators are independent Gaussian noise. Distractors are drawn only from
//! indicators outside the chart selection, so the charts always see clean
//! signal while part of the raw vector does not.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    default_chart_selection, indicator_names, Dataset, Provenance, RawRecord, SplitTag,
    DEFAULT_GRID,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub num_records: usize,
    /// Points on the npsip grid (G).
    pub grid: usize,
    pub q0_range: (f64, f64),
    pub q_edge_range: (f64, f64),
    pub alpha_range: (f64, f64),
    /// Standard deviation of Gaussian noise added to informative series.
    pub noise: f64,
    /// Series lengths, cycled over the canonical indicator order.
    pub lengths: Vec<usize>,
    /// Approximate fraction of non-chart indicators replaced by pure noise.
    pub distractor_fraction: f64,
    /// Indicators kept clean because they are rendered as charts.
    pub chart_selection: Vec<String>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            num_records: 1200,
            grid: DEFAULT_GRID,
            q0_range: (0.8, 1.2),
            q_edge_range: (3.0, 5.0),
            alpha_range: (1.0, 3.0),
            noise: 0.02,
            lengths: vec![20, 40, 80, 150, 300],
            distractor_fraction: 0.5,
            chart_selection: default_chart_selection(),
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ordered(self.q0_range) || self.q0_range.0 <= 0.0 {
            return bad(format!("q0 range {:?} must be positive and ordered", self.q0_range));
        }
        if !ordered(self.q_edge_range) || self.q_edge_range.0 <= self.q0_range.1 {
            return bad(format!(
                "q_edge range {:?} must be ordered and lie above q0 range {:?}",
                self.q_edge_range, self.q0_range
            ));
        }
        if !ordered(self.alpha_range) || self.alpha_range.0 <= 0.0 {
            return bad(format!("alpha range {:?} must be positive and ordered", self.alpha_range));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.grid < 2 {
            return bad(format!("grid needs at least 2 points, got {}", self.grid));
        }
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return bad("length schedule must be non-empty with lengths >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return bad(format!(
                "distractor fraction must be in [0, 1], got {}",
                self.distractor_fraction
            ));
        }
        let names: HashSet<&str> = indicator_names().iter().map(String::as_str).collect();
        if let Some(n) = self.chart_selection.iter().find(|n| !names.contains(n.as_str())) {
            return bad(format!("chart selection names unknown indicator `{n}`"));
        }
        Ok(())
    }

    pub fn series_len(&self, index: usize) -> usize {
        self.lengths[index % self.lengths.len()]
    }

    /// Canonical indices of distractor indicators.
    ///
    /// Non-chart indicators are walked in canonical order and the j-th one
    /// is a distractor when `floor((j+1)·f) > floor(j·f)`, which spreads
    /// `f` of them evenly.
    pub fn distractors(&self) -> Vec<usize> {
        let selected: HashSet<&str> = self.chart_selection.iter().map(String::as_str).collect();
        let f = self.distractor_fraction;
        indicator_names()
            .iter()
            .enumerate()
            .filter(|(_, n)| !selected.contains(n.as_str()))
            .enumerate()
            .filter(|&(j, _)| ((j + 1) as f64 * f).floor() > (j as f64 * f).floor())
            .map(|(_, (i, _))| i)
            .collect()
    }
}

/// Closed form of informative indicator `j`:
///
/// `x(t) = a·q0 + b·t^p`, `p = exp(κ·(w · u))`
///
/// for `t` uniform on [0, 1], where `u ∈ [−1, 1]³` is θ rescaled from the
/// generator ranges. Min-max normalization removes `a` and `b` but keeps
/// the curvature `p`, so θ stays readable from both the raw vector and the
/// charts. The coefficients depend only on `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorForm {
    pub a: f64,
    pub b: f64,
    /// Direction in rescaled θ space.
    pub w: [f64; 3],
    /// Exponent spread: `p ∈ [e^−κ, e^κ]`.
    pub kappa: f64,
}

fn frac(x: f64) -> f64 {
    x - x.floor()
}

impl IndicatorForm {
    pub fn for_index(j: usize) -> Self {
        let j = j as f64;
        let raw = [
            2.0 * frac(j * 0.618_033_988_7) - 1.0,
            2.0 * frac(j * 0.414_213_562_3 + 0.25) - 1.0,
            2.0 * frac(j * 0.732_050_807_5 + 0.5) - 1.0,
        ];
        let l1: f64 = raw.iter().map(|v| v.abs()).sum::<f64>().max(1e-9);
        IndicatorForm {
            a: 0.5 + frac(j * 0.236_067_977_5),
            b: 0.5 + frac(j * 0.381_966_011_3),
            w: raw.map(|v| v / l1),
            kappa: 3f64.ln(),
        }
    }

    /// Curvature exponent for rescaled θ.
    pub fn exponent(&self, u: [f64; 3]) -> f64 {
        let dot: f64 = self.w.iter().zip(u).map(|(w, u)| w * u).sum();
        (self.kappa * dot).exp()
    }

    pub fn eval(&self, q0: f64, p: f64, t: f64) -> f64 {
        self.a * q0 + self.b * t.powf(p)
    }
}

/// Maps `v` from `range` onto [−1, 1]; degenerate ranges map to 0.
fn rescale(v: f64, range: (f64, f64)) -> f64 {
    let half = 0.5 * (range.1 - range.0);
    if half > 0.0 {
        (v - 0.5 * (range.0 + range.1)) / half
    } else {
        0.0
    }
}

/// Position of sample `i` out of `len` on [0, 1].
pub(crate) fn unit_time(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        i as f64 / (len - 1) as f64
    }
}

/// Generates a dataset; identical `(params, seed)` give identical output.
pub fn synthesize_dataset(params: &GeneratorParams, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let names = indicator_names();
    let distractor: HashSet<usize> = params.distractors().into_iter().collect();
    let forms: Vec<IndicatorForm> = (0..names.len()).map(IndicatorForm::for_index).collect();
    let npsip: Vec<f64> = (0..params.grid).map(|i| unit_time(i, params.grid)).collect();

    let mut records = Vec::with_capacity(params.num_records);
    for r in 0..params.num_records {
        let q0 = rng.random_range(params.q0_range.0..=params.q0_range.1);
        let q_edge = rng.random_range(params.q_edge_range.0..=params.q_edge_range.1);
        let alpha = rng.random_range(params.alpha_range.0..=params.alpha_range.1);

        let u = [
            rescale(q0, params.q0_range),
            rescale(q_edge, params.q_edge_range),
            rescale(alpha, params.alpha_range),
        ];
        let exponents: Vec<f64> = forms.iter().map(|f| f.exponent(u)).collect();
        let mut indicators = BTreeMap::new();
        for (j, name) in names.iter().enumerate() {
            let len = params.series_len(j);
            let series: Vec<f64> = if distractor.contains(&j) {
                (0..len).map(|_| unit.sample(&mut rng)).collect()
            } else {
                (0..len)
                    .map(|i| {
                        let clean = forms[j].eval(q0, exponents[j], unit_time(i, len));
                        if params.noise > 0.0 {
                            clean + params.noise * unit.sample(&mut rng)
                        } else {
                            clean
                        }
                    })
                    .collect()
            };
            indicators.insert(name.clone(), series);
        }
        let q = npsip
            .iter()
            .map(|&psi| q0 + (q_edge - q0) * psi.powf(alpha))
            .collect();
        records.push(RawRecord {
            id: format!("rec_{r:05}"),
            indicators,
            npsip: npsip.clone(),
            q,
        });
    }
    Dataset::new(records, SplitTag::Full, Provenance::Synthetic { seed })
}
