//! Finite-difference checks for every differentiable op and the tiny model.
//!
//! Each op is checked on random inputs from several seeds. A scalar loss is
//! formed as `Σ out ⊙ r` with a fixed random `r`, so ops whose plain sum is
//! constant (softmax, normalization) are still probed in every direction.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    attention, init_params, mse_loss, predict, Bound, Inputs, Mode, ModelConfig, Variant,
};
use crate::tensor::{concat, grad_check, BatchNormStats, GradCheckReport, Graph, Tensor, Var};

/// Pass threshold on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_bias",
    "sigmoid",
    "relu",
    "sum",
    "mean",
    "mean_axis",
    "matmul",
    "bmm",
    "linear",
    "reshape",
    "permute",
    "transpose_last",
    "narrow",
    "concat",
    "softmax",
    "layer_norm",
    "conv2d",
    "conv2d_strided",
    "batchnorm2d_train",
    "batchnorm2d_eval",
    "maxpool2d",
    "global_avgpool",
    "attention",
    "mse_loss",
];

/// Name under which the whole-model check is reported.
pub const MODEL: &str = "tiny_model";

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    /// Seeds `0..seeds` are run for every op.
    pub seeds: u64,
    pub eps: f64,
    /// Seeds for the whole-model check.
    pub model_seeds: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: 5,
            eps: 1e-5,
            model_seeds: 5,
        }
    }
}

/// Worst case of one op over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: String,
    pub seeds: u64,
    pub worst_seed: u64,
    pub report: GradCheckReport,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<OpCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OpCheck::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max)
    }

    pub fn get(&self, op: &str) -> Option<&OpCheck> {
        self.checks.iter().find(|c| c.op == op)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>12}  {:>4} {:>5} {:>7}  status", "op", "max_rel_err", "seed", "input", "element")?;
        for c in &self.checks {
            let r = &c.report;
            writeln!(
                f,
                "{:<18} {:>12.3e}  {:>4} {:>5} {:>7}  {}",
                c.op,
                r.max_rel_error,
                c.worst_seed,
                r.worst_input,
                r.worst_element,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} ops, worst {:.3e}, {}",
            self.checks.len(),
            self.max_rel_error(),
            if self.passed() { "all pass" } else { "FAILED" }
        )
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Random values kept away from zero, for ops with a kink there.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })
}

fn weighted<'g>(g: &'g Graph<f64>, out: Var<'g, f64>, r: &Tensor<f64>) -> Result<Var<'g, f64>> {
    if out.shape() != r.shape() {
        return Err(Error::dim("gradsuite", format!("probe {:?} for output {:?}", r.shape(), out.shape())));
    }
    out.mul(g.constant(r.clone()))?.sum()
}

/// Checks one op at one seed.
pub fn check_op(op: &str, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    macro_rules! check {
        ($out_shape:expr, [$($input:expr),+], |$g:ident, $v:ident| $body:expr) => {{
            let inputs = vec![$($input),+];
            let probe = random(&$out_shape, rng);
            grad_check(
                |$g, $v| {
                    let out = $body?;
                    weighted($g, out, &probe)
                },
                &inputs,
                eps,
            )
        }};
    }
    match op {
        "add" => check!([3, 4], [random(&[3, 4], rng), random(&[3, 4], rng)], |_g, v| v[0].add(v[1])),
        "sub" => check!([3, 4], [random(&[3, 4], rng), random(&[3, 4], rng)], |_g, v| v[0].sub(v[1])),
        "mul" => check!([3, 4], [random(&[3, 4], rng), random(&[3, 4], rng)], |_g, v| v[0].mul(v[1])),
        "scale" => check!([5], [random(&[5], rng)], |_g, v| v[0].scale(-1.7)),
        "add_bias" => check!([2, 3, 4], [random(&[2, 3, 4], rng), random(&[4], rng)], |_g, v| v[0].add_bias(v[1])),
        "sigmoid" => check!([6], [random(&[6], rng).map(|v| 3.0 * v)], |_g, v| v[0].sigmoid()),
        "relu" => check!([2, 5], [off_zero(&[2, 5], rng)], |_g, v| v[0].relu()),
        "sum" => check!([1], [random(&[2, 3], rng)], |_g, v| v[0].sum()),
        "mean" => check!([1], [random(&[2, 3], rng)], |_g, v| v[0].mean()),
        "mean_axis" => check!([2, 4], [random(&[2, 3, 4], rng)], |_g, v| v[0].mean_axis(1)),
        "matmul" => check!([3, 5], [random(&[3, 4], rng), random(&[4, 5], rng)], |_g, v| v[0].matmul(v[1])),
        "bmm" => check!([2, 3, 5], [random(&[2, 3, 4], rng), random(&[2, 4, 5], rng)], |_g, v| v[0].bmm(v[1])),
        "linear" => check!(
            [2, 3, 5],
            [random(&[2, 3, 4], rng), random(&[4, 5], rng), random(&[5], rng)],
            |_g, v| v[0].linear(v[1], Some(v[2]))
        ),
        "reshape" => check!([4, 3], [random(&[2, 6], rng)], |_g, v| v[0].reshape(vec![4, 3])),
        "permute" => check!([4, 2, 3], [random(&[2, 3, 4], rng)], |_g, v| v[0].permute(&[2, 0, 1])),
        "transpose_last" => check!([2, 4, 3], [random(&[2, 3, 4], rng)], |_g, v| v[0].transpose_last()),
        "narrow" => check!([2, 2, 4], [random(&[2, 5, 4], rng)], |_g, v| v[0].narrow(1, 2, 2)),
        "concat" => check!(
            [2, 5],
            [random(&[2, 3], rng), random(&[2, 2], rng)],
            |_g, v| concat(&[v[0], v[1]], 1)
        ),
        "softmax" => check!([2, 3, 4], [random(&[2, 3, 4], rng).map(|v| 2.0 * v)], |_g, v| v[0].softmax(1)),
        "layer_norm" => check!(
            [3, 6],
            [random(&[3, 6], rng), random(&[6], rng), random(&[6], rng)],
            |_g, v| v[0].layer_norm(v[1], v[2], 1e-5)
        ),
        "conv2d" => check!(
            [2, 3, 5, 4],
            [random(&[2, 2, 5, 4], rng), random(&[3, 2, 3, 3], rng), random(&[3], rng)],
            |_g, v| v[0].conv2d(v[1], v[2], 1, 1)
        ),
        "conv2d_strided" => check!(
            [1, 2, 3, 2],
            [random(&[1, 3, 7, 6], rng), random(&[2, 3, 3, 3], rng), random(&[2], rng)],
            |_g, v| v[0].conv2d(v[1], v[2], 2, 0)
        ),
        "batchnorm2d_train" => check!(
            [3, 2, 3, 2],
            [random(&[3, 2, 3, 2], rng), random(&[2], rng), random(&[2], rng)],
            |_g, v| v[0].batchnorm2d(v[1], v[2], &mut BatchNormStats::new(2), true, 0.1, 1e-5)
        ),
        "batchnorm2d_eval" => {
            let stats = BatchNormStats {
                mean: random(&[2], rng).map(|v| 0.3 * v),
                var: random(&[2], rng).map(|v| 1.0 + 0.5 * v),
            };
            check!(
                [3, 2, 3, 2],
                [random(&[3, 2, 3, 2], rng), random(&[2], rng), random(&[2], rng)],
                |_g, v| v[0].batchnorm2d(v[1], v[2], &mut stats.clone(), false, 0.1, 1e-5)
            )
        }
        "maxpool2d" => check!([2, 2, 2, 2], [random(&[2, 2, 4, 5], rng)], |_g, v| v[0].maxpool2d(2, 2)),
        "global_avgpool" => check!([2, 3], [random(&[2, 3, 3, 4], rng)], |_g, v| v[0].global_avgpool()),
        "attention" => check!(
            [2, 3, 4],
            [random(&[2, 3, 4], rng), random(&[2, 3, 4], rng), random(&[2, 3, 4], rng)],
            |_g, v| attention(v[0], v[1], v[2])
        ),
        "mse_loss" => {
            let inputs = vec![random(&[3, 4], rng), random(&[3, 4], rng)];
            grad_check(|_g, v| mse_loss(v[0], v[1]), &inputs, eps)
        }
        other => Err(Error::Config(format!("no gradient check for op `{other}`"))),
    }
}

/// Whole-model check: every trainable parameter of the tiny config, eval-mode
/// batch norm with non-trivial running statistics, loss = MSE of the
/// multimodal prediction.
///
/// Batch norm runs in eval mode because in training mode the conv bias that
/// feeds it cancels exactly, leaving gradients that are zero up to roundoff.
pub fn check_tiny_model(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let c = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut p = init_params::<f64>(&c, seed)?;
    for (i, &n) in c.conv_channels.iter().enumerate() {
        p.set(&format!("vision.bn.{i}.running_mean"), random(&[n], rng).map(|v| 0.1 * v))?;
        p.set(&format!("vision.bn.{i}.running_var"), random(&[n], rng).map(|v| 1.0 + 0.5 * v))?;
    }
    let batch = 2;
    let inputs = Inputs {
        raw: random(&[batch, c.raw_len], rng).map(f64::abs),
        // Continuous pixels: binary charts make conv outputs tie exactly
        // inside pooling windows, where the max is not differentiable.
        charts: Some(random(&[batch, c.charts(), c.height, c.width], rng).map(|v| 0.5 * (v + 1.0))),
    };
    let gt = random(&[batch, c.grid], rng).map(|v| 2.0 + v);
    let names: Vec<String> = p.trainable().map(|(n, _)| n.clone()).collect();
    let tensors: Vec<Tensor<f64>> = names.iter().map(|n| p.get(n).cloned()).collect::<Result<_>>()?;
    grad_check(
        |g, vars| {
            let bound: BTreeMap<_, _> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let b = Bound::new(g, &p, &c, Mode::Eval, false).with_vars(bound);
            let pred = predict(&b, &inputs, Variant::Multimodal)?;
            mse_loss(pred, g.constant(gt.clone()))
        },
        &tensors,
        eps,
    )
}

fn worst_over(
    op: &str,
    seeds: u64,
    mut run: impl FnMut(u64) -> Result<GradCheckReport>,
) -> Result<OpCheck> {
    let mut worst: Option<OpCheck> = None;
    for seed in 0..seeds {
        let report = run(seed)?;
        if worst.as_ref().is_none_or(|w| report.max_rel_error > w.report.max_rel_error) {
            worst = Some(OpCheck {
                op: op.to_string(),
                seeds,
                worst_seed: seed,
                report,
            });
        }
    }
    worst.ok_or_else(|| Error::Config("gradient suite needs at least one seed".into()))
}

/// Runs every op check and the whole-model check.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut checks = Vec::with_capacity(OPS.len() + 1);
    for op in OPS {
        checks.push(worst_over(op, opts.seeds, |s| check_op(op, s, opts.eps))?);
    }
    checks.push(worst_over(MODEL, opts.model_seeds, |s| check_tiny_model(s, opts.eps))?);
    Ok(SuiteReport { checks })
}
