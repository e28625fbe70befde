use super::{Bound, Inputs, Readout, Variant};
use crate::error::{Error, Result};
use crate::tensor::{concat, Scalar, Var};

/// Scaled dot-product attention, `softmax(Q·Kᵀ/√d)·V`, softmax over the key axis.
///
/// `q` is `B×T×d`, `k` and `v` are `B×T'×d`.
pub fn attention<'g, T: Scalar>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
) -> Result<Var<'g, T>> {
    Ok(attention_weighted(q, k, v)?.0)
}

fn attention_weighted<'g, T: Scalar>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
        return Err(Error::dim(
            "attention",
            format!("expected 3-D q, k, v, got {qs:?}, {ks:?}, {vs:?}"),
        ));
    }
    if qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
        return Err(Error::dim(
            "attention",
            format!("incompatible q {qs:?}, k {ks:?}, v {vs:?}"),
        ));
    }
    let scale = 1.0 / (qs[2] as f64).sqrt();
    let weights = q.bmm(k.transpose_last()?)?.scale(scale)?.softmax(2)?;
    Ok((weights.bmm(v)?, weights))
}

/// Self-attention over a token sequence with learned `wq`, `wk`, `wv`.
fn branch_attention<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    prefix: &str,
    x: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let proj = |p: &str| -> Result<Var<'g, T>> {
        x.linear(b.param(&format!("{prefix}.{p}.weight"))?, None)
    };
    attention(proj("wq")?, proj("wk")?, proj("wv")?)
}

/// Linear + sigmoid layers: `B×n → B×d_model`.
pub fn raw_mlp<'g, T: Scalar>(b: &Bound<'g, '_, T>, raw: Var<'g, T>) -> Result<Var<'g, T>> {
    let n = b.config().raw_len;
    let shape = raw.shape();
    if shape.len() != 2 || shape[1] != n {
        return Err(Error::dim(
            "raw_branch",
            format!("raw input {shape:?} does not match length {n}"),
        ));
    }
    let mut h = raw;
    for i in 0..b.config().mlp_layers {
        let w = b.param(&format!("raw.mlp.{i}.weight"))?;
        let bias = b.param(&format!("raw.mlp.{i}.bias"))?;
        h = h.linear(w, Some(bias))?.sigmoid()?;
    }
    Ok(h)
}

/// MLP, layer norm, then single-token attention: `B×n → B×1×d_model`.
pub fn raw_branch<'g, T: Scalar>(b: &Bound<'g, '_, T>, raw: Var<'g, T>) -> Result<Var<'g, T>> {
    let h = raw_mlp(b, raw)?;
    let h = h.layer_norm(
        b.param("raw.norm.gamma")?,
        b.param("raw.norm.beta")?,
        b.config().ln_eps,
    )?;
    let batch = h.shape()[0];
    let token = h.reshape(vec![batch, 1, b.config().d_model])?;
    branch_attention(b, "raw.attn", token)
}

/// Conv stages and global average pool: `B×K×H×W → B×C_last`.
pub fn vision_features<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    charts: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let c = b.config();
    let expected = [c.charts(), c.height, c.width];
    let shape = charts.shape();
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::dim(
            "vision_branch",
            format!("charts {shape:?} do not match K×H×W {expected:?}"),
        ));
    }
    let mut x = charts;
    for i in 0..c.conv_channels.len() {
        let w = b.param(&format!("vision.conv.{i}.weight"))?;
        let bias = b.param(&format!("vision.conv.{i}.bias"))?;
        x = x.conv2d(w, bias, 1, 1)?;
        x = b.batchnorm(x, i)?.relu()?.maxpool2d(2, 2)?;
    }
    x.global_avgpool()
}

/// Conv features, projection, then single-token attention: `B×1×d_model`.
pub fn vision_branch<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    charts: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let f = vision_features(b, charts)?;
    let f = f.linear(b.param("vision.proj.weight")?, Some(b.param("vision.proj.bias")?))?;
    let batch = f.shape()[0];
    let token = f.reshape(vec![batch, 1, b.config().d_model])?;
    branch_attention(b, "vision.attn", token)
}

/// Multi-head self-attention of block `layer` on `x[B×T×d]`.
///
/// Returns the output projection and the attention weights `(B·h)×T×T`.
pub fn multi_head_attention<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    layer: usize,
    x: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>)> {
    let shape = x.shape();
    let (batch, tokens, d) = (shape[0], shape[1], shape[2]);
    let heads = b.config().heads;
    let dh = d / heads;
    let pre = format!("fusion.{layer}.attn");
    let split = |p: &str| -> Result<Var<'g, T>> {
        x.linear(b.param(&format!("{pre}.{p}.weight"))?, None)?
            .reshape(vec![batch, tokens, heads, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(vec![batch * heads, tokens, dh])
    };
    let (out, weights) = attention_weighted(split("wq")?, split("wk")?, split("wv")?)?;
    let merged = out
        .reshape(vec![batch, heads, tokens, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(vec![batch, tokens, d])?;
    Ok((merged.linear(b.param(&format!("{pre}.wo.weight"))?, None)?, weights))
}

/// Concatenates the branch tokens and applies the pre-norm residual blocks.
pub fn fusion_transformer<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    output1: Var<'g, T>,
    output2: Var<'g, T>,
) -> Result<Var<'g, T>> {
    let d = b.config().d_model;
    for (name, o) in [("output1", output1), ("output2", output2)] {
        let s = o.shape();
        if s.len() != 3 || s[1] != 1 || s[2] != d {
            return Err(Error::dim(
                "fusion_transformer",
                format!("{name} has shape {s:?}, expected B×1×{d}"),
            ));
        }
    }
    let eps = b.config().ln_eps;
    let mut x = concat(&[output1, output2], 1)?;
    for l in 0..b.config().fusion_blocks {
        let p = |s: &str| b.param(&format!("fusion.{l}.{s}"));
        let h = x.layer_norm(p("ln1.gamma")?, p("ln1.beta")?, eps)?;
        x = x.add(multi_head_attention(b, l, h)?.0)?;
        let h = x.layer_norm(p("ln2.gamma")?, p("ln2.beta")?, eps)?;
        let h = h
            .linear(p("ffn.0.weight")?, Some(p("ffn.0.bias")?))?
            .relu()?
            .linear(p("ffn.1.weight")?, Some(p("ffn.1.bias")?))?;
        x = x.add(h)?;
    }
    Ok(x)
}

fn head<'g, T: Scalar>(b: &Bound<'g, '_, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    x.linear(b.param("head.weight")?, Some(b.param("head.bias")?))
}

fn tokens_to_vec<'g, T: Scalar>(readout: Readout, tokens: Var<'g, T>) -> Result<Var<'g, T>> {
    match readout {
        Readout::Mean => tokens.mean_axis(1),
        Readout::First => {
            let s = tokens.shape();
            tokens.narrow(1, 0, 1)?.reshape(vec![s[0], s[2]])
        }
    }
}

/// Predicted q on the output grid, `B×G`.
pub fn predict<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    inputs: &Inputs<T>,
    variant: Variant,
) -> Result<Var<'g, T>> {
    let g = b.graph();
    let raw = g.constant(inputs.raw.clone());
    let charts = match (variant.uses_charts(), &inputs.charts) {
        (true, Some(c)) => Some(g.constant(c.clone())),
        (true, None) => {
            return Err(Error::dim("predict", "multimodal variant needs chart images"));
        }
        (false, _) => None,
    };
    predict_vars(b, raw, charts, variant)
}

/// [`predict`] on graph nodes, so gradients can reach the inputs.
pub fn predict_vars<'g, T: Scalar>(
    b: &Bound<'g, '_, T>,
    raw: Var<'g, T>,
    charts: Option<Var<'g, T>>,
    variant: Variant,
) -> Result<Var<'g, T>> {
    match variant {
        Variant::MlpOnly => predict_mlp_only(b, raw),
        Variant::MlpAttn => predict_mlp_attn(b, raw),
        Variant::Multimodal => {
            let charts = charts
                .ok_or_else(|| Error::dim("predict", "multimodal variant needs chart images"))?;
            if charts.shape().first() != raw.shape().first() {
                return Err(Error::dim(
                    "predict",
                    format!(
                        "raw batch {:?} and charts {:?} disagree on B",
                        raw.shape(),
                        charts.shape()
                    ),
                ));
            }
            let o1 = raw_branch(b, raw)?;
            let o2 = vision_branch(b, charts)?;
            let fused = fusion_transformer(b, o1, o2)?;
            head(b, tokens_to_vec(b.config().readout, fused)?)
        }
    }
}

/// Raw MLP straight into the head.
pub fn predict_mlp_only<'g, T: Scalar>(b: &Bound<'g, '_, T>, raw: Var<'g, T>) -> Result<Var<'g, T>> {
    head(b, raw_mlp(b, raw)?)
}

/// Raw-branch token into the head.
pub fn predict_mlp_attn<'g, T: Scalar>(b: &Bound<'g, '_, T>, raw: Var<'g, T>) -> Result<Var<'g, T>> {
    let t = raw_branch(b, raw)?;
    let s = t.shape();
    head(b, t.reshape(vec![s[0], s[2]])?)
}

/// Mean squared error over all elements.
pub fn mse_loss<'g, T: Scalar>(pred: Var<'g, T>, gt: Var<'g, T>) -> Result<Var<'g, T>> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(
            "mse_loss",
            format!("prediction {:?} and target {:?} differ", pred.shape(), gt.shape()),
        ));
    }
    let diff = pred.sub(gt)?;
    diff.mul(diff)?.mean()
}
