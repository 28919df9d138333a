use super::attention::attention;
use super::candidate::CandidateOp;
use super::params::{Forward, NormStats, ParamId, ParamStore};
use super::posenc::{absolute_encoding, relative_table};
use crate::error::{Error, Result};
use crate::tensor::{Segments, Var};

/// Affine layer normalization.
#[derive(Clone, Debug)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        NormParams {
            gain: store.constant(format!("{prefix}.gain"), &[d], 1.0),
            bias: store.constant(format!("{prefix}.bias"), &[d], 0.0),
        }
    }

    pub fn apply(&self, ctx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.param(self.gain), ctx.param(self.bias));
        ctx.tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    pub fn new(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Affine {
            w: store.uniform(format!("{prefix}.w"), &[fan_in, fan_out], fan_in),
            b: store.constant(format!("{prefix}.b"), &[fan_out], 0.0),
        }
    }

    pub fn apply(&self, ctx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        ctx.tape.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct MhsaParams {
    pub heads: usize,
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub out: Affine,
    /// Projection of the relative sinusoidal table, `[d x d]`.
    pub pos: ParamId,
}

#[derive(Clone, Debug)]
pub struct ConvParams {
    pub kernel: usize,
    pub dilation: usize,
    /// Pointwise expansion to `2d` ahead of the GLU gate.
    pub expand: Affine,
    /// Depthwise taps, `[kernel x d]`.
    pub depthwise: ParamId,
    pub bn_gain: ParamId,
    pub bn_bias: ParamId,
    pub bn_mean: ParamId,
    pub bn_var: ParamId,
    pub project: Affine,
}

#[derive(Clone, Debug)]
pub struct FfnParams {
    pub hidden: usize,
    pub up: Affine,
    pub down: Affine,
}

/// Learnable tensors of one instantiated candidate operation.
#[derive(Clone, Debug)]
pub enum ModuleParams {
    Mhsa(MhsaParams),
    Identity,
    Conv(ConvParams),
    Ffn(FfnParams),
}

impl ModuleParams {
    /// Registers the tensors of `op` at width `d` under `prefix`.
    pub fn build(store: &mut ParamStore, prefix: &str, op: CandidateOp, d: usize) -> Result<Self> {
        Ok(match op {
            CandidateOp::Mhsa { heads } => {
                if heads == 0 || !d.is_multiple_of(heads) {
                    return Err(Error::invalid(format!(
                        "{heads} heads do not divide d_model {d}"
                    )));
                }
                ModuleParams::Mhsa(MhsaParams {
                    heads,
                    query: Affine::new(store, &format!("{prefix}.query"), d, d),
                    key: Affine::new(store, &format!("{prefix}.key"), d, d),
                    value: Affine::new(store, &format!("{prefix}.value"), d, d),
                    out: Affine::new(store, &format!("{prefix}.out"), d, d),
                    pos: store.uniform(format!("{prefix}.pos"), &[d, d], d),
                })
            }
            CandidateOp::Identity => ModuleParams::Identity,
            CandidateOp::Conv { kernel, dilation } => {
                if kernel % 2 == 0 {
                    return Err(Error::invalid(format!(
                        "convolution kernel must be odd, got {kernel}"
                    )));
                }
                ModuleParams::Conv(ConvParams {
                    kernel,
                    dilation,
                    expand: Affine::new(store, &format!("{prefix}.expand"), d, 2 * d),
                    depthwise: store.uniform(format!("{prefix}.depthwise"), &[kernel, d], kernel),
                    bn_gain: store.constant(format!("{prefix}.bn.gain"), &[d], 1.0),
                    bn_bias: store.constant(format!("{prefix}.bn.bias"), &[d], 0.0),
                    bn_mean: store.buffer(format!("{prefix}.bn.running_mean"), &[d], 0.0),
                    bn_var: store.buffer(format!("{prefix}.bn.running_var"), &[d], 1.0),
                    project: Affine::new(store, &format!("{prefix}.project"), d, d),
                })
            }
            CandidateOp::Ffn { hidden } => ModuleParams::Ffn(FfnParams {
                hidden,
                up: Affine::new(store, &format!("{prefix}.up"), d, hidden),
                down: Affine::new(store, &format!("{prefix}.down"), hidden, d),
            }),
        })
    }

    pub fn op(&self) -> CandidateOp {
        match self {
            ModuleParams::Mhsa(p) => CandidateOp::Mhsa { heads: p.heads },
            ModuleParams::Identity => CandidateOp::Identity,
            ModuleParams::Conv(p) => CandidateOp::Conv {
                kernel: p.kernel,
                dilation: p.dilation,
            },
            ModuleParams::Ffn(p) => CandidateOp::Ffn { hidden: p.hidden },
        }
    }

    /// Learnable tensors (running statistics excluded).
    pub fn weight_ids(&self) -> Vec<ParamId> {
        let affine = |a: &Affine| [a.w, a.b];
        match self {
            ModuleParams::Mhsa(p) => [&p.query, &p.key, &p.value, &p.out]
                .into_iter()
                .flat_map(affine)
                .chain([p.pos])
                .collect(),
            ModuleParams::Identity => vec![],
            ModuleParams::Conv(p) => affine(&p.expand)
                .into_iter()
                .chain([p.depthwise, p.bn_gain, p.bn_bias])
                .chain(affine(&p.project))
                .collect(),
            ModuleParams::Ffn(p) => affine(&p.up).into_iter().chain(affine(&p.down)).collect(),
        }
    }

    pub fn weight_count(&self, store: &ParamStore) -> usize {
        self.weight_ids()
            .iter()
            .map(|&id| store.get(id).len())
            .sum()
    }

    /// The residual branch `f(h)` applied to already-normalized input `h`;
    /// `None` for identity.
    pub fn branch(
        &self,
        ctx: &mut Forward<'_>,
        h: Var,
        segments: &Segments,
    ) -> Result<Option<Var>> {
        Ok(match self {
            ModuleParams::Mhsa(p) => Some(mhsa_branch(ctx, h, p, segments)?),
            ModuleParams::Identity => None,
            ModuleParams::Conv(p) => Some(conv_branch(ctx, h, p, segments)?),
            ModuleParams::Ffn(p) => Some(ffn_branch(ctx, h, p)?),
        })
    }
}

fn mhsa_branch(ctx: &mut Forward<'_>, h: Var, p: &MhsaParams, segments: &Segments) -> Result<Var> {
    let q = p.query.apply(ctx, h)?;
    let k = p.key.apply(ctx, h)?;
    let v = p.value.apply(ctx, h)?;
    let pos = if ctx.relative_position {
        let d = ctx.tape.shape(h)[1];
        let table = ctx.tape.constant(relative_table(segments.max_len(), d));
        let w = ctx.param(p.pos);
        Some(ctx.tape.matmul(table, w)?)
    } else {
        None
    };
    let a = attention(&mut ctx.tape, q, k, v, pos, p.heads, segments)?;
    let o = p.out.apply(ctx, a)?;
    ctx.dropout(o)
}

fn conv_branch(ctx: &mut Forward<'_>, h: Var, p: &ConvParams, segments: &Segments) -> Result<Var> {
    let e = p.expand.apply(ctx, h)?;
    let g = ctx.tape.glu(e)?;
    let kernel = ctx.param(p.depthwise);
    let c = ctx.tape.depthwise_conv1d(g, kernel, p.dilation, segments)?;
    let (gain, bias) = (ctx.param(p.bn_gain), ctx.param(p.bn_bias));
    let n = if ctx.train {
        let (n, mean, var) = ctx.tape.batch_norm(c, gain, bias)?;
        ctx.norm_stats.push(NormStats {
            mean_id: p.bn_mean,
            var_id: p.bn_var,
            mean,
            var,
        });
        n
    } else {
        let mean = ctx.store().get(p.bn_mean).data().to_vec();
        let var = ctx.store().get(p.bn_var).data().to_vec();
        ctx.tape.batch_norm_eval(c, gain, bias, &mean, &var)?
    };
    let s = ctx.tape.swish(n);
    let o = p.project.apply(ctx, s)?;
    ctx.dropout(o)
}

fn ffn_branch(ctx: &mut Forward<'_>, h: Var, p: &FfnParams) -> Result<Var> {
    let u = p.up.apply(ctx, h)?;
    let u = ctx.tape.swish(u);
    let u = ctx.dropout(u)?;
    let o = p.down.apply(ctx, u)?;
    ctx.dropout(o)
}

fn residual(
    ctx: &mut Forward<'_>,
    x: Var,
    norm: &NormParams,
    module: &ModuleParams,
    segments: &Segments,
) -> Result<Var> {
    let h = norm.apply(ctx, x)?;
    match module.branch(ctx, h, segments)? {
        Some(f) => ctx.tape.add(x, f),
        None => Ok(x),
    }
}

/// Pre-norm self-attention module: `x + dropout(out(attn(LN(x))))`.
pub fn mhsa_forward(
    ctx: &mut Forward<'_>,
    x: Var,
    norm: &NormParams,
    p: &MhsaParams,
    segments: &Segments,
) -> Result<Var> {
    let h = norm.apply(ctx, x)?;
    let f = mhsa_branch(ctx, h, p, segments)?;
    ctx.tape.add(x, f)
}

/// Pre-norm convolution module: layer norm, pointwise expansion, GLU,
/// depthwise convolution, batch norm, swish, pointwise projection, dropout,
/// residual.
pub fn conv_module_forward(
    ctx: &mut Forward<'_>,
    x: Var,
    norm: &NormParams,
    p: &ConvParams,
    segments: &Segments,
) -> Result<Var> {
    let h = norm.apply(ctx, x)?;
    let f = conv_branch(ctx, h, p, segments)?;
    ctx.tape.add(x, f)
}

/// Pre-norm feed-forward module: `x + dropout(W2 dropout(swish(W1 LN(x))))`.
pub fn ffn_forward(ctx: &mut Forward<'_>, x: Var, norm: &NormParams, p: &FfnParams) -> Result<Var> {
    let h = norm.apply(ctx, x)?;
    let f = ffn_branch(ctx, h, p)?;
    ctx.tape.add(x, f)
}

/// Output of one candidate in its slot: `x` for identity, otherwise
/// `x + branch(LN(x))`.
pub fn candidate_forward(
    ctx: &mut Forward<'_>,
    x: Var,
    norm: &NormParams,
    module: &ModuleParams,
    segments: &Segments,
) -> Result<Var> {
    residual(ctx, x, norm, module, segments)
}

/// Input projection from feature width to `d` plus absolute positional
/// encoding.
#[derive(Clone, Debug)]
pub struct EmbedParams {
    pub proj: Affine,
    pub d: usize,
}

impl EmbedParams {
    pub fn new(store: &mut ParamStore, prefix: &str, feature_dim: usize, d: usize) -> Self {
        EmbedParams {
            proj: Affine::new(store, &format!("{prefix}.proj"), feature_dim, d),
            d,
        }
    }
}

pub fn embed_input(
    ctx: &mut Forward<'_>,
    features: Var,
    p: &EmbedParams,
    segments: &Segments,
) -> Result<Var> {
    let fdim = ctx.store().get(p.proj.w).shape()[0];
    let shape = ctx.tape.shape(features).to_vec();
    if shape.len() != 2 || shape[1] != fdim || shape[0] != segments.total() {
        return Err(Error::Shape {
            op: "embed_input",
            lhs: vec![segments.total(), fdim],
            rhs: shape,
        });
    }
    let x = p.proj.apply(ctx, features)?;
    let pe = ctx.tape.constant(absolute_encoding(segments, p.d));
    let x = ctx.tape.add(x, pe)?;
    ctx.dropout(x)
}
