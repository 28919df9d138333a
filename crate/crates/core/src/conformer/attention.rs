//! Multi-head scaled dot-product attention with an optional relative
//! position term, as a single tape primitive.
//!
//! For each segment and head, with `p_r` the projected encoding of offset
//! `r = i - j`:
//!
//! ```text
//! s_ij = (q_i . k_j + q_i . p_(i-j)) / sqrt(d_head)
//! a_ij = softmax_j(s_ij)
//! o_i  = sum_j a_ij v_j
//! ```

use crate::error::{Error, Result};
use crate::tensor::{CustomBackward, Segments, Tape, Tensor, Var};

#[derive(Clone, Debug)]
struct Layout {
    heads: usize,
    d: usize,
    dh: usize,
    /// Rows in the position table are offsets `-(half - 1) ..= half - 1`.
    half: usize,
    segments: Segments,
}

impl Layout {
    fn scale(&self) -> f64 {
        1.0 / (self.dh as f64).sqrt()
    }

    fn pos_row(&self, i: usize, j: usize) -> usize {
        i + self.half - 1 - j
    }
}

/// Attention probabilities, laid out per segment then head as row-major
/// `T x T` blocks.
fn weights(layout: &Layout, q: &[f64], k: &[f64], p: Option<&[f64]>) -> Vec<f64> {
    let (d, dh) = (layout.d, layout.dh);
    let scale = layout.scale();
    let mut out = Vec::new();
    for seg in layout.segments.iter() {
        let t = seg.len();
        for h in 0..layout.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..t {
                let qi = &q[(seg.start + i) * d..][cols.clone()];
                let mut row: Vec<f64> = (0..t)
                    .map(|j| {
                        let kj = &k[(seg.start + j) * d..][cols.clone()];
                        let mut s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                        if let Some(p) = p {
                            let pr = &p[layout.pos_row(i, j) * d..][cols.clone()];
                            s += qi.iter().zip(pr).map(|(a, b)| a * b).sum::<f64>();
                        }
                        s * scale
                    })
                    .collect();
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                out.extend(row.iter().map(|v| v / z));
            }
        }
    }
    out
}

struct AttentionRule {
    layout: Layout,
    probs: Vec<f64>,
    has_pos: bool,
}

impl CustomBackward for AttentionRule {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(
        &self,
        grad: &[f64],
        inputs: &[&Tensor],
        _output: &Tensor,
    ) -> Vec<Option<Vec<f64>>> {
        let l = &self.layout;
        let (d, dh, scale) = (l.d, l.dh, l.scale());
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let p = self.has_pos.then(|| inputs[3].data());
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        let mut dp = p.map(|p| vec![0.0; p.len()]);
        let mut block = 0;
        for seg in l.segments.iter() {
            let t = seg.len();
            for h in 0..l.heads {
                let c0 = h * dh;
                let a = &self.probs[block..block + t * t];
                block += t * t;
                for i in 0..t {
                    let gi = &grad[(seg.start + i) * d + c0..][..dh];
                    let mut da = vec![0.0; t];
                    for j in 0..t {
                        let vj = &v[(seg.start + j) * d + c0..][..dh];
                        da[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let aij = a[i * t + j];
                        let dvj = &mut dv[(seg.start + j) * d + c0..][..dh];
                        dvj.iter_mut().zip(gi).for_each(|(o, g)| *o += aij * g);
                    }
                    let dot: f64 = (0..t).map(|j| a[i * t + j] * da[j]).sum();
                    let qi_off = (seg.start + i) * d + c0;
                    for j in 0..t {
                        let ds = a[i * t + j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj_off = (seg.start + j) * d + c0;
                        for c in 0..dh {
                            dq[qi_off + c] += ds * k[kj_off + c];
                            dk[kj_off + c] += ds * q[qi_off + c];
                        }
                        if let (Some(p), Some(dp)) = (p, dp.as_mut()) {
                            let pr = l.pos_row(i, j) * d + c0;
                            for c in 0..dh {
                                dq[qi_off + c] += ds * p[pr + c];
                                dp[pr + c] += ds * q[qi_off + c];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![Some(dq), Some(dk), Some(dv)];
        if let Some(dp) = dp {
            out.push(Some(dp));
        }
        out
    }
}

fn layout_for(
    tape: &Tape,
    q: Var,
    k: Var,
    v: Var,
    pos: Option<Var>,
    heads: usize,
    segments: &Segments,
) -> Result<Layout> {
    let (rows, d) = tape.value(q).dims2()?;
    for other in [k, v] {
        if tape.shape(other) != [rows, d] {
            return Err(Error::Shape {
                op: "attention",
                lhs: vec![rows, d],
                rhs: tape.shape(other).to_vec(),
            });
        }
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::invalid(format!(
            "{heads} heads do not divide width {d}"
        )));
    }
    if segments.total() != rows {
        return Err(Error::invalid(format!(
            "segments cover {} frames but attention input has {rows}",
            segments.total()
        )));
    }
    let half = match pos {
        Some(p) => {
            let (pr, pd) = tape.value(p).dims2()?;
            if pd != d || pr % 2 == 0 || pr.div_ceil(2) < segments.max_len() {
                return Err(Error::Shape {
                    op: "attention position table",
                    lhs: vec![2 * segments.max_len() - 1, d],
                    rhs: vec![pr, pd],
                });
            }
            pr.div_ceil(2)
        }
        None => segments.max_len(),
    };
    Ok(Layout {
        heads,
        d,
        dh: d / heads,
        half,
        segments: segments.clone(),
    })
}

/// Records multi-head attention over `q`, `k`, `v` (`[frames x d]`).
/// `pos`, when given, is a `[(2L - 1) x d]` table of projected relative
/// encodings with `L` at least the longest segment.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    pos: Option<Var>,
    heads: usize,
    segments: &Segments,
) -> Result<Var> {
    let layout = layout_for(tape, q, k, v, pos, heads, segments)?;
    let probs = weights(
        &layout,
        tape.value(q).data(),
        tape.value(k).data(),
        pos.map(|p| tape.value(p).data()),
    );
    let (d, dh) = (layout.d, layout.dh);
    let vd = tape.value(v).data();
    let mut out = vec![0.0; segments.total() * d];
    let mut block = 0;
    for seg in segments.iter() {
        let t = seg.len();
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..t {
                let oi = (seg.start + i) * d + c0;
                for j in 0..t {
                    let a = probs[block + i * t + j];
                    let vj = (seg.start + j) * d + c0;
                    for c in 0..dh {
                        out[oi + c] += a * vd[vj + c];
                    }
                }
            }
            block += t * t;
        }
    }
    let output = Tensor::new(vec![segments.total(), d], out)?;
    let mut inputs = vec![q, k, v];
    inputs.extend(pos);
    let rule = AttentionRule {
        layout,
        probs,
        has_pos: pos.is_some(),
    };
    Ok(tape.custom(&inputs, output, Box::new(rule)))
}

/// The attention probabilities [`attention`] would use, one `T x T`
/// row-major matrix per (segment, head).
pub fn attention_probs(
    tape: &Tape,
    q: Var,
    k: Var,
    pos: Option<Var>,
    heads: usize,
    segments: &Segments,
) -> Result<Vec<Vec<f64>>> {
    let layout = layout_for(tape, q, k, k, pos, heads, segments)?;
    let flat = weights(
        &layout,
        tape.value(q).data(),
        tape.value(k).data(),
        pos.map(|p| tape.value(p).data()),
    );
    let mut out = Vec::new();
    let mut off = 0;
    for seg in segments.iter() {
        for _ in 0..heads {
            let n = seg.len() * seg.len();
            out.push(flat[off..off + n].to_vec());
            off += n;
        }
    }
    Ok(out)
}
