//! Learnable building blocks shared by the aggregators, the memory updater,
//! and the prediction heads.
//!
//! Every block owns [`ParamId`]s into a [`ParamStore`] and evaluates on a
//! [`Tape`], so the same code serves training, inference, and gradient checks.
//! Inputs are row-batched: a block applied to `[n × d_in]` treats each row
//! independently unless stated otherwise.

use crate::error::{Error, Result};
use crate::numcore::{Array, ParamId, ParamStore, Rng, Tape, Var};

/// `y = x · Wᵀ + b` with `W` stored `[out × in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(params: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let w = params.add_uniform(format!("{name}.w"), &[d_out, d_in], d_in, rng);
        let b = params.add_uniform(format!("{name}.b"), &[d_out], d_in, rng);
        Linear {
            w,
            b: Some(b),
            d_in,
            d_out,
        }
    }

    pub fn without_bias(params: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let w = params.add_uniform(format!("{name}.w"), &[d_out, d_in], d_in, rng);
        Linear {
            w,
            b: None,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// `cos(ω·Δt + φ)` per output column.
///
/// Frequencies start at `10^(-9k/(d-1))` so the encoding spans seconds to
/// decades; phases start at zero. Both are learnable.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub omega: ParamId,
    pub phi: ParamId,
    pub dim: usize,
}

impl TimeEncoder {
    pub fn new(params: &mut ParamStore, name: &str, dim: usize) -> Self {
        let omega = (0..dim)
            .map(|k| {
                let e = if dim > 1 { 9.0 * k as f64 / (dim - 1) as f64 } else { 0.0 };
                10f64.powf(-e)
            })
            .collect();
        let omega = params.add(format!("{name}.omega"), Array::vector(omega));
        let phi = params.add_zeros(format!("{name}.phi"), &[dim]);
        TimeEncoder { omega, phi, dim }
    }

    /// One row per entry of `dt`.
    pub fn encode(&self, tape: &mut Tape, dt: Vec<f64>) -> Result<Var> {
        let w = tape.param(self.omega);
        let p = tape.param(self.phi);
        tape.time_encode(dt, w, p)
    }
}

/// Affine map of `concat(mem_u, mem_v, edge_features, time_code)` to the message width.
#[derive(Clone, Debug)]
pub struct MessageFunction {
    pub proj: Linear,
    pub widths: [usize; 4],
}

impl MessageFunction {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        widths: [usize; 4],
        d_message: usize,
        rng: &mut Rng,
    ) -> Self {
        let d_in = widths.iter().sum();
        MessageFunction {
            proj: Linear::new(params, name, d_in, d_message, rng),
            widths,
        }
    }

    pub fn d_message(&self) -> usize {
        self.proj.d_out
    }

    pub fn build(&self, tape: &mut Tape, mem_u: Var, mem_v: Var, edge: Var, time_code: Var) -> Result<Var> {
        let parts = [mem_u, mem_v, edge, time_code];
        for (part, (&want, label)) in parts
            .iter()
            .zip(self.widths.iter().zip(["source memory", "target memory", "edge features", "time code"]))
        {
            let got = tape.value(*part).cols();
            if got != want {
                return Err(Error::Dimension(format!("message {label} has width {got}, expected {want}")));
            }
        }
        let x = tape.concat_cols(&parts)?;
        self.proj.forward(tape, x)
    }
}

/// Gated recurrent unit with the update `h' = (1 - z) ⊙ h + z ⊙ h̃`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

impl GruCell {
    pub fn new(params: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut Rng) -> Self {
        let mut w = |g: &str| params.add_uniform(format!("{name}.w_{g}"), &[d_h, d_in], d_h, rng);
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |g: &str| params.add_uniform(format!("{name}.u_{g}"), &[d_h, d_h], d_h, rng);
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let mut b = |g: &str| params.add_uniform(format!("{name}.b_{g}"), &[d_h], d_h, rng);
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        GruCell {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            d_in,
            d_h,
        }
    }

    fn gate(&self, tape: &mut Tape, x: Var, h: Var, w: ParamId, u: ParamId, b: ParamId) -> Result<Var> {
        let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
        let xw = tape.linear(x, w, Some(b))?;
        let hu = tape.matmul_nt(h, u)?;
        tape.add(xw, hu)
    }

    /// One step for every row: `x` is `[n × d_in]`, `h` is `[n × d_h]`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let (xc, hc) = (tape.value(x).cols(), tape.value(h).cols());
        if xc != self.d_in || hc != self.d_h {
            return Err(Error::Dimension(format!(
                "GRU cell expects input width {} and state width {}, got {xc} and {hc}",
                self.d_in, self.d_h
            )));
        }
        let z = self.gate(tape, x, h, self.w_z, self.u_z, self.b_z)?;
        let z = tape.sigmoid(z);
        let r = self.gate(tape, x, h, self.w_r, self.u_r, self.b_r)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h)?;
        let cand = self.gate(tape, x, rh, self.w_h, self.u_h, self.b_h)?;
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, cand)?;
        tape.add(old, new)
    }
}

/// Output of [`BiGru::encode`].
pub struct BiGruStates {
    /// `[n × 2·d_h]`; row `i` is `concat(forward_i, backward_i)`.
    pub hidden: Var,
    /// The last row of `hidden`, `[1 × 2·d_h]`.
    pub last: Var,
}

/// Two independent GRU cells read a sequence left to right and right to left.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGru {
    pub fn new(params: &mut ParamStore, name: &str, d_in: usize, d_h: usize, rng: &mut Rng) -> Self {
        BiGru {
            forward: GruCell::new(params, &format!("{name}.fwd"), d_in, d_h, rng),
            backward: GruCell::new(params, &format!("{name}.bwd"), d_in, d_h, rng),
        }
    }

    pub fn d_out(&self) -> usize {
        2 * self.forward.d_h
    }

    /// Full hidden sequence of one `[n × d_in]` sequence.
    pub fn encode(&self, tape: &mut Tape, seq: Var) -> Result<BiGruStates> {
        let n = tape.value(seq).rows();
        if n == 0 {
            return Err(Error::Contract("BiGRU over an empty sequence".into()));
        }
        let d_h = self.forward.d_h;
        let rows: Vec<Var> = (0..n).map(|i| tape.rows(seq, &[i])).collect::<Result<_>>()?;

        let mut h = tape.constant(Array::zeros(&[1, d_h]));
        let mut fwd = Vec::with_capacity(n);
        for &x in &rows {
            h = self.forward.step(tape, x, h)?;
            fwd.push(h);
        }
        let mut h = tape.constant(Array::zeros(&[1, d_h]));
        let mut bwd = vec![h; n];
        for i in (0..n).rev() {
            h = self.backward.step(tape, rows[i], h)?;
            bwd[i] = h;
        }
        let per_row: Vec<Var> = (0..n)
            .map(|i| tape.concat_cols(&[fwd[i], bwd[i]]))
            .collect::<Result<_>>()?;
        let hidden = tape.concat_rows(&per_row)?;
        Ok(BiGruStates {
            hidden,
            last: per_row[n - 1],
        })
    }

    /// Last-position states of many sequences at once.
    ///
    /// `packed` stacks the sequences row-wise; `lengths[s]` rows belong to
    /// sequence `s`. Returns `[S × 2·d_h]` where row `s` equals
    /// `encode(sequence s).last`. At the last position the backward pass has
    /// consumed only the final element, so it is one step from zero state.
    pub fn encode_last_packed(&self, tape: &mut Tape, packed: Var, lengths: &[usize]) -> Result<Var> {
        if lengths.iter().any(|&l| l == 0) {
            return Err(Error::Contract("BiGRU over an empty sequence".into()));
        }
        let total: usize = lengths.iter().sum();
        if tape.value(packed).rows() != total {
            return Err(Error::Dimension(format!(
                "packed sequences have {} rows, lengths sum to {total}",
                tape.value(packed).rows()
            )));
        }
        let mut offsets = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in lengths {
            offsets.push(acc);
            acc += l;
        }
        let s = lengths.len();
        let d_h = self.forward.d_h;
        let max_len = lengths.iter().copied().max().unwrap_or(0);

        let mut h = tape.constant(Array::zeros(&[s, d_h]));
        for step in 0..max_len {
            let index: Vec<Option<usize>> = (0..s)
                .map(|i| (step < lengths[i]).then(|| offsets[i] + step))
                .collect();
            if index.iter().all(Option::is_some) {
                let x = tape.gather_rows(packed, index)?;
                h = self.forward.step(tape, x, h)?;
            } else {
                let active: Vec<bool> = index.iter().map(Option::is_some).collect();
                let x = tape.gather_rows(packed, index)?;
                let next = self.forward.step(tape, x, h)?;
                h = tape.select_rows(active, next, h)?;
            }
        }
        let last_rows: Vec<usize> = (0..s).map(|i| offsets[i] + lengths[i] - 1).collect();
        let x_last = tape.rows(packed, &last_rows)?;
        let zero = tape.constant(Array::zeros(&[s, d_h]));
        let b = self.backward.step(tape, x_last, zero)?;
        tape.concat_cols(&[h, b])
    }
}

/// Layer-norm gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(params: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: params.add_full(format!("{name}.gain"), &[d], 1.0),
            bias: params.add_zeros(format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Which tokens each query may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMask {
    All,
    /// Key padding: token `j` is visible to every query iff `keys[j]`.
    Keys(Vec<bool>),
    /// Row-major `n × n` allow matrix.
    Pairs(Vec<bool>),
}

impl AttentionMask {
    fn allow_matrix(&self, n: usize) -> Result<Option<Vec<bool>>> {
        match self {
            AttentionMask::All => Ok(None),
            AttentionMask::Keys(k) if k.len() == n => Ok(Some((0..n).flat_map(|_| k.iter().copied()).collect())),
            AttentionMask::Pairs(p) if p.len() == n * n => Ok(Some(p.clone())),
            _ => Err(Error::Dimension(format!("attention mask does not fit {n} tokens"))),
        }
    }
}

/// Pre-norm encoder block: `x + MHSA(LN(x))`, then `+ FFN(LN(·))`.
///
/// No positional encoding: the block is equivariant to token permutations.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub heads: usize,
    pub d_model: usize,
    pub ln_attn: LayerNorm,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub dropout: f64,
}

/// Output of [`TransformerBlock::forward_with_weights`].
pub struct AttentionTrace {
    pub output: Var,
    /// One `[n × n]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl TransformerBlock {
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(TransformerBlock {
            heads,
            d_model,
            ln_attn: LayerNorm::new(params, &format!("{name}.ln_attn"), d_model),
            w_q: Linear::new(params, &format!("{name}.q"), d_model, d_model, rng),
            w_k: Linear::new(params, &format!("{name}.k"), d_model, d_model, rng),
            w_v: Linear::new(params, &format!("{name}.v"), d_model, d_model, rng),
            w_o: Linear::new(params, &format!("{name}.o"), d_model, d_model, rng),
            ln_ff: LayerNorm::new(params, &format!("{name}.ln_ff"), d_model),
            ff_in: Linear::new(params, &format!("{name}.ff_in"), d_model, d_ff, rng),
            ff_out: Linear::new(params, &format!("{name}.ff_out"), d_ff, d_model, rng),
            dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape, tokens: Var, mask: &AttentionMask) -> Result<Var> {
        Ok(self.forward_with_weights(tape, tokens, mask)?.output)
    }

    pub fn forward_with_weights(&self, tape: &mut Tape, tokens: Var, mask: &AttentionMask) -> Result<AttentionTrace> {
        let n = tape.value(tokens).rows();
        if n == 0 {
            return Err(Error::Contract("transformer over zero tokens".into()));
        }
        if tape.value(tokens).cols() != self.d_model {
            return Err(Error::Dimension(format!(
                "tokens have width {}, block expects {}",
                tape.value(tokens).cols(),
                self.d_model
            )));
        }
        let allow = mask.allow_matrix(n)?;
        let x = self.ln_attn.forward(tape, tokens)?;
        let q = self.w_q.forward(tape, x)?;
        let k = self.w_k.forward(tape, x)?;
        let v = self.w_v.forward(tape, x)?;
        let d_head = self.d_model / self.heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * d_head, (h + 1) * d_head);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (tape.slice_cols(q, lo, hi)?, tape.slice_cols(k, lo, hi)?, tape.slice_cols(v, lo, hi)?)
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let a = match &allow {
                None => tape.softmax(scores)?,
                Some(m) => tape.masked_softmax(scores, m.clone())?,
            };
            weights.push(a);
            outs.push(tape.matmul(a, vh)?);
        }
        let joined = if self.heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let attn = self.w_o.forward(tape, joined)?;
        let attn = tape.dropout(attn, self.dropout);
        let x1 = tape.add(tokens, attn)?;

        let y = self.ln_ff.forward(tape, x1)?;
        let y = self.ff_in.forward(tape, y)?;
        let y = tape.relu(y);
        let y = self.ff_out.forward(tape, y)?;
        let y = tape.dropout(y, self.dropout);
        let output = tape.add(x1, y)?;
        Ok(AttentionTrace { output, weights })
    }

    /// Zeroes both residual branches so the block is the identity map.
    pub fn neutralize(&self, params: &mut ParamStore) {
        for lin in [&self.w_o, &self.ff_out] {
            let w = params.get(lin.w).shape().to_vec();
            params.set(lin.w, Array::zeros(&w));
            if let Some(b) = lin.b {
                let s = params.get(b).shape().to_vec();
                params.set(b, Array::zeros(&s));
            }
        }
    }
}
