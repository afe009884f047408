//! Neural building blocks on top of [`Graph`].
//!
//! Batched sequences are laid out time-major: a batch of `B` sequences of
//! `K` steps is a `(K*B) x width` matrix whose row `k*B + b` holds step `k`
//! of sequence `b`. Weight matrices are stored `in x out` and applied as
//! `x * W`, so a row-vector input maps to a row-vector output.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Large negative score added to masked attention logits.
pub const MASK_NEG: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{prefix}.W"), in_dim, out_dim, in_dim, rng);
        let b = bias.then(|| store.add_zeros(format!("{prefix}.b"), 1, out_dim));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_tiled(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Token embedding table (`vocab_size x dim`).
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    /// Rows are drawn from U(-1, 1): a one-hot input has fan-in 1.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = store.add_uniform(name, vocab_size, dim, 1, rng);
        Self {
            table,
            vocab_size,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("embedding lookup"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::OutOfVocabulary {
                id: bad,
                vocab: self.vocab_size,
            });
        }
        let t = g.param(self.table);
        g.gather_rows(t, ids)
    }

    /// Expected embedding under each row's distribution: `probs * table`.
    pub fn soft_forward(&self, g: &mut Graph, probs: Var) -> Result<Var> {
        let width = g.value(probs).cols();
        if width != self.vocab_size {
            return Err(Error::VocabMisalignment {
                expected: self.vocab_size,
                got: width,
            });
        }
        let t = g.param(self.table);
        g.matmul(probs, t)
    }
}

/// Standard GRU cell:
///
/// ```text
/// z  = s(x Wz + h Uz + bz)
/// r  = s(x Wr + h Ur + br)
/// h~ = tanh(x Wh + (r * h) Uh + bh)
/// h' = (1 - z) * h + z * h~
/// ```
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
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Input-side gate pre-activations `x W + b` for a block of rows.
#[derive(Clone, Copy, Debug)]
pub struct GruInputProj {
    pub z: Var,
    pub r: Var,
    pub h: Var,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let (i, h) = (input_dim, hidden_dim);
        let mut w =
            |n: &str, rows: usize| store.add_uniform(format!("{prefix}.{n}"), rows, h, rows, rng);
        let w_z = w("W_z", i);
        let w_r = w("W_r", i);
        let w_h = w("W_h", i);
        let u_z = w("U_z", h);
        let u_r = w("U_r", h);
        let u_h = w("U_h", h);
        let b_z = store.add_zeros(format!("{prefix}.b_z"), 1, h);
        let b_r = store.add_zeros(format!("{prefix}.b_r"), 1, h);
        let b_h = store.add_zeros(format!("{prefix}.b_h"), 1, h);
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            input_dim,
            hidden_dim,
        }
    }

    pub fn project_input(&self, g: &mut Graph, x: Var) -> Result<GruInputProj> {
        if g.value(x).cols() != self.input_dim {
            return Err(shape_err(
                "gru_cell",
                format!(
                    "input width {} for input_dim {}",
                    g.value(x).cols(),
                    self.input_dim
                ),
            ));
        }
        let mut proj = |w: ParamId, b: ParamId| -> Result<Var> {
            let w = g.param(w);
            let b = g.param(b);
            let y = g.matmul(x, w)?;
            g.add_tiled(y, b)
        };
        Ok(GruInputProj {
            z: proj(self.w_z, self.b_z)?,
            r: proj(self.w_r, self.b_r)?,
            h: proj(self.w_h, self.b_h)?,
        })
    }

    /// One step from precomputed input projections.
    pub fn step_projected(&self, g: &mut Graph, xp: GruInputProj, h: Var) -> Result<Var> {
        if g.value(h).cols() != self.hidden_dim {
            return Err(shape_err(
                "gru_cell",
                format!(
                    "hidden width {} for hidden_dim {}",
                    g.value(h).cols(),
                    self.hidden_dim
                ),
            ));
        }
        let u_z = g.param(self.u_z);
        let u_r = g.param(self.u_r);
        let u_h = g.param(self.u_h);
        let hz = g.matmul(h, u_z)?;
        let z = g.add(xp.z, hz)?;
        let z = g.sigmoid(z);
        let hr = g.matmul(h, u_r)?;
        let r = g.add(xp.r, hr)?;
        let r = g.sigmoid(r);
        let rh = g.mul(r, h)?;
        let hh = g.matmul(rh, u_h)?;
        let cand = g.add(xp.h, hh)?;
        let cand = g.tanh(cand);
        let delta = g.sub(cand, h)?;
        let upd = g.mul(z, delta)?;
        g.add(h, upd)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let xp = self.project_input(g, x)?;
        self.step_projected(g, xp, h)
    }
}

/// Output of a bidirectional encoder.
#[derive(Clone, Copy, Debug)]
pub struct BiGruOutput {
    /// `(K*B) x 2H`, time-major; row = `[h_fwd[k], h_bwd[k]]`.
    pub outputs: Var,
    /// `B x 2H`: `[h_fwd[last], h_bwd[0]]`.
    pub context: Var,
}

#[derive(Clone, Debug)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiGru {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fwd: GruCell::new(
                store,
                &format!("{prefix}.gru_fwd"),
                input_dim,
                hidden_dim,
                rng,
            ),
            bwd: GruCell::new(
                store,
                &format!("{prefix}.gru_bwd"),
                input_dim,
                hidden_dim,
                rng,
            ),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    /// Encodes `batch` sequences of `steps` rows each from time-major `x`.
    ///
    /// `valid[k][b]` marks real (non-padding) steps; padded steps carry the
    /// previous hidden state through unchanged, so with padding only at
    /// sequence ends the context equals that of the unpadded sequence.
    pub fn encode(
        &self,
        g: &mut Graph,
        x: Var,
        steps: usize,
        batch: usize,
        valid: Option<&[Vec<bool>]>,
    ) -> Result<BiGruOutput> {
        if steps == 0 || batch == 0 {
            return Err(Error::EmptyInput("bigru_encode"));
        }
        if g.value(x).rows() != steps * batch {
            return Err(shape_err(
                "bigru_encode",
                format!(
                    "{} rows for {steps} steps x {batch} sequences",
                    g.value(x).rows()
                ),
            ));
        }
        let hdim = self.fwd.hidden_dim;
        let masks: Option<Vec<Var>> = valid.map(|v| {
            (0..steps)
                .map(|k| {
                    let data = (0..batch)
                        .flat_map(|b| {
                            let m = if v[k][b] { 1.0 } else { 0.0 };
                            std::iter::repeat_n(m, hdim)
                        })
                        .collect();
                    g.constant(Tensor::matrix(batch, hdim, data))
                })
                .collect()
        });

        let run = |g: &mut Graph,
                   cell: &GruCell,
                   order: &mut dyn Iterator<Item = usize>|
         -> Result<Vec<Option<Var>>> {
            let proj = cell.project_input(g, x)?;
            let zero = g.constant(Tensor::zeros(batch, hdim));
            let mut h = zero;
            let mut out = vec![None; steps];
            for k in order {
                let slice = |g: &mut Graph, v: Var| g.slice_rows(v, k * batch, batch);
                let xp = GruInputProj {
                    z: slice(g, proj.z)?,
                    r: slice(g, proj.r)?,
                    h: slice(g, proj.h)?,
                };
                let h_new = cell.step_projected(g, xp, h)?;
                h = match &masks {
                    Some(m) => {
                        let d = g.sub(h_new, h)?;
                        let d = g.mul(d, m[k])?;
                        g.add(h, d)?
                    }
                    None => h_new,
                };
                out[k] = Some(h);
            }
            Ok(out)
        };
        let fwd = run(g, &self.fwd, &mut (0..steps))?;
        let bwd = run(g, &self.bwd, &mut (0..steps).rev())?;
        let mut rows = Vec::with_capacity(steps);
        for k in 0..steps {
            let (f, b) = (fwd[k].expect("filled"), bwd[k].expect("filled"));
            rows.push(g.concat_cols(&[f, b])?);
        }
        let outputs = g.concat_rows(&rows)?;
        let context = g.concat_cols(&[fwd[steps - 1].expect("filled"), bwd[0].expect("filled")])?;
        Ok(BiGruOutput { outputs, context })
    }
}

/// Additive attention: `s_k = v^T tanh(W q + U key_k + b)`.
#[derive(Clone, Debug)]
pub struct Bahdanau {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attn_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `B x key_dim`
    pub context: Var,
    /// `B x K`, rows sum to one.
    pub weights: Var,
}

impl Bahdanau {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        query_dim: usize,
        key_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_uniform(format!("{prefix}.W"), query_dim, attn_dim, query_dim, rng);
        let u = store.add_uniform(format!("{prefix}.U"), key_dim, attn_dim, key_dim, rng);
        let b = store.add_zeros(format!("{prefix}.b"), 1, attn_dim);
        let v = store.add_uniform(format!("{prefix}.v"), attn_dim, 1, attn_dim, rng);
        Self {
            w,
            u,
            b,
            v,
            query_dim,
            key_dim,
            attn_dim,
        }
    }

    /// `U key_k + b` for every key row; reused across decoder steps.
    pub fn project_keys(&self, g: &mut Graph, keys: Var) -> Result<Var> {
        if g.value(keys).cols() != self.key_dim {
            return Err(shape_err(
                "bahdanau_attend",
                format!(
                    "key width {} for key_dim {}",
                    g.value(keys).cols(),
                    self.key_dim
                ),
            ));
        }
        let u = g.param(self.u);
        let b = g.param(self.b);
        let uk = g.matmul(keys, u)?;
        g.add_tiled(uk, b)
    }

    /// Attends `query` (B x query_dim) over `steps` time-major keys.
    ///
    /// `score_mask`, when given, is a constant `B x K` additive mask.
    pub fn attend(
        &self,
        g: &mut Graph,
        query: Var,
        keys_proj: Var,
        values: Var,
        steps: usize,
        score_mask: Option<Var>,
    ) -> Result<Attended> {
        if steps == 0 {
            return Err(Error::EmptyInput("bahdanau_attend: no keys"));
        }
        let batch = g.value(query).rows();
        if g.value(keys_proj).rows() != steps * batch {
            return Err(shape_err(
                "bahdanau_attend",
                format!(
                    "{} key rows for {steps} steps x {batch} queries",
                    g.value(keys_proj).rows()
                ),
            ));
        }
        let w = g.param(self.w);
        let v = g.param(self.v);
        let wq = g.matmul(query, w)?;
        let e = g.add_tiled(keys_proj, wq)?;
        let e = g.tanh(e);
        let s = g.matmul(e, v)?;
        let s = g.reshape(s, steps, batch)?;
        let mut s = g.transpose(s);
        if let Some(m) = score_mask {
            s = g.add(s, m)?;
        }
        let weights = g.softmax_rows(s);
        let context = g.weighted_time_sum(weights, values)?;
        Ok(Attended { context, weights })
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::filled(1, dim, 1.0));
        let beta = store.add_zeros(format!("{prefix}.beta"), 1, dim);
        Self {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt, self.eps)
    }
}

/// Scaled dot-product attention with `heads` heads over block-diagonal
/// batches: queries `(blocks*M) x d`, keys/values `(blocks*N) x d`, both
/// batch-major.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} attention heads do not divide model dimension {dim}"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{prefix}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{prefix}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{prefix}.v"), dim, dim, true, rng),
            o: Linear::new(store, &format!("{prefix}.o"), dim, dim, true, rng),
            heads,
            dim,
        })
    }

    /// Returns the output and the per-head attention weights
    /// (`(blocks*M) x N` each).
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        keys_values: Var,
        blocks: usize,
        score_mask: Option<Var>,
    ) -> Result<(Var, Vec<Var>)> {
        for v in [queries, keys_values] {
            if g.value(v).cols() != self.dim {
                return Err(shape_err(
                    "attention",
                    format!(
                        "width {} for model dimension {}",
                        g.value(v).cols(),
                        self.dim
                    ),
                ));
            }
        }
        let q = self.q.forward(g, queries)?;
        let k = self.k.forward(g, keys_values)?;
        let v = self.v.forward(g, keys_values)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh)?,
                    g.slice_cols(k, h * dh, dh)?,
                    g.slice_cols(v, h * dh, dh)?,
                )
            };
            let s = g.block_matmul_nt(qh, kh, blocks)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = score_mask {
                s = g.add(s, m)?;
            }
            let p = g.softmax_rows(s);
            weights.push(p);
            outs.push(g.block_matmul(p, vh, blocks)?);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        Ok((self.o.forward(g, cat)?, weights))
    }
}

/// Pre-norm transformer decoder layer: label self-attention, cross-attention
/// over sequence features, position-wise feed-forward; each sub-block is
/// `x + dropout(f(norm(x)))`.
#[derive(Clone, Debug)]
pub struct TransformerDecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub norm_self: LayerNorm,
    pub norm_cross: LayerNorm,
    pub norm_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub dim: usize,
}

impl TransformerDecoderLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.self_attn"),
                dim,
                heads,
                rng,
            )?,
            cross_attn: MultiHeadAttention::new(
                store,
                &format!("{prefix}.cross_attn"),
                dim,
                heads,
                rng,
            )?,
            norm_self: LayerNorm::new(store, &format!("{prefix}.norm_self"), dim),
            norm_cross: LayerNorm::new(store, &format!("{prefix}.norm_cross"), dim),
            norm_ff: LayerNorm::new(store, &format!("{prefix}.norm_ff"), dim),
            ff_in: Linear::new(store, &format!("{prefix}.ff_in"), dim, ff_dim, true, rng),
            ff_out: Linear::new(store, &format!("{prefix}.ff_out"), ff_dim, dim, true, rng),
            dim,
        })
    }

    /// `labels`: `(blocks*L) x d`; `features`: `(blocks*K) x d`, both
    /// batch-major. `feature_mask`: additive `(blocks*L) x K`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        labels: Var,
        features: Var,
        blocks: usize,
        feature_mask: Option<Var>,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Var> {
        if g.value(labels).rows() == 0 || blocks == 0 {
            return Err(Error::EmptyInput("transformer_decoder_layer: no labels"));
        }
        let n = self.norm_self.forward(g, labels)?;
        let (sa, _) = self.self_attn.forward(g, n, n, blocks, None)?;
        let sa = g.dropout(sa, dropout, rng)?;
        let x = g.add(labels, sa)?;

        let n = self.norm_cross.forward(g, x)?;
        let (ca, _) = self
            .cross_attn
            .forward(g, n, features, blocks, feature_mask)?;
        let ca = g.dropout(ca, dropout, rng)?;
        let x = g.add(x, ca)?;

        let n = self.norm_ff.forward(g, x)?;
        let h = self.ff_in.forward(g, n)?;
        let h = g.relu(h);
        let h = self.ff_out.forward(g, h)?;
        let h = g.dropout(h, dropout, rng)?;
        g.add(x, h)
    }
}
