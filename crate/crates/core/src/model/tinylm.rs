//! A small pre-norm decoder-only transformer with hand-written backward pass.
//!
//! Parameters live in one flat buffer described by a [`Layout`], which keeps
//! the optimizer, gradient checks and checkpoints independent of the network
//! structure.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};
use crate::seed;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Maximum sequence length (size of the learned position table).
    pub context: usize,
}

impl ModelConfig {
    /// d=64, two layers, two heads, 256 positions.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            context: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.context == 0 {
            return Err(Error::Invalid(format!("model dimensions must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w_fc: usize,
    b_fc: usize,
    w_proj: usize,
    b_proj: usize,
}

/// Offsets of every tensor in the flat parameter buffer.
///
/// The key projection has no bias: adding a constant to every key shifts all
/// scores of a query equally and leaves the softmax unchanged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
    wte: usize,
    wpe: usize,
    blocks: Vec<Block>,
    lnf_g: usize,
    lnf_b: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize, init: Init, decay: bool| {
            let at = offset;
            tensors.push(TensorInfo {
                name,
                offset: at,
                rows,
                cols,
                init,
                decay,
            });
            offset += rows * cols;
            at
        };
        let wte = add("wte".into(), cfg.vocab_size, d, Init::Normal, true);
        let wpe = add("wpe".into(), cfg.context, d, Init::Normal, true);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("h{l}.{s}");
            blocks.push(Block {
                ln1_g: add(p("ln1.g"), 1, d, Init::Ones, false),
                ln1_b: add(p("ln1.b"), 1, d, Init::Zeros, false),
                wq: add(p("attn.wq"), d, d, Init::Normal, true),
                bq: add(p("attn.bq"), 1, d, Init::Zeros, false),
                wk: add(p("attn.wk"), d, d, Init::Normal, true),
                wv: add(p("attn.wv"), d, d, Init::Normal, true),
                bv: add(p("attn.bv"), 1, d, Init::Zeros, false),
                wo: add(p("attn.wo"), d, d, Init::Normal, true),
                bo: add(p("attn.bo"), 1, d, Init::Zeros, false),
                ln2_g: add(p("ln2.g"), 1, d, Init::Ones, false),
                ln2_b: add(p("ln2.b"), 1, d, Init::Zeros, false),
                w_fc: add(p("mlp.w_fc"), 4 * d, d, Init::Normal, true),
                b_fc: add(p("mlp.b_fc"), 1, 4 * d, Init::Zeros, false),
                w_proj: add(p("mlp.w_proj"), d, 4 * d, Init::Normal, true),
                b_proj: add(p("mlp.b_proj"), 1, d, Init::Zeros, false),
            });
        }
        let lnf_g = add("lnf.g".into(), 1, d, Init::Ones, false);
        let lnf_b = add("lnf.b".into(), 1, d, Init::Zeros, false);
        Layout {
            tensors,
            total: offset,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm<T: Real> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<T>,
}

// ---------------------------------------------------------------------------
// dense kernels (row-major)

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// `out[i] = x[i] · Wᵀ + b` with `W` stored as `out_dim × in_dim`.
fn linear<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, rows: usize, in_dim: usize, out_dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * out_dim];
    for i in 0..rows {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        let oi = &mut out[i * out_dim..(i + 1) * out_dim];
        for (o, slot) in oi.iter_mut().enumerate() {
            let bias = b.map_or(T::zero(), |b| b[o]);
            *slot = bias + dot(xi, &w[o * in_dim..(o + 1) * in_dim]);
        }
    }
    out
}

/// `dx[i] += dout[i] · W`
fn linear_grad_input<T: Real>(dout: &[T], w: &[T], dx: &mut [T], rows: usize, in_dim: usize, out_dim: usize) {
    for i in 0..rows {
        let dxi = &mut dx[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let g = dout[i * out_dim + o];
            if g != T::zero() {
                axpy(dxi, g, &w[o * in_dim..(o + 1) * in_dim]);
            }
        }
    }
}

/// `dW += doutᵀ · x`
fn linear_grad_weight<T: Real>(dout: &[T], x: &[T], dw: &mut [T], rows: usize, in_dim: usize, out_dim: usize) {
    for i in 0..rows {
        let xi = &x[i * in_dim..(i + 1) * in_dim];
        for o in 0..out_dim {
            let g = dout[i * out_dim + o];
            if g != T::zero() {
                axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g, xi);
            }
        }
    }
}

fn bias_grad<T: Real>(dout: &[T], db: &mut [T], rows: usize, out_dim: usize) {
    for i in 0..rows {
        for (b, g) in db.iter_mut().zip(&dout[i * out_dim..(i + 1) * out_dim]) {
            *b += *g;
        }
    }
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &[T], g: &[T], b: &[T], rows: usize, d: usize) -> (Vec<T>, LnCache<T>) {
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::of(1.0 / d as f64);
    for i in 0..rows {
        let xi = &x[i * d..(i + 1) * d];
        let mean = xi.iter().copied().sum::<T>() * inv_d;
        let var = xi.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd[i] = r;
        for k in 0..d {
            let h = (xi[k] - mean) * r;
            xhat[i * d + k] = h;
            out[i * d + k] = g[k] * h + b[k];
        }
    }
    (out, LnCache { xhat, rstd })
}

/// Accumulates the input gradient into `dx` and parameter gradients into
/// `dg`/`db`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Real>(
    dout: &[T],
    cache: &LnCache<T>,
    g: &[T],
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
    rows: usize,
    d: usize,
) {
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..rows {
        let doi = &dout[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for k in 0..d {
            dg[k] += doi[k] * xh[k];
            db[k] += doi[k];
            dxhat[k] = doi[k] * g[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * xh[k];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        let dxi = &mut dx[i * d..(i + 1) * d];
        for k in 0..d {
            dxi[k] += r * (dxhat[k] - mean_dxhat - xh[k] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Real>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Real>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let th = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * dinner
}

struct BlockCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × t × t`, lower triangle used.
    probs: Vec<T>,
    att: Vec<T>,
    ln2: LnCache<T>,
    b: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
}

pub(crate) struct ForwardCache<T> {
    t: usize,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    y: Vec<T>,
}

impl<T: Real> TinyLm<T> {
    /// Weights and embeddings from N(0, 0.02²), biases zero, norm gains one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for t in &layout.tensors {
            for p in &mut params[t.range()] {
                *p = match t.init {
                    Init::Normal => T::of(normal.sample(&mut rng)),
                    Init::Zeros => T::zero(),
                    Init::Ones => T::one(),
                };
            }
        }
        Ok(TinyLm { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Invalid(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(TinyLm { config, layout, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Converts the parameters to another float type.
    pub fn cast<U: Real>(&self) -> TinyLm<U> {
        TinyLm {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    fn slice(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Invalid("empty input sequence".into()));
        }
        if ids.len() > self.config.context {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                context: self.config.context,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Next-token logits, `t × vocab_size` row-major.
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<T>> {
        self.check_ids(ids)?;
        Ok(self.forward_cached(ids).1)
    }

    pub(crate) fn forward_cached(&self, ids: &[usize]) -> (ForwardCache<T>, Vec<T>) {
        let cfg = &self.config;
        let (t, d, h, hd, v) = (ids.len(), cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
        let lay = &self.layout;
        let wte = self.slice(lay.wte, v * d);
        let wpe = self.slice(lay.wpe, cfg.context * d);

        let mut x = vec![T::zero(); t * d];
        for (i, &id) in ids.iter().enumerate() {
            let xi = &mut x[i * d..(i + 1) * d];
            for k in 0..d {
                xi[k] = wte[id * d + k] + wpe[i * d + k];
            }
        }

        let scale = T::of(1.0 / (hd as f64).sqrt());
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for blk in &lay.blocks {
            let (a, ln1) = layer_norm(&x, self.slice(blk.ln1_g, d), self.slice(blk.ln1_b, d), t, d);
            let q = linear(&a, self.slice(blk.wq, d * d), Some(self.slice(blk.bq, d)), t, d, d);
            let k = linear(&a, self.slice(blk.wk, d * d), None, t, d, d);
            let vv = linear(&a, self.slice(blk.wv, d * d), Some(self.slice(blk.bv, d)), t, d, d);

            let mut probs = vec![T::zero(); h * t * t];
            let mut att = vec![T::zero(); t * d];
            for head in 0..h {
                let off = head * hd;
                for i in 0..t {
                    let qi = &q[i * d + off..i * d + off + hd];
                    let row = &mut probs[(head * t + i) * t..(head * t + i) * t + i + 1];
                    let mut max = T::neg_infinity();
                    for (j, s) in row.iter_mut().enumerate() {
                        *s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                        max = max.max(*s);
                    }
                    let mut sum = T::zero();
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let inv = T::one() / sum;
                    let out = &mut att[i * d + off..i * d + off + hd];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s *= inv;
                        axpy(out, *s, &vv[j * d + off..j * d + off + hd]);
                    }
                }
            }
            let o = linear(&att, self.slice(blk.wo, d * d), Some(self.slice(blk.bo, d)), t, d, d);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += *oi;
            }

            let (b, ln2) = layer_norm(&x, self.slice(blk.ln2_g, d), self.slice(blk.ln2_b, d), t, d);
            let f = linear(
                &b,
                self.slice(blk.w_fc, 4 * d * d),
                Some(self.slice(blk.b_fc, 4 * d)),
                t,
                d,
                4 * d,
            );
            let g: Vec<T> = f.iter().map(|&z| gelu(z)).collect();
            let m = linear(
                &g,
                self.slice(blk.w_proj, 4 * d * d),
                Some(self.slice(blk.b_proj, d)),
                t,
                4 * d,
                d,
            );
            for (xi, mi) in x.iter_mut().zip(&m) {
                *xi += *mi;
            }
            blocks.push(BlockCache {
                ln1,
                a,
                q,
                k,
                v: vv,
                probs,
                att,
                ln2,
                b,
                f,
                g,
            });
        }

        let (y, lnf) = layer_norm(&x, self.slice(lay.lnf_g, d), self.slice(lay.lnf_b, d), t, d);
        let logits = linear(&y, wte, None, t, d, v);
        (ForwardCache { t, blocks, lnf, y }, logits)
    }

    /// Accumulates parameter gradients for the given logit gradients into
    /// `grads` (same layout as `params`).
    pub(crate) fn backward(&self, ids: &[usize], cache: &ForwardCache<T>, dlogits: &[T], grads: &mut [T]) {
        let cfg = &self.config;
        let (t, d, h, hd, v) = (cache.t, cfg.d_model, cfg.n_heads, cfg.head_dim(), cfg.vocab_size);
        let lay = &self.layout;
        let wte = self.slice(lay.wte, v * d);

        let mut dy = vec![T::zero(); t * d];
        linear_grad_input(dlogits, wte, &mut dy, t, d, v);
        linear_grad_weight(dlogits, &cache.y, &mut grads[lay.wte..lay.wte + v * d], t, d, v);

        let mut dx = vec![T::zero(); t * d];
        {
            let (dg, db) = grads[lay.lnf_g..lay.lnf_g + 2 * d].split_at_mut(d);
            layer_norm_backward(&dy, &cache.lnf, self.slice(lay.lnf_g, d), &mut dx, dg, db, t, d);
        }

        let scale = T::of(1.0 / (hd as f64).sqrt());
        for (blk, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch; dx is the gradient w.r.t. the block output.
            let mut dg = vec![T::zero(); t * 4 * d];
            linear_grad_input(&dx, self.slice(blk.w_proj, 4 * d * d), &mut dg, t, 4 * d, d);
            linear_grad_weight(&dx, &bc.g, &mut grads[blk.w_proj..blk.w_proj + 4 * d * d], t, 4 * d, d);
            bias_grad(&dx, &mut grads[blk.b_proj..blk.b_proj + d], t, d);
            for (dgi, &fi) in dg.iter_mut().zip(&bc.f) {
                *dgi *= gelu_grad(fi);
            }
            let df = dg;
            let mut db = vec![T::zero(); t * d];
            linear_grad_input(&df, self.slice(blk.w_fc, 4 * d * d), &mut db, t, d, 4 * d);
            linear_grad_weight(&df, &bc.b, &mut grads[blk.w_fc..blk.w_fc + 4 * d * d], t, d, 4 * d);
            bias_grad(&df, &mut grads[blk.b_fc..blk.b_fc + 4 * d], t, 4 * d);
            {
                let (dgain, dbias) = grads[blk.ln2_g..blk.ln2_g + 2 * d].split_at_mut(d);
                layer_norm_backward(&db, &bc.ln2, self.slice(blk.ln2_g, d), &mut dx, dgain, dbias, t, d);
            }

            // attention branch; dx is now the gradient w.r.t. the residual
            // stream between the two branches.
            let mut datt = vec![T::zero(); t * d];
            linear_grad_input(&dx, self.slice(blk.wo, d * d), &mut datt, t, d, d);
            linear_grad_weight(&dx, &bc.att, &mut grads[blk.wo..blk.wo + d * d], t, d, d);
            bias_grad(&dx, &mut grads[blk.bo..blk.bo + d], t, d);

            let mut dq = vec![T::zero(); t * d];
            let mut dk = vec![T::zero(); t * d];
            let mut dv = vec![T::zero(); t * d];
            let mut dp = vec![T::zero(); t];
            for head in 0..h {
                let off = head * hd;
                for i in 0..t {
                    let p = &bc.probs[(head * t + i) * t..(head * t + i) * t + i + 1];
                    let dout = &datt[i * d + off..i * d + off + hd];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        dp[j] = dot(dout, &bc.v[j * d + off..j * d + off + hd]);
                        weighted += p[j] * dp[j];
                        axpy(&mut dv[j * d + off..j * d + off + hd], p[j], dout);
                    }
                    let qi = &bc.q[i * d + off..i * d + off + hd];
                    for j in 0..=i {
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        if ds != T::zero() {
                            axpy(
                                &mut dq[i * d + off..i * d + off + hd],
                                ds,
                                &bc.k[j * d + off..j * d + off + hd],
                            );
                            axpy(&mut dk[j * d + off..j * d + off + hd], ds, qi);
                        }
                    }
                }
            }

            let mut da = vec![T::zero(); t * d];
            linear_grad_input(&dq, self.slice(blk.wq, d * d), &mut da, t, d, d);
            linear_grad_weight(&dq, &bc.a, &mut grads[blk.wq..blk.wq + d * d], t, d, d);
            bias_grad(&dq, &mut grads[blk.bq..blk.bq + d], t, d);
            linear_grad_input(&dk, self.slice(blk.wk, d * d), &mut da, t, d, d);
            linear_grad_weight(&dk, &bc.a, &mut grads[blk.wk..blk.wk + d * d], t, d, d);
            linear_grad_input(&dv, self.slice(blk.wv, d * d), &mut da, t, d, d);
            linear_grad_weight(&dv, &bc.a, &mut grads[blk.wv..blk.wv + d * d], t, d, d);
            bias_grad(&dv, &mut grads[blk.bv..blk.bv + d], t, d);
            {
                let (dgain, dbias) = grads[blk.ln1_g..blk.ln1_g + 2 * d].split_at_mut(d);
                layer_norm_backward(&da, &bc.ln1, self.slice(blk.ln1_g, d), &mut dx, dgain, dbias, t, d);
            }
        }

        for (i, &id) in ids.iter().enumerate() {
            let dxi = &dx[i * d..(i + 1) * d];
            for k in 0..d {
                grads[lay.wte + id * d + k] += dxi[k];
                grads[lay.wpe + i * d + k] += dxi[k];
            }
        }
    }
}

/// Row-wise softmax of a `rows × cols` matrix.
pub fn softmax_rows<T: Real>(logits: &[T], cols: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x = *x / sum;
        }
    }
    out
}
