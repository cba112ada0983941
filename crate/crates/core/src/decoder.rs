//! Spatiotemporal decoder at desk scale.
//!
//! Tokens (one per query per frame) and per-frame embeddings flow through
//! three causal attention blocks:
//!
//! ```text
//! tokens ─┬─ CAB-A(tokens, E_img) ─ tokens_a ─┐
//!         └─ CAB-B(tokens, E_geo) ─ G_control ┴─ CAB-C ─ states ─ heads
//! ```
//!
//! Every attention is single-head scaled dot-product with pre-norm residual
//! connections. Information never flows from a later frame to an earlier
//! one, and padded queries are never attended to, so padding is neutral.
//! All activations are generic over [`Real`]; weights stay `f64`.

use crate::annotate::rereference;
use crate::autodiff::{Real, ScalarFn};
use crate::clip::SequenceClip;
use crate::geometry::{CameraIntrinsics, Mat3, Rect, RigidTransform, Vec3};
use crate::losses::{
    grad_check, AnyLoss, BoxParams, CenterLoss, ClipLayout, CornerLoss, DepthLoss, DimLoss, GradCheck, Iou3dLoss, PoseParams,
    SpatialLoss, TemporalLoss, BOX_PARAMS, POSE_PARAMS,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt::Write;

pub const DEFAULT_DIM: usize = 32;
const LN_EPS: f64 = 1e-5;

// ------------------------------------------------------------- tensors

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<R = f64> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R>,
}

impl<R: Real> Matrix<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![R::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn lift(m: &Matrix<f64>) -> Self {
        Self { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&v| R::cst(v)).collect() }
    }

    pub fn values(&self) -> Matrix<f64> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v.value()).collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[R] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [R] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn plus(&self, o: &Self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().zip(&o.data).map(|(&a, &b)| a + b).collect() }
    }
}

impl Matrix<f64> {
    /// Largest absolute elementwise difference over rows selected by `keep`.
    pub fn max_abs_diff_rows(&self, o: &Self, keep: impl Fn(usize) -> bool) -> f64 {
        let mut worst = 0.0f64;
        for i in (0..self.rows).filter(|&i| keep(i)) {
            for (a, b) in self.row(i).iter().zip(o.row(i)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

/// Query tokens laid out as frames × tokens-per-frame × feature dim, with a
/// validity flag per token. Invalid (padded) rows hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenTensor<R = f64> {
    pub frames: usize,
    pub per_frame: usize,
    pub values: Matrix<R>,
    pub valid: Vec<bool>,
}

impl<R: Real> TokenTensor<R> {
    pub fn new(frames: usize, per_frame: usize, values: Matrix<R>, valid: Vec<bool>) -> Result<Self> {
        if values.rows != frames * per_frame || valid.len() != values.rows {
            return Err(Error::DimMismatch(format!(
                "{frames}x{per_frame} tokens vs {} rows and {} validity flags",
                values.rows,
                valid.len()
            )));
        }
        Ok(Self { frames, per_frame, values, valid })
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn frame_of(&self, row: usize) -> usize {
        row / self.per_frame
    }

    pub fn lift(t: &TokenTensor<f64>) -> Self {
        Self { frames: t.frames, per_frame: t.per_frame, values: Matrix::lift(&t.values), valid: t.valid.clone() }
    }

    pub fn values_f64(&self) -> TokenTensor<f64> {
        TokenTensor { frames: self.frames, per_frame: self.per_frame, values: self.values.values(), valid: self.valid.clone() }
    }

    fn zero_padding(&mut self) {
        for i in 0..self.values.rows {
            if !self.valid[i] {
                self.values.row_mut(i).fill(R::zero());
            }
        }
    }
}

/// Per-frame embeddings: frames × embeddings-per-frame × feature dim.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTensor<R = f64> {
    pub frames: usize,
    pub per_frame: usize,
    pub values: Matrix<R>,
}

impl<R: Real> EmbeddingTensor<R> {
    pub fn new(frames: usize, per_frame: usize, values: Matrix<R>) -> Result<Self> {
        if values.rows != frames * per_frame {
            return Err(Error::DimMismatch(format!("{frames}x{per_frame} embeddings vs {} rows", values.rows)));
        }
        Ok(Self { frames, per_frame, values })
    }

    pub fn dim(&self) -> usize {
        self.values.cols
    }

    pub fn lift(e: &EmbeddingTensor<f64>) -> Self {
        Self { frames: e.frames, per_frame: e.per_frame, values: Matrix::lift(&e.values) }
    }

    pub fn values_f64(&self) -> EmbeddingTensor<f64> {
        EmbeddingTensor { frames: self.frames, per_frame: self.per_frame, values: self.values.values() }
    }

    /// Stacks two embedding sets frame by frame (`self` first).
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.frames != other.frames || self.dim() != other.dim() {
            return Err(Error::DimMismatch("embedding sets differ in frames or dim".into()));
        }
        let per_frame = self.per_frame + other.per_frame;
        let mut data = Vec::with_capacity(self.values.data.len() + other.values.data.len());
        let d = self.dim();
        for t in 0..self.frames {
            data.extend_from_slice(&self.values.data[t * self.per_frame * d..(t + 1) * self.per_frame * d]);
            data.extend_from_slice(&other.values.data[t * other.per_frame * d..(t + 1) * other.per_frame * d]);
        }
        Self::new(self.frames, per_frame, Matrix::from_vec(self.frames * per_frame, d, data)?)
    }
}

// --------------------------------------------------------------- masks

/// Granularity of causal masking among query tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Full attention within a frame, causal across frames.
    #[default]
    FrameBlock,
    /// Strictly position-causal over flattened tokens (self included).
    TokenCausal,
}

/// Boolean attention permissions, queries × keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalMask {
    pub rows: usize,
    pub cols: usize,
    pub allow: Vec<bool>,
}

impl CausalMask {
    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    /// Queries grouped `per_query` per frame may see keys grouped
    /// `per_key` per frame from the same or earlier frames.
    pub fn frame_block(frames: usize, per_query: usize, per_key: usize) -> Self {
        let (rows, cols) = (frames * per_query, frames * per_key);
        let allow = (0..rows * cols).map(|x| (x % cols) / per_key <= (x / cols) / per_query).collect();
        Self { rows, cols, allow }
    }

    pub fn token_causal(n: usize) -> Self {
        Self { rows: n, cols: n, allow: (0..n * n).map(|x| x % n <= x / n).collect() }
    }

    /// Forbids keys whose flag is false.
    pub fn with_valid_keys(mut self, valid: &[bool]) -> Self {
        for i in 0..self.rows {
            for (j, ok) in valid.iter().enumerate() {
                if !ok {
                    self.allow[i * self.cols + j] = false;
                }
            }
        }
        self
    }
}

/// Frame-block causal mask over `frames × per_frame` tokens.
pub fn build_causal_mask(frames: usize, per_frame: usize) -> CausalMask {
    CausalMask::frame_block(frames, per_frame, per_frame)
}

fn self_mask(mode: MaskMode, frames: usize, per_frame: usize) -> CausalMask {
    match mode {
        MaskMode::FrameBlock => build_causal_mask(frames, per_frame),
        MaskMode::TokenCausal => CausalMask::token_causal(frames * per_frame),
    }
}

// ----------------------------------------------------------- attention

/// Row-stochastic attention weights `softmax(QKᵀ/√d)` over allowed keys;
/// rows without an allowed key are zero.
pub fn attention_probs<R: Real>(q: &Matrix<R>, k: &Matrix<R>, mask: &CausalMask) -> Result<Matrix<R>> {
    if q.cols != k.cols || mask.rows != q.rows || mask.cols != k.rows {
        return Err(Error::DimMismatch(format!(
            "attention over q {}x{}, k {}x{}, mask {}x{}",
            q.rows, q.cols, k.rows, k.cols, mask.rows, mask.cols
        )));
    }
    let scale = R::cst(1.0 / (q.cols as f64).sqrt());
    let mut out = Matrix::zeros(q.rows, k.rows);
    let mut scores = Vec::with_capacity(k.rows);
    for i in 0..q.rows {
        scores.clear();
        let qi = q.row(i);
        for j in (0..k.rows).filter(|&j| mask.allows(i, j)) {
            let mut s = R::zero();
            for (&a, &b) in qi.iter().zip(k.row(j)) {
                s += a * b;
            }
            scores.push((j, s * scale));
        }
        if scores.is_empty() {
            continue;
        }
        // softmax is shift invariant, so the max enters as a constant
        let m = scores.iter().map(|s| s.1.value()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = R::zero();
        for s in scores.iter_mut() {
            s.1 = (s.1 - R::cst(m)).exp();
            sum += s.1;
        }
        let row = out.row_mut(i);
        for &(j, e) in &scores {
            row[j] = e / sum;
        }
    }
    Ok(out)
}

/// Masked scaled dot-product attention.
pub fn attention<R: Real>(q: &Matrix<R>, k: &Matrix<R>, v: &Matrix<R>, mask: &CausalMask) -> Result<Matrix<R>> {
    if v.rows != k.rows {
        return Err(Error::DimMismatch(format!("{} keys vs {} values", k.rows, v.rows)));
    }
    let p = attention_probs(q, k, mask)?;
    let mut out = Matrix::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        let pi = p.row(i);
        let row = out.row_mut(i);
        for (j, &w) in pi.iter().enumerate() {
            if mask.allows(i, j) {
                for (o, &x) in row.iter_mut().zip(v.row(j)) {
                    *o += w * x;
                }
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------- weights

/// Affine map `x·W + b` with `W` of shape in × out.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Matrix::zeros(input, output), bias: vec![0.0; output] }
    }

    fn random(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (input as f64).sqrt()).expect("positive std");
        let data = (0..input * output).map(|_| normal.sample(rng)).collect();
        Self { weight: Matrix { rows: input, cols: output, data }, bias: vec![0.0; output] }
    }

    pub fn apply_row<R: Real>(&self, x: &[R]) -> Vec<R> {
        let mut out: Vec<R> = self.bias.iter().map(|&b| R::cst(b)).collect();
        for (k, &xk) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.weight.row(k)) {
                if w != 0.0 {
                    *o += xk * R::cst(w);
                }
            }
        }
        out
    }

    pub fn apply<R: Real>(&self, x: &Matrix<R>) -> Matrix<R> {
        let mut data = Vec::with_capacity(x.rows * self.weight.cols);
        for i in 0..x.rows {
            data.extend(self.apply_row(x.row(i)));
        }
        Matrix { rows: x.rows, cols: self.weight.cols, data }
    }
}

/// Row-wise layer normalization with gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gain: vec![1.0; dim], bias: vec![0.0; dim] }
    }

    pub fn apply<R: Real>(&self, x: &Matrix<R>) -> Matrix<R> {
        let n = R::cst(x.cols as f64);
        let mut out = x.clone();
        for i in 0..x.rows {
            let row = out.row_mut(i);
            let mut mean = R::zero();
            for &v in row.iter() {
                mean += v;
            }
            mean /= n;
            let mut var = R::zero();
            for &v in row.iter() {
                var += (v - mean) * (v - mean);
            }
            let inv = R::one() / (var / n + R::cst(LN_EPS)).sqrt();
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * R::cst(self.gain[k]) + R::cst(self.bias[k]);
            }
        }
        out
    }
}

/// Single-head attention projections.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl AttentionWeights {
    fn random(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            wq: Linear::random(dim, dim, rng),
            wk: Linear::random(dim, dim, rng),
            wv: Linear::random(dim, dim, rng),
            wo: Linear::random(dim, dim, rng),
        }
    }

    pub fn forward<R: Real>(&self, queries: &Matrix<R>, keys: &Matrix<R>, mask: &CausalMask) -> Result<Matrix<R>> {
        let a = attention(&self.wq.apply(queries), &self.wk.apply(keys), &self.wv.apply(keys), mask)?;
        Ok(self.wo.apply(&a))
    }
}

/// One causal attention block: token self-attention, then token→embedding
/// and embedding→token cross-attention, each pre-normed with a residual.
#[derive(Clone, Debug, PartialEq)]
pub struct CabWeights {
    pub norm_self: LayerNorm,
    pub self_attn: AttentionWeights,
    pub norm_tokens: LayerNorm,
    pub norm_embed: LayerNorm,
    pub token_to_embed: AttentionWeights,
    pub norm_back_embed: LayerNorm,
    pub norm_back_tokens: LayerNorm,
    pub embed_to_token: AttentionWeights,
}

impl CabWeights {
    pub fn random(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            norm_self: LayerNorm::new(dim),
            self_attn: AttentionWeights::random(dim, rng),
            norm_tokens: LayerNorm::new(dim),
            norm_embed: LayerNorm::new(dim),
            token_to_embed: AttentionWeights::random(dim, rng),
            norm_back_embed: LayerNorm::new(dim),
            norm_back_tokens: LayerNorm::new(dim),
            embed_to_token: AttentionWeights::random(dim, rng),
        }
    }

    /// Zeroes every attention output projection, leaving only residuals.
    pub fn zero_outputs(&mut self) {
        for a in [&mut self.self_attn, &mut self.token_to_embed, &mut self.embed_to_token] {
            a.wo = Linear::zeros(a.wo.weight.rows, a.wo.weight.cols);
        }
    }

    pub fn dim(&self) -> usize {
        self.self_attn.wq.weight.rows
    }
}

pub fn cab_forward<R: Real>(
    tokens: &TokenTensor<R>,
    embeddings: &EmbeddingTensor<R>,
    mode: MaskMode,
    w: &CabWeights,
) -> Result<(TokenTensor<R>, EmbeddingTensor<R>)> {
    let d = w.dim();
    if tokens.dim() != d || embeddings.dim() != d || tokens.frames != embeddings.frames {
        return Err(Error::DimMismatch(format!(
            "block of dim {d} given tokens {}x{}x{} and embeddings {}x{}x{}",
            tokens.frames,
            tokens.per_frame,
            tokens.dim(),
            embeddings.frames,
            embeddings.per_frame,
            embeddings.dim()
        )));
    }
    let (frames, n, m) = (tokens.frames, tokens.per_frame, embeddings.per_frame);

    let mut x = tokens.values.clone();
    let h = w.norm_self.apply(&x);
    let mask = self_mask(mode, frames, n).with_valid_keys(&tokens.valid);
    x = x.plus(&w.self_attn.forward(&h, &h, &mask)?);

    let mut e = embeddings.values.clone();
    let (ht, he) = (w.norm_tokens.apply(&x), w.norm_embed.apply(&e));
    x = x.plus(&w.token_to_embed.forward(&ht, &he, &CausalMask::frame_block(frames, n, m))?);

    let (he, ht) = (w.norm_back_embed.apply(&e), w.norm_back_tokens.apply(&x));
    let back = CausalMask::frame_block(frames, m, n).with_valid_keys(&tokens.valid);
    e = e.plus(&w.embed_to_token.forward(&he, &ht, &back)?);

    let mut out = TokenTensor { frames, per_frame: n, values: x, valid: tokens.valid.clone() };
    out.zero_padding();
    Ok((out, EmbeddingTensor { frames, per_frame: m, values: e }))
}

// ------------------------------------------------------------- decoder

/// Output heads: a per-token box head and a per-frame pose head.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    /// d → (center 3, raw dims 3, yaw).
    pub box_head: Linear,
    /// d → (translation 3, raw quaternion 4, raw fov).
    pub pose_head: Linear,
}

impl Heads {
    /// All-zero weights; the quaternion bias is the identity rotation.
    pub fn zeros(dim: usize) -> Self {
        let mut pose_head = Linear::zeros(dim, POSE_PARAMS);
        pose_head.bias[3] = 1.0;
        Self { box_head: Linear::zeros(dim, BOX_PARAMS), pose_head }
    }

    fn random(dim: usize, rng: &mut impl Rng) -> Self {
        let mut h = Self { box_head: Linear::random(dim, BOX_PARAMS, rng), pose_head: Linear::random(dim, POSE_PARAMS, rng) };
        h.pose_head.bias[3] = 1.0;
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub dim: usize,
    pub mask: MaskMode,
    /// Seed of the ChaCha8 generator drawing the weights.
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM, mask: MaskMode::FrameBlock, seed: 0 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("decoder dim must be positive".into()));
        }
        Ok(())
    }
}

/// Full decoder weights. Every matrix is drawn from N(0, 1/fan_in) by a
/// ChaCha8 generator seeded with the config seed; norms start at identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderWeights {
    pub mode: MaskMode,
    /// Learned box-query embedding added to every valid prompt token.
    pub box_query: Vec<f64>,
    pub cab_a: CabWeights,
    pub cab_b: CabWeights,
    pub cab_c: CabWeights,
    pub heads: Heads,
}

impl DecoderWeights {
    pub fn new(cfg: &DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.5).expect("positive std");
        let box_query = (0..d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            mode: cfg.mask,
            box_query,
            cab_a: CabWeights::random(d, &mut rng),
            cab_b: CabWeights::random(d, &mut rng),
            cab_c: CabWeights::random(d, &mut rng),
            heads: Heads::random(d, &mut rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.box_query.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput<R = f64> {
    pub tokens_a: TokenTensor<R>,
    pub g_control: EmbeddingTensor<R>,
    /// Implicit per-frame, per-query states.
    pub states: TokenTensor<R>,
}

pub fn decoder_forward<R: Real>(
    tokens: &TokenTensor<R>,
    e_img: &EmbeddingTensor<R>,
    e_geo: &EmbeddingTensor<R>,
    w: &DecoderWeights,
) -> Result<DecoderOutput<R>> {
    if e_img.frames != tokens.frames || e_geo.frames != tokens.frames {
        return Err(Error::DimMismatch(format!(
            "{} token frames vs {} image and {} geometry frames",
            tokens.frames, e_img.frames, e_geo.frames
        )));
    }
    if tokens.dim() != w.dim() {
        return Err(Error::DimMismatch(format!("tokens of dim {} for a decoder of dim {}", tokens.dim(), w.dim())));
    }
    let mut input = tokens.clone();
    for i in 0..input.values.rows {
        if input.valid[i] {
            for (v, &q) in input.values.row_mut(i).iter_mut().zip(&w.box_query) {
                *v += R::cst(q);
            }
        }
    }
    let (tokens_a, _) = cab_forward(&input, e_img, w.mode, &w.cab_a)?;
    let (_, g_control) = cab_forward(&input, e_geo, w.mode, &w.cab_b)?;
    let (states, _) = cab_forward(&tokens_a, &g_control, w.mode, &w.cab_c)?;
    Ok(DecoderOutput { tokens_a, g_control, states })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<R = f64> {
    /// Per frame, one box per query slot (padded slots included).
    pub boxes: Vec<Vec<BoxParams<R>>>,
    pub poses: Vec<PoseParams<R>>,
}

pub fn heads_forward<R: Real>(states: &TokenTensor<R>, heads: &Heads) -> HeadOutput<R> {
    let n = states.per_frame;
    let mut boxes = Vec::with_capacity(states.frames);
    let mut poses = Vec::with_capacity(states.frames);
    for t in 0..states.frames {
        let mut frame = Vec::with_capacity(n);
        let mut pooled = vec![R::zero(); states.dim()];
        let mut count = 0usize;
        for i in t * n..(t + 1) * n {
            let row = states.values.row(i);
            let r = heads.box_head.apply_row(row);
            frame.push(BoxParams {
                center: Vec3::new(r[0], r[1], r[2]),
                dims: Vec3::new(r[3].softplus(), r[4].softplus(), r[5].softplus()),
                yaw: r[6],
            });
            if states.valid[i] {
                count += 1;
                for (p, &v) in pooled.iter_mut().zip(row) {
                    *p += v;
                }
            }
        }
        if count > 0 {
            let c = R::cst(count as f64);
            pooled.iter_mut().for_each(|p| *p /= c);
        }
        let r = heads.pose_head.apply_row(&pooled);
        let norm = (r[3] * r[3] + r[4] * r[4] + r[5] * r[5] + r[6] * r[6]).sqrt();
        poses.push(PoseParams {
            translation: Vec3::new(r[0], r[1], r[2]),
            quaternion: [r[3] / norm, r[4] / norm, r[5] / norm, r[6] / norm],
            fov: r[7].softplus(),
        });
        boxes.push(frame);
    }
    HeadOutput { boxes, poses }
}

// -------------------------------------------------------------- inputs

/// Fixed sinusoidal embedding of a few normalized coordinates: feature `k`
/// encodes coordinate `k % n` at frequency `2^(k / 2n)`, alternating sine
/// and cosine every `n` features.
pub fn sinusoidal_embedding(coords: &[f64], dim: usize) -> Vec<f64> {
    let n = coords.len().max(1);
    (0..dim)
        .map(|k| {
            let c = coords.get(k % n).copied().unwrap_or(0.0);
            let pair = k / n;
            let angle = c * std::f64::consts::PI * 2f64.powi((pair / 2) as i32);
            if pair.is_multiple_of(2) {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Embeds a 2D box prompt by its corners normalized to [0, 1].
pub fn prompt_embedding(prompt: &Rect, k: &CameraIntrinsics, dim: usize) -> Vec<f64> {
    let (w, h) = (k.width as f64, k.height as f64);
    sinusoidal_embedding(&[prompt.x0 / w, prompt.y0 / h, prompt.x1 / w, prompt.y1 / h], dim)
}

/// Query tokens of a clip and the instance behind each slot.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedQueries {
    pub tokens: TokenTensor<f64>,
    /// Instance id per frame and slot; `None` for padding.
    pub ids: Vec<Vec<Option<u32>>>,
}

impl PaddedQueries {
    /// Per frame and slot, whether the slot takes part in losses.
    pub fn loss_mask(&self) -> Vec<Vec<bool>> {
        self.ids.iter().map(|f| f.iter().map(Option::is_some).collect()).collect()
    }
}

/// One token per annotated object (ordered by instance id), padded to the
/// largest per-frame count (at least one slot).
pub fn pad_queries(clip: &SequenceClip, dim: usize) -> Result<PaddedQueries> {
    if clip.is_empty() {
        return Err(Error::InvalidInput("cannot build queries for an empty clip".into()));
    }
    let n = clip.frames.iter().map(|f| f.objects.len()).max().unwrap_or(0).max(1);
    let frames = clip.len();
    let mut values = Matrix::zeros(frames * n, dim);
    let mut valid = vec![false; frames * n];
    let mut ids = Vec::with_capacity(frames);
    for (t, frame) in clip.frames.iter().enumerate() {
        let mut objects: Vec<_> = frame.objects.iter().collect();
        objects.sort_by_key(|o| o.instance_id);
        let mut slots = vec![None; n];
        for (s, o) in objects.iter().enumerate() {
            values.row_mut(t * n + s).copy_from_slice(&prompt_embedding(&o.prompt, &frame.intrinsics, dim));
            valid[t * n + s] = true;
            slots[s] = Some(o.instance_id);
        }
        ids.push(slots);
    }
    Ok(PaddedQueries { tokens: TokenTensor::new(frames, n, values, valid)?, ids })
}

/// Image and geometry embeddings of a clip from its depth maps and poses.
///
/// Each frame is cut into `grid × grid` patches. The image embedding encodes
/// a patch's position, mean depth and coverage; the geometry embedding is
/// a depth part (mean, minimum, inverse depth, coverage) followed by a
/// camera part (world direction of the patch ray and camera position).
pub fn clip_embeddings(clip: &SequenceClip, grid: usize, dim: usize) -> Result<(EmbeddingTensor, EmbeddingTensor)> {
    if grid == 0 || clip.is_empty() {
        return Err(Error::InvalidInput("embedding grid and clip must be non-empty".into()));
    }
    let per = grid * grid;
    let frames = clip.len();
    let (mut img, mut depth, mut cam) = (Vec::new(), Vec::new(), Vec::new());
    for frame in &clip.frames {
        let (w, h) = (frame.depth.width as usize, frame.depth.height as usize);
        for gj in 0..grid {
            for gi in 0..grid {
                let (i0, i1) = (gi * w / grid, (gi + 1) * w / grid);
                let (j0, j1) = (gj * h / grid, (gj + 1) * h / grid);
                let (mut sum, mut min, mut inv, mut hits, mut total) = (0.0, f64::INFINITY, 0.0, 0usize, 0usize);
                for j in j0..j1 {
                    for i in i0..i1 {
                        total += 1;
                        if frame.depth.is_hit(i as u32, j as u32) {
                            let z = frame.depth.get(i as u32, j as u32) as f64;
                            sum += z;
                            inv += 1.0 / z;
                            min = f64::min(min, z);
                            hits += 1;
                        }
                    }
                }
                let cover = hits as f64 / total.max(1) as f64;
                let (mean, inv) = if hits > 0 { (sum / hits as f64, inv / hits as f64) } else { (0.0, 0.0) };
                let min = if hits > 0 { min } else { 0.0 };
                let (u, v) = ((i0 + i1) as f64 / 2.0, (j0 + j1) as f64 / 2.0);
                img.extend(sinusoidal_embedding(&[u / w as f64, v / h as f64, mean / 10.0, cover], dim));
                depth.extend(sinusoidal_embedding(&[mean / 10.0, min / 10.0, inv, cover], dim));
                let k = &frame.intrinsics;
                let ray = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
                let dir = frame.pose.rotation.mul_vec(ray.scale(1.0 / ray.norm()));
                let t = frame.pose.translation;
                cam.extend(sinusoidal_embedding(&[dir.x, dir.y, dir.z, (t.x + t.y + t.z) / 10.0], dim));
            }
        }
    }
    let mk = |data| EmbeddingTensor::new(frames, per, Matrix::from_vec(frames * per, dim, data)?);
    let e_img = mk(img)?;
    let e_geo = mk(depth)?.concat(&mk(cam)?)?;
    Ok((e_img, e_geo))
}

/// Random contiguous sub-clip: length uniform in `[1, min(max_len, len)]`,
/// start uniform over the valid range, re-referenced to its first frame.
/// Clips of at most one frame are returned unchanged.
pub fn crop_sequence(clip: &SequenceClip, max_len: usize, seed: u64) -> Result<SequenceClip> {
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be at least 1".into()));
    }
    if clip.len() <= 1 {
        return Ok(clip.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(1..=max_len.min(clip.len()));
    let start = rng.random_range(0..=clip.len() - len);
    let sub = SequenceClip { frames: clip.frames[start..start + len].to_vec(), ..clip.clone() };
    rereference(&sub)
}

// -------------------------------------------------------------- checks

/// Decoder inputs bundled for the verification routines.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderInputs {
    pub tokens: TokenTensor<f64>,
    pub e_img: EmbeddingTensor<f64>,
    pub e_geo: EmbeddingTensor<f64>,
}

impl DecoderInputs {
    /// Random inputs: `m_img` image and `m_geo` geometry embeddings per
    /// frame, each token valid with probability 0.75.
    pub fn random(frames: usize, per_frame: usize, m_img: usize, m_geo: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("positive std");
        let mut gen = |rows: usize| Matrix { rows, cols: dim, data: (0..rows * dim).map(|_| normal.sample(rng)).collect() };
        let values = gen(frames * per_frame);
        let e_img = EmbeddingTensor { frames, per_frame: m_img, values: gen(frames * m_img) };
        let e_geo = EmbeddingTensor { frames, per_frame: m_geo, values: gen(frames * m_geo) };
        let valid = (0..frames * per_frame).map(|_| rng.random_bool(0.75)).collect();
        let mut tokens = TokenTensor { frames, per_frame, values, valid };
        tokens.zero_padding();
        Self { tokens, e_img, e_geo }
    }
}

/// Unit under a causality or padding check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    CabA,
    CabB,
    CabC,
    Decoder,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::CabA, Block::CabB, Block::CabC, Block::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Block::CabA => "cab_a",
            Block::CabB => "cab_b",
            Block::CabC => "cab_c",
            Block::Decoder => "decoder",
        }
    }
}

struct BlockOutput {
    tokens: TokenTensor<f64>,
    /// Embedding outputs, if any.
    embeddings: Option<EmbeddingTensor<f64>>,
    /// Head outputs per frame, padded slots included.
    heads: Option<HeadOutput<f64>>,
}

fn run_block(block: Block, inputs: &DecoderInputs, w: &DecoderWeights) -> Result<BlockOutput> {
    let cab = |cab: &CabWeights, e: &EmbeddingTensor| -> Result<BlockOutput> {
        let (t, e) = cab_forward(&inputs.tokens, e, w.mode, cab)?;
        Ok(BlockOutput { tokens: t, embeddings: Some(e), heads: None })
    };
    match block {
        Block::CabA => cab(&w.cab_a, &inputs.e_img),
        Block::CabB => cab(&w.cab_b, &inputs.e_geo),
        Block::CabC => cab(&w.cab_c, &inputs.e_geo),
        Block::Decoder => {
            let out = decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, w)?;
            let heads = heads_forward(&out.states, &w.heads);
            Ok(BlockOutput { tokens: out.states, embeddings: Some(out.g_control), heads: Some(heads) })
        }
    }
}

fn box_diff(a: &BoxParams, b: &BoxParams) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn pose_diff(a: &PoseParams, b: &PoseParams) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Perturbs every input at frames after `t` and returns the largest change
/// of any output at frames up to `t`.
pub fn causality_trial(block: Block, inputs: &DecoderInputs, w: &DecoderWeights, t: usize, rng: &mut impl Rng) -> Result<f64> {
    let normal = Normal::new(0.0, 1.0).expect("positive std");
    let mut perturbed = inputs.clone();
    let tok = &mut perturbed.tokens;
    for i in 0..tok.values.rows {
        if tok.frame_of(i) > t && tok.valid[i] {
            tok.values.row_mut(i).iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
    for e in [&mut perturbed.e_img, &mut perturbed.e_geo] {
        let per = e.per_frame;
        for i in (0..e.values.rows).filter(|i| i / per > t) {
            e.values.row_mut(i).iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
    let (a, b) = (run_block(block, inputs, w)?, run_block(block, &perturbed, w)?);
    let n = a.tokens.per_frame;
    let mut worst = a.tokens.values.max_abs_diff_rows(&b.tokens.values, |i| i / n <= t);
    if let (Some(ea), Some(eb)) = (&a.embeddings, &b.embeddings) {
        let m = ea.per_frame;
        worst = worst.max(ea.values.max_abs_diff_rows(&eb.values, |i| i / m <= t));
    }
    if let (Some(ha), Some(hb)) = (&a.heads, &b.heads) {
        for f in 0..=t.min(ha.poses.len() - 1) {
            worst = worst.max(pose_diff(&ha.poses[f], &hb.poses[f]));
            for (x, y) in ha.boxes[f].iter().zip(&hb.boxes[f]) {
                worst = worst.max(box_diff(x, y));
            }
        }
    }
    Ok(worst)
}

/// Inserts 1–3 padded slots at random positions of every frame and returns
/// the largest change of any unpadded output.
pub fn padding_trial(block: Block, inputs: &DecoderInputs, w: &DecoderWeights, rng: &mut impl Rng) -> Result<f64> {
    let tok = &inputs.tokens;
    let (n, d) = (tok.per_frame, tok.dim());
    let extra = rng.random_range(1..=3);
    let n2 = n + extra;
    // slot positions of the original tokens within each padded frame
    let mut positions = Vec::with_capacity(tok.frames);
    for _ in 0..tok.frames {
        let mut slots: Vec<usize> = (0..n2).collect();
        for _ in 0..extra {
            slots.remove(rng.random_range(0..slots.len()));
        }
        positions.push(slots);
    }
    let mut values = Matrix::zeros(tok.frames * n2, d);
    let mut valid = vec![false; tok.frames * n2];
    for (f, slots) in positions.iter().enumerate() {
        for (s, &p) in slots.iter().enumerate() {
            values.row_mut(f * n2 + p).copy_from_slice(tok.values.row(f * n + s));
            valid[f * n2 + p] = tok.valid[f * n + s];
        }
    }
    let padded = DecoderInputs { tokens: TokenTensor::new(tok.frames, n2, values, valid)?, ..inputs.clone() };
    let (a, b) = (run_block(block, inputs, w)?, run_block(block, &padded, w)?);
    let mut worst = 0.0f64;
    for (f, slots) in positions.iter().enumerate() {
        for (s, &p) in slots.iter().enumerate() {
            let (i, j) = (f * n + s, f * n2 + p);
            if !tok.valid[i] {
                continue;
            }
            for (x, y) in a.tokens.values.row(i).iter().zip(b.tokens.values.row(j)) {
                worst = worst.max((x - y).abs());
            }
            if let (Some(ha), Some(hb)) = (&a.heads, &b.heads) {
                worst = worst.max(box_diff(&ha.boxes[f][s], &hb.boxes[f][p]));
            }
        }
    }
    if let (Some(ea), Some(eb)) = (&a.embeddings, &b.embeddings) {
        worst = worst.max(ea.values.max_abs_diff_rows(&eb.values, |_| true));
    }
    if let (Some(ha), Some(hb)) = (&a.heads, &b.heads) {
        for (x, y) in ha.poses.iter().zip(&hb.poses) {
            worst = worst.max(pose_diff(x, y));
        }
    }
    Ok(worst)
}

/// Total loss of the heads' predictions as a function of the valid input
/// token features: per-box center, depth, corner, dimension and 3D IoU
/// terms plus the spatial and temporal consistency terms.
#[derive(Clone, Debug)]
pub struct DecoderLoss {
    pub weights: DecoderWeights,
    pub inputs: DecoderInputs,
    loss: AnyLoss,
}

impl DecoderLoss {
    /// Random camera-frame targets for every valid slot (instance id = slot
    /// index) and random yaw-only target poses.
    pub fn random(weights: DecoderWeights, inputs: DecoderInputs, rng: &mut impl Rng) -> Self {
        let tok = &inputs.tokens;
        let mut ids = Vec::new();
        let mut gt_world = Vec::new();
        let mut parts = Vec::new();
        let mut offset = 0;
        for f in 0..tok.frames {
            let pose = RigidTransform::new(Mat3::rot_y(rng.random_range(-0.5..0.5)), Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0)));
            offset += crate::losses::RIGID_PARAMS;
            let mut frame_ids = Vec::new();
            let mut frame_gt = Vec::new();
            for s in 0..tok.per_frame {
                if !tok.valid[f * tok.per_frame + s] {
                    continue;
                }
                let gt = BoxParams {
                    center: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(3.0..6.0)),
                    dims: Vec3::new(rng.random_range(0.4..2.0), rng.random_range(0.4..2.0), rng.random_range(0.4..2.0)),
                    yaw: rng.random_range(-1.5..1.5),
                };
                let inner = AnyLoss::Sum(vec![
                    AnyLoss::Center(CenterLoss { gt }),
                    AnyLoss::Depth(DepthLoss { gt }),
                    AnyLoss::Corner(CornerLoss { gt, mode: Default::default() }),
                    AnyLoss::Dim(DimLoss::new(gt)),
                    AnyLoss::Iou3d(Iou3dLoss { gt }),
                ]);
                parts.push(AnyLoss::Window { offset, len: BOX_PARAMS, inner: Box::new(inner) });
                offset += BOX_PARAMS;
                frame_ids.push(s as u32);
                frame_gt.push(gt.to_box().transformed(&pose));
            }
            ids.push(frame_ids);
            gt_world.push(frame_gt);
        }
        let layout = ClipLayout { ids };
        parts.push(AnyLoss::Spatial(SpatialLoss { layout: layout.clone(), gt: gt_world, mode: Default::default() }));
        parts.push(AnyLoss::Temporal(TemporalLoss { layout, mode: Default::default() }));
        Self { weights, inputs, loss: AnyLoss::Sum(parts) }
    }

    /// Valid token features, in row order.
    pub fn point(&self) -> Vec<f64> {
        let tok = &self.inputs.tokens;
        (0..tok.values.rows).filter(|&i| tok.valid[i]).flat_map(|i| tok.values.row(i).to_vec()).collect()
    }
}

impl ScalarFn for DecoderLoss {
    fn eval<R: Real>(&self, p: &[R]) -> R {
        let base = &self.inputs.tokens;
        let mut tokens = TokenTensor::<R>::lift(base);
        let d = base.dim();
        let mut at = 0;
        for i in 0..base.values.rows {
            if base.valid[i] {
                tokens.values.row_mut(i).copy_from_slice(&p[at..at + d]);
                at += d;
            }
        }
        let out = decoder_forward(&tokens, &EmbeddingTensor::lift(&self.inputs.e_img), &EmbeddingTensor::lift(&self.inputs.e_geo), &self.weights)
            .expect("inputs were validated at construction");
        let heads = heads_forward(&out.states, &self.weights.heads);
        let mut flat = Vec::new();
        for (f, pose) in heads.poses.iter().enumerate() {
            flat.extend([pose.translation.x, pose.translation.y, pose.translation.z]);
            flat.extend(pose.quaternion);
            for (s, b) in heads.boxes[f].iter().enumerate() {
                if base.valid[f * base.per_frame + s] {
                    flat.extend([b.center.x, b.center.y, b.center.z, b.dims.x, b.dims.y, b.dims.z, b.yaw]);
                }
            }
        }
        self.loss.eval(&flat)
    }
}

/// Finite-difference check of the loss through heads and decoder at toy
/// size (3 frames, 2 slots, dim 16).
pub fn decoder_grad_check(seed: u64, h: f64) -> Result<GradCheck> {
    let weights = DecoderWeights::new(&DecoderConfig { dim: 16, mask: MaskMode::FrameBlock, seed })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut inputs = DecoderInputs::random(3, 2, 4, 8, 16, &mut rng);
    // keep every slot valid so all paths are exercised
    inputs.tokens.valid.iter_mut().for_each(|v| *v = true);
    let normal = Normal::new(0.0, 1.0).expect("positive std");
    inputs.tokens.values.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
    let loss = DecoderLoss::random(weights, inputs, &mut rng);
    Ok(grad_check(&loss, &loss.point(), h))
}

// ---------------------------------------------------------------- demo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub decoder: DecoderConfig,
    /// Frames recorded for the demo clip before cropping.
    pub frames: usize,
    pub max_len: usize,
    /// Embedding patches per image side.
    pub grid: usize,
    pub trials: usize,
    pub grad_seeds: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { decoder: DecoderConfig::default(), frames: 8, max_len: 6, grid: 4, trials: 50, grad_seeds: 3, seed: 0 }
    }
}

/// One pass/fail line of the demo report.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderReport {
    pub shapes: Vec<String>,
    pub checks: Vec<CheckLine>,
    pub grad_rows: Vec<(u64, GradCheck)>,
}

impl DecoderReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn format(&self) -> String {
        let mut s = String::from("shapes\n");
        for l in &self.shapes {
            let _ = writeln!(s, "  {l}");
        }
        s.push_str("checks\n");
        for c in &self.checks {
            let _ = writeln!(s, "  {:<28} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        s.push_str("gradient check (T=3, N=2, d=16)\n");
        let _ = writeln!(s, "  {:>6} {:>8} {:>12} {:>8}", "seed", "params", "max_rel_err", "flagged");
        for (seed, g) in &self.grad_rows {
            let _ = writeln!(s, "  {:>6} {:>8} {:>12.3e} {:>8}", seed, g.analytic.len(), g.max_rel_err(), g.n_flagged());
        }
        let _ = writeln!(s, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

pub const CAUSALITY_TOL: f64 = 1e-6;
pub const DECODER_GRAD_TOL: f64 = 1e-3;

/// Builds a small annotated clip, runs the decoder on it and verifies
/// causality, padding neutrality, determinism and gradients.
pub fn decoder_demo(cfg: &DemoConfig) -> Result<DecoderReport> {
    use crate::annotate::{annotate_clip, AnnotationConfig};
    use crate::scene::{generate_scene, record_sequence, segment_clips, CameraConfig, SceneConfig};

    cfg.decoder.validate()?;
    if cfg.frames == 0 || cfg.max_len == 0 || cfg.grid == 0 {
        return Err(Error::Config("frames, max_len and grid must be positive".into()));
    }
    let d = cfg.decoder.dim;
    let scene = generate_scene(&SceneConfig::default(), cfg.seed)?;
    let raw = record_sequence("demo", "demo_scene", &scene, &CameraConfig::default(), cfg.frames, cfg.seed)?;
    let clip = segment_clips(&raw, cfg.frames, cfg.frames)?.remove(0);
    let clip = annotate_clip(&clip, &scene, &AnnotationConfig::default())?;
    let clip = crop_sequence(&clip, cfg.max_len, cfg.seed)?;
    let queries = pad_queries(&clip, d)?;
    let (e_img, e_geo) = clip_embeddings(&clip, cfg.grid, d)?;
    let weights = DecoderWeights::new(&cfg.decoder)?;
    let inputs = DecoderInputs { tokens: queries.tokens.clone(), e_img, e_geo };
    let out = decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, &weights)?;
    let heads = heads_forward(&out.states, &weights.heads);
    let (t, n) = (inputs.tokens.frames, inputs.tokens.per_frame);
    let shapes = vec![
        format!("clip: {} frames (object counts {:?})", clip.len(), clip.object_counts()),
        format!("tokens: {t} x {n} x {d} ({} valid)", inputs.tokens.valid.iter().filter(|v| **v).count()),
        format!("E_img: {t} x {} x {d}", inputs.e_img.per_frame),
        format!("E_geo: {t} x {} x {d}", inputs.e_geo.per_frame),
        format!("G_control: {t} x {} x {d}", out.g_control.per_frame),
        format!("states: {t} x {n} x {d}"),
        format!("heads: {} x {} boxes, {} poses", heads.boxes.len(), n, heads.poses.len()),
    ];

    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for block in Block::ALL {
        let mut worst = 0.0f64;
        // random inputs exercise longer clips than the demo crop
        for trial in 0..cfg.trials {
            let own = if trial % 2 == 0 && t > 1 {
                inputs.clone()
            } else {
                DecoderInputs::random(rng.random_range(2..=6), rng.random_range(1..=4), 3, 5, d, &mut rng)
            };
            let cut = rng.random_range(0..own.tokens.frames.max(2) - 1);
            worst = worst.max(causality_trial(block, &own, &weights, cut, &mut rng)?);
        }
        checks.push(CheckLine {
            name: format!("causality {}", block.name()),
            passed: worst <= CAUSALITY_TOL,
            detail: format!("max change {worst:.2e} over {} trials", cfg.trials),
        });
    }
    let mut worst = 0.0f64;
    for _ in 0..cfg.trials {
        for block in Block::ALL {
            let own = DecoderInputs::random(rng.random_range(1..=5), rng.random_range(1..=4), 3, 5, d, &mut rng);
            worst = worst.max(padding_trial(block, &own, &weights, &mut rng)?);
        }
    }
    checks.push(CheckLine { name: "padding neutrality".into(), passed: worst <= CAUSALITY_TOL, detail: format!("max change {worst:.2e}") });
    let again = decoder_forward(&inputs.tokens, &inputs.e_img, &inputs.e_geo, &weights)?;
    checks.push(CheckLine { name: "determinism".into(), passed: again == out, detail: "repeat run bit-identical".into() });
    let unit = heads.poses.iter().map(|p| (p.quaternion.iter().map(|q| q * q).sum::<f64>().sqrt() - 1.0).abs()).fold(0.0, f64::max);
    checks.push(CheckLine { name: "pose quaternion norm".into(), passed: unit <= 1e-9, detail: format!("max |‖q‖-1| {unit:.1e}") });

    let mut grad_rows = Vec::new();
    for s in 0..cfg.grad_seeds as u64 {
        grad_rows.push((cfg.seed + s, decoder_grad_check(cfg.seed + s, 1e-5)?));
    }
    let worst = grad_rows.iter().map(|g| g.1.max_rel_err()).fold(0.0, f64::max);
    checks.push(CheckLine {
        name: "gradient".into(),
        passed: worst < DECODER_GRAD_TOL,
        detail: format!("max rel err {worst:.2e} (tolerance {DECODER_GRAD_TOL:.0e})"),
    });
    Ok(DecoderReport { shapes, checks, grad_rows })
}
