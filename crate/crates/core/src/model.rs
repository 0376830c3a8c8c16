//! Masked autoencoder over coefficient-map patches.
//!
//! A pre-norm ViT encoder sees only the visible patches. Its outputs are
//! projected to the decoder width, mask tokens are scattered back into the
//! masked positions, decoder positional embeddings are added to every token,
//! and a light decoder plus a linear head predicts every patch. Only masked
//! patches are supervised.
//!
//! Linear layers run on the whole batch stacked along rows; attention runs
//! per sample and per head.

use std::collections::BTreeMap;
use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::tokenizer::{MaskPlan, PatchGrid, Patches, PosEmbed};
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Wavelet coefficient map input.
    #[default]
    Mmr,
    /// Raw waveform as a single-row map.
    Mtr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub enc_blocks: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub enc_ffn: usize,
    pub dec_blocks: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
    /// Defaults to `4 * dec_dim`.
    #[serde(default)]
    pub dec_ffn: Option<usize>,
    pub patch_dim: usize,
    #[serde(default)]
    pub mode: Mode,
}

impl ArchConfig {
    pub fn mmr(patch_dim: usize) -> Self {
        Self {
            enc_blocks: 8,
            enc_dim: 256,
            enc_heads: 4,
            enc_ffn: 1024,
            dec_blocks: 2,
            dec_dim: 192,
            dec_heads: 4,
            dec_ffn: None,
            patch_dim,
            mode: Mode::Mmr,
        }
    }

    pub fn mmr_light(patch_dim: usize) -> Self {
        Self {
            enc_blocks: 4,
            enc_dim: 192,
            enc_heads: 3,
            enc_ffn: 768,
            dec_blocks: 2,
            dec_dim: 128,
            dec_heads: 4,
            dec_ffn: None,
            patch_dim,
            mode: Mode::Mmr,
        }
    }

    /// Tiny configuration for gradient checks and quick experiments.
    pub fn micro(patch_dim: usize) -> Self {
        Self {
            enc_blocks: 1,
            enc_dim: 8,
            enc_heads: 1,
            enc_ffn: 16,
            dec_blocks: 1,
            dec_dim: 8,
            dec_heads: 1,
            dec_ffn: Some(16),
            patch_dim,
            mode: Mode::Mmr,
        }
    }

    pub fn preset(name: &str, patch_dim: usize) -> Result<Self> {
        match name {
            "mmr" => Ok(Self::mmr(patch_dim)),
            "mmr_light" | "mmr-light" => Ok(Self::mmr_light(patch_dim)),
            "micro" => Ok(Self::micro(patch_dim)),
            other => Err(Error::config(format!("unknown architecture preset `{other}`"))),
        }
    }

    pub fn dec_ffn_width(&self) -> usize {
        self.dec_ffn.unwrap_or(4 * self.dec_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("enc_dim", self.enc_dim, self.enc_heads),
            ("dec_dim", self.dec_dim, self.dec_heads),
        ];
        for (name, dim, heads) in dims {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::config(format!("{name} {dim} not divisible by {heads} heads")));
            }
            if dim == 0 || dim % 4 != 0 {
                return Err(Error::config(format!("{name} {dim} must be a positive multiple of 4")));
            }
        }
        if self.enc_ffn == 0 || self.dec_ffn_width() == 0 || self.patch_dim == 0 {
            return Err(Error::config("ffn widths and patch_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter names, shapes and initializers in construction order.
fn param_specs(cfg: &ArchConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut s = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| s.push((name, shape, init));
    let (p, e, d) = (cfg.patch_dim, cfg.enc_dim, cfg.dec_dim);

    push("patch_embed.w".into(), vec![p, e], Init::Normal);
    push("patch_embed.b".into(), vec![e], Init::Zeros);
    let block = |prefix: String, dim: usize, ffn: usize, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
        push(format!("{prefix}.ln1.g"), vec![dim], Init::Ones);
        push(format!("{prefix}.ln1.b"), vec![dim], Init::Zeros);
        for m in ["q", "k", "v", "o"] {
            push(format!("{prefix}.attn.w{m}"), vec![dim, dim], Init::Normal);
            push(format!("{prefix}.attn.b{m}"), vec![dim], Init::Zeros);
        }
        push(format!("{prefix}.ln2.g"), vec![dim], Init::Ones);
        push(format!("{prefix}.ln2.b"), vec![dim], Init::Zeros);
        push(format!("{prefix}.ffn.w1"), vec![dim, ffn], Init::Normal);
        push(format!("{prefix}.ffn.b1"), vec![ffn], Init::Zeros);
        push(format!("{prefix}.ffn.w2"), vec![ffn, dim], Init::Normal);
        push(format!("{prefix}.ffn.b2"), vec![dim], Init::Zeros);
    };
    for i in 0..cfg.enc_blocks {
        block(format!("enc.{i}"), e, cfg.enc_ffn, &mut push);
    }
    push("enc_norm.g".into(), vec![e], Init::Ones);
    push("enc_norm.b".into(), vec![e], Init::Zeros);
    push("dec_embed.w".into(), vec![e, d], Init::Normal);
    push("dec_embed.b".into(), vec![d], Init::Zeros);
    push("mask_token".into(), vec![1, d], Init::Zeros);
    for i in 0..cfg.dec_blocks {
        block(format!("dec.{i}"), d, cfg.dec_ffn_width(), &mut push);
    }
    push("dec_norm.g".into(), vec![d], Init::Ones);
    push("dec_norm.b".into(), vec![d], Init::Zeros);
    push("head.w".into(), vec![d, p], Init::Normal);
    push("head.b".into(), vec![p], Init::Zeros);
    s
}

/// Exact number of trainable scalars for `cfg`.
pub fn param_count(cfg: &ArchConfig) -> usize {
    param_specs(cfg)
        .iter()
        .map(|(_, shape, _)| shape.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub cfg: ArchConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl ModelState {
    pub fn init(cfg: ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::rng(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = BTreeMap::new();
        for (name, shape, init) in param_specs(&cfg) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { cfg, params })
    }

    /// Check that names and shapes match the architecture.
    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        let specs = param_specs(&self.cfg);
        if specs.len() != self.params.len() {
            return Err(Error::Format(format!(
                "expected {} parameters, found {}",
                specs.len(),
                self.params.len()
            )));
        }
        for (name, shape, _) in specs {
            match self.params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Format(format!("missing parameter {name}"))),
            }
        }
        if let Some((name, _)) = self.params.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Numeric { layer: name.clone() });
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn register(&self, tape: &mut Tape) -> Params {
        Params(
            self.params
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        )
    }
}

/// Parameter handles on one tape.
#[derive(Debug, Clone)]
pub struct Params(pub BTreeMap<String, Var>);

impl Params {
    fn get(&self, name: &str) -> Var {
        self.0[name]
    }

    /// Gradient per parameter after a backward pass. Parameters that did not
    /// influence the loss get zeros.
    pub fn grads(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.0
            .iter()
            .map(|(k, &v)| {
                let g = tape
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).len()]);
                (k.clone(), g)
            })
            .collect()
    }
}

fn check(tape: &Tape, v: Var, layer: impl FnOnce() -> String) -> Result<Var> {
    if tape.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { layer: layer() })
    }
}

fn linear(tape: &mut Tape, x: Var, p: &Params, w: &str, b: &str) -> Result<Var> {
    let y = tape.matmul(x, p.get(w))?;
    tape.add(y, p.get(b))
}

fn layer_norm(tape: &mut Tape, x: Var, p: &Params, prefix: &str) -> Result<Var> {
    let n = tape.layernorm(x, LN_EPS)?;
    let s = tape.mul(n, p.get(&format!("{prefix}.g")))?;
    tape.add(s, p.get(&format!("{prefix}.b")))
}

/// Multi-head self-attention within each row range of `x`.
fn attention(
    tape: &mut Tape,
    x: Var,
    p: &Params,
    prefix: &str,
    heads: usize,
    spans: &[Range<usize>],
) -> Result<Var> {
    let dim = tape.shape(x)[1];
    let dh = dim / heads;
    let q = linear(tape, x, p, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = linear(tape, x, p, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = linear(tape, x, p, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut per_sample = Vec::with_capacity(spans.len());
    for span in spans {
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qs = tape.slice(q, span.clone(), cols.clone())?;
            let ks = tape.slice(k, span.clone(), cols.clone())?;
            let vs = tape.slice(v, span.clone(), cols)?;
            let kt = tape.transpose(ks)?;
            let scores = tape.matmul(qs, kt)?;
            let scores = tape.scale(scores, scale);
            let att = tape.softmax(scores)?;
            per_head.push(tape.matmul(att, vs)?);
        }
        per_sample.push(if heads == 1 {
            per_head[0]
        } else {
            tape.concat_cols(&per_head)?
        });
    }
    let merged = if per_sample.len() == 1 {
        per_sample[0]
    } else {
        tape.concat_rows(&per_sample)?
    };
    linear(tape, merged, p, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn block(
    tape: &mut Tape,
    x: Var,
    p: &Params,
    prefix: &str,
    heads: usize,
    spans: &[Range<usize>],
) -> Result<Var> {
    let h = layer_norm(tape, x, p, &format!("{prefix}.ln1"))?;
    let a = attention(tape, h, p, &format!("{prefix}.attn"), heads, spans)?;
    let x = tape.add(x, a)?;
    let h = layer_norm(tape, x, p, &format!("{prefix}.ln2"))?;
    let h = linear(tape, h, p, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let h = tape.gelu(h);
    let h = linear(tape, h, p, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
    let out = tape.add(x, h)?;
    check(tape, out, || prefix.to_string())
}

fn spans(lengths: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    lengths
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

/// Positional tables for the encoder and decoder widths.
#[derive(Debug, Clone, PartialEq)]
pub struct PosTables {
    pub enc: PosEmbed,
    pub dec: PosEmbed,
}

impl PosTables {
    pub fn new(grid: &PatchGrid, cfg: &ArchConfig) -> Result<Self> {
        Ok(Self {
            enc: crate::tokenizer::pos_embed(grid, cfg.enc_dim)?,
            dec: crate::tokenizer::pos_embed(grid, cfg.dec_dim)?,
        })
    }
}

/// One training example: encoder input, reconstruction target and mask.
/// The target is normally the input itself.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub patches: &'a Patches,
    pub target: &'a Patches,
    pub mask: &'a MaskPlan,
}

impl<'a> Example<'a> {
    pub fn new(patches: &'a Patches, mask: &'a MaskPlan) -> Self {
        Self {
            patches,
            target: patches,
            mask,
        }
    }
}

/// Handles produced by [`forward_mae`].
#[derive(Debug)]
pub struct Forward {
    pub loss: Var,
    /// `[batch * n_patches, patch_dim]`, every patch of every example.
    pub pred: Var,
    pub params: Params,
}

fn rows_of(table: &[f64], dim: usize, idx: &[usize], out: &mut Vec<f64>) {
    for &i in idx {
        out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
    }
}

fn encoder(
    tape: &mut Tape,
    p: &Params,
    cfg: &ArchConfig,
    tokens: Tensor,
    pos: Tensor,
    spans: &[Range<usize>],
) -> Result<Var> {
    let x = tape.constant(tokens);
    let pos = tape.constant(pos);
    let h = linear(tape, x, p, "patch_embed.w", "patch_embed.b")?;
    let mut h = tape.add(h, pos)?;
    h = check(tape, h, || "patch_embed".into())?;
    for i in 0..cfg.enc_blocks {
        h = block(tape, h, p, &format!("enc.{i}"), cfg.enc_heads, spans)?;
    }
    let out = layer_norm(tape, h, p, "enc_norm")?;
    check(tape, out, || "enc_norm".into())
}

/// Masked-autoencoder forward pass on a batch sharing one patch grid.
///
/// The loss averages, over examples, the per-example mean over masked
/// patches of the squared reconstruction error summed over patch entries.
pub fn forward_mae(
    tape: &mut Tape,
    state: &ModelState,
    batch: &[Example<'_>],
    pos: &PosTables,
) -> Result<Forward> {
    let cfg = &state.cfg;
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let n = pos.enc.n;
    let pd = cfg.patch_dim;
    for ex in batch {
        if ex.patches.dim != pd
            || ex.patches.n != n
            || ex.mask.n_patches() != n
            || ex.target.dim != pd
            || ex.target.n != n
        {
            return Err(Error::shape(format!(
                "example with {} patches of dim {} and a {}-patch mask; model expects {n} x {pd}",
                ex.patches.n,
                ex.patches.dim,
                ex.mask.n_patches()
            )));
        }
        if ex.mask.masked.is_empty() {
            return Err(Error::config("mask with no masked patches"));
        }
    }
    if pos.dec.n != n || pos.enc.d_model != cfg.enc_dim || pos.dec.d_model != cfg.dec_dim {
        return Err(Error::shape("positional tables do not match the model"));
    }
    let p = state.register(tape);

    let mut vis_tokens = Vec::new();
    let mut vis_pos = Vec::new();
    for ex in batch {
        rows_of(&ex.patches.data, pd, &ex.mask.visible, &mut vis_tokens);
        rows_of(&pos.enc.table, cfg.enc_dim, &ex.mask.visible, &mut vis_pos);
    }
    let n_vis_total: usize = batch.iter().map(|e| e.mask.visible.len()).sum();
    let enc_spans = spans(batch.iter().map(|e| e.mask.visible.len()));
    let z = encoder(
        tape,
        &p,
        cfg,
        Tensor::from_rows(n_vis_total, pd, vis_tokens)?,
        Tensor::from_rows(n_vis_total, cfg.enc_dim, vis_pos)?,
        &enc_spans,
    )?;

    let z = linear(tape, z, &p, "dec_embed.w", "dec_embed.b")?;
    // Row n_vis_total of `pool` is the mask token.
    let pool = tape.concat_rows(&[z, p.get("mask_token")])?;
    let mut index = Vec::with_capacity(batch.len() * n);
    for (ex, span) in batch.iter().zip(&enc_spans) {
        let mut slot = vec![n_vis_total; n];
        for (k, &v) in ex.mask.visible.iter().enumerate() {
            slot[v] = span.start + k;
        }
        index.extend(slot);
    }
    let seq = tape.gather_rows(pool, &index)?;
    let mut dec_pos = Vec::with_capacity(batch.len() * n * cfg.dec_dim);
    for _ in batch {
        dec_pos.extend_from_slice(&pos.dec.table);
    }
    let dec_pos = tape.constant(Tensor::from_rows(batch.len() * n, cfg.dec_dim, dec_pos)?);
    let mut h = tape.add(seq, dec_pos)?;
    let dec_spans = spans(batch.iter().map(|_| n));
    for i in 0..cfg.dec_blocks {
        h = block(tape, h, &p, &format!("dec.{i}"), cfg.dec_heads, &dec_spans)?;
    }
    let h = layer_norm(tape, h, &p, "dec_norm")?;
    let pred = linear(tape, h, &p, "head.w", "head.b")?;
    let pred = check(tape, pred, || "head".into())?;

    // Masked rows only, each weighted by 1 / (batch * |M_b|).
    let mut masked_rows = Vec::new();
    let mut target = Vec::new();
    let mut weight = Vec::new();
    for (b, ex) in batch.iter().enumerate() {
        let w = 1.0 / (batch.len() * ex.mask.masked.len()) as f64;
        for &m in &ex.mask.masked {
            masked_rows.push(b * n + m);
            target.extend_from_slice(ex.target.patch(m));
            weight.extend(std::iter::repeat_n(w, pd));
        }
    }
    let rows = masked_rows.len();
    let picked = tape.gather_rows(pred, &masked_rows)?;
    let target = tape.constant(Tensor::from_rows(rows, pd, target)?);
    let weight = tape.constant(Tensor::from_rows(rows, pd, weight)?);
    let diff = tape.sub(picked, target)?;
    let sq = tape.mul(diff, diff)?;
    let weighted = tape.mul(sq, weight)?;
    let loss = tape.sum(weighted);
    let loss = check(tape, loss, || "loss".into())?;
    Ok(Forward { loss, pred, params: p })
}

/// Loss value and per-parameter gradients for one batch.
pub fn loss_and_grads(
    state: &ModelState,
    batch: &[Example<'_>],
    pos: &PosTables,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut tape = Tape::new();
    let fwd = forward_mae(&mut tape, state, batch, pos)?;
    tape.backward(fwd.loss)?;
    let loss = tape.value(fwd.loss).data()[0];
    Ok((loss, fwd.params.grads(&tape)))
}

/// Loss value only.
pub fn loss_value(state: &ModelState, batch: &[Example<'_>], pos: &PosTables) -> Result<f64> {
    let mut tape = Tape::new();
    let fwd = forward_mae(&mut tape, state, batch, pos)?;
    Ok(tape.value(fwd.loss).data()[0])
}

/// Reconstruction of every patch for a single example, `[n x patch_dim]`.
pub fn reconstruct(state: &ModelState, ex: Example<'_>, pos: &PosTables) -> Result<Patches> {
    let mut tape = Tape::new();
    let fwd = forward_mae(&mut tape, state, &[ex], pos)?;
    let t = tape.value(fwd.pred);
    Ok(Patches {
        data: t.data().to_vec(),
        n: t.shape()[0],
        dim: t.shape()[1],
    })
}

/// `(1/|M|) * sum over masked p of ||pred_p - truth_p||^2`.
pub fn loss_mmr(pred: &Patches, truth: &Patches, mask: &MaskPlan) -> Result<f64> {
    if mask.masked.is_empty() {
        return Err(Error::config("loss over an empty masked set"));
    }
    if pred.n != truth.n || pred.dim != truth.dim || mask.n_patches() != pred.n {
        return Err(Error::shape("prediction, truth and mask disagree"));
    }
    let total: f64 = mask
        .masked
        .iter()
        .map(|&p| {
            pred.patch(p)
                .iter()
                .zip(truth.patch(p))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / mask.masked.len() as f64)
}

/// The same loss split by coefficient-map row: entry `i` holds the squared
/// error of map row `i` over all masked patches, divided by `|M|`. The
/// entries sum to [`loss_mmr`].
pub fn loss_mmr_by_band(
    pred: &Patches,
    truth: &Patches,
    mask: &MaskPlan,
    grid: &PatchGrid,
) -> Result<Vec<f64>> {
    if mask.masked.is_empty() {
        return Err(Error::config("loss over an empty masked set"));
    }
    if pred.n != grid.n_patches() || truth.n != grid.n_patches() || pred.dim != grid.patch_dim() {
        return Err(Error::shape("patches do not match the grid"));
    }
    let c = grid.patch_cols;
    let mut per_row = vec![0.0; grid.map_rows()];
    for &p in &mask.masked {
        let (gr, _) = grid.position(p);
        for i in 0..grid.patch_rows {
            let a = &pred.patch(p)[i * c..(i + 1) * c];
            let b = &truth.patch(p)[i * c..(i + 1) * c];
            per_row[gr * grid.patch_rows + i] += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    let m = mask.masked.len() as f64;
    Ok(per_row.into_iter().map(|v| v / m).collect())
}

/// Mean-pooled encoder outputs over the full, unmasked patch sequence.
pub fn encode(state: &ModelState, patches: &Patches, pos: &PosEmbed) -> Result<Vec<f64>> {
    Ok(encode_batch(state, &[patches], pos)?.remove(0))
}

pub fn encode_batch(state: &ModelState, batch: &[&Patches], pos: &PosEmbed) -> Result<Vec<Vec<f64>>> {
    let cfg = &state.cfg;
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    if pos.d_model != cfg.enc_dim {
        return Err(Error::shape("positional table width differs from enc_dim"));
    }
    let mut tokens = Vec::new();
    let mut pos_rows = Vec::new();
    for p in batch {
        if p.dim != cfg.patch_dim || p.n != pos.n {
            return Err(Error::shape(format!(
                "{} patches of dim {}; model expects {} x {}",
                p.n, p.dim, pos.n, cfg.patch_dim
            )));
        }
        tokens.extend_from_slice(&p.data);
        pos_rows.extend_from_slice(&pos.table);
    }
    let total = batch.len() * pos.n;
    let mut tape = Tape::new();
    let params = Params(
        state
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
            .collect(),
    );
    let sp = spans(batch.iter().map(|_| pos.n));
    let out = encoder(
        &mut tape,
        &params,
        cfg,
        Tensor::from_rows(total, cfg.patch_dim, tokens)?,
        Tensor::from_rows(total, cfg.enc_dim, pos_rows)?,
        &sp,
    )?;
    let t = tape.value(out);
    let d = cfg.enc_dim;
    Ok(sp
        .iter()
        .map(|r| {
            let mut m = vec![0.0; d];
            for row in r.clone() {
                m.iter_mut()
                    .zip(&t.data()[row * d..(row + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|a| *a /= r.len() as f64);
            m
        })
        .collect())
}

/// Raw waveform as single-row patches of `patch_cols` samples.
pub fn mtr_patches(samples: &[f64], patch_cols: usize) -> Result<(Patches, PatchGrid)> {
    let grid = PatchGrid::new(1, samples.len(), 1, patch_cols)?;
    let p = crate::tokenizer::patchify(samples, 1, samples.len(), &grid)?;
    Ok((p, grid))
}
