//! Recurrent glyph-sequence models: a word's vector is produced directly
//! from its characters' frozen glyph features by a 2-layer GRU followed
//! by two fully connected ELU layers. RNN-Skipgram predicts contexts
//! with negative sampling; RNN-GloVe regresses log co-occurrence with a
//! shared GRU and two separate heads.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cooc::{glove_weight, SparseCooc};
use crate::corpus::{stream_pairs, Vocabulary};
use crate::embed::{GlyphTable, NegSampler};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensorio::TensorFile;

/// Exponential linear unit.
pub fn elu(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        a * (x.exp() - 1.0)
    }
}

fn elu_deriv(x: f64, a: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        a * x.exp()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network shape: glyph feature size feeds layer 1, both GRU layers use
/// hidden size `hidden`, and the head maps `hidden -> head_hidden ->
/// out_dim` with ELU after each affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqModelSpec {
    pub glyph_dim: usize,
    pub hidden: usize,
    pub head_hidden: usize,
    pub out_dim: usize,
}

impl Default for SeqModelSpec {
    fn default() -> Self {
        SeqModelSpec {
            glyph_dim: 512,
            hidden: 256,
            head_hidden: 200,
            out_dim: 200,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerDims {
    input: usize,
    hidden: usize,
}

// gate order within a layer's parameter block
const GATE_Z: usize = 0;
const GATE_R: usize = 1;
const GATE_C: usize = 2;

fn gate_len(d: LayerDims) -> usize {
    d.hidden * d.input + d.hidden * d.hidden + d.hidden
}

fn layer_len(d: LayerDims) -> usize {
    3 * gate_len(d)
}

fn w_range(d: LayerDims, gate: usize) -> std::ops::Range<usize> {
    let base = gate * gate_len(d);
    base..base + d.hidden * d.input
}

fn u_range(d: LayerDims, gate: usize) -> std::ops::Range<usize> {
    let base = gate * gate_len(d) + d.hidden * d.input;
    base..base + d.hidden * d.hidden
}

fn b_range(d: LayerDims, gate: usize) -> std::ops::Range<usize> {
    let base = gate * gate_len(d) + d.hidden * d.input + d.hidden * d.hidden;
    base..base + d.hidden
}

impl SeqModelSpec {
    fn layer_dims(&self, layer: usize) -> LayerDims {
        LayerDims {
            input: if layer == 0 { self.glyph_dim } else { self.hidden },
            hidden: self.hidden,
        }
    }

    pub fn gru_len(&self) -> usize {
        layer_len(self.layer_dims(0)) + layer_len(self.layer_dims(1))
    }

    pub fn head_len(&self) -> usize {
        self.head_hidden * self.hidden
            + self.head_hidden
            + self.out_dim * self.head_hidden
            + self.out_dim
    }
}

/// `out += M v` for a row-major `rows x cols` matrix.
fn matvec_add(out: &mut [f64], m: &[f64], rows: usize, cols: usize, v: &[f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        out[r] += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += M^T v`.
fn matvec_t_add(out: &mut [f64], m: &[f64], rows: usize, cols: usize, v: &[f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, x) in out.iter_mut().zip(row) {
            *o += v[r] * x;
        }
    }
}

/// `grad_m += a b^T` (a has `rows` entries, b has `cols`).
fn outer_add(grad_m: &mut [f64], a: &[f64], b: &[f64]) {
    for (r, &av) in a.iter().enumerate() {
        let row = &mut grad_m[r * b.len()..(r + 1) * b.len()];
        for (g, &bv) in row.iter_mut().zip(b) {
            *g += av * bv;
        }
    }
}

struct LayerCache {
    xs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>, // h_1..h_T
    zs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    cs: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>, // r (.) h_prev
}

/// One GRU layer over the sequence, starting from a zero hidden state:
/// `z = sigma(Wz x + Uz h + bz)`, `r = sigma(Wr x + Ur h + br)`,
/// `c = tanh(Wc x + Uc (r.h) + bc)`, `h' = z.h + (1-z).c`.
fn layer_forward(xs: &[Vec<f64>], p: &[f64], d: LayerDims) -> LayerCache {
    let h_dim = d.hidden;
    let mut cache = LayerCache {
        xs: xs.to_vec(),
        hs: Vec::with_capacity(xs.len()),
        zs: Vec::with_capacity(xs.len()),
        rs: Vec::with_capacity(xs.len()),
        cs: Vec::with_capacity(xs.len()),
        rhs: Vec::with_capacity(xs.len()),
    };
    let mut h_prev = vec![0.0; h_dim];
    for x in xs {
        let gate = |g: usize, hv: &[f64]| -> Vec<f64> {
            let mut a = p[b_range(d, g)].to_vec();
            matvec_add(&mut a, &p[w_range(d, g)], h_dim, d.input, x);
            matvec_add(&mut a, &p[u_range(d, g)], h_dim, h_dim, hv);
            a
        };
        let z: Vec<f64> = gate(GATE_Z, &h_prev).iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = gate(GATE_R, &h_prev).iter().map(|&v| sigmoid(v)).collect();
        let rh: Vec<f64> = r.iter().zip(&h_prev).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = gate(GATE_C, &rh).iter().map(|&v| v.tanh()).collect();
        let h: Vec<f64> = z
            .iter()
            .zip(&h_prev)
            .zip(&c)
            .map(|((&zv, &hv), &cv)| zv * hv + (1.0 - zv) * cv)
            .collect();
        cache.zs.push(z);
        cache.rs.push(r);
        cache.rhs.push(rh);
        cache.cs.push(c);
        cache.hs.push(h.clone());
        h_prev = h;
    }
    cache
}

/// Backpropagation through one layer. `dhs[t]` is the external gradient
/// on `h_t`; returns parameter gradients and gradients on the inputs.
fn layer_backward(
    cache: &LayerCache,
    p: &[f64],
    d: LayerDims,
    dhs: &[Vec<f64>],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let h_dim = d.hidden;
    let t_len = cache.xs.len();
    let mut grad = vec![0.0; layer_len(d)];
    let mut dxs = vec![vec![0.0; d.input]; t_len];
    let mut carry = vec![0.0; h_dim];
    for t in (0..t_len).rev() {
        let h_prev: &[f64] = if t == 0 {
            &vec![0.0; h_dim]
        } else {
            &cache.hs[t - 1]
        };
        let z = &cache.zs[t];
        let r = &cache.rs[t];
        let c = &cache.cs[t];
        let rh = &cache.rhs[t];
        let x = &cache.xs[t];
        let dh: Vec<f64> = dhs[t].iter().zip(&carry).map(|(a, b)| a + b).collect();

        let daz: Vec<f64> = (0..h_dim)
            .map(|k| dh[k] * (h_prev[k] - c[k]) * z[k] * (1.0 - z[k]))
            .collect();
        let dac: Vec<f64> = (0..h_dim)
            .map(|k| dh[k] * (1.0 - z[k]) * (1.0 - c[k] * c[k]))
            .collect();
        // gradient reaching r (.) h_prev through the candidate gate
        let mut drh = vec![0.0; h_dim];
        matvec_t_add(&mut drh, &p[u_range(d, GATE_C)], h_dim, h_dim, &dac);
        let dar: Vec<f64> = (0..h_dim)
            .map(|k| drh[k] * h_prev[k] * r[k] * (1.0 - r[k]))
            .collect();

        let mut dh_prev: Vec<f64> = (0..h_dim).map(|k| dh[k] * z[k] + drh[k] * r[k]).collect();
        matvec_t_add(&mut dh_prev, &p[u_range(d, GATE_Z)], h_dim, h_dim, &daz);
        matvec_t_add(&mut dh_prev, &p[u_range(d, GATE_R)], h_dim, h_dim, &dar);

        for (gate, da, u_input) in [
            (GATE_Z, &daz, h_prev),
            (GATE_R, &dar, h_prev),
            (GATE_C, &dac, rh.as_slice()),
        ] {
            outer_add(&mut grad[w_range(d, gate)], da, x);
            outer_add(&mut grad[u_range(d, gate)], da, u_input);
            for (g, v) in grad[b_range(d, gate)].iter_mut().zip(da) {
                *g += v;
            }
            matvec_t_add(&mut dxs[t], &p[w_range(d, gate)], h_dim, d.input, da);
        }
        carry = dh_prev;
    }
    (grad, dxs)
}

pub struct GruCache {
    layers: Vec<LayerCache>,
}

/// Runs the 2-layer GRU over a glyph-feature sequence, returning the
/// second layer's final hidden state.
pub fn gru_forward(xs: &[Vec<f64>], gru: &[f64], spec: &SeqModelSpec) -> Result<(Vec<f64>, GruCache)> {
    if xs.is_empty() {
        return Err(Error::Config("empty glyph sequence".into()));
    }
    let d0 = spec.layer_dims(0);
    let d1 = spec.layer_dims(1);
    let split = layer_len(d0);
    let c0 = layer_forward(xs, &gru[..split], d0);
    let c1 = layer_forward(&c0.hs, &gru[split..], d1);
    let h = c1.hs.last().expect("non-empty sequence").clone();
    Ok((h, GruCache { layers: vec![c0, c1] }))
}

/// Backpropagates a gradient on the final hidden state through both
/// layers; returns the gradient on all GRU parameters.
pub fn gru_backward(
    cache: &GruCache,
    gru: &[f64],
    spec: &SeqModelSpec,
    d_final: &[f64],
) -> Vec<f64> {
    let d0 = spec.layer_dims(0);
    let d1 = spec.layer_dims(1);
    let split = layer_len(d0);
    let t_len = cache.layers[0].xs.len();
    let mut dhs1 = vec![vec![0.0; spec.hidden]; t_len];
    dhs1[t_len - 1] = d_final.to_vec();
    let (g1, dxs1) = layer_backward(&cache.layers[1], &gru[split..], d1, &dhs1);
    let (g0, _) = layer_backward(&cache.layers[0], &gru[..split], d0, &dxs1);
    let mut grad = g0;
    grad.extend(g1);
    grad
}

pub struct HeadCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    y1: Vec<f64>,
    pre2: Vec<f64>,
    pub out: Vec<f64>,
}

fn head_offsets(spec: &SeqModelSpec) -> (usize, usize, usize) {
    let a1 = spec.head_hidden * spec.hidden;
    let b1 = a1 + spec.head_hidden;
    let a2 = b1 + spec.out_dim * spec.head_hidden;
    (a1, b1, a2)
}

/// Two affine layers, ELU after each; maps the GRU state to the word
/// vector.
pub fn head_forward(h: &[f64], head: &[f64], spec: &SeqModelSpec) -> HeadCache {
    let (a1, b1, a2) = head_offsets(spec);
    let mut pre1 = head[a1..b1].to_vec();
    matvec_add(&mut pre1, &head[..a1], spec.head_hidden, spec.hidden, h);
    let y1: Vec<f64> = pre1.iter().map(|&v| elu(v, 1.0)).collect();
    let mut pre2 = head[a2..].to_vec();
    matvec_add(&mut pre2, &head[b1..a2], spec.out_dim, spec.head_hidden, &y1);
    let out: Vec<f64> = pre2.iter().map(|&v| elu(v, 1.0)).collect();
    HeadCache {
        input: h.to_vec(),
        pre1,
        y1,
        pre2,
        out,
    }
}

/// Returns the head parameter gradient and the gradient on the head input.
pub fn head_backward(
    cache: &HeadCache,
    head: &[f64],
    spec: &SeqModelSpec,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (a1, b1, a2) = head_offsets(spec);
    let mut grad = vec![0.0; head.len()];
    let dpre2: Vec<f64> = d_out
        .iter()
        .zip(&cache.pre2)
        .map(|(g, &p)| g * elu_deriv(p, 1.0))
        .collect();
    outer_add(&mut grad[b1..a2], &dpre2, &cache.y1);
    for (g, v) in grad[a2..].iter_mut().zip(&dpre2) {
        *g += v;
    }
    let mut dy1 = vec![0.0; spec.head_hidden];
    matvec_t_add(&mut dy1, &head[b1..a2], spec.out_dim, spec.head_hidden, &dpre2);
    let dpre1: Vec<f64> = dy1
        .iter()
        .zip(&cache.pre1)
        .map(|(g, &p)| g * elu_deriv(p, 1.0))
        .collect();
    outer_add(&mut grad[..a1], &dpre1, &cache.input);
    for (g, v) in grad[a1..b1].iter_mut().zip(&dpre1) {
        *g += v;
    }
    let mut dh = vec![0.0; spec.hidden];
    matvec_t_add(&mut dh, &head[..a1], spec.head_hidden, spec.hidden, &dpre1);
    (grad, dh)
}

fn init_gru(spec: &SeqModelSpec, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.gru_len());
    for layer in 0..2 {
        let d = spec.layer_dims(layer);
        for _gate in 0..3 {
            let sw = 1.0 / (d.input as f64).sqrt();
            out.extend((0..d.hidden * d.input).map(|_| rng.gen_range(-sw..sw)));
            let su = 1.0 / (d.hidden as f64).sqrt();
            out.extend((0..d.hidden * d.hidden).map(|_| rng.gen_range(-su..su)));
            out.extend(std::iter::repeat(0.0).take(d.hidden));
        }
    }
    out
}

fn init_head(spec: &SeqModelSpec, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.head_len());
    let s1 = 1.0 / (spec.hidden as f64).sqrt();
    out.extend((0..spec.head_hidden * spec.hidden).map(|_| rng.gen_range(-s1..s1)));
    out.extend(std::iter::repeat(0.0).take(spec.head_hidden));
    let s2 = 1.0 / (spec.head_hidden as f64).sqrt();
    out.extend((0..spec.out_dim * spec.head_hidden).map(|_| rng.gen_range(-s2..s2)));
    out.extend(std::iter::repeat(0.0).take(spec.out_dim));
    out
}

fn glyph_sequence(word_id: usize, vocab: &Vocabulary, glyphs: &GlyphTable) -> Vec<Vec<f64>> {
    vocab
        .decomposition(word_id)
        .iter()
        .map(|&cid| glyphs.feature(cid).to_vec())
        .collect()
}

pub struct WordCache {
    gru: GruCache,
    head: HeadCache,
}

fn word_forward(
    word_id: usize,
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    gru: &[f64],
    head: &[f64],
    spec: &SeqModelSpec,
) -> Result<(Vec<f64>, WordCache)> {
    let xs = glyph_sequence(word_id, vocab, glyphs);
    let (h, gru_cache) = gru_forward(&xs, gru, spec)?;
    let head_cache = head_forward(&h, head, spec);
    let out = head_cache.out.clone();
    Ok((
        out,
        WordCache {
            gru: gru_cache,
            head: head_cache,
        },
    ))
}

fn word_backward(
    cache: &WordCache,
    gru: &[f64],
    head: &[f64],
    spec: &SeqModelSpec,
    d_vec: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (grad_head, dh) = head_backward(&cache.head, head, spec, d_vec);
    let grad_gru = gru_backward(&cache.gru, gru, spec, &dh);
    (grad_gru, grad_head)
}

const ADAGRAD_EPS: f64 = 1e-8;

fn adagrad_apply(params: &mut [f64], acc: &mut [f64], grad: &[f64], lr: f64) {
    for ((p, a), &g) in params.iter_mut().zip(acc.iter_mut()).zip(grad) {
        if g == 0.0 {
            continue;
        }
        *a += g * g;
        *p -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
}

/// RNN-Skipgram parameters: glyph-driven encoder plus a per-word output
/// table for negative sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnSkipgramModel {
    pub spec: SeqModelSpec,
    pub gru: Vec<f64>,
    pub head: Vec<f64>,
    pub word_out: Vec<f64>,
    acc_gru: Vec<f64>,
    acc_head: Vec<f64>,
    acc_word_out: Vec<f64>,
}

impl RnnSkipgramModel {
    pub fn init(spec: SeqModelSpec, n_words: usize, seed: u64) -> RnnSkipgramModel {
        let mut rng = substream(seed, "seq-init");
        let gru = init_gru(&spec, &mut rng);
        let head = init_head(&spec, &mut rng);
        RnnSkipgramModel {
            acc_gru: vec![0.0; gru.len()],
            acc_head: vec![0.0; head.len()],
            acc_word_out: vec![0.0; n_words * spec.out_dim],
            word_out: vec![0.0; n_words * spec.out_dim],
            spec,
            gru,
            head,
        }
    }

    pub fn save(&self, path: &std::path::Path, n_words: usize) -> Result<()> {
        TensorFile {
            magic: *b"GVRS",
            version: 1,
            meta: vec![
                self.spec.glyph_dim as u32,
                self.spec.hidden as u32,
                self.spec.head_hidden as u32,
                self.spec.out_dim as u32,
                n_words as u32,
            ],
            tensors: vec![
                ("gru".into(), self.gru.clone()),
                ("head".into(), self.head.clone()),
                ("word_out".into(), self.word_out.clone()),
            ],
        }
        .write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<RnnSkipgramModel> {
        let tf = TensorFile::read(path, *b"GVRS")?;
        if tf.meta.len() != 5 {
            return Err(Error::Config("bad checkpoint header".into()));
        }
        let spec = SeqModelSpec {
            glyph_dim: tf.meta[0] as usize,
            hidden: tf.meta[1] as usize,
            head_hidden: tf.meta[2] as usize,
            out_dim: tf.meta[3] as usize,
        };
        let n_words = tf.meta[4] as usize;
        let mut model = RnnSkipgramModel::init(spec, n_words, 0);
        model.gru = tf.tensor("gru")?.to_vec();
        model.head = tf.tensor("head")?.to_vec();
        model.word_out = tf.tensor("word_out")?.to_vec();
        Ok(model)
    }
}

/// Gradients of one negative-sampling example.
pub struct SkipgramGrads {
    pub loss: f64,
    pub gru: Vec<f64>,
    pub head: Vec<f64>,
    pub word_out_rows: Vec<(usize, Vec<f64>)>,
}

fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Pure gradient computation for one (target, context) example with an
/// explicit negative list; the glyph table is read-only throughout.
pub fn skipgram_example_grads(
    target: usize,
    context: usize,
    negatives: &[usize],
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    model: &RnnSkipgramModel,
) -> Result<SkipgramGrads> {
    let spec = &model.spec;
    let (vec_w, cache) = word_forward(target, vocab, glyphs, &model.gru, &model.head, spec)?;
    let d = spec.out_dim;
    let mut loss = 0.0;
    let mut d_vec = vec![0.0; d];
    let mut rows = Vec::with_capacity(1 + negatives.len());
    for (idx, &word) in std::iter::once(&context).chain(negatives).enumerate() {
        let label = if idx == 0 { 1.0 } else { 0.0 };
        let row = &model.word_out[word * d..(word + 1) * d];
        let score: f64 = vec_w.iter().zip(row).map(|(a, b)| a * b).sum();
        loss -= if label == 1.0 {
            ln_sigmoid(score)
        } else {
            ln_sigmoid(-score)
        };
        let g = sigmoid(score) - label;
        for (dv, r) in d_vec.iter_mut().zip(row) {
            *dv += g * r;
        }
        rows.push((word, vec_w.iter().map(|&v| g * v).collect()));
    }
    let (gru, head) = word_backward(&cache, &model.gru, &model.head, spec, &d_vec);
    Ok(SkipgramGrads {
        loss,
        gru,
        head,
        word_out_rows: rows,
    })
}

/// Applies one example's gradients with per-parameter Adagrad.
pub fn skipgram_apply(model: &mut RnnSkipgramModel, grads: &SkipgramGrads, lr: f64) {
    adagrad_apply(&mut model.gru, &mut model.acc_gru, &grads.gru, lr);
    adagrad_apply(&mut model.head, &mut model.acc_head, &grads.head, lr);
    let d = model.spec.out_dim;
    for (word, g) in &grads.word_out_rows {
        adagrad_apply(
            &mut model.word_out[word * d..(word + 1) * d],
            &mut model.acc_word_out[word * d..(word + 1) * d],
            g,
            lr,
        );
    }
}

/// Word vector from glyph features alone.
pub fn rnn_word_vector(
    word_id: usize,
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    model: &RnnSkipgramModel,
) -> Result<Vec<f64>> {
    word_forward(word_id, vocab, glyphs, &model.gru, &model.head, &model.spec).map(|(v, _)| v)
}

#[derive(Debug, Clone)]
pub struct SeqTrainConfig {
    pub spec: SeqModelSpec,
    pub window: usize,
    pub negatives: usize,
    pub subsample_t: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub x_max: f64,
    pub alpha: f64,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        SeqTrainConfig {
            spec: SeqModelSpec::default(),
            window: 5,
            negatives: 10,
            subsample_t: 1e-5,
            lr: 0.001,
            epochs: 5,
            seed: 1,
            x_max: 100.0,
            alpha: 0.75,
        }
    }
}

/// Trains RNN-Skipgram over corpus lines. Returns the model and the mean
/// loss of the final epoch.
pub fn rnn_skipgram_train(
    lines: &[String],
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    config: &SeqTrainConfig,
) -> Result<(RnnSkipgramModel, f64)> {
    let mut model = RnnSkipgramModel::init(config.spec, vocab.len(), config.seed);
    let sampler = NegSampler::new(vocab, config.negatives);
    let mut neg_rng = substream(config.seed, "seq-negatives");
    let mut last_mean_loss = 0.0;
    for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut n = 0u64;
        let pairs = stream_pairs(
            lines.iter(),
            vocab,
            config.window,
            config.subsample_t,
            config.seed.wrapping_add(epoch as u64),
        )?;
        for pair in pairs {
            for &ctx in &pair.context {
                let negatives = sampler.negatives(ctx, &mut neg_rng);
                let grads =
                    skipgram_example_grads(pair.target, ctx, &negatives, vocab, glyphs, &model)?;
                skipgram_apply(&mut model, &grads, config.lr);
                loss_sum += grads.loss;
                n += 1;
            }
        }
        last_mean_loss = if n > 0 { loss_sum / n as f64 } else { 0.0 };
    }
    Ok((model, last_mean_loss))
}

/// RNN-GloVe: one shared GRU, two heads producing the center and context
/// vectors whose inner product regresses log co-occurrence. No bias
/// scalars — the factorization is the plain inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnGloveModel {
    pub spec: SeqModelSpec,
    pub gru: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_tilde: Vec<f64>,
    acc_gru: Vec<f64>,
    acc_head_w: Vec<f64>,
    acc_head_tilde: Vec<f64>,
}

impl RnnGloveModel {
    pub fn init(spec: SeqModelSpec, seed: u64) -> RnnGloveModel {
        let mut rng = substream(seed, "seq-init");
        let gru = init_gru(&spec, &mut rng);
        let head_w = init_head(&spec, &mut rng);
        let head_tilde = init_head(&spec, &mut rng);
        RnnGloveModel {
            acc_gru: vec![0.0; gru.len()],
            acc_head_w: vec![0.0; head_w.len()],
            acc_head_tilde: vec![0.0; head_tilde.len()],
            spec,
            gru,
            head_w,
            head_tilde,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        TensorFile {
            magic: *b"GVRG",
            version: 1,
            meta: vec![
                self.spec.glyph_dim as u32,
                self.spec.hidden as u32,
                self.spec.head_hidden as u32,
                self.spec.out_dim as u32,
            ],
            tensors: vec![
                ("gru".into(), self.gru.clone()),
                ("head_w".into(), self.head_w.clone()),
                ("head_tilde".into(), self.head_tilde.clone()),
            ],
        }
        .write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<RnnGloveModel> {
        let tf = TensorFile::read(path, *b"GVRG")?;
        if tf.meta.len() != 4 {
            return Err(Error::Config("bad checkpoint header".into()));
        }
        let spec = SeqModelSpec {
            glyph_dim: tf.meta[0] as usize,
            hidden: tf.meta[1] as usize,
            head_hidden: tf.meta[2] as usize,
            out_dim: tf.meta[3] as usize,
        };
        let mut model = RnnGloveModel::init(spec, 0);
        model.gru = tf.tensor("gru")?.to_vec();
        model.head_w = tf.tensor("head_w")?.to_vec();
        model.head_tilde = tf.tensor("head_tilde")?.to_vec();
        Ok(model)
    }
}

pub struct GloveSeqGrads {
    pub loss: f64,
    pub gru: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_tilde: Vec<f64>,
}

/// Gradients of the weighted squared log-co-occurrence residual for one
/// entry; the GRU gradient sums both the center and context paths.
pub fn rnn_glove_example_grads(
    entry: (usize, usize, f64),
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    model: &RnnGloveModel,
    x_max: f64,
    alpha: f64,
) -> Result<GloveSeqGrads> {
    let (i, j, x) = entry;
    let spec = &model.spec;
    let (vi, cache_i) = word_forward(i, vocab, glyphs, &model.gru, &model.head_w, spec)?;
    let (vj, cache_j) = word_forward(j, vocab, glyphs, &model.gru, &model.head_tilde, spec)?;
    let pred: f64 = vi.iter().zip(&vj).map(|(a, b)| a * b).sum();
    let f = glove_weight(x, x_max, alpha);
    let r = pred - x.ln();
    let loss = f * r * r;
    let g = 2.0 * f * r;
    let dvi: Vec<f64> = vj.iter().map(|&v| g * v).collect();
    let dvj: Vec<f64> = vi.iter().map(|&v| g * v).collect();
    let (gru_i, head_w) = word_backward(&cache_i, &model.gru, &model.head_w, spec, &dvi);
    let (gru_j, head_tilde) = word_backward(&cache_j, &model.gru, &model.head_tilde, spec, &dvj);
    let gru: Vec<f64> = gru_i.iter().zip(&gru_j).map(|(a, b)| a + b).collect();
    Ok(GloveSeqGrads {
        loss,
        gru,
        head_w,
        head_tilde,
    })
}

pub fn rnn_glove_apply(model: &mut RnnGloveModel, grads: &GloveSeqGrads, lr: f64) {
    adagrad_apply(&mut model.gru, &mut model.acc_gru, &grads.gru, lr);
    adagrad_apply(&mut model.head_w, &mut model.acc_head_w, &grads.head_w, lr);
    adagrad_apply(
        &mut model.head_tilde,
        &mut model.acc_head_tilde,
        &grads.head_tilde,
        lr,
    );
}

/// Minimum co-occurrence value an entry must reach to be trained on.
pub const RNN_GLOVE_MIN_X: f64 = 0.5;

/// Trains RNN-GloVe on entries with `X >= 0.5`, shuffled each epoch.
/// Returns the model and per-epoch mean losses.
pub fn rnn_glove_train(
    cooc: &SparseCooc,
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    config: &SeqTrainConfig,
) -> Result<(RnnGloveModel, Vec<f64>)> {
    let mut model = RnnGloveModel::init(config.spec, config.seed);
    let entries: Vec<(usize, usize, f64)> = cooc
        .entries
        .iter()
        .filter(|&&(_, _, x)| x >= RNN_GLOVE_MIN_X)
        .map(|&(i, j, x)| (i as usize, j as usize, x))
        .collect();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = substream(config.seed, "seq-glove-shuffle");
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let grads = rnn_glove_example_grads(
                entries[idx],
                vocab,
                glyphs,
                &model,
                config.x_max,
                config.alpha,
            )?;
            rnn_glove_apply(&mut model, &grads, config.lr);
            loss_sum += grads.loss;
        }
        epoch_losses.push(loss_sum / entries.len().max(1) as f64);
    }
    Ok((model, epoch_losses))
}

/// Evaluation vector for RNN-GloVe: `w_i + w_tilde_i` for the same word.
pub fn rnn_glove_vector(
    word_id: usize,
    vocab: &Vocabulary,
    glyphs: &GlyphTable,
    model: &RnnGloveModel,
) -> Result<Vec<f64>> {
    let (vi, _) = word_forward(word_id, vocab, glyphs, &model.gru, &model.head_w, &model.spec)?;
    let (vj, _) = word_forward(
        word_id,
        vocab,
        glyphs,
        &model.gru,
        &model.head_tilde,
        &model.spec,
    )?;
    Ok(vi.iter().zip(&vj).map(|(a, b)| a + b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooc::build_cooc;
    use crate::corpus::build_vocab;
    use std::collections::BTreeMap;

    fn tiny_spec() -> SeqModelSpec {
        SeqModelSpec {
            glyph_dim: 3,
            hidden: 4,
            head_hidden: 3,
            out_dim: 2,
        }
    }

    fn tiny_setup() -> (Vocabulary, GlyphTable) {
        let vocab = build_vocab(["木林", "山", "木森"], 0).unwrap();
        let mut raw = BTreeMap::new();
        for cid in 0..vocab.n_chars() {
            let c = vocab.character(cid);
            let base = (c as u32 % 7) as f64;
            raw.insert(c, vec![base * 0.1, 0.3 - base * 0.05, 0.2]);
        }
        let glyphs = GlyphTable::build(&raw, &vocab, 3, 2).unwrap();
        (vocab, glyphs)
    }

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0, 1.0), 0.0);
        assert_eq!(elu(5.0, 1.0), 5.0);
        assert!((elu(-1.0, 1.0) - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_params_keep_hidden_at_zero() {
        let spec = tiny_spec();
        let gru = vec![0.0; spec.gru_len()];
        let xs = vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]];
        let (h, _) = gru_forward(&xs, &gru, &spec).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequence_length_changes_output() {
        let spec = tiny_spec();
        let mut rng = substream(3, "test-gru");
        let gru: Vec<f64> = (0..spec.gru_len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x1 = vec![vec![0.2, -0.1, 0.4]];
        let x2 = vec![vec![0.2, -0.1, 0.4], vec![0.3, 0.3, -0.2]];
        let (h1, _) = gru_forward(&x1, &gru, &spec).unwrap();
        let (h2, _) = gru_forward(&x2, &gru, &spec).unwrap();
        assert_ne!(h1, h2);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let spec = tiny_spec();
        let gru = vec![0.0; spec.gru_len()];
        assert!(gru_forward(&[], &gru, &spec).is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
    }

    #[test]
    fn skipgram_gradients_match_finite_differences() {
        let (vocab, glyphs) = tiny_setup();
        let spec = tiny_spec();
        let model = RnnSkipgramModel::init(spec, vocab.len(), 5);
        let mut model = model;
        // nonzero output rows make the example informative
        for (i, v) in model.word_out.iter_mut().enumerate() {
            *v = ((i as f64) * 0.61).sin() * 0.4;
        }
        let target = vocab.id("木林").unwrap();
        let ctx = vocab.id("山").unwrap();
        let negatives = [vocab.id("木森").unwrap()];
        let grads =
            skipgram_example_grads(target, ctx, &negatives, &vocab, &glyphs, &model).unwrap();
        let loss_at = |m: &RnnSkipgramModel| {
            skipgram_example_grads(target, ctx, &negatives, &vocab, &glyphs, m)
                .unwrap()
                .loss
        };
        let eps = 1e-6;
        for k in 0..model.gru.len() {
            let mut mp = model.clone();
            let mut mm = model.clone();
            mp.gru[k] += eps;
            mm.gru[k] -= eps;
            let fd = (loss_at(&mp) - loss_at(&mm)) / (2.0 * eps);
            assert!(rel_err(fd, grads.gru[k]) < 1e-4, "gru[{k}]: {fd} vs {}", grads.gru[k]);
        }
        for k in 0..model.head.len() {
            let mut mp = model.clone();
            let mut mm = model.clone();
            mp.head[k] += eps;
            mm.head[k] -= eps;
            let fd = (loss_at(&mp) - loss_at(&mm)) / (2.0 * eps);
            assert!(rel_err(fd, grads.head[k]) < 1e-4, "head[{k}]");
        }
        let d = spec.out_dim;
        for (word, g) in &grads.word_out_rows {
            for k in 0..d {
                let idx = word * d + k;
                let mut mp = model.clone();
                let mut mm = model.clone();
                mp.word_out[idx] += eps;
                mm.word_out[idx] -= eps;
                let fd = (loss_at(&mp) - loss_at(&mm)) / (2.0 * eps);
                assert!(rel_err(fd, g[k]) < 1e-4, "word_out[{idx}]");
            }
        }
    }

    #[test]
    fn rnn_glove_gradients_match_finite_differences() {
        let (vocab, glyphs) = tiny_setup();
        let model = RnnGloveModel::init(tiny_spec(), 7);
        let entry = (
            vocab.id("木林").unwrap(),
            vocab.id("山").unwrap(),
            12.0f64,
        );
        let grads = rnn_glove_example_grads(entry, &vocab, &glyphs, &model, 100.0, 0.75).unwrap();
        let loss_at = |m: &RnnGloveModel| {
            rnn_glove_example_grads(entry, &vocab, &glyphs, m, 100.0, 0.75)
                .unwrap()
                .loss
        };
        let eps = 1e-6;
        let fields: [(
            fn(&RnnGloveModel) -> &Vec<f64>,
            fn(&mut RnnGloveModel) -> &mut Vec<f64>,
            fn(&GloveSeqGrads) -> &Vec<f64>,
            &str,
        ); 3] = [
            (|m| &m.gru, |m| &mut m.gru, |g| &g.gru, "gru"),
            (|m| &m.head_w, |m| &mut m.head_w, |g| &g.head_w, "head_w"),
            (
                |m| &m.head_tilde,
                |m| &mut m.head_tilde,
                |g| &g.head_tilde,
                "head_tilde",
            ),
        ];
        for (get, get_mut, get_grad, name) in fields {
            for k in 0..get(&model).len() {
                let mut mp = model.clone();
                let mut mm = model.clone();
                get_mut(&mut mp)[k] += eps;
                get_mut(&mut mm)[k] -= eps;
                let fd = (loss_at(&mp) - loss_at(&mm)) / (2.0 * eps);
                assert!(rel_err(fd, get_grad(&grads)[k]) < 1e-4, "{name}[{k}]");
            }
        }
    }

    #[test]
    fn shared_gru_couples_both_paths() {
        let (vocab, glyphs) = tiny_setup();
        let model = RnnGloveModel::init(tiny_spec(), 7);
        let entry = (vocab.id("木林").unwrap(), vocab.id("山").unwrap(), 5.0);
        let grads = rnn_glove_example_grads(entry, &vocab, &glyphs, &model, 100.0, 0.75).unwrap();
        let mut stepped = model.clone();
        rnn_glove_apply(&mut stepped, &grads, 0.01);
        // one update moved the single shared GRU, so both the center and
        // context vectors of an unrelated word change
        let other = vocab.id("木森").unwrap();
        let (v_before, _) =
            word_forward(other, &vocab, &glyphs, &model.gru, &model.head_tilde, &model.spec)
                .unwrap();
        let (v_after, _) = word_forward(
            other,
            &vocab,
            &glyphs,
            &stepped.gru,
            &model.head_tilde,
            &model.spec,
        )
        .unwrap();
        assert_ne!(v_before, v_after);
    }

    #[test]
    fn glyph_purity_same_features_same_vector() {
        let (vocab, _) = tiny_setup();
        let spec = tiny_spec();
        let model = RnnSkipgramModel::init(spec, vocab.len(), 5);
        // give every character identical glyph features: all words of
        // equal length must then collapse to the same vector
        let mut raw = BTreeMap::new();
        for cid in 0..vocab.n_chars() {
            raw.insert(vocab.character(cid), vec![0.3, -0.1, 0.2]);
        }
        let glyphs = GlyphTable::build(&raw, &vocab, 3, 2).unwrap();
        let v1 = rnn_word_vector(vocab.id("木林").unwrap(), &vocab, &glyphs, &model).unwrap();
        let v2 = rnn_word_vector(vocab.id("木森").unwrap(), &vocab, &glyphs, &model).unwrap();
        assert_eq!(v1, v2);
        let v3 = rnn_word_vector(vocab.id("山").unwrap(), &vocab, &glyphs, &model).unwrap();
        assert_ne!(v1, v3, "different length sequences still differ");
    }

    #[test]
    fn epochs_zero_leaves_parameters() {
        let (vocab, glyphs) = tiny_setup();
        let config = SeqTrainConfig {
            spec: tiny_spec(),
            epochs: 0,
            seed: 9,
            ..SeqTrainConfig::default()
        };
        let lines = vec!["木林 山".to_string()];
        let (model, _) = rnn_skipgram_train(&lines, &vocab, &glyphs, &config).unwrap();
        assert_eq!(model, RnnSkipgramModel::init(tiny_spec(), vocab.len(), 9));
    }

    #[test]
    fn rnn_glove_filter_boundary() {
        let (vocab, glyphs) = tiny_setup();
        let cooc = SparseCooc {
            n_words: vocab.len(),
            entries: vec![(0, 1, 0.4), (1, 0, 0.5)],
        };
        let config = SeqTrainConfig {
            spec: tiny_spec(),
            epochs: 1,
            seed: 3,
            ..SeqTrainConfig::default()
        };
        let (_, losses) = rnn_glove_train(&cooc, &vocab, &glyphs, &config).unwrap();
        // only the X = 0.5 entry trains; with one entry the mean loss is
        // that entry's loss, finite and nonzero
        assert_eq!(losses.len(), 1);
        assert!(losses[0].is_finite());
        let empty = SparseCooc {
            n_words: vocab.len(),
            entries: vec![(0, 1, 0.4)],
        };
        let (_, losses) = rnn_glove_train(&empty, &vocab, &glyphs, &config).unwrap();
        assert_eq!(losses[0], 0.0, "all entries filtered, nothing trains");
    }

    #[test]
    fn constant_fit_drives_loss_near_zero() {
        // X_ij = e for every pair: ln X = 1 everywhere, so constant heads
        // can fit exactly
        let (vocab, glyphs) = tiny_setup();
        let mut entries = Vec::new();
        for i in 0..vocab.len() as u32 {
            for j in 0..vocab.len() as u32 {
                entries.push((i, j, std::f64::consts::E));
            }
        }
        let cooc = SparseCooc {
            n_words: vocab.len(),
            entries,
        };
        let config = SeqTrainConfig {
            spec: tiny_spec(),
            epochs: 300,
            lr: 0.05,
            seed: 4,
            ..SeqTrainConfig::default()
        };
        let (_, losses) = rnn_glove_train(&cooc, &vocab, &glyphs, &config).unwrap();
        assert!(
            *losses.last().unwrap() < 0.01,
            "final loss {}",
            losses.last().unwrap()
        );
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn two_cluster_corpus_with_correlated_glyphs_separates() {
        let cluster_a = ["甲", "乙", "丙"];
        let cluster_b = ["壬", "癸", "庚"];
        let mut lines = Vec::new();
        let mut rng = substream(21, "test-seq-clusters");
        for _ in 0..60 {
            for set in [&cluster_a, &cluster_b] {
                let mut line = Vec::new();
                for _ in 0..4 {
                    line.push(set[rng.gen_range(0..set.len())]);
                }
                lines.push(line.join(" "));
            }
        }
        let vocab = build_vocab(lines.iter().flat_map(|l| l.split(' ')), 0).unwrap();
        // glyph features correlated with cluster membership
        let mut raw = BTreeMap::new();
        for (k, c) in cluster_a.iter().enumerate() {
            let jitter = k as f64 * 0.05;
            raw.insert(c.chars().next().unwrap(), vec![1.0, 0.0 + jitter, 0.1]);
        }
        for (k, c) in cluster_b.iter().enumerate() {
            let jitter = k as f64 * 0.05;
            raw.insert(c.chars().next().unwrap(), vec![0.0, 1.0 - jitter, -0.1]);
        }
        let glyphs = GlyphTable::build(&raw, &vocab, 3, 2).unwrap();
        let config = SeqTrainConfig {
            spec: SeqModelSpec {
                glyph_dim: 3,
                hidden: 8,
                head_hidden: 8,
                out_dim: 8,
            },
            window: 3,
            negatives: 3,
            subsample_t: f64::INFINITY,
            lr: 0.05,
            epochs: 6,
            seed: 6,
            ..SeqTrainConfig::default()
        };
        let (model, _) = rnn_skipgram_train(&lines, &vocab, &glyphs, &config).unwrap();
        let vec_of = |w: &str| {
            rnn_word_vector(vocab.id(w).unwrap(), &vocab, &glyphs, &model).unwrap()
        };
        let va: Vec<Vec<f64>> = cluster_a.iter().map(|w| vec_of(w)).collect();
        let vb: Vec<Vec<f64>> = cluster_b.iter().map(|w| vec_of(w)).collect();
        let mut intra = 0.0;
        let mut n_intra = 0;
        for set in [&va, &vb] {
            for i in 0..set.len() {
                for j in i + 1..set.len() {
                    intra += cosine(&set[i], &set[j]);
                    n_intra += 1;
                }
            }
        }
        let mut inter = 0.0;
        let mut n_inter = 0;
        for a in &va {
            for b in &vb {
                inter += cosine(a, b);
                n_inter += 1;
            }
        }
        let intra = intra / n_intra as f64;
        let inter = inter / n_inter as f64;
        assert!(intra > inter, "intra {intra:.3} vs inter {inter:.3}");
    }

    #[test]
    fn checkpoints_round_trip() {
        let (vocab, _) = tiny_setup();
        let model = RnnSkipgramModel::init(tiny_spec(), vocab.len(), 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sg.bin");
        model.save(&path, vocab.len()).unwrap();
        let back = RnnSkipgramModel::load(&path).unwrap();
        assert_eq!(back.gru, model.gru);
        assert_eq!(back.head, model.head);
        assert_eq!(back.word_out, model.word_out);

        let model = RnnGloveModel::init(tiny_spec(), 13);
        let path = dir.path().join("gl.bin");
        model.save(&path).unwrap();
        let back = RnnGloveModel::load(&path).unwrap();
        assert_eq!(back.gru, model.gru);
        assert_eq!(back.head_w, model.head_w);
        assert_eq!(back.head_tilde, model.head_tilde);
    }

    #[test]
    fn glove_vector_is_sum_of_both_heads() {
        let (vocab, glyphs) = tiny_setup();
        let model = RnnGloveModel::init(tiny_spec(), 15);
        let w = vocab.id("山").unwrap();
        let (vi, _) =
            word_forward(w, &vocab, &glyphs, &model.gru, &model.head_w, &model.spec).unwrap();
        let (vj, _) =
            word_forward(w, &vocab, &glyphs, &model.gru, &model.head_tilde, &model.spec).unwrap();
        let got = rnn_glove_vector(w, &vocab, &glyphs, &model).unwrap();
        for k in 0..got.len() {
            assert_eq!(got[k], vi[k] + vj[k]);
        }
    }

    #[test]
    fn cooc_pipeline_integrates() {
        let (vocab, glyphs) = tiny_setup();
        let lines = ["木林 山 木森", "山 木林"];
        let cooc = build_cooc(lines, &vocab, 2, true).unwrap();
        let config = SeqTrainConfig {
            spec: tiny_spec(),
            epochs: 2,
            seed: 8,
            ..SeqTrainConfig::default()
        };
        let (model, losses) = rnn_glove_train(&cooc, &vocab, &glyphs, &config).unwrap();
        assert_eq!(losses.len(), 2);
        assert!(losses.iter().all(|l| l.is_finite()));
        let v = rnn_glove_vector(0, &vocab, &glyphs, &model).unwrap();
        assert_eq!(v.len(), 2);
    }
}
