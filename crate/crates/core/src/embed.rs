//! Local-window embedding trainers with negative sampling: CBOW and
//! Skipgram baselines, position-based character-enhanced composition
//! (CWE), the radical-augmented hidden vector (MGE), and the two
//! glyph-enhanced variants (ctxG applies frozen glyph features to
//! context words, tarG to the target word).

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{stream_pairs, Vocabulary};
use crate::error::{parse_err, Error, Result};
use crate::rng::substream;

/// Number of position slots for character vectors: begin, middle, end.
pub const N_POSITIONS: usize = 3;

pub const POS_BEGIN: usize = 0;
pub const POS_MIDDLE: usize = 1;
pub const POS_END: usize = 2;

/// Model variants for the CBOW-side trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbowVariant {
    Cbow,
    Cwe,
    Mge,
    CtxG,
    TarG,
}

/// Model variants for the Skipgram-side trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipgramVariant {
    Sg,
    SgCwe,
    SgCtxG,
}

/// All trainable vectors for one embedding model.
///
/// Layout is row-major: `word_in`/`word_out` are `V x D`, `char` is
/// `K x 3 x D` (three position slots per character), `radical` is `R x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub word_in: Vec<f64>,
    pub word_out: Vec<f64>,
    pub char: Vec<f64>,
    pub radical: Vec<f64>,
    pub dims: usize,
    n_words: usize,
    n_chars: usize,
    n_radicals: usize,
}

impl EmbeddingStore {
    /// Initializes input/char/radical vectors uniformly in
    /// `[-0.5/D, 0.5/D]` and output vectors at zero.
    pub fn init(n_words: usize, n_chars: usize, n_radicals: usize, dims: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "embed-init");
        let half = 0.5 / dims as f64;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-half..half)).collect()
        };
        EmbeddingStore {
            word_in: draw(n_words * dims),
            char: draw(n_chars * N_POSITIONS * dims),
            radical: draw(n_radicals * dims),
            word_out: vec![0.0; n_words * dims],
            dims,
            n_words,
            n_chars,
            n_radicals,
        }
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn n_radicals(&self) -> usize {
        self.n_radicals
    }

    pub fn word_in(&self, id: usize) -> &[f64] {
        &self.word_in[id * self.dims..(id + 1) * self.dims]
    }

    pub fn word_out(&self, id: usize) -> &[f64] {
        &self.word_out[id * self.dims..(id + 1) * self.dims]
    }

    pub fn char_vec(&self, char_id: usize, pos: usize) -> &[f64] {
        let start = (char_id * N_POSITIONS + pos) * self.dims;
        &self.char[start..start + self.dims]
    }

    pub fn radical_vec(&self, radical_id: usize) -> &[f64] {
        &self.radical[radical_id * self.dims..(radical_id + 1) * self.dims]
    }
}

/// Maps each character id to a radical id over a dense radical inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadicalIndex {
    radical_of: Vec<usize>,
    radicals: Vec<String>,
}

impl RadicalIndex {
    /// Builds the index from TSV rows `char<TAB>radical`. The map must
    /// cover every character of the vocabulary; unmapped characters are
    /// rejected here rather than surfacing mid-training.
    pub fn load(reader: impl BufRead, vocab: &Vocabulary) -> Result<RadicalIndex> {
        let mut raw: BTreeMap<char, String> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ch, rad) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 1, "expected char<TAB>radical"))?;
            let mut chars = ch.chars();
            let c = chars
                .next()
                .ok_or_else(|| parse_err(i + 1, "empty character field"))?;
            if chars.next().is_some() {
                return Err(parse_err(i + 1, "character field must be one codepoint"));
            }
            raw.insert(c, rad.to_string());
        }
        let mut radicals: Vec<String> = Vec::new();
        let mut radical_id: BTreeMap<String, usize> = BTreeMap::new();
        let mut radical_of = Vec::with_capacity(vocab.n_chars());
        for cid in 0..vocab.n_chars() {
            let c = vocab.character(cid);
            let rad = raw
                .get(&c)
                .ok_or_else(|| Error::Config(format!("no radical mapping for {c:?}")))?;
            let rid = match radical_id.get(rad.as_str()) {
                Some(&rid) => rid,
                None => {
                    radicals.push(rad.clone());
                    radical_id.insert(rad.clone(), radicals.len() - 1);
                    radicals.len() - 1
                }
            };
            radical_of.push(rid);
        }
        Ok(RadicalIndex {
            radical_of,
            radicals,
        })
    }

    pub fn radical_of(&self, char_id: usize) -> usize {
        self.radical_of[char_id]
    }

    pub fn n_radicals(&self) -> usize {
        self.radicals.len()
    }

    pub fn radical_name(&self, radical_id: usize) -> &str {
        &self.radicals[radical_id]
    }
}

/// Draws negative examples from the unigram distribution raised to 0.75.
#[derive(Debug, Clone)]
pub struct NegSampler {
    cdf: Vec<f64>,
    pub k: usize,
}

impl NegSampler {
    pub fn new(vocab: &Vocabulary, k: usize) -> NegSampler {
        let mut cdf = Vec::with_capacity(vocab.len());
        let mut acc = 0.0;
        for id in 0..vocab.len() {
            acc += (vocab.freq(id) as f64).powf(0.75);
            cdf.push(acc);
        }
        for v in &mut cdf {
            *v /= acc;
        }
        NegSampler { cdf, k }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    /// Draws `k` negatives, rejecting the true target.
    pub fn negatives(&self, target: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k);
        while out.len() < self.k {
            let id = self.sample(rng);
            if id != target {
                out.push(id);
            }
        }
        out
    }
}

/// Frozen per-character glyph feature vectors, dimension-matched to the
/// word vectors. If the raw feature length differs from `dims`, a fixed
/// seeded random projection maps it down; the table never trains.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphTable {
    features: Vec<f64>,
    pub dims: usize,
    n_chars: usize,
}

impl GlyphTable {
    pub fn build(
        raw: &BTreeMap<char, Vec<f64>>,
        vocab: &Vocabulary,
        dims: usize,
        seed: u64,
    ) -> Result<GlyphTable> {
        let feature_len = raw
            .values()
            .next()
            .map(|v| v.len())
            .ok_or_else(|| Error::Config("empty glyph feature table".into()))?;
        let projection = if feature_len == dims {
            None
        } else {
            let mut rng = substream(seed, "glyph-projection");
            let scale = 1.0 / (feature_len as f64).sqrt();
            Some(
                (0..dims * feature_len)
                    .map(|_| rng.gen_range(-scale..scale))
                    .collect::<Vec<f64>>(),
            )
        };
        let mut features = Vec::with_capacity(vocab.n_chars() * dims);
        for cid in 0..vocab.n_chars() {
            let c = vocab.character(cid);
            let f = raw.get(&c).ok_or(Error::MissingGlyphFeature(c))?;
            if f.len() != feature_len {
                return Err(Error::Config(format!(
                    "glyph feature for {c:?} has length {}, expected {feature_len}",
                    f.len()
                )));
            }
            match &projection {
                None => features.extend_from_slice(f),
                Some(p) => {
                    for d in 0..dims {
                        let row = &p[d * feature_len..(d + 1) * feature_len];
                        features.push(row.iter().zip(f).map(|(a, b)| a * b).sum());
                    }
                }
            }
        }
        Ok(GlyphTable {
            features,
            dims,
            n_chars: vocab.n_chars(),
        })
    }

    /// Table of all-zero features; useful as a degenerate control.
    pub fn zeros(n_chars: usize, dims: usize) -> GlyphTable {
        GlyphTable {
            features: vec![0.0; n_chars * dims],
            dims,
            n_chars,
        }
    }

    pub fn feature(&self, char_id: usize) -> &[f64] {
        &self.features[char_id * self.dims..(char_id + 1) * self.dims]
    }

    /// Bitwise checksum over the table; equal checksums on identical
    /// contents make the frozen-table contract cheap to assert.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.features {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }
}

/// Position slot of a character within a word: first character takes
/// `begin`, last takes `end`, others `middle`. Single-character words
/// resolve the tie to `begin`.
pub fn position_class(char_index: usize, word_length: usize) -> Result<usize> {
    if char_index >= word_length {
        return Err(Error::PositionOutOfRange {
            index: char_index,
            len: word_length,
        });
    }
    Ok(if char_index == 0 {
        POS_BEGIN
    } else if char_index == word_length - 1 {
        POS_END
    } else {
        POS_MIDDLE
    })
}

/// Character-enhanced word vector: `w + (1/|C|) sum c_j`, with each
/// character contributing its position-slot vector.
pub fn cwe_compose(word_id: usize, store: &EmbeddingStore, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = store.word_in(word_id).to_vec();
    let decomp = vocab.decomposition(word_id);
    let inv = 1.0 / decomp.len() as f64;
    for (i, &cid) in decomp.iter().enumerate() {
        let pos = position_class(i, decomp.len()).expect("index within decomposition");
        for (o, c) in out.iter_mut().zip(store.char_vec(cid, pos)) {
            *o += inv * c;
        }
    }
    out
}

/// Glyph-enhanced context vector: `w + (1/|C|) sum (c_j + g_j)` with
/// frozen glyph features `g_j`.
pub fn ctxg_compose(
    word_id: usize,
    store: &EmbeddingStore,
    glyphs: &GlyphTable,
    vocab: &Vocabulary,
) -> Vec<f64> {
    let mut out = cwe_compose(word_id, store, vocab);
    let decomp = vocab.decomposition(word_id);
    let inv = 1.0 / decomp.len() as f64;
    for &cid in decomp {
        for (o, g) in out.iter_mut().zip(glyphs.feature(cid)) {
            *o += inv * g;
        }
    }
    out
}

/// Hidden vector for one CBOW-side example.
///
/// `glyphs` is required for ctxG/tarG and `radicals` for MGE; the
/// context must be non-empty (callers drop empty-context pairs).
pub fn cbow_hidden(
    variant: CbowVariant,
    target_id: usize,
    context_ids: &[usize],
    store: &EmbeddingStore,
    glyphs: Option<&GlyphTable>,
    radicals: Option<&RadicalIndex>,
    vocab: &Vocabulary,
) -> Result<Vec<f64>> {
    assert!(!context_ids.is_empty(), "caller must drop empty contexts");
    let mut hidden = vec![0.0; store.dims];
    let inv_ctx = 1.0 / context_ids.len() as f64;
    for &ctx in context_ids {
        let v = match variant {
            CbowVariant::Cbow => store.word_in(ctx).to_vec(),
            CbowVariant::Cwe | CbowVariant::Mge | CbowVariant::TarG => {
                cwe_compose(ctx, store, vocab)
            }
            CbowVariant::CtxG => {
                let glyphs = glyphs
                    .ok_or_else(|| Error::Config("ctxG requires glyph features".into()))?;
                ctxg_compose(ctx, store, glyphs, vocab)
            }
        };
        for (h, x) in hidden.iter_mut().zip(&v) {
            *h += inv_ctx * x;
        }
    }
    match variant {
        CbowVariant::Mge => {
            let radicals =
                radicals.ok_or_else(|| Error::Config("MGE requires a radical index".into()))?;
            let decomp = vocab.decomposition(target_id);
            let inv = 1.0 / decomp.len() as f64;
            for &cid in decomp {
                let r = store.radical_vec(radicals.radical_of(cid));
                for (h, x) in hidden.iter_mut().zip(r) {
                    *h += inv * x;
                }
            }
        }
        CbowVariant::TarG => {
            let glyphs =
                glyphs.ok_or_else(|| Error::Config("tarG requires glyph features".into()))?;
            let decomp = vocab.decomposition(target_id);
            let inv = 1.0 / decomp.len() as f64;
            for &cid in decomp {
                for (h, g) in hidden.iter_mut().zip(glyphs.feature(cid)) {
                    *h += inv * g;
                }
            }
        }
        _ => {}
    }
    Ok(hidden)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ln_sigmoid(x: f64) -> f64 {
    // numerically stable -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// One negative-sampling step with an explicit negative list.
///
/// Computes the logistic loss on the true target plus the given
/// negatives, descends the output rows with step `lr`, and returns the
/// loss and the gradient with respect to the hidden vector (evaluated at
/// the pre-update parameters) for the caller to distribute.
pub fn negsample_step(
    hidden: &[f64],
    target_id: usize,
    negatives: &[usize],
    store: &mut EmbeddingStore,
    lr: f64,
) -> (f64, Vec<f64>) {
    let d = store.dims;
    let mut loss = 0.0;
    let mut grad_h = vec![0.0; d];
    for (idx, &word) in std::iter::once(&target_id).chain(negatives).enumerate() {
        let label = if idx == 0 { 1.0 } else { 0.0 };
        let row = &store.word_out[word * d..(word + 1) * d];
        let score: f64 = hidden.iter().zip(row).map(|(a, b)| a * b).sum();
        loss -= if label == 1.0 {
            ln_sigmoid(score)
        } else {
            ln_sigmoid(-score)
        };
        // d(loss)/d(score)
        let g = sigmoid(score) - label;
        for (gh, r) in grad_h.iter_mut().zip(row) {
            *gh += g * r;
        }
        let row = &mut store.word_out[word * d..(word + 1) * d];
        for (r, h) in row.iter_mut().zip(hidden) {
            *r -= lr * g * h;
        }
    }
    (loss, grad_h)
}

/// Sampling wrapper around [`negsample_step`].
pub fn negsample_update(
    hidden: &[f64],
    target_id: usize,
    sampler: &NegSampler,
    rng: &mut ChaCha8Rng,
    store: &mut EmbeddingStore,
    lr: f64,
) -> (f64, Vec<f64>) {
    let negatives = sampler.negatives(target_id, rng);
    negsample_step(hidden, target_id, &negatives, store, lr)
}

/// Distributes the hidden gradient of a CBOW-side example back onto the
/// composition inputs. Glyph features receive no update by contract.
pub fn distribute_hidden_gradient(
    variant: CbowVariant,
    grad: &[f64],
    target_id: usize,
    context_ids: &[usize],
    store: &mut EmbeddingStore,
    radicals: Option<&RadicalIndex>,
    vocab: &Vocabulary,
    lr: f64,
) {
    let d = store.dims;
    let inv_ctx = 1.0 / context_ids.len() as f64;
    for &ctx in context_ids {
        let row = &mut store.word_in[ctx * d..(ctx + 1) * d];
        for (w, g) in row.iter_mut().zip(grad) {
            *w -= lr * inv_ctx * g;
        }
        if variant != CbowVariant::Cbow {
            let decomp = vocab.decomposition(ctx).to_vec();
            let coeff = inv_ctx / decomp.len() as f64;
            for (i, &cid) in decomp.iter().enumerate() {
                let pos = position_class(i, decomp.len()).expect("index within decomposition");
                let start = (cid * N_POSITIONS + pos) * d;
                let row = &mut store.char[start..start + d];
                for (c, g) in row.iter_mut().zip(grad) {
                    *c -= lr * coeff * g;
                }
            }
        }
    }
    if variant == CbowVariant::Mge {
        let radicals = radicals.expect("MGE requires a radical index");
        let decomp = vocab.decomposition(target_id).to_vec();
        let coeff = 1.0 / decomp.len() as f64;
        for &cid in &decomp {
            let rid = radicals.radical_of(cid);
            let row = &mut store.radical[rid * d..(rid + 1) * d];
            for (r, g) in row.iter_mut().zip(grad) {
                *r -= lr * coeff * g;
            }
        }
    }
    // tarG's extra term is glyph-only, so nothing else trains there.
}

/// Distributes the hidden gradient of a Skipgram example onto the target
/// composition.
pub fn distribute_target_gradient(
    variant: SkipgramVariant,
    grad: &[f64],
    target_id: usize,
    store: &mut EmbeddingStore,
    vocab: &Vocabulary,
    lr: f64,
) {
    let d = store.dims;
    let row = &mut store.word_in[target_id * d..(target_id + 1) * d];
    for (w, g) in row.iter_mut().zip(grad) {
        *w -= lr * g;
    }
    if variant != SkipgramVariant::Sg {
        let decomp = vocab.decomposition(target_id).to_vec();
        let coeff = 1.0 / decomp.len() as f64;
        for (i, &cid) in decomp.iter().enumerate() {
            let pos = position_class(i, decomp.len()).expect("index within decomposition");
            let start = (cid * N_POSITIONS + pos) * d;
            let row = &mut store.char[start..start + d];
            for (c, g) in row.iter_mut().zip(grad) {
                *c -= lr * coeff * g;
            }
        }
    }
}

/// Shared hyperparameters for the local-window trainers.
#[derive(Debug, Clone)]
pub struct EmbedConfig {
    pub dims: usize,
    pub window: usize,
    pub negatives: usize,
    pub subsample_t: f64,
    pub start_lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            dims: 512,
            window: 5,
            negatives: 10,
            subsample_t: 1e-5,
            start_lr: 0.025,
            epochs: 5,
            seed: 1,
        }
    }
}

impl EmbedConfig {
    /// Learning rate for an epoch: linear decay from `start_lr` across
    /// the epoch budget, floored at `1e-4 * start_lr`.
    pub fn epoch_lr(&self, epoch: usize) -> f64 {
        let frac = 1.0 - epoch as f64 / self.epochs.max(1) as f64;
        (self.start_lr * frac).max(1e-4 * self.start_lr)
    }
}

/// Trains a CBOW-family model (CBOW, CWE, MGE, ctxG, tarG) over corpus
/// lines. Deterministic under the seed in this single-threaded form.
/// Returns the store and the mean loss of the final epoch.
pub fn train_cbow_family(
    lines: &[String],
    vocab: &Vocabulary,
    variant: CbowVariant,
    glyphs: Option<&GlyphTable>,
    radicals: Option<&RadicalIndex>,
    config: &EmbedConfig,
) -> Result<(EmbeddingStore, f64)> {
    let n_radicals = radicals.map_or(0, |r| r.n_radicals());
    let mut store = EmbeddingStore::init(
        vocab.len(),
        vocab.n_chars(),
        n_radicals,
        config.dims,
        config.seed,
    );
    let sampler = NegSampler::new(vocab, config.negatives);
    let mut neg_rng = substream(config.seed, "embed-negatives");
    let mut last_mean_loss = 0.0;
    for epoch in 0..config.epochs {
        let lr = config.epoch_lr(epoch);
        let mut loss_sum = 0.0;
        let mut n_examples = 0u64;
        let pairs = stream_pairs(
            lines.iter(),
            vocab,
            config.window,
            config.subsample_t,
            config.seed.wrapping_add(epoch as u64),
        )?;
        for pair in pairs {
            if pair.context.is_empty() {
                continue;
            }
            let hidden = cbow_hidden(
                variant,
                pair.target,
                &pair.context,
                &store,
                glyphs,
                radicals,
                vocab,
            )?;
            let (loss, grad_h) =
                negsample_update(&hidden, pair.target, &sampler, &mut neg_rng, &mut store, lr);
            distribute_hidden_gradient(
                variant,
                &grad_h,
                pair.target,
                &pair.context,
                &mut store,
                radicals,
                vocab,
                lr,
            );
            loss_sum += loss;
            n_examples += 1;
        }
        last_mean_loss = if n_examples > 0 {
            loss_sum / n_examples as f64
        } else {
            0.0
        };
    }
    Ok((store, last_mean_loss))
}

/// Trains a Skipgram-family model (SG, SG+CWE, SG+CWE+ctxG): the
/// composed target representation predicts each context word.
pub fn train_skipgram_family(
    lines: &[String],
    vocab: &Vocabulary,
    variant: SkipgramVariant,
    glyphs: Option<&GlyphTable>,
    config: &EmbedConfig,
) -> Result<(EmbeddingStore, f64)> {
    let mut store = EmbeddingStore::init(vocab.len(), vocab.n_chars(), 0, config.dims, config.seed);
    let sampler = NegSampler::new(vocab, config.negatives);
    let mut neg_rng = substream(config.seed, "embed-negatives");
    let mut last_mean_loss = 0.0;
    for epoch in 0..config.epochs {
        let lr = config.epoch_lr(epoch);
        let mut loss_sum = 0.0;
        let mut n_examples = 0u64;
        let pairs = stream_pairs(
            lines.iter(),
            vocab,
            config.window,
            config.subsample_t,
            config.seed.wrapping_add(epoch as u64),
        )?;
        for pair in pairs {
            for &ctx in &pair.context {
                let hidden = match variant {
                    SkipgramVariant::Sg => store.word_in(pair.target).to_vec(),
                    SkipgramVariant::SgCwe => cwe_compose(pair.target, &store, vocab),
                    SkipgramVariant::SgCtxG => {
                        let glyphs = glyphs.ok_or_else(|| {
                            Error::Config("SG+CWE+ctxG requires glyph features".into())
                        })?;
                        ctxg_compose(pair.target, &store, glyphs, vocab)
                    }
                };
                let (loss, grad_h) =
                    negsample_update(&hidden, ctx, &sampler, &mut neg_rng, &mut store, lr);
                distribute_target_gradient(variant, &grad_h, pair.target, &mut store, vocab, lr);
                loss_sum += loss;
                n_examples += 1;
            }
        }
        last_mean_loss = if n_examples > 0 {
            loss_sum / n_examples as f64
        } else {
            0.0
        };
    }
    Ok((store, last_mean_loss))
}

/// Raw store pointer shared between hogwild workers. Workers update the
/// same parameter arrays without locks; lost or torn updates on
/// individual entries are tolerated, as is conventional for sparse
/// embedding training.
struct HogwildPtr(*mut EmbeddingStore);
unsafe impl Send for HogwildPtr {}
unsafe impl Sync for HogwildPtr {}

fn hogwild_epoch<F>(
    lines: &[String],
    threads: usize,
    store: &mut EmbeddingStore,
    worker: F,
) -> Result<f64>
where
    F: Fn(usize, Vec<&String>, &mut EmbeddingStore) -> Result<(f64, u64)> + Sync,
{
    let ptr = HogwildPtr(store as *mut EmbeddingStore);
    let totals = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(threads);
        for t in 0..threads {
            let ptr = &ptr;
            let worker = &worker;
            handles.push(scope.spawn(move || {
                let shard: Vec<&String> = lines
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % threads == t)
                    .map(|(_, l)| l)
                    .collect();
                let store = unsafe { &mut *ptr.0 };
                worker(t, shard, store)
            }));
        }
        let mut acc = Ok((0.0, 0u64));
        for h in handles {
            let res = h.join().expect("hogwild worker panicked");
            acc = match (acc, res) {
                (Ok((s, n)), Ok((s2, n2))) => Ok((s + s2, n + n2)),
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
        }
        acc
    })?;
    Ok(if totals.1 > 0 {
        totals.0 / totals.1 as f64
    } else {
        0.0
    })
}

/// Hogwild-style parallel CBOW-family trainer: `threads` workers process
/// disjoint line shards and update the shared store without locks.
/// Results are not bit-reproducible across runs; with `threads == 1`
/// this falls back to the deterministic trainer.
pub fn train_cbow_family_parallel(
    lines: &[String],
    vocab: &Vocabulary,
    variant: CbowVariant,
    glyphs: Option<&GlyphTable>,
    radicals: Option<&RadicalIndex>,
    config: &EmbedConfig,
    threads: usize,
) -> Result<(EmbeddingStore, f64)> {
    if threads <= 1 {
        return train_cbow_family(lines, vocab, variant, glyphs, radicals, config);
    }
    let n_radicals = radicals.map_or(0, |r| r.n_radicals());
    let mut store = EmbeddingStore::init(
        vocab.len(),
        vocab.n_chars(),
        n_radicals,
        config.dims,
        config.seed,
    );
    let sampler = NegSampler::new(vocab, config.negatives);
    let mut last_mean_loss = 0.0;
    for epoch in 0..config.epochs {
        let lr = config.epoch_lr(epoch);
        last_mean_loss = hogwild_epoch(lines, threads, &mut store, |t, shard, store| {
            let mut neg_rng = substream(
                config.seed,
                &format!("embed-negatives-{t}"),
            );
            let pair_seed = config
                .seed
                .wrapping_add(epoch as u64)
                .wrapping_add((t as u64) << 32);
            let pairs = stream_pairs(shard, vocab, config.window, config.subsample_t, pair_seed)?;
            let mut loss_sum = 0.0;
            let mut n = 0u64;
            for pair in pairs {
                if pair.context.is_empty() {
                    continue;
                }
                let hidden = cbow_hidden(
                    variant,
                    pair.target,
                    &pair.context,
                    store,
                    glyphs,
                    radicals,
                    vocab,
                )?;
                let (loss, grad_h) =
                    negsample_update(&hidden, pair.target, &sampler, &mut neg_rng, store, lr);
                distribute_hidden_gradient(
                    variant,
                    &grad_h,
                    pair.target,
                    &pair.context,
                    store,
                    radicals,
                    vocab,
                    lr,
                );
                loss_sum += loss;
                n += 1;
            }
            Ok((loss_sum, n))
        })?;
    }
    Ok((store, last_mean_loss))
}

/// Hogwild-style parallel Skipgram-family trainer; see
/// [`train_cbow_family_parallel`] for the concurrency contract.
pub fn train_skipgram_family_parallel(
    lines: &[String],
    vocab: &Vocabulary,
    variant: SkipgramVariant,
    glyphs: Option<&GlyphTable>,
    config: &EmbedConfig,
    threads: usize,
) -> Result<(EmbeddingStore, f64)> {
    if threads <= 1 {
        return train_skipgram_family(lines, vocab, variant, glyphs, config);
    }
    let mut store = EmbeddingStore::init(vocab.len(), vocab.n_chars(), 0, config.dims, config.seed);
    let sampler = NegSampler::new(vocab, config.negatives);
    let mut last_mean_loss = 0.0;
    for epoch in 0..config.epochs {
        let lr = config.epoch_lr(epoch);
        last_mean_loss = hogwild_epoch(lines, threads, &mut store, |t, shard, store| {
            let mut neg_rng = substream(
                config.seed,
                &format!("embed-negatives-{t}"),
            );
            let pair_seed = config
                .seed
                .wrapping_add(epoch as u64)
                .wrapping_add((t as u64) << 32);
            let pairs = stream_pairs(shard, vocab, config.window, config.subsample_t, pair_seed)?;
            let mut loss_sum = 0.0;
            let mut n = 0u64;
            for pair in pairs {
                for &ctx in &pair.context {
                    let hidden = match variant {
                        SkipgramVariant::Sg => store.word_in(pair.target).to_vec(),
                        SkipgramVariant::SgCwe => cwe_compose(pair.target, store, vocab),
                        SkipgramVariant::SgCtxG => {
                            let glyphs = glyphs.ok_or_else(|| {
                                Error::Config("SG+CWE+ctxG requires glyph features".into())
                            })?;
                            ctxg_compose(pair.target, store, glyphs, vocab)
                        }
                    };
                    let (loss, grad_h) =
                        negsample_update(&hidden, ctx, &sampler, &mut neg_rng, store, lr);
                    distribute_target_gradient(variant, &grad_h, pair.target, store, vocab, lr);
                    loss_sum += loss;
                    n += 1;
                }
            }
            Ok((loss_sum, n))
        })?;
    }
    Ok((store, last_mean_loss))
}

/// The vector submitted to evaluation for each variant: plain word
/// vectors for CBOW/SG/MGE-style models, the composed representation for
/// CWE and the glyph variants.
pub fn eval_vector(
    variant: CbowVariant,
    word_id: usize,
    store: &EmbeddingStore,
    glyphs: Option<&GlyphTable>,
    vocab: &Vocabulary,
) -> Result<Vec<f64>> {
    Ok(match variant {
        CbowVariant::Cbow => store.word_in(word_id).to_vec(),
        CbowVariant::Cwe | CbowVariant::Mge | CbowVariant::TarG => {
            cwe_compose(word_id, store, vocab)
        }
        CbowVariant::CtxG => {
            let glyphs =
                glyphs.ok_or_else(|| Error::Config("ctxG requires glyph features".into()))?;
            ctxg_compose(word_id, store, glyphs, vocab)
        }
    })
}

/// Saves word vectors in text format via [`crate::textfmt`], including
/// character and radical tables under reserved name prefixes.
pub fn save_store(
    store: &EmbeddingStore,
    vocab: &Vocabulary,
    radicals: Option<&RadicalIndex>,
    path: &Path,
) -> Result<()> {
    let mut rows: Vec<(String, &[f64])> = Vec::new();
    for id in 0..vocab.len() {
        rows.push((vocab.word(id).to_string(), store.word_in(id)));
    }
    for cid in 0..vocab.n_chars() {
        for pos in 0..N_POSITIONS {
            rows.push((
                format!("#CHAR:{pos}:{}", vocab.character(cid)),
                store.char_vec(cid, pos),
            ));
        }
    }
    if let Some(radicals) = radicals {
        for rid in 0..radicals.n_radicals() {
            rows.push((
                format!("#RAD:{}", radicals.radical_name(rid)),
                store.radical_vec(rid),
            ));
        }
    }
    crate::textfmt::save_vectors(rows.iter().map(|(w, v)| (w.as_str(), *v)), store.dims, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;

    fn toy_vocab() -> Vocabulary {
        // words: 十口 (2 chars), 口 (1 char), 十十十 (3 chars of one kind)
        let tokens = ["十口", "口", "十十十", "十口", "口", "十十十"];
        build_vocab(tokens, 0).unwrap()
    }

    fn planted_store(vocab: &Vocabulary, n_radicals: usize, dims: usize) -> EmbeddingStore {
        let mut store = EmbeddingStore::init(vocab.len(), vocab.n_chars(), n_radicals, dims, 7);
        // give output rows nonzero content so scores are informative
        for (i, v) in store.word_out.iter_mut().enumerate() {
            *v = ((i as f64) * 0.37).sin() * 0.3;
        }
        store
    }

    #[test]
    fn position_classes() {
        assert_eq!(position_class(0, 3).unwrap(), POS_BEGIN);
        assert_eq!(position_class(1, 3).unwrap(), POS_MIDDLE);
        assert_eq!(position_class(2, 3).unwrap(), POS_END);
        assert_eq!(position_class(0, 1).unwrap(), POS_BEGIN);
        assert!(matches!(
            position_class(3, 3),
            Err(Error::PositionOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn cwe_compose_matches_hand_arithmetic() {
        let vocab = toy_vocab();
        let d = 4;
        let mut store = EmbeddingStore::init(vocab.len(), vocab.n_chars(), 0, d, 1);
        let w = vocab.id("十口").unwrap();
        store.word_in[w * d..(w + 1) * d].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let c_shi = vocab.char_id('十').unwrap();
        let c_kou = vocab.char_id('口').unwrap();
        // 十 is the begin char, 口 the end char of 十口
        let s = (c_shi * N_POSITIONS + POS_BEGIN) * d;
        store.char[s..s + d].copy_from_slice(&[0.0, 2.0, 0.0, 0.0]);
        let s = (c_kou * N_POSITIONS + POS_END) * d;
        store.char[s..s + d].copy_from_slice(&[0.0, 0.0, 4.0, 0.0]);
        assert_eq!(cwe_compose(w, &store, &vocab), vec![1.0, 1.0, 2.0, 0.0]);

        // single-character word: w + c (begin slot)
        let w1 = vocab.id("口").unwrap();
        store.word_in[w1 * d..(w1 + 1) * d].copy_from_slice(&[0.5, 0.0, 0.0, 0.0]);
        let s = (c_kou * N_POSITIONS + POS_BEGIN) * d;
        store.char[s..s + d].copy_from_slice(&[0.0, 0.25, 0.0, 0.0]);
        assert_eq!(cwe_compose(w1, &store, &vocab), vec![0.5, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn ctxg_zero_glyphs_reduces_to_cwe() {
        let vocab = toy_vocab();
        let store = planted_store(&vocab, 0, 6);
        let glyphs = GlyphTable::zeros(vocab.n_chars(), 6);
        for id in 0..vocab.len() {
            assert_eq!(
                ctxg_compose(id, &store, &glyphs, &vocab),
                cwe_compose(id, &store, &vocab)
            );
        }
    }

    #[test]
    fn ctxg_compose_hand_case() {
        let vocab = toy_vocab();
        let d = 3;
        let store = planted_store(&vocab, 0, d);
        let mut glyphs = GlyphTable::zeros(vocab.n_chars(), d);
        let c_shi = vocab.char_id('十').unwrap();
        let c_kou = vocab.char_id('口').unwrap();
        glyphs.features[c_shi * d..(c_shi + 1) * d].copy_from_slice(&[2.0, 0.0, 0.0]);
        glyphs.features[c_kou * d..(c_kou + 1) * d].copy_from_slice(&[0.0, 4.0, 0.0]);
        let w = vocab.id("十口").unwrap();
        let base = cwe_compose(w, &store, &vocab);
        let got = ctxg_compose(w, &store, &glyphs, &vocab);
        assert_eq!(got[0], base[0] + 1.0);
        assert_eq!(got[1], base[1] + 2.0);
        assert_eq!(got[2], base[2]);
    }

    #[test]
    fn cbow_hidden_variants() {
        let vocab = toy_vocab();
        let d = 5;
        let store = planted_store(&vocab, 2, d);
        let glyphs = GlyphTable::zeros(vocab.n_chars(), d);
        let radicals = RadicalIndex {
            radical_of: vec![0; vocab.n_chars()],
            radicals: vec!["口".into()],
        };
        let target = vocab.id("十口").unwrap();
        let ctx = [vocab.id("口").unwrap()];

        // single context word under CBOW: that word's vector
        let h = cbow_hidden(CbowVariant::Cbow, target, &ctx, &store, None, None, &vocab).unwrap();
        assert_eq!(h, store.word_in(ctx[0]));

        // MGE with all-zero radical vectors equals the CWE hidden
        let mut store_zero_rad = store.clone();
        store_zero_rad.radical.iter_mut().for_each(|v| *v = 0.0);
        let h_mge = cbow_hidden(
            CbowVariant::Mge,
            target,
            &ctx,
            &store_zero_rad,
            None,
            Some(&radicals),
            &vocab,
        )
        .unwrap();
        let h_cwe = cbow_hidden(
            CbowVariant::Cwe,
            target,
            &ctx,
            &store_zero_rad,
            None,
            None,
            &vocab,
        )
        .unwrap();
        assert_eq!(h_mge, h_cwe);

        // tarG = CWE hidden + mean of target glyph features
        let mut glyphs2 = glyphs.clone();
        glyphs2.features.iter_mut().for_each(|v| *v = 1.5);
        let h_tar = cbow_hidden(
            CbowVariant::TarG,
            target,
            &ctx,
            &store,
            Some(&glyphs2),
            None,
            &vocab,
        )
        .unwrap();
        let h_cwe = cbow_hidden(CbowVariant::Cwe, target, &ctx, &store, None, None, &vocab).unwrap();
        for (a, b) in h_tar.iter().zip(&h_cwe) {
            assert!((a - (b + 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn negsample_orthogonal_loss_and_zero_lr() {
        let vocab = toy_vocab();
        let d = 4;
        let mut store = EmbeddingStore::init(vocab.len(), vocab.n_chars(), 0, d, 1);
        // word_out starts at zero, so every score is 0 and each term is ln 2
        let hidden = vec![0.3, -0.2, 0.1, 0.7];
        let before = store.clone();
        let (loss, _) = negsample_step(&hidden, 0, &[1, 2], &mut store, 0.0);
        assert!((loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(store, before);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-4)
    }

    #[test]
    fn negsample_gradients_match_finite_differences() {
        let vocab = toy_vocab();
        let d = 4;
        let store = planted_store(&vocab, 0, d);
        let hidden = vec![0.3, -0.5, 0.2, 0.9];
        let target = 0;
        let negatives = [1usize, 2];
        let loss_at = |h: &[f64], s: &EmbeddingStore| {
            let mut s = s.clone();
            negsample_step(h, target, &negatives, &mut s, 0.0).0
        };
        let (_, grad_h) = negsample_step(&hidden, target, &negatives, &mut store.clone(), 0.0);
        let eps = 1e-6;
        for i in 0..d {
            let mut hp = hidden.clone();
            let mut hm = hidden.clone();
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (loss_at(&hp, &store) - loss_at(&hm, &store)) / (2.0 * eps);
            assert!(rel_err(fd, grad_h[i]) < 1e-4, "hidden grad {i}");
        }
        // word_out update equals -lr * dL/d(word_out)
        let lr = 0.01;
        let mut stepped = store.clone();
        negsample_step(&hidden, target, &negatives, &mut stepped, lr);
        for &word in std::iter::once(&target).chain(&negatives) {
            for i in 0..d {
                let idx = word * d + i;
                let mut sp = store.clone();
                let mut sm = store.clone();
                sp.word_out[idx] += eps;
                sm.word_out[idx] -= eps;
                let fd = (loss_at(&hidden, &sp) - loss_at(&hidden, &sm)) / (2.0 * eps);
                let applied = (store.word_out[idx] - stepped.word_out[idx]) / lr;
                assert!(rel_err(fd, applied) < 1e-4, "word_out grad {word}/{i}");
            }
        }
    }

    /// Full-step finite-difference check: for each variant, one training
    /// step's parameter change divided by -lr must match the gradient of
    /// the example loss at the starting point.
    #[test]
    fn full_step_gradients_match_finite_differences() {
        let vocab = toy_vocab();
        let d = 3;
        let radicals = RadicalIndex {
            radical_of: (0..vocab.n_chars()).map(|c| c % 2).collect(),
            radicals: vec!["a".into(), "b".into()],
        };
        let mut glyphs = GlyphTable::zeros(vocab.n_chars(), d);
        for (i, v) in glyphs.features.iter_mut().enumerate() {
            *v = ((i as f64) * 0.71).cos() * 0.4;
        }
        let target = vocab.id("十口").unwrap();
        let context = [vocab.id("口").unwrap(), vocab.id("十十十").unwrap()];
        let negatives = [vocab.id("十十十").unwrap()];
        for variant in [
            CbowVariant::Cbow,
            CbowVariant::Cwe,
            CbowVariant::Mge,
            CbowVariant::CtxG,
            CbowVariant::TarG,
        ] {
            let store = planted_store(&vocab, radicals.n_radicals(), d);
            let loss_at = |s: &EmbeddingStore| {
                let h = cbow_hidden(
                    variant,
                    target,
                    &context,
                    s,
                    Some(&glyphs),
                    Some(&radicals),
                    &vocab,
                )
                .unwrap();
                negsample_step(&h, target, &negatives, &mut s.clone(), 0.0).0
            };
            let lr = 0.01;
            let mut stepped = store.clone();
            let h = cbow_hidden(
                variant,
                target,
                &context,
                &stepped,
                Some(&glyphs),
                Some(&radicals),
                &vocab,
            )
            .unwrap();
            let (_, grad_h) = negsample_step(&h, target, &negatives, &mut stepped, lr);
            distribute_hidden_gradient(
                variant,
                &grad_h,
                target,
                &context,
                &mut stepped,
                Some(&radicals),
                &vocab,
                lr,
            );
            let eps = 1e-6;
            let check = |field: fn(&EmbeddingStore) -> &Vec<f64>,
                             field_mut: fn(&mut EmbeddingStore) -> &mut Vec<f64>,
                             name: &str| {
                let n = field(&store).len();
                for i in 0..n {
                    let mut sp = store.clone();
                    let mut sm = store.clone();
                    field_mut(&mut sp)[i] += eps;
                    field_mut(&mut sm)[i] -= eps;
                    let fd = (loss_at(&sp) - loss_at(&sm)) / (2.0 * eps);
                    let applied = (field(&store)[i] - field(&stepped)[i]) / lr;
                    assert!(
                        rel_err(fd, applied) < 1e-4,
                        "{variant:?} {name}[{i}]: fd {fd:.6e} applied {applied:.6e}"
                    );
                }
            };
            check(|s| &s.word_in, |s| &mut s.word_in, "word_in");
            check(|s| &s.word_out, |s| &mut s.word_out, "word_out");
            check(|s| &s.char, |s| &mut s.char, "char");
            check(|s| &s.radical, |s| &mut s.radical, "radical");
        }
    }

    #[test]
    fn skipgram_step_gradients_match_finite_differences() {
        let vocab = toy_vocab();
        let d = 3;
        let mut glyphs = GlyphTable::zeros(vocab.n_chars(), d);
        for (i, v) in glyphs.features.iter_mut().enumerate() {
            *v = ((i as f64) * 0.43).sin() * 0.5;
        }
        let target = vocab.id("十口").unwrap();
        let ctx = vocab.id("口").unwrap();
        let negatives = [vocab.id("十十十").unwrap()];
        for variant in [
            SkipgramVariant::Sg,
            SkipgramVariant::SgCwe,
            SkipgramVariant::SgCtxG,
        ] {
            let store = planted_store(&vocab, 0, d);
            let compose = |s: &EmbeddingStore| match variant {
                SkipgramVariant::Sg => s.word_in(target).to_vec(),
                SkipgramVariant::SgCwe => cwe_compose(target, s, &vocab),
                SkipgramVariant::SgCtxG => ctxg_compose(target, s, &glyphs, &vocab),
            };
            let loss_at = |s: &EmbeddingStore| {
                let h = compose(s);
                negsample_step(&h, ctx, &negatives, &mut s.clone(), 0.0).0
            };
            let lr = 0.01;
            let mut stepped = store.clone();
            let h = compose(&stepped);
            let (_, grad_h) = negsample_step(&h, ctx, &negatives, &mut stepped, lr);
            distribute_target_gradient(variant, &grad_h, target, &mut stepped, &vocab, lr);
            let eps = 1e-6;
            for (name, get, get_mut) in [
                (
                    "word_in",
                    (|s: &EmbeddingStore| &s.word_in) as fn(&EmbeddingStore) -> &Vec<f64>,
                    (|s: &mut EmbeddingStore| &mut s.word_in)
                        as fn(&mut EmbeddingStore) -> &mut Vec<f64>,
                ),
                ("word_out", |s| &s.word_out, |s| &mut s.word_out),
                ("char", |s| &s.char, |s| &mut s.char),
            ] {
                for i in 0..get(&store).len() {
                    let mut sp = store.clone();
                    let mut sm = store.clone();
                    get_mut(&mut sp)[i] += eps;
                    get_mut(&mut sm)[i] -= eps;
                    let fd = (loss_at(&sp) - loss_at(&sm)) / (2.0 * eps);
                    let applied = (get(&store)[i] - get(&stepped)[i]) / lr;
                    assert!(
                        rel_err(fd, applied) < 1e-4,
                        "{variant:?} {name}[{i}]: fd {fd:.6e} applied {applied:.6e}"
                    );
                }
            }
        }
    }

    #[test]
    fn distribute_coefficients() {
        let vocab = toy_vocab();
        let d = 2;
        let store0 = planted_store(&vocab, 0, d);
        let grad = vec![1.0, -2.0];
        let target = vocab.id("口").unwrap();
        let context = [vocab.id("十口").unwrap(), vocab.id("十十十").unwrap()];
        let lr = 0.1;

        // CBOW: each of the 2 context rows moves by -lr * grad / 2
        let mut s = store0.clone();
        distribute_hidden_gradient(
            CbowVariant::Cbow,
            &grad,
            target,
            &context,
            &mut s,
            None,
            &vocab,
            lr,
        );
        for &c in &context {
            for i in 0..d {
                let delta = s.word_in[c * d + i] - store0.word_in[c * d + i];
                assert!((delta + lr * grad[i] / 2.0).abs() < 1e-12);
            }
        }

        // CWE: each char of the 2-char context word gets grad/(2 ctx * 2 chars)
        let mut s = store0.clone();
        distribute_hidden_gradient(
            CbowVariant::Cwe,
            &grad,
            target,
            &context[..],
            &mut s,
            None,
            &vocab,
            lr,
        );
        let c_kou = vocab.char_id('口').unwrap();
        let idx = (c_kou * N_POSITIONS + POS_END) * d;
        for i in 0..d {
            let delta = s.char[idx + i] - store0.char[idx + i];
            assert!((delta + lr * grad[i] / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn glyph_table_frozen_through_training() {
        let vocab = toy_vocab();
        let d = 4;
        let mut raw = BTreeMap::new();
        for cid in 0..vocab.n_chars() {
            raw.insert(vocab.character(cid), vec![0.2; d]);
        }
        let glyphs = GlyphTable::build(&raw, &vocab, d, 9).unwrap();
        let checksum = glyphs.checksum();
        let lines: Vec<String> = vec!["十口 口 十十十".into(); 20];
        let config = EmbedConfig {
            dims: d,
            window: 2,
            negatives: 2,
            subsample_t: f64::INFINITY,
            start_lr: 0.025,
            epochs: 2,
            seed: 3,
        };
        train_cbow_family(&lines, &vocab, CbowVariant::CtxG, Some(&glyphs), None, &config)
            .unwrap();
        train_cbow_family(&lines, &vocab, CbowVariant::TarG, Some(&glyphs), None, &config)
            .unwrap();
        assert_eq!(glyphs.checksum(), checksum);
    }

    #[test]
    fn glyph_table_projects_mismatched_dims() {
        let vocab = toy_vocab();
        let mut raw = BTreeMap::new();
        for cid in 0..vocab.n_chars() {
            raw.insert(vocab.character(cid), vec![1.0; 8]);
        }
        let a = GlyphTable::build(&raw, &vocab, 4, 5).unwrap();
        let b = GlyphTable::build(&raw, &vocab, 4, 5).unwrap();
        assert_eq!(a, b, "projection must be deterministic under the seed");
        assert_eq!(a.feature(0).len(), 4);
        let c = GlyphTable::build(&raw, &vocab, 4, 6).unwrap();
        assert_ne!(a, c, "different seeds give different projections");
    }

    #[test]
    fn neg_sampler_tracks_powered_frequencies() {
        let tokens: Vec<&str> = std::iter::empty()
            .chain(std::iter::repeat("a").take(81))
            .chain(std::iter::repeat("b").take(16))
            .chain(std::iter::repeat("c").take(1))
            .collect();
        let vocab = build_vocab(tokens, 0).unwrap();
        let sampler = NegSampler::new(&vocab, 2);
        let mut rng = substream(11, "test-neg");
        let mut counts = [0u64; 3];
        let n = 200_000;
        for _ in 0..n {
            counts[sampler.sample(&mut rng)] += 1;
        }
        // expected weights: 81^.75 : 16^.75 : 1 = 27 : 8 : 1
        let total: f64 = 27.0 + 8.0 + 1.0;
        for (i, &w) in [27.0, 8.0, 1.0].iter().enumerate() {
            let p = w / total;
            let got = counts[i] as f64 / n as f64;
            assert!((got - p).abs() < 0.01, "word {i}: {got} vs {p}");
        }
    }

    #[test]
    fn epochs_zero_leaves_initialization() {
        let vocab = toy_vocab();
        let lines = vec!["十口 口".to_string()];
        let config = EmbedConfig {
            dims: 4,
            epochs: 0,
            seed: 5,
            ..EmbedConfig::default()
        };
        let (store, _) =
            train_cbow_family(&lines, &vocab, CbowVariant::Cbow, None, None, &config).unwrap();
        let init = EmbeddingStore::init(vocab.len(), vocab.n_chars(), 0, 4, 5);
        assert_eq!(store, init);
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let vocab = toy_vocab();
        let lines: Vec<String> = vec!["十口 口 十十十 口".into(); 10];
        let config = EmbedConfig {
            dims: 8,
            window: 2,
            negatives: 3,
            subsample_t: f64::INFINITY,
            epochs: 2,
            seed: 42,
            ..EmbedConfig::default()
        };
        let (a, _) =
            train_skipgram_family(&lines, &vocab, SkipgramVariant::SgCwe, None, &config).unwrap();
        let (b, _) =
            train_skipgram_family(&lines, &vocab, SkipgramVariant::SgCwe, None, &config).unwrap();
        assert_eq!(a, b);
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn two_cluster_corpus_separates() {
        // words co-occur only within their cluster
        let cluster_a = ["红", "蓝", "绿", "黄"];
        let cluster_b = ["跑", "跳", "走", "游"];
        let mut lines = Vec::new();
        let mut rng = substream(17, "test-clusters");
        for _ in 0..120 {
            let pick = |rng: &mut ChaCha8Rng, set: &[&str]| {
                let mut line = Vec::new();
                for _ in 0..4 {
                    line.push(set[rng.gen_range(0..set.len())]);
                }
                line.join(" ")
            };
            lines.push(pick(&mut rng, &cluster_a));
            lines.push(pick(&mut rng, &cluster_b));
        }
        let vocab = build_vocab(lines.iter().flat_map(|l| l.split(' ')), 0).unwrap();
        let config = EmbedConfig {
            dims: 16,
            window: 3,
            negatives: 5,
            subsample_t: f64::INFINITY,
            epochs: 10,
            seed: 2,
            ..EmbedConfig::default()
        };
        let (store, _) =
            train_skipgram_family(&lines, &vocab, SkipgramVariant::Sg, None, &config).unwrap();
        let ids = |set: &[&str]| -> Vec<usize> { set.iter().map(|w| vocab.id(w).unwrap()).collect() };
        let a = ids(&cluster_a);
        let b = ids(&cluster_b);
        let mean_cos = |xs: &[usize], ys: &[usize], same: bool| {
            let mut sum = 0.0;
            let mut n = 0;
            for &x in xs {
                for &y in ys {
                    if same && x >= y {
                        continue;
                    }
                    sum += cosine(store.word_in(x), store.word_in(y));
                    n += 1;
                }
            }
            sum / n as f64
        };
        let intra = (mean_cos(&a, &a, true) + mean_cos(&b, &b, true)) / 2.0;
        let inter = mean_cos(&a, &b, false);
        assert!(
            intra > inter + 0.2,
            "intra {intra:.3} not separated from inter {inter:.3}"
        );
    }

    /// The lock-free parallel trainer still separates the clusters; it is
    /// not bit-reproducible, so only the learning outcome is asserted.
    #[test]
    fn hogwild_training_learns() {
        let cluster_a = ["红", "蓝", "绿", "黄"];
        let cluster_b = ["跑", "跳", "走", "游"];
        let mut lines = Vec::new();
        let mut rng = substream(17, "test-hogwild");
        for _ in 0..120 {
            let pick = |rng: &mut ChaCha8Rng, set: &[&str]| {
                let mut line = Vec::new();
                for _ in 0..4 {
                    line.push(set[rng.gen_range(0..set.len())]);
                }
                line.join(" ")
            };
            lines.push(pick(&mut rng, &cluster_a));
            lines.push(pick(&mut rng, &cluster_b));
        }
        let vocab = build_vocab(lines.iter().flat_map(|l| l.split(' ')), 0).unwrap();
        let config = EmbedConfig {
            dims: 16,
            window: 3,
            negatives: 5,
            subsample_t: f64::INFINITY,
            epochs: 10,
            seed: 2,
            ..EmbedConfig::default()
        };
        let (store, _) =
            train_skipgram_family_parallel(&lines, &vocab, SkipgramVariant::Sg, None, &config, 3)
                .unwrap();
        assert!(store.word_in.iter().all(|v| v.is_finite()));
        let ids = |set: &[&str]| -> Vec<usize> { set.iter().map(|w| vocab.id(w).unwrap()).collect() };
        let a = ids(&cluster_a);
        let b = ids(&cluster_b);
        let mean_cos = |xs: &[usize], ys: &[usize], same: bool| {
            let mut sum = 0.0;
            let mut n = 0;
            for &x in xs {
                for &y in ys {
                    if same && x >= y {
                        continue;
                    }
                    sum += cosine(store.word_in(x), store.word_in(y));
                    n += 1;
                }
            }
            sum / n as f64
        };
        let intra = (mean_cos(&a, &a, true) + mean_cos(&b, &b, true)) / 2.0;
        let inter = mean_cos(&a, &b, false);
        assert!(
            intra > inter + 0.15,
            "intra {intra:.3} not separated from inter {inter:.3}"
        );
        // The CBOW-family parallel path runs end to end as well.
        let (store2, _) = train_cbow_family_parallel(
            &lines,
            &vocab,
            CbowVariant::Cbow,
            None,
            None,
            &config,
            2,
        )
        .unwrap();
        assert!(store2.word_in.iter().all(|v| v.is_finite()));
    }

    /// Two words sharing a character and the same contexts end up closer
    /// under CWE than under CBOW: the shared character vector couples them.
    #[test]
    fn shared_character_raises_cwe_similarity() {
        let w1 = "木林";
        let w2 = "木森";
        let contexts = ["山", "水", "田", "石"];
        let mut lines = Vec::new();
        let mut rng = substream(23, "test-shared-char");
        for _ in 0..150 {
            let w = if rng.gen::<bool>() { w1 } else { w2 };
            let c = contexts[rng.gen_range(0..contexts.len())];
            if rng.gen::<bool>() {
                lines.push(format!("{w} {c}"));
            } else {
                lines.push(format!("{c} {w}"));
            }
        }
        let vocab = build_vocab(lines.iter().flat_map(|l| l.split(' ')), 0).unwrap();
        let config = EmbedConfig {
            dims: 16,
            window: 2,
            negatives: 5,
            subsample_t: f64::INFINITY,
            epochs: 8,
            seed: 4,
            ..EmbedConfig::default()
        };
        let (cbow, _) =
            train_cbow_family(&lines, &vocab, CbowVariant::Cbow, None, None, &config).unwrap();
        let (cwe, _) =
            train_cbow_family(&lines, &vocab, CbowVariant::Cwe, None, None, &config).unwrap();
        let i1 = vocab.id(w1).unwrap();
        let i2 = vocab.id(w2).unwrap();
        let sim_cbow = cosine(cbow.word_in(i1), cbow.word_in(i2));
        let sim_cwe = cosine(
            &cwe_compose(i1, &cwe, &vocab),
            &cwe_compose(i2, &cwe, &vocab),
        );
        assert!(
            sim_cwe > sim_cbow,
            "cwe {sim_cwe:.3} should exceed cbow {sim_cbow:.3}"
        );
    }

    #[test]
    fn radical_index_requires_total_coverage() {
        let vocab = toy_vocab();
        let tsv = "十\t十\n";
        let err = RadicalIndex::load(std::io::Cursor::new(tsv), &vocab);
        assert!(err.is_err());
        let tsv = "十\t十\n口\t口\n";
        let idx = RadicalIndex::load(std::io::Cursor::new(tsv), &vocab).unwrap();
        assert_eq!(idx.n_radicals(), 2);
        assert_eq!(
            idx.radical_of(vocab.char_id('口').unwrap()),
            idx.radical_of(vocab.char_id('口').unwrap())
        );
    }
}
