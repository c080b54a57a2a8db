//! Sparse co-occurrence statistics with harmonic distance weighting, and
//! a GloVe trainer over the resulting matrix.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Sparse co-occurrence matrix: one positive entry per ordered `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCooc {
    pub n_words: usize,
    /// Sorted by `(i, j)`.
    pub entries: Vec<(u32, u32, f64)>,
}

/// Accumulates window co-occurrences over corpus lines.
///
/// For each center word, every in-vocabulary neighbor within `window` on
/// either side contributes `1/d` at distance `d` (harmonic) or `1`
/// (flat). Windows never cross line boundaries.
pub fn build_cooc<I, S>(
    lines: I,
    vocab: &Vocabulary,
    window: usize,
    harmonic: bool,
) -> Result<SparseCooc>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if window < 1 {
        return Err(Error::BadWindow(window));
    }
    let mut acc: HashMap<(u32, u32), f64> = HashMap::new();
    let mut ids = Vec::new();
    for line in lines {
        ids.clear();
        ids.extend(line.as_ref().split_whitespace().filter_map(|t| vocab.id(t)));
        for (c, &i) in ids.iter().enumerate() {
            let lo = c.saturating_sub(window);
            let hi = (c + window).min(ids.len().saturating_sub(1));
            for (o, &j) in ids.iter().enumerate().take(hi + 1).skip(lo) {
                if o == c {
                    continue;
                }
                let d = c.abs_diff(o) as f64;
                let w = if harmonic { 1.0 / d } else { 1.0 };
                *acc.entry((i as u32, j as u32)).or_insert(0.0) += w;
            }
        }
    }
    let mut entries: Vec<(u32, u32, f64)> = acc
        .into_iter()
        .map(|((i, j), x)| (i, j, x))
        .collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    Ok(SparseCooc {
        n_words: vocab.len(),
        entries,
    })
}

impl SparseCooc {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(i as u32, j as u32), |&(a, b, _)| (a, b))
            .map(|idx| self.entries[idx].2)
            .unwrap_or(0.0)
    }

    /// Binary triple stream with a `GVCO` header recording the vocabulary
    /// size and build parameters.
    pub fn save(&self, path: &Path, window: u32, harmonic: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"GVCO")?;
        f.write_all(&(self.n_words as u32).to_le_bytes())?;
        f.write_all(&window.to_le_bytes())?;
        f.write_all(&(harmonic as u32).to_le_bytes())?;
        f.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for &(i, j, x) in &self.entries {
            f.write_all(&i.to_le_bytes())?;
            f.write_all(&j.to_le_bytes())?;
            f.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    /// Loads a saved matrix, returning it with the recorded build
    /// parameters `(window, harmonic)`.
    pub fn load(path: &Path) -> Result<(SparseCooc, u32, bool)> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let bad = |msg: &str| Error::Config(format!("bad cooc file {}: {msg}", path.display()));
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u32buf)?;
        if &u32buf != b"GVCO" {
            return Err(bad("wrong magic"));
        }
        let mut read_u32 = |f: &mut dyn Read| -> Result<u32> {
            f.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let n_words = read_u32(&mut f)? as usize;
        let window = read_u32(&mut f)?;
        let harmonic = read_u32(&mut f)? != 0;
        f.read_exact(&mut u64buf)?;
        let n = u64::from_le_bytes(u64buf) as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            f.read_exact(&mut u32buf)?;
            let i = u32::from_le_bytes(u32buf);
            f.read_exact(&mut u32buf)?;
            let j = u32::from_le_bytes(u32buf);
            f.read_exact(&mut u64buf)?;
            entries.push((i, j, f64::from_le_bytes(u64buf)));
        }
        Ok((SparseCooc { n_words, entries }, window, harmonic))
    }
}

/// Entry weighting `(x / x_max)^alpha`, clamped at 1 for `x >= x_max`.
pub fn glove_weight(x: f64, x_max: f64, alpha: f64) -> f64 {
    if x < x_max {
        (x / x_max).powf(alpha)
    } else {
        1.0
    }
}

/// Trainable state for the factorization: center vectors `w`, context
/// vectors `w_tilde`, two bias sets, and per-parameter Adagrad
/// accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveParams {
    pub w: Vec<f64>,
    pub w_tilde: Vec<f64>,
    pub b: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub dims: usize,
    acc_w: Vec<f64>,
    acc_w_tilde: Vec<f64>,
    acc_b: Vec<f64>,
    acc_b_tilde: Vec<f64>,
}

const ADAGRAD_EPS: f64 = 1e-8;

impl GloveParams {
    /// Vectors and biases uniform in `[-0.5/D, 0.5/D]`.
    pub fn init(n_words: usize, dims: usize, seed: u64) -> GloveParams {
        let mut rng = substream(seed, "glove-init");
        let half = 0.5 / dims as f64;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-half..half)).collect()
        };
        GloveParams {
            w: draw(n_words * dims),
            w_tilde: draw(n_words * dims),
            b: draw(n_words),
            b_tilde: draw(n_words),
            dims,
            acc_w: vec![0.0; n_words * dims],
            acc_w_tilde: vec![0.0; n_words * dims],
            acc_b: vec![0.0; n_words],
            acc_b_tilde: vec![0.0; n_words],
        }
    }

    fn dot(&self, i: usize, j: usize) -> f64 {
        let d = self.dims;
        self.w[i * d..(i + 1) * d]
            .iter()
            .zip(&self.w_tilde[j * d..(j + 1) * d])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Model prediction for `ln X_ij`.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        self.dot(i, j) + self.b[i] + self.b_tilde[j]
    }
}

fn adagrad(p: &mut f64, acc: &mut f64, g: f64, lr: f64) {
    *acc += g * g;
    *p -= lr * g / (acc.sqrt() + ADAGRAD_EPS);
}

/// One weighted least-squares step on a single entry. The loss
/// contribution is `f(X_ij) * r^2` with residual
/// `r = w_i . w_tilde_j + b_i + b_tilde_j - ln X_ij`.
pub fn glove_step(
    entry: (usize, usize, f64),
    params: &mut GloveParams,
    lr: f64,
    x_max: f64,
    alpha: f64,
) -> f64 {
    let (i, j, x) = entry;
    let d = params.dims;
    let f = glove_weight(x, x_max, alpha);
    let r = params.predict(i, j) - x.ln();
    let loss = f * r * r;
    // d(loss)/d(param) = 2 f r * d(pred)/d(param)
    let g = 2.0 * f * r;
    for k in 0..d {
        let wi = params.w[i * d + k];
        let wj = params.w_tilde[j * d + k];
        adagrad(&mut params.w[i * d + k], &mut params.acc_w[i * d + k], g * wj, lr);
        adagrad(
            &mut params.w_tilde[j * d + k],
            &mut params.acc_w_tilde[j * d + k],
            g * wi,
            lr,
        );
    }
    adagrad(&mut params.b[i], &mut params.acc_b[i], g, lr);
    adagrad(&mut params.b_tilde[j], &mut params.acc_b_tilde[j], g, lr);
    loss
}

#[derive(Debug, Clone)]
pub struct GloveConfig {
    pub dims: usize,
    pub epochs: usize,
    pub lr: f64,
    pub x_max: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dims: 512,
            epochs: 25,
            lr: 0.05,
            x_max: 100.0,
            alpha: 0.75,
            seed: 1,
        }
    }
}

/// Trains over shuffled entries (reshuffled each epoch, seeded).
/// Returns the parameters and the mean loss per epoch.
pub fn glove_train(cooc: &SparseCooc, config: &GloveConfig) -> (GloveParams, Vec<f64>) {
    let mut params = GloveParams::init(cooc.n_words, config.dims, config.seed);
    let mut order: Vec<usize> = (0..cooc.entries.len()).collect();
    let mut rng = substream(config.seed, "glove-shuffle");
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &idx in &order {
            let (i, j, x) = cooc.entries[idx];
            loss_sum += glove_step(
                (i as usize, j as usize, x),
                &mut params,
                config.lr,
                config.x_max,
                config.alpha,
            );
        }
        let n = cooc.entries.len().max(1) as f64;
        epoch_losses.push(loss_sum / n);
    }
    (params, epoch_losses)
}

/// Final word representations `w + w_tilde`.
pub fn glove_output(params: &GloveParams) -> Vec<f64> {
    params
        .w
        .iter()
        .zip(&params.w_tilde)
        .map(|(a, b)| a + b)
        .collect()
}
