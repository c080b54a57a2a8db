//! Corpus ingestion: vocabulary construction and training-pair streaming.
//!
//! The corpus arrives pre-segmented, one sentence per line, words separated
//! by single spaces. Windows never cross line boundaries.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{parse_err, Error, Result};
use crate::rng::substream;

/// Immutable vocabulary over a segmented corpus.
///
/// Word ids are dense `0..V-1` in first-seen order of retained words;
/// character ids are dense `0..K-1` over characters of retained words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_id: HashMap<String, usize>,
    freq: Vec<u64>,
    total_tokens: u64,
    chars: Vec<char>,
    char_id: HashMap<char, usize>,
    decomposition: Vec<Vec<usize>>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn n_chars(&self) -> usize {
        self.chars.len()
    }

    /// Token count of the full stream, including words later filtered out.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_id.get(word).copied()
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freq[id]
    }

    /// Corpus frequency ratio of a retained word.
    pub fn freq_ratio(&self, id: usize) -> f64 {
        self.freq[id] as f64 / self.total_tokens as f64
    }

    pub fn character(&self, char_id: usize) -> char {
        self.chars[char_id]
    }

    pub fn char_id(&self, c: char) -> Option<usize> {
        self.char_id.get(&c).copied()
    }

    /// Ordered character ids composing the word.
    pub fn decomposition(&self, id: usize) -> &[usize] {
        &self.decomposition[id]
    }

    /// Number of in-vocabulary token occurrences in the counted stream.
    pub fn in_vocab_tokens(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|s| s.as_str())
    }

    /// Writes the vocabulary as TSV `word<TAB>count`, descending count,
    /// with a `#tokens=<N>` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut order: Vec<usize> = (0..self.words.len()).collect();
        order.sort_by(|&a, &b| self.freq[b].cmp(&self.freq[a]).then(a.cmp(&b)));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "#tokens={}", self.total_tokens)?;
        for id in order {
            writeln!(out, "{}\t{}", self.words[id], self.freq[id])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or(Error::EmptyCorpus)?
            .map_err(Error::from)?;
        let total_tokens: u64 = header
            .strip_prefix("#tokens=")
            .ok_or_else(|| parse_err(1, "expected #tokens= header"))?
            .parse()
            .map_err(|e| parse_err(1, e))?;
        let mut builder = VocabBuilder::default();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 2, "expected word<TAB>count"))?;
            let count: u64 = count.parse().map_err(|e| parse_err(i + 2, e))?;
            if builder.word_id.contains_key(word) {
                return Err(Error::DuplicateWord(word.to_string()));
            }
            builder.insert(word, count);
        }
        if builder.words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(builder.finish(total_tokens))
    }
}

#[derive(Default)]
struct VocabBuilder {
    words: Vec<String>,
    word_id: HashMap<String, usize>,
    freq: Vec<u64>,
    chars: Vec<char>,
    char_id: HashMap<char, usize>,
    decomposition: Vec<Vec<usize>>,
}

impl VocabBuilder {
    fn insert(&mut self, word: &str, count: u64) {
        let id = self.words.len();
        self.word_id.insert(word.to_string(), id);
        self.words.push(word.to_string());
        self.freq.push(count);
        let mut decomp = Vec::new();
        for c in word.chars() {
            let cid = *self.char_id.entry(c).or_insert_with(|| {
                self.chars.push(c);
                self.chars.len() - 1
            });
            decomp.push(cid);
        }
        self.decomposition.push(decomp);
    }

    fn finish(self, total_tokens: u64) -> Vocabulary {
        Vocabulary {
            words: self.words,
            word_id: self.word_id,
            freq: self.freq,
            total_tokens,
            chars: self.chars,
            char_id: self.char_id,
            decomposition: self.decomposition,
        }
    }
}

/// Counts the full stream, then retains words with `freq > min_count`
/// (strict inequality).
pub fn build_vocab<I, S>(tokens: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    let mut total: u64 = 0;
    for tok in tokens {
        let tok = tok.as_ref();
        total += 1;
        match counts.get_mut(tok) {
            Some(c) => *c += 1,
            None => {
                counts.insert(tok.to_string(), 1);
                first_seen.push(tok.to_string());
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut builder = VocabBuilder::default();
    for word in &first_seen {
        let count = counts[word];
        if count > min_count {
            builder.insert(word, count);
        }
    }
    Ok(builder.finish(total))
}

/// Streams whitespace-separated tokens from a reader, validating UTF-8 and
/// reporting the byte offset of the first invalid sequence.
pub fn read_tokens(reader: impl BufRead) -> Result<Vec<String>> {
    let mut tokens = Vec::new();
    let mut offset = 0usize;
    let mut reader = reader;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        let line = std::str::from_utf8(&buf).map_err(|e| Error::InvalidUtf8 {
            offset: offset + e.valid_up_to(),
        })?;
        tokens.extend(line.split_whitespace().map(|s| s.to_string()));
        offset += n;
    }
    Ok(tokens)
}

pub fn build_vocab_from_reader(reader: impl BufRead, min_count: u64) -> Result<Vocabulary> {
    build_vocab(read_tokens(reader)?, min_count)
}

/// Keep probability `min(1, sqrt(t / f))` for a word with corpus
/// frequency ratio `f` under subsampling threshold `t`.
pub fn subsample_keep_prob(word_freq_ratio: f64, t: f64) -> Result<f64> {
    if word_freq_ratio <= 0.0 {
        return Err(Error::BadFrequency(word_freq_ratio));
    }
    assert!(t > 0.0, "subsampling threshold must be positive");
    Ok((t / word_freq_ratio).sqrt().min(1.0))
}

/// One training example: a target word and its surviving window context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub target: usize,
    pub context: Vec<usize>,
}

/// Streams subsampled `(target, context)` pairs from corpus lines.
///
/// OOV tokens are dropped before windowing; each surviving token is then
/// independently discarded with probability `1 - subsample_keep_prob`.
/// Pass `t = f64::INFINITY` to disable subsampling.
pub struct PairStream<'a, I> {
    lines: I,
    vocab: &'a Vocabulary,
    window: usize,
    t: f64,
    rng: ChaCha8Rng,
    line_ids: Vec<usize>,
    pos: usize,
}

pub fn stream_pairs<'a, I, S>(
    lines: I,
    vocab: &'a Vocabulary,
    window: usize,
    t: f64,
    seed: u64,
) -> Result<PairStream<'a, I::IntoIter>>
where
    I: IntoIterator<Item = S>,
    I::IntoIter: Iterator<Item = S>,
    S: AsRef<str>,
{
    if window < 1 {
        return Err(Error::BadWindow(window));
    }
    Ok(PairStream {
        lines: lines.into_iter(),
        vocab,
        window,
        t,
        rng: substream(seed, "pair-stream"),
        line_ids: Vec::new(),
        pos: 0,
    })
}

impl<'a, I, S> PairStream<'a, I>
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    fn refill(&mut self) -> bool {
        loop {
            let line = match self.lines.next() {
                Some(l) => l,
                None => return false,
            };
            self.line_ids.clear();
            for tok in line.as_ref().split_whitespace() {
                let id = match self.vocab.id(tok) {
                    Some(id) => id,
                    None => continue,
                };
                let keep = if self.t.is_finite() {
                    subsample_keep_prob(self.vocab.freq_ratio(id), self.t)
                        .expect("retained word has positive frequency")
                } else {
                    1.0
                };
                // one uniform draw per surviving token keeps the stream
                // reproducible regardless of the keep probability
                let u: f64 = self.rng.gen();
                if u < keep {
                    self.line_ids.push(id);
                }
            }
            self.pos = 0;
            if !self.line_ids.is_empty() {
                return true;
            }
        }
    }
}

impl<'a, I, S> Iterator for PairStream<'a, I>
where
    I: Iterator<Item = S>,
    S: AsRef<str>,
{
    type Item = TrainingPair;

    fn next(&mut self) -> Option<TrainingPair> {
        if self.pos >= self.line_ids.len() && !self.refill() {
            return None;
        }
        let i = self.pos;
        self.pos += 1;
        let lo = i.saturating_sub(self.window);
        let hi = (i + self.window + 1).min(self.line_ids.len());
        let context: Vec<usize> = (lo..hi)
            .filter(|&j| j != i)
            .map(|j| self.line_ids[j])
            .collect();
        Some(TrainingPair {
            target: self.line_ids[i],
            context,
        })
    }
}
