//! Evaluation harness: word-similarity via Spearman correlation, word
//! analogy via 3CosAdd, the set-valued job-and-place analogy task, and a
//! significance test for comparing two dependent correlations.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use crate::error::{parse_err, Error, Result};

/// Read access to an embedding table: lookup by word plus enumeration of
/// the candidate vocabulary for nearest-neighbor search.
pub trait VectorLookup {
    fn get(&self, word: &str) -> Option<Vec<f64>>;
    fn words(&self) -> Vec<String>;
}

impl VectorLookup for HashMap<String, Vec<f64>> {
    fn get(&self, word: &str) -> Option<Vec<f64>> {
        HashMap::get(self, word).cloned()
    }

    fn words(&self) -> Vec<String> {
        let mut w: Vec<String> = self.keys().cloned().collect();
        w.sort();
        w
    }
}

impl VectorLookup for crate::textfmt::VectorFile {
    fn get(&self, word: &str) -> Option<Vec<f64>> {
        crate::textfmt::VectorFile::get(self, word).map(|v| v.to_vec())
    }

    fn words(&self) -> Vec<String> {
        crate::textfmt::VectorFile::words(self)
            .map(|(w, _)| w.to_string())
            .collect()
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// Average ranks (1-based), ties receive the mean of their rank span.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite scores"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman's rank correlation with averaged tie ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Config(format!(
            "spearman needs two equal-length series of >= 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Word pairs with human similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub pairs: Vec<(String, String, f64)>,
}

impl SimilarityDataset {
    /// TSV `word_a<TAB>word_b<TAB>score`, `#` comments allowed. Duplicate
    /// unordered pairs are rejected.
    pub fn load(reader: impl BufRead) -> Result<SimilarityDataset> {
        let mut pairs = Vec::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.split('\t');
            let a = f.next().unwrap_or_default().to_string();
            let (b, score) = match (f.next(), f.next()) {
                (Some(b), Some(s)) => (b.to_string(), s),
                _ => return Err(parse_err(i + 1, "expected word_a<TAB>word_b<TAB>score")),
            };
            let score: f64 = score.trim().parse().map_err(|e| parse_err(i + 1, e))?;
            if !score.is_finite() {
                return Err(parse_err(i + 1, "score must be finite"));
            }
            let key = if a <= b {
                (a.clone(), b.clone())
            } else {
                (b.clone(), a.clone())
            };
            if !seen.insert(key) {
                return Err(parse_err(i + 1, format!("duplicate pair {a}/{b}")));
            }
            pairs.push((a, b, score));
        }
        Ok(SimilarityDataset { pairs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityResult {
    pub rho: f64,
    pub pairs_used: usize,
    pub pairs_dropped: usize,
}

/// Spearman correlation between human scores and embedding cosines over
/// the in-vocabulary pairs.
pub fn eval_similarity(
    lookup: &impl VectorLookup,
    dataset: &SimilarityDataset,
) -> Result<SimilarityResult> {
    let mut human = Vec::new();
    let mut model = Vec::new();
    let mut dropped = 0;
    for (a, b, score) in &dataset.pairs {
        match (lookup.get(a), lookup.get(b)) {
            (Some(u), Some(v)) => {
                human.push(*score);
                model.push(cosine(&u, &v)?);
            }
            _ => dropped += 1,
        }
    }
    if human.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(SimilarityResult {
        rho: spearman(&human, &model)?,
        pairs_used: human.len(),
        pairs_dropped: dropped,
    })
}

/// Analogy problems `a : b :: c : d`, grouped by category.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogyDataset {
    pub categories: Vec<(String, Vec<[String; 4]>)>,
}

impl AnalogyDataset {
    /// Lines of four space-separated words under `: category` headers.
    pub fn load(reader: impl BufRead) -> Result<AnalogyDataset> {
        let mut categories: Vec<(String, Vec<[String; 4]>)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix(": ") {
                categories.push((name.trim().to_string(), Vec::new()));
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if words.len() != 4 {
                return Err(parse_err(i + 1, "expected four words"));
            }
            let problem = [
                words[0].to_string(),
                words[1].to_string(),
                words[2].to_string(),
                words[3].to_string(),
            ];
            match categories.last_mut() {
                Some((_, v)) => v.push(problem),
                None => return Err(parse_err(i + 1, "problem before any `: category` header")),
            }
        }
        Ok(AnalogyDataset { categories })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogyCategoryResult {
    pub category: String,
    pub correct: usize,
    pub used: usize,
    pub dropped: usize,
}

impl AnalogyCategoryResult {
    pub fn accuracy(&self) -> f64 {
        if self.used == 0 {
            0.0
        } else {
            self.correct as f64 / self.used as f64
        }
    }
}

/// 3CosAdd accuracy per category: predict the word maximizing
/// `cos(w, b - a + c)`. Candidates exclude the question words `{a, b, c}`
/// unless `include_question_words` is set; problems with any OOV word are
/// dropped and counted.
pub fn eval_analogy(
    lookup: &impl VectorLookup,
    dataset: &AnalogyDataset,
    include_question_words: bool,
) -> Result<Vec<AnalogyCategoryResult>> {
    let vocab = lookup.words();
    let vectors: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .filter_map(|w| lookup.get(w).map(|v| (w.clone(), v)))
        .collect();
    let mut results = Vec::new();
    for (category, problems) in &dataset.categories {
        let mut correct = 0;
        let mut used = 0;
        let mut dropped = 0;
        for [a, b, c, d] in problems {
            let (va, vb, vc) = match (lookup.get(a), lookup.get(b), lookup.get(c)) {
                (Some(va), Some(vb), Some(vc)) if lookup.get(d).is_some() => (va, vb, vc),
                _ => {
                    dropped += 1;
                    continue;
                }
            };
            let query: Vec<f64> = vb
                .iter()
                .zip(&va)
                .zip(&vc)
                .map(|((b, a), c)| b - a + c)
                .collect();
            let mut best: Option<(&str, f64)> = None;
            for (word, vec) in &vectors {
                if !include_question_words && (word == a || word == b || word == c) {
                    continue;
                }
                let sim = cosine(vec, &query)?;
                if best.map_or(true, |(_, s)| sim > s) {
                    best = Some((word, sim));
                }
            }
            used += 1;
            if best.map_or(false, |(w, _)| w == d) {
                correct += 1;
            }
        }
        results.push(AnalogyCategoryResult {
            category: category.clone(),
            correct,
            used,
            dropped,
        });
    }
    Ok(results)
}

/// Jobs with their sets of acceptable places.
#[derive(Debug, Clone, PartialEq)]
pub struct JobPlaceDataset {
    pub jobs: Vec<(String, Vec<String>)>,
}

impl JobPlaceDataset {
    /// TSV `job<TAB>place1,place2,...`; every place set must be non-empty.
    pub fn load(reader: impl BufRead) -> Result<JobPlaceDataset> {
        let mut jobs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (job, places) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 1, "expected job<TAB>places"))?;
            let places: Vec<String> = places
                .split(',')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect();
            if places.is_empty() {
                return Err(parse_err(i + 1, "empty place set"));
            }
            jobs.push((job.to_string(), places));
        }
        Ok(JobPlaceDataset { jobs })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobPlaceResult {
    pub correct: usize,
    pub pairs_used: usize,
    pub pairs_dropped: usize,
}

impl JobPlaceResult {
    pub fn accuracy(&self) -> f64 {
        if self.pairs_used == 0 {
            0.0
        } else {
            self.correct as f64 / self.pairs_used as f64
        }
    }
}

/// Set-valued analogy over ordered job pairs: the query
/// `mean(places of job1) - job1 + job2` should retrieve a member of
/// job2's place set. Candidates exclude both jobs and job1's places.
pub fn eval_job_place(
    lookup: &impl VectorLookup,
    dataset: &JobPlaceDataset,
) -> Result<JobPlaceResult> {
    let vocab = lookup.words();
    let vectors: Vec<(String, Vec<f64>)> = vocab
        .iter()
        .filter_map(|w| lookup.get(w).map(|v| (w.clone(), v)))
        .collect();
    let mut correct = 0;
    let mut used = 0;
    let mut dropped = 0;
    for (j1, places1) in &dataset.jobs {
        for (j2, places2) in &dataset.jobs {
            if j1 == j2 {
                continue;
            }
            let all_in_vocab = lookup.get(j1).is_some()
                && lookup.get(j2).is_some()
                && places1.iter().all(|p| lookup.get(p).is_some());
            if !all_in_vocab {
                dropped += 1;
                continue;
            }
            let v1 = lookup.get(j1).expect("checked above");
            let v2 = lookup.get(j2).expect("checked above");
            let d = v1.len();
            let mut query = vec![0.0; d];
            for p in places1 {
                let vp = lookup.get(p).expect("checked above");
                for (q, x) in query.iter_mut().zip(&vp) {
                    *q += x / places1.len() as f64;
                }
            }
            for k in 0..d {
                query[k] += v2[k] - v1[k];
            }
            let excluded: HashSet<&str> = places1
                .iter()
                .map(|p| p.as_str())
                .chain([j1.as_str(), j2.as_str()])
                .collect();
            let mut best: Option<(&str, f64)> = None;
            for (word, vec) in &vectors {
                if excluded.contains(word.as_str()) {
                    continue;
                }
                let sim = cosine(vec, &query)?;
                if best.map_or(true, |(_, s)| sim > s) {
                    best = Some((word, sim));
                }
            }
            used += 1;
            if best.map_or(false, |(w, _)| places2.iter().any(|p| p == w)) {
                correct += 1;
            }
        }
    }
    Ok(JobPlaceResult {
        correct,
        pairs_used: used,
        pairs_dropped: dropped,
    })
}

/// Error function, Abramowitz & Stegun 7.1.26 (|error| < 1.5e-7).
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Two-sided test for whether two dependent correlations sharing one
/// variable differ (the Z test of Steiger, 1980): compares `rho1` (human
/// vs model A) against `rho2` (human vs model B) given `rho12` between
/// the two models' scores over the same `n` items.
pub fn dependent_correlation_test(rho1: f64, rho2: f64, rho12: f64, n: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::Config(format!("need n >= 4 items, got {n}")));
    }
    for r in [rho1, rho2, rho12] {
        if r.abs() >= 1.0 {
            return Err(Error::DegenerateCorrelation);
        }
    }
    let z1 = rho1.atanh();
    let z2 = rho2.atanh();
    let rbar = (rho1 + rho2) / 2.0;
    let rbar2 = rbar * rbar;
    let psi = rho12 * (1.0 - 2.0 * rbar2) - 0.5 * rbar2 * (1.0 - 2.0 * rbar2 - rho12 * rho12);
    let sbar = psi / ((1.0 - rbar2) * (1.0 - rbar2));
    let z = (z1 - z2) * ((n as f64 - 3.0) / (2.0 * (1.0 - sbar))).sqrt();
    Ok(2.0 * (1.0 - normal_cdf(z.abs())))
}
