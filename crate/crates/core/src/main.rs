//! Command-line pipelines: glyph feature extraction, autoencoder and
//! embedding training, and evaluation reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use glyphvec::convae;
use glyphvec::cooc;
use glyphvec::corpus;
use glyphvec::embed;
use glyphvec::eval;
use glyphvec::eval::VectorLookup;
use glyphvec::glyph;
use glyphvec::seqmodel;
use glyphvec::textfmt;
use glyphvec::{Error, Result};

/// Flat hyperparameter set shared by all pipelines; every field has the
/// conventional default and can come from a key=value config file or a
/// `--set` override.
#[derive(Debug, Clone)]
struct Config {
    window: usize,
    negatives: usize,
    subsample_t: f64,
    dims: usize,
    hidden: usize,
    head_hidden: usize,
    rnn_dims: usize,
    x_max: f64,
    alpha: f64,
    harmonic: bool,
    min_count: u64,
    epochs: usize,
    start_lr: f64,
    glove_epochs: usize,
    glove_lr: f64,
    rnn_lr: f64,
    convae_epochs: usize,
    convae_batch: usize,
    convae_lr: f64,
    convae_l1: f64,
    seed: u64,
    threads: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            window: 5,
            negatives: 10,
            subsample_t: 1e-5,
            dims: 512,
            hidden: 256,
            head_hidden: 200,
            rnn_dims: 200,
            x_max: 100.0,
            alpha: 0.75,
            harmonic: true,
            min_count: 25,
            epochs: 5,
            start_lr: 0.025,
            glove_epochs: 25,
            glove_lr: 0.05,
            rnn_lr: 0.001,
            convae_epochs: 100,
            convae_batch: 20,
            convae_lr: 0.001,
            convae_l1: 1e-4,
            seed: 1,
            threads: 1,
        }
    }
}

impl Config {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("bad value for {key}: {e}"));
        macro_rules! parse {
            ($field:ident) => {
                self.$field = value.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "window" => parse!(window),
            "negatives" => parse!(negatives),
            "subsample_t" => parse!(subsample_t),
            "dims" => parse!(dims),
            "hidden" => parse!(hidden),
            "head_hidden" => parse!(head_hidden),
            "rnn_dims" => parse!(rnn_dims),
            "x_max" => parse!(x_max),
            "alpha" => parse!(alpha),
            "harmonic" => parse!(harmonic),
            "min_count" => parse!(min_count),
            "epochs" => parse!(epochs),
            "start_lr" => parse!(start_lr),
            "glove_epochs" => parse!(glove_epochs),
            "glove_lr" => parse!(glove_lr),
            "rnn_lr" => parse!(rnn_lr),
            "convae_epochs" => parse!(convae_epochs),
            "convae_batch" => parse!(convae_batch),
            "convae_lr" => parse!(convae_lr),
            "convae_l1" => parse!(convae_l1),
            "seed" => parse!(seed),
            "threads" => parse!(threads),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<()> {
        let file = std::fs::File::open(path)?;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    fn resolved(&self, extra: &[(&str, String)]) -> String {
        let mut s = String::new();
        let mut rows: Vec<(String, String)> = vec![
            ("window".into(), self.window.to_string()),
            ("negatives".into(), self.negatives.to_string()),
            ("subsample_t".into(), format!("{:e}", self.subsample_t)),
            ("dims".into(), self.dims.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("head_hidden".into(), self.head_hidden.to_string()),
            ("rnn_dims".into(), self.rnn_dims.to_string()),
            ("x_max".into(), self.x_max.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("harmonic".into(), self.harmonic.to_string()),
            ("min_count".into(), self.min_count.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("start_lr".into(), self.start_lr.to_string()),
            ("glove_epochs".into(), self.glove_epochs.to_string()),
            ("glove_lr".into(), self.glove_lr.to_string()),
            ("rnn_lr".into(), self.rnn_lr.to_string()),
            ("convae_epochs".into(), self.convae_epochs.to_string()),
            ("convae_batch".into(), self.convae_batch.to_string()),
            ("convae_lr".into(), self.convae_lr.to_string()),
            ("convae_l1".into(), format!("{:e}", self.convae_l1)),
            ("seed".into(), self.seed.to_string()),
            ("threads".into(), self.threads.to_string()),
        ];
        for (k, v) in extra {
            rows.push((k.to_string(), v.clone()));
        }
        rows.sort();
        for (k, v) in rows {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Cbow,
    Sg,
    Cwe,
    Mge,
    GweCtx,
    GweTar,
    Glove,
    RnnSg,
    RnnGlove,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Cbow => "cbow",
            Variant::Sg => "sg",
            Variant::Cwe => "cwe",
            Variant::Mge => "mge",
            Variant::GweCtx => "gwe-ctx",
            Variant::GweTar => "gwe-tar",
            Variant::Glove => "glove",
            Variant::RnnSg => "rnn-sg",
            Variant::RnnGlove => "rnn-glove",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "glyphvec",
    about = "Chinese word embeddings enhanced by character-glyph features",
    version
)]
struct Cli {
    /// key=value config file applied before --set overrides
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set window=3 (repeatable)
    #[arg(long, global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Encode a bitmap archive into glyph feature vectors
    ExtractGlyphs {
        /// Bitmap archive directory (PGM files plus manifest.tsv)
        #[arg(long)]
        bitmaps: PathBuf,
        /// Trained autoencoder checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output feature TSV
        #[arg(long)]
        output: PathBuf,
        /// Optional corpus; characters of its vocabulary missing from the
        /// archive get a blank-bitmap fallback with a warning
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the tied-weight convolutional autoencoder layer by layer
    TrainConvae {
        #[arg(long)]
        bitmaps: PathBuf,
        /// Output directory (checkpoint, loss CSV, resolved config)
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train an embedding model over a segmented corpus
    Train {
        #[arg(long, value_enum)]
        variant: Variant,
        /// Corpus: one sentence per line, space-separated words
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Glyph feature TSV (required by gwe-*, rnn-*)
        #[arg(long)]
        glyph_features: Option<PathBuf>,
        /// Character-to-radical TSV (required by mge)
        #[arg(long)]
        radicals: Option<PathBuf>,
    },
    /// Word-similarity evaluation (Spearman rho)
    EvalSim {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Word-analogy evaluation (3CosAdd accuracy per category)
    EvalAnalogy {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Keep the three question words in the candidate set
        #[arg(long)]
        include_question_words: bool,
    },
    /// Set-valued job-and-place analogy evaluation
    EvalJobplace {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Cosine similarity of one word pair
    Sim {
        #[arg(long)]
        embeddings: PathBuf,
        /// The two words to compare
        #[arg(long, num_args = 2, value_names = ["W1", "W2"])]
        pair: Vec<String>,
    },
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        lines.push(line?);
    }
    Ok(lines)
}

fn build_vocab(lines: &[String], min_count: u64) -> Result<corpus::Vocabulary> {
    let vocab =
        corpus::build_vocab(lines.iter().flat_map(|l| l.split_whitespace()), min_count)?;
    if vocab.len() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(vocab)
}

fn load_glyph_table(
    path: Option<&PathBuf>,
    vocab: &corpus::Vocabulary,
    dims: usize,
    seed: u64,
    variant: Variant,
) -> Result<embed::GlyphTable> {
    let path = path.ok_or_else(|| {
        Error::Config(format!(
            "variant {} requires --glyph-features",
            variant.name()
        ))
    })?;
    let raw = convae::load_features(path)?;
    embed::GlyphTable::build(&raw, vocab, dims, seed)
}

fn write_config(out_dir: &Path, config: &Config, extra: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved"), config.resolved(extra))?;
    Ok(())
}

fn cmd_extract_glyphs(
    config: &Config,
    bitmaps: &Path,
    checkpoint: &Path,
    output: &Path,
    corpus_path: Option<&PathBuf>,
) -> Result<()> {
    let archive = glyph::load_archive(bitmaps)?;
    let params = convae::load_params(checkpoint)?;
    let mut features: BTreeMap<char, Vec<f64>> = BTreeMap::new();
    for (&c, bmp) in &archive.entries {
        features.insert(c, convae::encode_baselined(bmp, &params)?.values);
    }
    if let Some(corpus_path) = corpus_path {
        let lines = read_lines(corpus_path)?;
        let vocab = build_vocab(&lines, config.min_count)?;
        for cid in 0..vocab.n_chars() {
            let c = vocab.character(cid);
            if !features.contains_key(&c) {
                eprintln!("warning: no bitmap for {c:?}, using a blank glyph");
                let blank = glyph::Bitmap::blank(c);
                features.insert(c, convae::encode_baselined(&blank, &params)?.values);
            }
        }
    }
    convae::save_features(&features, output)?;
    println!("wrote {} glyph features to {}", features.len(), output.display());
    Ok(())
}

fn cmd_train_convae(config: &Config, bitmaps: &Path, out_dir: &Path) -> Result<()> {
    let archive = glyph::load_archive(bitmaps)?;
    let bitmaps: Vec<glyph::Bitmap> = archive.entries.values().cloned().collect();
    let train_config = convae::TrainConfig {
        epochs_per_level: config.convae_epochs,
        batch: config.convae_batch,
        lr: config.convae_lr,
        l1_weight: config.convae_l1,
        seed: config.seed,
        spec: convae::ConvAeSpec::default(),
    };
    let result = convae::train_layerwise(&bitmaps, &train_config)?;
    write_config(out_dir, config, &[])?;
    convae::save_params(&result.params, &out_dir.join("convae.bin"))?;
    let mut csv = String::from("level,epoch,loss\n");
    for (level, losses) in result.per_level_losses.iter().enumerate() {
        for (epoch, loss) in losses.iter().enumerate() {
            let _ = writeln!(csv, "{level},{epoch},{loss:.6}");
        }
    }
    std::fs::write(out_dir.join("convae_loss.csv"), csv)?;
    for (level, losses) in result.per_level_losses.iter().enumerate() {
        println!(
            "level {level}: first-epoch loss {:.4}, last-epoch loss {:.4}",
            losses.first().unwrap_or(&0.0),
            losses.last().unwrap_or(&0.0)
        );
    }
    println!("checkpoint written to {}", out_dir.join("convae.bin").display());
    Ok(())
}

fn save_rows(rows: &[(String, Vec<f64>)], dims: usize, path: &Path) -> Result<()> {
    textfmt::save_vectors(rows.iter().map(|(w, v)| (w.as_str(), v.as_slice())), dims, path)
}

fn cmd_train(
    config: &Config,
    variant: Variant,
    corpus_path: &Path,
    out_dir: &Path,
    glyph_features: Option<&PathBuf>,
    radicals_path: Option<&PathBuf>,
) -> Result<()> {
    let lines = read_lines(corpus_path)?;
    let vocab = build_vocab(&lines, config.min_count)?;
    write_config(out_dir, config, &[("variant", variant.name().to_string())])?;
    vocab.save(&out_dir.join("vocab.tsv"))?;

    let embeddings = out_dir.join("embeddings.txt");
    let embed_config = embed::EmbedConfig {
        dims: config.dims,
        window: config.window,
        negatives: config.negatives,
        subsample_t: config.subsample_t,
        start_lr: config.start_lr,
        epochs: config.epochs,
        seed: config.seed,
    };
    match variant {
        Variant::Cbow | Variant::Cwe | Variant::Mge | Variant::GweCtx | Variant::GweTar => {
            let cbow_variant = match variant {
                Variant::Cbow => embed::CbowVariant::Cbow,
                Variant::Cwe => embed::CbowVariant::Cwe,
                Variant::Mge => embed::CbowVariant::Mge,
                Variant::GweCtx => embed::CbowVariant::CtxG,
                _ => embed::CbowVariant::TarG,
            };
            let glyphs = match variant {
                Variant::GweCtx | Variant::GweTar => Some(load_glyph_table(
                    glyph_features,
                    &vocab,
                    config.dims,
                    config.seed,
                    variant,
                )?),
                _ => None,
            };
            let radicals = match variant {
                Variant::Mge => {
                    let path = radicals_path
                        .ok_or_else(|| Error::Config("variant mge requires --radicals".into()))?;
                    let file = std::fs::File::open(path)?;
                    Some(embed::RadicalIndex::load(
                        std::io::BufReader::new(file),
                        &vocab,
                    )?)
                }
                _ => None,
            };
            let (store, loss) = embed::train_cbow_family_parallel(
                &lines,
                &vocab,
                cbow_variant,
                glyphs.as_ref(),
                radicals.as_ref(),
                &embed_config,
                config.threads,
            )?;
            println!("final-epoch mean loss {loss:.4}");
            let mut rows = Vec::with_capacity(vocab.len());
            for id in 0..vocab.len() {
                let v = embed::eval_vector(cbow_variant, id, &store, glyphs.as_ref(), &vocab)?;
                rows.push((vocab.word(id).to_string(), v));
            }
            save_rows(&rows, config.dims, &embeddings)?;
            embed::save_store(&store, &vocab, radicals.as_ref(), &out_dir.join("store.txt"))?;
        }
        Variant::Sg => {
            let (store, loss) = embed::train_skipgram_family_parallel(
                &lines,
                &vocab,
                embed::SkipgramVariant::Sg,
                None,
                &embed_config,
                config.threads,
            )?;
            println!("final-epoch mean loss {loss:.4}");
            let rows: Vec<(String, Vec<f64>)> = (0..vocab.len())
                .map(|id| (vocab.word(id).to_string(), store.word_in(id).to_vec()))
                .collect();
            save_rows(&rows, config.dims, &embeddings)?;
            embed::save_store(&store, &vocab, None, &out_dir.join("store.txt"))?;
        }
        Variant::Glove => {
            let matrix = cooc::build_cooc(&lines, &vocab, config.window, config.harmonic)?;
            matrix.save(
                &out_dir.join("cooc.bin"),
                config.window as u32,
                config.harmonic,
            )?;
            let glove_config = cooc::GloveConfig {
                dims: config.dims,
                epochs: config.glove_epochs,
                lr: config.glove_lr,
                x_max: config.x_max,
                alpha: config.alpha,
                seed: config.seed,
            };
            let (params, losses) = cooc::glove_train(&matrix, &glove_config);
            println!("final-epoch mean loss {:.4}", losses.last().unwrap_or(&0.0));
            let out = cooc::glove_output(&params);
            let rows: Vec<(String, Vec<f64>)> = (0..vocab.len())
                .map(|id| {
                    (
                        vocab.word(id).to_string(),
                        out[id * config.dims..(id + 1) * config.dims].to_vec(),
                    )
                })
                .collect();
            save_rows(&rows, config.dims, &embeddings)?;
        }
        Variant::RnnSg | Variant::RnnGlove => {
            let glyphs =
                load_glyph_table(glyph_features, &vocab, config.dims, config.seed, variant)?;
            let seq_config = seqmodel::SeqTrainConfig {
                spec: seqmodel::SeqModelSpec {
                    glyph_dim: config.dims,
                    hidden: config.hidden,
                    head_hidden: config.head_hidden,
                    out_dim: config.rnn_dims,
                },
                window: config.window,
                negatives: config.negatives,
                subsample_t: config.subsample_t,
                lr: config.rnn_lr,
                epochs: config.epochs,
                seed: config.seed,
                x_max: config.x_max,
                alpha: config.alpha,
            };
            let mut rows = Vec::with_capacity(vocab.len());
            if variant == Variant::RnnSg {
                let (model, loss) = seqmodel::rnn_skipgram_train(&lines, &vocab, &glyphs, &seq_config)?;
                println!("final-epoch mean loss {loss:.4}");
                model.save(&out_dir.join("model.bin"), vocab.len())?;
                for id in 0..vocab.len() {
                    let v = seqmodel::rnn_word_vector(id, &vocab, &glyphs, &model)?;
                    rows.push((vocab.word(id).to_string(), v));
                }
            } else {
                let matrix = cooc::build_cooc(&lines, &vocab, config.window, config.harmonic)?;
                let (model, losses) = seqmodel::rnn_glove_train(&matrix, &vocab, &glyphs, &seq_config)?;
                println!("final-epoch mean loss {:.4}", losses.last().unwrap_or(&0.0));
                model.save(&out_dir.join("model.bin"))?;
                for id in 0..vocab.len() {
                    let v = seqmodel::rnn_glove_vector(id, &vocab, &glyphs, &model)?;
                    rows.push((vocab.word(id).to_string(), v));
                }
            }
            save_rows(&rows, config.rnn_dims, &embeddings)?;
        }
    }
    println!("embeddings written to {}", embeddings.display());
    Ok(())
}

fn cmd_eval_sim(embeddings: &Path, dataset: &Path) -> Result<()> {
    let vectors = textfmt::load_vectors(embeddings)?;
    let file = std::fs::File::open(dataset)?;
    let ds = eval::SimilarityDataset::load(std::io::BufReader::new(file))?;
    let res = eval::eval_similarity(&vectors, &ds)?;
    println!("dataset\trho\tpairs_used\tpairs_dropped");
    println!(
        "{}\t{:.4}\t{}\t{}",
        dataset.display(),
        res.rho,
        res.pairs_used,
        res.pairs_dropped
    );
    Ok(())
}

fn cmd_eval_analogy(embeddings: &Path, dataset: &Path, include_question_words: bool) -> Result<()> {
    let vectors = textfmt::load_vectors(embeddings)?;
    let file = std::fs::File::open(dataset)?;
    let ds = eval::AnalogyDataset::load(std::io::BufReader::new(file))?;
    let results = eval::eval_analogy(&vectors, &ds, include_question_words)?;
    println!("category\taccuracy\tcorrect\tused\tdropped");
    for r in &results {
        println!(
            "{}\t{:.4}\t{}\t{}\t{}",
            r.category,
            r.accuracy(),
            r.correct,
            r.used,
            r.dropped
        );
    }
    Ok(())
}

fn cmd_eval_jobplace(embeddings: &Path, dataset: &Path) -> Result<()> {
    let vectors = textfmt::load_vectors(embeddings)?;
    let file = std::fs::File::open(dataset)?;
    let ds = eval::JobPlaceDataset::load(std::io::BufReader::new(file))?;
    let res = eval::eval_job_place(&vectors, &ds)?;
    println!("accuracy\tcorrect\tpairs_used\tpairs_dropped");
    println!(
        "{:.4}\t{}\t{}\t{}",
        res.accuracy(),
        res.correct,
        res.pairs_used,
        res.pairs_dropped
    );
    Ok(())
}

fn cmd_sim(embeddings: &Path, pair: &[String]) -> Result<()> {
    let vectors = textfmt::load_vectors(embeddings)?;
    let get = |w: &str| {
        VectorLookup::get(&vectors, w)
            .ok_or_else(|| Error::Config(format!("word {w:?} not in embeddings")))
    };
    let u = get(&pair[0])?;
    let v = get(&pair[1])?;
    println!("{}\t{}\t{:.6}", pair[0], pair[1], eval::cosine(&u, &v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = Config::default();
    if let Some(path) = &cli.config {
        config.load_file(path)?;
    }
    for kv in &cli.set {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        config.set(key.trim(), value.trim())?;
    }
    match &cli.command {
        Cmd::ExtractGlyphs {
            bitmaps,
            checkpoint,
            output,
            corpus,
        } => cmd_extract_glyphs(&config, bitmaps, checkpoint, output, corpus.as_ref()),
        Cmd::TrainConvae { bitmaps, out_dir } => cmd_train_convae(&config, bitmaps, out_dir),
        Cmd::Train {
            variant,
            corpus,
            out_dir,
            glyph_features,
            radicals,
        } => cmd_train(
            &config,
            *variant,
            corpus,
            out_dir,
            glyph_features.as_ref(),
            radicals.as_ref(),
        ),
        Cmd::EvalSim {
            embeddings,
            dataset,
        } => cmd_eval_sim(embeddings, dataset),
        Cmd::EvalAnalogy {
            embeddings,
            dataset,
            include_question_words,
        } => cmd_eval_analogy(embeddings, dataset, *include_question_words),
        Cmd::EvalJobplace {
            embeddings,
            dataset,
        } => cmd_eval_jobplace(embeddings, dataset),
        Cmd::Sim { embeddings, pair } => cmd_sim(embeddings, pair),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
