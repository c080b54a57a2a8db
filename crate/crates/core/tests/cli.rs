//! End-to-end checks of the command-line pipelines on tiny synthetic data.

use std::path::Path;
use std::process::Command;

use glyphvec::glyph::{
    save_archive, BitmapArchive, Motif, RenderParams, SyntheticRasterizer,
};

const BIN: &str = env!("CARGO_BIN_EXE_glyphvec");

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("failed to spawn binary")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_corpus(path: &Path) {
    // Two topical clusters plus shared filler so every variant has signal.
    let a = ["木林", "林木", "森林", "树木"];
    let b = ["水河", "河水", "江河", "湖水"];
    let mut lines = String::new();
    for i in 0..120 {
        let g = if i % 2 == 0 { &a } else { &b };
        let mut words = Vec::new();
        for j in 0..8 {
            words.push(g[(i + j) % g.len()]);
        }
        lines.push_str(&words.join(" "));
        lines.push('\n');
    }
    std::fs::write(path, lines).unwrap();
}

fn chars_of_corpus() -> Vec<char> {
    "木林森树水河江湖".chars().collect()
}

fn build_archive(dir: &Path) {
    let mut raster = SyntheticRasterizer::new();
    let motifs = [
        vec![Motif::HBar(15), Motif::VBar(30)],
        vec![Motif::VBar(20), Motif::VBar(40)],
        vec![Motif::Frame],
        vec![Motif::Diag],
        vec![Motif::HBar(30), Motif::Diag],
        vec![Motif::Box { row: 10, col: 10, side: 30 }],
        vec![Motif::VBar(30), Motif::HBar(45)],
        vec![Motif::Frame, Motif::Diag],
    ];
    for (c, m) in chars_of_corpus().into_iter().zip(motifs) {
        raster.define(c, m);
    }
    let mut archive = BitmapArchive::new("synthetic", RenderParams::default());
    let missing = archive.render_all(chars_of_corpus(), &raster).unwrap();
    assert!(missing.is_empty());
    save_archive(&archive, dir).unwrap();
}

#[test]
fn full_pipeline_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let corpus = root.join("corpus.txt");
    write_corpus(&corpus);
    let corpus = corpus.to_str().unwrap();
    let archive_dir = root.join("bitmaps");
    build_archive(&archive_dir);
    let archive_dir = archive_dir.to_str().unwrap();

    // Glyph pipeline: autoencoder training then feature extraction.
    let ae_dir = root.join("ae");
    run_ok(&[
        "train-convae",
        "--bitmaps",
        archive_dir,
        "--out-dir",
        ae_dir.to_str().unwrap(),
        "--set",
        "convae_epochs=1",
        "--set",
        "convae_batch=4",
    ]);
    assert!(ae_dir.join("convae.bin").is_file());
    assert!(ae_dir.join("convae_loss.csv").is_file());
    assert!(ae_dir.join("config.resolved").is_file());

    let features = root.join("glyphs.tsv");
    let checkpoint = ae_dir.join("convae.bin");
    run_ok(&[
        "extract-glyphs",
        "--bitmaps",
        archive_dir,
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--output",
        features.to_str().unwrap(),
        "--corpus",
        corpus,
        "--set",
        "min_count=1",
    ]);
    let features = features.to_str().unwrap();

    // Every trainer variant runs end to end with tiny settings.
    let small: &[&str] = &[
        "--set", "dims=8", "--set", "epochs=1", "--set", "min_count=1",
        "--set", "subsample_t=1", "--set", "glove_epochs=2",
        "--set", "hidden=6", "--set", "head_hidden=6", "--set", "rnn_dims=6",
    ];
    let radicals = root.join("radicals.tsv");
    let rad_rows: String = chars_of_corpus()
        .into_iter()
        .enumerate()
        .map(|(i, c)| format!("{c}\tR{}\n", i % 3))
        .collect();
    std::fs::write(&radicals, rad_rows).unwrap();
    for variant in [
        "cbow", "sg", "cwe", "mge", "gwe-ctx", "gwe-tar", "glove", "rnn-sg", "rnn-glove",
    ] {
        let out_dir = root.join(format!("out-{variant}"));
        let mut args = vec![
            "train",
            "--variant",
            variant,
            "--corpus",
            corpus,
            "--out-dir",
            out_dir.to_str().unwrap(),
        ];
        if matches!(variant, "gwe-ctx" | "gwe-tar" | "rnn-sg" | "rnn-glove") {
            args.extend(["--glyph-features", features]);
        }
        if variant == "mge" {
            args.extend(["--radicals", radicals.to_str().unwrap()]);
        }
        args.extend_from_slice(small);
        run_ok(&args);
        assert!(out_dir.join("embeddings.txt").is_file(), "{variant}");
        assert!(out_dir.join("config.resolved").is_file(), "{variant}");
    }

    // Rerunning a variant with the same seed reproduces the files exactly.
    let rerun = root.join("out-cbow-rerun");
    let mut args = vec![
        "train", "--variant", "cbow", "--corpus", corpus,
        "--out-dir", rerun.to_str().unwrap(),
    ];
    args.extend_from_slice(small);
    run_ok(&args);
    for name in ["embeddings.txt", "store.txt", "vocab.tsv"] {
        assert_eq!(
            std::fs::read(root.join("out-cbow").join(name)).unwrap(),
            std::fs::read(rerun.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }

    // Evaluations over the trained vectors.
    let emb = root.join("out-sg").join("embeddings.txt");
    let emb = emb.to_str().unwrap();
    let sim_ds = root.join("sim.tsv");
    std::fs::write(&sim_ds, "木林\t林木\t9.0\n木林\t水河\t1.0\n森林\t树木\t8.0\n江河\t湖水\t7.0\n").unwrap();
    let out = run_ok(&["eval-sim", "--embeddings", emb, "--dataset", sim_ds.to_str().unwrap()]);
    assert!(out.contains("rho"), "{out}");

    let ana_ds = root.join("analogy.txt");
    std::fs::write(&ana_ds, ": nature\n木林 林木 水河 河水\n森林 树木 江河 湖水\n").unwrap();
    let out = run_ok(&["eval-analogy", "--embeddings", emb, "--dataset", ana_ds.to_str().unwrap()]);
    assert!(out.contains("nature"), "{out}");

    let jp_ds = root.join("jobplace.tsv");
    std::fs::write(&jp_ds, "木林\t森林,树木\n水河\t江河,湖水\n").unwrap();
    let out = run_ok(&["eval-jobplace", "--embeddings", emb, "--dataset", jp_ds.to_str().unwrap()]);
    assert!(out.contains("accuracy"), "{out}");

    let out = run_ok(&["sim", "--embeddings", emb, "--pair", "木林", "林木"]);
    assert!(out.trim().split('\t').count() == 3, "{out}");

    // Config file plus --set override are both honored in config.resolved.
    let cfg = root.join("run.cfg");
    std::fs::write(&cfg, "# comment\nwindow=3\nseed=7\n").unwrap();
    let cfg_out = root.join("out-cfg");
    let mut args = vec![
        "train", "--variant", "cbow", "--corpus", corpus,
        "--out-dir", cfg_out.to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
        "--set", "seed=9",
    ];
    args.extend_from_slice(small);
    run_ok(&args);
    let resolved = std::fs::read_to_string(cfg_out.join("config.resolved")).unwrap();
    assert!(resolved.contains("window=3\n"), "{resolved}");
    assert!(resolved.contains("seed=9\n"), "{resolved}");
    assert!(resolved.contains("variant=cbow\n"), "{resolved}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c.txt");
    std::fs::write(&corpus, "a b a b a b a b\n").unwrap();
    let corpus = corpus.to_str().unwrap();
    let out_dir = tmp.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    // Usage errors: bad flags, unknown config keys, missing required inputs.
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        run(&["train", "--variant", "cbow", "--corpus", corpus, "--out-dir", out_dir,
              "--set", "bogus=1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        run(&["train", "--variant", "gwe-ctx", "--corpus", corpus, "--out-dir", out_dir,
              "--set", "min_count=1"]).status.code(),
        Some(1)
    );

    // Data errors: unreadable or malformed input files.
    assert_eq!(
        run(&["eval-sim", "--embeddings", "/nonexistent/e.txt", "--dataset", "/nonexistent/d.tsv"])
            .status
            .code(),
        Some(2)
    );
    // Empty vocabulary after min-count filtering is a data error.
    assert_eq!(
        run(&["train", "--variant", "cbow", "--corpus", corpus, "--out-dir", out_dir])
            .status
            .code(),
        Some(2)
    );

    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
