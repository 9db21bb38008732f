#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use texsynth::image::{save_image, Image};

fn texsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texsynth"))
        .args(args)
        .env_remove("TEXSYNTH_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = texsynth(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `count` procedural textures into `dir` and returns their paths.
fn textures(dir: &Path, count: usize, size: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..count)
        .map(|k| {
            let p = dir.join(format!("tex{k}.png"));
            save_image(&common::texture(k, size, size, 7), &p).unwrap();
            p
        })
        .collect()
}

fn small_bank(dir: &Path) -> PathBuf {
    let bank = dir.join("bank.txb");
    ok(&[
        "filters",
        "--kind",
        "random",
        "--count",
        "12",
        "--size",
        "5",
        "--seed",
        "2",
        "--out",
        s(&bank),
    ]);
    bank
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn fixed_banks_report_their_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f.txb");
    let line = ok(&["filters", "--kind", "fourier363", "--out", s(&out)]);
    assert!(line.starts_with("fourier363: 363 filters (11x11:363)"), "{line}");
    assert!(dir.path().join("f.config.toml").exists());
    let line = ok(&["filters", "--kind", "multiscale", "--out", s(&out)]);
    assert!(
        line.starts_with(
            "multiscale: 1024 filters (3x3:128 5x5:128 7x7:128 11x11:128 15x15:128 23x23:128 37x37:128 55x55:128)"
        ),
        "{line}"
    );
}

#[test]
fn learned_banks_from_a_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let tex = textures(&corpus, 3, 32);
    let out = dir.path().join("k.txb");
    let common = ["--patches", "400", "--seed", "1", "--size", "3", "--k", "6"];
    let run = |kind: &str, extra: &[&str]| {
        let mut args = vec!["filters", "--kind", kind, "--out", s(&out)];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        ok(&args)
    };
    assert!(run("kmeans", &["--corpus", s(&corpus)]).starts_with("kmeans: 6 filters (3x3:6)"));
    assert!(run("kmeans", &["--corpus", s(&corpus), "--no-whiten"]).starts_with("kmeans_nonwhite: 6 filters"));
    assert!(run("kmeans_nonwhite", &["--corpus", s(&corpus)]).starts_with("kmeans_nonwhite: 6 filters"));
    assert!(run("kmeans_sample", &["--texture", s(&tex[0])]).starts_with("kmeans_sample: 6 filters"));
    assert!(run("pca363", &["--corpus", s(&corpus)]).starts_with("pca363: 363 filters (11x11:363)"));
    let bank = texsynth::filterbank::load_bank(&out).unwrap();
    assert!(bank.metadata().corpus_means.is_some());
    assert!(bank.metadata().corpus_hash.is_some());
    // a learned kind without its input is a usage error
    let missing = texsynth(&["filters", "--kind", "pca363", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn distance_prints_one_number() {
    let dir = tempfile::tempdir().unwrap();
    let tex = textures(dir.path(), 2, 24);
    let bank = small_bank(dir.path());
    assert_eq!(
        ok(&["distance", s(&tex[0]), s(&tex[0]), "--bank", s(&bank)]),
        "0.000000000e0\n"
    );
    assert_eq!(ok(&["distance", s(&tex[0]), s(&tex[0]), "--pixel"]), "0.000000000e0\n");
    let d: f64 = ok(&["distance", s(&tex[0]), s(&tex[1]), "--bank", s(&bank)])
        .trim()
        .parse()
        .unwrap();
    assert!(d > 0.0);
    let p: f64 = ok(&["distance", s(&tex[0]), s(&tex[1]), "--pixel"])
        .trim()
        .parse()
        .unwrap();
    assert!(p > 0.0);
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let tex = textures(dir.path(), 1, 24);
    let small = dir.path().join("small.png");
    save_image(&Image::filled(10, 12, 0.3), &small).unwrap();
    let code = |args: &[&str]| texsynth(args).status.code();
    // usage
    assert_eq!(code(&["distance", s(&tex[0])]), Some(2));
    assert_eq!(code(&["distance", s(&tex[0]), s(&tex[0])]), Some(2));
    assert_eq!(code(&["filters", "--kind", "nonsense", "--out", "x"]), Some(2));
    // io
    assert_eq!(
        code(&["distance", s(&tex[0]), "/nonexistent/a.png", "--pixel"]),
        Some(3)
    );
    // numeric
    assert_eq!(code(&["distance", s(&tex[0]), s(&small), "--pixel"]), Some(4));
    let flat = dir.path().join("flat.png");
    save_image(&Image::filled(16, 16, 0.4), &flat).unwrap();
    let bank = small_bank(dir.path());
    let out = dir.path().join("o.png");
    assert_eq!(
        code(&["synth", "--texture", s(&flat), "--bank", s(&bank), "--out", s(&out)]),
        Some(4)
    );
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_texsynth"))
        .args(["distance", s(&tex[0]), s(&tex[0]), "--pixel"])
        .env("TEXSYNTH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn synth_writes_images_sidecars_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let tex = textures(dir.path(), 1, 20);
    let bank = small_bank(dir.path());
    let out = dir.path().join("run").join("s.png");
    std::fs::create_dir_all(out.parent().unwrap()).unwrap();
    let stdout = ok(&[
        "synth",
        "--texture",
        s(&tex[0]),
        "--bank",
        s(&bank),
        "--out",
        s(&out),
        "--iters",
        "30",
        "--samples",
        "2",
        "--snapshot-every",
        "10",
        "--quiet",
    ]);
    assert_eq!(stdout.lines().count(), 2);
    let run = out.parent().unwrap();
    for name in [
        "s_0.png",
        "s_1.png",
        "s_0.json",
        "s_1.json",
        "s_0.trace.csv",
        "s.config.toml",
        "s_1.iter00020.png",
    ] {
        assert!(run.join(name).exists(), "{name} missing");
    }
    let sidecar: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("s_1.json")).unwrap()).unwrap();
    assert_eq!(sidecar["sample_index"], 1);
    assert_eq!(sidecar["iterations"], 30);
    assert_eq!(sidecar["status"], "max_iter");
    assert!(sidecar["wall_time_s"].is_f64());
    assert!(sidecar["final_loss"].as_f64().unwrap() < sidecar["initial_loss"].as_f64().unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let tex = textures(dir.path(), 1, 20);
    let bank = small_bank(dir.path());
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("o.png");
    std::fs::write(
        &cfg,
        format!(
            "[synth]\ntexture = {:?}\nbank = {:?}\nout = {:?}\niterations = 9\nseed = 4\n",
            s(&tex[0]),
            s(&bank),
            s(&out)
        ),
    )
    .unwrap();
    ok(&["synth", "--config", s(&cfg), "--iters", "4", "--quiet"]);
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o.json")).unwrap()).unwrap();
    assert_eq!(sidecar["iterations"], 4);
    assert_eq!(sidecar["seed"], 4);
    let recorded = std::fs::read_to_string(dir.path().join("o.config.toml")).unwrap();
    assert!(recorded.contains("iterations = 4"));
    std::fs::write(&cfg, "[synth]\niters = 3\n").unwrap();
    assert_eq!(texsynth(&["synth", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn recorded_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let tex = textures(dir.path(), 1, 20);
    let bank = small_bank(dir.path());
    let first = dir.path().join("a");
    std::fs::create_dir_all(&first).unwrap();
    ok(&[
        "synth",
        "--texture",
        s(&tex[0]),
        "--bank",
        s(&bank),
        "--out",
        s(&first.join("s.png")),
        "--iters",
        "12",
        "--seed",
        "5",
        "--deterministic",
        "--quiet",
    ]);
    let before = read_dir_bytes(&first);
    let recorded = first.join("s.config.toml");
    let copy = dir.path().join("again.toml");
    std::fs::copy(&recorded, &copy).unwrap();
    for entry in std::fs::read_dir(&first).unwrap() {
        std::fs::remove_file(entry.unwrap().path()).unwrap();
    }
    ok(&["synth", "--config", s(&copy), "--quiet"]);
    assert_eq!(read_dir_bytes(&first), before);
}

#[test]
fn confusion_outputs_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("tex");
    textures(&corpus, 3, 48);
    let bank = small_bank(dir.path());
    let prefix = dir.path().join("cm");
    let stdout = ok(&[
        "confusion",
        "--textures",
        s(&corpus),
        "--bank",
        s(&bank),
        "--patches",
        "3",
        "--patch-size",
        "24",
        "--out",
        s(&prefix),
        "--quiet",
    ]);
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("separated: ") && last.ends_with("/3"), "{last}");
    for ext in ["csv", "png", "txt", "config.toml"] {
        assert!(dir.path().join(format!("cm.{ext}")).exists(), "cm.{ext}");
    }
    let csv = std::fs::read_to_string(dir.path().join("cm.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "tex0,tex1,tex2");
    let pixel = dir.path().join("px");
    let stdout = ok(&[
        "confusion",
        "--textures",
        s(&corpus),
        "--pixel",
        "--patches",
        "3",
        "--patch-size",
        "24",
        "--out",
        s(&pixel),
        "--quiet",
    ]);
    assert!(stdout.contains("separated: "));
    let lonely = dir.path().join("lonely");
    textures(&lonely, 1, 48);
    let code = texsynth(&["confusion", "--textures", s(&lonely), "--pixel", "--out", s(&pixel)])
        .status
        .code();
    assert_eq!(code, Some(2));
}
