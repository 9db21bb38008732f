use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use texsynth::conv::forward;
use texsynth::evaluation::{confusion as confusion_matrix, render_heatmap, separation_report, Model};
use texsynth::filterbank::{
    build_fourier_3267, build_fourier_363, build_kmeans_bank, build_multiscale, build_random, load_bank, pca_filters,
    save_bank, BankKind, FilterBank, KmeansBankParams, DEFAULT_FILTER_SIZE,
};
use texsynth::gram::{gram, gram_distance, pixel_distance};
use texsynth::image::{load_image, remove_dc, sample_patches, save_image, ChannelMeans, Image};
use texsynth::optimizer::SolverStatus;
use texsynth::rng::{Rng, STREAM_EVAL, STREAM_FILTERS, STREAM_PATCHES};
use texsynth::synthesis::{synthesize_sample, Sidecar};
use texsynth::{Error, Result};

use crate::config::{check_seed, required, ConfigFile, ConfusionConfig, DistanceConfig, FiltersConfig, SynthConfig};
use crate::{ConfusionArgs, DistanceArgs, FiltersArgs, SynthArgs};

pub struct Global {
    pub deterministic: bool,
}

pub enum Outcome {
    Success,
    /// Outputs were written but at least one run ended in a failed line
    /// search.
    SolverFailed,
}

const PROGRESS_EVERY: usize = 100;

fn load_config(path: &Option<PathBuf>) -> Result<ConfigFile> {
    path.as_deref()
        .map(ConfigFile::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

/// `dir/stem.suffix` for an output path `dir/stem.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn parse_kind(s: &str) -> Result<BankKind> {
    const KINDS: [BankKind; 10] = [
        BankKind::Fourier363,
        BankKind::Fourier3267,
        BankKind::Random363,
        BankKind::Random3267,
        BankKind::Random,
        BankKind::Multiscale,
        BankKind::Kmeans,
        BankKind::KmeansNonwhite,
        BankKind::KmeansSample,
        BankKind::Pca363,
    ];
    KINDS
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown bank kind {s:?}")))
}

/// PNG files in `dir`, sorted by name.
fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn corpus_hash(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        h.update(
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
                .as_bytes(),
        );
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

fn load_corpus(dir: &Path) -> Result<(Vec<PathBuf>, Vec<Image>)> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG images in {}", dir.display())));
    }
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    Ok((paths, images))
}

/// Explicit means, else the bank's corpus means, else the mean of `images`.
fn resolve_means(
    explicit: Option<[f64; 3]>,
    bank: Option<&FilterBank>,
    images: &[&Image],
) -> Result<(ChannelMeans, &'static str)> {
    if let Some([r, g, b]) = explicit {
        return Ok((ChannelMeans::new(r, g, b)?, "explicit"));
    }
    if let Some([r, g, b]) = bank.and_then(|b| b.metadata().corpus_means) {
        return Ok((ChannelMeans::new(r, g, b)?, "bank"));
    }
    let owned: Vec<Image> = images.iter().map(|&i| i.clone()).collect();
    Ok((ChannelMeans::from_images(&owned)?, "inputs"))
}

fn size_summary(bank: &FilterBank) -> String {
    bank.size_histogram()
        .iter()
        .map(|(s, n)| format!("{s}x{s}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn build_bank(c: &FiltersConfig) -> Result<FilterBank> {
    let rng = Rng::new(c.seed);
    let mut filter_rng = rng.substream(STREAM_FILTERS);
    let bank = match c.kind {
        BankKind::Fourier363 => build_fourier_363(),
        BankKind::Fourier3267 => build_fourier_3267(),
        BankKind::Random363 => build_random(363, DEFAULT_FILTER_SIZE, &mut filter_rng)?,
        BankKind::Random3267 => build_random(3267, DEFAULT_FILTER_SIZE, &mut filter_rng)?,
        BankKind::Random => build_random(c.count, c.size, &mut filter_rng)?,
        BankKind::Multiscale => build_multiscale(&mut filter_rng),
        BankKind::Kmeans | BankKind::KmeansNonwhite | BankKind::KmeansSample | BankKind::Pca363 => {
            let (paths, images) = if c.kind == BankKind::KmeansSample {
                let path = required(&c.texture, "texture")?;
                (vec![path.clone()], vec![load_image(path)?])
            } else {
                load_corpus(required(&c.corpus, "corpus")?)?
            };
            let size = if c.kind == BankKind::Pca363 {
                DEFAULT_FILTER_SIZE
            } else {
                c.size
            };
            log::info!(
                "sampling {} patches of {size}x{size} from {} images",
                c.patches,
                images.len()
            );
            let patches = sample_patches(&images, c.patches, size, &mut rng.substream(STREAM_PATCHES))?;
            let mut bank = if c.kind == BankKind::Pca363 {
                pca_filters(&patches)?
            } else {
                let params = KmeansBankParams {
                    k: c.k,
                    whiten: c.whiten && c.kind != BankKind::KmeansNonwhite,
                    epsilon: c.epsilon,
                    max_iters: c.max_iters,
                    from_target: c.kind == BankKind::KmeansSample,
                };
                log::info!("clustering into {} means (whiten: {})", params.k, params.whiten);
                build_kmeans_bank(&patches, &params, &mut filter_rng)?
            };
            let meta = bank.metadata_mut();
            meta.seed = Some(c.seed);
            meta.corpus_hash = Some(corpus_hash(&paths)?);
            meta.corpus_means = Some(ChannelMeans::from_images(&images)?.as_array());
            bank
        }
        BankKind::Custom => return Err(Error::InvalidArgument("custom banks cannot be built here".into())),
    };
    Ok(bank)
}

pub fn filters(args: FiltersArgs, _global: &Global) -> Result<Outcome> {
    let mut c = load_config(&args.config)?.filters.unwrap_or_default();
    if let Some(k) = &args.kind {
        c.kind = parse_kind(k)?;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { c.$field = v; })* };
    }
    set!(size, count, k, patches, max_iters, seed);
    if args.corpus.is_some() {
        c.corpus = args.corpus.clone();
    }
    if args.texture.is_some() {
        c.texture = args.texture.clone();
    }
    if args.epsilon.is_some() {
        c.epsilon = args.epsilon;
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    if args.whiten {
        c.whiten = true;
    }
    if args.no_whiten {
        c.whiten = false;
    }
    check_seed(c.seed)?;
    let out = required(&c.out, "out")?.clone();
    let bank = build_bank(&c)?;
    save_bank(&bank, &out)?;
    ConfigFile {
        filters: Some(c),
        ..Default::default()
    }
    .save(&sibling(&out, "config.toml"))?;
    println!(
        "{}: {} filters ({}), hash {}",
        bank.kind(),
        bank.len(),
        size_summary(&bank),
        bank.hash()
    );
    Ok(Outcome::Success)
}

fn sample_path(out: &Path, samples: usize, index: usize) -> PathBuf {
    if samples == 1 {
        return out.to_path_buf();
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_{index}.png"))
}

pub fn synth(args: SynthArgs, global: &Global) -> Result<Outcome> {
    let mut c: SynthConfig = load_config(&args.config)?.synth.unwrap_or_default();
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = args.$flag { c.$field = v; })* };
    }
    set!(iters => iterations, seed => seed, samples => samples, loss_scale => loss_scale, snapshot_every => snapshot_every);
    for (flag, field) in [
        (&args.texture, &mut c.texture),
        (&args.bank, &mut c.bank),
        (&args.out, &mut c.out),
    ] {
        if flag.is_some() {
            *field = flag.clone();
        }
    }
    if args.size.is_some() {
        c.size = args.size;
    }
    if args.means.is_some() {
        c.means = args.means;
    }
    if global.deterministic {
        c.deterministic = true;
    }
    check_seed(c.seed)?;
    if c.samples == 0 {
        return Err(Error::InvalidArgument("--samples must be at least 1".into()));
    }
    let cfg = c.synthesis()?;
    let out = required(&c.out, "out")?.clone();
    let reference = load_image(required(&c.texture, "texture")?)?;
    let bank = load_bank(required(&c.bank, "bank")?)?;
    let (means, means_source) = resolve_means(c.means, Some(&bank), &[&reference])?;
    log::info!(
        "{} samples, {} filters, {} iterations",
        c.samples,
        bank.len(),
        cfg.solver.max_iterations
    );

    let snapshot_error = Mutex::new(None);
    let runs = (0..c.samples)
        .into_par_iter()
        .map(|i| {
            let path = sample_path(&out, c.samples, i);
            synthesize_sample(&reference, &bank, &means, &cfg, i as u64, |rec, img| {
                if rec.iteration % PROGRESS_EVERY == 0 {
                    log::info!(
                        "sample {i} iteration {}: loss {:.6e}, projected gradient {:.3e}",
                        rec.iteration,
                        rec.f / cfg.loss_scale,
                        rec.pg_norm
                    );
                }
                if c.snapshot_every > 0 && rec.iteration > 0 && rec.iteration % c.snapshot_every == 0 {
                    let snap = sibling(&path, &format!("iter{:05}.png", rec.iteration));
                    if let Err(e) = save_image(img, &snap) {
                        snapshot_error.lock().unwrap().get_or_insert(e);
                    }
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(e) = snapshot_error.into_inner().unwrap() {
        return Err(e);
    }

    let mut failed = false;
    for (i, run) in runs.iter().enumerate() {
        let path = sample_path(&out, c.samples, i);
        save_image(&run.image, &path)?;
        Sidecar::new(run, &bank, &cfg, &means, means_source).save(sibling(&path, "json"))?;
        run.result.save_trace_csv(sibling(&path, "trace.csv"))?;
        let status = run.result.status;
        if status == SolverStatus::LinesearchFail {
            log::warn!("sample {i}: line search failed; the last accepted iterate was written");
            failed = true;
        }
        println!(
            "{}: {status}, {} iterations, loss {:.9e} -> {:.9e}",
            path.display(),
            run.result.n_iterations,
            run.initial_loss,
            run.final_loss
        );
    }
    ConfigFile {
        synth: Some(c),
        ..Default::default()
    }
    .save(&sibling(&out, "config.toml"))?;
    Ok(if failed {
        Outcome::SolverFailed
    } else {
        Outcome::Success
    })
}

pub fn distance(args: DistanceArgs, _global: &Global) -> Result<Outcome> {
    let mut c: DistanceConfig = load_config(&args.config)?.distance.unwrap_or_default();
    if args.bank.is_some() {
        c.bank = args.bank.clone();
        c.pixel = false;
    }
    if args.pixel {
        c.pixel = true;
    }
    if args.means.is_some() {
        c.means = args.means;
    }
    let a = load_image(&args.a)?;
    let b = load_image(&args.b)?;
    let d = if c.pixel {
        pixel_distance(&a, &b)?
    } else {
        let path = c
            .bank
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("one of --bank or --pixel is required".into()))?;
        let bank = load_bank(path)?;
        let (means, _) = resolve_means(c.means, Some(&bank), &[&a, &b])?;
        let ga = gram(&forward(&bank, &remove_dc(&a, &means)));
        let gb = gram(&forward(&bank, &remove_dc(&b, &means)));
        gram_distance(&ga, &gb)?
    };
    println!("{d:.9e}");
    Ok(Outcome::Success)
}

pub fn confusion(args: ConfusionArgs, _global: &Global) -> Result<Outcome> {
    let mut c: ConfusionConfig = load_config(&args.config)?.confusion.unwrap_or_default();
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { c.$field = v; })* };
    }
    set!(patches, patch_size, seed);
    if args.textures.is_some() {
        c.textures = args.textures.clone();
    }
    if args.bank.is_some() {
        c.bank = args.bank.clone();
        c.pixel = false;
    }
    if args.pixel {
        c.pixel = true;
        c.bank = None;
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    if args.means.is_some() {
        c.means = args.means;
    }
    check_seed(c.seed)?;
    let prefix = required(&c.out, "out")?.clone();
    let (paths, images) = load_corpus(required(&c.textures, "textures")?)?;
    if images.len() < 2 {
        return Err(Error::InvalidArgument(
            "the texture directory needs at least 2 images".into(),
        ));
    }
    let textures: Vec<(String, Image)> = paths
        .iter()
        .zip(images)
        .map(|(p, img)| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), img))
        .collect();
    let bank = match (&c.bank, c.pixel) {
        (_, true) => None,
        (Some(path), false) => Some(load_bank(path)?),
        (None, false) => return Err(Error::InvalidArgument("one of --bank or --pixel is required".into())),
    };
    let model = bank.as_ref().map_or(Model::Pixel, Model::Bank);
    let refs: Vec<&Image> = textures.iter().map(|(_, i)| i).collect();
    let (means, _) = resolve_means(c.means, bank.as_ref(), &refs)?;
    log::info!(
        "{} textures, {} patches of {}px each, model {}",
        textures.len(),
        c.patches,
        c.patch_size,
        model.id()
    );
    let rng = Rng::new(c.seed).substream(STREAM_EVAL);
    let cm = confusion_matrix(&textures, model, &means, c.patches, c.patch_size, &rng)?;
    render_heatmap(&cm, with_suffix(&prefix, "png"))?;
    let report = separation_report(&cm);
    let report_path = with_suffix(&prefix, "txt");
    std::fs::write(&report_path, format!("{report}\n")).map_err(|e| Error::Io {
        path: report_path,
        source: e,
    })?;
    println!("{report}");
    ConfigFile {
        confusion: Some(c),
        ..Default::default()
    }
    .save(&with_suffix(&prefix, "config.toml"))?;
    Ok(Outcome::Success)
}
