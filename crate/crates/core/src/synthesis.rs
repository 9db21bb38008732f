//! Texture synthesis by matching Gram statistics from uniform noise.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv;
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::gram::{gram, loss_and_grad, synthesis_loss, GramMatrix};
use crate::image::{remove_dc, ChannelMeans, Image};
use crate::optimizer::{minimize_with_observer, Bounds, IterationRecord, SolverConfig, SolverResult};
use crate::rng::{Rng, STREAM_NOISE};

pub const DEFAULT_LOSS_SCALE: f64 = 1e7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub solver: SolverConfig,
    pub loss_scale: f64,
    pub bounds: Bounds,
    /// `(height, width)`; the reference size when absent.
    pub output_size: Option<(usize, usize)>,
    pub seed: u64,
    /// Keeps run artifacts byte-identical across reruns (wall-clock time is
    /// left out of the sidecar). Reductions are always performed in a fixed
    /// order, so numerical results never depend on it.
    pub deterministic: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            loss_scale: DEFAULT_LOSS_SCALE,
            bounds: Bounds::unit(),
            output_size: None,
            seed: 0,
            deterministic: false,
        }
    }
}

impl SynthesisConfig {
    pub fn with_iterations(mut self, n: usize) -> Self {
        self.solver.max_iterations = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.loss_scale > 0.0 && self.loss_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "loss scale must be positive, got {}",
                self.loss_scale
            )));
        }
        Bounds::new(self.bounds.lower, self.bounds.upper)?;
        if let Some((h, w)) = self.output_size {
            if h == 0 || w == 0 {
                return Err(Error::InvalidArgument("output size must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub image: Image,
    pub result: SolverResult,
    pub sample_index: u64,
    /// Unscaled objective at the initialization and at the returned image.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_time_s: f64,
}

/// Largest pixel deviation from the means still treated as a flat reference.
pub const FLAT_TOLERANCE: f64 = 1e-9;

/// Reference statistics `gram(forward(bank, remove_dc(reference)))`.
pub fn reference_gram(reference: &Image, bank: &FilterBank, means: &ChannelMeans) -> Result<GramMatrix> {
    let centered = remove_dc(reference, means);
    // residue of rounding in the means, not texture
    let signal = centered.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if signal <= FLAT_TOLERANCE {
        return Err(Error::Degenerate(format!(
            "reference is flat after mean removal (max deviation {signal:e})"
        )));
    }
    let g = gram(&conv::forward(bank, &centered));
    if g.frobenius_sq() == 0.0 {
        return Err(Error::Degenerate("reference produces an all-zero gram matrix".into()));
    }
    Ok(g)
}

/// i.i.d. uniform noise for sample `index`, drawn from its own stream.
pub fn noise_image(height: usize, width: usize, seed: u64, index: u64, bounds: &Bounds) -> Image {
    let mut rng = Rng::new(seed).substream(STREAM_NOISE).substream(index);
    let (lo, hi) = if bounds.lower.is_finite() && bounds.upper.is_finite() {
        (bounds.lower, bounds.upper)
    } else {
        (0.0, 1.0)
    };
    Image::from_fn(height, width, |_, _, _| lo + (hi - lo) * rng.uniform())
}

/// `E(y)` evaluated directly, so it does not depend on the loss scale.
pub fn unscaled_loss(g_ref: &GramMatrix, bank: &FilterBank, means: &ChannelMeans, y: &Image) -> Result<f64> {
    synthesis_loss(g_ref, &gram(&conv::forward(bank, &remove_dc(y, means))))
}

/// Minimizes the scaled Gram loss starting from `init`.
pub fn synthesize_from(
    g_ref: &GramMatrix,
    bank: &FilterBank,
    means: &ChannelMeans,
    init: &Image,
    cfg: &SynthesisConfig,
    mut observer: impl FnMut(&IterationRecord, &Image),
) -> Result<(Image, SolverResult)> {
    cfg.validate()?;
    let (h, w) = (init.height(), init.width());
    let scale = cfg.loss_scale;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let y = Image::new(h, w, x.to_vec())?;
        let (loss, grad) = loss_and_grad(bank, &remove_dc(&y, means), g_ref, scale)?;
        Ok((loss, grad.into_data()))
    };
    let result = minimize_with_observer(objective, init.data(), &cfg.bounds, &cfg.solver, |rec, x| {
        if let Ok(img) = Image::new(h, w, x.to_vec()) {
            observer(rec, &img)
        }
    })?;
    let image = Image::new(h, w, result.x.clone())?;
    Ok((image, result))
}

/// One sample from noise stream `index`.
pub fn synthesize_sample(
    reference: &Image,
    bank: &FilterBank,
    means: &ChannelMeans,
    cfg: &SynthesisConfig,
    index: u64,
    observer: impl FnMut(&IterationRecord, &Image),
) -> Result<Synthesis> {
    cfg.validate()?;
    let start = Instant::now();
    let g_ref = reference_gram(reference, bank, means)?;
    let (h, w) = cfg.output_size.unwrap_or((reference.height(), reference.width()));
    let init = noise_image(h, w, cfg.seed, index, &cfg.bounds);
    let (image, result) = synthesize_from(&g_ref, bank, means, &init, cfg, observer)?;
    let initial_loss = unscaled_loss(&g_ref, bank, means, &init)?;
    let final_loss = unscaled_loss(&g_ref, bank, means, &image)?;
    Ok(Synthesis {
        image,
        result,
        sample_index: index,
        initial_loss,
        final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Single synthesis; identical to sample 0 of [`synthesize_batch`].
pub fn synthesize(
    reference: &Image,
    bank: &FilterBank,
    means: &ChannelMeans,
    cfg: &SynthesisConfig,
) -> Result<Synthesis> {
    synthesize_sample(reference, bank, means, cfg, 0, |_, _| {})
}

/// `n_samples` independent runs on noise streams `0..n_samples`.
pub fn synthesize_batch(
    reference: &Image,
    bank: &FilterBank,
    means: &ChannelMeans,
    cfg: &SynthesisConfig,
    n_samples: usize,
) -> Result<Vec<Synthesis>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| synthesize_sample(reference, bank, means, cfg, i, |_, _| {}))
        .collect()
}

/// Per-run JSON record written next to each output image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub sample_index: u64,
    pub bank_kind: String,
    pub bank_hash: String,
    pub bank_size: usize,
    pub height: usize,
    pub width: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_scale: f64,
    pub status: String,
    pub means: [f64; 3],
    pub means_source: String,
    pub wall_time_s: Option<f64>,
}

impl Sidecar {
    pub fn new(
        run: &Synthesis,
        bank: &FilterBank,
        cfg: &SynthesisConfig,
        means: &ChannelMeans,
        means_source: &str,
    ) -> Self {
        Self {
            seed: cfg.seed,
            sample_index: run.sample_index,
            bank_kind: bank.kind().as_str().to_owned(),
            bank_hash: bank.hash(),
            bank_size: bank.len(),
            height: run.image.height(),
            width: run.image.width(),
            iterations: run.result.n_iterations,
            evaluations: run.result.n_evaluations,
            initial_loss: run.initial_loss,
            final_loss: run.final_loss,
            loss_scale: cfg.loss_scale,
            status: run.result.status.as_str().to_owned(),
            means: means.as_array(),
            means_source: means_source.to_owned(),
            wall_time_s: (!cfg.deterministic).then_some(run.wall_time_s),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
