//! Run configuration: one TOML file with a table per subcommand. Command-line
//! flags override file values, and the resolved table is written back next
//! to the outputs so a run can be repeated with `--config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use texsynth::evaluation::{DEFAULT_PATCHES, DEFAULT_PATCH_SIZE};
use texsynth::filterbank::{BankKind, DEFAULT_FILTER_SIZE};
use texsynth::optimizer::{Bounds, SolverConfig};
use texsynth::synthesis::{SynthesisConfig, DEFAULT_LOSS_SCALE};
use texsynth::{Error, Result};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<FiltersConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<DistanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot record config: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiltersConfig {
    pub kind: BankKind,
    /// Filter side for `random` and the learned kinds.
    pub size: usize,
    /// Filter count for `random`.
    pub count: usize,
    /// Cluster count for the k-means kinds.
    pub k: usize,
    /// Directory of PNG images for the learned kinds.
    pub corpus: Option<PathBuf>,
    /// Single texture for `kmeans_sample`.
    pub texture: Option<PathBuf>,
    pub whiten: bool,
    pub epsilon: Option<f64>,
    pub patches: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for FiltersConfig {
    fn default() -> Self {
        Self {
            kind: BankKind::Random363,
            size: DEFAULT_FILTER_SIZE,
            count: 363,
            k: 363,
            corpus: None,
            texture: None,
            whiten: true,
            epsilon: None,
            patches: 100_000,
            max_iters: 100,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub texture: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    /// Output PNG; with several samples an index is appended to the stem.
    pub out: Option<PathBuf>,
    pub iterations: usize,
    pub seed: u64,
    pub samples: usize,
    /// `[height, width]`; the reference size when absent.
    pub size: Option<[usize; 2]>,
    pub loss_scale: f64,
    pub bounds: [f64; 2],
    pub memory: usize,
    pub f_rtol: f64,
    pub pg_tol: f64,
    pub max_linesearch_evals: usize,
    /// Write the current image every this many iterations; 0 disables.
    pub snapshot_every: usize,
    /// Channel means to remove; the bank's corpus means, else the
    /// reference's own, when absent.
    pub means: Option<[f64; 3]>,
    pub deterministic: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            texture: None,
            bank: None,
            out: None,
            iterations: solver.max_iterations,
            seed: 0,
            samples: 1,
            size: None,
            loss_scale: DEFAULT_LOSS_SCALE,
            bounds: [0.0, 1.0],
            memory: solver.memory,
            f_rtol: solver.f_rtol,
            pg_tol: solver.pg_tol,
            max_linesearch_evals: solver.max_evals_per_linesearch,
            snapshot_every: 0,
            means: None,
            deterministic: false,
        }
    }
}

impl SynthConfig {
    pub fn synthesis(&self) -> Result<SynthesisConfig> {
        let cfg = SynthesisConfig {
            solver: SolverConfig {
                memory: self.memory,
                max_iterations: self.iterations,
                f_rtol: self.f_rtol,
                pg_tol: self.pg_tol,
                max_evals_per_linesearch: self.max_linesearch_evals,
            },
            loss_scale: self.loss_scale,
            bounds: Bounds::new(self.bounds[0], self.bounds[1])?,
            output_size: self.size.map(|[h, w]| (h, w)),
            seed: self.seed,
            deterministic: self.deterministic,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub bank: Option<PathBuf>,
    pub pixel: bool,
    pub means: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfusionConfig {
    /// Directory of PNG textures; labels are the file stems.
    pub textures: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub pixel: bool,
    pub patches: usize,
    pub patch_size: usize,
    pub seed: u64,
    /// Output prefix for `.csv`, `.png` and `.txt`.
    pub out: Option<PathBuf>,
    pub means: Option<[f64; 3]>,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        Self {
            textures: None,
            bank: None,
            pixel: false,
            patches: DEFAULT_PATCHES,
            patch_size: DEFAULT_PATCH_SIZE,
            seed: 0,
            out: None,
            means: None,
        }
    }
}

/// Seeds are stored as TOML integers, which are signed 64-bit.
pub fn check_seed(seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        return Err(Error::InvalidArgument(format!("seed {seed} exceeds {}", i64::MAX)));
    }
    Ok(())
}

pub fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("missing --{name} (flag or config key)")))
}
