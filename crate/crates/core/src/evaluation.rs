//! Texture discrimination: median descriptor distances between random
//! patches of texture pairs.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::conv;
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::gram::{gram, gram_distance, pixel_distance, GramMatrix};
use crate::image::{extract_patch, remove_dc, ChannelMeans, Image};
use crate::rng::Rng;

pub const DEFAULT_PATCHES: usize = 10;
pub const DEFAULT_PATCH_SIZE: usize = 300;
const CELL_PIXELS: usize = 32;

/// Patch descriptor used by [`confusion`].
#[derive(Clone, Copy, Debug)]
pub enum Model<'a> {
    /// Gram matrix of the bank's feature maps on the DC-removed patch.
    Bank(&'a FilterBank),
    /// Raw pixel values.
    Pixel,
}

impl Model<'_> {
    pub fn id(&self) -> String {
        match self {
            Model::Bank(bank) => bank.hash(),
            Model::Pixel => "pixel".to_owned(),
        }
    }
}

enum Descriptor {
    Gram(GramMatrix),
    Pixel(Image),
}

impl Descriptor {
    fn is_degenerate(&self) -> bool {
        match self {
            Descriptor::Gram(g) => g.frobenius_sq() == 0.0,
            Descriptor::Pixel(p) => p.l2_norm() == 0.0,
        }
    }

    fn distance(&self, other: &Descriptor) -> Result<f64> {
        match (self, other) {
            (Descriptor::Gram(a), Descriptor::Gram(b)) => gram_distance(a, b),
            (Descriptor::Pixel(a), Descriptor::Pixel(b)) => pixel_distance(a, b),
            _ => unreachable!("descriptors come from one model"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `T x T` median distances; the diagonal holds within-texture medians.
    pub data: Array2<f64>,
    pub model_id: String,
    /// Number of patch pairs behind each entry.
    pub pairs: Array2<usize>,
}

impl ConfusionMatrix {
    pub fn n_textures(&self) -> usize {
        self.labels.len()
    }

    /// Header row of labels, then one row of `%.9e` values per texture.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let bad = |e: csv::Error| Error::InvalidArgument(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels).map_err(bad)?;
        for row in self.data.rows() {
            out.write_record(row.iter().map(|v| format!("{v:.9e}"))).map_err(bad)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Parses the CSV written by [`ConfusionMatrix::write_csv`] into labels and
/// entries.
pub fn read_confusion_csv<R: Read>(r: R) -> Result<(Vec<String>, Array2<f64>)> {
    let corrupt = |msg: String| Error::CorruptFile(msg);
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let labels: Vec<String> = reader
        .headers()
        .map_err(|e| corrupt(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let t = labels.len();
    let mut values = Vec::with_capacity(t * t);
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| corrupt(e.to_string()))?;
        for field in record.iter() {
            values.push(field.parse::<f64>().map_err(|e| corrupt(format!("{field:?}: {e}")))?);
        }
        rows += 1;
    }
    if rows != t || values.len() != t * t {
        return Err(corrupt(format!("expected {t} rows of {t} values")));
    }
    let data = Array2::from_shape_vec((t, t), values).map_err(|e| corrupt(e.to_string()))?;
    Ok((labels, data))
}

/// Median of a non-empty set; for even counts the lower of the two middle
/// values.
pub fn lower_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

fn label_stream(rng: &Rng, label: &str) -> Rng {
    let digest = Sha256::digest(label.as_bytes());
    let mut key = [0u8; 8];
    key.copy_from_slice(&digest[..8]);
    rng.substream(u64::from_le_bytes(key))
}

fn sample_texture_patches(img: &Image, n: usize, size: usize, rng: &mut Rng) -> Result<Vec<Image>> {
    (0..n)
        .map(|_| {
            let top = rng.below(img.height() - size + 1);
            let left = rng.below(img.width() - size + 1);
            extract_patch(img, top, left, size)
        })
        .collect()
}

/// Median distance matrix over `n_patches` random patches per texture.
///
/// Patch positions for each texture come from a stream keyed by its label,
/// so reordering the inputs reorders the matrix and nothing else. Patches
/// with a zero-norm descriptor are dropped with a warning.
pub fn confusion(
    textures: &[(String, Image)],
    model: Model<'_>,
    means: &ChannelMeans,
    n_patches: usize,
    patch_size: usize,
    rng: &Rng,
) -> Result<ConfusionMatrix> {
    if textures.is_empty() {
        return Err(Error::InvalidArgument("no textures given".into()));
    }
    if n_patches < 2 {
        return Err(Error::InvalidArgument(
            "at least two patches per texture are required".into(),
        ));
    }
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for (label, img) in textures {
        if !seen.insert(label.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate texture label {label:?}")));
        }
        if img.height() < patch_size || img.width() < patch_size {
            return Err(Error::InvalidArgument(format!(
                "texture {label:?} is {}x{}, smaller than the {patch_size}px patch",
                img.height(),
                img.width()
            )));
        }
    }

    let mut descriptors: Vec<Vec<Descriptor>> = Vec::with_capacity(textures.len());
    for (label, img) in textures {
        let mut stream = label_stream(rng, label);
        let mut kept = Vec::with_capacity(n_patches);
        for (k, patch) in sample_texture_patches(img, n_patches, patch_size, &mut stream)?
            .into_iter()
            .enumerate()
        {
            let d = match model {
                Model::Bank(bank) => Descriptor::Gram(gram(&conv::forward(bank, &remove_dc(&patch, means)))),
                Model::Pixel => Descriptor::Pixel(patch),
            };
            if d.is_degenerate() {
                log::warn!("texture {label:?}: patch {k} has a zero-norm descriptor and is skipped");
            } else {
                kept.push(d);
            }
        }
        descriptors.push(kept);
    }

    let t = textures.len();
    let mut data = Array2::zeros((t, t));
    let mut pairs = Array2::zeros((t, t));
    for i in 0..t {
        for j in i..t {
            let mut dist = Vec::new();
            let (a, b) = (&descriptors[i], &descriptors[j]);
            for (p, da) in a.iter().enumerate() {
                let start = if i == j { p + 1 } else { 0 };
                for db in &b[start..] {
                    dist.push(da.distance(db)?);
                }
            }
            if dist.is_empty() {
                return Err(Error::Degenerate(format!(
                    "no valid patch pairs between {:?} and {:?}",
                    textures[i].0, textures[j].0
                )));
            }
            pairs[[i, j]] = dist.len();
            pairs[[j, i]] = dist.len();
            let m = lower_median(&mut dist);
            data[[i, j]] = m;
            data[[j, i]] = m;
        }
    }
    Ok(ConfusionMatrix {
        labels: textures.iter().map(|(l, _)| l.clone()).collect(),
        data,
        model_id: model.id(),
        pairs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationRow {
    pub label: String,
    pub separated: bool,
    /// `min_{j≠i} cm[i,j] / cm[i,i]`; absent for a single texture.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub rows: Vec<SeparationRow>,
}

impl SeparationReport {
    pub fn separated(&self) -> usize {
        self.rows.iter().filter(|r| r.separated).count()
    }

    pub fn total(&self) -> usize {
        self.rows.len()
    }
}

impl fmt::Display for SeparationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            let ratio = r.ratio.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.9e}"));
            writeln!(
                f,
                "{}: {} ratio={ratio}",
                r.label,
                if r.separated { "separated" } else { "confused" }
            )?;
        }
        write!(f, "separated: {}/{}", self.separated(), self.total())
    }
}

/// Texture `i` counts as separated when its diagonal entry is strictly below
/// every other entry of its row.
pub fn separation_report(cm: &ConfusionMatrix) -> SeparationReport {
    let t = cm.n_textures();
    let rows = (0..t)
        .map(|i| {
            let diag = cm.data[[i, i]];
            let off = (0..t).filter(|&j| j != i).map(|j| cm.data[[i, j]]);
            let min_off = off.clone().fold(f64::INFINITY, f64::min);
            SeparationRow {
                label: cm.labels[i].clone(),
                separated: off.into_iter().all(|v| diag < v),
                ratio: (t > 1).then(|| min_off / diag),
            }
        })
        .collect();
    SeparationReport { rows }
}

/// Gray levels of `log10(cm)`, minimum black and maximum white. Zero
/// entries take the smallest positive value.
pub fn heatmap_levels(cm: &ConfusionMatrix) -> Array2<u8> {
    let min_pos = cm
        .data
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if cm.data.iter().any(|&v| !(v > 0.0)) {
        log::warn!("non-positive confusion entries are drawn at the smallest positive value");
    }
    let logs = cm.data.mapv(|v| {
        let v = if v > 0.0 { v } else { min_pos };
        if v.is_finite() {
            v.log10()
        } else {
            0.0
        }
    });
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logs.mapv(|l| {
        if hi > lo {
            (255.0 * (l - lo) / (hi - lo)).round() as u8
        } else {
            128
        }
    })
}

/// Writes the heatmap PNG to `path` and the matrix CSV next to it.
pub fn render_heatmap(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let levels = heatmap_levels(cm);
    let t = cm.n_textures();
    let side = (t * CELL_PIXELS) as u32;
    let img = ::image::GrayImage::from_fn(side, side, |x, y| {
        ::image::Luma([levels[[y as usize / CELL_PIXELS, x as usize / CELL_PIXELS]]])
    });
    img.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::io(path, source),
            other => Error::InvalidArgument(format!("{}: {other}", path.display())),
        })?;
    cm.save_csv(path.with_extension("csv"))
}
