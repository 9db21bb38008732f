//! Single convolutional layer: stride 1, no bias, zero padding `(f-1)/2`
//! per filter, followed by a ReLU.
//!
//! Filters are applied as cross-correlations (no kernel flip):
//!
//! ```text
//! pre[n, y, x] = sum_{c,u,v} w_n[c, u, v] * img[c, y + u - p, x + v - p]
//! ```
//!
//! Two interchangeable kernels exist: an im2col + GEMM path and an FFT path
//! for large filters. Both accumulate in double precision and never reduce
//! across threads in a schedule-dependent order, so results do not depend
//! on the thread count.

mod direct;
mod fft;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::image::{Image, CHANNELS};

/// Rectified activations: one row per filter, one column per position
/// (row-major over the image).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    height: usize,
    width: usize,
    data: Array2<f64>,
}

impl FeatureMaps {
    pub fn n_maps(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_positions(&self) -> usize {
        self.data.ncols()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Wraps an activation matrix; every entry must be non-negative.
    pub fn from_data(height: usize, width: usize, data: Array2<f64>) -> Result<Self> {
        if data.ncols() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} positions for a {height}x{width} image",
                data.ncols()
            )));
        }
        if data.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument("feature maps must be non-negative".into()));
        }
        Ok(Self { height, width, data })
    }
}

/// Convolution kernel selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvStrategy {
    /// Per filter size, whichever kernel is cheaper.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Filter indices grouped by size, ascending.
fn size_groups(bank: &FilterBank) -> Vec<(usize, Vec<usize>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, f) in bank.filters().iter().enumerate() {
        groups.entry(f.size()).or_default().push(i);
    }
    groups.into_iter().collect()
}

fn use_fft(strategy: ConvStrategy, size: usize, height: usize, width: usize) -> bool {
    match strategy {
        ConvStrategy::Direct => false,
        ConvStrategy::Fft => true,
        ConvStrategy::Auto => fft::cheaper_than_direct(size, height, width),
    }
}

/// Linear responses before the ReLU, `N x M`.
pub fn pre_activations(bank: &FilterBank, img: &Image, strategy: ConvStrategy) -> Array2<f64> {
    let (h, w) = (img.height(), img.width());
    let planar = img.to_planar();
    let mut out = Array2::zeros((bank.len(), h * w));
    for (size, idx) in size_groups(bank) {
        if use_fft(strategy, size, h, w) {
            fft::correlate_group(bank, &idx, size, &planar, h, w, &mut out);
        } else {
            direct::correlate_group(bank, &idx, size, &planar, h, w, &mut out);
        }
    }
    out
}

/// Adjoint of [`pre_activations`]: maps an `N x M` cotangent on the linear
/// responses to an image-shaped gradient.
pub fn correlate_adjoint(
    bank: &FilterBank,
    height: usize,
    width: usize,
    grad_pre: &Array2<f64>,
    strategy: ConvStrategy,
) -> Result<Image> {
    if grad_pre.dim() != (bank.len(), height * width) {
        return Err(Error::ShapeMismatch(format!(
            "gradient is {:?}, expected ({}, {})",
            grad_pre.dim(),
            bank.len(),
            height * width
        )));
    }
    let mut planar = vec![0.0; CHANNELS * height * width];
    for (size, idx) in size_groups(bank) {
        if use_fft(strategy, size, height, width) {
            fft::adjoint_group(bank, &idx, size, grad_pre, height, width, &mut planar);
        } else {
            direct::adjoint_group(bank, &idx, size, grad_pre, height, width, &mut planar);
        }
    }
    Image::from_planar(height, width, &planar)
}

/// `F = ReLU(conv(img))`.
pub fn forward(bank: &FilterBank, img: &Image) -> FeatureMaps {
    forward_with(bank, img, ConvStrategy::Auto)
}

pub fn forward_with(bank: &FilterBank, img: &Image, strategy: ConvStrategy) -> FeatureMaps {
    let mut data = pre_activations(bank, img, strategy);
    data.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
    FeatureMaps {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Gradient of `<grad_f, forward(img)>` with respect to `img`.
pub fn backward(bank: &FilterBank, img: &Image, grad_f: &Array2<f64>) -> Result<Image> {
    let features = forward(bank, img);
    backward_from_features(bank, &features, grad_f, ConvStrategy::Auto)
}

/// Same as [`backward`] but reuses a forward pass. The ReLU subgradient is
/// zero wherever the activation is zero.
pub fn backward_from_features(
    bank: &FilterBank,
    features: &FeatureMaps,
    grad_f: &Array2<f64>,
    strategy: ConvStrategy,
) -> Result<Image> {
    if grad_f.dim() != features.data.dim() {
        return Err(Error::ShapeMismatch(format!(
            "gradient is {:?}, feature maps are {:?}",
            grad_f.dim(),
            features.data.dim()
        )));
    }
    let mut masked = grad_f.clone();
    ndarray::Zip::from(&mut masked).and(&features.data).for_each(|g, &f| {
        if f <= 0.0 {
            *g = 0.0
        }
    });
    correlate_adjoint(bank, features.height, features.width, &masked, strategy)
}
