//! Gram statistics, distances and the synthesis objective.

use std::io::Write;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;

use crate::conv::{self, ConvStrategy, FeatureMaps};
use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::image::Image;

const BLOCK: usize = 128;

/// `G = F Fᵀ / M`, stored as a dense symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    data: Array2<f64>,
}

impl GramMatrix {
    /// Wraps a square, exactly symmetric, finite matrix.
    pub fn from_matrix(data: Array2<f64>) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::ShapeMismatch(format!("gram matrix must be square, got {r}x{c}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gram entry".into()));
        }
        for i in 0..r {
            for j in 0..i {
                if data[[i, j]] != data[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { data })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// Full matrix, one row per line, shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.data.rows() {
            out.write_record(row.iter().map(|v| format!("{v:e}")))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Scaled `F Fᵀ` over the upper block triangle; the lower triangle is a
/// mirror copy, so the result is symmetric bit for bit.
fn syrk(f: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let n = f.nrows();
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let pairs: Vec<(usize, usize)> = starts
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| starts[a..].iter().map(move |&j| (i, j)))
        .collect();
    let blocks: Vec<Array2<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let bi = f.slice(s![i..(i + BLOCK).min(n), ..]);
            let bj = f.slice(s![j..(j + BLOCK).min(n), ..]);
            let mut out = Array2::zeros((bi.nrows(), bj.nrows()));
            general_mat_mul(scale, &bi, &bj.t(), 0.0, &mut out);
            out
        })
        .collect();
    let mut g = Array2::zeros((n, n));
    for (&(i, j), block) in pairs.iter().zip(&blocks) {
        g.slice_mut(s![i..i + block.nrows(), j..j + block.ncols()])
            .assign(block);
    }
    for i in 0..n {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    g
}

pub fn gram(features: &FeatureMaps) -> GramMatrix {
    let m = features.n_positions();
    let scale = if m == 0 { 0.0 } else { 1.0 / m as f64 };
    GramMatrix {
        data: syrk(features.data().view(), scale),
    }
}

fn check_same_n(a: &GramMatrix, b: &GramMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::ShapeMismatch(format!("gram sizes {} and {}", a.n(), b.n())));
    }
    Ok(())
}

fn squared_difference(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `Σ (Gx − Gy)² / (‖Gx‖_F ‖Gy‖_F)`.
pub fn gram_distance(gx: &GramMatrix, gy: &GramMatrix) -> Result<f64> {
    check_same_n(gx, gy)?;
    let (nx, ny) = (gx.frobenius_norm(), gy.frobenius_norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate("zero-norm gram matrix".into()));
    }
    Ok(squared_difference(&gx.data, &gy.data) / (nx * ny))
}

/// `Σ (x − y)² / (‖x‖₂ ‖y‖₂)` over all pixel components.
pub fn pixel_distance(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_dims(y) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let (nx, ny) = (x.l2_norm(), y.l2_norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate("zero-norm image".into()));
    }
    let d: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(d / (nx * ny))
}

/// `E = Σ (Gref − Gy)² / ‖Gref‖²_F`.
pub fn synthesis_loss(g_ref: &GramMatrix, gy: &GramMatrix) -> Result<f64> {
    check_same_n(g_ref, gy)?;
    let denom = g_ref.frobenius_sq();
    if denom == 0.0 {
        return Err(Error::Degenerate("zero-norm reference gram".into()));
    }
    Ok(squared_difference(&g_ref.data, &gy.data) / denom)
}

/// Scaled loss and its gradient with respect to the (DC-removed) image.
pub fn loss_and_grad(bank: &FilterBank, y: &Image, g_ref: &GramMatrix, scale: f64) -> Result<(f64, Image)> {
    loss_and_grad_with(bank, y, g_ref, scale, ConvStrategy::Auto)
}

pub fn loss_and_grad_with(
    bank: &FilterBank,
    y: &Image,
    g_ref: &GramMatrix,
    scale: f64,
    strategy: ConvStrategy,
) -> Result<(f64, Image)> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "loss scale must be positive, got {scale}"
        )));
    }
    if g_ref.n() != bank.len() {
        return Err(Error::ShapeMismatch(format!(
            "reference gram has {} maps, bank has {} filters",
            g_ref.n(),
            bank.len()
        )));
    }
    let features = conv::forward_with(bank, y, strategy);
    let gy = gram(&features);
    let denom = g_ref.frobenius_sq();
    let loss = synthesis_loss(g_ref, &gy)?;
    let m = features.n_positions() as f64;
    // dE/dG, scaled; dE/dF = (2/M) (dE/dG) F by symmetry
    let mut a = &gy.data - &g_ref.data;
    a *= 2.0 * scale / denom;
    let mut grad_f = Array2::zeros(features.data().raw_dim());
    general_mat_mul(2.0 / m, &a, features.data(), 0.0, &mut grad_f);
    let grad = conv::backward_from_features(bank, &features, &grad_f, strategy)?;
    Ok((scale * loss, grad))
}
