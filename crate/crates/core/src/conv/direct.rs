//! im2col + GEMM kernel.

use ndarray::{linalg::general_mat_mul, s, Array2};

use crate::filterbank::FilterBank;
use crate::image::CHANNELS;

// Upper bound on the number of doubles in one column buffer.
const CHUNK_ELEMS: usize = 1 << 22;

fn weight_matrix(bank: &FilterBank, idx: &[usize], size: usize) -> Array2<f64> {
    let k = CHANNELS * size * size;
    let mut w = Array2::zeros((idx.len(), k));
    for (r, &i) in idx.iter().enumerate() {
        for (dst, &v) in w.row_mut(r).iter_mut().zip(bank.filters()[i].weights()) {
            *dst = v;
        }
    }
    w
}

fn rows_per_chunk(size: usize, width: usize, height: usize) -> usize {
    let per_row = CHANNELS * size * size * width;
    (CHUNK_ELEMS / per_row.max(1)).clamp(1, height)
}

/// Fills `cols` (K x rows*W) with the zero-padded receptive fields of
/// output rows `y0..y0+rows`.
fn im2col(planar: &[f64], h: usize, w: usize, size: usize, y0: usize, rows: usize, cols: &mut Array2<f64>) {
    let p = size / 2;
    let m = h * w;
    let l = rows * w;
    let data = cols.as_slice_mut().expect("standard layout");
    for c in 0..CHANNELS {
        let chan = &planar[c * m..(c + 1) * m];
        for u in 0..size {
            for v in 0..size {
                let k = (c * size + u) * size + v;
                let dst = &mut data[k * l..(k + 1) * l];
                // valid x range: 0 <= x + v - p < w
                let x_lo = p.saturating_sub(v).min(w);
                let x_hi = (w + p).saturating_sub(v).min(w);
                for r in 0..rows {
                    let out = &mut dst[r * w..(r + 1) * w];
                    let yy = (y0 + r + u) as isize - p as isize;
                    if yy < 0 || yy >= h as isize || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &chan[yy as usize * w..(yy as usize + 1) * w];
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let s0 = x_lo + v - p;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Scatter-adds a column buffer back onto the image (transpose of im2col).
fn col2im(cols: &Array2<f64>, h: usize, w: usize, size: usize, y0: usize, rows: usize, planar: &mut [f64]) {
    let p = size / 2;
    let m = h * w;
    let l = rows * w;
    let data = cols.as_slice().expect("standard layout");
    for c in 0..CHANNELS {
        let chan = &mut planar[c * m..(c + 1) * m];
        for u in 0..size {
            for v in 0..size {
                let k = (c * size + u) * size + v;
                let src = &data[k * l..(k + 1) * l];
                let x_lo = p.saturating_sub(v).min(w);
                let x_hi = (w + p).saturating_sub(v).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for r in 0..rows {
                    let yy = (y0 + r + u) as isize - p as isize;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let s0 = x_lo + v - p;
                    let dst = &mut chan[yy as usize * w + s0..yy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[r * w + x_lo..r * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(super) fn correlate_group(
    bank: &FilterBank,
    idx: &[usize],
    size: usize,
    planar: &[f64],
    h: usize,
    w: usize,
    out: &mut Array2<f64>,
) {
    let weights = weight_matrix(bank, idx, size);
    let k = weights.ncols();
    let step = rows_per_chunk(size, w, h);
    let mut y0 = 0;
    while y0 < h {
        let rows = step.min(h - y0);
        let mut cols = Array2::zeros((k, rows * w));
        im2col(planar, h, w, size, y0, rows, &mut cols);
        let mut resp = Array2::zeros((idx.len(), rows * w));
        general_mat_mul(1.0, &weights, &cols, 0.0, &mut resp);
        for (r, &i) in idx.iter().enumerate() {
            out.slice_mut(s![i, y0 * w..(y0 + rows) * w]).assign(&resp.row(r));
        }
        y0 += rows;
    }
}

pub(super) fn adjoint_group(
    bank: &FilterBank,
    idx: &[usize],
    size: usize,
    grad: &Array2<f64>,
    h: usize,
    w: usize,
    planar: &mut [f64],
) {
    let weights = weight_matrix(bank, idx, size);
    let k = weights.ncols();
    let step = rows_per_chunk(size, w, h);
    let mut y0 = 0;
    while y0 < h {
        let rows = step.min(h - y0);
        let mut g = Array2::zeros((idx.len(), rows * w));
        for (r, &i) in idx.iter().enumerate() {
            g.row_mut(r).assign(&grad.slice(s![i, y0 * w..(y0 + rows) * w]));
        }
        let mut cols = Array2::zeros((k, rows * w));
        general_mat_mul(1.0, &weights.t(), &g, 0.0, &mut cols);
        col2im(&cols, h, w, size, y0, rows, planar);
        y0 += rows;
    }
}
