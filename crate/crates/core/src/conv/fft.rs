//! FFT kernel.
//!
//! Both the image and the filter taps are embedded in a `P x Q` periodic
//! grid with `P >= max(H + p, 2p + 1)` (likewise for `Q`), which makes the
//! circular correlation agree with the zero-padded linear one on the
//! `H x W` output window. Spectra are kept in transposed (`Q x P`) layout
//! between the forward and inverse transforms; only elementwise products
//! happen there.

use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::filterbank::{Filter, FilterBank};
use crate::image::CHANNELS;

// Filters per partial sum in the adjoint. Fixed so the reduction order does
// not depend on the thread pool.
const ADJOINT_CHUNK: usize = 8;

fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5, 7] {
            while r.is_multiple_of(f) {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn grid_len(extent: usize, size: usize) -> usize {
    let p = size / 2;
    next_fast_len((extent + p).max(2 * p + 1))
}

/// Cost model deciding between the kernels for one filter size, in units of
/// one direct multiply-add per filter. The FFT constant was fitted to
/// single-core timings of both kernels on 32..256 px images.
pub(super) fn cheaper_than_direct(size: usize, h: usize, w: usize) -> bool {
    let (p, q) = (grid_len(h, size), grid_len(w, size));
    let n = (p * q) as f64;
    let direct = (CHANNELS * size * size * h * w) as f64;
    FFT_COST_PER_POINT * n * n.log2() < direct
}

const FFT_COST_PER_POINT: f64 = 54.0;

struct Plan2d {
    p: usize,
    q: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

impl Plan2d {
    fn new(p: usize, q: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            p,
            q,
            row_fwd: planner.plan_fft_forward(q),
            row_inv: planner.plan_fft_inverse(q),
            col_fwd: planner.plan_fft_forward(p),
            col_inv: planner.plan_fft_inverse(p),
        }
    }

    fn len(&self) -> usize {
        self.p * self.q
    }

    /// Spatial `P x Q` in `buf` -> transposed spectrum `Q x P` in `buf`.
    fn forward(&self, buf: &mut [Complex64], tmp: &mut [Complex64]) {
        self.row_fwd.process(buf);
        self.finish_forward(buf, tmp);
    }

    /// As [`Self::forward`] for input that is zero outside `rows`.
    fn forward_sparse_rows(&self, rows: &[usize], buf: &mut [Complex64], tmp: &mut [Complex64]) {
        let q = self.q;
        let mut scratch = vec![Complex64::default(); self.row_fwd.get_inplace_scratch_len()];
        for &r in rows {
            self.row_fwd
                .process_with_scratch(&mut buf[r * q..(r + 1) * q], &mut scratch);
        }
        self.finish_forward(buf, tmp);
    }

    fn finish_forward(&self, buf: &mut [Complex64], tmp: &mut [Complex64]) {
        transpose(buf, self.p, self.q, tmp);
        self.col_fwd.process(tmp);
        buf.copy_from_slice(tmp);
    }

    /// Transposed spectrum -> spatial `P x Q`, scaled by `1 / PQ`.
    fn inverse(&self, buf: &mut [Complex64], tmp: &mut [Complex64]) {
        self.col_inv.process(buf);
        transpose(buf, self.q, self.p, tmp);
        self.row_inv.process(tmp);
        let scale = 1.0 / self.len() as f64;
        for (d, s) in buf.iter_mut().zip(tmp.iter()) {
            *d = s * scale;
        }
    }

    fn filter_spectrum(&self, filter: &Filter, c: usize, buf: &mut [Complex64], tmp: &mut [Complex64]) {
        buf.fill(Complex64::new(0.0, 0.0));
        let size = filter.size();
        let p = (size / 2) as isize;
        let rows: Vec<usize> = (0..size)
            .map(|u| (u as isize - p).rem_euclid(self.p as isize) as usize)
            .collect();
        for (u, &a) in rows.iter().enumerate() {
            for v in 0..size {
                let b = (v as isize - p).rem_euclid(self.q as isize) as usize;
                buf[a * self.q + b].re = filter.weight(c, u, v);
            }
        }
        self.forward_sparse_rows(&rows, buf, tmp);
    }

    fn embed(&self, src: &[f64], h: usize, w: usize, buf: &mut [Complex64], tmp: &mut [Complex64]) {
        buf.fill(Complex64::new(0.0, 0.0));
        for y in 0..h {
            for x in 0..w {
                buf[y * self.q + x].re = src[y * w + x];
            }
        }
        self.forward(buf, tmp);
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
    let plan = Plan2d::new(grid_len(h, size), grid_len(w, size));
    let n = plan.len();
    let m = h * w;
    let mut tmp = vec![Complex64::default(); n];
    let image_spectra: Vec<Vec<Complex64>> = (0..CHANNELS)
        .map(|c| {
            let mut buf = vec![Complex64::default(); n];
            plan.embed(&planar[c * m..(c + 1) * m], h, w, &mut buf, &mut tmp);
            buf
        })
        .collect();
    let rows: Vec<Vec<f64>> = idx
        .par_iter()
        .map(|&i| {
            let filter = &bank.filters()[i];
            let mut acc = vec![Complex64::default(); n];
            let mut buf = vec![Complex64::default(); n];
            let mut tmp = vec![Complex64::default(); n];
            for (c, spec) in image_spectra.iter().enumerate() {
                plan.filter_spectrum(filter, c, &mut buf, &mut tmp);
                for ((a, hk), ik) in acc.iter_mut().zip(&buf).zip(spec) {
                    *a += hk.conj() * ik;
                }
            }
            plan.inverse(&mut acc, &mut tmp);
            let mut row = Vec::with_capacity(m);
            for y in 0..h {
                row.extend(acc[y * plan.q..y * plan.q + w].iter().map(|z| z.re));
            }
            row
        })
        .collect();
    for (&i, row) in idx.iter().zip(rows) {
        for (dst, v) in out.row_mut(i).iter_mut().zip(row) {
            *dst = v;
        }
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
    let plan = Plan2d::new(grid_len(h, size), grid_len(w, size));
    let n = plan.len();
    let m = h * w;
    let partials: Vec<Vec<Vec<Complex64>>> = idx
        .par_chunks(ADJOINT_CHUNK)
        .map(|chunk| {
            let mut acc = vec![vec![Complex64::default(); n]; CHANNELS];
            let mut g_spec = vec![Complex64::default(); n];
            let mut buf = vec![Complex64::default(); n];
            let mut tmp = vec![Complex64::default(); n];
            let mut row = vec![0.0; m];
            for &i in chunk {
                for (d, s) in row.iter_mut().zip(grad.row(i).iter()) {
                    *d = *s;
                }
                plan.embed(&row, h, w, &mut g_spec, &mut tmp);
                let filter = &bank.filters()[i];
                for (c, acc_c) in acc.iter_mut().enumerate() {
                    plan.filter_spectrum(filter, c, &mut buf, &mut tmp);
                    for ((a, hk), gk) in acc_c.iter_mut().zip(&buf).zip(&g_spec) {
                        *a += hk * gk;
                    }
                }
            }
            acc
        })
        .collect();
    let mut tmp = vec![Complex64::default(); n];
    for c in 0..CHANNELS {
        let mut total = vec![Complex64::default(); n];
        for part in &partials {
            for (t, v) in total.iter_mut().zip(&part[c]) {
                *t += v;
            }
        }
        plan.inverse(&mut total, &mut tmp);
        let chan = &mut planar[c * m..(c + 1) * m];
        for y in 0..h {
            for x in 0..w {
                chan[y * w + x] += total[y * plan.q + x].re;
            }
        }
    }
}
