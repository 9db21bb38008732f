use std::f64::consts::PI;

use super::{BankKind, BankMetadata, Filter, FilterBank, DEFAULT_FILTER_SIZE};
use crate::error::{Error, Result};
use crate::image::CHANNELS;

/// Real orthonormal basis of `n x n` matrices.
#[derive(Clone, Debug)]
pub struct FourierBasis2D {
    size: usize,
    elements: Vec<Vec<f64>>,
}

impl FourierBasis2D {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Basis matrices, each row-major `n x n`.
    pub fn elements(&self) -> &[Vec<f64>] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Real 1D Fourier basis of odd length `n`, ordered
/// `1/sqrt(n), c_1, s_1, c_2, s_2, ...` with
/// `c_k(t) = sqrt(2/n) cos(2 pi k t / n)` and `s_k(t) = sqrt(2/n) sin(2 pi k t / n)`.
pub fn fourier_basis_1d(n: usize) -> Result<Vec<Vec<f64>>> {
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "Fourier basis size must be odd and positive, got {n}"
        )));
    }
    let nf = n as f64;
    let mut basis = vec![vec![1.0 / nf.sqrt(); n]];
    let amp = (2.0 / nf).sqrt();
    for k in 1..=(n - 1) / 2 {
        let w = 2.0 * PI * k as f64 / nf;
        basis.push((0..n).map(|t| amp * (w * t as f64).cos()).collect());
        basis.push((0..n).map(|t| amp * (w * t as f64).sin()).collect());
    }
    Ok(basis)
}

/// All outer products of the 1D basis; row-basis index major, column-basis
/// index minor.
pub fn fourier_basis_2d(size: usize) -> Result<FourierBasis2D> {
    let basis = fourier_basis_1d(size)?;
    let mut elements = Vec::with_capacity(size * size);
    for row in &basis {
        for col in &basis {
            let mut m = Vec::with_capacity(size * size);
            for &r in row {
                m.extend(col.iter().map(|&c| r * c));
            }
            elements.push(m);
        }
    }
    Ok(FourierBasis2D { size, elements })
}

/// 363 filters: each basis element placed on one color channel. Channel-major
/// ordering (all R filters, then G, then B).
pub fn build_fourier_363() -> FilterBank {
    let basis = fourier_basis_2d(DEFAULT_FILTER_SIZE).expect("odd size");
    let n = DEFAULT_FILTER_SIZE * DEFAULT_FILTER_SIZE;
    let mut filters = Vec::with_capacity(CHANNELS * basis.len());
    for k in 0..CHANNELS {
        for b in basis.elements() {
            let mut w = vec![0.0; CHANNELS * n];
            w[k * n..(k + 1) * n].copy_from_slice(b);
            filters.push(Filter::new(DEFAULT_FILTER_SIZE, w).expect("valid shape"));
        }
    }
    FilterBank::new(filters, BankMetadata::new(BankKind::Fourier363)).expect("363 filters")
}

const CHANNEL_WEIGHTS: [f64; 3] = [1.0, 0.0, -1.0];

/// 3267 filters: every basis element combined with each of the 27 channel
/// weightings in `{1, 0, -1}^3`. Weight triples are enumerated
/// lexicographically in the order `1, 0, -1`, so the all-zero triple (and its
/// 121 zero filters) sits at triple index 13.
pub fn build_fourier_3267() -> FilterBank {
    let basis = fourier_basis_2d(DEFAULT_FILTER_SIZE).expect("odd size");
    let n = DEFAULT_FILTER_SIZE * DEFAULT_FILTER_SIZE;
    let mut filters = Vec::with_capacity(27 * basis.len());
    for &wr in &CHANNEL_WEIGHTS {
        for &wg in &CHANNEL_WEIGHTS {
            for &wb in &CHANNEL_WEIGHTS {
                for b in basis.elements() {
                    let mut w = Vec::with_capacity(CHANNELS * n);
                    for scale in [wr, wg, wb] {
                        w.extend(b.iter().map(|&v| scale * v));
                    }
                    filters.push(Filter::new(DEFAULT_FILTER_SIZE, w).expect("valid shape"));
                }
            }
        }
    }
    FilterBank::new(filters, BankMetadata::new(BankKind::Fourier3267)).expect("3267 filters")
}
