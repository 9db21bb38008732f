//! Single-layer filter banks.
//!
//! A [`FilterBank`] is an ordered list of odd-sized `f x f x 3` filters. The
//! constructors cover analytic banks (2D Fourier basis), Glorot-uniform
//! random banks (single and multi-scale) and banks learned from image
//! patches (k-means cluster means, principal axes).

mod fourier;
mod io;
mod learned;
mod random;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::CHANNELS;

pub use fourier::{build_fourier_3267, build_fourier_363, fourier_basis_1d, fourier_basis_2d, FourierBasis2D};
pub use io::{load_bank, read_bank, save_bank, write_bank};
pub use learned::{
    build_kmeans_bank, kmeans, kmeans_filters, patches_to_matrix, pca_filters, whiten_patches, KmeansBankParams,
    KmeansResult, WhiteningTransform,
};
pub use random::{build_multiscale, build_random, glorot_bound, MULTISCALE_PER_SIZE, MULTISCALE_SIZES};

/// Side length of the filters used by every single-scale bank.
pub const DEFAULT_FILTER_SIZE: usize = 11;

/// One convolution filter, weights stored in (channel, row, col) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    size: usize,
    weights: Vec<f64>,
}

impl Filter {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "filter size must be odd and positive, got {size}"
            )));
        }
        if weights.len() != CHANNELS * size * size {
            return Err(Error::ShapeMismatch(format!(
                "filter of size {size} needs {} weights, got {}",
                CHANNELS * size * size,
                weights.len()
            )));
        }
        Ok(Self { size, weights })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; CHANNELS * size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Zero-padding amount that keeps the spatial size unchanged.
    pub fn padding(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weight(&self, c: usize, row: usize, col: usize) -> f64 {
        self.weights[(c * self.size + row) * self.size + col]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.weights[c * n..(c + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Filter) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankKind {
    Fourier363,
    Fourier3267,
    Random363,
    Random3267,
    /// Glorot-uniform bank with a non-standard count or size.
    Random,
    Multiscale,
    Kmeans,
    KmeansNonwhite,
    KmeansSample,
    Pca363,
    /// Hand-assembled bank (tests, experiments).
    Custom,
}

impl BankKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BankKind::Fourier363 => "fourier363",
            BankKind::Fourier3267 => "fourier3267",
            BankKind::Random363 => "random363",
            BankKind::Random3267 => "random3267",
            BankKind::Random => "random",
            BankKind::Multiscale => "multiscale",
            BankKind::Kmeans => "kmeans",
            BankKind::KmeansNonwhite => "kmeans_nonwhite",
            BankKind::KmeansSample => "kmeans_sample",
            BankKind::Pca363 => "pca363",
            BankKind::Custom => "custom",
        }
    }

    /// Declared filter count for kinds with a fixed size, `None` otherwise.
    pub fn fixed_count(&self) -> Option<usize> {
        match self {
            BankKind::Fourier363 | BankKind::Random363 | BankKind::Pca363 => Some(363),
            BankKind::Fourier3267 | BankKind::Random3267 => Some(3267),
            BankKind::Multiscale => Some(MULTISCALE_SIZES.len() * MULTISCALE_PER_SIZE),
            _ => None,
        }
    }
}

impl std::fmt::Display for BankKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Build provenance carried alongside the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMetadata {
    pub kind: BankKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub corpus_hash: Option<String>,
    /// Per-channel means of the training corpus, when the bank was learned
    /// from one. Synthesis and evaluation default to these.
    #[serde(default)]
    pub corpus_means: Option<[f64; 3]>,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl BankMetadata {
    pub fn new(kind: BankKind) -> Self {
        Self {
            kind,
            seed: None,
            corpus_hash: None,
            corpus_means: None,
            params: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_param(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(key.to_owned(), value.into());
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    filters: Vec<Filter>,
    metadata: BankMetadata,
}

impl FilterBank {
    /// Assembles a bank and checks the kind's structural invariants.
    pub fn new(filters: Vec<Filter>, metadata: BankMetadata) -> Result<Self> {
        let bank = Self { filters, metadata };
        bank.validate()?;
        Ok(bank)
    }

    pub fn custom(filters: Vec<Filter>) -> Result<Self> {
        Self::new(filters, BankMetadata::new(BankKind::Custom))
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() {
            return Err(Error::InvalidArgument("filter bank is empty".into()));
        }
        let kind = self.metadata.kind;
        if let Some(n) = kind.fixed_count() {
            if self.filters.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{kind} bank must hold {n} filters, found {}",
                    self.filters.len()
                )));
            }
        }
        if kind == BankKind::Multiscale {
            for (i, f) in self.filters.iter().enumerate() {
                let want = MULTISCALE_SIZES[i / MULTISCALE_PER_SIZE];
                if f.size != want {
                    return Err(Error::InvalidArgument(format!(
                        "multiscale filter {i} has size {}, expected {want}",
                        f.size
                    )));
                }
            }
        } else if matches!(
            kind,
            BankKind::Fourier363
                | BankKind::Fourier3267
                | BankKind::Random363
                | BankKind::Random3267
                | BankKind::Pca363
        ) && self.filters.iter().any(|f| f.size != DEFAULT_FILTER_SIZE)
        {
            return Err(Error::InvalidArgument(format!(
                "{kind} bank must use {DEFAULT_FILTER_SIZE}x{DEFAULT_FILTER_SIZE} filters"
            )));
        }
        Ok(())
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn kind(&self) -> BankKind {
        self.metadata.kind
    }

    pub fn metadata(&self) -> &BankMetadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BankMetadata {
        &mut self.metadata
    }

    pub fn max_size(&self) -> usize {
        self.filters.iter().map(|f| f.size).max().unwrap_or(0)
    }

    /// Filter count per size, ascending by size.
    pub fn size_histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for f in &self.filters {
            *h.entry(f.size).or_insert(0) += 1;
        }
        h
    }

    /// Short content hash of the serialized bank (weights and metadata).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_bank(self, &mut buf).expect("in-memory write cannot fail");
        let digest = Sha256::digest(&buf);
        hex::encode(&digest[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_rejects_even_and_misshaped() {
        assert!(Filter::new(2, vec![0.0; 12]).is_err());
        assert!(Filter::new(0, vec![]).is_err());
        assert!(Filter::new(3, vec![0.0; 26]).is_err());
        let f = Filter::new(3, (0..27).map(|v| v as f64).collect()).unwrap();
        assert_eq!(f.padding(), 1);
        assert_eq!(f.weight(1, 2, 0), 15.0);
        assert_eq!(f.channel(2)[0], 18.0);
    }

    #[test]
    fn validate_enforces_declared_counts() {
        let filters = vec![Filter::zeros(11).unwrap(); 10];
        assert!(FilterBank::new(filters.clone(), BankMetadata::new(BankKind::Fourier363)).is_err());
        assert!(FilterBank::new(filters, BankMetadata::new(BankKind::Random)).is_ok());
        assert!(FilterBank::custom(vec![]).is_err());
    }

    #[test]
    fn kind_names_match_serde() {
        for kind in [
            BankKind::Fourier363,
            BankKind::KmeansNonwhite,
            BankKind::Pca363,
            BankKind::Multiscale,
        ] {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
        }
    }
}
