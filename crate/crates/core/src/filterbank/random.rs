use super::{BankKind, BankMetadata, Filter, FilterBank, DEFAULT_FILTER_SIZE};
use crate::error::{Error, Result};
use crate::image::CHANNELS;
use crate::rng::Rng;

/// Filter sizes of the multi-scale bank, ascending.
pub const MULTISCALE_SIZES: [usize; 8] = [3, 5, 7, 11, 15, 23, 37, 55];
/// Filters per size in the multi-scale bank.
pub const MULTISCALE_PER_SIZE: usize = 128;

/// Glorot-uniform half-width `sqrt(6 / (fan_in + fan_out))` with the
/// convolutional fan convention `fan_in = 3 f^2`, `fan_out = count f^2`.
pub fn glorot_bound(count: usize, size: usize) -> f64 {
    let area = (size * size) as f64;
    let fan_in = CHANNELS as f64 * area;
    let fan_out = count as f64 * area;
    (6.0 / (fan_in + fan_out)).sqrt()
}

// Weights are drawn in single precision, the storage precision of the bank
// file, so that saving and loading a random bank is lossless.
fn glorot_filters(count: usize, size: usize, rng: &mut Rng) -> Vec<Filter> {
    let bound = glorot_bound(count, size) as f32;
    (0..count)
        .map(|_| {
            let w = (0..CHANNELS * size * size)
                .map(|_| rng.symmetric_f32(bound) as f64)
                .collect();
            Filter::new(size, w).expect("odd size checked by caller")
        })
        .collect()
}

/// `count` Glorot-uniform filters of side `size`.
pub fn build_random(count: usize, size: usize, rng: &mut Rng) -> Result<FilterBank> {
    if count == 0 {
        return Err(Error::InvalidArgument("random bank needs at least one filter".into()));
    }
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("filter size must be odd, got {size}")));
    }
    let kind = match (count, size) {
        (363, DEFAULT_FILTER_SIZE) => BankKind::Random363,
        (3267, DEFAULT_FILTER_SIZE) => BankKind::Random3267,
        _ => BankKind::Random,
    };
    let filters = glorot_filters(count, size, rng);
    let meta = BankMetadata::new(kind)
        .with_seed(rng.seed())
        .with_param("count", count)
        .with_param("size", size);
    FilterBank::new(filters, meta)
}

/// 128 Glorot-uniform filters for each size in [`MULTISCALE_SIZES`],
/// ascending by size.
pub fn build_multiscale(rng: &mut Rng) -> FilterBank {
    let mut filters = Vec::with_capacity(MULTISCALE_SIZES.len() * MULTISCALE_PER_SIZE);
    for &size in &MULTISCALE_SIZES {
        filters.extend(glorot_filters(MULTISCALE_PER_SIZE, size, rng));
    }
    let meta = BankMetadata::new(BankKind::Multiscale)
        .with_seed(rng.seed())
        .with_param("per_size", MULTISCALE_PER_SIZE);
    FilterBank::new(filters, meta).expect("multiscale layout")
}
