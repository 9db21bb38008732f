//! Banks learned from image patches: ZCA whitening, k-means cluster means
//! and principal axes.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView2, Axis};

use super::{BankKind, BankMetadata, Filter, FilterBank, DEFAULT_FILTER_SIZE};
use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};
use crate::rng::Rng;

/// Stacks square patches as rows of an `n x 3f^2` matrix, each row in the
/// (channel, row, col) order filters use.
pub fn patches_to_matrix(patches: &[Image]) -> Result<(Array2<f64>, usize)> {
    let first = patches
        .first()
        .ok_or_else(|| Error::InvalidArgument("no patches".into()))?;
    let size = first.height();
    if patches.iter().any(|p| p.height() != size || p.width() != size) {
        return Err(Error::ShapeMismatch("patches must be equal-sized squares".into()));
    }
    let dim = CHANNELS * size * size;
    let mut m = Array2::zeros((patches.len(), dim));
    for (mut row, p) in m.rows_mut().into_iter().zip(patches) {
        for (dst, v) in row.iter_mut().zip(p.to_chw_vec()) {
            *dst = v;
        }
    }
    Ok((m, size))
}

fn row_to_image(row: ndarray::ArrayView1<f64>, size: usize) -> Image {
    let v: Vec<f64> = row.iter().copied().collect();
    Image::from_planar(size, size, &v).expect("row length is 3 size^2")
}

fn row_to_filter(row: ndarray::ArrayView1<f64>, size: usize) -> Filter {
    Filter::new(size, row.iter().copied().collect()).expect("row length is 3 size^2")
}

fn scaled_covariance(centered: &Array2<f64>) -> Array2<f64> {
    let n = centered.nrows();
    let d = centered.ncols();
    let mut cov = Array2::zeros((d, d));
    general_mat_mul(1.0 / (n as f64 - 1.0), &centered.t(), centered, 0.0, &mut cov);
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    cov
}

/// Eigen-decomposition of a symmetric matrix. Eigenvalues descending;
/// eigenvectors are the columns of the returned matrix, each signed so that
/// its largest-magnitude entry is positive.
pub(crate) fn symmetric_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = m.nrows();
    let mat = nalgebra::DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let eig = nalgebra::SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Array2::zeros((d, d));
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[[i, col]] = sign * v[i];
        }
    }
    (values, vectors)
}

/// Symmetric (ZCA) whitening `W = E (L + eps I)^(-1/2) E^T` fitted on patches.
#[derive(Clone, Debug)]
pub struct WhiteningTransform {
    patch_size: usize,
    mean: Array1<f64>,
    matrix: Array2<f64>,
    epsilon: f64,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Whitens each row of `data` (rows are vectorized patches).
    pub fn apply(&self, data: &Array2<f64>) -> Array2<f64> {
        let centered = data - &self.mean.view().insert_axis(Axis(0));
        let mut out = Array2::zeros(centered.raw_dim());
        general_mat_mul(1.0, &centered, &self.matrix, 0.0, &mut out);
        out
    }
}

/// Fits ZCA whitening on `patches` and returns the whitened patches.
///
/// `epsilon` defaults to `1e-5` times the mean covariance eigenvalue. With
/// `epsilon = 0` a rank-deficient covariance is rejected.
pub fn whiten_patches(patches: &[Image], epsilon: Option<f64>) -> Result<(Vec<Image>, WhiteningTransform)> {
    let (data, transform) = fit_whitening(patches, epsilon)?;
    let white = transform.apply(&data);
    let images = white
        .rows()
        .into_iter()
        .map(|r| row_to_image(r, transform.patch_size))
        .collect();
    Ok((images, transform))
}

fn fit_whitening(patches: &[Image], epsilon: Option<f64>) -> Result<(Array2<f64>, WhiteningTransform)> {
    if patches.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs at least 2 patches, got {}",
            patches.len()
        )));
    }
    let (data, size) = patches_to_matrix(patches)?;
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &mean.view().insert_axis(Axis(0));
    let cov = scaled_covariance(&centered);
    let (values, vectors) = symmetric_eigen(&cov);
    let d = values.len();
    let mean_eig = values.iter().sum::<f64>() / d as f64;
    let eps = match epsilon {
        Some(e) if e < 0.0 || !e.is_finite() => {
            return Err(Error::InvalidArgument(format!(
                "whitening epsilon must be >= 0, got {e}"
            )))
        }
        Some(e) => e,
        None => 1e-5 * mean_eig,
    };
    let max_eig = values.first().copied().unwrap_or(0.0);
    let min_eig = values.last().copied().unwrap_or(0.0);
    if eps == 0.0 && (max_eig <= 0.0 || min_eig <= 1e-12 * max_eig) {
        return Err(Error::Degenerate(format!(
            "covariance is rank deficient (min eigenvalue {min_eig:e}); whitening needs epsilon > 0"
        )));
    }
    let scales: Vec<f64> = values.iter().map(|&l| 1.0 / (l.max(0.0) + eps).sqrt()).collect();
    let mut scaled = vectors.clone();
    for (j, &s) in scales.iter().enumerate() {
        scaled.column_mut(j).mapv_inplace(|v| v * s);
    }
    let mut matrix = Array2::zeros((d, d));
    general_mat_mul(1.0, &scaled, &vectors.t(), 0.0, &mut matrix);
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (matrix[[i, j]] + matrix[[j, i]]);
            matrix[[i, j]] = v;
            matrix[[j, i]] = v;
        }
    }
    Ok((
        data,
        WhiteningTransform {
            patch_size: size,
            mean,
            matrix,
            epsilon: eps,
        },
    ))
}

/// Outcome of a k-means run.
#[derive(Clone, Debug)]
pub struct KmeansResult {
    /// `k x d` cluster means.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, recorded after
    /// every centroid update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// True when the assignment reached a fixpoint before `max_iters`.
    pub converged: bool,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

const ASSIGN_CHUNK: usize = 2048;

/// Nearest centroid per row via `|c|^2 - 2 x.c`; ties go to the lowest index.
fn nearest_centroids(data: ArrayView2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let k = centroids.nrows();
    let c_norms: Vec<f64> = centroids.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut out = Vec::with_capacity(data.nrows());
    let mut start = 0;
    while start < data.nrows() {
        let end = (start + ASSIGN_CHUNK).min(data.nrows());
        let block = data.slice(s![start..end, ..]);
        let mut dots = Array2::zeros((end - start, k));
        general_mat_mul(1.0, &block, &centroids.t(), 0.0, &mut dots);
        for row in dots.rows() {
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for (j, &dot) in row.iter().enumerate() {
                let v = c_norms[j] - 2.0 * dot;
                if v < best_v {
                    best_v = v;
                    best = j;
                }
            }
            out.push(best);
        }
        start = end;
    }
    out
}

fn kmeans_pp_init(data: ArrayView2<f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.below(n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(pick)));
        }
    }
    centroids
}

fn update_centroids(data: ArrayView2<f64>, assignments: &[usize], centroids: &mut Array2<f64>) -> Vec<usize> {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    centroids.fill(0.0);
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        let mut row = centroids.row_mut(a);
        row += &data.row(i);
    }
    for (j, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            centroids.row_mut(j).mapv_inplace(|v| v / cnt as f64);
        }
    }
    counts
}

/// Lloyd's algorithm with k-means++ seeding on the rows of `data`.
///
/// Runs until the assignment is a fixpoint or `max_iters` reassignment
/// sweeps have been made. Empty clusters are re-seeded with the point
/// farthest from its centroid. A point only changes cluster when its exact
/// squared distance strictly drops, so the objective never increases apart
/// from rounding in the centroid update.
pub fn kmeans(data: ArrayView2<f64>, k: usize, rng: &mut Rng, max_iters: usize) -> Result<KmeansResult> {
    let n = data.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {n} available patches"
        )));
    }
    let mut centroids = kmeans_pp_init(data, k, rng);
    let mut assignments = nearest_centroids(data, &centroids);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let mut counts = update_centroids(data, &assignments, &mut centroids);
        if counts.contains(&0) {
            reseed_empty(data, &mut assignments, &mut counts, &centroids);
            update_centroids(data, &assignments, &mut centroids);
        }
        let dist: Vec<f64> = (0..n)
            .map(|i| sq_dist(data.row(i), centroids.row(assignments[i])))
            .collect();
        trace.push(dist.iter().sum());
        if iterations == max_iters {
            break;
        }
        iterations += 1;
        let candidates = nearest_centroids(data, &centroids);
        let mut changed = false;
        for i in 0..n {
            let cand = candidates[i];
            if cand != assignments[i] && sq_dist(data.row(i), centroids.row(cand)) < dist[i] {
                assignments[i] = cand;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(KmeansResult {
        centroids,
        assignments,
        objective_trace: trace,
        iterations,
        converged,
    })
}

fn reseed_empty(data: ArrayView2<f64>, assignments: &mut [usize], counts: &mut [usize], centroids: &Array2<f64>) {
    let mut dist: Vec<f64> = (0..data.nrows())
        .map(|i| sq_dist(data.row(i), centroids.row(assignments[i])))
        .collect();
    for empty in 0..counts.len() {
        if counts[empty] != 0 {
            continue;
        }
        let mut far = None;
        for (i, &d) in dist.iter().enumerate() {
            if counts[assignments[i]] > 1 && far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        if let Some((i, _)) = far {
            counts[assignments[i]] -= 1;
            assignments[i] = empty;
            counts[empty] = 1;
            dist[i] = 0.0;
        }
    }
}

/// Cluster means of `patches` as `f x f x 3` filters.
pub fn kmeans_filters(patches: &[Image], k: usize, rng: &mut Rng, max_iters: usize) -> Result<FilterBank> {
    let (data, size) = patches_to_matrix(patches)?;
    let result = kmeans(data.view(), k, rng, max_iters)?;
    let filters = result
        .centroids
        .rows()
        .into_iter()
        .map(|r| row_to_filter(r, size))
        .collect();
    let meta = BankMetadata::new(BankKind::Kmeans)
        .with_seed(rng.seed())
        .with_param("k", k)
        .with_param("max_iters", max_iters)
        .with_param("patches", patches.len())
        .with_param("lloyd_iterations", result.iterations);
    FilterBank::new(filters, meta)
}

#[derive(Clone, Debug)]
pub struct KmeansBankParams {
    pub k: usize,
    pub whiten: bool,
    /// Whitening regularizer; `None` selects the relative default.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    /// Patches come from the target texture itself (Kmeans-Sample).
    pub from_target: bool,
}

impl Default for KmeansBankParams {
    fn default() -> Self {
        Self {
            k: 363,
            whiten: true,
            epsilon: None,
            max_iters: 100,
            from_target: false,
        }
    }
}

/// Full k-means bank protocol: optional whitening followed by clustering.
pub fn build_kmeans_bank(patches: &[Image], params: &KmeansBankParams, rng: &mut Rng) -> Result<FilterBank> {
    let (white, eps) = if params.whiten {
        let (w, t) = whiten_patches(patches, params.epsilon)?;
        (Some(w), Some(t.epsilon()))
    } else {
        (None, None)
    };
    let input = white.as_deref().unwrap_or(patches);
    let mut bank = kmeans_filters(input, params.k, rng, params.max_iters)?;
    let kind = if params.from_target {
        BankKind::KmeansSample
    } else if params.whiten {
        BankKind::Kmeans
    } else {
        BankKind::KmeansNonwhite
    };
    let meta = bank.metadata_mut();
    meta.kind = kind;
    meta.params.insert("whiten".into(), params.whiten.into());
    if let Some(e) = eps {
        meta.params.insert("epsilon".into(), e.into());
    }
    bank.validate()?;
    Ok(bank)
}

/// All principal axes of 11x11 patches, by descending explained variance.
pub fn pca_filters(patches: &[Image]) -> Result<FilterBank> {
    let dim = CHANNELS * DEFAULT_FILTER_SIZE * DEFAULT_FILTER_SIZE;
    if patches.len() < dim {
        return Err(Error::InvalidArgument(format!(
            "PCA bank needs at least {dim} patches, got {}",
            patches.len()
        )));
    }
    let (data, size) = patches_to_matrix(patches)?;
    if size != DEFAULT_FILTER_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "PCA bank uses {DEFAULT_FILTER_SIZE}x{DEFAULT_FILTER_SIZE} patches, got {size}x{size}"
        )));
    }
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = &data - &mean.view().insert_axis(Axis(0));
    let cov = scaled_covariance(&centered);
    let (values, vectors) = symmetric_eigen(&cov);
    let filters = vectors.columns().into_iter().map(|c| row_to_filter(c, size)).collect();
    let meta = BankMetadata::new(BankKind::Pca363)
        .with_param("patches", patches.len())
        .with_param("explained_variance", values);
    FilterBank::new(filters, meta)
}
