//! RGB raster container and the pixel-level operations built on it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageError};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHANNELS: usize = 3;

/// Row-major RGB image, channels interleaved per pixel.
///
/// Values are nominally in `[0, 1]` but are allowed to leave that range
/// (DC-removed and whitened images do).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0);
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, data }
    }

    /// Builds an image from channel-major (planar) data.
    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Result<Self> {
        let m = height * width;
        if planar.len() != m * CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "planar buffer of {} values for {height}x{width} image",
                planar.len()
            )));
        }
        Ok(Self::from_fn(height, width, |y, x, c| planar[c * m + y * width + x]))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial positions.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major copy: all R, then all G, then all B.
    pub fn to_planar(&self) -> Vec<f64> {
        let m = self.positions();
        let mut out = vec![0.0; m * CHANNELS];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * m + p] = px[c];
            }
        }
        out
    }

    /// Vectorized in (channel, row, col) order, the layout filters use.
    pub fn to_chw_vec(&self) -> Vec<f64> {
        self.to_planar()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Per-channel mean intensities subtracted before filtering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeans {
    pub mean_r: f64,
    pub mean_g: f64,
    pub mean_b: f64,
}

impl ChannelMeans {
    pub fn new(mean_r: f64, mean_g: f64, mean_b: f64) -> Result<Self> {
        for (name, v) in [("r", mean_r), ("g", mean_g), ("b", mean_b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "channel mean {name} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { mean_r, mean_g, mean_b })
    }

    pub fn zero() -> Self {
        Self {
            mean_r: 0.0,
            mean_g: 0.0,
            mean_b: 0.0,
        }
    }

    /// Pixel-weighted mean over every image, clamped into `[0, 1]`.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("no images to estimate channel means".into()));
        }
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for img in images {
            for px in img.data.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    sums[c] += px[c];
                }
            }
            count += img.positions();
        }
        let m = sums.map(|s| (s / count as f64).clamp(0.0, 1.0));
        Ok(Self {
            mean_r: m[0],
            mean_g: m[1],
            mean_b: m[2],
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.mean_r, self.mean_g, self.mean_b]
    }
}

fn map_image_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(source) => Error::io(path, source),
        ImageError::Unsupported(u) => Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Reads an 8- or 16-bit RGB(A) raster; alpha is discarded.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let dynamic = reader.decode().map_err(|e| map_image_error(path, e))?;
    let (h, w) = (dynamic.height() as usize, dynamic.width() as usize);
    let data: Vec<f64> = match dynamic {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&v| v as f64 / 255.0).collect::<Vec<_>>())
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .flat_map(|px| px[..3].iter().map(|&v| v as f64 / 65535.0).collect::<Vec<_>>())
            .collect(),
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: "grayscale input, needs 3 channels".into(),
            })
        }
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    Image::new(h, w, data)
}

/// Quantizes one value to the 8-bit grid: clamp to `[0, 1]`, round to nearest.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG. Values are clamped to `[0, 1]` first.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize_u8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("buffer length matches dimensions");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    buf.write_to(&mut w, image::ImageFormat::Png)
        .map_err(|e| map_image_error(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Subtracts the per-channel means from every pixel.
pub fn remove_dc(img: &Image, means: &ChannelMeans) -> Image {
    let m = means.as_array();
    let mut out = img.clone();
    for px in out.data.chunks_exact_mut(CHANNELS) {
        for c in 0..CHANNELS {
            px[c] -= m[c];
        }
    }
    out
}

/// Square `size`x`size` sub-image with top-left corner `(top, left)`.
pub fn extract_patch(img: &Image, top: usize, left: usize, size: usize) -> Result<Image> {
    if size == 0 || top + size > img.height || left + size > img.width {
        return Err(Error::InvalidArgument(format!(
            "patch ({top}, {left}) of size {size} exceeds {}x{} image",
            img.height, img.width
        )));
    }
    let mut data = Vec::with_capacity(size * size * CHANNELS);
    for y in top..top + size {
        let start = (y * img.width + left) * CHANNELS;
        data.extend_from_slice(&img.data[start..start + size * CHANNELS]);
    }
    Image::new(size, size, data)
}

/// Draws `count` random square patches: an image uniformly among those large
/// enough, then a uniformly random valid corner.
pub fn sample_patches(corpus: &[Image], count: usize, size: usize, rng: &mut Rng) -> Result<Vec<Image>> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("patch count must be at least 1".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("patch size must be at least 1".into()));
    }
    let eligible: Vec<&Image> = corpus
        .iter()
        .filter(|img| img.height >= size && img.width >= size)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no corpus image is at least {size}x{size}"
        )));
    }
    (0..count)
        .map(|_| {
            let img = eligible[rng.below(eligible.len())];
            let top = rng.below(img.height - size + 1);
            let left = rng.below(img.width - size + 1);
            extract_patch(img, top, left, size)
        })
        .collect()
}

const PATCH_MAGIC: &[u8; 8] = b"TXPATCH1";

/// Writes a patch cache: magic, u32 count, u32 size, then f32 pixels
/// (row-major, RGB interleaved), little-endian.
pub fn save_patches(patches: &[Image], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let size = patches.first().map(|p| p.height).unwrap_or(0);
    if patches.iter().any(|p| p.height != size || p.width != size) {
        return Err(Error::ShapeMismatch("patch cache needs equal square patches".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(PATCH_MAGIC)?;
    write(&(patches.len() as u32).to_le_bytes())?;
    write(&(size as u32).to_le_bytes())?;
    for p in patches {
        for &v in &p.data {
            write(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_patches(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != PATCH_MAGIC {
        return Err(Error::CorruptFile(format!("{}: not a patch cache", path.display())));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let size = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let per = size * size * CHANNELS;
    let expected = count
        .checked_mul(per)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16));
    if expected != Some(bytes.len()) || (count > 0 && size == 0) {
        return Err(Error::CorruptFile(format!(
            "{}: payload length does not match {count} patches of size {size}",
            path.display()
        )));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    values
        .chunks_exact(per.max(1))
        .take(count)
        .map(|chunk| Image::new(size, size, chunk.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |y, x, c| (100 * y + 10 * x + c) as f64)
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 3, vec![]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 11]).is_err());
        assert!(Image::new(2, 2, vec![0.0; 12]).is_ok());
    }

    #[test]
    fn planar_round_trip() {
        let img = ramp(3, 4);
        let back = Image::from_planar(3, 4, &img.to_planar()).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.to_planar()[12], img.get(0, 0, 1));
    }

    #[test]
    fn remove_dc_examples() {
        let gray = Image::filled(2, 2, 0.5);
        let m = ChannelMeans::new(0.5, 0.5, 0.5).unwrap();
        assert!(remove_dc(&gray, &m).data().iter().all(|&v| v == 0.0));

        let px = Image::new(1, 1, vec![1.0, 0.0, 0.5]).unwrap();
        let m = ChannelMeans::new(0.2, 0.2, 0.2).unwrap();
        let out = remove_dc(&px, &m);
        let expected = [0.8, -0.2, 0.3];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }

        let img = ramp(3, 3);
        assert_eq!(remove_dc(&img, &ChannelMeans::zero()), img);
    }

    #[test]
    fn channel_means_validate_range() {
        assert!(ChannelMeans::new(0.0, 1.0, 0.5).is_ok());
        assert!(ChannelMeans::new(-0.1, 0.0, 0.0).is_err());
        assert!(ChannelMeans::new(0.0, 1.1, 0.0).is_err());
    }

    #[test]
    fn extract_patch_identity_and_corner() {
        let img = ramp(4, 4);
        assert_eq!(extract_patch(&img, 0, 0, 4).unwrap(), img);

        let small = ramp(2, 2);
        let p = extract_patch(&small, 1, 1, 1).unwrap();
        assert_eq!(p.pixel(0, 0), small.pixel(1, 1));
        assert!(extract_patch(&small, 1, 0, 2).is_err());
        assert!(extract_patch(&small, 0, 0, 0).is_err());
    }

    #[test]
    fn extract_patch_matches_index_oracle() {
        let img = ramp(5, 5);
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let size = 1 + rng.below(5);
            let top = rng.below(5 - size + 1);
            let left = rng.below(5 - size + 1);
            let p = extract_patch(&img, top, left, size).unwrap();
            for y in 0..size {
                for x in 0..size {
                    for c in 0..3 {
                        assert_eq!(p.get(y, x, c), img.get(top + y, left + x, c));
                    }
                }
            }
        }
    }

    #[test]
    fn sample_patches_forced_and_errors() {
        let img = ramp(3, 3);
        let mut rng = Rng::new(0);
        let patches = sample_patches(std::slice::from_ref(&img), 4, 3, &mut rng).unwrap();
        assert_eq!(patches.len(), 4);
        assert!(patches.iter().all(|p| *p == img));

        assert!(sample_patches(std::slice::from_ref(&img), 0, 3, &mut rng).is_err());
        assert!(sample_patches(&[], 1, 3, &mut rng).is_err());
        assert!(sample_patches(&[img], 1, 4, &mut rng).is_err());
    }

    #[test]
    fn sample_patches_skips_small_images() {
        let big = Image::filled(4, 4, 1.0);
        let small = Image::filled(2, 2, 0.0);
        let mut rng = Rng::new(9);
        let patches = sample_patches(&[small, big], 20, 3, &mut rng).unwrap();
        assert!(patches.iter().all(|p| p.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn sample_patches_reproducible() {
        let corpus = vec![ramp(9, 7), ramp(6, 8)];
        let a = sample_patches(&corpus, 30, 4, &mut Rng::new(42)).unwrap();
        let b = sample_patches(&corpus, 30, 4, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_clamps_and_rounds() {
        assert_eq!(quantize_u8(1.2), 255);
        assert_eq!(quantize_u8(-0.1), 0);
        assert_eq!(quantize_u8(0.5), 128);
    }

    #[test]
    fn load_scales_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.png");
        image::RgbImage::from_raw(1, 1, vec![255, 0, 128])
            .unwrap()
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);

        let black = dir.path().join("black.png");
        image::RgbImage::from_raw(1, 1, vec![0, 0, 0])
            .unwrap()
            .save(&black)
            .unwrap();
        assert_eq!(load_image(&black).unwrap(), Image::filled(1, 1, 0.0));
    }

    #[test]
    fn load_handles_alpha_and_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let rgba = dir.path().join("rgba.png");
        image::RgbaImage::from_raw(1, 1, vec![255, 51, 0, 7])
            .unwrap()
            .save(&rgba)
            .unwrap();
        assert_eq!(load_image(&rgba).unwrap().pixel(0, 0), [1.0, 0.2, 0.0]);

        let wide = dir.path().join("wide.png");
        let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(1, 1, vec![65535, 0, 32768]).unwrap();
        buf.save(&wide).unwrap();
        let px = load_image(&wide).unwrap().pixel(0, 0);
        assert_eq!(px, [1.0, 0.0, 32768.0 / 65535.0]);
    }

    #[test]
    fn load_rejects_grayscale_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("gray.png");
        image::GrayImage::from_raw(1, 1, vec![9]).unwrap().save(&gray).unwrap();
        assert!(matches!(load_image(&gray), Err(Error::UnsupportedImage { .. })));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image at all").unwrap();
        assert!(load_image(&junk).is_err());
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn quantized_round_trip_error_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let mut rng = Rng::new(77);
        let img = Image::from_fn(8, 9, |_, _, _| rng.uniform());
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        let max_err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 510.0 + 1e-12, "max error {max_err}");
    }

    #[test]
    fn patch_cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let patches: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(2, 2, |y, x, c| (k + y + x + c) as f64 * 0.125))
            .collect();
        save_patches(&patches, &path).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..8], b"TXPATCH1");
        assert_eq!(raw.len(), 16 + 3 * 12 * 4);
        assert_eq!(load_patches(&path).unwrap(), patches);

        std::fs::write(&path, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(load_patches(&path), Err(Error::CorruptFile(_))));
    }

    proptest! {
        #[test]
        fn grid_values_round_trip_exactly(levels in proptest::collection::vec(0u8..=255, 3 * 6)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("grid.png");
            let img = Image::new(2, 3, levels.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
            save_image(&img, &path).unwrap();
            prop_assert_eq!(load_image(&path).unwrap(), img);
        }

        #[test]
        fn remove_dc_is_linear(
            seed in any::<u64>(),
            a in 0.0f64..0.5,
            b in 0.0f64..0.5,
            m in proptest::array::uniform3(0.0f64..1.0),
        ) {
            let mut rng = Rng::new(seed);
            let x = Image::from_fn(3, 2, |_, _, _| rng.uniform());
            let y = Image::from_fn(3, 2, |_, _, _| rng.uniform());
            let means = ChannelMeans::new(m[0], m[1], m[2]).unwrap();
            let scaled = ChannelMeans::new(m[0] * (a + b), m[1] * (a + b), m[2] * (a + b)).unwrap();
            let combo = Image::new(3, 2, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = remove_dc(&combo, &scaled);
            let rx = remove_dc(&x, &means);
            let ry = remove_dc(&y, &means);
            for ((l, p), q) in lhs.data().iter().zip(rx.data()).zip(ry.data()) {
                prop_assert!((l - (a * p + b * q)).abs() < 1e-12);
            }
        }
    }
}
