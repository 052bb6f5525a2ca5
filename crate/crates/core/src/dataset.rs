//! Two-class traffic-sign data: ingestion of the LISA STOP / SPEED LIMIT
//! subset, a procedural stand-in, deterministic splits and the on-disk
//! archive format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, sha256_hex};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;

/// Pixel value range an image is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeTag {
    /// `[0, 1]`, consumed by classifiers.
    Unit,
    /// `[-1, 1]`, produced and consumed by the GAN.
    Signed,
}

impl RangeTag {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RangeTag::Unit => (0.0, 1.0),
            RangeTag::Signed => (-1.0, 1.0),
        }
    }
}

/// A 3×32×32 image stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pixels: Vec<f64>,
    range: RangeTag,
}

impl ImageTensor {
    pub fn new(pixels: Vec<f64>, range: RangeTag) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(invalid(format!(
                "image needs {PIXELS} values, got {}",
                pixels.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(bad) = pixels.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(invalid(format!("pixel {bad} outside {range:?} range")));
        }
        Ok(ImageTensor { pixels, range })
    }

    /// Builds an image after clamping into the range.
    pub fn clamped(mut pixels: Vec<f64>, range: RangeTag) -> Self {
        assert_eq!(pixels.len(), PIXELS);
        let (lo, hi) = range.bounds();
        for v in &mut pixels {
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
        ImageTensor { pixels, range }
    }

    pub fn filled(value: f64, range: RangeTag) -> Result<Self> {
        Self::new(vec![value; PIXELS], range)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn range(&self) -> RangeTag {
        self.range
    }

    /// Value at `(channel, row, col)`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * SIDE + y) * SIDE + x]
    }

    /// Affine map between the two ranges: `2x − 1` or `(x + 1) / 2`.
    pub fn convert_range(&self, target: RangeTag) -> ImageTensor {
        let f: fn(f64) -> f64 = match (self.range, target) {
            (a, b) if a == b => return self.clone(),
            (RangeTag::Unit, RangeTag::Signed) => |v| 2.0 * v - 1.0,
            _ => |v| (v + 1.0) / 2.0,
        };
        let (lo, hi) = target.bounds();
        ImageTensor {
            pixels: self.pixels.iter().map(|&v| f(v).clamp(lo, hi)).collect(),
            range: target,
        }
    }

    /// SHA-256 over the image quantized to 8 bits in unit range, so an image
    /// and its PNG round trip share a hash.
    pub fn content_hash(&self) -> String {
        sha256_hex(&self.to_u8_chw())
    }

    /// Hash of the exact `f64` pixel values and range tag. Unlike
    /// [`ImageTensor::content_hash`] it separates images that differ below
    /// 8-bit precision.
    pub fn exact_hash(&self) -> String {
        let mut buf = Vec::with_capacity(self.pixels.len() * 8 + 1);
        buf.push(self.range as u8);
        for v in &self.pixels {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        sha256_hex(&buf)
    }

    pub(crate) fn to_u8_chw(&self) -> Vec<u8> {
        self.convert_range(RangeTag::Unit)
            .pixels
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect()
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let bytes = self.to_u8_chw();
        RgbImage::from_fn(SIDE as u32, SIDE as u32, |x, y| {
            let at = |c: usize| bytes[(c * SIDE + y as usize) * SIDE + x as usize];
            image::Rgb([at(0), at(1), at(2)])
        })
    }

    /// Reads a 32×32 RGB image into unit range.
    pub fn from_rgb_image(img: &RgbImage) -> Result<ImageTensor> {
        if img.dimensions() != (SIDE as u32, SIDE as u32) {
            return Err(invalid(format!("expected 32x32 image, got {:?}", img.dimensions())));
        }
        let mut pixels = vec![0.0; PIXELS];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..CHANNELS {
                pixels[(c * SIDE + y as usize) * SIDE + x as usize] = f64::from(p.0[c]) / 255.0;
            }
        }
        ImageTensor::new(pixels, RangeTag::Unit)
    }

    pub fn l2_distance(&self, other: &ImageTensor) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn linf_distance(&self, other: &ImageTensor) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Stacks images into an `[N, 3, 32, 32]` tensor.
pub fn batch_tensor<'a>(images: impl IntoIterator<Item = &'a ImageTensor>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        data.extend_from_slice(&img.pixels);
        n += 1;
    }
    Tensor::from_vec(&[n, CHANNELS, SIDE, SIDE], data)
}

/// Splits an `[N, 3, 32, 32]` tensor back into images, clamping into range.
pub fn unbatch(t: &Tensor, range: RangeTag) -> Vec<ImageTensor> {
    t.data()
        .chunks(PIXELS)
        .map(|c| ImageTensor::clamped(c.to_vec(), range))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "STOP")]
    Stop,
    #[serde(rename = "SPEED_LIMIT")]
    SpeedLimit,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Stop, ClassLabel::SpeedLimit];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> ClassLabel {
        match i {
            0 => ClassLabel::Stop,
            1 => ClassLabel::SpeedLimit,
            _ => panic!("class index {i} out of range"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Stop => "STOP",
            ClassLabel::SpeedLimit => "SPEED_LIMIT",
        }
    }

    /// Maps LISA annotation tags onto the two classes; every `speedLimitNN`
    /// variant collapses into SPEED_LIMIT.
    pub fn from_tag(tag: &str) -> Option<ClassLabel> {
        let t = tag.trim().to_ascii_lowercase().replace(['_', ' '], "");
        if t == "stop" {
            Some(ClassLabel::Stop)
        } else if t.starts_with("speedlimit") {
            Some(ClassLabel::SpeedLimit)
        } else {
            None
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LisaSubset,
    Synthetic,
    /// Derived from another dataset by a transform (reconstruction, attack).
    Derived,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<(ImageTensor, ClassLabel)>,
    pub split: Option<Split>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(items: Vec<(ImageTensor, ClassLabel)>, provenance: Provenance) -> Self {
        LabeledDataset {
            items,
            split: None,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTensor> {
        self.items.iter().map(|(x, _)| x)
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.items.iter().map(|(_, y)| *y).collect()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for (_, y) in &self.items {
            c[y.index()] += 1;
        }
        c
    }

    /// Hash over every item's content hash and label, in order.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        for (x, y) in &self.items {
            buf.extend_from_slice(x.content_hash().as_bytes());
            buf.push(y.index() as u8);
        }
        sha256_hex(&buf)
    }

    /// Same items with each image replaced by `f(image)`; labels untouched.
    pub fn map_images(&self, mut f: impl FnMut(&ImageTensor) -> ImageTensor) -> LabeledDataset {
        LabeledDataset {
            items: self.items.iter().map(|(x, y)| (f(x), *y)).collect(),
            split: self.split,
            provenance: Provenance::Derived,
        }
    }

    pub fn subset(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            items: self.items.iter().take(n).cloned().collect(),
            split: self.split,
            provenance: self.provenance,
        }
    }
}

/// Counters for rows dropped during ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: usize,
    pub other_class: usize,
    pub box_outside_frame: usize,
    pub duplicates: usize,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    frame_path: String,
    class_name: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

/// Crops every annotated STOP / SPEED LIMIT box out of its frame and
/// resizes it to 32×32.
///
/// The box is grown to a square around its centre, clipped to the frame and
/// bilinearly resampled. Grayscale frames are replicated across channels.
/// Exact duplicate crops are kept once so that splits stay disjoint.
pub fn ingest_lisa_subset(
    source_dir: &Path,
    manifest: &Path,
) -> Result<(LabeledDataset, IngestStats)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(manifest)?;
    let mut stats = IngestStats::default();
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 2; // header is line 1
        let row = row.map_err(|e| Error::Ingest {
            row: row_no,
            message: e.to_string(),
        })?;
        stats.rows += 1;
        let Some(label) = ClassLabel::from_tag(&row.class_name) else {
            stats.other_class += 1;
            continue;
        };
        let path = source_dir.join(&row.frame_path);
        if !path.is_file() {
            return Err(Error::Ingest {
                row: row_no,
                message: format!("frame {} not found", path.display()),
            });
        }
        let frame = image::open(&path)
            .map_err(|e| Error::Ingest {
                row: row_no,
                message: format!("cannot decode {}: {e}", path.display()),
            })?
            .to_rgb8();
        let (w, h) = (f64::from(frame.width()), f64::from(frame.height()));
        let inside = row.x_min >= 0.0
            && row.y_min >= 0.0
            && row.x_max <= w
            && row.y_max <= h
            && row.x_min < row.x_max
            && row.y_min < row.y_max;
        if !inside {
            stats.box_outside_frame += 1;
            continue;
        }
        let img = crop_square_resize(&frame, (row.x_min, row.y_min, row.x_max, row.y_max));
        if !seen.insert(img.content_hash()) {
            stats.duplicates += 1;
            continue;
        }
        items.push((img, label));
    }
    if stats.box_outside_frame > 0 {
        log::warn!("{} annotation(s) skipped: box outside frame", stats.box_outside_frame);
    }
    if items.is_empty() {
        return Err(Error::EmptyDataset(source_dir.to_path_buf()));
    }
    Ok((LabeledDataset::new(items, Provenance::LisaSubset), stats))
}

/// Square-padded crop of `bbox = (x0, y0, x1, y1)` resampled to 32×32.
pub fn crop_square_resize(frame: &RgbImage, bbox: (f64, f64, f64, f64)) -> ImageTensor {
    let (fw, fh) = (f64::from(frame.width()), f64::from(frame.height()));
    let (x0, y0, x1, y1) = bbox;
    let side = (x1 - x0).max(y1 - y0);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let sx0 = (cx - side / 2.0).max(0.0);
    let sy0 = (cy - side / 2.0).max(0.0);
    let sx1 = (cx + side / 2.0).min(fw);
    let sy1 = (cy + side / 2.0).min(fh);
    resize_bilinear(frame, (sx0, sy0, sx1 - sx0, sy1 - sy0))
}

/// Bilinear resampling of the region `(x, y, w, h)` with half-pixel centres.
fn resize_bilinear(frame: &RgbImage, region: (f64, f64, f64, f64)) -> ImageTensor {
    let (rx, ry, rw, rh) = region;
    let (fw, fh) = (frame.width() as usize, frame.height() as usize);
    let sample = |c: usize, xs: f64, ys: f64| -> f64 {
        let xs = xs.clamp(0.0, (fw - 1) as f64);
        let ys = ys.clamp(0.0, (fh - 1) as f64);
        let (x0, y0) = (xs.floor() as usize, ys.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(fw - 1), (y0 + 1).min(fh - 1));
        let (tx, ty) = (xs - x0 as f64, ys - y0 as f64);
        let p = |x: usize, y: usize| f64::from(frame.get_pixel(x as u32, y as u32).0[c]);
        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
        (top * (1.0 - ty) + bottom * ty) / 255.0
    };
    let mut pixels = vec![0.0; PIXELS];
    for c in 0..CHANNELS {
        for i in 0..SIDE {
            let ys = ry + (i as f64 + 0.5) * rh / SIDE as f64 - 0.5;
            for j in 0..SIDE {
                let xs = rx + (j as f64 + 0.5) * rw / SIDE as f64 - 0.5;
                pixels[(c * SIDE + i) * SIDE + j] = sample(c, xs, ys);
            }
        }
    }
    ImageTensor::clamped(pixels, RangeTag::Unit)
}

/// Shuffles with ChaCha8 under `seed` and splits 60/20/20: train and
/// validation sizes are floored, the remainder goes to test.
pub fn split_dataset(
    ds: &LabeledDataset,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let n = ds.len();
    if n < 5 {
        return Err(invalid(format!(
            "cannot split {n} items into three non-empty sets (need at least 5)"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let take = |range: std::ops::Range<usize>, split: Split| LabeledDataset {
        items: order[range].iter().map(|&i| ds.items[i].clone()).collect(),
        split: Some(split),
        provenance: ds.provenance,
    };
    Ok((
        take(0..n_train, Split::Train),
        take(n_train..n_train + n_val, Split::Validation),
        take(n_train + n_val..n, Split::Test),
    ))
}

/// Procedural stand-in for the two sign classes.
///
/// Both classes share one colour and background distribution; only the
/// silhouette differs (octagon for STOP, tall rectangle for SPEED LIMIT),
/// plus a class-specific inner mark. Corner coverage alone makes the
/// classes linearly separable.
pub fn generate_synthetic_dataset(n_per_class: i64, seed: u64) -> Result<LabeledDataset> {
    if n_per_class <= 0 {
        return Err(invalid(format!("n_per_class must be >= 1, got {n_per_class}")));
    }
    let mut rng = rng::seeded(seed);
    let mut items = Vec::with_capacity(2 * n_per_class as usize);
    for _ in 0..n_per_class {
        for label in ClassLabel::ALL {
            items.push((synthetic_sign(&mut rng, label), label));
        }
    }
    Ok(LabeledDataset::new(items, Provenance::Synthetic))
}

fn synthetic_sign(rng: &mut rng::Rng, label: ClassLabel) -> ImageTensor {
    let noise = Normal::new(0.0, 0.03).expect("valid std");
    let bg_level: f64 = rng.random_range(0.25..0.55);
    let bg_tint = [
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ];
    // sign colour: shared hue distribution for both classes
    let base = rng.random_range(0.55..0.85);
    let sign = [
        base + rng.random_range(-0.15..0.15),
        base + rng.random_range(-0.15..0.15),
        base + rng.random_range(-0.15..0.15),
    ];
    let mark_dark: f64 = rng.random_range(0.05..0.2);
    let cx = 15.5 + rng.random_range(-1.5..1.5);
    let cy = 15.5 + rng.random_range(-1.5..1.5);
    let r = rng.random_range(9.0..12.0);
    let tan = (std::f64::consts::PI / 8.0).tan();

    let mut pixels = vec![0.0; PIXELS];
    for i in 0..SIDE {
        for j in 0..SIDE {
            let (dx, dy) = (j as f64 - cx, i as f64 - cy);
            let (inside, mark) = match label {
                ClassLabel::Stop => {
                    let (ax, ay) = (dx.abs(), dy.abs());
                    // regular octagon with inradius r
                    let inside = ax <= r && ay <= r && (ax + ay) <= r * (1.0 + tan);
                    let mark = ay <= 0.18 * r && ax <= 0.6 * r;
                    (inside, mark)
                }
                ClassLabel::SpeedLimit => {
                    let inside = dx.abs() <= 0.75 * r && dy.abs() <= r;
                    let mark = dx.abs() <= 0.12 * r && dy.abs() <= 0.6 * r;
                    (inside, mark)
                }
            };
            for c in 0..CHANNELS {
                let v = if inside && mark {
                    mark_dark
                } else if inside {
                    sign[c]
                } else {
                    bg_level + bg_tint[c]
                };
                pixels[(c * SIDE + i) * SIDE + j] = v + noise.sample(rng);
            }
        }
    }
    ImageTensor::clamped(pixels, RangeTag::Unit)
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveRow {
    file: String,
    class: ClassLabel,
    split: Split,
    content_sha256: String,
}

/// Writes splits as `STOP/*.png`, `SPEED_LIMIT/*.png` and `manifest.csv`.
pub fn write_archive(dir: &Path, splits: &[&LabeledDataset]) -> Result<()> {
    for class in ClassLabel::ALL {
        fs::create_dir_all(dir.join(class.name()))?;
    }
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for ds in splits {
        let split = ds
            .split
            .ok_or_else(|| invalid("archive datasets must carry a split tag"))?;
        for (i, (img, label)) in ds.items.iter().enumerate() {
            let file = format!("{}/{}_{:05}.png", label.name(), split.name(), i);
            img.to_rgb_image().save(dir.join(&file))?;
            w.serialize(ArchiveRow {
                file,
                class: *label,
                split,
                content_sha256: img.content_hash(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an archive back as `(train, validation, test)`, verifying hashes.
pub fn read_archive(dir: &Path) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let manifest: PathBuf = dir.join("manifest.csv");
    if !manifest.is_file() {
        return Err(Error::MissingArtifact(manifest.display().to_string()));
    }
    let mut out = [Split::Train, Split::Validation, Split::Test].map(|s| LabeledDataset {
        items: Vec::new(),
        split: Some(s),
        provenance: Provenance::Derived,
    });
    let mut reader = csv::Reader::from_path(&manifest)?;
    for (i, row) in reader.deserialize::<ArchiveRow>().enumerate() {
        let row = row?;
        let img = ImageTensor::from_rgb_image(&image::open(dir.join(&row.file))?.to_rgb8())?;
        if img.content_hash() != row.content_sha256 {
            return Err(Error::Ingest {
                row: i + 2,
                message: format!("content hash mismatch for {}", row.file),
            });
        }
        let slot = match row.split {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        };
        out[slot].items.push((img, row.class));
    }
    let [a, b, c] = out;
    Ok((a, b, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn range_conversion_endpoints() {
        let img = ImageTensor::filled(0.0, RangeTag::Unit).unwrap();
        assert_eq!(img.convert_range(RangeTag::Signed).pixels()[0], -1.0);
        let img = ImageTensor::filled(0.5, RangeTag::Unit).unwrap();
        assert_eq!(img.convert_range(RangeTag::Signed).pixels()[0], 0.0);
    }

    proptest! {
        #[test]
        fn range_round_trip(pixels in proptest::collection::vec(0.0f64..=1.0, PIXELS)) {
            let img = ImageTensor::new(pixels, RangeTag::Unit).unwrap();
            let back = img.convert_range(RangeTag::Signed).convert_range(RangeTag::Unit);
            prop_assert!(img.linf_distance(&back) < 1e-6);
        }

        #[test]
        fn splits_partition_the_dataset(n in 5usize..60, seed in any::<u64>()) {
            let ds = generate_synthetic_dataset(n.div_ceil(2) as i64, 3).unwrap().subset(n);
            let (tr, va, te) = split_dataset(&ds, seed).unwrap();
            prop_assert_eq!(tr.len() + va.len() + te.len(), n);
            prop_assert_eq!(tr.len(), n * 6 / 10);
            prop_assert_eq!(va.len(), n * 2 / 10);
            let hashes = |d: &LabeledDataset| d.images().map(|x| x.content_hash()).collect::<HashSet<_>>();
            let (a, b, c) = (hashes(&tr), hashes(&va), hashes(&te));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        }
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(ImageTensor::new(vec![1.5; PIXELS], RangeTag::Unit).is_err());
        assert!(ImageTensor::new(vec![-0.5; PIXELS], RangeTag::Signed).is_ok());
        assert!(ImageTensor::new(vec![0.0; 10], RangeTag::Unit).is_err());
    }

    #[test]
    fn paper_sized_split() {
        let n = 1562;
        assert_eq!((n * 6 / 10, n * 2 / 10, n - n * 6 / 10 - n * 2 / 10), (937, 312, 313));
    }

    #[test]
    fn split_is_deterministic_and_rejects_tiny_sets() {
        let ds = generate_synthetic_dataset(5, 1).unwrap();
        let a = split_dataset(&ds, 0).unwrap();
        let b = split_dataset(&ds, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 6);
        let tiny = ds.subset(3);
        assert!(split_dataset(&tiny, 0).is_err());
    }

    #[test]
    fn synthetic_generation() {
        let a = generate_synthetic_dataset(100, 7).unwrap();
        let b = generate_synthetic_dataset(100, 7).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let one = generate_synthetic_dataset(1, 0).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one.class_counts(), [1, 1]);
        assert!(generate_synthetic_dataset(0, 0).is_err());
        assert!(generate_synthetic_dataset(-3, 0).is_err());
    }

    #[test]
    fn lisa_tags_collapse_speed_limits() {
        assert_eq!(ClassLabel::from_tag("stop"), Some(ClassLabel::Stop));
        for mph in [15, 25, 35, 45, 55, 65] {
            assert_eq!(
                ClassLabel::from_tag(&format!("speedLimit{mph}")),
                Some(ClassLabel::SpeedLimit)
            );
        }
        assert_eq!(ClassLabel::from_tag("pedestrianCrossing"), None);
    }

    #[test]
    fn square_crop_of_hand_made_frame() {
        let mut frame = RgbImage::from_pixel(100, 100, image::Rgb([10, 20, 30]));
        for y in 30..70 {
            for x in 30..70 {
                frame.put_pixel(x, y, image::Rgb([255, 0, 128]));
            }
        }
        let img = crop_square_resize(&frame, (30.0, 30.0, 70.0, 70.0));
        assert_eq!(img.pixels().len(), 3 * 32 * 32);
        assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        // crop covers exactly the square, so the centre is the box colour
        assert!((img.at(0, 16, 16) - 1.0).abs() < 1e-12);
        assert!(img.at(1, 16, 16).abs() < 1e-12);
    }

    #[test]
    fn non_square_box_is_padded_to_square() {
        let frame = RgbImage::from_fn(100, 100, |x, _| image::Rgb([x as u8, 0, 0]));
        // 20 wide, 40 tall box centred at x=50 becomes a 40×40 square
        let img = crop_square_resize(&frame, (40.0, 30.0, 60.0, 70.0));
        let left = img.at(0, 16, 0) * 255.0;
        let right = img.at(0, 16, 31) * 255.0;
        assert!(left < 31.0 && right > 68.0, "left {left} right {right}");
    }
}
