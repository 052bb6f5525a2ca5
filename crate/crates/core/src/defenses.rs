//! Preprocessing baselines: Gaussian noise, JPEG round-trip, bit-depth
//! squeezing and median smoothing, plus the transform-then-classify pipeline
//! shared with the reconstruction defense.

use std::time::{Duration, Instant};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, ImageTensor, LabeledDataset, Provenance, RangeTag, CHANNELS, SIDE};
use crate::error::{invalid, Result};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::reconstruction::{reconstruct_batch, ReconstructionCache, ReconstructionConfig};
use crate::rng::{derive_seed, seeded};

/// Identifier of the JPEG path below, recorded in reports.
pub const JPEG_CODEC_ID: &str = "argan-jpeg-sim-420-v1";

fn require_unit(x: &ImageTensor) -> Result<()> {
    if x.range() != RangeTag::Unit {
        return Err(invalid("defense transforms take unit-range images"));
    }
    Ok(())
}

/// Adds i.i.d. `N(0, σ²)` noise per pixel and clips to `[0, 1]`.
pub fn gaussian_augment(x: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    require_unit(x)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
    let mut rng = seeded(seed);
    let px = x.pixels().iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(ImageTensor::clamped(px, RangeTag::Unit))
}

/// `round(x·(2ᵇ−1)) / (2ᵇ−1)` with ties away from zero.
pub fn feature_squeeze(x: &ImageTensor, bit_depth: u32) -> Result<ImageTensor> {
    require_unit(x)?;
    if !(1..=8).contains(&bit_depth) {
        return Err(invalid(format!("bit_depth must be in [1, 8], got {bit_depth}")));
    }
    let levels = ((1u32 << bit_depth) - 1) as f64;
    let px = x.pixels().iter().map(|v| (v * levels).round() / levels).collect();
    ImageTensor::new(px, RangeTag::Unit)
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Per-channel median over a `window × window` neighbourhood.
pub fn median_smooth(x: &ImageTensor, window: usize) -> Result<ImageTensor> {
    require_unit(x)?;
    if window == 0 || window % 2 == 0 {
        return Err(invalid(format!("median window must be odd and >= 1, got {window}")));
    }
    let r = (window / 2) as isize;
    let mut out = Vec::with_capacity(x.pixels().len());
    let mut buf = Vec::with_capacity(window * window);
    for c in 0..CHANNELS {
        for y in 0..SIDE {
            for xx in 0..SIDE {
                buf.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        buf.push(x.at(c, reflect(y as isize + dy, SIDE), reflect(xx as isize + dx, SIDE)));
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
                out.push(*m);
            }
        }
    }
    ImageTensor::new(out, RangeTag::Unit)
}

const LUMA_Q: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55, 14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51, 87, 80,
    62, 18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98,
    112, 100, 103, 99,
];

const CHROMA_Q: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99,
];

/// Standard table scaled to `quality` the way the reference encoder does.
fn scaled_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (o, &b) in t.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut c = [[0.0; 8]; 8];
    for (u, row) in c.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    c
}

/// Level-shifted 8×8 block through forward DCT, quantization and inverse DCT.
fn quantize_block(block: &mut [f64; 64], table: &[f64; 64], c: &[[f64; 8]; 8]) {
    let mut tmp = [0.0; 64];
    let mut coef = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    for u in 0..8 {
        for v in 0..8 {
            let f: f64 = (0..8).map(|x| c[v][x] * tmp[u * 8 + x]).sum();
            coef[u * 8 + v] = (f / table[u * 8 + v]).round() * table[u * 8 + v];
        }
    }
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coef[u * 8 + v]).sum();
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = (0..8).map(|v| c[v][x] * tmp[y * 8 + v]).sum();
        }
    }
}

fn lossy_plane(plane: &mut [f64], side: usize, table: &[f64; 64], c: &[[f64; 8]; 8]) {
    let mut block = [0.0; 64];
    for by in (0..side).step_by(8) {
        for bx in (0..side).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * side + bx + x] - 128.0;
                }
            }
            quantize_block(&mut block, table, c);
            for y in 0..8 {
                for x in 0..8 {
                    plane[(by + y) * side + bx + x] = block[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

/// Baseline JPEG round-trip with 4:2:0 chroma: 8-bit quantization, JFIF
/// colour transform, 2×2 chroma averaging, DCT quantization with the
/// standard tables, replicated chroma upsampling and 8-bit output.
/// Entropy coding is lossless and therefore omitted.
pub fn jpeg_compress(x: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    require_unit(x)?;
    if !(1..=100).contains(&quality) {
        return Err(invalid(format!("JPEG quality must be in [1, 100], got {quality}")));
    }
    let n = SIDE * SIDE;
    let h = SIDE / 2;
    let px: Vec<f64> = x.pixels().iter().map(|v| (v * 255.0).round()).collect();
    let (r, g, b) = (&px[..n], &px[n..2 * n], &px[2 * n..]);
    let mut luma = vec![0.0; n];
    let mut cb_full = vec![0.0; n];
    let mut cr_full = vec![0.0; n];
    for i in 0..n {
        luma[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        cb_full[i] = -0.168_735_892 * r[i] - 0.331_264_108 * g[i] + 0.5 * b[i] + 128.0;
        cr_full[i] = 0.5 * r[i] - 0.418_687_589 * g[i] - 0.081_312_411 * b[i] + 128.0;
    }
    let down = |full: &[f64]| -> Vec<f64> {
        let mut s = vec![0.0; h * h];
        for y in 0..h {
            for x in 0..h {
                let i = 2 * y * SIDE + 2 * x;
                s[y * h + x] = 0.25 * (full[i] + full[i + 1] + full[i + SIDE] + full[i + SIDE + 1]);
            }
        }
        s
    };
    let (mut cb, mut cr) = (down(&cb_full), down(&cr_full));
    let basis = dct_basis();
    lossy_plane(&mut luma, SIDE, &scaled_table(&LUMA_Q, quality), &basis);
    let ct = scaled_table(&CHROMA_Q, quality);
    lossy_plane(&mut cb, h, &ct, &basis);
    lossy_plane(&mut cr, h, &ct, &basis);
    let mut out = vec![0.0; 3 * n];
    for y in 0..SIDE {
        for xx in 0..SIDE {
            let i = y * SIDE + xx;
            let yv = luma[i];
            let cbv = cb[(y / 2) * h + xx / 2] - 128.0;
            let crv = cr[(y / 2) * h + xx / 2] - 128.0;
            let rgb = [yv + 1.402 * crv, yv - 0.344_136_286 * cbv - 0.714_136_286 * crv, yv + 1.772 * cbv];
            for (ch, v) in rgb.iter().enumerate() {
                out[ch * n + i] = v.round().clamp(0.0, 255.0) / 255.0;
            }
        }
    }
    ImageTensor::new(out, RangeTag::Unit)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum DefenseSpec {
    GaussianAugmentation {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    JpegCompression {
        #[serde(default = "default_quality")]
        quality: u8,
    },
    FeatureSqueezing {
        #[serde(default = "default_bit_depth")]
        bit_depth: u32,
    },
    MedianSmoothing {
        #[serde(default = "default_window")]
        window: usize,
    },
    ArGan,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_quality() -> u8 {
    50
}
fn default_bit_depth() -> u32 {
    4
}
fn default_window() -> usize {
    3
}

impl DefenseSpec {
    /// The five defenses compared in the result tables, baselines first.
    pub fn standard_set() -> Vec<DefenseSpec> {
        vec![
            DefenseSpec::GaussianAugmentation { sigma: default_sigma() },
            DefenseSpec::JpegCompression { quality: default_quality() },
            DefenseSpec::FeatureSqueezing { bit_depth: default_bit_depth() },
            DefenseSpec::MedianSmoothing { window: default_window() },
            DefenseSpec::ArGan,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::GaussianAugmentation { .. } => "Gaussian Augmentation",
            DefenseSpec::JpegCompression { .. } => "JPEG Compression",
            DefenseSpec::FeatureSqueezing { .. } => "Feature Squeezing",
            DefenseSpec::MedianSmoothing { .. } => "Median smoothing",
            DefenseSpec::ArGan => "AR-GAN",
        }
    }

    /// Short identifier usable in file names.
    pub fn slug(&self) -> &'static str {
        match self {
            DefenseSpec::GaussianAugmentation { .. } => "gaussian",
            DefenseSpec::JpegCompression { .. } => "jpeg",
            DefenseSpec::FeatureSqueezing { .. } => "squeeze",
            DefenseSpec::MedianSmoothing { .. } => "median",
            DefenseSpec::ArGan => "argan",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseSpec::GaussianAugmentation { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid(format!("sigma must be finite and >= 0, got {sigma}")))
            }
            DefenseSpec::JpegCompression { quality } if !(1..=100).contains(&quality) => {
                Err(invalid(format!("JPEG quality must be in [1, 100], got {quality}")))
            }
            DefenseSpec::FeatureSqueezing { bit_depth } if !(1..=8).contains(&bit_depth) => {
                Err(invalid(format!("bit_depth must be in [1, 8], got {bit_depth}")))
            }
            DefenseSpec::MedianSmoothing { window } if window == 0 || window % 2 == 0 => {
                Err(invalid(format!("median window must be odd and >= 1, got {window}")))
            }
            _ => Ok(()),
        }
    }

    /// Applies a baseline transform. Gaussian noise is seeded by
    /// `(seed, image hash)` so each image's noise is reproducible on its own.
    /// The reconstruction defense is not a per-image transform; see
    /// [`transform_dataset`].
    pub fn transform(&self, x: &ImageTensor, seed: u64) -> Result<ImageTensor> {
        match *self {
            DefenseSpec::GaussianAugmentation { sigma } => {
                let s = derive_seed(&[b"gaussian", &seed.to_le_bytes(), x.content_hash().as_bytes()]);
                gaussian_augment(x, sigma, s)
            }
            DefenseSpec::JpegCompression { quality } => jpeg_compress(x, quality),
            DefenseSpec::FeatureSqueezing { bit_depth } => feature_squeeze(x, bit_depth),
            DefenseSpec::MedianSmoothing { window } => median_smooth(x, window),
            DefenseSpec::ArGan => Err(invalid("the AR-GAN defense needs a generator; use transform_dataset")),
        }
    }
}

/// Everything needed to run one defense end to end.
#[derive(Clone, Copy)]
pub struct DefensePipeline<'a> {
    pub spec: DefenseSpec,
    pub classifier: &'a ClassifierModel,
    /// Required for [`DefenseSpec::ArGan`] only.
    pub generator: Option<&'a GeneratorModel>,
    pub reconstruction: &'a ReconstructionConfig,
    /// Shared across pipelines with the same generator to avoid repeated
    /// inversions of identical inputs.
    pub cache: Option<&'a ReconstructionCache>,
    pub seed: u64,
}

impl DefensePipeline<'_> {
    /// Latent-descent work per image; `None` for the baselines.
    pub fn work_units(&self) -> Option<u64> {
        (self.spec == DefenseSpec::ArGan).then(|| self.reconstruction.work_units())
    }

    /// Defense input transform for a batch.
    pub fn transform_batch(&self, images: &[&ImageTensor]) -> Result<Vec<ImageTensor>> {
        match self.spec {
            DefenseSpec::ArGan => {
                let g = self.generator.ok_or_else(|| invalid("the AR-GAN defense needs a generator"))?;
                match self.cache {
                    Some(c) => c.reconstruct(images, g, self.reconstruction),
                    None => Ok(reconstruct_batch(images, g, self.reconstruction)?
                        .into_iter()
                        .map(|r| r.reconstruction)
                        .collect()),
                }
            }
            spec => images.iter().map(|x| spec.transform(x, self.seed)).collect(),
        }
    }
}

/// Applies the defense's input transform to every image; labels are kept.
pub fn transform_dataset(
    ds: &LabeledDataset,
    spec: &DefenseSpec,
    generator: Option<&GeneratorModel>,
    recon: &ReconstructionConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    spec.validate()?;
    let images: Vec<ImageTensor> = match spec {
        DefenseSpec::ArGan => {
            let g = generator.ok_or_else(|| invalid("the AR-GAN defense needs a generator"))?;
            let refs: Vec<&ImageTensor> = ds.images().collect();
            reconstruct_batch(&refs, g, recon)?.into_iter().map(|r| r.reconstruction).collect()
        }
        _ => ds.images().map(|x| spec.transform(x, seed)).collect::<Result<_>>()?,
    };
    Ok(LabeledDataset::new(images.into_iter().zip(ds.labels()).collect(), Provenance::Derived))
}

/// Transform then classify, for a whole batch. The delay is the wall-clock
/// time of both steps divided evenly over the batch.
pub fn apply_defense_batch(images: &[&ImageTensor], pipeline: &DefensePipeline) -> Result<(Vec<ClassLabel>, Duration)> {
    let start = Instant::now();
    let transformed = pipeline.transform_batch(images)?;
    let refs: Vec<&ImageTensor> = transformed.iter().collect();
    let labels = pipeline.classifier.classify(&refs);
    let per = start.elapsed() / images.len().max(1) as u32;
    Ok((labels, per))
}

/// Transform then classify a single image.
pub fn apply_defense_pipeline(x: &ImageTensor, pipeline: &DefensePipeline) -> Result<(ClassLabel, Duration)> {
    let (labels, d) = apply_defense_batch(&[x], pipeline)?;
    Ok((labels[0], d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_dataset;
    use proptest::prelude::*;

    fn filled(v: f64) -> ImageTensor {
        ImageTensor::filled(v, RangeTag::Unit).unwrap()
    }

    fn random_image(seed: u64) -> ImageTensor {
        use rand::Rng;
        let mut rng = seeded(seed);
        ImageTensor::new((0..CHANNELS * SIDE * SIDE).map(|_| rng.random::<f64>()).collect(), RangeTag::Unit).unwrap()
    }

    #[test]
    fn gaussian_zero_sigma_is_identity() {
        let x = random_image(1);
        assert_eq!(gaussian_augment(&x, 0.0, 5).unwrap(), x);
        assert!(gaussian_augment(&x, -0.1, 5).is_err());
    }

    #[test]
    fn gaussian_noise_moments() {
        // Pre-clipping draws come from the same source as the transform.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = seeded(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((std - 1.0).abs() <= 0.02, "std {std}");
        let y = gaussian_augment(&filled(0.5), 1.0, 3).unwrap();
        assert!(y.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y, gaussian_augment(&filled(0.5), 1.0, 3).unwrap());
    }

    #[test]
    fn squeeze_examples() {
        let y = feature_squeeze(&filled(0.5), 4).unwrap();
        assert!(y.pixels().iter().all(|&v| v == 8.0 / 15.0));
        for b in 1..=8 {
            assert_eq!(feature_squeeze(&filled(0.0), b).unwrap(), filled(0.0));
            assert_eq!(feature_squeeze(&filled(1.0), b).unwrap(), filled(1.0));
        }
        assert!(feature_squeeze(&filled(0.5), 0).is_err());
        assert!(feature_squeeze(&filled(0.5), 9).is_err());
    }

    #[test]
    fn median_removes_an_interior_impulse() {
        let mut px = vec![0.0; CHANNELS * SIDE * SIDE];
        px[SIDE * 10 + 12] = 1.0;
        let x = ImageTensor::new(px, RangeTag::Unit).unwrap();
        assert_eq!(median_smooth(&x, 3).unwrap(), filled(0.0));
        assert_eq!(median_smooth(&filled(0.3), 5).unwrap(), filled(0.3));
        assert!(median_smooth(&x, 4).is_err());
    }

    #[test]
    fn reflection_mirrors_without_repeating_edges() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn jpeg_keeps_mid_gray() {
        let x = filled(128.0 / 255.0);
        let y = jpeg_compress(&x, 50).unwrap();
        assert!(x.linf_distance(&y) <= 2.0 / 255.0 + 1e-12);
        assert!(jpeg_compress(&x, 0).is_err());
        assert!(jpeg_compress(&x, 101).is_err());
    }

    #[test]
    fn jpeg_is_lossy_but_close_on_smooth_content() {
        let ds = generate_synthetic_dataset(2, 3).unwrap();
        for x in ds.images() {
            let y = jpeg_compress(x, 50).unwrap();
            assert_ne!(&y, x);
            let mse = x.l2_distance(&y).powi(2) / x.pixels().len() as f64;
            assert!(mse < 0.01, "mse {mse}");
            assert_eq!(y, jpeg_compress(x, 50).unwrap());
        }
    }

    #[test]
    fn quality_scaling_matches_reference_encoder() {
        let t = scaled_table(&LUMA_Q, 50);
        assert_eq!(t[0], 16.0);
        let t = scaled_table(&LUMA_Q, 100);
        assert!(t.iter().all(|&v| v == 1.0));
        let t = scaled_table(&LUMA_Q, 25);
        assert_eq!(t[0], 32.0);
    }

    #[test]
    fn specs_serialize_with_defaults_and_reject_bad_params() {
        let s: DefenseSpec = serde_json::from_str(r#"{"kind":"JPEG_COMPRESSION"}"#).unwrap();
        assert_eq!(s, DefenseSpec::JpegCompression { quality: 50 });
        assert!(serde_json::from_str::<DefenseSpec>(r#"{"kind":"MEDIAN_SMOOTHING","windw":3}"#).is_err());
        assert!(DefenseSpec::MedianSmoothing { window: 2 }.validate().is_err());
        assert!(DefenseSpec::GaussianAugmentation { sigma: -1.0 }.validate().is_err());
        assert_eq!(DefenseSpec::standard_set().len(), 5);
    }

    #[test]
    fn identity_transform_matches_bare_classifier() {
        let ds = generate_synthetic_dataset(3, 4).unwrap();
        let clf = ClassifierModel::new(crate::models::ClassifierArch { base_width: 4 }, 0);
        let recon = ReconstructionConfig::default();
        let p = DefensePipeline {
            spec: DefenseSpec::GaussianAugmentation { sigma: 0.0 },
            classifier: &clf,
            generator: None,
            reconstruction: &recon,
            cache: None,
            seed: 0,
        };
        let imgs: Vec<&ImageTensor> = ds.images().collect();
        let (labels, d) = apply_defense_batch(&imgs, &p).unwrap();
        assert_eq!(labels, clf.classify(&imgs));
        assert!(d.as_secs_f64() >= 0.0);
        let argan = DefensePipeline { spec: DefenseSpec::ArGan, ..p };
        assert!(apply_defense_pipeline(imgs[0], &argan).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn squeeze_is_idempotent(seed in 0u64..10_000, b in 1u32..=8) {
            let once = feature_squeeze(&random_image(seed), b).unwrap();
            let twice = feature_squeeze(&once, b).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn median_outputs_come_from_the_window(seed in 0u64..10_000) {
            let x = random_image(seed);
            let y = median_smooth(&x, 3).unwrap();
            for c in 0..CHANNELS {
                for i in 0..SIDE {
                    for j in 0..SIDE {
                        let v = y.at(c, i, j);
                        let mut found = false;
                        for di in -1isize..=1 {
                            for dj in -1isize..=1 {
                                found |= x.at(c, reflect(i as isize + di, SIDE), reflect(j as isize + dj, SIDE)) == v;
                            }
                        }
                        prop_assert!(found);
                    }
                }
            }
        }

        #[test]
        fn transforms_preserve_shape_and_range(seed in 0u64..10_000) {
            let x = random_image(seed);
            for spec in DefenseSpec::standard_set().into_iter().filter(|s| *s != DefenseSpec::ArGan) {
                let y = spec.transform(&x, seed).unwrap();
                prop_assert_eq!(y.pixels().len(), x.pixels().len());
                prop_assert!(y.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
