//! Latent-space projection: find `z* = argmin ‖G(z) − x‖₂²` by fixed-step
//! gradient descent from several random starts and classify `G(z*)`.
//!
//! Restarts of all images in a call are stacked into one batch. Every layer
//! of a frozen generator acts on each row independently, so a row's
//! trajectory is bit-identical whatever else shares its batch.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::dataset::{ClassLabel, ImageTensor, LabeledDataset, RangeTag, PIXELS};
use crate::error::{invalid, Error, Result};
use crate::models::{ClassifierModel, GeneratorModel};
use crate::nn::Mode;
use crate::rng::{derive_seed, seeded, sha256_hex};
use crate::tensor::Tensor;

/// Rows per descent batch.
const CHUNK_ROWS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionConfig {
    /// L
    pub gradient_steps: usize,
    /// R
    pub random_restarts: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            gradient_steps: 2250,
            random_restarts: 20,
            step_size: 0.01,
            seed: 0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.random_restarts == 0 {
            return Err(invalid("random_restarts must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("step_size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }

    /// `L · R` gradient steps per image.
    pub fn work_units(&self) -> u64 {
        self.gradient_steps as u64 * self.random_restarts as u64
    }
}

/// A generator viewed as a frozen differentiable map from latents to
/// flattened outputs.
pub trait LatentGenerator {
    fn latent_dim(&self) -> usize;

    /// `[N, k]` → `[N, m]` with parameters held constant.
    fn decode(&self, z: &Var) -> Var;
}

impl LatentGenerator for GeneratorModel {
    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn decode(&self, z: &Var) -> Var {
        let p = self.store().bind(false, Mode::Eval);
        let n = z.shape()[0];
        self.forward(&p, z).reshape(&[n, PIXELS])
    }
}

/// `G(z) = z·Aᵀ` for a fixed `A [m, k]`.
#[derive(Clone, Debug)]
pub struct LinearGenerator {
    pub a: Tensor,
}

impl LatentGenerator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.a.shape()[1]
    }

    fn decode(&self, z: &Var) -> Var {
        z.matmul(&Var::constant(self.a.clone()), false, true)
    }
}

/// Outcome of inverting one target.
#[derive(Clone, Debug, PartialEq)]
pub struct Inversion {
    pub best_latent: Vec<f64>,
    /// `G(z*)` in the generator's output space.
    pub output: Vec<f64>,
    pub residual: f64,
    pub best_restart: usize,
    /// Final residual per restart; `None` where the trajectory went non-finite.
    pub restart_residuals: Vec<Option<f64>>,
}

struct Row {
    target: usize,
    restart: usize,
}

/// Runs `steps` descent steps from each given start and keeps the best
/// restart per target. `starts[i]` holds the initial latents for target `i`.
pub fn invert_from(
    generator: &dyn LatentGenerator,
    targets: &[&[f64]],
    starts: &[Vec<Vec<f64>>],
    steps: usize,
    step_size: f64,
) -> Result<Vec<Inversion>> {
    assert_eq!(targets.len(), starts.len());
    let k = generator.latent_dim();
    let rows: Vec<Row> = starts
        .iter()
        .enumerate()
        .flat_map(|(t, s)| (0..s.len()).map(move |r| Row { target: t, restart: r }))
        .collect();
    let mut finals: Vec<Vec<Option<(f64, Vec<f64>, Vec<f64>)>>> =
        starts.iter().map(|s| vec![None; s.len()]).collect();

    for chunk in rows.chunks(CHUNK_ROWS) {
        let b = chunk.len();
        let m = targets[chunk[0].target].len();
        let mut z = Vec::with_capacity(b * k);
        let mut x = Vec::with_capacity(b * m);
        for row in chunk {
            let z0 = &starts[row.target][row.restart];
            assert_eq!(z0.len(), k, "initial latent has wrong dimension");
            z.extend_from_slice(z0);
            let t = targets[row.target];
            assert_eq!(t.len(), m, "targets differ in length");
            x.extend_from_slice(t);
        }
        let x = Var::constant(Tensor::from_vec(&[b, m], x));
        let mut alive = vec![true; b];
        for step in 0..=steps {
            let zv = Var::leaf(Tensor::from_vec(&[b, k], z.clone()));
            let out = generator.decode(&zv);
            let sq = out.sub(&x).square();
            let per_row = sq.value().sum_to(&[b, 1]);
            for (i, r) in per_row.data().iter().enumerate() {
                if alive[i] && !r.is_finite() {
                    alive[i] = false;
                    log::warn!(
                        "restart {} of target {} went non-finite at step {step}; discarded",
                        chunk[i].restart,
                        chunk[i].target
                    );
                }
            }
            if step == steps {
                let outs = out.value().data();
                for (i, row) in chunk.iter().enumerate() {
                    if alive[i] {
                        finals[row.target][row.restart] = Some((
                            per_row.data()[i],
                            z[i * k..(i + 1) * k].to_vec(),
                            outs[i * m..(i + 1) * m].to_vec(),
                        ));
                    }
                }
                break;
            }
            let g = grad(&sq.sum(), &[&zv], false).remove(0);
            for (i, zi) in z.chunks_mut(k).enumerate() {
                if !alive[i] {
                    zi.fill(0.0);
                    continue;
                }
                for (zj, gj) in zi.iter_mut().zip(&g.value().data()[i * k..(i + 1) * k]) {
                    *zj -= step_size * gj;
                }
            }
        }
    }

    finals
        .into_iter()
        .enumerate()
        .map(|(t, per_restart)| {
            let restart_residuals: Vec<Option<f64>> = per_restart.iter().map(|f| f.as_ref().map(|f| f.0)).collect();
            // strict `<` keeps the earliest restart on ties
            let mut best: Option<usize> = None;
            for (r, f) in per_restart.iter().enumerate() {
                if let Some((res, _, _)) = f {
                    if best.is_none_or(|b| *res < per_restart[b].as_ref().expect("alive").0) {
                        best = Some(r);
                    }
                }
            }
            let best = best.ok_or_else(|| Error::Divergence(format!("every restart of target {t} went non-finite")))?;
            let (residual, best_latent, output) = per_restart[best].clone().expect("alive");
            Ok(Inversion {
                best_latent,
                output,
                residual,
                best_restart: best,
                restart_residuals,
            })
        })
        .collect()
}

/// Initial latent of restart `restart` for the target identified by `key`.
pub fn initial_latent(seed: u64, key: &str, restart: usize, k: usize) -> Vec<f64> {
    let s = derive_seed(&[b"restart", &seed.to_le_bytes(), key.as_bytes(), &(restart as u64).to_le_bytes()]);
    let mut rng = seeded(s);
    (0..k).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Seeded multi-restart inversion. `keys` identify the targets; restart
/// starts depend only on `(config.seed, key, restart index)`.
pub fn invert(
    generator: &dyn LatentGenerator,
    targets: &[&[f64]],
    keys: &[String],
    config: &ReconstructionConfig,
) -> Result<Vec<Inversion>> {
    config.validate()?;
    assert_eq!(targets.len(), keys.len());
    let k = generator.latent_dim();
    let starts: Vec<Vec<Vec<f64>>> = keys
        .iter()
        .map(|key| (0..config.random_restarts).map(|r| initial_latent(config.seed, key, r, k)).collect())
        .collect();
    invert_from(generator, targets, &starts, config.gradient_steps, config.step_size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub best_latent: Vec<f64>,
    /// `G(z*)` in unit range.
    pub reconstruction: ImageTensor,
    /// `‖G(z*) − x‖₂²` measured in signed range.
    pub residual: f64,
    pub restart_residuals: Vec<Option<f64>>,
    pub work_units: u64,
}

/// Projects each image onto the generator's range. Images may be in either
/// range; the residual is always measured in signed range.
pub fn reconstruct_batch(
    images: &[&ImageTensor],
    generator: &GeneratorModel,
    config: &ReconstructionConfig,
) -> Result<Vec<ReconstructionResult>> {
    let signed: Vec<ImageTensor> = images.iter().map(|x| x.convert_range(RangeTag::Signed)).collect();
    let keys: Vec<String> = images.iter().map(|x| x.content_hash()).collect();
    let targets: Vec<&[f64]> = signed.iter().map(|x| x.pixels()).collect();
    let inv = invert(generator, &targets, &keys, config)?;
    Ok(inv
        .into_iter()
        .map(|i| ReconstructionResult {
            reconstruction: ImageTensor::clamped(i.output, RangeTag::Signed).convert_range(RangeTag::Unit),
            best_latent: i.best_latent,
            residual: i.residual,
            restart_residuals: i.restart_residuals,
            work_units: config.work_units(),
        })
        .collect())
}

pub fn reconstruct(x: &ImageTensor, generator: &GeneratorModel, config: &ReconstructionConfig) -> Result<ReconstructionResult> {
    Ok(reconstruct_batch(&[x], generator, config)?.remove(0))
}

/// The deployed pipeline for one image: reconstruct, then classify the
/// unit-range reconstruction. The delay covers both steps.
pub fn classify_with_argan(
    x: &ImageTensor,
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    config: &ReconstructionConfig,
) -> Result<(ClassLabel, ReconstructionResult, Duration)> {
    let start = Instant::now();
    let rec = reconstruct(x, generator, config)?;
    let label = classifier.classify(&[&rec.reconstruction])[0];
    Ok((label, rec, start.elapsed()))
}

/// Batched form of [`classify_with_argan`]; returns the labels, the
/// reconstructions and the wall-clock time of the whole batch.
pub fn argan_predict(
    images: &[&ImageTensor],
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    config: &ReconstructionConfig,
) -> Result<(Vec<ClassLabel>, Vec<ReconstructionResult>, Duration)> {
    let start = Instant::now();
    let recs = reconstruct_batch(images, generator, config)?;
    let refs: Vec<&ImageTensor> = recs.iter().map(|r| &r.reconstruction).collect();
    let labels = classifier.classify(&refs);
    Ok((labels, recs, start.elapsed()))
}

impl ReconstructionConfig {
    /// Hash of the canonical JSON form; part of every cache key.
    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

const CACHE_MAGIC: &[u8; 8] = b"ARGANRC1";

/// Reconstructions keyed by (exact image hash, generator checksum,
/// reconstruction config hash). Entries are only ever added.
#[derive(Default)]
pub struct ReconstructionCache {
    map: RefCell<HashMap<String, ImageTensor>>,
    hits: Cell<usize>,
}

impl ReconstructionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lookups answered without running the inversion.
    pub fn hits(&self) -> usize {
        self.hits.get()
    }

    fn key(image: &ImageTensor, generator: &str, config: &str) -> String {
        sha256_hex(format!("{}:{generator}:{config}", image.exact_hash()).as_bytes())
    }

    /// Unit-range reconstructions of `images`, inverting only the misses.
    pub fn reconstruct(
        &self,
        images: &[&ImageTensor],
        generator: &GeneratorModel,
        config: &ReconstructionConfig,
    ) -> Result<Vec<ImageTensor>> {
        let (g, c) = (generator.checksum(), config.config_hash());
        let keys: Vec<String> = images.iter().map(|x| Self::key(x, &g, &c)).collect();
        let mut missing: Vec<usize> = Vec::new();
        {
            let map = self.map.borrow();
            let mut seen = std::collections::HashSet::new();
            for (i, k) in keys.iter().enumerate() {
                if !map.contains_key(k) && seen.insert(k.as_str()) {
                    missing.push(i);
                }
            }
        }
        self.hits.set(self.hits.get() + images.len() - missing.len());
        if !missing.is_empty() {
            let todo: Vec<&ImageTensor> = missing.iter().map(|&i| images[i]).collect();
            let recs = reconstruct_batch(&todo, generator, config)?;
            let mut map = self.map.borrow_mut();
            for (&i, r) in missing.iter().zip(recs) {
                map.insert(keys[i].clone(), r.reconstruction);
            }
        }
        let map = self.map.borrow();
        Ok(keys.iter().map(|k| map[k].clone()).collect())
    }

    /// Writes every entry to one binary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let map = self.map.borrow();
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();
        let mut buf = Vec::with_capacity(16 + keys.len() * (64 + PIXELS * 8));
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&(keys.len() as u64).to_le_bytes());
        for k in keys {
            buf.extend_from_slice(k.as_bytes());
            for v in map[k].pixels() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Merges a file written by [`ReconstructionCache::save`]. A missing file
    /// is an empty cache; a malformed one is an error.
    pub fn load(&self, path: &Path) -> Result<()> {
        let buf = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let bad = || invalid(format!("malformed reconstruction cache {}", path.display()));
        if buf.len() < 16 || &buf[..8] != CACHE_MAGIC {
            return Err(bad());
        }
        let n = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
        let entry = 64 + PIXELS * 8;
        if buf.len() != 16 + n * entry {
            return Err(bad());
        }
        let mut map = self.map.borrow_mut();
        for e in buf[16..].chunks_exact(entry) {
            let key = std::str::from_utf8(&e[..64]).map_err(|_| bad())?.to_string();
            let px = e[64..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            map.insert(key, ImageTensor::new(px, RangeTag::Unit).map_err(|_| bad())?);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    #[serde(rename = "L")]
    pub gradient_steps: usize,
    #[serde(rename = "R")]
    pub random_restarts: usize,
    pub work_units: u64,
    pub mean_delay_seconds: f64,
    pub accuracy: f64,
    pub operating_point: bool,
}

/// The `(L, R)` pair the published system was deployed with.
pub const OPERATING_POINT: (usize, usize) = (2250, 20);

/// Accuracy and amortized per-image delay over the Cartesian grid.
pub fn sensitivity_sweep(
    test_set: &LabeledDataset,
    generator: &GeneratorModel,
    classifier: &ClassifierModel,
    l_grid: &[usize],
    r_grid: &[usize],
    base: &ReconstructionConfig,
) -> Result<Vec<SensitivityRow>> {
    if l_grid.is_empty() || r_grid.is_empty() {
        return Err(invalid("sensitivity grids must be non-empty"));
    }
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let images: Vec<&ImageTensor> = test_set.images().collect();
    let labels = test_set.labels();
    let mut rows = Vec::new();
    for &l in l_grid {
        for &r in r_grid {
            let cfg = ReconstructionConfig {
                gradient_steps: l,
                random_restarts: r,
                ..base.clone()
            };
            let (pred, _, elapsed) = argan_predict(&images, generator, classifier, &cfg)?;
            let correct = pred.iter().zip(&labels).filter(|(p, y)| p == y).count();
            rows.push(SensitivityRow {
                gradient_steps: l,
                random_restarts: r,
                work_units: cfg.work_units(),
                mean_delay_seconds: elapsed.as_secs_f64() / images.len() as f64,
                accuracy: correct as f64 / images.len() as f64,
                operating_point: (l, r) == OPERATING_POINT,
            });
            log::info!("sensitivity L={l} R={r}: accuracy {:.4}", rows.last().expect("pushed").accuracy);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GeneratorArch;
    use proptest::prelude::*;

    fn small_generator() -> GeneratorModel {
        GeneratorModel::new(
            GeneratorArch {
                latent_dim: 8,
                base_width: 4,
            },
            3,
        )
        .unwrap()
    }

    /// Least-squares optimum of `‖Az − x‖²` by Gaussian elimination on the
    /// normal equations.
    fn least_squares(a: &[[f64; 3]; 8], x: &[f64; 8]) -> [f64; 3] {
        let mut m = [[0.0f64; 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = (0..8).map(|r| a[r][i] * a[r][j]).sum();
            }
            m[i][3] = (0..8).map(|r| a[r][i] * x[r]).sum();
        }
        for c in 0..3 {
            let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            for r in 0..3 {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for k in c..4 {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
        [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
    }

    #[test]
    fn linear_generator_converges_to_least_squares() {
        let a = [
            [1.0, 0.2, -0.3],
            [0.1, 0.9, 0.4],
            [-0.5, 0.3, 1.1],
            [0.7, -0.2, 0.1],
            [0.3, 0.6, -0.4],
            [-0.1, -0.8, 0.5],
            [0.4, 0.1, 0.2],
            [0.2, -0.3, -0.6],
        ];
        let x = [0.5, -1.0, 0.3, 0.8, -0.2, 0.9, -0.7, 0.1];
        let gen = LinearGenerator {
            a: Tensor::from_vec(&[8, 3], a.iter().flatten().copied().collect()),
        };
        let zs = least_squares(&a, &x);
        let optimum: f64 = (0..8)
            .map(|r| {
                let p: f64 = (0..3).map(|j| a[r][j] * zs[j]).sum();
                (p - x[r]).powi(2)
            })
            .sum();
        let cfg = ReconstructionConfig {
            gradient_steps: 3000,
            random_restarts: 3,
            step_size: 0.01,
            seed: 5,
        };
        let inv = invert(&gen, &[&x], &["toy".into()], &cfg).unwrap().remove(0);
        assert!(inv.residual - optimum < 1e-4, "{} vs {optimum}", inv.residual);
        assert!(inv.residual >= optimum - 1e-12);
        for (z, o) in inv.best_latent.iter().zip(zs) {
            assert!((z - o).abs() < 1e-3);
        }
    }

    #[test]
    fn exact_start_on_generated_image_has_zero_residual() {
        let gen = small_generator();
        let z0: Vec<f64> = initial_latent(9, "probe", 0, 8);
        let x = gen.generate(&Tensor::from_vec(&[1, 8], z0.clone()));
        let other = initial_latent(9, "probe", 1, 8);
        let inv = invert_from(&gen, &[x.data()], &[vec![other, z0.clone()]], 0, 0.01)
            .unwrap()
            .remove(0);
        assert_eq!(inv.residual, 0.0);
        assert_eq!(inv.best_restart, 1);
        assert_eq!(inv.best_latent, z0);
    }

    #[test]
    fn rows_are_independent_of_batch_composition() {
        let gen = small_generator();
        let x = ImageTensor::filled(0.3, RangeTag::Unit).unwrap();
        let y = ImageTensor::filled(0.7, RangeTag::Unit).unwrap();
        let cfg = ReconstructionConfig {
            gradient_steps: 5,
            random_restarts: 3,
            ..Default::default()
        };
        let alone = reconstruct(&x, &gen, &cfg).unwrap();
        let together = reconstruct_batch(&[&y, &x], &gen, &cfg).unwrap();
        assert_eq!(alone, together[1]);
    }

    #[test]
    fn more_restarts_never_increase_the_residual() {
        let gen = small_generator();
        let x = ImageTensor::filled(0.4, RangeTag::Unit).unwrap();
        let mut last = f64::INFINITY;
        for r in 1..=5 {
            let cfg = ReconstructionConfig {
                gradient_steps: 10,
                random_restarts: r,
                ..Default::default()
            };
            let res = reconstruct(&x, &gen, &cfg).unwrap();
            assert!(res.residual <= last);
            let min = res.restart_residuals.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(res.residual, min);
            last = res.residual;
        }
    }

    #[test]
    fn work_units_are_l_times_r() {
        assert_eq!(ReconstructionConfig::default().work_units(), 45_000);
        let gen = small_generator();
        let x = ImageTensor::filled(0.5, RangeTag::Unit).unwrap();
        let cfg = ReconstructionConfig {
            gradient_steps: 3,
            random_restarts: 2,
            ..Default::default()
        };
        assert_eq!(reconstruct(&x, &gen, &cfg).unwrap().work_units, 6);
    }

    #[test]
    fn diverging_restarts_are_discarded() {
        let gen = LinearGenerator {
            a: Tensor::from_vec(&[2, 1], vec![10.0, 10.0]),
        };
        // step 1 on curvature 400 diverges; starts at the optimum stay put
        let starts = vec![vec![vec![3.0], vec![0.1]]];
        let inv = invert_from(&gen, &[&[1.0, 1.0]], &starts, 2000, 1.0).unwrap().remove(0);
        assert_eq!(inv.restart_residuals[0], None);
        assert_eq!(inv.best_restart, 1);
        let all_bad = invert_from(&gen, &[&[1.0, 1.0]], &[vec![vec![3.0]]], 2000, 1.0);
        assert!(matches!(all_bad, Err(Error::Divergence(_))));
    }

    #[test]
    fn cache_reuses_and_persists_reconstructions() {
        let g = small_generator();
        let cfg = ReconstructionConfig {
            gradient_steps: 2,
            random_restarts: 2,
            ..Default::default()
        };
        let a = ImageTensor::filled(0.2, RangeTag::Unit).unwrap();
        let b = ImageTensor::filled(0.7, RangeTag::Unit).unwrap();
        let cache = ReconstructionCache::new();
        let first = cache.reconstruct(&[&a, &b, &a], &g, &cfg).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(first[0], first[2]);
        assert_eq!(first[0], reconstruct(&a, &g, &cfg).unwrap().reconstruction);
        let again = cache.reconstruct(&[&b], &g, &cfg).unwrap();
        assert_eq!(again[0], first[1]);
        assert_eq!(cache.hits(), 2);
        let other = ReconstructionConfig { gradient_steps: 3, ..cfg.clone() };
        cache.reconstruct(&[&a], &g, &other).unwrap();
        assert_eq!(cache.len(), 3);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recon.bin");
        cache.save(&path).unwrap();
        let loaded = ReconstructionCache::new();
        loaded.load(&path).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.reconstruct(&[&a], &g, &cfg).unwrap()[0], first[0]);
        assert_eq!(loaded.hits(), 1);
        std::fs::write(&path, b"junk").unwrap();
        assert!(ReconstructionCache::new().load(&path).is_err());
        assert!(ReconstructionCache::new().load(&dir.path().join("absent")).is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = ReconstructionConfig {
            random_restarts: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ReconstructionConfig {
            step_size: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn inversion_is_deterministic(seed in 0u64..1000, v in 0.0f64..1.0) {
            let gen = small_generator();
            let x = ImageTensor::filled(v, RangeTag::Unit).unwrap();
            let cfg = ReconstructionConfig { gradient_steps: 3, random_restarts: 2, step_size: 0.01, seed };
            let a = reconstruct(&x, &gen, &cfg).unwrap();
            let b = reconstruct(&x, &gen, &cfg).unwrap();
            prop_assert_eq!(a.best_latent, b.best_latent);
            prop_assert!(a.residual >= 0.0);
        }
    }
}
