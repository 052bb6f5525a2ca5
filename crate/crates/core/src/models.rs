//! The classifier, generator and critic networks, and versioned checkpoints.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autograd::{no_grad, Var};
use crate::dataset::{batch_tensor, ClassLabel, ImageTensor, RangeTag, CHANNELS};
use crate::error::{invalid, Error, Result};
use crate::nn::{
    BatchNorm2d, Bound, Conv2d, ConvTranspose2d, Init, LayerNorm2d, Linear, Mode, ParamStore,
};
use crate::rng::{self, sha256_hex};
use crate::tensor::{ConvGeom, Tensor};

/// Anything that maps a batch of inputs to `[N, K]` logits differentiably.
///
/// Attacks are written against this trait so closed-form toy models can
/// stand in for the network in tests.
pub trait Classifier {
    /// Logits for a batch, with parameters held constant.
    fn logits(&self, x: &Var) -> Var;

    fn num_classes(&self) -> usize;

    fn predict_logits(&self, x: &Tensor) -> Tensor {
        no_grad(|| self.logits(&Var::constant(x.clone())).value().clone())
    }

    fn predict(&self, x: &Tensor) -> Vec<usize> {
        self.predict_logits(x).argmax_rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Linear,
    BatchNorm,
    LayerNorm,
}

// ---------------------------------------------------------------------------
// Classifier

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierArch {
    /// Channels of the stem; later stages use 2×, 4× and 8× this.
    pub base_width: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch { base_width: 64 }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new(store: &mut ParamStore, name: &str, rng: &mut rng::Rng, cin: usize, cout: usize) -> Self {
        ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), rng, Init::FanIn, cin, cout, 3, ConvGeom::new(1, 1), false),
            bn: BatchNorm2d::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward(&self, p: &Bound, x: &Var) -> Var {
        self.bn.forward(p, &self.conv.forward(p, x)).relu()
    }
}

/// Nine-layer residual classifier over unit-range 3×32×32 images.
///
/// stem → conv+pool → residual block → conv+pool → conv+pool → residual
/// block → global average pool → linear. Eight convolutions, one linear.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    pub arch: ClassifierArch,
    pub seed: u64,
    store: ParamStore,
    stem: ConvBn,
    layer1: ConvBn,
    res1: [ConvBn; 2],
    layer2: ConvBn,
    layer3: ConvBn,
    res2: [ConvBn; 2],
    fc: Linear,
}

pub const CLASSIFIER_ID: &str = "resnet9-v1";
pub const GENERATOR_ID: &str = "dcgan-generator-v1";
pub const CRITIC_ID: &str = "wgan-critic-v1";
pub const N_CLASSES: usize = 2;

pub fn build_classifier(seed: u64) -> ClassifierModel {
    ClassifierModel::new(ClassifierArch::default(), seed)
}

impl ClassifierModel {
    pub fn new(arch: ClassifierArch, seed: u64) -> Self {
        let c = arch.base_width.max(1);
        let mut rng = rng::seeded(seed);
        let mut s = ParamStore::new();
        let stem = ConvBn::new(&mut s, "stem", &mut rng, CHANNELS, c);
        let layer1 = ConvBn::new(&mut s, "layer1", &mut rng, c, 2 * c);
        let res1 = [
            ConvBn::new(&mut s, "res1.0", &mut rng, 2 * c, 2 * c),
            ConvBn::new(&mut s, "res1.1", &mut rng, 2 * c, 2 * c),
        ];
        let layer2 = ConvBn::new(&mut s, "layer2", &mut rng, 2 * c, 4 * c);
        let layer3 = ConvBn::new(&mut s, "layer3", &mut rng, 4 * c, 8 * c);
        let res2 = [
            ConvBn::new(&mut s, "res2.0", &mut rng, 8 * c, 8 * c),
            ConvBn::new(&mut s, "res2.1", &mut rng, 8 * c, 8 * c),
        ];
        let fc = Linear::new(&mut s, "fc", &mut rng, Init::FanIn, 8 * c, N_CLASSES);
        ClassifierModel {
            arch,
            seed,
            store: s,
            stem,
            layer1,
            res1,
            layer2,
            layer3,
            res2,
            fc,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let h = self.stem.forward(p, x);
        let h = self.layer1.forward(p, &h).max_pool2d(2);
        let r = self.res1[1].forward(p, &self.res1[0].forward(p, &h));
        let h = h.add(&r);
        let h = self.layer2.forward(p, &h).max_pool2d(2);
        let h = self.layer3.forward(p, &h).max_pool2d(2);
        let r = self.res2[1].forward(p, &self.res2[0].forward(p, &h));
        let h = h.add(&r);
        let [n, ch] = [h.shape()[0], h.shape()[1]];
        let pooled = h.mean_to(&[n, ch, 1, 1]).reshape(&[n, ch]);
        self.fc.forward(p, &pooled)
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        let mut v = Vec::new();
        for _ in 0..8 {
            v.push(LayerKind::Conv);
            v.push(LayerKind::BatchNorm);
        }
        v.push(LayerKind::Linear);
        v
    }

    /// Hash of every parameter and buffer; identifies a classifier in caches.
    pub fn checksum(&self) -> String {
        store_checksum(&self.store)
    }

    /// Predicted classes for unit-range images, in batches.
    pub fn classify(&self, images: &[&ImageTensor]) -> Vec<ClassLabel> {
        images
            .chunks(64)
            .flat_map(|chunk| {
                debug_assert!(chunk.iter().all(|x| x.range() == RangeTag::Unit));
                self.predict(&batch_tensor(chunk.iter().copied()))
            })
            .map(ClassLabel::from_index)
            .collect()
    }
}

impl Classifier for ClassifierModel {
    fn logits(&self, x: &Var) -> Var {
        let p = self.store.bind(false, Mode::Eval);
        self.forward(&p, x)
    }

    fn num_classes(&self) -> usize {
        N_CLASSES
    }
}

/// Affine classifier `logits = x·Wᵀ + b` over flattened inputs.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    /// `[K, n]`
    pub weight: Tensor,
    /// `[1, K]`
    pub bias: Tensor,
}

impl LinearClassifier {
    pub fn new(weight: Tensor, bias: Tensor) -> Self {
        assert_eq!(weight.ndim(), 2);
        assert_eq!(bias.shape(), &[1, weight.shape()[0]]);
        LinearClassifier { weight, bias }
    }
}

impl Classifier for LinearClassifier {
    fn logits(&self, x: &Var) -> Var {
        let n = x.shape()[0];
        let flat = x.reshape(&[n, self.weight.shape()[1]]);
        flat.matmul(&Var::constant(self.weight.clone()), false, true)
            .add(&Var::constant(self.bias.clone()))
    }

    fn num_classes(&self) -> usize {
        self.weight.shape()[0]
    }
}

// ---------------------------------------------------------------------------
// Generator

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorArch {
    pub latent_dim: usize,
    /// Channels of the last hidden layer; earlier layers use 2× and 4×.
    pub base_width: usize,
}

impl Default for GeneratorArch {
    fn default() -> Self {
        GeneratorArch {
            latent_dim: 100,
            base_width: 64,
        }
    }
}

/// Transposed-convolution generator: latent `[N, k]` → signed-range
/// `[N, 3, 32, 32]` through 4×4, 8×8 and 16×16 hidden maps.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub arch: GeneratorArch,
    pub seed: u64,
    store: ParamStore,
    ups: [ConvTranspose2d; 4],
    bns: [BatchNorm2d; 3],
}

pub fn build_generator(latent_dim: i64, seed: u64) -> Result<GeneratorModel> {
    if latent_dim <= 0 {
        return Err(invalid(format!("latent dimension must be >= 1, got {latent_dim}")));
    }
    GeneratorModel::new(
        GeneratorArch {
            latent_dim: latent_dim as usize,
            ..GeneratorArch::default()
        },
        seed,
    )
}

impl GeneratorModel {
    pub fn new(arch: GeneratorArch, seed: u64) -> Result<Self> {
        if arch.latent_dim == 0 || arch.base_width == 0 {
            return Err(invalid("generator dimensions must be positive"));
        }
        let g = arch.base_width;
        let mut rng = rng::seeded(seed);
        let mut s = ParamStore::new();
        let init = Init::Normal(0.02);
        let widths = [arch.latent_dim, 4 * g, 2 * g, g, CHANNELS];
        let ups = [0, 1, 2, 3].map(|i| {
            let geom = if i == 0 { ConvGeom::new(1, 0) } else { ConvGeom::new(2, 1) };
            ConvTranspose2d::new(&mut s, &format!("up{i}"), &mut rng, init, widths[i], widths[i + 1], 4, geom, i == 3)
        });
        let bns = [0, 1, 2].map(|i| BatchNorm2d::new(&mut s, &format!("bn{i}"), widths[i + 1]));
        Ok(GeneratorModel {
            arch,
            seed,
            store: s,
            ups,
            bns,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward(&self, p: &Bound, z: &Var) -> Var {
        let n = z.shape()[0];
        let mut h = z.reshape(&[n, self.arch.latent_dim, 1, 1]);
        for i in 0..3 {
            h = self.bns[i].forward(p, &self.ups[i].forward(p, &h)).relu();
        }
        self.ups[3].forward(p, &h).tanh()
    }

    /// `G(z)` with frozen parameters and running normalization statistics.
    pub fn generate(&self, z: &Tensor) -> Tensor {
        no_grad(|| {
            let p = self.store.bind(false, Mode::Eval);
            self.forward(&p, &Var::constant(z.clone())).value().clone()
        })
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        vec![
            LayerKind::ConvTranspose,
            LayerKind::BatchNorm,
            LayerKind::ConvTranspose,
            LayerKind::BatchNorm,
            LayerKind::ConvTranspose,
            LayerKind::BatchNorm,
            LayerKind::ConvTranspose,
        ]
    }

    /// Hash of every parameter and buffer; identifies a generator in caches.
    pub fn checksum(&self) -> String {
        store_checksum(&self.store)
    }
}

// ---------------------------------------------------------------------------
// Critic

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticArch {
    pub base_width: usize,
}

impl Default for CriticArch {
    fn default() -> Self {
        CriticArch { base_width: 64 }
    }
}

/// Strided-convolution critic producing one unbounded score per image.
/// Hidden layers use per-sample layer normalization, never batch norm.
#[derive(Clone, Debug)]
pub struct CriticModel {
    pub arch: CriticArch,
    pub seed: u64,
    store: ParamStore,
    convs: [Conv2d; 4],
    norms: [LayerNorm2d; 2],
}

pub fn build_critic(seed: u64) -> CriticModel {
    CriticModel::new(CriticArch::default(), seed)
}

impl CriticModel {
    pub fn new(arch: CriticArch, seed: u64) -> Self {
        let d = arch.base_width.max(1);
        let mut rng = rng::seeded(seed);
        let mut s = ParamStore::new();
        let init = Init::Normal(0.02);
        let widths = [CHANNELS, d, 2 * d, 4 * d, 1];
        let convs = [0, 1, 2, 3].map(|i| {
            let geom = if i == 3 { ConvGeom::new(1, 0) } else { ConvGeom::new(2, 1) };
            Conv2d::new(&mut s, &format!("conv{i}"), &mut rng, init, widths[i], widths[i + 1], 4, geom, true)
        });
        let norms = [0, 1].map(|i| LayerNorm2d::new(&mut s, &format!("ln{i}"), widths[i + 2]));
        CriticModel {
            arch,
            seed,
            store: s,
            convs,
            norms,
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Scores `[N]` for signed-range images `[N, 3, 32, 32]`.
    pub fn forward(&self, p: &Bound, x: &Var) -> Var {
        let n = x.shape()[0];
        let mut h = self.convs[0].forward(p, x).leaky_relu(0.2);
        for i in 0..2 {
            h = self.norms[i].forward(p, &self.convs[i + 1].forward(p, &h)).leaky_relu(0.2);
        }
        self.convs[3].forward(p, &h).reshape(&[n])
    }

    pub fn score(&self, x: &Tensor) -> Tensor {
        no_grad(|| {
            let p = self.store.bind(false, Mode::Eval);
            self.forward(&p, &Var::constant(x.clone())).value().clone()
        })
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        vec![
            LayerKind::Conv,
            LayerKind::Conv,
            LayerKind::LayerNorm,
            LayerKind::Conv,
            LayerKind::LayerNorm,
            LayerKind::Conv,
        ]
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ARGANCKP";

/// Training context stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

/// The JSON sidecar written next to each parameter blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture_id: String,
    pub format_version: u32,
    pub seed: u64,
    pub epoch: usize,
    pub sha256: String,
    pub architecture: Value,
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

/// A network that can be written to and rebuilt from a checkpoint.
pub trait Checkpointable: Sized {
    const ARCHITECTURE_ID: &'static str;
    fn architecture(&self) -> Value;
    fn rebuild(architecture: &Value, seed: u64) -> Result<Self>;
    fn seed(&self) -> u64;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

macro_rules! checkpointable {
    ($ty:ty, $arch:ty, $id:expr, $build:expr) => {
        impl Checkpointable for $ty {
            const ARCHITECTURE_ID: &'static str = $id;

            fn architecture(&self) -> Value {
                serde_json::to_value(self.arch).expect("architecture serializes")
            }

            fn rebuild(architecture: &Value, seed: u64) -> Result<Self> {
                let arch: $arch = serde_json::from_value(architecture.clone())?;
                $build(arch, seed)
            }

            fn seed(&self) -> u64 {
                self.seed
            }

            fn params(&self) -> &ParamStore {
                &self.store
            }

            fn params_mut(&mut self) -> &mut ParamStore {
                &mut self.store
            }
        }
    };
}

checkpointable!(ClassifierModel, ClassifierArch, CLASSIFIER_ID, |a, s| Ok(
    ClassifierModel::new(a, s)
));
checkpointable!(GeneratorModel, GeneratorArch, GENERATOR_ID, GeneratorModel::new);
checkpointable!(CriticModel, CriticArch, CRITIC_ID, |a, s| Ok(CriticModel::new(a, s)));

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn encode_store(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let params: Vec<_> = store.params().collect();
    let buffers: Vec<_> = store.buffers().collect();
    for group in [params, buffers] {
        out.extend_from_slice(&(group.len() as u32).to_le_bytes());
        for (name, t) in group {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn decode_store(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut r = Cursor::new(bytes);
    let mut take = |n: usize| -> std::result::Result<Vec<u8>, String> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|_| "unexpected end of blob".to_string())?;
        Ok(buf)
    };
    if take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let u32_of = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_of(take(4)?);
    if version != FORMAT_VERSION {
        return Err(format!("blob format version {version}"));
    }
    let mut store = ParamStore::new();
    for group in 0..2 {
        let count = u32_of(take(4)?) as usize;
        for _ in 0..count {
            let len = u32_of(take(4)?) as usize;
            if len > 4096 {
                return Err("implausible name length".into());
            }
            let name = String::from_utf8(take(len)?).map_err(|_| "name is not UTF-8")?;
            let ndim = u32_of(take(4)?) as usize;
            if ndim > 8 {
                return Err("implausible rank".into());
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
            }
            let numel: usize = shape.iter().product();
            if numel.saturating_mul(8) > bytes.len() {
                return Err("tensor larger than blob".into());
            }
            let raw = take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_vec(&shape, data);
            if group == 0 {
                store.add_param(name, t);
            } else {
                store.add_buffer(name, t);
            }
        }
    }
    Ok(store)
}

fn store_checksum(store: &ParamStore) -> String {
    sha256_hex(&encode_store(store))
}

/// Writes `path` (parameter blob) and `path.json` (sidecar).
pub fn save_checkpoint<M: Checkpointable>(model: &M, training: &TrainingMeta, path: &Path) -> Result<CheckpointMeta> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let blob = encode_store(model.params());
    let meta = CheckpointMeta {
        architecture_id: M::ARCHITECTURE_ID.to_string(),
        format_version: FORMAT_VERSION,
        seed: model.seed(),
        epoch: training.epoch,
        sha256: sha256_hex(&blob),
        architecture: model.architecture(),
        loss_curve: training.loss_curve.clone(),
    };
    fs::write(path, &blob)?;
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    if !side.is_file() {
        return Err(Error::MissingArtifact(side.display().to_string()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&side)?).map_err(|e| Error::CorruptCheckpoint {
        path: side.clone(),
        message: e.to_string(),
    })?;
    Ok(meta)
}

pub fn load_checkpoint<M: Checkpointable>(path: &Path) -> Result<(M, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint {
            path: path.to_path_buf(),
            found: meta.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let corrupt = |message: String| Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    if meta.architecture_id != M::ARCHITECTURE_ID {
        return Err(invalid(format!(
            "checkpoint holds {}, expected {}",
            meta.architecture_id,
            M::ARCHITECTURE_ID
        )));
    }
    let blob = fs::read(path)?;
    let digest = sha256_hex(&blob);
    if digest != meta.sha256 {
        return Err(corrupt(format!("sha256 {digest} does not match sidecar {}", meta.sha256)));
    }
    let stored = decode_store(&blob).map_err(corrupt)?;
    let mut model = M::rebuild(&meta.architecture, meta.seed)?;
    model.params_mut().load_from(&stored).map_err(corrupt)?;
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad;
    use crate::nn::normal_tensor;
    use rand::SeedableRng;

    fn small_classifier(seed: u64) -> ClassifierModel {
        ClassifierModel::new(ClassifierArch { base_width: 4 }, seed)
    }

    fn probe(n: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        normal_tensor(&mut rng, &[n, 3, 32, 32], 0.3).map(|v| (v + 0.5).clamp(0.0, 1.0))
    }

    #[test]
    fn classifier_has_eight_convs_and_one_linear() {
        let m = build_classifier(0);
        let layers = m.layers();
        assert_eq!(layers.iter().filter(|l| **l == LayerKind::Conv).count(), 8);
        assert_eq!(layers.iter().filter(|l| **l == LayerKind::Linear).count(), 1);
        let convs = m.store().params().filter(|(n, _)| n.ends_with("conv.weight")).count();
        assert_eq!(convs, 8);
    }

    #[test]
    fn classifier_logits_are_finite_and_deterministic() {
        let a = small_classifier(3);
        let b = small_classifier(3);
        assert_eq!(a.store(), b.store());
        let zero = Tensor::zeros(&[1, 3, 32, 32]);
        let logits = a.logits(&Var::constant(zero)).value().clone();
        assert_eq!(logits.shape(), &[1, 2]);
        assert!(logits.is_finite());
        let p = crate::nn::softmax_rows(&logits);
        assert!((p.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn classifier_input_gradient_matches_finite_differences() {
        let m = small_classifier(5);
        let x0 = probe(2, 11);
        let labels = [0usize, 1];
        let loss = |x: &Var| crate::nn::cross_entropy(&m.logits(x), &labels);
        let x = Var::leaf(x0.clone());
        let g = grad(&loss(&x), &[&x], false).remove(0).value().clone();
        let h = 1e-5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let i = rand::Rng::random_range(&mut rng, 0..x0.numel());
            let shift = |d: f64| {
                let mut v = x0.to_vec();
                v[i] += d;
                loss(&Var::constant(Tensor::from_vec(x0.shape(), v))).item()
            };
            let num = (shift(h) - shift(-h)) / (2.0 * h);
            let ana = g.data()[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-8);
            assert!(rel < 1e-3, "pixel {i}: numeric {num} analytic {ana}");
        }
    }

    #[test]
    fn generator_contract() {
        assert!(build_generator(0, 1).is_err());
        assert!(build_generator(-2, 1).is_err());
        let g = GeneratorModel::new(GeneratorArch { latent_dim: 16, base_width: 8 }, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let z = normal_tensor(&mut rng, &[4, 16], 1.0);
        let x = g.generate(&z);
        assert_eq!(x.shape(), &[4, 3, 32, 32]);
        assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let g2 = GeneratorModel::new(g.arch, 1).unwrap();
        assert_eq!(g2.generate(&z), x);
    }

    #[test]
    fn generator_is_continuous_in_latent() {
        let g = GeneratorModel::new(GeneratorArch { latent_dim: 16, base_width: 8 }, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let z = normal_tensor(&mut rng, &[1, 16], 1.0);
        let dz = normal_tensor(&mut rng, &[1, 16], 1e-4);
        let z2 = z.zip_with(&dz, |a, b| a + b);
        let d_out = g.generate(&z).zip_with(&g.generate(&z2), |a, b| a - b).l2_norm();
        // loose Lipschitz bound for a freshly initialized network
        assert!(d_out <= 50.0 * dz.l2_norm(), "{d_out} vs {}", dz.l2_norm());
    }

    #[test]
    fn critic_contract() {
        let c = build_critic(0);
        assert_eq!(c.layers().iter().filter(|l| **l == LayerKind::BatchNorm).count(), 0);
        assert!(c.store().params().all(|(n, _)| !n.contains("bn")));
        let small = CriticModel::new(CriticArch { base_width: 4 }, 0);
        let s = small.score(&probe(3, 1).map(|v| 2.0 * v - 1.0));
        assert_eq!(s.shape(), &[3]);
        assert!(s.is_finite());
    }

    #[test]
    fn critic_input_gradient_matches_finite_differences() {
        let c = CriticModel::new(CriticArch { base_width: 4 }, 8);
        let x0 = probe(1, 4).map(|v| 2.0 * v - 1.0);
        let score = |x: &Var| {
            let p = c.store().bind(false, Mode::Eval);
            c.forward(&p, x).sum()
        };
        let x = Var::leaf(x0.clone());
        let g = grad(&score(&x), &[&x], false).remove(0).value().clone();
        let h = 1e-3;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let i = rand::Rng::random_range(&mut rng, 0..x0.numel());
            let shift = |d: f64| {
                let mut v = x0.to_vec();
                v[i] += d;
                score(&Var::constant(Tensor::from_vec(x0.shape(), v))).item()
            };
            let num = (shift(h) - shift(-h)) / (2.0 * h);
            let ana = g.data()[i];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            assert!(rel < 1e-3, "pixel {i}: numeric {num} analytic {ana}");
        }
    }

    #[test]
    fn checkpoint_round_trip_and_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.bin");
        let m = small_classifier(7);
        save_checkpoint(&m, &TrainingMeta { epoch: 3, loss_curve: vec![0.5, 0.4] }, &path).unwrap();
        let (back, meta): (ClassifierModel, _) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.epoch, 3);
        assert_eq!(meta.architecture_id, "resnet9-v1");
        let x = probe(4, 2);
        assert_eq!(
            m.logits(&Var::constant(x.clone())).value().data(),
            back.logits(&Var::constant(x)).value().data()
        );

        // wrong model type
        assert!(load_checkpoint::<CriticModel>(&path).is_err());

        // bumped version in the sidecar
        let mut bumped = meta.clone();
        bumped.format_version += 1;
        fs::write(sidecar_path(&path), serde_json::to_vec(&bumped).unwrap()).unwrap();
        assert!(matches!(
            load_checkpoint::<ClassifierModel>(&path),
            Err(Error::IncompatibleCheckpoint { .. })
        ));
        fs::write(sidecar_path(&path), serde_json::to_vec(&meta).unwrap()).unwrap();

        // truncated blob
        let blob = fs::read(&path).unwrap();
        fs::write(&path, &blob[..blob.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint::<ClassifierModel>(&path),
            Err(Error::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn truncated_blob_never_decodes() {
        let blob = encode_store(small_classifier(1).store());
        for cut in [0, 7, 12, blob.len() / 3, blob.len() - 1] {
            assert!(decode_store(&blob[..cut]).is_err());
        }
        assert!(decode_store(&blob).is_ok());
    }
}
