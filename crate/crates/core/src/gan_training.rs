//! Wasserstein GAN training with a gradient penalty, and selection of the
//! generator whose reconstructions a fixed classifier labels best.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, no_grad, Var};
use crate::dataset::{batch_tensor, ImageTensor, LabeledDataset, RangeTag};
use crate::error::{invalid, Error, Result};
use crate::models::{ClassifierModel, CriticArch, CriticModel, GeneratorArch, GeneratorModel};
use crate::nn::{normal_tensor, Adam, Mode};
use crate::reconstruction::{argan_predict, ReconstructionCache, ReconstructionConfig};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    /// λ
    pub gradient_penalty_weight: f64,
    pub critic_steps_per_generator_step: usize,
    pub batch_size: usize,
    /// One epoch is `⌈N / batch_size⌉` generator updates.
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub checkpoint_interval: usize,
    /// One independent GAN per seed.
    pub seeds: Vec<u64>,
    pub generator: GeneratorArch,
    pub critic: CriticArch,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            gradient_penalty_weight: 10.0,
            critic_steps_per_generator_step: 5,
            batch_size: 64,
            epochs: 30,
            learning_rate: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            checkpoint_interval: 10,
            seeds: vec![0, 1, 2],
            generator: GeneratorArch::default(),
            critic: CriticArch::default(),
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_penalty_weight > 0.0) {
            return Err(invalid("gradient_penalty_weight must be > 0"));
        }
        if self.critic_steps_per_generator_step == 0 {
            return Err(invalid("critic_steps_per_generator_step must be >= 1"));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(invalid("batch_size and checkpoint_interval must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one GAN seed is required"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be > 0"));
        }
        if self.generator.latent_dim == 0 || self.generator.base_width == 0 || self.critic.base_width == 0 {
            return Err(invalid("network dimensions must be positive"));
        }
        Ok(())
    }
}

/// A point on the segment between a real and a generated image.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationSample {
    pub t: f64,
    pub x_hat: Vec<f64>,
}

impl InterpolationSample {
    /// `x̂ = t·fake + (1 − t)·real`, clamped onto the segment's bounding box
    /// so rounding never leaves it.
    pub fn new(real: &[f64], fake: &[f64], t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("interpolation weight {t} outside [0, 1]")));
        }
        if real.len() != fake.len() {
            return Err(invalid("endpoints differ in length"));
        }
        let x_hat = real
            .iter()
            .zip(fake)
            .map(|(&r, &f)| (r + t * (f - r)).clamp(r.min(f), r.max(f)))
            .collect();
        Ok(InterpolationSample { t, x_hat })
    }
}

/// Row-wise interpolation of two `[N, ...]` batches with one `t` per row.
pub fn interpolate_batch(real: &Tensor, fake: &Tensor, t: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(invalid("real and fake batches differ in shape"));
    }
    let n = real.shape()[0];
    if t.len() != n {
        return Err(invalid("need one interpolation weight per sample"));
    }
    let per = real.numel() / n.max(1);
    let mut out = Vec::with_capacity(real.numel());
    for (i, &ti) in t.iter().enumerate() {
        let s = InterpolationSample::new(&real.data()[i * per..(i + 1) * per], &fake.data()[i * per..(i + 1) * per], ti)?;
        out.extend(s.x_hat);
    }
    Ok(Tensor::from_vec(real.shape(), out))
}

pub struct CriticLoss {
    /// Differentiable total, including the penalty.
    pub loss: Var,
    /// `E[D(fake)] − E[D(real)]`
    pub wasserstein: f64,
    /// `λ·E[(‖∇D(x̂)‖₂ − 1)²]`
    pub penalty: f64,
}

/// The critic objective for `score: [N, ...] → [N]`. Gradients of the
/// result flow into whatever leaves `score` closes over, including through
/// the penalty's input gradient.
pub fn critic_loss(
    score: impl Fn(&Var) -> Var,
    real: &Tensor,
    fake: &Tensor,
    t: &[f64],
    lambda: f64,
) -> Result<CriticLoss> {
    if real.shape() != fake.shape() {
        return Err(invalid("real and fake batches must have the same size"));
    }
    let n = real.shape()[0];
    let x_hat = Var::leaf(interpolate_batch(real, fake, t)?);
    let d_hat = score(&x_hat);
    let g = grad(&d_hat.sum(), &[&x_hat], true).remove(0);
    let norms = g.reshape(&[n, real.numel() / n]).square().sum_to(&[n, 1]).sqrt();
    let penalty = norms.add_scalar(-1.0).square().mean().scale(lambda);
    let w = score(&Var::constant(fake.clone()))
        .mean()
        .sub(&score(&Var::constant(real.clone())).mean());
    let loss = w.add(&penalty);
    let (wasserstein, penalty) = (w.item(), penalty.item());
    if !loss.item().is_finite() {
        return Err(Error::Divergence(format!(
            "critic loss is non-finite (wasserstein {wasserstein}, penalty {penalty})"
        )));
    }
    Ok(CriticLoss {
        loss,
        wasserstein,
        penalty,
    })
}

#[derive(Clone, Debug)]
pub struct GanCheckpoint {
    pub seed: u64,
    pub epoch: usize,
    pub generator: GeneratorModel,
    pub critic: CriticModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub critic_loss: f64,
    pub penalty_mean: f64,
}

#[derive(Clone, Debug)]
pub struct GanRun {
    pub seed: u64,
    pub checkpoints: Vec<GanCheckpoint>,
    pub curve: Vec<CurvePoint>,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

/// Endless stream of shuffled minibatches.
struct Batches<'a> {
    data: &'a [&'a ImageTensor],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> Batches<'a> {
    fn new(data: &'a [&'a ImageTensor]) -> Self {
        Batches {
            data,
            order: (0..data.len()).collect(),
            pos: data.len(),
        }
    }

    fn next(&mut self, rng: &mut Rng, size: usize) -> Tensor {
        let mut picked = Vec::with_capacity(size);
        while picked.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            picked.push(self.data[self.order[self.pos]]);
            self.pos += 1;
        }
        batch_tensor(picked)
    }
}

/// Trains one GAN per configured seed on signed-range images.
pub fn train_gan(train_set: &LabeledDataset, config: &GanTrainConfig) -> Result<Vec<GanRun>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("GAN training set is empty".into()));
    }
    let images: Vec<&ImageTensor> = train_set.images().collect();
    if images.iter().any(|x| x.range() != RangeTag::Signed) {
        return Err(invalid("GAN training images must be in signed range"));
    }
    config.seeds.iter().map(|&seed| train_one(&images, config, seed)).collect()
}

fn train_one(images: &[&ImageTensor], config: &GanTrainConfig, seed: u64) -> Result<GanRun> {
    let s = seed.to_le_bytes();
    let mut generator = GeneratorModel::new(config.generator, derive_seed(&[b"generator", &s]))?;
    let mut critic = CriticModel::new(config.critic, derive_seed(&[b"critic", &s]));
    let mut rng = seeded(derive_seed(&[b"gan-train", &s]));
    let mut opt_g = Adam::new(config.learning_rate, config.beta1, config.beta2);
    let mut opt_d = Adam::new(config.learning_rate, config.beta1, config.beta2);
    let mut batches = Batches::new(images);
    let k = config.generator.latent_dim;
    let b = config.batch_size;
    let iters = images.len().div_ceil(b);
    let mut run = GanRun {
        seed,
        checkpoints: Vec::new(),
        curve: Vec::new(),
        diverged: None,
    };
    let snapshot = |g: &GeneratorModel, d: &CriticModel, epoch| GanCheckpoint {
        seed,
        epoch,
        generator: g.clone(),
        critic: d.clone(),
    };
    if config.epochs == 0 {
        run.checkpoints.push(snapshot(&generator, &critic, 0));
        return Ok(run);
    }

    'epochs: for epoch in 1..=config.epochs {
        let (mut loss_sum, mut pen_sum, mut count) = (0.0, 0.0, 0usize);
        for _ in 0..iters {
            for _ in 0..config.critic_steps_per_generator_step {
                let real = batches.next(&mut rng, b);
                let z = normal_tensor(&mut rng, &[b, k], 1.0);
                let (fake, updates) = no_grad(|| {
                    let p = generator.store().bind(false, Mode::Train);
                    let out = generator.forward(&p, &Var::constant(z)).value().clone();
                    (out, p.take_updates())
                });
                generator.store_mut().apply_buffer_updates(updates);
                let t: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
                let p = critic.store().bind(true, Mode::Train);
                let cl = match critic_loss(|x| critic.forward(&p, x), &real, &fake, &t, config.gradient_penalty_weight) {
                    Ok(cl) => cl,
                    Err(e) => {
                        log::warn!("GAN seed {seed} diverged at epoch {epoch}: {e}");
                        run.diverged = Some(e.to_string());
                        break 'epochs;
                    }
                };
                let grads: Vec<Tensor> = grad(&cl.loss, &p.vars(), false).into_iter().map(|g| g.value().clone()).collect();
                drop(p);
                opt_d.step(critic.store_mut(), &grads);
                loss_sum += cl.wasserstein + cl.penalty;
                pen_sum += cl.penalty;
                count += 1;
            }
            let z = Var::constant(normal_tensor(&mut rng, &[b, k], 1.0));
            let p = generator.store().bind(true, Mode::Train);
            let dp = critic.store().bind(false, Mode::Eval);
            let g_loss = critic.forward(&dp, &generator.forward(&p, &z)).mean().neg();
            if !g_loss.item().is_finite() {
                let msg = format!("generator loss is non-finite at epoch {epoch}");
                log::warn!("GAN seed {seed}: {msg}");
                run.diverged = Some(msg);
                break 'epochs;
            }
            let grads: Vec<Tensor> = grad(&g_loss, &p.vars(), false).into_iter().map(|g| g.value().clone()).collect();
            let updates = p.take_updates();
            drop(p);
            opt_g.step(generator.store_mut(), &grads);
            generator.store_mut().apply_buffer_updates(updates);
        }
        let point = CurvePoint {
            epoch,
            critic_loss: loss_sum / count as f64,
            penalty_mean: pen_sum / count as f64,
        };
        log::info!(
            "GAN seed {seed} epoch {epoch}: critic loss {:.4}, penalty {:.4}",
            point.critic_loss,
            point.penalty_mean
        );
        run.curve.push(point);
        if epoch % config.checkpoint_interval == 0 || epoch == config.epochs {
            run.checkpoints.push(snapshot(&generator, &critic, epoch));
        }
    }
    Ok(run)
}

/// Index of the largest score; the earliest index wins ties.
pub fn argmax_earliest(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// Classifier accuracy on each candidate's reconstructions.
    pub scores: Vec<f64>,
}

/// Scores every candidate by the classifier's accuracy on its
/// reconstructions of `selection_set` and picks the best.
pub fn select_best_generator(
    candidates: &[&GeneratorModel],
    classifier: &ClassifierModel,
    selection_set: &LabeledDataset,
    recon: &ReconstructionConfig,
    cache: Option<&ReconstructionCache>,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(invalid("no generator candidates"));
    }
    if selection_set.is_empty() {
        return Err(invalid("selection set is empty"));
    }
    let images: Vec<&ImageTensor> = selection_set.images().collect();
    let labels = selection_set.labels();
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, g) in candidates.iter().enumerate() {
        let pred = match cache {
            Some(c) => {
                let rec = c.reconstruct(&images, g, recon)?;
                classifier.classify(&rec.iter().collect::<Vec<_>>())
            }
            None => argan_predict(&images, g, classifier, recon)?.0,
        };
        let acc = pred.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
        log::info!("generator candidate {i}: accuracy on reconstructions {acc:.4}");
        scores.push(acc);
    }
    let index = argmax_earliest(&scores).expect("non-empty");
    Ok(Selection { index, scores })
}
