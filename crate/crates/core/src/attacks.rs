//! Untargeted evasion attacks against any [`Classifier`].
//!
//! Inputs are `[N, ...]` batches in `[0, 1]`. Every attack treats rows
//! independently, so a batch gives the same result as its rows one by one.

use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::dataset::{batch_tensor, unbatch, ImageTensor, LabeledDataset, Provenance, RangeTag};
use crate::error::{invalid, Result};
use crate::models::Classifier;
use crate::nn::{cross_entropy, Adam, ParamStore};
use crate::tensor::Tensor;

/// Rows per attack batch.
const CHUNK_ROWS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackFamily {
    Fgsm,
    Deepfool,
    CwL2,
    PgdL2,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 4] = [AttackFamily::Fgsm, AttackFamily::Deepfool, AttackFamily::CwL2, AttackFamily::PgdL2];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "FGSM",
            AttackFamily::Deepfool => "DeepFool",
            AttackFamily::CwL2 => "C&W",
            AttackFamily::PgdL2 => "PGD",
        }
    }

    /// Whether the family has a perturbation budget to sweep.
    pub fn has_epsilon(self) -> bool {
        self != AttackFamily::CwL2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatModel {
    WhiteBox,
    BlackBox,
}

impl ThreatModel {
    pub fn name(self) -> &'static str {
        match self {
            ThreatModel::WhiteBox => "white_box",
            ThreatModel::BlackBox => "black_box",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// FGSM/PGD: per-pixel budget. DeepFool: ℓ2 cap of `ε·√n`. Unused by C&W.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    /// η
    #[serde(default = "default_overshoot")]
    pub overshoot: f64,
    /// c
    #[serde(default = "default_confidence_weight")]
    pub confidence_weight: f64,
    /// C&W learning rate; PGD uses `ε/4` when unset.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "default_threat")]
    pub threat_model: ThreatModel,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_overshoot() -> f64 {
    0.02
}
fn default_confidence_weight() -> f64 {
    1.0
}
fn default_threat() -> ThreatModel {
    ThreatModel::WhiteBox
}

impl AttackConfig {
    /// The evaluation settings for `family`.
    pub fn new(family: AttackFamily) -> Self {
        AttackConfig {
            family,
            epsilon: default_epsilon(),
            max_iterations: None,
            overshoot: default_overshoot(),
            confidence_weight: default_confidence_weight(),
            step_size: None,
            threat_model: default_threat(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_threat(mut self, threat: ThreatModel) -> Self {
        self.threat_model = threat;
        self
    }

    pub fn iterations(&self) -> usize {
        self.max_iterations.unwrap_or(match self.family {
            AttackFamily::Fgsm => 1,
            AttackFamily::Deepfool => 50,
            AttackFamily::CwL2 => 10,
            AttackFamily::PgdL2 => 100,
        })
    }

    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(match self.family {
            AttackFamily::PgdL2 => self.epsilon / 4.0,
            _ => 0.01,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(0.0..0.5).contains(&self.overshoot) {
            return Err(invalid(format!("overshoot must lie in [0, 0.5), got {}", self.overshoot)));
        }
        if !(self.confidence_weight > 0.0) {
            return Err(invalid("confidence_weight must be > 0"));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0) {
                return Err(invalid("step_size must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// `x̃ = x + δ`, inside `[0, 1]`.
    pub adversarial: Vec<f64>,
    /// δ
    pub perturbation: Vec<f64>,
    /// The classifier's label for `x̃` differs from the reference label.
    pub success: bool,
    pub iterations_used: usize,
    pub perturbation_l2: f64,
    pub perturbation_linf: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + step`, moved toward `x` by whole ulps until `|result − x| ≤ |step|`.
fn bounded_add(x: f64, step: f64) -> f64 {
    let mut a = x + step;
    while (a - x).abs() > step.abs() {
        a = if a > x { a.next_down() } else { a.next_up() };
    }
    a
}

fn finish(x: &Tensor, adv: Vec<f64>, reference: &[usize], model: &dyn Classifier, iterations: &[usize]) -> Vec<AttackResult> {
    let n = x.shape()[0];
    let per = x.numel() / n.max(1);
    let adv = Tensor::from_vec(x.shape(), adv);
    let pred = model.predict(&adv);
    (0..n)
        .map(|i| {
            let a = adv.data()[i * per..(i + 1) * per].to_vec();
            let d: Vec<f64> = a.iter().zip(&x.data()[i * per..(i + 1) * per]).map(|(a, b)| a - b).collect();
            AttackResult {
                perturbation_l2: d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                perturbation_linf: d.iter().fold(0.0, |m, v| m.max(v.abs())),
                adversarial: a,
                perturbation: d,
                success: pred[i] != reference[i],
                iterations_used: iterations[i],
            }
        })
        .collect()
}

/// `∇ₓ` of the summed cross-entropy, so each row gets its own unscaled gradient.
fn loss_gradient(model: &dyn Classifier, x: &Tensor, labels: &[usize]) -> Tensor {
    let xv = Var::leaf(x.clone());
    let loss = cross_entropy(&model.logits(&xv), labels).scale(labels.len() as f64);
    grad(&loss, &[&xv], false).remove(0).value().clone()
}

/// One signed-gradient step of size ε, clipped to the pixel box.
pub fn fgsm(x: &Tensor, labels: &[usize], model: &dyn Classifier, epsilon: f64) -> Vec<AttackResult> {
    let g = loss_gradient(model, x, labels);
    let adv = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xi, &gi)| bounded_add(xi, epsilon * sign(gi)).clamp(0.0, 1.0))
        .collect();
    finish(x, adv, labels, model, &vec![1; labels.len()])
}

/// Signed-gradient ascent with step `alpha`, projecting after every step
/// onto the ℓ2 ball of radius `ε·√n` and then onto the pixel box.
pub fn pgd_l2(
    x: &Tensor,
    labels: &[usize],
    model: &dyn Classifier,
    epsilon: f64,
    alpha: f64,
    max_iterations: usize,
) -> Vec<AttackResult> {
    let n = labels.len();
    let per = x.numel() / n.max(1);
    let radius = epsilon * (per as f64).sqrt();
    let mut adv = x.to_vec();
    for _ in 0..max_iterations {
        let g = loss_gradient(model, &Tensor::from_vec(x.shape(), adv.clone()), labels);
        for i in 0..n {
            let rows = i * per..(i + 1) * per;
            let x0 = &x.data()[rows.clone()];
            let mut d: Vec<f64> = adv[rows.clone()]
                .iter()
                .zip(x0)
                .zip(&g.data()[rows.clone()])
                .map(|((a, b), gi)| a - b + alpha * sign(*gi))
                .collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                d.iter_mut().for_each(|v| *v *= s);
            }
            for ((a, b), di) in adv[rows].iter_mut().zip(x0).zip(d) {
                *a = (b + di).clamp(0.0, 1.0);
            }
        }
    }
    finish(x, adv, labels, model, &vec![max_iterations; n])
}

/// Input gradients of every logit: `out[k]` is `∂ logit_k / ∂x` for all rows.
fn logit_gradients(model: &dyn Classifier, x: &Tensor) -> (Tensor, Vec<Tensor>) {
    let xv = Var::leaf(x.clone());
    let logits = model.logits(&xv);
    let n = x.shape()[0];
    let k = logits.shape()[1];
    let grads = (0..k)
        .map(|c| {
            let mut mask = vec![0.0; n * k];
            (0..n).for_each(|i| mask[i * k + c] = 1.0);
            let picked = logits.mul_const(&Tensor::from_vec(&[n, k], mask)).sum();
            grad(&picked, &[&xv], false).remove(0).value().clone()
        })
        .collect();
    (logits.value().clone(), grads)
}

/// Multiclass DeepFool. The reference label of each row is the model's
/// clean prediction. The accumulated step is scaled by `1 + overshoot`,
/// capped at `ε_cap·√n` in ℓ2 and clipped to the pixel box.
pub fn deepfool(
    x: &Tensor,
    model: &dyn Classifier,
    overshoot: f64,
    max_iterations: usize,
    epsilon_cap: f64,
) -> Vec<AttackResult> {
    let n = x.shape()[0];
    let per = x.numel() / n.max(1);
    let reference = model.predict(x);
    let mut r_tot = vec![0.0; x.numel()];
    let mut current = x.to_vec();
    let mut iterations = vec![0usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    for _ in 0..max_iterations {
        if active.is_empty() {
            break;
        }
        let mut xs = Vec::with_capacity(active.len() * per);
        for &i in &active {
            xs.extend_from_slice(&current[i * per..(i + 1) * per]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = active.len();
        let (logits, grads) = logit_gradients(model, &Tensor::from_vec(&shape, xs));
        let k = logits.shape()[1];
        let mut still = Vec::new();
        for (a, &i) in active.iter().enumerate() {
            let row = &logits.data()[a * k..(a + 1) * k];
            let argmax = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            if argmax != reference[i] {
                continue;
            }
            let k0 = reference[i];
            let g0 = &grads[k0].data()[a * per..(a + 1) * per];
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            for c in (0..k).filter(|&c| c != k0) {
                let w: Vec<f64> = grads[c].data()[a * per..(a + 1) * per].iter().zip(g0).map(|(u, v)| u - v).collect();
                let f = row[c] - row[k0];
                let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if wn == 0.0 {
                    continue;
                }
                let dist = f.abs() / wn;
                if best.as_ref().is_none_or(|b| dist < b.0) {
                    best = Some((dist, f.abs() / (wn * wn), w));
                }
            }
            let Some((_, scale, w)) = best else { continue };
            iterations[i] += 1;
            let rows = i * per..(i + 1) * per;
            for (r, wi) in r_tot[rows.clone()].iter_mut().zip(&w) {
                *r += scale * wi;
            }
            for ((c, x0), r) in current[rows.clone()].iter_mut().zip(&x.data()[rows.clone()]).zip(&r_tot[rows]) {
                *c = x0 + (1.0 + overshoot) * r;
            }
            still.push(i);
        }
        active = still;
    }
    let cap = epsilon_cap * (per as f64).sqrt();
    let mut adv = x.to_vec();
    for i in 0..n {
        let rows = i * per..(i + 1) * per;
        let mut d: Vec<f64> = current[rows.clone()].iter().zip(&x.data()[rows.clone()]).map(|(c, x0)| c - x0).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > cap {
            let s = cap / norm;
            d.iter_mut().for_each(|v| *v *= s);
        }
        for ((a, x0), di) in adv[rows.clone()].iter_mut().zip(&x.data()[rows]).zip(d) {
            *a = (x0 + di).clamp(0.0, 1.0);
        }
    }
    finish(x, adv, &reference, model, &iterations)
}

/// Margin term `max(Z_y − max_{j≠y} Z_j, 0)` per row.
fn cw_margin(logits: &Tensor, labels: &[usize]) -> Vec<f64> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| {
            let other = (0..k).filter(|&j| j != y).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            (row[y] - other).max(0.0)
        })
        .collect()
}

/// The C&W objective `‖δ‖₂ + c·max(Z_y − max_{j≠y} Z_j, 0)` per row.
pub fn cw_objective(model: &dyn Classifier, x: &Tensor, adv: &Tensor, labels: &[usize], c: f64) -> Vec<f64> {
    let n = labels.len();
    let per = x.numel() / n.max(1);
    let margins = cw_margin(&model.predict_logits(adv), labels);
    (0..n)
        .map(|i| {
            let d2: f64 = (i * per..(i + 1) * per).map(|j| (adv.data()[j] - x.data()[j]).powi(2)).sum();
            d2.sqrt() + c * margins[i]
        })
        .collect()
}

/// ℓ2 Carlini–Wagner with a fixed trade-off constant. The box constraint is
/// removed by `x̃ = (tanh(w) + 1)/2`, and `w` is optimized with Adam. Each
/// row returns its smallest-norm misclassified iterate, or `x` itself when
/// no iterate was misclassified.
pub fn cw_l2(
    x: &Tensor,
    labels: &[usize],
    model: &dyn Classifier,
    c: f64,
    step_size: f64,
    max_iterations: usize,
) -> Vec<AttackResult> {
    const EDGE: f64 = 1e-9;
    let n = labels.len();
    let shape = x.shape().to_vec();
    let k = model.num_classes();
    let per = x.numel() / n.max(1);
    let w0: Vec<f64> = x.data().iter().map(|&v| (2.0 * v.clamp(EDGE, 1.0 - EDGE) - 1.0).atanh()).collect();
    let mut store = ParamStore::new();
    store.add_param("w", Tensor::from_vec(&shape, w0));
    let mut opt = Adam::new(step_size, 0.9, 0.999);
    let xc = Var::constant(x.clone());
    let mut best: Vec<Option<(f64, Vec<f64>)>> = vec![None; n];
    for it in 0..=max_iterations {
        let w = Var::leaf(store.param_at(0).clone());
        let adv = w.tanh().add_scalar(1.0).scale(0.5);
        let sq = adv.sub(&xc).reshape(&[n, per]).square().sum_to(&[n, 1]);
        let logits = model.logits(&adv);
        let lv = logits.value().data();
        let mut onehot = vec![0.0; n * k];
        let mut other_mask = vec![0.0; n * k];
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv[i * k..(i + 1) * k];
            let argmax = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            let norm = sq.value().data()[i].sqrt();
            if argmax != y && best[i].as_ref().is_none_or(|b| norm < b.0) {
                let a = &adv.value().data()[i * per..(i + 1) * per];
                best[i] = Some((norm, a.iter().map(|v| v.clamp(0.0, 1.0)).collect()));
            }
            onehot[i * k + y] = 1.0;
            let j = (0..k).filter(|&j| j != y).fold(None, |b: Option<usize>, j| match b {
                Some(b) if row[b] >= row[j] => Some(b),
                _ => Some(j),
            });
            if let Some(j) = j {
                other_mask[i * k + j] = 1.0;
            }
        }
        if it == max_iterations {
            break;
        }
        // the small offset keeps the norm differentiable at δ = 0
        let norms = sq.add_scalar(1e-12).sqrt();
        let margin = logits
            .mul_const(&Tensor::from_vec(&[n, k], onehot))
            .sub(&logits.mul_const(&Tensor::from_vec(&[n, k], other_mask)))
            .sum_to(&[n, 1])
            .relu();
        let objective = norms.add(&margin.scale(c)).sum();
        let g = grad(&objective, &[&w], false).remove(0).value().clone();
        opt.step(&mut store, &[g]);
    }
    let mut adv = Vec::with_capacity(x.numel());
    for (i, b) in best.into_iter().enumerate() {
        match b {
            Some((_, a)) => adv.extend(a),
            None => adv.extend_from_slice(&x.data()[i * per..(i + 1) * per]),
        }
    }
    finish(x, adv, labels, model, &vec![max_iterations; n])
}

/// Runs the configured attack on a batch. `labels` are the true labels.
pub fn run_attack(x: &Tensor, labels: &[usize], model: &dyn Classifier, config: &AttackConfig) -> Result<Vec<AttackResult>> {
    config.validate()?;
    if x.shape()[0] != labels.len() {
        return Err(invalid("one label per input row is required"));
    }
    let it = config.iterations();
    Ok(match config.family {
        AttackFamily::Fgsm => fgsm(x, labels, model, config.epsilon),
        AttackFamily::PgdL2 => pgd_l2(x, labels, model, config.epsilon, config.step(), it),
        AttackFamily::Deepfool => deepfool(x, model, config.overshoot, it, config.epsilon),
        AttackFamily::CwL2 => cw_l2(x, labels, model, config.confidence_weight, config.step(), it),
    })
}

/// Crafts examples white-box against `surrogate` and scores them against
/// `target`.
pub fn black_box_attack(
    x: &Tensor,
    labels: &[usize],
    surrogate: &dyn Classifier,
    target: &dyn Classifier,
    config: &AttackConfig,
) -> Result<Vec<AttackResult>> {
    if std::ptr::addr_eq(surrogate as *const dyn Classifier, target as *const dyn Classifier) {
        log::warn!("black-box attack with the target as its own surrogate degenerates to white-box");
    }
    let mut results = run_attack(x, labels, surrogate, config)?;
    let adv = Tensor::from_vec(x.shape(), results.iter().flat_map(|r| r.adversarial.clone()).collect());
    let pred = target.predict(&adv);
    for (r, (p, y)) in results.iter_mut().zip(pred.iter().zip(labels)) {
        r.success = p != y;
    }
    Ok(results)
}

/// Attacks every image of a unit-range dataset in batches. Success is
/// judged against `target` (pass the crafting model for white-box).
pub fn attack_dataset(
    ds: &LabeledDataset,
    crafting: &dyn Classifier,
    target: &dyn Classifier,
    config: &AttackConfig,
) -> Result<(LabeledDataset, Vec<AttackResult>)> {
    let images: Vec<&ImageTensor> = ds.images().collect();
    if images.iter().any(|x| x.range() != RangeTag::Unit) {
        return Err(invalid("attacks operate on unit-range images"));
    }
    let labels: Vec<usize> = ds.labels().iter().map(|l| l.index()).collect();
    let mut results = Vec::with_capacity(images.len());
    for (imgs, ys) in images.chunks(CHUNK_ROWS).zip(labels.chunks(CHUNK_ROWS)) {
        let x = batch_tensor(imgs.iter().copied());
        let mut batch = run_attack(&x, ys, crafting, config)?;
        let adv = Tensor::from_vec(x.shape(), batch.iter().flat_map(|r| r.adversarial.clone()).collect());
        for (r, (p, y)) in batch.iter_mut().zip(target.predict(&adv).iter().zip(ys)) {
            r.success = p != y;
        }
        results.extend(batch);
    }
    let adv = Tensor::from_vec(
        &[results.len(), 3, 32, 32],
        results.iter().flat_map(|r| r.adversarial.clone()).collect(),
    );
    let items = unbatch(&adv, RangeTag::Unit).into_iter().zip(ds.labels()).collect();
    Ok((LabeledDataset::new(items, Provenance::Derived), results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearClassifier;
    use proptest::prelude::*;

    /// Two-class model whose class-1 probability is `σ(a·x + b)`.
    fn logistic(a: f64, b: f64) -> LinearClassifier {
        LinearClassifier::new(Tensor::from_vec(&[2, 1], vec![0.0, a]), Tensor::from_vec(&[1, 2], vec![0.0, b]))
    }

    fn col(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len(), 1], v.to_vec())
    }

    #[test]
    fn fgsm_on_logistic_model_matches_analytic_step() {
        let r = fgsm(&col(&[0.3]), &[1], &logistic(2.0, 0.0), 0.1);
        assert_eq!(r[0].adversarial, vec![0.3 - 0.1]);
        let r = fgsm(&col(&[0.3]), &[1], &logistic(2.0, 0.0), 0.0);
        assert_eq!(r[0].adversarial, vec![0.3]);
        assert_eq!(AttackConfig::new(AttackFamily::Fgsm).epsilon, 0.1);
    }

    #[test]
    fn deepfool_on_affine_binary_model_hits_the_hyperplane() {
        let m = LinearClassifier::new(
            Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 3.0, 4.0]),
            Tensor::from_vec(&[1, 2], vec![0.0, -5.0]),
        );
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 0.0]);
        let r = deepfool(&x, &m, 0.02, 50, 10.0);
        assert!((r[0].perturbation[0] - 0.612).abs() < 1e-12);
        assert!((r[0].perturbation[1] - 0.816).abs() < 1e-12);
        assert!(r[0].success);
        assert_eq!(r[0].iterations_used, 1);
        let none = deepfool(&x, &m, 0.02, 0, 10.0);
        assert_eq!(none[0].adversarial, vec![0.0, 0.0]);
        assert!(!none[0].success);
    }

    #[test]
    fn deepfool_picks_the_nearest_of_several_boundaries() {
        let w = [[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0]];
        let b = [0.0, -1.5, -2.0];
        let m = LinearClassifier::new(
            Tensor::from_vec(&[3, 2], w.iter().flatten().copied().collect()),
            Tensor::from_vec(&[1, 3], b.to_vec()),
        );
        let x = [0.2, 0.3];
        let f = |c: usize| w[c][0] * x[0] + w[c][1] * x[1] + b[c];
        // brute force over the two competing boundaries of class 0
        let (mut best_d, mut best_c) = (f64::INFINITY, 0);
        for c in 1..3 {
            let dw = [w[c][0] - w[0][0], w[c][1] - w[0][1]];
            let d = (f(c) - f(0)).abs() / (dw[0] * dw[0] + dw[1] * dw[1]).sqrt();
            if d < best_d {
                best_d = d;
                best_c = c;
            }
        }
        let r = deepfool(&Tensor::from_vec(&[1, 2], x.to_vec()), &m, 0.02, 50, 10.0);
        assert!((r[0].perturbation_l2 - 1.02 * best_d).abs() < 1e-9);
        let dw = [w[best_c][0] - w[0][0], w[best_c][1] - w[0][1]];
        let cos = (r[0].perturbation[0] * dw[0] + r[0].perturbation[1] * dw[1])
            / (r[0].perturbation_l2 * (dw[0] * dw[0] + dw[1] * dw[1]).sqrt());
        assert!((cos - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deepfool_respects_the_cap() {
        let m = LinearClassifier::new(
            Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 3.0, 4.0]),
            Tensor::from_vec(&[1, 2], vec![0.0, -5.0]),
        );
        let r = deepfool(&Tensor::from_vec(&[1, 2], vec![0.0, 0.0]), &m, 0.02, 50, 0.1);
        assert!(r[0].perturbation_l2 <= 0.1 * 2f64.sqrt() + 1e-12);
    }

    #[test]
    fn cw_with_negligible_weight_stays_put() {
        let x = Tensor::from_vec(&[1, 3], vec![0.2, 0.5, 0.9]);
        let m = LinearClassifier::new(
            Tensor::from_vec(&[2, 3], vec![1.0, -1.0, 0.5, -0.3, 0.8, 0.2]),
            Tensor::zeros(&[1, 2]),
        );
        let r = cw_l2(&x, &[0], &m, 1e-8, 0.01, 10);
        assert!(r[0].perturbation_l2 < 1e-3);
    }

    #[test]
    fn cw_matches_grid_search_on_logistic_model() {
        let m = logistic(2.0, -1.0);
        let x = col(&[0.8]);
        let r = cw_l2(&x, &[1], &m, 1.0, 0.01, 2000);
        let got = cw_objective(&m, &x, &col(&r[0].adversarial), &[1], 1.0)[0];
        let mut grid_best = f64::INFINITY;
        for i in 0..=1000 {
            let d = -0.5 + i as f64 * 1e-3;
            let xt = 0.8 + d;
            if !(0.0..=1.0).contains(&xt) {
                continue;
            }
            grid_best = grid_best.min(cw_objective(&m, &x, &col(&[xt]), &[1], 1.0)[0]);
        }
        assert!((got - grid_best).abs() < 1e-3, "optimizer {got}, grid {grid_best}");
    }

    #[test]
    fn pgd_reaches_the_linear_loss_maximizer_over_the_box() {
        // the ball (radius 0.6·√4) contains the whole box around x = 0.5,
        // so the maximizer of a linear loss is the box corner along the
        // sign of the loss gradient
        let wdiff = [1.0, -2.0, 0.5, -0.25];
        let m = LinearClassifier::new(
            Tensor::from_vec(&[2, 4], [vec![0.0; 4], wdiff.to_vec()].concat()),
            Tensor::zeros(&[1, 2]),
        );
        let x = Tensor::full(&[1, 4], 0.5);
        let r = pgd_l2(&x, &[0], &m, 0.6, 0.15, 200);
        let corner: Vec<f64> = wdiff.iter().map(|w| 0.5 + 0.5 * w.signum()).collect();
        let margin = |a: &[f64]| a.iter().zip(&wdiff).map(|(u, w)| u * w).sum::<f64>();
        assert!((margin(&r[0].adversarial) - margin(&corner)).abs() < 1e-3);
        let zero = pgd_l2(&x, &[0], &m, 0.0, 0.0, 50);
        assert_eq!(zero[0].adversarial, x.to_vec());
    }

    #[test]
    fn black_box_with_self_surrogate_equals_white_box() {
        let m = logistic(2.0, -1.0);
        let x = col(&[0.2, 0.7, 0.9]);
        let cfg = AttackConfig::new(AttackFamily::PgdL2);
        let white = run_attack(&x, &[0, 1, 1], &m, &cfg).unwrap();
        let black = black_box_attack(&x, &[0, 1, 1], &m, &m, &cfg).unwrap();
        assert_eq!(white, black);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::new(AttackFamily::Fgsm).with_epsilon(-0.1).validate().is_err());
        let mut c = AttackConfig::new(AttackFamily::Deepfool);
        c.overshoot = 0.6;
        assert!(c.validate().is_err());
        assert_eq!(AttackConfig::new(AttackFamily::PgdL2).iterations(), 100);
        assert_eq!(AttackConfig::new(AttackFamily::PgdL2).step(), 0.025);
        assert_eq!(AttackConfig::new(AttackFamily::CwL2).iterations(), 10);
        assert_eq!(AttackConfig::new(AttackFamily::CwL2).step(), 0.01);
    }

    fn random_linear(seed: u64, k: usize, n: usize) -> LinearClassifier {
        let mut rng = crate::rng::seeded(seed);
        LinearClassifier::new(
            crate::nn::normal_tensor(&mut rng, &[k, n], 1.0),
            crate::nn::normal_tensor(&mut rng, &[1, k], 0.1),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn attack_outputs_stay_in_box_with_consistent_norms(
            xs in prop::collection::vec(0.0f64..=1.0, 6),
            eps in 0.0f64..0.5,
            seed in 0u64..100,
            fam in 0usize..4,
        ) {
            let m = random_linear(seed, 3, 6);
            let x = Tensor::from_vec(&[1, 6], xs);
            let mut cfg = AttackConfig::new(AttackFamily::ALL[fam]).with_epsilon(eps);
            cfg.max_iterations = Some(20);
            let r = &run_attack(&x, &[0], &m, &cfg).unwrap()[0];
            prop_assert!(r.adversarial.iter().all(|v| (0.0..=1.0).contains(v)));
            let l2 = r.adversarial.iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((l2 - r.perturbation_l2).abs() < 1e-6);
            if cfg.family == AttackFamily::Fgsm {
                prop_assert!(r.perturbation_linf <= eps);
            }
            if cfg.family == AttackFamily::PgdL2 {
                prop_assert!(r.perturbation_l2 <= eps * 6f64.sqrt() + 1e-6);
            }
        }

        #[test]
        fn deepfool_distance_on_separable_binary_models(
            w in prop::collection::vec(-2.0f64..2.0, 2),
            b in -1.0f64..1.0,
            xs in prop::collection::vec(0.3f64..0.7, 2),
        ) {
            let norm = (w[0] * w[0] + w[1] * w[1]).sqrt();
            prop_assume!(norm > 0.1);
            let m = LinearClassifier::new(
                Tensor::from_vec(&[2, 2], vec![0.0, 0.0, w[0], w[1]]),
                Tensor::from_vec(&[1, 2], vec![0.0, b]),
            );
            let f = w[0] * xs[0] + w[1] * xs[1] + b;
            prop_assume!(f.abs() > 1e-6);
            let dist = f.abs() / norm;
            let r = &deepfool(&Tensor::from_vec(&[1, 2], xs.clone()), &m, 0.02, 50, 100.0)[0];
            // unclipped only when the overshot point stays in the box
            prop_assume!(xs.iter().zip(&r.perturbation).all(|(x, d)| (0.0..=1.0).contains(&(x + d))));
            let exact = xs.iter().zip(&w).all(|(x, wi)| {
                let p = x - 1.02 * f * wi / (norm * norm);
                (0.0..=1.0).contains(&p)
            });
            prop_assume!(exact);
            prop_assert!(r.perturbation_l2 <= 1.02 * dist * (1.0 + 1e-3));
            prop_assert!(r.perturbation_l2 >= dist * (1.0 - 1e-9));
        }
    }
}
