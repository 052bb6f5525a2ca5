//! Classifier training and the staged defense-building pipeline.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autograd::{grad, Var};
use crate::dataset::{batch_tensor, ImageTensor, LabeledDataset, Provenance, RangeTag};
use crate::error::{invalid, Error, Result};
use crate::gan_training::{select_best_generator, train_gan, GanTrainConfig, Selection};
use crate::models::{
    load_checkpoint, read_checkpoint_meta, save_checkpoint, ClassifierArch, ClassifierModel, GeneratorModel, TrainingMeta,
};
use crate::nn::{cross_entropy, Adam, Mode};
use crate::reconstruction::{ReconstructionCache, ReconstructionConfig};
use crate::rng::{derive_seed, seeded, sha256_hex};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak step size; decays to zero on a half cosine over the run.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub arch: ClassifierArch,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            arch: ClassifierArch::default(),
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(invalid("learning_rate must be > 0 and weight_decay >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    /// Epoch whose parameters were kept; 0 means the initial model.
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Fraction of `ds` the model labels correctly.
pub fn accuracy(model: &ClassifierModel, ds: &LabeledDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let images: Vec<&ImageTensor> = ds.images().collect();
    let pred = model.classify(&images);
    pred.iter().zip(ds.labels()).filter(|(p, y)| **p == *y).count() as f64 / ds.len() as f64
}

fn check_unit(ds: &LabeledDataset) -> Result<()> {
    if ds.images().any(|x| x.range() != RangeTag::Unit) {
        return Err(invalid("classifier inputs must be in unit range"));
    }
    Ok(())
}

/// Cross-entropy training with Adam and cosine decay; keeps the epoch with
/// the best validation accuracy (earliest on ties). `init` warm-starts from
/// an existing model instead of a fresh one built from `seed`.
pub fn train_classifier(
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    config: &ClassifierTrainConfig,
    seed: u64,
    init: Option<&ClassifierModel>,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("classifier training set is empty".into()));
    }
    check_unit(train_set)?;
    check_unit(val_set)?;
    let mut model = match init {
        Some(m) => m.clone(),
        None => ClassifierModel::new(config.arch, derive_seed(&[b"classifier", &seed.to_le_bytes()])),
    };
    let mut rng = seeded(derive_seed(&[b"classifier-order", &seed.to_le_bytes()]));
    let mut opt = Adam::new(config.learning_rate, 0.9, 0.999).with_weight_decay(config.weight_decay);
    let images: Vec<&ImageTensor> = train_set.images().collect();
    let labels: Vec<usize> = train_set.labels().iter().map(|l| l.index()).collect();
    let mut best = (accuracy(&model, val_set), 0usize, model.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for epoch in 1..=config.epochs {
        let progress = (epoch - 1) as f64 / config.epochs as f64;
        opt.lr = config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let x = batch_tensor(idx.iter().map(|&i| images[i]));
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let p = model.store().bind(true, Mode::Train);
            let loss = cross_entropy(&model.forward(&p, &Var::constant(x)), &y);
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::Divergence(format!("classifier loss is non-finite at epoch {epoch}")));
            }
            loss_sum += l * idx.len() as f64;
            let grads: Vec<Tensor> = grad(&loss, &p.vars(), false).into_iter().map(|g| g.value().clone()).collect();
            let updates = p.take_updates();
            drop(p);
            opt.step(model.store_mut(), &grads);
            model.store_mut().apply_buffer_updates(updates);
        }
        let val_accuracy = accuracy(&model, val_set);
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / images.len() as f64,
            val_accuracy,
        };
        log::info!("classifier epoch {epoch}: loss {:.4}, val acc {:.4}", rec.train_loss, val_accuracy);
        history.push(rec);
        if val_accuracy > best.0 {
            best = (val_accuracy, epoch, model.clone());
        }
    }
    let (val_accuracy, best_epoch, model) = best;
    Ok(TrainedClassifier {
        model,
        best_epoch,
        val_accuracy,
        history,
    })
}

// ---------------------------------------------------------------------------
// Staged pipeline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameworkConfig {
    pub classifier: ClassifierTrainConfig,
    pub gan: GanTrainConfig,
    pub reconstruction: ReconstructionConfig,
    /// Seed of Classifier #1 and of the Classifier #2 data order.
    pub seed: u64,
    /// Gap between Classifier #1's clean and reconstructed validation
    /// accuracy above which Classifier #2 gets a full retraining run.
    pub retrain_threshold: f64,
    /// Epochs of the short warm-started run used when the gap is small.
    pub fine_tune_epochs: usize,
    /// Peak step size of every warm-started run.
    pub fine_tune_learning_rate: f64,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        FrameworkConfig {
            classifier: ClassifierTrainConfig::default(),
            gan: GanTrainConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            seed: 0,
            retrain_threshold: 0.01,
            fine_tune_epochs: 5,
            fine_tune_learning_rate: 3e-4,
        }
    }
}

impl FrameworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.gan.validate()?;
        self.reconstruction.validate()?;
        if !(self.retrain_threshold >= 0.0) || !(self.fine_tune_learning_rate > 0.0) {
            return Err(invalid("retrain_threshold must be >= 0 and fine_tune_learning_rate > 0"));
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Classifier1,
    GanSet,
    Selection,
    Reconstruction,
    Classifier2,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Classifier1,
        Stage::GanSet,
        Stage::Selection,
        Stage::Reconstruction,
        Stage::Classifier2,
    ];
}

/// One line of the stage log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Seconds since the Unix epoch.
    pub completed_at: f64,
    pub config_hash: String,
    pub data_hash: String,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    /// File name (relative to the state directory) → sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct FrameworkState {
    pub classifier_1: ClassifierModel,
    pub generator_best: GeneratorModel,
    pub classifier_2: ClassifierModel,
    /// Reconstructed train and validation splits, labels copied verbatim.
    pub reconstructed_train: LabeledDataset,
    pub reconstructed_validation: LabeledDataset,
    pub selection: Selection,
    pub stage_log: Vec<StageRecord>,
    /// Stages skipped because a verified record already existed.
    pub resumed: Vec<Stage>,
}

pub const STAGE_LOG: &str = "stage_log.jsonl";
pub const C1_FILE: &str = "classifier_1.ckpt";
pub const C2_FILE: &str = "classifier_2.ckpt";
pub const BEST_FILE: &str = "generator_best.ckpt";
pub const RECON_FILE: &str = "reconstructions.bin";
pub const SELECTION_FILE: &str = "selection.json";

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn now_secs() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn read_log(dir: &Path) -> Result<Vec<StageRecord>> {
    let path = dir.join(STAGE_LOG);
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_log(dir: &Path, log: &[StageRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(dir.join(STAGE_LOG), text)?;
    Ok(())
}

fn artifacts_intact(dir: &Path, rec: &StageRecord) -> bool {
    rec.artifacts
        .iter()
        .all(|(name, sha)| file_sha(&dir.join(name)).is_ok_and(|s| &s == sha))
}

fn gan_file(seed: u64, epoch: usize, part: &str) -> String {
    format!("gan/seed{seed}_epoch{epoch:04}_{part}.ckpt")
}

struct Recorder<'a> {
    dir: &'a Path,
    config_hash: String,
    data_hash: String,
    log: Vec<StageRecord>,
}

impl Recorder<'_> {
    /// The verified record of `stage`, if resumable. The log is truncated at
    /// the first stage that cannot be reused.
    fn reusable(&mut self, stage: Stage) -> Option<StageRecord> {
        let pos = self.log.iter().position(|r| r.stage == stage)?;
        let r = &self.log[pos];
        if r.config_hash == self.config_hash && r.data_hash == self.data_hash && artifacts_intact(self.dir, r) {
            Some(r.clone())
        } else {
            log::info!("stage {stage:?} must be rerun");
            self.log.truncate(pos);
            None
        }
    }

    fn finish(
        &mut self,
        stage: Stage,
        metrics: serde_json::Value,
        files: &[String],
    ) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for f in files {
            artifacts.insert(f.clone(), file_sha(&self.dir.join(f))?);
        }
        let mut completed_at = now_secs();
        if let Some(prev) = self.log.last() {
            // strictly increasing even on coarse clocks
            completed_at = completed_at.max(prev.completed_at.next_up());
        }
        let serde_json::Value::Object(metrics) = metrics else {
            unreachable!("stage metrics are always objects")
        };
        self.log.retain(|r| r.stage < stage);
        self.log.push(StageRecord {
            stage,
            completed_at,
            config_hash: self.config_hash.clone(),
            data_hash: self.data_hash.clone(),
            metrics,
            artifacts,
        });
        write_log(self.dir, &self.log)
    }
}

fn reconstruct_split(
    ds: &LabeledDataset,
    generator: &GeneratorModel,
    cfg: &ReconstructionConfig,
    cache: &ReconstructionCache,
) -> Result<LabeledDataset> {
    let images: Vec<&ImageTensor> = ds.images().collect();
    let rec = cache.reconstruct(&images, generator, cfg)?;
    Ok(LabeledDataset::new(rec.into_iter().zip(ds.labels()).collect(), Provenance::Derived))
}

/// Drops the records of `stage` and every later stage so that the next run
/// recomputes them.
pub fn invalidate_from(state_dir: &Path, stage: Stage) -> Result<()> {
    let mut log = read_log(state_dir)?;
    log.retain(|r| r.stage < stage);
    if state_dir.is_dir() {
        write_log(state_dir, &log)?;
    }
    Ok(())
}

/// Runs Classifier #1 → GAN set → selection → reconstruction → Classifier #2,
/// persisting each stage under `state_dir`. A stage whose log record matches
/// the config and data hashes and whose artifacts verify is loaded instead
/// of rerun; every later stage is then rerun only if its own record fails.
pub fn run_framework(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    config: &FrameworkConfig,
    state_dir: &Path,
) -> Result<FrameworkState> {
    match run_stages(train, validation, config, state_dir, Stage::Classifier2)? {
        Outcome::Complete(s) => Ok(*s),
        Outcome::Partial(..) => unreachable!("the last stage always completes the run"),
    }
}

/// Runs the framework up to and including `last`. Returns the stage log and
/// the stages that were resumed rather than recomputed.
pub fn run_framework_until(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    config: &FrameworkConfig,
    state_dir: &Path,
    last: Stage,
) -> Result<(Vec<StageRecord>, Vec<Stage>)> {
    Ok(match run_stages(train, validation, config, state_dir, last)? {
        Outcome::Complete(s) => (s.stage_log, s.resumed),
        Outcome::Partial(log, resumed) => (log, resumed),
    })
}

enum Outcome {
    Complete(Box<FrameworkState>),
    Partial(Vec<StageRecord>, Vec<Stage>),
}

fn run_stages(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    config: &FrameworkConfig,
    state_dir: &Path,
    last: Stage,
) -> Result<Outcome> {
    config.validate()?;
    std::fs::create_dir_all(state_dir.join("gan"))?;
    let data_hash = sha256_hex(format!("{}:{}", train.content_hash(), validation.content_hash()).as_bytes());
    let mut rec = Recorder {
        dir: state_dir,
        config_hash: config.config_hash(),
        data_hash,
        log: read_log(state_dir)?,
    };
    let mut resumed = Vec::new();
    let recon_cache = ReconstructionCache::new();
    recon_cache.load(&state_dir.join(RECON_FILE))?;

    // Classifier #1
    let c1 = match rec.reusable(Stage::Classifier1) {
        Some(_) => {
            resumed.push(Stage::Classifier1);
            load_checkpoint::<ClassifierModel>(&state_dir.join(C1_FILE))?.0
        }
        None => {
            let t = train_classifier(train, validation, &config.classifier, config.seed, None)?;
            save_checkpoint(
                &t.model,
                &TrainingMeta {
                    epoch: t.best_epoch,
                    loss_curve: t.history.iter().map(|h| h.train_loss).collect(),
                },
                &state_dir.join(C1_FILE),
            )?;
            rec.finish(
                Stage::Classifier1,
                json!({"validation_accuracy": t.val_accuracy, "best_epoch": t.best_epoch}),
                &[C1_FILE.into(), format!("{C1_FILE}.json")],
            )?;
            t.model
        }
    };
    if last == Stage::Classifier1 {
        return Ok(Outcome::Partial(rec.log, resumed));
    }
    let c1_val = accuracy(&c1, validation);

    // GAN set
    let gan_files: Vec<String> = match rec.reusable(Stage::GanSet) {
        Some(r) => {
            resumed.push(Stage::GanSet);
            r.artifacts.keys().filter(|k| k.ends_with("_generator.ckpt")).cloned().collect()
        }
        None => {
            let signed = train.map_images(|x| x.convert_range(RangeTag::Signed));
            let runs = train_gan(&signed, &config.gan)?;
            let mut files = Vec::new();
            let mut diverged = Vec::new();
            for run in &runs {
                if let Some(d) = &run.diverged {
                    diverged.push(json!({"seed": run.seed, "reason": d}));
                }
                let curve: Vec<f64> = run.curve.iter().map(|c| c.critic_loss).collect();
                for ck in &run.checkpoints {
                    let meta = TrainingMeta {
                        epoch: ck.epoch,
                        loss_curve: curve[..ck.epoch.min(curve.len())].to_vec(),
                    };
                    for (part, is_gen) in [("generator", true), ("critic", false)] {
                        let f = gan_file(run.seed, ck.epoch, part);
                        let path = state_dir.join(&f);
                        if is_gen {
                            save_checkpoint(&ck.generator, &meta, &path)?;
                        } else {
                            save_checkpoint(&ck.critic, &meta, &path)?;
                        }
                        files.push(f.clone());
                        files.push(format!("{f}.json"));
                    }
                }
                let curve_file = format!("gan/curve_seed{}.csv", run.seed);
                let mut w = csv::Writer::from_path(state_dir.join(&curve_file))?;
                for c in &run.curve {
                    w.serialize(c)?;
                }
                w.flush()?;
                files.push(curve_file);
            }
            if files.iter().all(|f| !f.ends_with("_generator.ckpt")) {
                return Err(Error::Divergence("no GAN produced a checkpoint".into()));
            }
            rec.finish(Stage::GanSet, json!({"runs": runs.len(), "diverged": diverged}), &files)?;
            files.into_iter().filter(|k| k.ends_with("_generator.ckpt")).collect()
        }
    };

    if last == Stage::GanSet {
        return Ok(Outcome::Partial(rec.log, resumed));
    }

    // Selection
    let (best, selection) = match rec.reusable(Stage::Selection) {
        Some(_) => {
            resumed.push(Stage::Selection);
            let sel: Selection = serde_json::from_slice(&std::fs::read(state_dir.join(SELECTION_FILE))?)?;
            (load_checkpoint::<GeneratorModel>(&state_dir.join(BEST_FILE))?.0, sel)
        }
        None => {
            let mut names = gan_files.clone();
            names.sort();
            let gens = names
                .iter()
                .map(|f| load_checkpoint::<GeneratorModel>(&state_dir.join(f)).map(|g| g.0))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&GeneratorModel> = gens.iter().collect();
            let sel = select_best_generator(&refs, &c1, validation, &config.reconstruction, Some(&recon_cache))?;
            let best = gens[sel.index].clone();
            let meta = read_checkpoint_meta(&state_dir.join(&names[sel.index]))?;
            save_checkpoint(
                &best,
                &TrainingMeta {
                    epoch: meta.epoch,
                    loss_curve: meta.loss_curve,
                },
                &state_dir.join(BEST_FILE),
            )?;
            std::fs::write(state_dir.join(SELECTION_FILE), serde_json::to_vec_pretty(&sel)?)?;
            recon_cache.save(&state_dir.join(RECON_FILE))?;
            let scores: serde_json::Map<String, serde_json::Value> =
                names.iter().zip(&sel.scores).map(|(n, s)| (n.clone(), json!(s))).collect();
            rec.finish(
                Stage::Selection,
                json!({"selected": names[sel.index], "scores": scores}),
                &[BEST_FILE.into(), format!("{BEST_FILE}.json"), SELECTION_FILE.into()],
            )?;
            (best, sel)
        }
    };

    if last == Stage::Selection {
        return Ok(Outcome::Partial(rec.log, resumed));
    }

    // Reconstruction. Reconstructions are held in the cache file, so
    // rebuilding the corpus on resume costs lookups only.
    let resumed_recon = rec.reusable(Stage::Reconstruction).is_some();
    let rtrain = reconstruct_split(train, &best, &config.reconstruction, &recon_cache)?;
    let rval = reconstruct_split(validation, &best, &config.reconstruction, &recon_cache)?;
    debug_assert!(rtrain.labels() == train.labels() && rval.labels() == validation.labels());
    let c1_recon_val = accuracy(&c1, &rval);
    if resumed_recon {
        resumed.push(Stage::Reconstruction);
    } else {
        recon_cache.save(&state_dir.join(RECON_FILE))?;
        rec.finish(
            Stage::Reconstruction,
            json!({
                "generator_checksum": best.checksum(),
                "reconstructed_train_hash": rtrain.content_hash(),
                "reconstructed_validation_hash": rval.content_hash(),
                "classifier_1_validation_accuracy": c1_val,
                "classifier_1_reconstructed_validation_accuracy": c1_recon_val,
            }),
            &[RECON_FILE.into()],
        )?;
    }

    if last == Stage::Reconstruction {
        return Ok(Outcome::Partial(rec.log, resumed));
    }

    // Classifier #2
    let c2 = match rec.reusable(Stage::Classifier2) {
        Some(_) => {
            resumed.push(Stage::Classifier2);
            load_checkpoint::<ClassifierModel>(&state_dir.join(C2_FILE))?.0
        }
        None => {
            let gap = c1_val - c1_recon_val;
            let short = gap <= config.retrain_threshold;
            let cfg = ClassifierTrainConfig {
                epochs: if short { config.fine_tune_epochs } else { config.classifier.epochs },
                learning_rate: config.fine_tune_learning_rate,
                ..config.classifier.clone()
            };
            let t = train_classifier(&rtrain, &rval, &cfg, config.seed, Some(&c1))?;
            save_checkpoint(
                &t.model,
                &TrainingMeta {
                    epoch: t.best_epoch,
                    loss_curve: t.history.iter().map(|h| h.train_loss).collect(),
                },
                &state_dir.join(C2_FILE),
            )?;
            rec.finish(
                Stage::Classifier2,
                json!({
                    "warm_start": true,
                    "mode": if short { "fine_tune" } else { "retrain" },
                    "epochs": cfg.epochs,
                    "accuracy_gap": gap,
                    "reconstructed_validation_accuracy": t.val_accuracy,
                    "training_inputs_hash": rtrain.content_hash(),
                    "generator_checksum": best.checksum(),
                }),
                &[C2_FILE.into(), format!("{C2_FILE}.json")],
            )?;
            t.model
        }
    };

    Ok(Outcome::Complete(Box::new(FrameworkState {
        classifier_1: c1,
        generator_best: best,
        classifier_2: c2,
        reconstructed_train: rtrain,
        reconstructed_validation: rval,
        selection,
        stage_log: rec.log,
        resumed,
    })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_dataset;

    fn tiny() -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            arch: ClassifierArch { base_width: 4 },
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_the_initial_model_at_chance() {
        let ds = generate_synthetic_dataset(30, 3).unwrap();
        let cfg = ClassifierTrainConfig { epochs: 0, ..tiny() };
        let t = train_classifier(&ds, &ds, &cfg, 1, None).unwrap();
        assert_eq!(t.best_epoch, 0);
        assert!(t.history.is_empty());
        assert!((t.val_accuracy - 0.5).abs() <= 0.1, "{}", t.val_accuracy);
    }

    #[test]
    fn memorizes_a_small_subset() {
        let ds = generate_synthetic_dataset(5, 4).unwrap();
        let cfg = ClassifierTrainConfig {
            epochs: 200,
            batch_size: 10,
            weight_decay: 0.0,
            ..tiny()
        };
        let t = train_classifier(&ds, &ds, &cfg, 2, None).unwrap();
        assert_eq!(accuracy(&t.model, &ds), 1.0);
    }

    #[test]
    fn signed_inputs_are_rejected() {
        let ds = generate_synthetic_dataset(2, 0).unwrap().map_images(|x| x.convert_range(RangeTag::Signed));
        assert!(train_classifier(&ds, &ds, &tiny(), 0, None).is_err());
    }

    fn tiny_framework() -> FrameworkConfig {
        use crate::models::{CriticArch, GeneratorArch};
        FrameworkConfig {
            classifier: ClassifierTrainConfig { epochs: 2, batch_size: 8, ..tiny() },
            gan: GanTrainConfig {
                epochs: 2,
                batch_size: 4,
                critic_steps_per_generator_step: 1,
                checkpoint_interval: 1,
                seeds: vec![0, 1],
                generator: GeneratorArch { latent_dim: 8, base_width: 4 },
                critic: CriticArch { base_width: 4 },
                ..Default::default()
            },
            reconstruction: ReconstructionConfig {
                gradient_steps: 3,
                random_restarts: 2,
                ..Default::default()
            },
            fine_tune_epochs: 1,
            ..Default::default()
        }
    }

    #[test]
    fn framework_runs_all_stages_and_resumes() {
        let ds = generate_synthetic_dataset(5, 8).unwrap();
        let (train, val, _) = crate::dataset::split_dataset(&ds, 1).unwrap();
        let cfg = tiny_framework();
        let dir = tempfile::tempdir().unwrap();
        let first = run_framework(&train, &val, &cfg, dir.path()).unwrap();
        let stages: Vec<Stage> = first.stage_log.iter().map(|r| r.stage).collect();
        assert_eq!(stages, Stage::ALL);
        assert!(first.resumed.is_empty());
        assert!(first.stage_log.windows(2).all(|w| w[0].completed_at < w[1].completed_at));
        assert_eq!(first.reconstructed_train.labels(), train.labels());
        assert_eq!(first.reconstructed_validation.labels(), val.labels());
        assert_eq!(first.selection.scores.len(), 4);
        let c2 = &first.stage_log[4].metrics;
        assert_eq!(c2["training_inputs_hash"], serde_json::json!(first.reconstructed_train.content_hash()));

        let again = run_framework(&train, &val, &cfg, dir.path()).unwrap();
        assert_eq!(again.resumed, Stage::ALL);
        assert_eq!(again.stage_log, first.stage_log);
        assert_eq!(again.classifier_2.checksum(), first.classifier_2.checksum());
        assert_eq!(again.reconstructed_train, first.reconstructed_train);

        // a damaged Classifier #2 checkpoint reruns that stage only
        std::fs::write(dir.path().join(C2_FILE), b"garbage").unwrap();
        let third = run_framework(&train, &val, &cfg, dir.path()).unwrap();
        assert_eq!(third.resumed, Stage::ALL[..4]);
        assert_eq!(third.classifier_2.checksum(), first.classifier_2.checksum());

        // a different reconstruction config invalidates every stage
        let other = FrameworkConfig {
            reconstruction: ReconstructionConfig { gradient_steps: 4, ..cfg.reconstruction.clone() },
            ..cfg
        };
        let fourth = run_framework(&train, &val, &other, dir.path()).unwrap();
        assert!(fourth.resumed.is_empty());

        // partial runs stop after the named stage and reuse earlier ones
        invalidate_from(dir.path(), Stage::GanSet).unwrap();
        let (log, resumed) = run_framework_until(&train, &val, &other, dir.path(), Stage::GanSet).unwrap();
        assert_eq!(resumed, [Stage::Classifier1]);
        assert_eq!(log.iter().map(|r| r.stage).collect::<Vec<_>>(), Stage::ALL[..2]);
    }
}
