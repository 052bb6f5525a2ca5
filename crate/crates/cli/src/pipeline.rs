//! Stage implementations behind each subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use argan_core::attacks::{AttackFamily, ThreatModel};
use argan_core::dataset::{
    generate_synthetic_dataset, ingest_lisa_subset, read_archive, split_dataset, write_archive, ClassLabel,
    ImageTensor, LabeledDataset, Provenance,
};
use argan_core::defenses::{transform_dataset, DefensePipeline, DefenseSpec, JPEG_CODEC_ID};
use argan_core::evaluation::{
    attack_success_rate, compute_metrics, epsilon_sweep, evaluate_defense, measure_delay, render_markdown,
    write_sweep_csvs, write_table_csv, AdversarialCache, AttackSetup, DefenseEvaluation, DelayStats, MetricSet,
    SweepCurve, TableRow,
};
use argan_core::models::{load_checkpoint, save_checkpoint, ClassifierModel, GeneratorModel, TrainingMeta};
use argan_core::reconstruction::{sensitivity_sweep, ReconstructionCache, OPERATING_POINT};
use argan_core::training_framework::{
    accuracy, invalidate_from, run_framework, run_framework_until, train_classifier, Stage, StageRecord, BEST_FILE,
    C1_FILE, C2_FILE,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::artifacts::{
    file_sha256, is_done, read_json, read_meta, record_step, require, short, write_json, ArtifactDir, Layout, RunLog,
};
use crate::config::{DataSource, ExperimentConfig};
use crate::CliError;

pub const SURROGATE_FILE: &str = "surrogate.ckpt";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const ATTACK_SUMMARY_FILE: &str = "summary.json";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";
pub const CURVES_FILE: &str = "curves.json";
pub const DESK_CHECK_FILE: &str = "desk_check.json";
pub const PAPER_CHECK_FILE: &str = "paper_check.json";
pub const TABLE_FILES: [&str; 3] = ["table2.csv", "table3.csv", "table4.csv"];
/// Archive images are stored as 8-bit PNG.
pub const ARCHIVE_CODEC_ID: &str = "png-rgb8";
/// Published end-to-end delay per image at the operating point; reference
/// metadata only.
pub const PUBLISHED_DELAY_SECONDS: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Everything a stage needs.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub layout: Layout,
    pub force: bool,
    pub log: RunLog,
}

type StepOutput = (Vec<String>, Map<String, Value>);

impl Ctx {
    pub fn new(cfg: ExperimentConfig, layout: Layout, force: bool) -> Self {
        let log = RunLog::new(&layout.root);
        Ctx {
            hash: cfg.hash(),
            cfg,
            layout,
            force,
            log,
        }
    }

    fn dir(&self, d: ArtifactDir) -> std::path::PathBuf {
        self.layout.dir(d)
    }

    fn mkdir(&self, d: ArtifactDir) -> Result<std::path::PathBuf, CliError> {
        let p = self.dir(d);
        std::fs::create_dir_all(&p).map_err(|e| CliError::Stage(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    /// Runs `body` unless `step` already completed in every `dirs` entry
    /// under this config hash. `body` returns the files and extra metadata
    /// to record in the first directory; the others record the step only.
    fn step(
        &self,
        step: &str,
        dirs: &[ArtifactDir],
        body: impl FnOnce(&Ctx) -> Result<StepOutput, CliError>,
    ) -> Result<Outcome, CliError> {
        if !self.force {
            let mut done = true;
            for d in dirs {
                done &= is_done(&self.dir(*d), &self.hash, step)?;
            }
            if done {
                log::info!("{step}: up to date (config {})", short(&self.hash));
                self.log.event("skip", step, json!({"config_hash": self.hash}));
                return Ok(Outcome::Skipped);
            }
        }
        let start = Instant::now();
        self.log.event("start", step, json!({"config_hash": self.hash, "force": self.force}));
        for d in dirs {
            self.mkdir(*d)?;
        }
        let (files, extra) = body(self)?;
        record_step(&self.dir(dirs[0]), &self.cfg, step, &files, extra)?;
        for d in &dirs[1..] {
            record_step(&self.dir(*d), &self.cfg, step, &[], Map::new())?;
        }
        let secs = start.elapsed().as_secs_f64();
        log::info!("{step}: done in {secs:.1}s");
        self.log.event(
            "finish",
            step,
            json!({"config_hash": self.hash, "seconds": secs, "files": files}),
        );
        Ok(Outcome::Ran)
    }

    fn data(&self) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset), CliError> {
        require(&self.layout, ArtifactDir::Data, &self.hash, "ingest", "manifest.csv")?;
        Ok(read_archive(&self.dir(ArtifactDir::Data))?)
    }

    fn framework(&self) -> Result<Models, CliError> {
        require(&self.layout, ArtifactDir::Framework, &self.hash, "build-argan", C2_FILE)?;
        require(&self.layout, ArtifactDir::Classifiers, &self.hash, "train-classifier", SURROGATE_FILE)?;
        let fw = self.dir(ArtifactDir::Framework);
        let cl = self.dir(ArtifactDir::Classifiers);
        let load_c = |p: &Path| load_checkpoint::<ClassifierModel>(p).map(|m| m.0);
        let mut paired = Vec::new();
        for spec in self.baselines() {
            paired.push(load_c(&cl.join(paired_file(&spec)))?);
        }
        Ok(Models {
            classifier_1: load_c(&fw.join(C1_FILE))?,
            classifier_2: load_c(&fw.join(C2_FILE))?,
            generator: load_checkpoint::<GeneratorModel>(&fw.join(BEST_FILE))?.0,
            surrogate: load_c(&cl.join(SURROGATE_FILE))?,
            paired,
        })
    }

    fn baselines(&self) -> Vec<DefenseSpec> {
        self.cfg.defense_specs().into_iter().filter(|d| *d != DefenseSpec::ArGan).collect()
    }

    fn adversarial_cache(&self) -> Result<AdversarialCache, CliError> {
        Ok(AdversarialCache::on_disk(self.layout.cache.join("adversarial"))?)
    }

    /// The part of the test split the comparison tables attack.
    fn attacked(&self, test: &LabeledDataset) -> LabeledDataset {
        test.subset(self.cfg.evaluation.attack_images.unwrap_or(test.len()))
    }

    fn recon_cache_path(&self) -> std::path::PathBuf {
        self.layout.cache.join("reconstructions.bin")
    }
}

pub struct Models {
    pub classifier_1: ClassifierModel,
    pub classifier_2: ClassifierModel,
    pub generator: GeneratorModel,
    pub surrogate: ClassifierModel,
    /// One per baseline, in table order.
    pub paired: Vec<ClassifierModel>,
}

impl Models {
    /// The five defenses in table order.
    fn pipelines<'a>(
        &'a self,
        cfg: &'a ExperimentConfig,
        cache: Option<&'a ReconstructionCache>,
    ) -> Vec<DefensePipeline<'a>> {
        let mut baselines = self.paired.iter();
        cfg.defense_specs()
            .into_iter()
            .map(|spec| {
                let argan = spec == DefenseSpec::ArGan;
                DefensePipeline {
                    spec,
                    classifier: if argan {
                        &self.classifier_2
                    } else {
                        baselines.next().expect("one paired classifier per baseline")
                    },
                    generator: argan.then_some(&self.generator),
                    reconstruction: &cfg.reconstruction,
                    cache: if argan { cache } else { None },
                    seed: cfg.seed,
                }
            })
            .collect()
    }
}

pub fn paired_file(spec: &DefenseSpec) -> String {
    format!("paired_{}.ckpt", spec.slug())
}

fn training_meta(t: &argan_core::training_framework::TrainedClassifier) -> TrainingMeta {
    TrainingMeta {
        epoch: t.best_epoch,
        loss_curve: t.history.iter().map(|h| h.train_loss).collect(),
    }
}

fn stage_metrics(log: &[StageRecord], stage: Stage) -> Value {
    log.iter()
        .find(|r| r.stage == stage)
        .map_or(Value::Null, |r| Value::Object(r.metrics.clone()))
}

// ---------------------------------------------------------------------------

pub fn ingest(ctx: &Ctx) -> Result<Outcome, CliError> {
    ctx.step("ingest", &[ArtifactDir::Data], |ctx| {
        let d = &ctx.cfg.dataset;
        let (full, stats) = match d.source {
            DataSource::Synthetic => (generate_synthetic_dataset(d.n_per_class, d.synthetic_seed)?, Value::Null),
            DataSource::Lisa => {
                let dir = d.lisa_dir.as_deref().ok_or_else(|| CliError::Validation("dataset.lisa_dir is required".into()))?;
                let manifest = d
                    .lisa_manifest
                    .as_deref()
                    .ok_or_else(|| CliError::Validation("dataset.lisa_manifest is required".into()))?;
                let (ds, stats) = ingest_lisa_subset(dir, manifest)?;
                (ds, serde_json::to_value(stats).expect("stats serialize"))
            }
        };
        let (train, val, test) = split_dataset(&full, d.split_seed)?;
        let dir = ctx.dir(ArtifactDir::Data);
        for class in ClassLabel::ALL {
            let p = dir.join(class.name());
            if p.is_dir() {
                std::fs::remove_dir_all(&p).map_err(|e| CliError::Stage(format!("{}: {e}", p.display())))?;
            }
        }
        write_archive(&dir, &[&train, &val, &test])?;
        // hashes of what downstream stages will read back
        let (train, val, test) = read_archive(&dir)?;
        let mut extra = Map::new();
        extra.insert("source".into(), json!(d.source));
        extra.insert("ingest_stats".into(), stats);
        extra.insert("codec_id".into(), json!(ARCHIVE_CODEC_ID));
        for (name, ds) in [("train", &train), ("validation", &val), ("test", &test)] {
            extra.insert(
                name.into(),
                json!({"images": ds.len(), "class_counts": ds.class_counts(), "content_hash": ds.content_hash()}),
            );
        }
        Ok((vec!["manifest.csv".into()], extra))
    })
}

pub fn train_classifiers(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (train, val, _) = ctx.data()?;
    ctx.step("train-classifier", &[ArtifactDir::Classifiers, ArtifactDir::Framework], |ctx| {
        let fw = ctx.dir(ArtifactDir::Framework);
        if ctx.force {
            invalidate_from(&fw, Stage::Classifier1)?;
        }
        let (log, _) = run_framework_until(&train, &val, &ctx.cfg.framework_config(), &fw, Stage::Classifier1)?;
        let dir = ctx.dir(ArtifactDir::Classifiers);
        let mut files = Vec::new();
        let mut extra = Map::new();
        extra.insert("classifier_1".into(), stage_metrics(&log, Stage::Classifier1));

        let s = train_classifier(&train, &val, &ctx.cfg.classifier, ctx.cfg.attacks.surrogate_seed, None)?;
        save_checkpoint(&s.model, &training_meta(&s), &dir.join(SURROGATE_FILE))?;
        files.push(SURROGATE_FILE.to_string());
        extra.insert(
            "surrogate".into(),
            json!({"validation_accuracy": s.val_accuracy, "seed": ctx.cfg.attacks.surrogate_seed}),
        );
        for spec in ctx.baselines() {
            let tr = transform_dataset(&train, &spec, None, &ctx.cfg.reconstruction, ctx.cfg.seed)?;
            let va = transform_dataset(&val, &spec, None, &ctx.cfg.reconstruction, ctx.cfg.seed)?;
            let t = train_classifier(&tr, &va, &ctx.cfg.classifier, ctx.cfg.seed, None)?;
            let f = paired_file(&spec);
            save_checkpoint(&t.model, &training_meta(&t), &dir.join(&f))?;
            log::info!("{}: paired classifier validation accuracy {:.4}", spec.name(), t.val_accuracy);
            extra.insert(spec.slug().into(), json!({"validation_accuracy": t.val_accuracy}));
            files.push(f);
        }
        Ok((files, extra))
    })
}

fn framework_step(ctx: &Ctx, step: &str, first: Stage, last: Stage) -> Result<Outcome, CliError> {
    let (train, val, _) = ctx.data()?;
    ctx.step(step, &[ArtifactDir::Framework], |ctx| {
        let fw = ctx.dir(ArtifactDir::Framework);
        if ctx.force {
            invalidate_from(&fw, first)?;
        }
        let (log, resumed) = run_framework_until(&train, &val, &ctx.cfg.framework_config(), &fw, last)?;
        let mut extra = Map::new();
        for s in Stage::ALL.into_iter().filter(|s| *s >= first && *s <= last) {
            extra.insert(
                serde_json::to_value(s).expect("stage serializes").as_str().expect("string").to_string(),
                stage_metrics(&log, s),
            );
        }
        extra.insert(format!("{step}_resumed"), json!(resumed));
        Ok((Vec::new(), extra))
    })
}

pub fn train_gan(ctx: &Ctx) -> Result<Outcome, CliError> {
    framework_step(ctx, "train-gan", Stage::GanSet, Stage::GanSet)
}

pub fn select_generator(ctx: &Ctx) -> Result<Outcome, CliError> {
    framework_step(ctx, "select-generator", Stage::Selection, Stage::Selection)
}

pub fn build_argan(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (train, val, _) = ctx.data()?;
    ctx.step("build-argan", &[ArtifactDir::Framework], |ctx| {
        let fw = ctx.dir(ArtifactDir::Framework);
        if ctx.force {
            invalidate_from(&fw, Stage::Reconstruction)?;
        }
        let state = run_framework(&train, &val, &ctx.cfg.framework_config(), &fw)?;
        let mut extra = Map::new();
        for s in [Stage::Reconstruction, Stage::Classifier2] {
            extra.insert(
                serde_json::to_value(s).expect("stage serializes").as_str().expect("string").to_string(),
                stage_metrics(&state.stage_log, s),
            );
        }
        extra.insert("build-argan_resumed".into(), json!(state.resumed));
        extra.insert(
            "checksums".into(),
            json!({
                "classifier_1": state.classifier_1.checksum(),
                "classifier_2": state.classifier_2.checksum(),
                "generator_best": state.generator_best.checksum(),
            }),
        );
        Ok((vec![C1_FILE.into(), C2_FILE.into(), BEST_FILE.into()], extra))
    })
}

/// One crafted adversarial set, summarised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CraftedSet {
    pub family: AttackFamily,
    pub threat_model: ThreatModel,
    /// Model the perturbation was computed against.
    pub crafted_on: String,
    pub key: String,
    pub images: usize,
    /// Fraction misclassified by the crafting model.
    pub success_rate: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
}

/// White-box versus transfer success on the bare classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreatOrdering {
    pub family: AttackFamily,
    pub samples: usize,
    pub white_box_successes: usize,
    pub black_box_successes: usize,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub epsilon: f64,
    pub sets: Vec<CraftedSet>,
    pub threat_ordering: Vec<ThreatOrdering>,
}

pub fn attack(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (_, val, test) = ctx.data()?;
    let models = ctx.framework()?;
    ctx.step("attack", &[ArtifactDir::Attacks], |ctx| {
        let cache = ctx.adversarial_cache()?;
        let attacked = ctx.attacked(&test);
        let mut sets = Vec::new();
        let mut crafting: Vec<(String, &ClassifierModel)> = vec![
            ("classifier_1".into(), &models.classifier_1),
            ("classifier_2".into(), &models.classifier_2),
        ];
        for (spec, m) in ctx.baselines().iter().zip(&models.paired) {
            crafting.push((format!("paired_{}", spec.slug()), m));
        }
        for threat in [ThreatModel::BlackBox, ThreatModel::WhiteBox] {
            for config in ctx.cfg.attack_configs(threat) {
                let on: Vec<(String, &ClassifierModel)> = match threat {
                    ThreatModel::BlackBox => vec![("surrogate".into(), &models.surrogate)],
                    ThreatModel::WhiteBox => crafting.clone(),
                };
                for (name, model) in on {
                    let set = cache.get_or_craft(&attacked, model, &config)?;
                    let n = set.records.len().max(1) as f64;
                    sets.push(CraftedSet {
                        family: config.family,
                        threat_model: threat,
                        crafted_on: name,
                        key: set.key.clone(),
                        images: set.records.len(),
                        success_rate: set.records.iter().filter(|r| r.success).count() as f64 / n,
                        mean_l2: set.records.iter().map(|r| r.perturbation_l2).sum::<f64>() / n,
                        mean_linf: set.records.iter().map(|r| r.perturbation_linf).sum::<f64>() / n,
                    });
                }
            }
        }
        // ordering is measured on every held-out image, not only the test split
        let held_out = LabeledDataset::new(
            val.items.iter().chain(&test.items).cloned().collect(),
            Provenance::Derived,
        );
        let mut ordering = Vec::new();
        for family in [AttackFamily::Fgsm, AttackFamily::Deepfool, AttackFamily::CwL2, AttackFamily::PgdL2] {
            let wb_cfg = ctx.cfg.attack_config(family, ThreatModel::WhiteBox);
            let bb_cfg = ctx.cfg.attack_config(family, ThreatModel::BlackBox);
            let c1 = &models.classifier_1;
            let wb = attack_success_rate(&held_out, c1, c1, &wb_cfg, &cache)?;
            let bb = attack_success_rate(&held_out, &models.surrogate, c1, &bb_cfg, &cache)?;
            let n = held_out.len();
            let (w, b) = ((wb * n as f64).round() as usize, (bb * n as f64).round() as usize);
            ordering.push(ThreatOrdering {
                family,
                samples: n,
                white_box_successes: w,
                black_box_successes: b,
                holds: w >= b,
            });
        }
        let summary = AttackSummary {
            epsilon: ctx.cfg.attacks.epsilon,
            sets,
            threat_ordering: ordering,
        };
        write_json(&ctx.dir(ArtifactDir::Attacks).join(ATTACK_SUMMARY_FILE), &summary)?;
        let mut extra = Map::new();
        extra.insert("cache_dir".into(), json!(ctx.layout.cache.join("adversarial")));
        Ok((vec![ATTACK_SUMMARY_FILE.into()], extra))
    })
}

/// Everything `evaluate` measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub unperturbed: Vec<DefenseEvaluation>,
    pub black_box: Vec<DefenseEvaluation>,
    pub white_box: Vec<DefenseEvaluation>,
    /// Classifier #1 without any defense.
    pub bare_clean: MetricSet,
    /// Classifier #1 under white-box attacks crafted on itself.
    pub bare_white_box: BTreeMap<String, MetricSet>,
    pub classifier_1_clean_test_accuracy: f64,
    /// Classifier #2 on reconstructions of the clean test split.
    pub classifier_2_reconstructed_test_accuracy: f64,
    pub threat_ordering: Vec<ThreatOrdering>,
    pub delay: BTreeMap<String, DelayStats>,
    pub test_images: usize,
    /// Leading test images used for the attacked rows.
    pub attacked_images: usize,
}

fn rows(evals: &[DefenseEvaluation], with_attack: bool) -> Vec<TableRow> {
    evals
        .iter()
        .map(|e| {
            let mut r = TableRow::from(e);
            if !with_attack {
                r.attack = None;
            }
            r
        })
        .collect()
}

pub fn evaluate(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (_, _, test) = ctx.data()?;
    let models = ctx.framework()?;
    require(&ctx.layout, ArtifactDir::Attacks, &ctx.hash, "attack", ATTACK_SUMMARY_FILE)?;
    ctx.step("evaluate", &[ArtifactDir::Evaluation], |ctx| {
        let summary: AttackSummary = read_json(&ctx.dir(ArtifactDir::Attacks).join(ATTACK_SUMMARY_FILE))?;
        let cache = ctx.adversarial_cache()?;
        let recon_cache = ReconstructionCache::new();
        recon_cache.load(&ctx.recon_cache_path())?;
        let pipelines = models.pipelines(&ctx.cfg, Some(&recon_cache));

        let mut unperturbed = Vec::new();
        for p in &pipelines {
            unperturbed.push(evaluate_defense(p, None, &test, &cache)?);
        }
        recon_cache.save(&ctx.recon_cache_path())?;
        let attacked = ctx.attacked(&test);
        let mut by_threat = [Vec::new(), Vec::new()];
        for (slot, threat) in [ThreatModel::BlackBox, ThreatModel::WhiteBox].into_iter().enumerate() {
            for config in ctx.cfg.attack_configs(threat) {
                let setup = AttackSetup {
                    config,
                    surrogate: Some(&models.surrogate),
                };
                for p in &pipelines {
                    by_threat[slot].push(evaluate_defense(p, Some(&setup), &attacked, &cache)?);
                }
                recon_cache.save(&ctx.recon_cache_path())?;
            }
        }
        let [black_box, white_box] = by_threat;

        let images: Vec<&ImageTensor> = test.images().collect();
        let bare_clean = compute_metrics(&models.classifier_1.classify(&images), &test.labels())?;
        let mut bare_white_box = BTreeMap::new();
        for config in ctx.cfg.attack_configs(ThreatModel::WhiteBox) {
            let set = cache.get_or_craft(&attacked, &models.classifier_1, &config)?;
            let adv: Vec<&ImageTensor> = set.images.images().collect();
            let m = compute_metrics(&models.classifier_1.classify(&adv), &attacked.labels())?;
            bare_white_box.insert(config.family.name().to_string(), m);
        }
        let argan_clean = unperturbed
            .iter()
            .find(|e| e.defense == DefenseSpec::ArGan.name())
            .expect("AR-GAN is always evaluated");

        let mut delay = BTreeMap::new();
        for p in &pipelines {
            delay.insert(p.spec.name().to_string(), measure_delay(p, &test, Some(ctx.cfg.evaluation.delay_images))?);
        }

        let report = EvaluationReport {
            classifier_1_clean_test_accuracy: accuracy(&models.classifier_1, &test),
            classifier_2_reconstructed_test_accuracy: argan_clean.metrics.accuracy_global,
            unperturbed,
            black_box,
            white_box,
            bare_clean,
            bare_white_box,
            threat_ordering: summary.threat_ordering,
            delay,
            test_images: test.len(),
            attacked_images: attacked.len(),
        };
        let dir = ctx.dir(ArtifactDir::Evaluation);
        write_table_csv(&dir.join(TABLE_FILES[0]), &rows(&report.unperturbed, false))?;
        write_table_csv(&dir.join(TABLE_FILES[1]), &rows(&report.black_box, true))?;
        write_table_csv(&dir.join(TABLE_FILES[2]), &rows(&report.white_box, true))?;
        write_json(&dir.join(EVALUATION_FILE), &report)?;
        let mut files: Vec<String> = TABLE_FILES.iter().map(|s| s.to_string()).collect();
        files.push(EVALUATION_FILE.into());
        let mut extra = Map::new();
        extra.insert("adversarial_cache_hits".into(), json!(cache.hits()));
        extra.insert("reconstruction_cache_hits".into(), json!(recon_cache.hits()));
        Ok((files, extra))
    })
}

pub fn sweep(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (_, _, test) = ctx.data()?;
    let models = ctx.framework()?;
    ctx.step("sweep", &[ArtifactDir::Sweep], |ctx| {
        let ev = &ctx.cfg.evaluation;
        let dir = ctx.dir(ArtifactDir::Sweep);
        let cache = ctx.adversarial_cache()?;
        let recon_cache = ReconstructionCache::new();
        recon_cache.load(&ctx.recon_cache_path())?;
        let pipelines = models.pipelines(&ctx.cfg, Some(&recon_cache));
        let subset = test.subset(ev.sweep_images.unwrap_or(test.len()));
        let templates: Vec<_> = ctx
            .cfg
            .attack_configs(ThreatModel::WhiteBox)
            .into_iter()
            .filter(|c| c.family.has_epsilon())
            .collect();
        let mut curves: Vec<SweepCurve> = Vec::new();
        for threat in [ThreatModel::BlackBox, ThreatModel::WhiteBox] {
            for t in &templates {
                curves.extend(epsilon_sweep(
                    std::slice::from_ref(t),
                    &[threat],
                    &pipelines,
                    &ev.epsilon_grid,
                    &subset,
                    Some(&models.surrogate),
                    &cache,
                )?);
                recon_cache.save(&ctx.recon_cache_path())?;
            }
        }
        for f in std::fs::read_dir(&dir).map_err(|e| CliError::Stage(e.to_string()))?.flatten() {
            if f.file_name().to_string_lossy().starts_with("fig9_") {
                let _ = std::fs::remove_file(f.path());
            }
        }
        let paths = write_sweep_csvs(&dir, &curves)?;
        write_json(&dir.join(CURVES_FILE), &curves)?;

        let sens_set = test.subset(ev.sensitivity_images.unwrap_or(test.len()));
        let sens = sensitivity_sweep(
            &sens_set,
            &models.generator,
            &models.classifier_2,
            &ev.sensitivity_steps,
            &ev.sensitivity_restarts,
            &ctx.cfg.reconstruction,
        )?;
        let mut w = csv::Writer::from_path(dir.join(SENSITIVITY_FILE)).map_err(|e| CliError::Stage(e.to_string()))?;
        w.write_record(["L", "R", "work_units", "mean_delay_seconds", "accuracy"])
            .map_err(|e| CliError::Stage(e.to_string()))?;
        for r in &sens {
            w.write_record([
                r.gradient_steps.to_string(),
                r.random_restarts.to_string(),
                r.work_units.to_string(),
                r.mean_delay_seconds.to_string(),
                r.accuracy.to_string(),
            ])
            .map_err(|e| CliError::Stage(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Stage(e.to_string()))?;

        let mut files: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().expect("file").to_string_lossy().into_owned())
            .collect();
        files.push(CURVES_FILE.into());
        files.push(SENSITIVITY_FILE.into());
        let mut extra = Map::new();
        extra.insert("sweep_images".into(), json!(subset.len()));
        extra.insert("sensitivity_images".into(), json!(sens_set.len()));
        extra.insert("operating_point".into(), json!({"L": OPERATING_POINT.0, "R": OPERATING_POINT.1}));
        Ok((files, extra))
    })
}

/// Acceptance check on a desk-scale run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskCheck {
    pub classifier_1_clean_accuracy: f64,
    pub classifier_2_reconstructed_accuracy: f64,
    pub reconstruction_gap_points: f64,
    pub reconstruction_gap_ok: bool,
    pub argan_white_box_fgsm_accuracy: f64,
    pub bare_white_box_fgsm_accuracy: f64,
    pub robustness_margin_points: f64,
    pub robustness_margin_ok: bool,
    pub threat_ordering_ok: bool,
    pub passed: bool,
}

pub fn desk_check(report: &EvaluationReport) -> DeskCheck {
    let fgsm = AttackFamily::Fgsm;
    let argan = report
        .white_box
        .iter()
        .find(|e| e.defense == DefenseSpec::ArGan.name() && e.attack == Some(fgsm))
        .map_or(f64::NAN, |e| e.metrics.accuracy_global);
    let bare = report.bare_white_box.get(fgsm.name()).map_or(f64::NAN, |m| m.accuracy_global);
    let gap = 100.0 * (report.classifier_1_clean_test_accuracy - report.classifier_2_reconstructed_test_accuracy).abs();
    let margin = 100.0 * (argan - bare);
    let gap_ok = gap <= 3.0;
    let margin_ok = margin >= 15.0;
    let order_ok = !report.threat_ordering.is_empty() && report.threat_ordering.iter().all(|t| t.holds);
    DeskCheck {
        classifier_1_clean_accuracy: report.classifier_1_clean_test_accuracy,
        classifier_2_reconstructed_accuracy: report.classifier_2_reconstructed_test_accuracy,
        reconstruction_gap_points: gap,
        reconstruction_gap_ok: gap_ok,
        argan_white_box_fgsm_accuracy: argan,
        bare_white_box_fgsm_accuracy: bare,
        robustness_margin_points: margin,
        robustness_margin_ok: margin_ok,
        threat_ordering_ok: order_ok,
        passed: gap_ok && margin_ok && order_ok,
    }
}

/// One published-scale check with its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaperCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn acc_of(evals: &[DefenseEvaluation], defense: &str, family: Option<AttackFamily>) -> f64 {
    evals
        .iter()
        .find(|e| e.defense == defense && e.attack == family)
        .map_or(f64::NAN, |e| e.metrics.accuracy_global)
}

/// The published-scale bands (unperturbed accuracy, white-box table, budget
/// curves) evaluated on a finished run.
pub fn paper_checks(report: &EvaluationReport, curves: &[SweepCurve]) -> Vec<PaperCheck> {
    let argan = DefenseSpec::ArGan.name();
    let mut out = Vec::new();
    let a = acc_of(&report.unperturbed, argan, None);
    let jpeg = acc_of(&report.unperturbed, DefenseSpec::JpegCompression { quality: 50 }.name(), None);
    let squeeze = acc_of(&report.unperturbed, DefenseSpec::FeatureSqueezing { bit_depth: 4 }.name(), None);
    out.push(PaperCheck {
        name: "unperturbed accuracy".into(),
        passed: (a - 0.949).abs() <= 0.04 && (jpeg - 0.997).abs() <= 0.02 && (squeeze - 0.997).abs() <= 0.02,
        detail: format!("AR-GAN {a:.4} (0.949 ± 0.04), JPEG {jpeg:.4}, squeezing {squeeze:.4} (0.997 ± 0.02)"),
    });
    let families = [AttackFamily::Fgsm, AttackFamily::Deepfool, AttackFamily::CwL2, AttackFamily::PgdL2];
    let mut ok = true;
    let mut detail = Vec::new();
    for f in families {
        let ar = acc_of(&report.white_box, argan, Some(f));
        ok &= ar >= 0.88;
        detail.push(format!("{} AR-GAN {ar:.4}", f.name()));
        if f != AttackFamily::Fgsm {
            for e in report.white_box.iter().filter(|e| e.attack == Some(f) && e.defense != argan) {
                ok &= e.metrics.accuracy_global <= ar - 0.10;
            }
        }
    }
    out.push(PaperCheck {
        name: "white-box table".into(),
        passed: ok,
        detail: detail.join(", "),
    });
    let mut ok = !curves.is_empty();
    for c in curves {
        match c.threat_model {
            ThreatModel::BlackBox => ok &= c.points.iter().all(|p| p.1 >= 0.90),
            ThreatModel::WhiteBox if c.defense == argan => {
                ok &= c.points.iter().all(|&(eps, acc)| {
                    let floor = if c.family == AttackFamily::PgdL2 && eps >= 0.15 - 1e-9 { 0.82 } else { 0.84 };
                    acc >= floor
                });
            }
            ThreatModel::WhiteBox => ok &= c.points.windows(2).all(|w| w[1].1 <= w[0].1 + 0.02),
        }
    }
    out.push(PaperCheck {
        name: "budget curves".into(),
        passed: ok,
        detail: format!("{} curves", curves.len()),
    });
    out
}

pub fn report(ctx: &Ctx) -> Result<Outcome, CliError> {
    require(&ctx.layout, ArtifactDir::Evaluation, &ctx.hash, "evaluate", EVALUATION_FILE)?;
    require(&ctx.layout, ArtifactDir::Sweep, &ctx.hash, "sweep", CURVES_FILE)?;
    let inputs = [
        ArtifactDir::Data,
        ArtifactDir::Classifiers,
        ArtifactDir::Framework,
        ArtifactDir::Attacks,
        ArtifactDir::Evaluation,
        ArtifactDir::Sweep,
    ];
    let mut hashes = BTreeMap::new();
    for d in inputs {
        let meta = read_meta(&ctx.dir(d))?
            .ok_or_else(|| CliError::MissingArtifact(ctx.dir(d).join("meta.json").display().to_string()))?;
        hashes.insert(d.name().to_string(), meta.config_hash);
    }
    let distinct: std::collections::BTreeSet<&String> = hashes.values().collect();
    if distinct.len() > 1 {
        let list: Vec<String> = hashes.iter().map(|(k, v)| format!("{k}={}", short(v))).collect();
        return Err(CliError::Stage(format!("refusing mixed-hash inputs: {}", list.join(", "))));
    }
    ctx.step("report", &[ArtifactDir::Report], |ctx| {
        let out = ctx.dir(ArtifactDir::Report);
        let ev_dir = ctx.dir(ArtifactDir::Evaluation);
        let sw_dir = ctx.dir(ArtifactDir::Sweep);
        let copy = |from: &Path, name: &str| -> Result<(), CliError> {
            std::fs::copy(from, out.join(name))
                .map(|_| ())
                .map_err(|e| CliError::Stage(format!("{}: {e}", from.display())))
        };
        let mut files = Vec::new();
        for t in TABLE_FILES {
            copy(&ev_dir.join(t), t)?;
            files.push(t.to_string());
        }
        for f in std::fs::read_dir(&out).map_err(|e| CliError::Stage(e.to_string()))?.flatten() {
            if f.file_name().to_string_lossy().starts_with("fig9_") {
                let _ = std::fs::remove_file(f.path());
            }
        }
        let mut figs: Vec<String> = std::fs::read_dir(&sw_dir)
            .map_err(|e| CliError::Stage(e.to_string()))?
            .flatten()
            .map(|f| f.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("fig9_"))
            .collect();
        figs.sort();
        figs.push(SENSITIVITY_FILE.into());
        for f in &figs {
            copy(&sw_dir.join(f), f)?;
            files.push(f.clone());
        }

        let ev: EvaluationReport = read_json(&ev_dir.join(EVALUATION_FILE))?;
        let curves: Vec<SweepCurve> = read_json(&sw_dir.join(CURVES_FILE))?;
        let md = [
            render_markdown("Unperturbed images", &rows(&ev.unperturbed, false)),
            render_markdown("Black-box adversarial images", &rows(&ev.black_box, true)),
            render_markdown("White-box adversarial images", &rows(&ev.white_box, true)),
        ]
        .join("\n");
        std::fs::write(out.join("report.md"), md).map_err(|e| CliError::Stage(e.to_string()))?;
        files.push("report.md".into());

        let check = desk_check(&ev);
        write_json(&out.join(DESK_CHECK_FILE), &check)?;
        files.push(DESK_CHECK_FILE.into());
        let paper = paper_checks(&ev, &curves);
        write_json(&out.join(PAPER_CHECK_FILE), &paper)?;
        files.push(PAPER_CHECK_FILE.into());

        let fw = ctx.dir(ArtifactDir::Framework);
        let cl = ctx.dir(ArtifactDir::Classifiers);
        let mut checksums = Map::new();
        for f in [C1_FILE, C2_FILE, BEST_FILE] {
            checksums.insert(format!("framework/{f}"), json!(file_sha256(&fw.join(f))?));
        }
        let mut cl_files = vec![SURROGATE_FILE.to_string()];
        cl_files.extend(ctx.baselines().iter().map(paired_file));
        for f in cl_files {
            checksums.insert(format!("classifiers/{f}"), json!(file_sha256(&cl.join(&f))?));
        }
        for f in &files {
            checksums.insert(format!("report/{f}"), json!(file_sha256(&out.join(f))?));
        }
        let argan_delay = ev.delay.get(DefenseSpec::ArGan.name());
        let mut extra = Map::new();
        extra.insert("config_hashes".into(), json!(hashes));
        extra.insert(
            "seeds".into(),
            json!({
                "seed": ctx.cfg.seed,
                "split_seed": ctx.cfg.dataset.split_seed,
                "synthetic_seed": ctx.cfg.dataset.synthetic_seed,
                "gan_seeds": ctx.cfg.gan.seeds,
                "reconstruction_seed": ctx.cfg.reconstruction.seed,
                "surrogate_seed": ctx.cfg.attacks.surrogate_seed,
            }),
        );
        extra.insert(
            "codec_ids".into(),
            json!({"jpeg_compression": JPEG_CODEC_ID, "archive": ARCHIVE_CODEC_ID}),
        );
        extra.insert("checksums".into(), Value::Object(checksums));
        extra.insert(
            "delay".into(),
            json!({
                "argan_mean_seconds": argan_delay.map(|d| d.mean_seconds),
                "argan_work_units": argan_delay.and_then(|d| d.work_units),
                "L": ctx.cfg.reconstruction.gradient_steps,
                "R": ctx.cfg.reconstruction.random_restarts,
                "published_reference_seconds": PUBLISHED_DELAY_SECONDS,
                "published_reference_work_units": (OPERATING_POINT.0 * OPERATING_POINT.1) as u64,
            }),
        );
        extra.insert("desk_check_passed".into(), json!(check.passed));
        Ok((files, extra))
    })
}

/// Every stage in order; each is a no-op if already current.
pub fn reproduce(ctx: &Ctx) -> Result<(), CliError> {
    ingest(ctx)?;
    train_classifiers(ctx)?;
    train_gan(ctx)?;
    select_generator(ctx)?;
    build_argan(ctx)?;
    attack(ctx)?;
    evaluate(ctx)?;
    sweep(ctx)?;
    report(ctx)?;
    Ok(())
}
