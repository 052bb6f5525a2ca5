//! Metrics, the defense-versus-attack comparison tables, perturbation-budget
//! sweeps and per-image delay measurement.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{attack_dataset, AttackConfig, AttackFamily, AttackResult, ThreatModel};
use crate::dataset::{ClassLabel, ImageTensor, LabeledDataset, Provenance, RangeTag, PIXELS};
use crate::defenses::{apply_defense_batch, apply_defense_pipeline, DefensePipeline};
use crate::error::{invalid, Error, Result};
use crate::models::ClassifierModel;
use crate::rng::sha256_hex;

/// Budgets swept for each attack family that has one.
pub const DEFAULT_EPSILON_GRID: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub accuracy_global: f64,
    /// `confusion_matrix[true][predicted]`
    pub confusion_matrix: [[u64; 2]; 2],
    pub support_per_class: [u64; 2],
    /// Some per-class metric had a zero denominator and was set to 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Global accuracy plus per-class precision, recall and F1 averaged with
/// true-class support as weights.
pub fn compute_metrics(predictions: &[ClassLabel], labels: &[ClassLabel]) -> Result<MetricSet> {
    if predictions.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("cannot score an empty prediction set"));
    }
    let mut cm = [[0u64; 2]; 2];
    for (p, y) in predictions.iter().zip(labels) {
        cm[y.index()][p.index()] += 1;
    }
    confusion_metrics(cm)
}

/// Metrics from a confusion matrix indexed `[true][predicted]`.
pub fn confusion_metrics(cm: [[u64; 2]; 2]) -> Result<MetricSet> {
    let total: u64 = cm.iter().flatten().sum();
    if total == 0 {
        return Err(invalid("confusion matrix is empty"));
    }
    let support = [cm[0][0] + cm[0][1], cm[1][0] + cm[1][1]];
    let mut zero = false;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for c in 0..2 {
        let tp = cm[c][c];
        let predicted = cm[0][c] + cm[1][c];
        let prec = ratio(tp, predicted, &mut zero);
        let rec = ratio(tp, support[c], &mut zero);
        let f1 = if prec + rec == 0.0 {
            zero = true;
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        };
        let w = support[c] as f64 / total as f64;
        p += w * prec;
        r += w * rec;
        f += w * f1;
    }
    if zero {
        log::warn!("a per-class metric had a zero denominator and was scored 0");
    }
    Ok(MetricSet {
        precision_weighted: p,
        recall_weighted: r,
        f1_weighted: f,
        accuracy_global: (cm[0][0] + cm[1][1]) as f64 / total as f64,
        confusion_matrix: cm,
        support_per_class: support,
        zero_division: zero,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean_seconds: f64,
    pub p50_seconds: f64,
    pub p95_seconds: f64,
    pub images: usize,
    /// Latent-descent steps per image, where applicable.
    pub work_units: Option<u64>,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall-clock time of the full transform-then-classify path, one image at a
/// time over the first `limit` images. Caches are bypassed.
pub fn measure_delay(pipeline: &DefensePipeline, test_set: &LabeledDataset, limit: Option<usize>) -> Result<DelayStats> {
    let uncached = DefensePipeline {
        cache: None,
        ..*pipeline
    };
    let n = limit.unwrap_or(test_set.len()).min(test_set.len());
    if n == 0 {
        return Err(invalid("delay measurement needs at least one image"));
    }
    let mut times = Vec::with_capacity(n);
    for x in test_set.images().take(n) {
        let start = Instant::now();
        apply_defense_pipeline(x, &uncached)?;
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(DelayStats {
        mean_seconds: times.iter().sum::<f64>() / n as f64,
        p50_seconds: percentile(&times, 0.5),
        p95_seconds: percentile(&times, 0.95),
        images: n,
        work_units: pipeline.work_units(),
    })
}

/// Per-image attack outcome as recorded in attack manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub content_sha256: String,
    pub perturbation_l2: f64,
    pub perturbation_linf: f64,
    pub success: bool,
    pub iterations_used: usize,
}

impl From<(&ImageTensor, &AttackResult)> for AttackRecord {
    fn from((x, r): (&ImageTensor, &AttackResult)) -> Self {
        AttackRecord {
            content_sha256: x.content_hash(),
            perturbation_l2: r.perturbation_l2,
            perturbation_linf: r.perturbation_linf,
            success: r.success,
            iterations_used: r.iterations_used,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdversarialSet {
    pub key: String,
    pub images: LabeledDataset,
    pub records: Vec<AttackRecord>,
}

#[derive(Serialize, Deserialize)]
struct StoredSet {
    labels: Vec<ClassLabel>,
    records: Vec<AttackRecord>,
    exact_hash: String,
}

fn exact_dataset_hash(ds: &LabeledDataset) -> String {
    let mut s = String::new();
    for (x, y) in &ds.items {
        s.push_str(&x.exact_hash());
        s.push_str(y.name());
    }
    sha256_hex(s.as_bytes())
}

/// Adversarial sets keyed by (source set, crafting model, attack config).
/// With a directory, sets are also persisted as raw `f64` pixels.
#[derive(Default)]
pub struct AdversarialCache {
    dir: Option<PathBuf>,
    map: RefCell<HashMap<String, AdversarialSet>>,
    hits: Cell<usize>,
}

impl AdversarialCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(AdversarialCache {
            dir: Some(dir),
            ..Default::default()
        })
    }

    pub fn hits(&self) -> usize {
        self.hits.get()
    }

    pub fn key(source: &LabeledDataset, crafting: &ClassifierModel, config: &AttackConfig) -> String {
        let cfg = serde_json::to_string(config).expect("attack config serializes");
        sha256_hex(format!("{}:{}:{cfg}", exact_dataset_hash(source), crafting.checksum()).as_bytes())
    }

    fn load(&self, key: &str) -> Result<Option<AdversarialSet>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let (bin, meta) = (dir.join(format!("{key}.bin")), dir.join(format!("{key}.json")));
        if !bin.is_file() || !meta.is_file() {
            return Ok(None);
        }
        let stored: StoredSet = serde_json::from_slice(&std::fs::read(&meta)?)?;
        let raw = std::fs::read(&bin)?;
        if raw.len() != stored.labels.len() * PIXELS * 8 {
            return Err(invalid(format!("cached adversarial set {} is truncated", bin.display())));
        }
        let items = raw
            .chunks_exact(PIXELS * 8)
            .zip(&stored.labels)
            .map(|(c, y)| {
                let px = c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
                Ok((ImageTensor::new(px, RangeTag::Unit)?, *y))
            })
            .collect::<Result<Vec<_>>>()?;
        let images = LabeledDataset::new(items, Provenance::Derived);
        if exact_dataset_hash(&images) != stored.exact_hash {
            return Err(invalid(format!("cached adversarial set {} failed its hash check", bin.display())));
        }
        Ok(Some(AdversarialSet {
            key: key.to_string(),
            images,
            records: stored.records,
        }))
    }

    fn store(&self, set: &AdversarialSet) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut raw = Vec::with_capacity(set.images.len() * PIXELS * 8);
        for x in set.images.images() {
            for v in x.pixels() {
                raw.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(dir.join(format!("{}.bin", set.key)), raw)?;
        let stored = StoredSet {
            labels: set.images.labels(),
            records: set.records.clone(),
            exact_hash: exact_dataset_hash(&set.images),
        };
        std::fs::write(dir.join(format!("{}.json", set.key)), serde_json::to_vec_pretty(&stored)?)?;
        Ok(())
    }

    /// Returns the cached set or crafts it white-box against `crafting`.
    /// Success flags refer to `crafting` itself.
    pub fn get_or_craft(
        &self,
        source: &LabeledDataset,
        crafting: &ClassifierModel,
        config: &AttackConfig,
    ) -> Result<AdversarialSet> {
        let key = Self::key(source, crafting, config);
        if let Some(s) = self.map.borrow().get(&key) {
            self.hits.set(self.hits.get() + 1);
            return Ok(s.clone());
        }
        let set = match self.load(&key)? {
            Some(s) => {
                self.hits.set(self.hits.get() + 1);
                s
            }
            None => {
                let (images, results) = attack_dataset(source, crafting, crafting, config)?;
                let records = source.images().zip(&results).map(AttackRecord::from).collect();
                let s = AdversarialSet { key: key.clone(), images, records };
                self.store(&s)?;
                s
            }
        };
        self.map.borrow_mut().insert(key, set.clone());
        Ok(set)
    }
}

/// An attack to run before the defense. Black-box attacks are crafted on
/// `surrogate`; white-box attacks on the defense's own classifier, fed the
/// raw input.
#[derive(Clone)]
pub struct AttackSetup<'a> {
    pub config: AttackConfig,
    pub surrogate: Option<&'a ClassifierModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseEvaluation {
    pub defense: String,
    pub attack: Option<AttackFamily>,
    pub threat_model: Option<ThreatModel>,
    pub epsilon: Option<f64>,
    pub metrics: MetricSet,
    pub mean_delay_seconds: f64,
    pub work_units: Option<u64>,
    /// Key of the adversarial set used, if any.
    pub adversarial_set: Option<String>,
}

/// The input set a defense sees under `attack` (the clean set without one).
pub fn attacked_inputs(
    pipeline: &DefensePipeline,
    attack: Option<&AttackSetup>,
    test_set: &LabeledDataset,
    cache: &AdversarialCache,
) -> Result<(LabeledDataset, Option<String>)> {
    let Some(a) = attack else {
        return Ok((test_set.clone(), None));
    };
    let crafting = match a.config.threat_model {
        ThreatModel::WhiteBox => pipeline.classifier,
        ThreatModel::BlackBox => a
            .surrogate
            .ok_or_else(|| Error::MissingArtifact("surrogate classifier for black-box attacks".into()))?,
    };
    let set = cache.get_or_craft(test_set, crafting, &a.config)?;
    Ok((set.images, Some(set.key)))
}

pub fn evaluate_defense(
    pipeline: &DefensePipeline,
    attack: Option<&AttackSetup>,
    test_set: &LabeledDataset,
    cache: &AdversarialCache,
) -> Result<DefenseEvaluation> {
    pipeline.spec.validate()?;
    let (inputs, key) = attacked_inputs(pipeline, attack, test_set, cache)?;
    let images: Vec<&ImageTensor> = inputs.images().collect();
    let (pred, per_image) = apply_defense_batch(&images, pipeline)?;
    let metrics = compute_metrics(&pred, &test_set.labels())?;
    log::info!(
        "{} under {}: accuracy {:.4}",
        pipeline.spec.name(),
        attack.map_or("no attack".to_string(), |a| format!(
            "{} {} eps={}",
            a.config.threat_model.name(),
            a.config.family.name(),
            a.config.epsilon
        )),
        metrics.accuracy_global
    );
    Ok(DefenseEvaluation {
        defense: pipeline.spec.name().to_string(),
        attack: attack.map(|a| a.config.family),
        threat_model: attack.map(|a| a.config.threat_model),
        epsilon: attack.filter(|a| a.config.family.has_epsilon()).map(|a| a.config.epsilon),
        metrics,
        mean_delay_seconds: per_image.as_secs_f64(),
        work_units: pipeline.work_units(),
        adversarial_set: key,
    })
}

/// Fraction of `test_set` that `target` misclassifies under an attack
/// crafted on `crafting`.
pub fn attack_success_rate(
    test_set: &LabeledDataset,
    crafting: &ClassifierModel,
    target: &ClassifierModel,
    config: &AttackConfig,
    cache: &AdversarialCache,
) -> Result<f64> {
    let set = cache.get_or_craft(test_set, crafting, config)?;
    let imgs: Vec<&ImageTensor> = set.images.images().collect();
    let pred = target.classify(&imgs);
    let wrong = pred.iter().zip(test_set.labels()).filter(|(p, y)| **p != *y).count();
    Ok(wrong as f64 / test_set.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub family: AttackFamily,
    pub threat_model: ThreatModel,
    pub defense: String,
    /// `(ε, accuracy)` with ε strictly increasing.
    pub points: Vec<(f64, f64)>,
}

/// One accuracy curve per (attack, threat model, defense) over `grid`. Each
/// template fixes the family and its non-budget options; budget and threat
/// model are overwritten per point.
pub fn epsilon_sweep(
    templates: &[AttackConfig],
    threats: &[ThreatModel],
    pipelines: &[DefensePipeline],
    grid: &[f64],
    test_set: &LabeledDataset,
    surrogate: Option<&ClassifierModel>,
    cache: &AdversarialCache,
) -> Result<Vec<SweepCurve>> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("epsilon grid must be non-empty and strictly increasing"));
    }
    if let Some(t) = templates.iter().find(|t| !t.family.has_epsilon()) {
        return Err(invalid(format!("{} has no perturbation budget to sweep", t.family.name())));
    }
    let mut curves = Vec::new();
    for &threat in threats {
        for template in templates {
            let family = template.family;
            for p in pipelines {
                let mut points = Vec::with_capacity(grid.len());
                for &eps in grid {
                    let setup = AttackSetup {
                        config: template.clone().with_epsilon(eps).with_threat(threat),
                        surrogate,
                    };
                    let e = evaluate_defense(p, Some(&setup), test_set, cache)?;
                    points.push((eps, e.metrics.accuracy_global));
                }
                curves.push(SweepCurve {
                    family,
                    threat_model: threat,
                    defense: p.spec.name().to_string(),
                    points,
                });
            }
        }
    }
    Ok(curves)
}

/// One row of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "Attack Type", skip_serializing_if = "Option::is_none")]
    pub attack: Option<String>,
    #[serde(rename = "Defense Method")]
    pub defense: String,
    #[serde(rename = "Precision")]
    pub precision: f64,
    #[serde(rename = "Recall")]
    pub recall: f64,
    #[serde(rename = "F1-score")]
    pub f1_score: f64,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
}

impl From<&DefenseEvaluation> for TableRow {
    fn from(e: &DefenseEvaluation) -> Self {
        TableRow {
            attack: e.attack.map(|a| a.name().to_string()),
            defense: e.defense.clone(),
            precision: e.metrics.precision_weighted,
            recall: e.metrics.recall_weighted,
            f1_score: e.metrics.f1_weighted,
            accuracy: e.metrics.accuracy_global,
        }
    }
}

/// Writes rows as CSV with fractional metric values.
pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Markdown table with percentages to one decimal; the attack column is
/// printed only on the first row of each attack group.
pub fn render_markdown(title: &str, rows: &[TableRow]) -> String {
    let with_attack = rows.iter().any(|r| r.attack.is_some());
    let mut s = format!("### {title}\n\n");
    if with_attack {
        s.push_str("| Attack Type | Defense Method | Precision | Recall | F1-score | Accuracy |\n|---|---|---|---|---|---|\n");
    } else {
        s.push_str("| Defense Method | Precision | Recall | F1-score | Accuracy |\n|---|---|---|---|---|\n");
    }
    let mut last: Option<&str> = None;
    for r in rows {
        if with_attack {
            let a = r.attack.as_deref().unwrap_or("");
            let shown = if last == Some(a) { "" } else { a };
            last = Some(a);
            let _ = write!(s, "| {shown} ");
        }
        let _ = writeln!(
            s,
            "| {} | {:.1}% | {:.1}% | {:.1}% | {:.1}% |",
            r.defense,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1_score,
            100.0 * r.accuracy
        );
    }
    s
}

/// Panel letter of a sweep: black-box panels first, then white-box, each in
/// FGSM, DeepFool, PGD order.
pub fn sweep_panel(family: AttackFamily, threat: ThreatModel) -> Option<char> {
    let f = match family {
        AttackFamily::Fgsm => 0,
        AttackFamily::Deepfool => 1,
        AttackFamily::PgdL2 => 2,
        AttackFamily::CwL2 => return None,
    };
    let t = match threat {
        ThreatModel::BlackBox => 0,
        ThreatModel::WhiteBox => 3,
    };
    Some((b'a' + f + t) as char)
}

#[derive(Serialize)]
struct SweepCsvRow<'a> {
    family: &'a str,
    threat_model: &'a str,
    defense: &'a str,
    epsilon: f64,
    accuracy: f64,
}

/// Writes `fig9_<panel>_<family>_<threat>.csv` per (family, threat) pair and
/// returns the paths written.
pub fn write_sweep_csvs(dir: &Path, curves: &[SweepCurve]) -> Result<Vec<PathBuf>> {
    let mut groups: Vec<((AttackFamily, ThreatModel), Vec<&SweepCurve>)> = Vec::new();
    for c in curves {
        let k = (c.family, c.threat_model);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(c),
            None => groups.push((k, vec![c])),
        }
    }
    let mut paths = Vec::new();
    for ((family, threat), cs) in groups {
        let panel = sweep_panel(family, threat).ok_or_else(|| invalid("C&W has no sweep panel"))?;
        let name = format!(
            "fig9_{panel}_{}_{}.csv",
            family.name().to_lowercase().replace('&', ""),
            threat.name().replace('-', "_")
        );
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for c in cs {
            for &(epsilon, accuracy) in &c.points {
                w.serialize(SweepCsvRow {
                    family: family.name(),
                    threat_model: threat.name(),
                    defense: &c.defense,
                    epsilon,
                    accuracy,
                })?;
            }
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_dataset;
    use crate::defenses::DefenseSpec;
    use crate::models::ClassifierArch;
    use crate::reconstruction::ReconstructionConfig;
    use proptest::prelude::*;

    const S: ClassLabel = ClassLabel::Stop;
    const L: ClassLabel = ClassLabel::SpeedLimit;

    fn from_confusion(cm: [[usize; 2]; 2]) -> (Vec<ClassLabel>, Vec<ClassLabel>) {
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for (t, row) in cm.iter().enumerate() {
            for (q, &n) in row.iter().enumerate() {
                for _ in 0..n {
                    y.push(ClassLabel::from_index(t));
                    p.push(ClassLabel::from_index(q));
                }
            }
        }
        (p, y)
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = vec![S, L, L, S];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.precision_weighted, m.recall_weighted, m.f1_weighted, m.accuracy_global), (1.0, 1.0, 1.0, 1.0));
        assert!(!m.zero_division);
    }

    #[test]
    fn hand_computed_confusion() {
        let (p, y) = from_confusion([[50, 10], [5, 35]]);
        let m = compute_metrics(&p, &y).unwrap();
        assert_eq!(m.accuracy_global, 0.85);
        let precision = 0.6 * (50.0 / 55.0) + 0.4 * (35.0 / 45.0);
        assert!((m.precision_weighted - precision).abs() < 1e-12);
        assert!((m.precision_weighted - 0.8566).abs() < 1e-4);
        let recall = 0.6 * (50.0 / 60.0) + 0.4 * (35.0 / 40.0);
        assert!((m.recall_weighted - recall).abs() < 1e-12);
        assert_eq!(m.support_per_class, [60, 40]);
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        let (p, y) = from_confusion([[50, 0], [50, 0]]);
        let m = compute_metrics(&p, &y).unwrap();
        assert_eq!(m.accuracy_global, 0.5);
        assert!(m.f1_weighted <= 0.34);
        assert!((m.f1_weighted - 1.0 / 3.0).abs() < 1e-12);
        assert!(m.zero_division);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[S], &[S, L]).is_err());
    }

    #[test]
    fn percentiles_use_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn panels_follow_the_published_layout() {
        assert_eq!(sweep_panel(AttackFamily::Fgsm, ThreatModel::BlackBox), Some('a'));
        assert_eq!(sweep_panel(AttackFamily::PgdL2, ThreatModel::BlackBox), Some('c'));
        assert_eq!(sweep_panel(AttackFamily::Deepfool, ThreatModel::WhiteBox), Some('e'));
        assert_eq!(sweep_panel(AttackFamily::CwL2, ThreatModel::WhiteBox), None);
    }

    #[test]
    fn markdown_groups_attack_rows() {
        let row = |a: Option<&str>, d: &str| TableRow {
            attack: a.map(String::from),
            defense: d.into(),
            precision: 0.5,
            recall: 0.25,
            f1_score: 1.0,
            accuracy: 0.949,
        };
        let md = render_markdown("t", &[row(Some("FGSM"), "A"), row(Some("FGSM"), "B"), row(Some("PGD"), "A")]);
        assert_eq!(md.matches("| FGSM |").count(), 1);
        assert!(md.contains("| PGD | A | 50.0% | 25.0% | 100.0% | 94.9% |"));
        let md = render_markdown("t", &[row(None, "A")]);
        assert!(md.contains("| A | 50.0% |"));
    }

    fn fixture() -> (LabeledDataset, ClassifierModel, ReconstructionConfig) {
        let ds = generate_synthetic_dataset(4, 9).unwrap();
        (ds, ClassifierModel::new(ClassifierArch { base_width: 4 }, 3), ReconstructionConfig::default())
    }

    #[test]
    fn zero_budget_attack_equals_no_attack() {
        let (ds, clf, recon) = fixture();
        let p = DefensePipeline {
            spec: DefenseSpec::GaussianAugmentation { sigma: 0.0 },
            classifier: &clf,
            generator: None,
            reconstruction: &recon,
            cache: None,
            seed: 0,
        };
        let cache = AdversarialCache::in_memory();
        let clean = evaluate_defense(&p, None, &ds, &cache).unwrap();
        let setup = AttackSetup {
            config: AttackConfig::new(AttackFamily::Fgsm).with_epsilon(0.0),
            surrogate: None,
        };
        let attacked = evaluate_defense(&p, Some(&setup), &ds, &cache).unwrap();
        assert_eq!(clean.metrics, attacked.metrics);
        let bb = AttackSetup {
            config: setup.config.clone().with_threat(ThreatModel::BlackBox),
            surrogate: None,
        };
        assert!(matches!(evaluate_defense(&p, Some(&bb), &ds, &cache), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn cached_sets_are_reused_and_survive_a_round_trip() {
        let (ds, clf, _) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let cfg = AttackConfig::new(AttackFamily::PgdL2).with_epsilon(0.05);
        let cache = AdversarialCache::on_disk(dir.path()).unwrap();
        let a = cache.get_or_craft(&ds, &clf, &cfg).unwrap();
        let b = cache.get_or_craft(&ds, &clf, &cfg).unwrap();
        assert_eq!(cache.hits(), 1);
        assert_eq!(a.images.content_hash(), b.images.content_hash());
        let fresh = AdversarialCache::on_disk(dir.path()).unwrap();
        let c = fresh.get_or_craft(&ds, &clf, &cfg).unwrap();
        assert_eq!(fresh.hits(), 1);
        assert_eq!(exact_dataset_hash(&a.images), exact_dataset_hash(&c.images));
        assert_eq!(a.records, c.records);
    }

    #[test]
    fn sweep_grids_are_validated_and_deterministic() {
        let (ds, clf, recon) = fixture();
        let p = DefensePipeline {
            spec: DefenseSpec::FeatureSqueezing { bit_depth: 4 },
            classifier: &clf,
            generator: None,
            reconstruction: &recon,
            cache: None,
            seed: 0,
        };
        let cache = AdversarialCache::in_memory();
        let fam = [AttackConfig::new(AttackFamily::Fgsm)];
        let wb = [ThreatModel::WhiteBox];
        assert!(epsilon_sweep(&fam, &wb, &[p], &[0.1, 0.05], &ds, None, &cache).is_err());
        assert!(epsilon_sweep(&[AttackConfig::new(AttackFamily::CwL2)], &wb, &[p], &[0.1], &ds, None, &cache).is_err());
        let a = epsilon_sweep(&fam, &wb, &[p], &DEFAULT_EPSILON_GRID, &ds, None, &cache).unwrap();
        let b = epsilon_sweep(&fam, &wb, &[p], &DEFAULT_EPSILON_GRID, &ds, None, &AdversarialCache::in_memory()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].points.len(), 4);
        let dir = tempfile::tempdir().unwrap();
        let paths = write_sweep_csvs(dir.path(), &a).unwrap();
        assert!(paths[0].ends_with("fig9_d_fgsm_white_box.csv"));
    }

    #[test]
    fn delay_stats_are_finite_and_ordered() {
        let (ds, clf, recon) = fixture();
        let p = DefensePipeline {
            spec: DefenseSpec::MedianSmoothing { window: 3 },
            classifier: &clf,
            generator: None,
            reconstruction: &recon,
            cache: None,
            seed: 0,
        };
        let d = measure_delay(&p, &ds, Some(5)).unwrap();
        assert_eq!(d.images, 5);
        assert!(d.mean_seconds.is_finite() && d.mean_seconds >= 0.0);
        assert!(d.p50_seconds <= d.p95_seconds);
        assert_eq!(d.work_units, None);
    }

    #[test]
    fn table_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![TableRow {
            attack: Some("PGD".into()),
            defense: "AR-GAN".into(),
            precision: 0.934,
            recall: 0.933,
            f1_score: 0.933,
            accuracy: 0.933,
        }];
        write_table_csv(&path, &rows).unwrap();
        assert_eq!(read_table_csv(&path).unwrap(), rows);
        assert!(matches!(read_table_csv(&dir.path().join("nope.csv")), Err(Error::MissingArtifact(_))));
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_invariant(
            pairs in prop::collection::vec((0usize..2, 0usize..2), 1..60),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let p: Vec<ClassLabel> = pairs.iter().map(|x| ClassLabel::from_index(x.0)).collect();
            let y: Vec<ClassLabel> = pairs.iter().map(|x| ClassLabel::from_index(x.1)).collect();
            let mut shuffled: Vec<(ClassLabel, ClassLabel)> = p.iter().copied().zip(y.iter().copied()).collect();
            shuffled.shuffle(&mut crate::rng::seeded(seed));
            let (p2, y2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            let a = compute_metrics(&p, &y).unwrap();
            let b = compute_metrics(&p2, &y2).unwrap();
            prop_assert_eq!(a.confusion_matrix, b.confusion_matrix);
            prop_assert_eq!(a.accuracy_global, b.accuracy_global);
            prop_assert_eq!(a.f1_weighted, b.f1_weighted);
            for v in [a.precision_weighted, a.recall_weighted, a.f1_weighted, a.accuracy_global] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
