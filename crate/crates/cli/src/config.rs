//! Experiment configuration: profile presets, TOML overlay, validation,
//! canonical hashing and the annotated dump.

use std::path::{Path, PathBuf};

use argan_core::attacks::{AttackConfig, AttackFamily, ThreatModel};
use argan_core::defenses::DefenseSpec;
use argan_core::evaluation::DEFAULT_EPSILON_GRID;
use argan_core::gan_training::GanTrainConfig;
use argan_core::models::{ClassifierArch, CriticArch, GeneratorArch};
use argan_core::reconstruction::ReconstructionConfig;
use argan_core::training_framework::{ClassifierTrainConfig, FrameworkConfig};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Full-size models on the LISA subset.
    Paper,
    /// Narrow models on synthetic data, sized for a CPU in minutes.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Lisa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub n_per_class: i64,
    pub synthetic_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lisa_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lisa_manifest: Option<PathBuf>,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkOptions {
    pub retrain_threshold: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOptions {
    pub epsilon: f64,
    pub deepfool_overshoot: f64,
    pub deepfool_max_iterations: usize,
    pub cw_confidence_weight: f64,
    pub cw_learning_rate: f64,
    pub cw_max_iterations: usize,
    pub pgd_max_iterations: usize,
    /// Seed of the black-box surrogate classifier.
    pub surrogate_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseOptions {
    pub gaussian_sigma: f64,
    pub jpeg_quality: u8,
    pub squeeze_bit_depth: u32,
    pub median_window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationOptions {
    pub epsilon_grid: Vec<f64>,
    /// Test images attacked for the comparison tables; all when unset.
    /// Unperturbed rows always use the whole test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_images: Option<usize>,
    /// Test images used by the budget sweeps; all when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_images: Option<usize>,
    /// Images timed one at a time for the delay statistics.
    pub delay_images: usize,
    pub sensitivity_steps: Vec<usize>,
    pub sensitivity_restarts: Vec<usize>,
    /// Test images used by the (L, R) sensitivity grid; all when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity_images: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Overridden by `--out`; excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub classifier: ClassifierTrainConfig,
    pub gan: GanTrainConfig,
    pub reconstruction: ReconstructionConfig,
    pub framework: FrameworkOptions,
    pub attacks: AttackOptions,
    pub defenses: DefenseOptions,
    pub evaluation: EvaluationOptions,
}

impl ExperimentConfig {
    /// Every default of the named profile.
    pub fn preset(profile: Profile) -> Self {
        let fw = FrameworkConfig::default();
        let paper = ExperimentConfig {
            profile: Profile::Paper,
            seed: 0,
            output_dir: None,
            dataset: DatasetConfig {
                source: DataSource::Lisa,
                n_per_class: 250,
                synthetic_seed: 1,
                lisa_dir: None,
                lisa_manifest: None,
                split_seed: 42,
            },
            classifier: ClassifierTrainConfig::default(),
            gan: GanTrainConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            framework: FrameworkOptions {
                retrain_threshold: fw.retrain_threshold,
                fine_tune_epochs: fw.fine_tune_epochs,
                fine_tune_learning_rate: fw.fine_tune_learning_rate,
            },
            attacks: AttackOptions {
                epsilon: 0.1,
                deepfool_overshoot: 0.02,
                deepfool_max_iterations: 50,
                cw_confidence_weight: 1.0,
                cw_learning_rate: 0.01,
                cw_max_iterations: 10,
                pgd_max_iterations: 100,
                surrogate_seed: 1000,
            },
            defenses: DefenseOptions {
                gaussian_sigma: 1.0,
                jpeg_quality: 50,
                squeeze_bit_depth: 4,
                median_window: 3,
            },
            evaluation: EvaluationOptions {
                epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
                attack_images: None,
                sweep_images: None,
                delay_images: 20,
                sensitivity_steps: vec![250, 750, 1250, 1750, 2250, 2750],
                sensitivity_restarts: vec![1, 5, 10, 15, 20, 25],
                sensitivity_images: None,
            },
        };
        match profile {
            Profile::Paper => paper,
            Profile::Desk => ExperimentConfig {
                profile: Profile::Desk,
                dataset: DatasetConfig {
                    source: DataSource::Synthetic,
                    ..paper.dataset
                },
                classifier: ClassifierTrainConfig {
                    epochs: 10,
                    arch: ClassifierArch { base_width: 8 },
                    ..paper.classifier
                },
                gan: GanTrainConfig {
                    epochs: 10,
                    batch_size: 16,
                    learning_rate: 2e-4,
                    checkpoint_interval: 10,
                    seeds: vec![0, 1],
                    generator: GeneratorArch {
                        latent_dim: 100,
                        base_width: 16,
                    },
                    critic: CriticArch { base_width: 8 },
                    ..paper.gan
                },
                reconstruction: ReconstructionConfig {
                    gradient_steps: 200,
                    random_restarts: 4,
                    ..paper.reconstruction
                },
                attacks: AttackOptions {
                    pgd_max_iterations: 20,
                    ..paper.attacks
                },
                evaluation: EvaluationOptions {
                    attack_images: Some(50),
                    sweep_images: Some(20),
                    delay_images: 5,
                    sensitivity_steps: vec![50, 200],
                    sensitivity_restarts: vec![1, 4],
                    sensitivity_images: Some(30),
                    ..paper.evaluation
                },
                ..paper
            },
        }
    }

    /// Profile preset overlaid with `text` (TOML). The profile comes from
    /// `profile` if given, else from the text's own `profile` key.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self, CliError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(e.to_string()))?;
        let from_text = match user.get("profile") {
            Some(v) => Some(
                Profile::deserialize(v.clone()).map_err(|e| CliError::Validation(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let profile = profile.or(from_text).unwrap_or(Profile::Paper);
        let mut base = toml::Table::try_from(Self::preset(profile)).expect("presets serialize");
        merge(&mut base, user);
        base.insert("profile".into(), toml::Value::try_from(profile).expect("profile serializes"));
        let cfg: ExperimentConfig =
            ExperimentConfig::deserialize(base).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads, overlays and validates a config file (or the bare preset).
    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let cfg = Self::from_toml(&text, profile)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: argan_core::Result<()>| r.map_err(|e| CliError::Validation(e.to_string()));
        v(self.framework_config().validate())?;
        for a in self.attack_configs(ThreatModel::WhiteBox) {
            v(a.validate())?;
        }
        for d in self.defense_specs() {
            v(d.validate())?;
        }
        let g = &self.evaluation.epsilon_grid;
        if g.is_empty() || g.windows(2).any(|w| !(w[0] < w[1])) || g.iter().any(|e| !(*e >= 0.0)) {
            return Err(CliError::Validation(
                "evaluation.epsilon_grid must be non-empty, non-negative and strictly increasing".into(),
            ));
        }
        if self.evaluation.sensitivity_steps.is_empty() || self.evaluation.sensitivity_restarts.is_empty() {
            return Err(CliError::Validation("sensitivity grids must be non-empty".into()));
        }
        for (key, n) in [
            ("attack_images", self.evaluation.attack_images),
            ("sweep_images", self.evaluation.sweep_images),
            ("sensitivity_images", self.evaluation.sensitivity_images),
        ] {
            if n == Some(0) {
                return Err(CliError::Validation(format!("evaluation.{key} must be >= 1")));
            }
        }
        if self.evaluation.sensitivity_restarts.contains(&0) {
            return Err(CliError::Validation("evaluation.sensitivity_restarts entries must be >= 1".into()));
        }
        match self.dataset.source {
            DataSource::Synthetic if self.dataset.n_per_class < 3 => {
                return Err(CliError::Validation("dataset.n_per_class must be >= 3".into()));
            }
            DataSource::Lisa => {
                for (key, p) in [("dataset.lisa_dir", &self.dataset.lisa_dir), ("dataset.lisa_manifest", &self.dataset.lisa_manifest)] {
                    match p {
                        None => return Err(CliError::Validation(format!("{key} is required for the LISA source"))),
                        Some(p) if !p.exists() => {
                            return Err(CliError::Validation(format!("{key}: path {} does not exist", p.display())))
                        }
                        _ => {}
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys, no output directory).
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn framework_config(&self) -> FrameworkConfig {
        FrameworkConfig {
            classifier: self.classifier.clone(),
            gan: self.gan.clone(),
            reconstruction: self.reconstruction.clone(),
            seed: self.seed,
            retrain_threshold: self.framework.retrain_threshold,
            fine_tune_epochs: self.framework.fine_tune_epochs,
            fine_tune_learning_rate: self.framework.fine_tune_learning_rate,
        }
    }

    pub fn attack_config(&self, family: AttackFamily, threat: ThreatModel) -> AttackConfig {
        let a = &self.attacks;
        let mut c = AttackConfig::new(family).with_epsilon(a.epsilon).with_threat(threat);
        c.overshoot = a.deepfool_overshoot;
        c.confidence_weight = a.cw_confidence_weight;
        match family {
            AttackFamily::Fgsm => {}
            AttackFamily::Deepfool => c.max_iterations = Some(a.deepfool_max_iterations),
            AttackFamily::CwL2 => {
                c.max_iterations = Some(a.cw_max_iterations);
                c.step_size = Some(a.cw_learning_rate);
            }
            AttackFamily::PgdL2 => c.max_iterations = Some(a.pgd_max_iterations),
        }
        c
    }

    /// The four attack families in table order.
    pub fn attack_configs(&self, threat: ThreatModel) -> Vec<AttackConfig> {
        [AttackFamily::Fgsm, AttackFamily::Deepfool, AttackFamily::CwL2, AttackFamily::PgdL2]
            .into_iter()
            .map(|f| self.attack_config(f, threat))
            .collect()
    }

    /// The four baselines then AR-GAN, in table order.
    pub fn defense_specs(&self) -> Vec<DefenseSpec> {
        let d = &self.defenses;
        vec![
            DefenseSpec::GaussianAugmentation { sigma: d.gaussian_sigma },
            DefenseSpec::JpegCompression { quality: d.jpeg_quality },
            DefenseSpec::FeatureSqueezing { bit_depth: d.squeeze_bit_depth },
            DefenseSpec::MedianSmoothing { window: d.median_window },
            DefenseSpec::ArGan,
        ]
    }

    /// TOML with a provenance comment on every key.
    pub fn dump(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        let mut out = format!(
            "# argan experiment config, profile {:?}, hash {}\n# published = value stated for the original system; chosen = default picked here\n\n",
            self.profile,
            self.hash()
        );
        let mut section = String::new();
        for line in body.lines() {
            let t = line.trim();
            if t.starts_with('[') {
                section = t.trim_matches(|c| c == '[' || c == ']').to_string();
                out.push_str(line);
            } else if let Some((key, _)) = t.split_once(" = ") {
                let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
                out.push_str(&format!("{line}  # {}", provenance(&full)));
            } else {
                out.push_str(line);
            }
            out.push('\n');
        }
        out
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Where each default comes from.
pub fn provenance(key: &str) -> &'static str {
    match key {
        "gan.gradient_penalty_weight" => "published: gradient-penalty weight 10",
        "reconstruction.gradient_steps" => "published: 2,250 descent steps (desk preset 200)",
        "reconstruction.random_restarts" => "published: 20 restarts (desk preset 4)",
        "attacks.epsilon" => "published: perturbation magnitude 0.1",
        "attacks.cw_learning_rate" => "published: C&W learning rate 0.01",
        "attacks.cw_max_iterations" => "published: C&W 10 iterations",
        "attacks.pgd_max_iterations" => "published: PGD 100 iterations (desk preset 20)",
        "defenses.gaussian_sigma" => "published: sigma 1",
        "defenses.jpeg_quality" => "published: quality 50",
        "defenses.squeeze_bit_depth" => "published: 4 bits",
        "defenses.median_window" => "published: 3x3 window",
        "evaluation.epsilon_grid" => "published: 0.05 to 0.20 in steps of 0.05",
        "dataset.split_seed" => "chosen: fixed shuffle seed; 60/20/20 fractions are published",
        "attacks.deepfool_overshoot" => "chosen: common DeepFool overshoot",
        "attacks.cw_confidence_weight" => "chosen: fixed c without search",
        "gan.critic_steps_per_generator_step" | "gan.beta1" | "gan.beta2" => "chosen: reference WGAN-GP recipe",
        "gan.learning_rate" => "chosen: reference WGAN-GP recipe 1e-4 (desk preset 2e-4)",
        "reconstruction.step_size" => "chosen: not published",
        k if k.starts_with("gan.generator") || k.starts_with("gan.critic") || k.starts_with("classifier.arch") => {
            "chosen: width of the published layer plan (desk presets are narrower)"
        }
        _ => "chosen",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_fully_defaulted_preset() {
        let cfg = ExperimentConfig::from_toml("", Some(Profile::Desk)).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(Profile::Desk));
        let paper = ExperimentConfig::from_toml("", None).unwrap();
        assert_eq!(paper.gan.gradient_penalty_weight, 10.0);
        assert_eq!(paper.reconstruction.gradient_steps, 2250);
        assert_eq!(paper.reconstruction.random_restarts, 20);
        assert_eq!(paper.attacks.epsilon, 0.1);
        assert_eq!(paper.defense_specs(), DefenseSpec::standard_set());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::from_toml("[attacks]\nepsilom = 0.1\n", Some(Profile::Desk)).unwrap_err();
        assert!(err.to_string().contains("epsilom"), "{err}");
        let err = ExperimentConfig::from_toml("seeed = 3\n", None).unwrap_err();
        assert!(err.to_string().contains("seeed"), "{err}");
    }

    #[test]
    fn type_mismatch_is_a_validation_error() {
        let err = ExperimentConfig::from_toml("seed = \"x\"\n", None).unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn hash_ignores_key_order_and_output_dir() {
        let a = ExperimentConfig::from_toml("seed = 3\n[attacks]\nepsilon = 0.2\ncw_max_iterations = 5\n", Some(Profile::Desk)).unwrap();
        let b = ExperimentConfig::from_toml(
            "output_dir = \"elsewhere\"\n[attacks]\ncw_max_iterations = 5\nepsilon = 0.2\n\n[dataset]\nsplit_seed = 42\n",
            Some(Profile::Desk),
        )
        .unwrap();
        let b = ExperimentConfig { seed: 3, ..b };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 4, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn profile_key_in_file_selects_the_preset() {
        let cfg = ExperimentConfig::from_toml("profile = \"desk\"\n", None).unwrap();
        assert_eq!(cfg.reconstruction.gradient_steps, 200);
        let forced = ExperimentConfig::from_toml("profile = \"desk\"\n", Some(Profile::Paper)).unwrap();
        assert_eq!(forced.profile, Profile::Paper);
    }

    #[test]
    fn lisa_paths_are_checked() {
        let err = ExperimentConfig::load(None, Some(Profile::Paper)).unwrap_err();
        assert!(err.to_string().contains("dataset.lisa_dir"), "{err}");
        let cfg = ExperimentConfig::from_toml("[dataset]\nlisa_dir = \"/nonexistent/frames\"\nlisa_manifest = \"/nonexistent/m.csv\"\n", None)
            .unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("does not exist"));
    }

    #[test]
    fn dump_round_trips_and_annotates_every_key() {
        let cfg = ExperimentConfig::preset(Profile::Desk);
        let text = cfg.dump();
        for line in text.lines().filter(|l| !l.starts_with('#') && l.contains(" = ")) {
            assert!(line.contains("  # "), "unannotated line: {line}");
        }
        assert!(text.contains("gradient_penalty_weight = 10.0  # published"));
        let back = ExperimentConfig::from_toml(&text, None).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn attack_configs_carry_the_options() {
        let cfg = ExperimentConfig::preset(Profile::Paper);
        let cw = cfg.attack_config(AttackFamily::CwL2, ThreatModel::BlackBox);
        assert_eq!(cw.iterations(), 10);
        assert_eq!(cw.step(), 0.01);
        assert_eq!(cw.threat_model, ThreatModel::BlackBox);
        assert_eq!(cfg.attack_config(AttackFamily::PgdL2, ThreatModel::WhiteBox).iterations(), 100);
        assert_eq!(cfg.attack_configs(ThreatModel::WhiteBox).len(), 4);
    }
}
