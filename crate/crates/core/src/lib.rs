pub mod attacks;
pub mod autograd;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod evaluation;
pub mod gan_training;
pub mod models;
pub mod nn;
pub mod reconstruction;
pub mod rng;
pub mod tensor;
pub mod training_framework;

pub use error::{Error, Result};

pub use attacks::{AttackConfig, AttackFamily, ThreatModel};
pub use dataset::{ClassLabel, ImageTensor, LabeledDataset, RangeTag, Split};
pub use defenses::{DefensePipeline, DefenseSpec};
pub use evaluation::MetricSet;
pub use models::{ClassifierModel, CriticModel, GeneratorModel};
pub use reconstruction::ReconstructionConfig;
