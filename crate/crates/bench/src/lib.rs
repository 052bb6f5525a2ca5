//! Deterministic inputs shared by the criterion benches.

use argan_core::dataset::{generate_synthetic_dataset, ImageTensor};
use argan_core::models::{ClassifierArch, ClassifierModel, GeneratorArch, GeneratorModel};
use argan_core::tensor::Tensor;

/// `n` synthetic sign images, alternating classes.
pub fn images(n: usize) -> Vec<ImageTensor> {
    let per_class = n.div_ceil(2).max(1) as i64;
    let ds = generate_synthetic_dataset(per_class, 7).expect("positive count");
    ds.items.into_iter().take(n).map(|(x, _)| x).collect()
}

/// A tensor of the given shape filled with a fixed smooth pattern.
pub fn pattern(shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect())
}

/// The desk-profile classifier.
pub fn desk_classifier() -> ClassifierModel {
    ClassifierModel::new(ClassifierArch { base_width: 8 }, 0)
}

/// The desk-profile generator.
pub fn desk_generator() -> GeneratorModel {
    GeneratorModel::new(
        GeneratorArch {
            latent_dim: 100,
            base_width: 16,
        },
        0,
    )
    .expect("valid architecture")
}
