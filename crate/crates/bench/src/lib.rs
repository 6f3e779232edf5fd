//! Shared fixtures for the criterion benchmarks under `benches/`.

use attrbench_core::backend::{fit_reference, FitOptions};
use attrbench_core::datasets::fixtures;
use attrbench_core::{CanonicalInstance, Dataset, ReferenceClassifier};

/// Reference model fitted on the bundled movie reviews.
pub fn movies() -> (Dataset, ReferenceClassifier) {
    let dataset = fixtures::movies_mini();
    let model = fit_reference(&dataset, FitOptions::default()).expect("bundled fixture fits");
    (dataset, model)
}

/// Synthetic review of roughly `n_words` words.
pub fn long_review(n_words: usize) -> CanonicalInstance {
    const WORDS: [&str; 8] = [
        "the",
        "film",
        "is",
        "wonderful",
        "but",
        "dull",
        "acting",
        "plot",
    ];
    let text: Vec<&str> = (0..n_words)
        .map(|i| WORDS[(i * 5 + i / 3) % WORDS.len()])
        .collect();
    CanonicalInstance::single("long", text.join(" "), 1, None)
}
