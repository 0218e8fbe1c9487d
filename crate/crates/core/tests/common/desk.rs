//! Tiny end-to-end configurations for the trainer and CLI tests.

use std::path::Path;

use glitchloc::cli::RunConfig;
use glitchloc::model::ModelConfig;
use glitchloc::postproc::HeadConfig;
use glitchloc::synthgen::{generate_dataset, GeneratedDataset, GeneratorConfig, SentimentLexicon};
use glitchloc::trainer::TrainConfig;

pub fn tiny_generator(seed: u64) -> GeneratorConfig {
    let m = ModelConfig::tiny();
    GeneratorConfig {
        n_train: 12,
        n_validation: 4,
        n_test: 4,
        min_frames: 4,
        max_frames: m.t,
        c_v: m.c_v,
        f_m: m.f_m,
        tau_a: m.tau_a,
        t: m.t,
        d: m.d,
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        head: HeadConfig {
            epochs: 40,
            ..HeadConfig::default()
        },
        ..TrainConfig::default()
    }
}

pub fn tiny_dataset(seed: u64) -> GeneratedDataset {
    generate_dataset(&tiny_generator(seed), &SentimentLexicon::bundled()).unwrap()
}

pub fn tiny_run(root: &Path, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig {
        generator: tiny_generator(3),
        model: ModelConfig::tiny(),
        train: tiny_train(epochs),
        ..RunConfig::default()
    };
    cfg.paths.data = root.join("data");
    cfg.paths.run = root.join("run");
    cfg.validate().unwrap();
    cfg
}
