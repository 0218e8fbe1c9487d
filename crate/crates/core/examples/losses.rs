//! The four training losses of a small batch and one Adam step on them.
//!
//! cargo run --example losses

use glitchloc::annotations::Split;
use glitchloc::losses::{total_loss, LossWeights, SampleTargets};
use glitchloc::model::ModelConfig;
use glitchloc::synthgen::{generate_dataset, FeatureClip, GeneratorConfig, SentimentLexicon};
use glitchloc::trainer::{adam_step, batch_gradients, AdamConfig, TrainState};

fn main() -> glitchloc::Result<()> {
    let gen = GeneratorConfig {
        n_train: 8,
        n_validation: 0,
        n_test: 0,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&gen, &SentimentLexicon::bundled())?;
    let cfg = ModelConfig::default();
    let clips: Vec<&FeatureClip> = data.split(Split::Train).collect();
    let targets = clips
        .iter()
        .map(|c| SampleTargets::from_record(&c.record, cfg.d, cfg.t))
        .collect::<glitchloc::Result<Vec<_>>>()?;
    let batch: Vec<_> = clips.iter().copied().zip(&targets).collect();

    let w = LossWeights::default();
    let mut state = TrainState::new(cfg, 11)?;
    for step in 0..3 {
        let (parts, grads) = batch_gradients(&state.model, &batch, &w)?;
        for (name, v) in parts.names() {
            print!("{name} {v:.5}  ");
        }
        println!("total {:.5}  (step {step})", total_loss(&parts, &w)?);
        adam_step(state.model.params_mut().arrays_mut(), &grads, &mut state.adam, &AdamConfig::default())?;
    }
    Ok(())
}
