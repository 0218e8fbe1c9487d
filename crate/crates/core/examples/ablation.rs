//! Trains one model per loss subset and prints test AP/AR for each.
//!
//! cargo run --example ablation -- [epochs] [n_train]

use glitchloc::annotations::Split;
use glitchloc::model::ModelConfig;
use glitchloc::synthgen::{generate_dataset, FeatureClip, GeneratorConfig, SentimentLexicon};
use glitchloc::trainer::{run_ablation, LossSet, TrainConfig};

fn main() -> glitchloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(10, |a| a.parse().expect("epoch count"));
    let n_train = args.next().map_or(200, |a| a.parse().expect("training clip count"));
    let gen = GeneratorConfig {
        n_train,
        n_validation: 50,
        n_test: 50,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&gen, &SentimentLexicon::bundled())?;
    let split = |s| data.split(s).collect::<Vec<&FeatureClip>>();
    let (tr, va, te) = (split(Split::Train), split(Split::Validation), split(Split::Test));
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };

    let results = run_ablation(&LossSet::ROWS, &ModelConfig::default(), &cfg, &tr, &va, &te)?;
    println!("{:<24}{:>9}{:>9}{:>9}{:>9}", "losses", "AP@0.5", "AP@0.75", "AR@100", "AR@10");
    for r in &results {
        let pct = |v: Option<f64>| v.unwrap_or(f64::NAN) * 100.0;
        println!(
            "{:<24}{:>9.2}{:>9.2}{:>9.2}{:>9.2}",
            r.name,
            pct(r.report.ap_at(0.5)),
            pct(r.report.ap_at(0.75)),
            pct(r.report.ar_at(100)),
            pct(r.report.ar_at(10))
        );
    }
    Ok(())
}
