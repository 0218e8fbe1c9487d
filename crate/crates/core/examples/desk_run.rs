//! Generates the desk dataset, trains for the requested number of epochs and
//! reports test metrics against the shuffled-score baseline.
//!
//! cargo run --example desk_run -- [epochs]

use std::time::Instant;

use glitchloc::annotations::Split;
use glitchloc::metrics::{average_precision, EvalReport};
use glitchloc::model::ModelConfig;
use glitchloc::synthgen::{generate_dataset, FeatureClip, GeneratorConfig, SentimentLexicon};
use glitchloc::trainer::{
    ground_truth, report_from_results, run_inference, shuffled_baseline, suppress, train, LogEntry,
    TrainConfig, TrainOutputs, TrainState,
};

fn main() -> glitchloc::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |a| a.parse().expect("epoch count"));
    let started = Instant::now();
    let data = generate_dataset(&GeneratorConfig::default(), &SentimentLexicon::bundled())?;
    let split = |s| data.split(s).collect::<Vec<&FeatureClip>>();
    let (tr, va, te) = (split(Split::Train), split(Split::Validation), split(Split::Test));
    println!("generated {} / {} / {} clips", tr.len(), va.len(), te.len());

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let mut state = TrainState::new(ModelConfig::default(), cfg.seed)?;
    let log = train(&mut state, &tr, &va, &cfg, &TrainOutputs::default())?;
    for e in &log.entries {
        if let LogEntry::Epoch { epoch, mean_loss, val_ap50 } = e {
            println!("epoch {epoch:>2}  loss {mean_loss:.5}  val AP@0.5 {val_ap50:.3}");
        }
    }

    let nms = state.nms.expect("tuned");
    println!("tuned S-NMS: sigma {} floor {}", nms.sigma, nms.score_floor);
    let results = run_inference(&state.model, &te, &cfg.inference)?;
    let report: EvalReport = report_from_results(&results, &te, &nms, state.head.as_ref(), &cfg.inference)?;
    print!("{}", report.table());
    let shuffled = shuffled_baseline(&suppress(&results, &nms), 5);
    let base = average_precision(&shuffled, &ground_truth(&te), 0.5).value;
    println!("shuffled baseline AP@0.5 {base:.4}");
    println!("elapsed {:.1?}", started.elapsed());
    Ok(())
}
