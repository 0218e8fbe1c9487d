//! Writes a small synthetic dataset to disk, reads it back and prints its
//! category balance and segment lengths.
//!
//! cargo run --example generate_dataset -- [out-dir]

use glitchloc::annotations::Split;
use glitchloc::synthgen::{generate_dataset, load_dataset, Category, GeneratorConfig, SentimentLexicon};

fn main() -> glitchloc::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into());
    let cfg = GeneratorConfig {
        n_train: 40,
        n_validation: 8,
        n_test: 8,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&cfg, &SentimentLexicon::bundled())?;
    data.write(&dir)?;

    let counts = data.category_counts(None);
    for c in Category::ALL {
        println!("{c:?}: {}", counts[&c]);
    }
    let lens: Vec<f64> = data
        .clips
        .iter()
        .flat_map(|c| c.clip.record.fake_segments.iter().map(|s| s.end - s.start))
        .collect();
    let short = lens.iter().filter(|&&l| l < 1.0).count();
    println!(
        "{} segments, longest {:.2}s, {short} shorter than 1s",
        lens.len(),
        lens.iter().copied().fold(0.0, f64::max)
    );
    let first = &data.clips[0];
    println!(
        "{}: {:?} transcript {:?}",
        first.clip.record.id,
        Category::of(&first.clip.record),
        first.transcript.text()
    );

    let loaded = load_dataset(&dir)?;
    println!(
        "reloaded {} clips ({} train) from {dir}, header {:?}",
        loaded.clips.len(),
        loaded.split(Split::Train).count(),
        loaded.header
    );
    Ok(())
}
