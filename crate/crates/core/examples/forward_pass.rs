//! One clip through the two-stream model: frame scores, per-modality and
//! fused boundary maps, fusion weights.
//!
//! cargo run --example forward_pass

use glitchloc::annotations::Split;
use glitchloc::model::{Model, ModelConfig};
use glitchloc::synthgen::{generate_dataset, GeneratorConfig, SentimentLexicon};
use glitchloc::postproc::average_maps;

fn main() -> glitchloc::Result<()> {
    let gen = GeneratorConfig {
        n_train: 4,
        n_validation: 0,
        n_test: 0,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&gen, &SentimentLexicon::bundled())?;
    let clip = data.split(Split::Train).next().expect("one clip");
    let model = Model::new(ModelConfig::default(), 1)?;
    println!(
        "{} parameter arrays, {} scalars",
        model.params().len(),
        model.params().scalar_count()
    );

    let out = model.forward(clip)?;
    println!("clip {} ({} valid frames)", clip.record.id, clip.valid_len());
    println!("z_v {:?}  z_a {:?}", out.z_v.shape(), out.z_a.shape());
    let head: Vec<String> = out.frames_v.data()[..8].iter().map(|v| format!("{v:.3}")).collect();
    println!("visual frame scores (first 8) {}", head.join(" "));
    for (k, name) in ["position", "channel", "pos-channel"].iter().enumerate() {
        let wv = out.weights_v[k].data();
        let mean_share =
            wv.iter().zip(out.weights_a[k].data()).map(|(v, a)| v / (v + a)).sum::<f64>() / wv.len() as f64;
        println!(
            "{name:<12} fused map {:?}, mean visual weight share {mean_share:.3}",
            out.fused[k].array().shape()
        );
    }
    let avg = average_maps(&out.fused[0], &out.fused[1], &out.fused[2])?;
    println!("averaged map peak {:.4}", avg.array().data().iter().copied().fold(0.0, f64::max));
    Ok(())
}
