//! Frame labels and boundary maps derived from one annotation record.
//!
//! cargo run --example boundary_targets

use glitchloc::annotations::{frame_labels, gt_boundary_map, Modality, Split, Track, VideoRecord};
use glitchloc::losses::SampleTargets;

fn main() -> glitchloc::Result<()> {
    let record: VideoRecord = serde_json::from_str(
        r#"{"id": "demo", "fps": 5.0, "n_frames": 12, "modify_visual": true, "modify_audio": false,
            "fake_segments": [[0.4, 1.0], [1.6, 1.8]], "split": "test"}"#,
    )
    .map_err(glitchloc::Error::from)?;
    record.validate()?;
    assert_eq!(record.split, Split::Test);
    let (d, t) = (4, 16);

    println!("frame segments {:?}", record.frame_segments());
    for track in [Track::Shared, Track::Only(Modality::Visual), Track::Only(Modality::Audio)] {
        let labels = frame_labels(&record, track, t)?.to_array();
        let bits: String = labels.data().iter().map(|&v| if v > 0.5 { '#' } else { '.' }).collect();
        println!("{track:?}: {bits}");
    }

    let map = gt_boundary_map(&record, Track::Shared, d, t)?;
    println!("boundary map (row i = duration i+1, column j = start frame):");
    for i in 0..d {
        let row: Vec<String> = (0..t).map(|j| format!("{:.2}", map.get(i, j))).collect();
        println!("  {}", row.join(" "));
    }
    println!("peaks {:?}", map.peaks());

    let targets = SampleTargets::from_record(&record, d, t)?;
    println!("contrastive label {} (1 = in sync)", targets.contrastive);
    Ok(())
}
