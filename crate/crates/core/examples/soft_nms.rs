//! Proposals read off a boundary map, then Gaussian Soft-NMS at a few decay
//! widths.
//!
//! cargo run --example soft_nms

use glitchloc::annotations::BoundaryMap;
use glitchloc::autodiff::Array;
use glitchloc::postproc::{extract_proposals, merge_duplicates, proposals_to_jsonl, soft_nms, NmsConfig};

fn main() -> glitchloc::Result<()> {
    let (d, t) = (4, 12);
    // a confident 3-frame segment at frame 2 with blurred neighbours, and a
    // weaker 2-frame segment at frame 8
    let mut cells = Array::zeros(&[d, t]);
    for (i, j, v) in [(2, 2, 0.9), (2, 3, 0.6), (1, 2, 0.55), (3, 1, 0.5), (1, 8, 0.7), (0, 8, 0.3)] {
        cells.set2(i, j, v);
    }
    let map = BoundaryMap::new(cells)?;
    let candidates = merge_duplicates(&extract_proposals(&map, "demo", t, 20, 0.1)?);
    println!("{} candidates", candidates.len());

    for sigma in [0.05, 0.5, 1.0] {
        let cfg = NmsConfig {
            sigma,
            ..NmsConfig::default()
        };
        let kept = soft_nms(&candidates, &cfg);
        let view: Vec<String> = kept
            .iter()
            .map(|p| format!("[{}, {}) {:.3}", p.start, p.end, p.score))
            .collect();
        println!("sigma {sigma:<4}: {}", view.join("  "));
    }
    print!("{}", proposals_to_jsonl(&soft_nms(&candidates, &NmsConfig::default()), 5.0)?);
    Ok(())
}
