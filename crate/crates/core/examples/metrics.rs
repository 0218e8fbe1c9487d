//! AP at several IoU thresholds, AR@N and AUC on hand-made predictions.
//!
//! cargo run --example metrics

use std::collections::BTreeMap;

use glitchloc::metrics::{auc, average_precision, average_recall_at_n, temporal_iou, EvalProtocol, EvalReport};
use glitchloc::postproc::Proposal;

fn p(id: &str, start: usize, end: usize, score: f64) -> Proposal {
    Proposal {
        video_id: id.into(),
        start,
        end,
        score,
    }
}

fn main() -> glitchloc::Result<()> {
    let gt: BTreeMap<String, Vec<(usize, usize)>> = [
        ("a".to_string(), vec![(2, 6), (10, 12)]),
        ("b".to_string(), vec![(0, 3)]),
        ("c".to_string(), vec![]),
    ]
    .into_iter()
    .collect();
    let preds = vec![
        p("a", 2, 6, 0.95),
        p("b", 0, 4, 0.9),
        p("c", 5, 8, 0.8),
        p("a", 9, 12, 0.6),
        p("a", 3, 6, 0.3),
    ];
    println!("IoU([0,4), [0,3)) = {:.3}", temporal_iou((0.0, 4.0), (0.0, 3.0)));
    for thr in [0.5, 0.75, 0.95] {
        let ap = average_precision(&preds, &gt, thr);
        println!("AP@{thr} = {:.4}", ap.value);
    }
    for n in [1, 2, 5] {
        println!("AR@{n} = {:.4}", average_recall_at_n(&preds, &gt, n)?.value);
    }
    let report = EvalReport::compute(&preds, &gt, &EvalProtocol::default(), None)?;
    print!("{}", report.table());

    let scores = [0.9, 0.8, 0.35, 0.3, 0.1];
    let labels = [true, true, false, true, false];
    println!("AUC = {:.4}", auc(&scores, &labels)?);
    Ok(())
}
