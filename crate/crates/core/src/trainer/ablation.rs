use serde::{Deserialize, Serialize};

use super::inference::{evaluate, InferenceConfig};
use super::train::{train, TrainConfig, TrainOutputs, TrainState};
use crate::error::Result;
use crate::losses::LossWeights;
use crate::metrics::EvalReport;
use crate::model::ModelConfig;
use crate::synthgen::FeatureClip;

/// Which losses a configuration keeps; dropped losses get weight zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSet {
    pub contrastive: bool,
    pub frame: bool,
    pub boundary: bool,
    pub multimodal: bool,
}

impl LossSet {
    pub const fn new(contrastive: bool, frame: bool, boundary: bool, multimodal: bool) -> Self {
        Self {
            contrastive,
            frame,
            boundary,
            multimodal,
        }
    }

    /// The ablation rows, from frame-only up to the full objective.
    pub const ROWS: [LossSet; 6] = [
        LossSet::new(false, true, false, false),
        LossSet::new(true, true, false, false),
        LossSet::new(false, false, true, false),
        LossSet::new(false, false, true, true),
        LossSet::new(false, true, true, true),
        LossSet::new(true, true, true, true),
    ];

    pub fn name(&self) -> String {
        let parts: Vec<&str> = [
            (self.contrastive, "L_c"),
            (self.frame, "L_f"),
            (self.boundary, "L_b"),
            (self.multimodal, "L_bm"),
        ]
        .iter()
        .filter_map(|&(on, n)| on.then_some(n))
        .collect();
        format!("{{{}}}", parts.join(", "))
    }

    pub fn weights(&self, base: &LossWeights) -> LossWeights {
        let keep = |on: bool, w: f64| if on { w } else { 0.0 };
        LossWeights {
            lambda_c: keep(self.contrastive, base.lambda_c),
            lambda_f: keep(self.frame, base.lambda_f),
            lambda_b: keep(self.boundary, base.lambda_b),
            lambda_bm: keep(self.multimodal, base.lambda_bm),
            margin: base.margin,
        }
    }

    /// Without a boundary loss the maps are untrained, so proposals come
    /// from thresholded frame runs instead.
    pub fn inference(&self, base: &InferenceConfig) -> InferenceConfig {
        if self.boundary || self.multimodal {
            base.clone()
        } else {
            InferenceConfig {
                protocol: base.protocol.clone(),
                ..InferenceConfig::frame_runs()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub losses: LossSet,
    pub name: String,
    pub report: EvalReport,
}

/// Trains one model per row from the same initialisation and evaluates it
/// on `test` with the Soft-NMS settings tuned for that row.
pub fn run_ablation(
    rows: &[LossSet],
    model: &ModelConfig,
    base: &TrainConfig,
    train_clips: &[&FeatureClip],
    val_clips: &[&FeatureClip],
    test_clips: &[&FeatureClip],
) -> Result<Vec<AblationResult>> {
    rows.iter()
        .map(|row| {
            let cfg = TrainConfig {
                loss: row.weights(&base.loss),
                inference: row.inference(&base.inference),
                ..base.clone()
            };
            let mut state = TrainState::new(model.clone(), cfg.seed)?;
            train(&mut state, train_clips, val_clips, &cfg, &TrainOutputs::default())?;
            let nms = state.nms.expect("training tunes Soft-NMS");
            let report = evaluate(&state.model, test_clips, &nms, state.head.as_ref(), &cfg.inference)?;
            Ok(AblationResult {
                losses: *row,
                name: row.name(),
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_names_and_weights() {
        let names: Vec<String> = LossSet::ROWS.iter().map(LossSet::name).collect();
        assert_eq!(names[0], "{L_f}");
        assert_eq!(names[5], "{L_c, L_f, L_b, L_bm}");
        let w = LossSet::ROWS[3].weights(&LossWeights::default());
        assert_eq!((w.lambda_c, w.lambda_f, w.lambda_b, w.lambda_bm), (0.0, 0.0, 1.0, 1.0));
        assert!(matches!(
            LossSet::ROWS[1].inference(&InferenceConfig::default()).decode,
            super::super::Decode::FrameRuns { .. }
        ));
    }
}
