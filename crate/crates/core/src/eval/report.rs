use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{breakdown, ConfusionMatrix, EnergyReport, Prediction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Evaluation summary written as `report.json` and printed as a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub network: String,
    pub window: String,
    pub samples: usize,
    pub war: f64,
    pub uar: f64,
    pub per_emotion: Vec<GroupScore>,
    pub per_lighting: Vec<GroupScore>,
    pub confusion: Vec<Vec<u64>>,
    pub energy: Option<EnergyReport>,
}

impl Report {
    pub fn new(
        network: &str,
        window: &str,
        cm: &ConfusionMatrix,
        preds: &[Prediction],
        energy: Option<EnergyReport>,
    ) -> Self {
        let b = breakdown(preds, cm.classes());
        Self {
            network: network.to_string(),
            window: window.to_string(),
            samples: preds.len(),
            war: cm.war(),
            uar: cm.uar(),
            per_emotion: b.per_emotion,
            per_lighting: b.per_lighting,
            confusion: cm.counts().to_vec(),
            energy,
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} on {} samples, window {}",
            self.network, self.samples, self.window
        );
        let rows = |out: &mut String, title: &str, groups: &[GroupScore]| {
            let _ = writeln!(
                out,
                "\n{title:<14} {:>6} {:>8} {:>9}",
                "n", "correct", "accuracy"
            );
            for g in groups {
                let _ = writeln!(
                    out,
                    "{:<14} {:>6} {:>8} {:>8.2}%",
                    g.group,
                    g.count,
                    g.correct,
                    100.0 * g.accuracy
                );
            }
        };
        rows(&mut out, "emotion", &self.per_emotion);
        rows(&mut out, "lighting", &self.per_lighting);
        let _ = writeln!(out, "\n{:<14} {:>8.2}%", "WAR", 100.0 * self.war);
        let _ = writeln!(out, "{:<14} {:>8.2}%", "UAR", 100.0 * self.uar);
        if let Some(e) = &self.energy {
            let _ = writeln!(out, "{:<14} {:>12}", "params", e.params);
            let _ = writeln!(out, "{:<14} {:>12.4e}", "flops", e.flops);
            let _ = writeln!(out, "{:<14} {:>12.4e}", "ann MACs", e.ann_macs);
            let _ = writeln!(out, "{:<14} {:>12.4e}", "synaptic ops", e.snn_synaptic_ops);
            let _ = writeln!(out, "{:<14} {:>12.4e} pJ", "energy", e.energy_pj);
            let _ = writeln!(
                out,
                "{:<14} {:>12.4e} pJ",
                "per sample", e.energy_per_sample_pj
            );
        }
        out
    }
}
