use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::format_float;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub checkpoint: String,
    pub samples: usize,
    pub draws: usize,
    pub seed: u64,
}

/// Consistency measurements for one backbone family. Per-layer vectors follow
/// `layers`, which is in backbone depth order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub layers: Vec<String>,
    pub cosine: Vec<f64>,
    /// Keyed by variant name.
    pub l2: BTreeMap<String, Vec<f64>>,
    pub merging_loss: Vec<f64>,
    pub training_loss: Vec<f64>,
    pub meta: ReportMeta,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl ConsistencyReport {
    pub fn mean_merging_loss(&self) -> Option<f64> {
        mean(&self.merging_loss)
    }

    pub fn mean_training_loss(&self) -> Option<f64> {
        mean(&self.training_loss)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if !self.cosine.is_empty() && self.cosine.len() != n {
            return Err(Error::shape(
                "consistency report",
                format!("{} cosines for {n} layers", self.cosine.len()),
            ));
        }
        for (v, curve) in &self.l2 {
            if curve.len() != n {
                return Err(Error::shape(
                    "consistency report",
                    format!("{v}: {} values for {n} layers", curve.len()),
                ));
            }
        }
        let all = self
            .cosine
            .iter()
            .chain(self.l2.values().flatten())
            .chain(&self.merging_loss)
            .chain(&self.training_loss);
        if let Some(bad) = all.into_iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("report value {bad}")));
        }
        Ok(())
    }

    /// Rows of `layer,variant,metric,value`. Loss means are reported with layer `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,variant,metric,value\n");
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(c) = self.cosine.get(i) {
                let _ = writeln!(out, "{layer},,cosine,{}", format_float(*c));
            }
        }
        for (variant, curve) in &self.l2 {
            for (layer, v) in self.layers.iter().zip(curve) {
                let _ = writeln!(out, "{layer},{variant},l2,{}", format_float(*v));
            }
        }
        if let Some(m) = self.mean_merging_loss() {
            let _ = writeln!(out, "all,,merging_loss,{}", format_float(m));
        }
        if let Some(m) = self.mean_training_loss() {
            let _ = writeln!(out, "all,,training_loss,{}", format_float(m));
        }
        out
    }

    /// Compact JSON summary with means in place of per-draw samples.
    pub fn summary(&self) -> serde_json::Value {
        let layer_map = |vals: &[f64]| -> serde_json::Map<String, serde_json::Value> {
            self.layers
                .iter()
                .cloned()
                .zip(vals.iter().map(|v| serde_json::json!(v)))
                .collect()
        };
        serde_json::json!({
            "meta": self.meta,
            "layers": self.layers,
            "cosine": layer_map(&self.cosine),
            "l2": self.l2.iter().map(|(k, v)| (k.clone(), serde_json::Value::Object(layer_map(v)))).collect::<serde_json::Map<_, _>>(),
            "mean_merging_loss": self.mean_merging_loss(),
            "mean_training_loss": self.mean_training_loss(),
        })
    }
}
