//! The metric report emitted by a run.

use crate::metrics::FootSlide;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const REPORT_FORMAT: &str = "gesturekit-metric-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub stages: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub sequences: Vec<SequenceMetrics>,
    pub aggregate: AggregateMetrics,
    /// Why a metric is missing, when it is.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceMetrics {
    pub sequence_id: String,
    pub split: Option<String>,
    pub frames: usize,
    pub fit_marker_rms: Option<f64>,
    pub head_scale: Option<f64>,
    pub finger_frames_clamped: Option<usize>,
    pub truncated_frames: Option<usize>,
    /// Reconstruction MSE per quantized segment.
    pub vq_mse: BTreeMap<String, f64>,
    pub vertex_mse: Option<f64>,
    pub lvd: Option<f64>,
    pub gesture_beats: Option<usize>,
    pub audio_beats: Option<usize>,
    pub beat_constancy: Option<f64>,
    pub mean_fusion_alpha: Option<f64>,
    pub foot_slide: Option<FootSlide>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateMetrics {
    pub fgd: Option<f64>,
    pub l1_diversity: Option<f64>,
    pub beat_constancy: Option<f64>,
    pub vertex_mse: Option<f64>,
    pub lvd: Option<f64>,
    pub foot_slide: Option<f64>,
}

fn check(name: &str, v: Option<f64>, errors: &mut Vec<String>) {
    if let Some(v) = v {
        if !v.is_finite() || v < 0.0 {
            errors.push(format!("{name} = {v} is not a finite non-negative number"));
        }
    }
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Parses and validates a report.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let r: MetricReport = serde_json::from_str(text).map_err(|e| e.to_string())?;
        r.validate()?;
        Ok(r)
    }

    /// Structural checks beyond the JSON shape.
    pub fn validate(&self) -> Result<(), String> {
        let mut errors = Vec::new();
        if self.format != REPORT_FORMAT || self.version != REPORT_VERSION {
            errors.push(format!("unsupported report {} v{}", self.format, self.version));
        }
        if self.sequences.is_empty() {
            errors.push("no sequences".into());
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.sequences {
            if !ids.insert(s.sequence_id.as_str()) {
                errors.push(format!("duplicate sequence '{}'", s.sequence_id));
            }
            if let Some(split) = &s.split {
                if !["train", "val", "test"].contains(&split.as_str()) {
                    errors.push(format!("{}: unknown split '{split}'", s.sequence_id));
                }
            }
            let id = &s.sequence_id;
            check(&format!("{id}.fit_marker_rms"), s.fit_marker_rms, &mut errors);
            check(&format!("{id}.head_scale"), s.head_scale, &mut errors);
            check(&format!("{id}.vertex_mse"), s.vertex_mse, &mut errors);
            check(&format!("{id}.lvd"), s.lvd, &mut errors);
            check(&format!("{id}.foot_slide"), s.foot_slide.map(|f| f.mean), &mut errors);
            for (seg, v) in &s.vq_mse {
                check(&format!("{id}.vq_mse.{seg}"), Some(*v), &mut errors);
            }
            for (name, v) in [("beat_constancy", s.beat_constancy), ("mean_fusion_alpha", s.mean_fusion_alpha)] {
                if v.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
                    errors.push(format!("{id}.{name} outside [0, 1]"));
                }
            }
        }
        let a = &self.aggregate;
        for (name, v) in [
            ("fgd", a.fgd),
            ("l1_diversity", a.l1_diversity),
            ("vertex_mse", a.vertex_mse),
            ("lvd", a.lvd),
            ("foot_slide", a.foot_slide),
        ] {
            check(&format!("aggregate.{name}"), v, &mut errors);
        }
        if a.beat_constancy.is_some_and(|v| !(0.0..=1.0).contains(&v)) {
            errors.push("aggregate.beat_constancy outside [0, 1]".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }
}
