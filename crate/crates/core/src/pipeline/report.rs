use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use super::PipelineConfig;
use crate::vo::Pose;

/// Significant digits kept for every float in the report.
pub const REPORT_DIGITS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseRecord {
    /// Rotation quaternion `[w, x, y, z]`, `w ≥ 0`.
    pub q: [f64; 4],
    /// Translation of `x_cam = R x_world + t`.
    pub t: [f64; 3],
}

impl From<&Pose<f64>> for PoseRecord {
    fn from(p: &Pose<f64>) -> Self {
        Self {
            q: p.quaternion_wxyz(),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyframeRecord {
    pub id: usize,
    pub frame_index: usize,
    pub pose: Option<PoseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterRecord {
    pub id: usize,
    pub members: Vec<usize>,
    pub cohesiveness: f64,
    /// File names relative to the output directory.
    pub panoramas: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityMode {
    Pose,
    Appearance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Wall-clock time per phase; empty unless timings were requested.
    pub timings_ms: BTreeMap<String, f64>,
    pub map_points: usize,
    pub vo_initialized: bool,
    /// Set when no keyframe pair could bootstrap the map.
    pub initialization_failure: bool,
    pub affinity: AffinityMode,
    /// Every dominant set reached the replicator tolerance.
    pub replicator_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub keyframes: Vec<KeyframeRecord>,
    pub clusters: Vec<ClusterRecord>,
    pub unassigned: Vec<usize>,
    pub diagnostics: Diagnostics,
}

impl RunReport {
    /// Canonical JSON: keys sorted, floats rounded to [`REPORT_DIGITS`]
    /// significant digits, two-space indentation, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    pub fn panorama_files(&self) -> impl Iterator<Item = &str> {
        self.clusters.iter().flat_map(|c| c.panoramas.iter().map(String::as_str))
    }
}

pub fn canonical_json(value: &impl Serialize) -> String {
    let mut v = serde_json::to_value(value).expect("report types serialise to JSON");
    round_floats(&mut v);
    let mut text = serde_json::to_string_pretty(&v).expect("JSON values serialise");
    text.push('\n');
    text
}

/// `x` rounded to `digits` significant digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            *v = serde_json::Number::from_f64(round_significant(x, REPORT_DIGITS))
                .map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn significant_digit_rounding() {
        assert_eq!(round_significant(1.234567891234, 9), 1.23456789);
        assert_eq!(round_significant(-0.000123456789876, 9), -0.000123456790);
        assert_eq!(round_significant(123456789123.0, 9), 123456789000.0);
        assert_eq!(round_significant(0.0, 9), 0.0);
    }

    #[test]
    fn keys_are_sorted_and_floats_rounded() {
        let text = canonical_json(&json!({"b": 1, "a": {"z": 0.1234567890123, "y": [2.0, null]}}));
        assert_eq!(
            text,
            "{\n  \"a\": {\n    \"y\": [\n      2.0,\n      null\n    ],\n    \"z\": 0.123456789\n  },\n  \"b\": 1\n}\n"
        );
    }

    #[test]
    fn missing_pose_is_null() {
        let rec = KeyframeRecord { id: 3, frame_index: 9, pose: None };
        let v: Value = serde_json::from_str(&canonical_json(&rec)).unwrap();
        assert_eq!(v["pose"], Value::Null);
        let rec = KeyframeRecord { id: 0, frame_index: 0, pose: Some((&Pose::identity()).into()) };
        let v: Value = serde_json::from_str(&canonical_json(&rec)).unwrap();
        assert_eq!(v["pose"]["q"], json!([1.0, 0.0, 0.0, 0.0]));
        assert_eq!(v["pose"]["t"], json!([0.0, 0.0, 0.0]));
    }
}
