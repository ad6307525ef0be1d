//! Mean relative depth error against sparse ground-truth points, over the
//! whole image and inside detection boxes, for a set of range caps.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::geometry::{Box2, DepthMap, Intrinsics};

pub const DEFAULT_RANGE_CAPS: [f64; 4] = [10.0, 20.0, 30.0, 40.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum EvalMode {
    #[serde(rename = "whole_image")]
    WholeImage,
    #[serde(rename = "within_boxes")]
    WithinBoxes,
}

impl EvalMode {
    pub const ALL: [EvalMode; 2] = [EvalMode::WholeImage, EvalMode::WithinBoxes];

    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::WholeImage => "whole_image",
            EvalMode::WithinBoxes => "within_boxes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalConfig {
    pub range_caps: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { range_caps: DEFAULT_RANGE_CAPS.to_vec() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.range_caps.is_empty() {
            return Err("no range caps".into());
        }
        if self.range_caps.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err("range caps must be positive".into());
        }
        if self.range_caps.windows(2).any(|w| w[0] >= w[1]) {
            return Err("range caps must be strictly ascending".into());
        }
        Ok(())
    }
}

/// Sum of relative errors and the number of counted points.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct ErrorSum {
    pub sum: f64,
    pub count: usize,
}

impl ErrorSum {
    pub fn mre(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }

    pub fn merge(&mut self, other: &ErrorSum) {
        self.sum += other.sum;
        self.count += other.count;
    }
}

/// Accumulates `|pred - gt| / gt` over ground-truth points with depth in
/// `(0, cap]`, a pixel inside the image (and inside some `region` box when
/// given) and a valid prediction there.
pub fn error_sum(pred: &DepthMap, gt_points: &[Vector3<f64>], k: &Intrinsics, cap: f64, region: Option<&[Box2]>) -> ErrorSum {
    let mut acc = ErrorSum::default();
    for p in gt_points {
        let gt = p.z;
        if !(gt > 0.0 && gt <= cap) {
            continue;
        }
        let Some((u, v)) = k.pixel_of(p) else { continue };
        if u >= pred.width() || v >= pred.height() {
            continue;
        }
        if let Some(boxes) = region {
            if !boxes.iter().any(|b| b.contains_pixel(u, v)) {
                continue;
            }
        }
        let Some(d) = pred.get(u, v) else { continue };
        acc.sum += (d as f64 - gt).abs() / gt;
        acc.count += 1;
    }
    acc
}

/// Mean relative error and the number of counted points `M`; the mean is
/// absent when `M = 0`.
pub fn mre(pred: &DepthMap, gt_points: &[Vector3<f64>], k: &Intrinsics, cap: f64, region: Option<&[Box2]>) -> (Option<f64>, usize) {
    let s = error_sum(pred, gt_points, k, cap, region);
    (s.mre(), s.count)
}

/// One rendered frame with its ground truth.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub frame_index: u64,
    pub pred: DepthMap,
    pub gt_points: Vec<Vector3<f64>>,
    pub boxes: Vec<Box2>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalEntry {
    pub cap: f64,
    pub mode: EvalMode,
    pub mre: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FrameEval {
    pub frame_index: u64,
    pub entries: Vec<EvalEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameEval>,
    /// Pooled over all frames' counted points.
    pub aggregate: Vec<EvalEntry>,
}

impl EvalReport {
    pub fn aggregate_entry(&self, cap: f64, mode: EvalMode) -> Option<&EvalEntry> {
        self.aggregate.iter().find(|e| e.cap == cap && e.mode == mode)
    }

    /// Table text: one block per cap, one row per mode, columns per run.
    pub fn table(runs: &[(&str, &EvalReport)]) -> String {
        let mut out = String::from("# MRE, pooled over all counted points (M = point count)\n");
        let caps: Vec<f64> = runs
            .first()
            .map(|(_, r)| {
                let mut c: Vec<f64> = r.aggregate.iter().map(|e| e.cap).collect();
                c.dedup();
                c
            })
            .unwrap_or_default();
        for cap in caps {
            let _ = writeln!(out, "\nrange <= {cap} m");
            let _ = write!(out, "{:<14}", "mode");
            for (name, _) in runs {
                let _ = write!(out, " {:>22}", name);
            }
            out.push('\n');
            for mode in EvalMode::ALL {
                let _ = write!(out, "{:<14}", mode.name());
                for (_, r) in runs {
                    let cell = match r.aggregate_entry(cap, mode) {
                        Some(EvalEntry { mre: Some(m), count, .. }) => format!("{m:.4} (M={count})"),
                        Some(EvalEntry { count, .. }) => format!("- (M={count})"),
                        None => "-".to_string(),
                    };
                    let _ = write!(out, " {:>22}", cell);
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn evaluate_frame(frame: &EvalFrame, k: &Intrinsics, config: &EvalConfig) -> (FrameEval, Vec<ErrorSum>) {
    let mut entries = Vec::new();
    let mut sums = Vec::new();
    for &cap in &config.range_caps {
        for mode in EvalMode::ALL {
            let region = match mode {
                EvalMode::WholeImage => None,
                EvalMode::WithinBoxes => Some(frame.boxes.as_slice()),
            };
            let s = error_sum(&frame.pred, &frame.gt_points, k, cap, region);
            entries.push(EvalEntry { cap, mode, mre: s.mre(), count: s.count });
            sums.push(s);
        }
    }
    (FrameEval { frame_index: frame.frame_index, entries }, sums)
}

/// Per-frame errors for every `(cap, mode)` plus the pooled aggregate.
pub fn evaluate_sequence<'a>(frames: impl IntoIterator<Item = &'a EvalFrame>, k: &Intrinsics, config: &EvalConfig) -> EvalReport {
    let mut report = EvalReport::default();
    let mut pooled: Vec<ErrorSum> = Vec::new();
    for frame in frames {
        let (fe, sums) = evaluate_frame(frame, k, config);
        if pooled.is_empty() {
            pooled = vec![ErrorSum::default(); sums.len()];
        }
        for (p, s) in pooled.iter_mut().zip(&sums) {
            p.merge(s);
        }
        report.frames.push(fe);
    }
    if report.frames.is_empty() {
        return report;
    }
    let mut i = 0;
    for &cap in &config.range_caps {
        for mode in EvalMode::ALL {
            report.aggregate.push(EvalEntry { cap, mode, mre: pooled[i].mre(), count: pooled[i].count });
            i += 1;
        }
    }
    report
}
