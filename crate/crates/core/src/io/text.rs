use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{read_string, write_bytes, IoError};
use crate::decompose::Detection;
use crate::geometry::{Box2, OrientedBox3, Pose};
use crate::TrackletId;

/// Three lines of four numbers: the row-major `[R | t]` camera-to-world matrix.
pub fn format_pose(pose: &Pose) -> String {
    let mut out = String::new();
    for row in pose.to_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_pose(text: &str, path: &Path) -> Result<Pose, IoError> {
    let mut values = Vec::with_capacity(12);
    let mut offset = 0;
    for token in text.split_ascii_whitespace() {
        // byte offset of the token inside `text`
        let at = token.as_ptr() as usize - text.as_ptr() as usize;
        offset = at;
        let v: f64 = token.parse().map_err(|_| IoError::Parse {
            path: path.to_path_buf(),
            location: format!("byte {at}"),
            message: format!("'{token}' is not a number"),
        })?;
        values.push(v);
    }
    if values.len() != 12 {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            location: format!("byte {}", if values.len() > 12 { offset } else { text.len() }),
            message: format!("expected 12 numbers, found {}", values.len()),
        });
    }
    let mut rows = [[0.0; 4]; 3];
    for (i, v) in values.into_iter().enumerate() {
        rows[i / 4][i % 4] = v;
    }
    Pose::from_rows(&rows).map_err(|e| IoError::InvalidPose { path: path.to_path_buf(), offset: 0, message: e.to_string() })
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<(), IoError> {
    write_bytes(path, format_pose(pose).as_bytes())
}

pub fn read_pose(path: &Path) -> Result<Pose, IoError> {
    parse_pose(&read_string(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3Record {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub box2: [f64; 4],
    #[serde(default)]
    pub box3: Option<Box3Record>,
    pub score: f64,
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl DetectionRecord {
    pub fn from_detection(id: Option<TrackletId>, det: &Detection) -> Self {
        Self {
            box2: [det.box2.x_min, det.box2.y_min, det.box2.x_max, det.box2.y_max],
            box3: det.box3.map(|b| Box3Record { center: [b.center.x, b.center.y, b.center.z], dims: b.dims, yaw: b.yaw }),
            score: det.score,
            class: det.class_label.clone(),
            track_id: id,
        }
    }

    pub fn to_detection(&self) -> Result<(Option<TrackletId>, Detection), String> {
        let [x0, y0, x1, y1] = self.box2;
        let box2 = Box2::new(x0, y0, x1, y1).map_err(|e| e.to_string())?;
        let box3 = match &self.box3 {
            Some(b) => Some(OrientedBox3::new(Vector3::from(b.center), b.dims, b.yaw).map_err(|e| e.to_string())?),
            None => None,
        };
        let det = Detection { box2, box3, score: self.score, class_label: self.class.clone() };
        det.validate().map_err(|e| e.to_string())?;
        Ok((self.track_id, det))
    }
}

pub fn detections_to_json(detections: &[(Option<TrackletId>, Detection)]) -> String {
    let records: Vec<DetectionRecord> = detections.iter().map(|(id, d)| DetectionRecord::from_detection(*id, d)).collect();
    let mut s = serde_json::to_string_pretty(&records).expect("records serialize");
    s.push('\n');
    s
}

pub fn detections_from_json(text: &str, path: &Path) -> Result<Vec<(Option<TrackletId>, Detection)>, IoError> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_detection().map_err(|m| IoError::Invalid { path: path.to_path_buf(), message: format!("detection {i}: {m}") }))
        .collect()
}

pub fn write_detections(path: &Path, detections: &[(Option<TrackletId>, Detection)]) -> Result<(), IoError> {
    write_bytes(path, detections_to_json(detections).as_bytes())
}

pub fn read_detections(path: &Path) -> Result<Vec<(Option<TrackletId>, Detection)>, IoError> {
    detections_from_json(&read_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_text_round_trip() {
        let p = Pose::rot_y(0.3).compose(&Pose::rot_x(-1.1)).with_translation(Vector3::new(0.1, -2.0, 1e-7));
        let text = format_pose(&p);
        assert_eq!(text.lines().count(), 3);
        let q = parse_pose(&text, Path::new("p.txt")).unwrap();
        assert_eq!(q, p);
        assert_eq!(format_pose(&q), text);
    }

    #[test]
    fn reflection_is_invalid_pose() {
        let text = "-1 0 0 0\n0 1 0 0\n0 0 1 0\n";
        let e = parse_pose(text, Path::new("bad.txt")).unwrap_err();
        assert!(matches!(e, IoError::InvalidPose { .. }));
        assert!(e.to_string().contains("bad.txt"));
    }

    #[test]
    fn pose_parse_errors_locate_the_token() {
        let e = parse_pose("1 0 0 0\n0 1 x 0\n0 0 1 0", Path::new("p.txt")).unwrap_err();
        assert!(matches!(e, IoError::Parse { ref location, .. } if location == "byte 12"));
        assert!(matches!(parse_pose("1 0 0", Path::new("p.txt")), Err(IoError::Parse { .. })));
    }

    #[test]
    fn detections_round_trip_and_optional_fields() {
        let det = Detection {
            box2: Box2::new(1.0, 2.0, 30.5, 40.0).unwrap(),
            box3: Some(OrientedBox3::new(Vector3::new(0.5, 1.2, 9.0), [4.0, 1.8, 1.5], 0.25).unwrap()),
            score: 0.875,
            class_label: "Car".into(),
        };
        let no3 = Detection { box3: None, ..det.clone() };
        let dets = vec![(Some(3), det), (None, no3)];
        let json = detections_to_json(&dets);
        let back = detections_from_json(&json, Path::new("d.json")).unwrap();
        assert_eq!(back, dets);
        assert_eq!(detections_to_json(&back), json);

        let minimal = r#"[{"box2":[0,0,4,4],"score":0.5,"class":"Car"}]"#;
        let d = detections_from_json(minimal, Path::new("d.json")).unwrap();
        assert_eq!(d[0].0, None);
        assert!(d[0].1.box3.is_none());

        let bad = r#"[{"box2":[5,0,4,4],"score":0.5,"class":"Car"}]"#;
        assert!(matches!(detections_from_json(bad, Path::new("d.json")), Err(IoError::Invalid { .. })));
        assert!(matches!(detections_from_json("[{", Path::new("d.json")), Err(IoError::Parse { .. })));
    }
}
