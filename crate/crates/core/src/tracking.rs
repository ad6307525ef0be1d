//! IoU-based tracking by detection: optimal one-to-one association of the
//! current frame's 2D boxes to live tracks.

use crate::geometry::Box2;
use crate::TrackletId;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_MISSES: u32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub tracklet_id: TrackletId,
    pub last_box2: Box2,
    pub last_seen_frame: u64,
    /// Frames since creation.
    pub age: u64,
    /// Consecutive frames without a match.
    pub misses: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub max_misses: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { iou_threshold: DEFAULT_IOU_THRESHOLD, max_misses: DEFAULT_MAX_MISSES }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(format!("iou_threshold {} outside (0, 1]", self.iou_threshold));
        }
        Ok(())
    }
}

/// Stateful tracker for one stream. Frames must be fed in order.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: TrackletId,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, tracks: Vec::new(), next_id: 0 }
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Assigns a tracklet id to every box of `frame`, in input order.
    pub fn associate(&mut self, boxes: &[Box2], frame: u64) -> Vec<TrackletId> {
        let iou: Vec<Vec<f64>> =
            self.tracks.iter().map(|t| boxes.iter().map(|b| t.last_box2.iou(b)).collect()).collect();
        let matching = optimal_matching(&iou, self.config.iou_threshold);

        let mut ids = vec![0; boxes.len()];
        let mut matched_track = vec![false; self.tracks.len()];
        let mut matched_det = vec![false; boxes.len()];
        for &(t, d) in &matching {
            matched_track[t] = true;
            matched_det[d] = true;
            let track = &mut self.tracks[t];
            track.last_box2 = boxes[d];
            track.last_seen_frame = frame;
            track.misses = 0;
            ids[d] = track.tracklet_id;
        }
        for (t, track) in self.tracks.iter_mut().enumerate() {
            track.age += 1;
            if !matched_track[t] {
                track.misses += 1;
            }
        }
        let max_misses = self.config.max_misses;
        self.tracks.retain(|t| t.misses <= max_misses);

        for (d, b) in boxes.iter().enumerate() {
            if matched_det[d] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track { tracklet_id: id, last_box2: *b, last_seen_frame: frame, age: 0, misses: 0 });
            ids[d] = id;
        }
        ids
    }
}

/// Maximum-total-IoU one-to-one matching over pairs with `iou >= threshold`.
/// `iou[t][d]` is the overlap of track `t` with detection `d`. Returns
/// `(track, detection)` pairs sorted by track.
pub fn optimal_matching(iou: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let rows = iou.len();
    let cols = iou.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let gain = |t: usize, d: usize| if iou[t][d] >= threshold { iou[t][d] } else { 0.0 };

    // Hungarian algorithm (shortest augmenting paths) on the padded square
    // cost matrix -gain; padding cells cost 0.
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| if i < rows && j < cols { -gain(i, j) } else { 0.0 };
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter_map(|j| {
            let (t, d) = (p[j] - 1, j - 1);
            (t < rows && d < cols && iou[t][d] >= threshold).then_some((t, d))
        })
        .collect();
    pairs.sort_unstable();
    pairs
}
