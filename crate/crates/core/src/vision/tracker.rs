//! Patch identity tracking and score-based selection with hysteresis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::ImagePoint;

use super::detect::{score, PatchCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringWeights {
    pub w_x: f64,
    pub w_y: f64,
    pub w_a: f64,
    /// Challenger must beat the incumbent by this fraction of |incumbent|...
    pub margin_frac: f64,
    /// ...and by at least this many score units.
    pub margin_floor: f64,
}

impl Default for ScoringWeights {
    fn default() -> Self {
        Self { w_x: 1.0, w_y: 0.5, w_a: 0.05, margin_frac: 0.1, margin_floor: 5.0 }
    }
}

impl ScoringWeights {
    pub fn margin(&self, incumbent: f64) -> f64 {
        (self.margin_frac * incumbent.abs()).max(self.margin_floor)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { w_x: self.w_x * s, w_y: self.w_y * s, w_a: self.w_a * s, margin_frac: self.margin_frac, margin_floor: self.margin_floor * s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub gate_px: f64,
    pub max_age: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { gate_px: 30.0, max_age: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub position: ImagePoint,
    pub area: f64,
    pub score: f64,
    /// Frames since last matched.
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackerState {
    pub cfg: TrackerConfig,
    pub tracks: BTreeMap<u64, Track>,
    pub selected: Option<u64>,
    next_id: u64,
}

impl TrackerState {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self { cfg, tracks: BTreeMap::new(), selected: None, next_id: 1 }
    }

    /// Moves every track by a predicted image displacement (camera ego-motion).
    pub fn shift_tracks(&mut self, dx: f64, dy: f64) {
        for t in self.tracks.values_mut() {
            t.position = ImagePoint::new(t.position.x + dx, t.position.y + dy);
        }
    }

    pub fn reset(&mut self) {
        let cfg = self.cfg;
        *self = Self::new(cfg);
    }
}

/// Associates detections with tracks, then picks the patch to follow.
/// Returns the selected candidate when it is visible in this frame.
pub fn track_and_select(tr: &mut TrackerState, detections: Vec<PatchCandidate>, w: &ScoringWeights) -> Option<PatchCandidate> {
    if tr.next_id == 0 {
        tr.next_id = 1;
    }
    let mut pairs: Vec<(f64, u64, usize)> = Vec::new();
    for (&id, t) in &tr.tracks {
        for (j, d) in detections.iter().enumerate() {
            let dist = (t.position.x - d.position.x).hypot(t.position.y - d.position.y);
            if dist <= tr.cfg.gate_px {
                pairs.push((dist, id, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_id: Vec<Option<u64>> = vec![None; detections.len()];
    let mut matched: Vec<u64> = Vec::new();
    for (_, id, j) in pairs {
        if det_id[j].is_none() && !matched.contains(&id) {
            det_id[j] = Some(id);
            matched.push(id);
        }
    }
    for (id, t) in tr.tracks.iter_mut() {
        if !matched.contains(id) {
            t.age += 1;
        }
    }
    let max_age = tr.cfg.max_age;
    tr.tracks.retain(|_, t| t.age <= max_age);
    let mut current: Vec<(u64, f64, PatchCandidate)> = Vec::new();
    for (j, mut d) in detections.into_iter().enumerate() {
        let id = det_id[j].unwrap_or_else(|| {
            let id = tr.next_id;
            tr.next_id += 1;
            id
        });
        let s = score(&d, w);
        tr.tracks.insert(id, Track { position: d.position, area: d.area, score: s, age: 0 });
        d.id = id;
        current.push((id, s, d));
    }
    if let Some(sel) = tr.selected {
        if !tr.tracks.contains_key(&sel) {
            tr.selected = None;
        }
    }
    let best = current.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
    match tr.selected {
        None => {
            tr.selected = best.map(|b| b.0);
        }
        Some(sel) => {
            if let Some(inc) = current.iter().find(|c| c.0 == sel) {
                if let Some(b) = best {
                    if b.0 != sel && b.1 > inc.1 + w.margin(inc.1) {
                        tr.selected = Some(b.0);
                    }
                }
            }
        }
    }
    let sel = tr.selected?;
    current.into_iter().find(|c| c.0 == sel).map(|c| c.2)
}
