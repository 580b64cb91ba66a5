//! Online tracker: frame-by-frame association of detections to live tracks.
//!
//! Each frame builds an appearance cost between track and detection
//! embeddings and an IoU cost between last track boxes and detection boxes,
//! blends them with `sigma`, and associates through the dustbin-augmented
//! soft assignment. Unmatched detections open new tracks; unmatched tracks
//! age and are retired after `max_age` missed frames.

use nalgebra::DMatrix;

use crate::assign::{
    decode, default_marginals, hungarian, sinkhorn, HardAssignment, SinkhornParams,
    DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};
use crate::costs::{augment_dustbin, combine, cosine_cost, iou_cost, CostMatrix, Embedding, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::geom::{BoundingBox, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatcherMode {
    /// Sinkhorn soft assignment followed by [`decode`].
    #[default]
    Sinkhorn,
    /// Exact partial matching: pairs are kept only when cheaper than `gamma`,
    /// the same trade-off the dustbin encodes.
    Hungarian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub sigma: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub max_age: u32,
    pub matcher: MatcherMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigma: 0.7,
            epsilon: DEFAULT_EPSILON,
            gamma: DEFAULT_GAMMA,
            sinkhorn_iters: DEFAULT_MAX_ITERS,
            sinkhorn_tol: DEFAULT_TOL,
            max_age: 10,
            matcher: MatcherMode::Sinkhorn,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub last_box: BoundingBox,
    pub last_embedding: Embedding,
    pub last_seen_frame: i64,
    /// Consecutive frames without a match.
    pub age: u32,
}

/// Tracks reported for one frame, in detection order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTracks {
    pub frame: i64,
    pub tracks: Vec<(u64, BoundingBox)>,
}

pub type TrackOutput = Vec<FrameTracks>;

/// One frame of tracker input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame: i64,
    pub detections: Vec<Detection>,
    pub embeddings: Vec<Embedding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    live: Vec<Track>,
    next_id: u64,
    last_frame: Option<i64>,
    config: TrackerConfig,
}

impl TrackSet {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            live: Vec::new(),
            next_id: 1,
            last_frame: None,
            config,
        }
    }

    pub fn live(&self) -> &[Track] {
        &self.live
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Associates one frame of detections and updates the track states.
    pub fn step(
        &mut self,
        frame: i64,
        dets: &[Detection],
        embeddings: &[Embedding],
    ) -> Result<FrameTracks> {
        if dets.len() != embeddings.len() {
            return Err(Error::EmbeddingCountMismatch {
                frame,
                detections: dets.len(),
                embeddings: embeddings.len(),
            });
        }
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(Error::NonMonotonicFrame { frame, previous });
            }
        }

        let assignment = self.associate(dets, embeddings)?;
        self.last_frame = Some(frame);

        let mut det_track: Vec<Option<u64>> = vec![None; dets.len()];
        let mut matched = vec![false; self.live.len()];
        for &(t, d) in &assignment.matches {
            let track = &mut self.live[t];
            track.last_box = dets[d].bbox;
            track.last_embedding = embeddings[d].clone();
            track.last_seen_frame = frame;
            track.age = 0;
            matched[t] = true;
            det_track[d] = Some(track.id);
        }
        for (track, hit) in self.live.iter_mut().zip(&matched) {
            if !hit {
                track.age += 1;
            }
        }
        let max_age = self.config.max_age;
        self.live.retain(|t| t.age <= max_age);

        for (d, slot) in det_track.iter_mut().enumerate() {
            if slot.is_none() {
                let id = self.next_id;
                self.next_id += 1;
                self.live.push(Track {
                    id,
                    last_box: dets[d].bbox,
                    last_embedding: embeddings[d].clone(),
                    last_seen_frame: frame,
                    age: 0,
                });
                *slot = Some(id);
            }
        }

        let tracks = det_track
            .into_iter()
            .zip(dets)
            .map(|(id, det)| (id.expect("every detection has a track"), det.bbox))
            .collect();
        Ok(FrameTracks { frame, tracks })
    }

    /// Matches live tracks (rows) to detections (columns).
    fn associate(&self, dets: &[Detection], embeddings: &[Embedding]) -> Result<HardAssignment> {
        let (n1, n2) = (self.live.len(), dets.len());
        if n1 == 0 || n2 == 0 {
            return Ok(HardAssignment::from_matches(Vec::new(), n1, n2));
        }
        let track_embs: Vec<Embedding> = self.live.iter().map(|t| t.last_embedding.clone()).collect();
        let sim = cosine_cost(&track_embs, embeddings)?;
        let last_boxes: Vec<BoundingBox> = self.live.iter().map(|t| t.last_box).collect();
        let det_boxes: Vec<BoundingBox> = dets.iter().map(|d| d.bbox).collect();
        let mut overlap = iou_cost(&last_boxes, &det_boxes).into_entries();
        for (i, track) in self.live.iter().enumerate() {
            if track.age > 1 {
                overlap.row_mut(i).fill(1.0);
            }
        }
        let cost = combine(&sim, &CostMatrix::new(overlap)?, self.config.sigma)?;
        let gamma = self.config.gamma;
        match self.config.matcher {
            MatcherMode::Sinkhorn => {
                let augmented = augment_dustbin(&cost, gamma)?;
                let params = SinkhornParams {
                    epsilon: self.config.epsilon,
                    max_iters: self.config.sinkhorn_iters,
                    tol: self.config.sinkhorn_tol,
                    ..SinkhornParams::default()
                };
                let plan = sinkhorn(&augmented, &default_marginals(n1, n2), &params)?;
                Ok(decode(&plan))
            }
            MatcherMode::Hungarian => {
                let capped = CostMatrix::new(DMatrix::from_fn(n1, n2, |i, j| cost.get(i, j).min(gamma)))?;
                let kept = hungarian(&capped)
                    .matches
                    .into_iter()
                    .filter(|&(i, j)| cost.get(i, j) < gamma)
                    .collect();
                Ok(HardAssignment::from_matches(kept, n1, n2))
            }
        }
    }
}

/// Runs the tracker over a whole sequence.
pub fn run_sequence(frames: &[FrameInput], config: &TrackerConfig) -> Result<TrackOutput> {
    let mut state = TrackSet::new(*config);
    frames
        .iter()
        .map(|f| state.step(f.frame, &f.detections, &f.embeddings))
        .collect()
}
