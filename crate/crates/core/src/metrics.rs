//! Association metrics against ground-truth tracks: IDF1, ID switches and
//! pairwise association precision/recall.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;

use crate::assign::hungarian;
use crate::costs::CostMatrix;
use crate::geom::{iou, BoundingBox};
use crate::tracker::FrameTracks;

pub const DEFAULT_IOU_THRESH: f64 = 0.5;

/// Ground truth uses the same per-frame `(id, box)` layout as tracker output.
pub type GroundTruth = Vec<FrameTracks>;

/// Per-frame detection-level correspondence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub frame: i64,
    /// `(gt_id, pred_id)` pairs.
    pub pairs: Vec<(u64, u64)>,
    pub false_positives: Vec<u64>,
    pub false_negatives: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub id_switches: usize,
    pub assoc_precision: f64,
    pub assoc_recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "idf1={}", self.idf1)?;
        writeln!(f, "idp={}", self.idp)?;
        writeln!(f, "idr={}", self.idr)?;
        writeln!(f, "idsw={}", self.id_switches)?;
        writeln!(f, "assoc_precision={}", self.assoc_precision)?;
        writeln!(f, "assoc_recall={}", self.assoc_recall)?;
        writeln!(f, "tp={}", self.tp)?;
        writeln!(f, "fp={}", self.fp)?;
        writeln!(f, "fn={}", self.fn_)
    }
}

type FrameBoxes<'a> = BTreeMap<i64, (&'a [(u64, BoundingBox)], &'a [(u64, BoundingBox)])>;

/// Aligns prediction and ground-truth frames by frame number.
fn align<'a>(pred: &'a [FrameTracks], gt: &'a [FrameTracks]) -> FrameBoxes<'a> {
    let mut frames: FrameBoxes<'a> = BTreeMap::new();
    for f in pred {
        frames.entry(f.frame).or_insert((&[], &[])).0 = &f.tracks;
    }
    for f in gt {
        frames.entry(f.frame).or_insert((&[], &[])).1 = &f.tracks;
    }
    frames
}

/// Index pairs `(gt_idx, pred_idx)` maximizing the number of matches with
/// IoU >= `iou_thresh`, then minimizing total `1 - IoU`.
pub fn match_boxes(pred: &[BoundingBox], gt: &[BoundingBox], iou_thresh: f64) -> Vec<(usize, usize)> {
    if pred.is_empty() || gt.is_empty() {
        return Vec::new();
    }
    // Any single valid pair beats every invalid assignment.
    let invalid = (gt.len().min(pred.len()) + 1) as f64;
    let overlaps = DMatrix::from_fn(gt.len(), pred.len(), |g, p| iou(&gt[g], &pred[p]));
    let cost = DMatrix::from_fn(gt.len(), pred.len(), |g, p| {
        let v = overlaps[(g, p)];
        if v >= iou_thresh {
            1.0 - v
        } else {
            invalid
        }
    });
    let cost = CostMatrix::new(cost).expect("finite costs");
    hungarian(&cost)
        .matches
        .into_iter()
        .filter(|&(g, p)| overlaps[(g, p)] >= iou_thresh)
        .collect()
}

/// Per-frame TP/FP/FN correspondence, ordered by frame.
pub fn match_frames(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> Vec<FrameMatch> {
    align(pred, gt)
        .into_iter()
        .map(|(frame, (p, g))| {
            let pb: Vec<BoundingBox> = p.iter().map(|t| t.1).collect();
            let gb: Vec<BoundingBox> = g.iter().map(|t| t.1).collect();
            let matched = match_boxes(&pb, &gb, iou_thresh);
            let mut p_used = vec![false; p.len()];
            let mut g_used = vec![false; g.len()];
            let mut pairs = Vec::with_capacity(matched.len());
            for (gi, pi) in matched {
                p_used[pi] = true;
                g_used[gi] = true;
                pairs.push((g[gi].0, p[pi].0));
            }
            FrameMatch {
                frame,
                pairs,
                false_positives: (0..p.len()).filter(|&k| !p_used[k]).map(|k| p[k].0).collect(),
                false_negatives: (0..g.len()).filter(|&k| !g_used[k]).map(|k| g[k].0).collect(),
            }
        })
        .collect()
}

struct IdScores {
    idtp: usize,
    num_pred: usize,
    num_gt: usize,
}

fn id_scores(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> IdScores {
    let mut gt_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pred_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut counts: HashMap<(u64, u64), usize> = HashMap::new();
    let (mut num_pred, mut num_gt) = (0, 0);
    for (_, (p, g)) in align(pred, gt) {
        num_pred += p.len();
        num_gt += g.len();
        for (gid, gb) in g {
            let next = gt_ids.len();
            gt_ids.entry(*gid).or_insert(next);
            for (pid, pb) in p {
                if iou(gb, pb) >= iou_thresh {
                    *counts.entry((*gid, *pid)).or_default() += 1;
                }
            }
        }
        for (pid, _) in p {
            let next = pred_ids.len();
            pred_ids.entry(*pid).or_insert(next);
        }
    }
    if counts.is_empty() {
        return IdScores { idtp: 0, num_pred, num_gt };
    }
    let weights = DMatrix::from_fn(gt_ids.len(), pred_ids.len(), |_, _| 0.0);
    let mut weights = weights;
    for (&(g, p), &c) in &counts {
        weights[(gt_ids[&g], pred_ids[&p])] = -(c as f64);
    }
    let assignment = hungarian(&CostMatrix::new(weights.clone()).expect("finite"));
    let idtp = assignment
        .matches
        .iter()
        .map(|&(g, p)| (-weights[(g, p)]) as usize)
        .sum();
    IdScores { idtp, num_pred, num_gt }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Identity F1 under the optimal one-to-one mapping of predicted to
/// ground-truth identities; two boxes count as the same object when their
/// IoU reaches `iou_thresh`.
pub fn idf1(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> f64 {
    let s = id_scores(pred, gt, iou_thresh);
    ratio(2.0 * s.idtp as f64, (s.num_pred + s.num_gt) as f64)
}

/// Number of times a ground-truth object's matched predicted id differs from
/// the id it was last matched to.
pub fn id_switches(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> usize {
    count_switches(&match_frames(pred, gt, iou_thresh))
}

fn count_switches(frames: &[FrameMatch]) -> usize {
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut switches = 0;
    for f in frames {
        for &(g, p) in &f.pairs {
            if let Some(prev) = last.insert(g, p) {
                if prev != p {
                    switches += 1;
                }
            }
        }
    }
    switches
}

/// Over unordered pairs of TP detections: recall is the share of same-gt
/// pairs that also share a predicted id, precision the share of same-pred
/// pairs that also share a gt id. Returns `(precision, recall)`; with no
/// qualifying pairs a side is 1 if there are TPs and 0 otherwise.
pub fn assoc_pr(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> (f64, f64) {
    assoc_from_matches(&match_frames(pred, gt, iou_thresh))
}

fn assoc_from_matches(frames: &[FrameMatch]) -> (f64, f64) {
    let mut per_gt: HashMap<u64, u64> = HashMap::new();
    let mut per_pred: HashMap<u64, u64> = HashMap::new();
    let mut per_both: HashMap<(u64, u64), u64> = HashMap::new();
    let mut tp = 0u64;
    for f in frames {
        for &(g, p) in &f.pairs {
            *per_gt.entry(g).or_default() += 1;
            *per_pred.entry(p).or_default() += 1;
            *per_both.entry((g, p)).or_default() += 1;
            tp += 1;
        }
    }
    let pairs = |n: &u64| n * n.saturating_sub(1) / 2;
    let both: u64 = per_both.values().map(pairs).sum();
    let same_gt: u64 = per_gt.values().map(pairs).sum();
    let same_pred: u64 = per_pred.values().map(pairs).sum();
    let side = |den: u64| {
        if den > 0 {
            both as f64 / den as f64
        } else if tp > 0 {
            1.0
        } else {
            0.0
        }
    };
    (side(same_pred), side(same_gt))
}

/// All metrics at one IoU threshold.
pub fn evaluate(pred: &[FrameTracks], gt: &[FrameTracks], iou_thresh: f64) -> MetricReport {
    let frames = match_frames(pred, gt, iou_thresh);
    let s = id_scores(pred, gt, iou_thresh);
    let (assoc_precision, assoc_recall) = assoc_from_matches(&frames);
    MetricReport {
        idf1: ratio(2.0 * s.idtp as f64, (s.num_pred + s.num_gt) as f64),
        idp: ratio(s.idtp as f64, s.num_pred as f64),
        idr: ratio(s.idtp as f64, s.num_gt as f64),
        id_switches: count_switches(&frames),
        assoc_precision,
        assoc_recall,
        tp: frames.iter().map(|f| f.pairs.len()).sum(),
        fp: frames.iter().map(|f| f.false_positives.len()).sum(),
        fn_: frames.iter().map(|f| f.false_negatives.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64) -> BoundingBox {
        BoundingBox::from_xywh(x, 0.0, 10.0, 10.0).unwrap()
    }

    fn seq(ids: &[&[(u64, f64)]]) -> Vec<FrameTracks> {
        ids.iter()
            .enumerate()
            .map(|(f, objs)| FrameTracks {
                frame: f as i64,
                tracks: objs.iter().map(|&(id, x)| (id, bx(x))).collect(),
            })
            .collect()
    }

    /// One object over 10 frames.
    fn single_gt() -> Vec<FrameTracks> {
        let frames: Vec<Vec<(u64, f64)>> = (0..10).map(|f| vec![(1, f as f64)]).collect();
        let refs: Vec<&[(u64, f64)]> = frames.iter().map(|v| v.as_slice()).collect();
        seq(&refs)
    }

    fn split_pred() -> Vec<FrameTracks> {
        let frames: Vec<Vec<(u64, f64)>> =
            (0..10).map(|f| vec![(if f < 5 { 7 } else { 8 }, f as f64)]).collect();
        let refs: Vec<&[(u64, f64)]> = frames.iter().map(|v| v.as_slice()).collect();
        seq(&refs)
    }

    #[test]
    fn perfect_tracking() {
        let gt = single_gt();
        let r = evaluate(&gt, &gt, 0.5);
        assert_eq!(r.idf1, 1.0);
        assert_eq!(r.id_switches, 0);
        assert_eq!((r.assoc_precision, r.assoc_recall), (1.0, 1.0));
        assert_eq!((r.tp, r.fp, r.fn_), (10, 0, 0));
    }

    #[test]
    fn split_track() {
        let (gt, pred) = (single_gt(), split_pred());
        assert_eq!(idf1(&pred, &gt, 0.5), 0.5);
        assert_eq!(id_switches(&pred, &gt, 0.5), 1);
        let (p, r) = assoc_pr(&pred, &gt, 0.5);
        assert_eq!(p, 1.0);
        assert!((r - 20.0 / 45.0).abs() < 1e-15);
    }

    #[test]
    fn switch_and_back_counts_two() {
        let gt = single_gt();
        let frames: Vec<Vec<(u64, f64)>> = (0..10)
            .map(|f| vec![(if (3..6).contains(&f) { 2 } else { 1 }, f as f64)])
            .collect();
        let refs: Vec<&[(u64, f64)]> = frames.iter().map(|v| v.as_slice()).collect();
        assert_eq!(id_switches(&seq(&refs), &gt, 0.5), 2);
    }

    #[test]
    fn empty_and_disjoint_predictions() {
        let gt = single_gt();
        let r = evaluate(&[], &gt, 0.5);
        assert_eq!(r.idf1, 0.0);
        assert_eq!(r.fn_, 10);
        let far: Vec<FrameTracks> = gt
            .iter()
            .map(|f| FrameTracks { frame: f.frame, tracks: vec![(1, bx(500.0))] })
            .collect();
        assert_eq!(idf1(&far, &gt, 0.5), 0.0);
    }

    #[test]
    fn merged_identities_lower_precision() {
        // two gt objects over 4 frames, one predicted id covering both
        let gt = seq(&[&[(1, 0.0), (2, 50.0)][..]; 4]);
        let pred = seq(&[&[(9, 0.0), (9, 50.0)][..]; 4]);
        let (p, r) = assoc_pr(&pred, &gt, 0.5);
        // same-gt pairs: 2 * C(4,2) = 12, all share pred id; same-pred pairs: C(8,2) = 28
        assert_eq!(r, 1.0);
        assert!((p - 12.0 / 28.0).abs() < 1e-15);
    }

    #[test]
    fn match_boxes_prefers_more_matches() {
        // gt0 overlaps pred0 strongly and pred1 weakly; gt1 overlaps only pred0
        let gt = [bx(0.0), bx(4.0)];
        let pred = [bx(2.0), bx(-3.0)];
        let m = match_boxes(&pred, &gt, 0.5);
        assert_eq!(m.len(), 2);
        assert!(m.contains(&(0, 1)) && m.contains(&(1, 0)));
    }
}
