//! Association pseudo-labels from motion-compensated boxes, and stereo
//! occlusion masks from left/right disparity consistency.

use crate::assign::hungarian;
use crate::costs::iou_cost;
use crate::error::{Error, Result};
pub use crate::geom::Detection;
use crate::geom::{iou, nms_indices, warp_box, warp_grid, BoundingBox, MotionField};

/// Thresholds used while turning raw detections into pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoParams {
    /// Detections must have confidence strictly above this.
    pub min_conf: f64,
    /// Minimum box area in square pixels.
    pub min_area: f64,
    pub nms_iou: f64,
    /// Matched pairs whose post-warp IoU falls below this are discarded.
    pub min_match_iou: f64,
    pub tau_occ: f64,
    pub occlusion_max_ratio: f64,
}

impl Default for PseudoParams {
    fn default() -> Self {
        Self {
            min_conf: 0.9,
            min_area: 100.0,
            nms_iou: 0.3,
            min_match_iou: 0.1,
            tau_occ: 1.0,
            occlusion_max_ratio: 0.5,
        }
    }
}

/// Hard association labels between a reference and a target frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabelSet {
    /// `(ref_index, tgt_index)`, sorted by reference index.
    pub pairs: Vec<(usize, usize)>,
    /// Hungarian pairs rejected by the IoU gate.
    pub discarded_low_iou: usize,
    /// Detections removed by the occlusion rule before matching.
    pub dropped_occluded: usize,
    /// Reference boxes whose center left the motion field.
    pub dropped_out_of_field: usize,
}

/// Binary occlusion grid; `true` marks an occluded pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fraction of the pixel cells covered by `b` that are occluded. Boxes
    /// covering no cell of the grid report 0.
    pub fn occluded_fraction(&self, b: &BoundingBox) -> f64 {
        let (xs, ys) = b.covered_cells(self.width, self.height);
        let total = xs.len() * ys.len();
        if total == 0 {
            return 0.0;
        }
        let occluded = ys
            .flat_map(|y| xs.clone().map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
            .count();
        occluded as f64 / total as f64
    }

    /// 0/1 single-channel grid, e.g. for writing to a grid file.
    pub fn to_field(&self) -> MotionField {
        let values = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        MotionField::new(self.width, self.height, 1, values).expect("mask dimensions are valid")
    }
}

/// Indices of detections that pass the confidence and area filters and then
/// survive NMS, in ascending index order.
pub fn filter_detection_indices(dets: &[Detection], params: &PseudoParams) -> Vec<usize> {
    let candidates: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].confidence > params.min_conf && dets[i].bbox.area() >= params.min_area)
        .collect();
    let subset: Vec<Detection> = candidates.iter().map(|&i| dets[i].clone()).collect();
    let mut kept: Vec<usize> = nms_indices(&subset, params.nms_iou)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    kept.sort_unstable();
    kept
}

/// Confidence/area filtering followed by NMS.
pub fn filter_detections(
    dets: &[Detection],
    min_conf: f64,
    min_area: f64,
    nms_iou: f64,
) -> Vec<Detection> {
    let params = PseudoParams {
        min_conf,
        min_area,
        nms_iou,
        ..PseudoParams::default()
    };
    filter_detection_indices(dets, &params)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Warps every reference box by `motion`, matches warped boxes to target boxes
/// by minimum `1 - IoU`, and keeps the pairs whose IoU reaches
/// `min_match_iou`. Reference boxes whose center leaves the field are dropped
/// before matching.
pub fn generate_pseudo_labels(
    reference: &[Detection],
    target: &[Detection],
    motion: &MotionField,
    min_match_iou: f64,
) -> PseudoLabelSet {
    let mut out = PseudoLabelSet::default();
    let mut warped = Vec::with_capacity(reference.len());
    let mut origin = Vec::with_capacity(reference.len());
    for (i, det) in reference.iter().enumerate() {
        match warp_box(&det.bbox, motion) {
            Ok(b) => {
                warped.push(b);
                origin.push(i);
            }
            Err(_) => out.dropped_out_of_field += 1,
        }
    }
    let targets: Vec<BoundingBox> = target.iter().map(|d| d.bbox).collect();
    let cost = iou_cost(&warped, &targets);
    for (k, j) in hungarian(&cost).matches {
        if iou(&warped[k], &targets[j]) >= min_match_iou {
            out.pairs.push((origin[k], j));
        } else {
            out.discarded_low_iou += 1;
        }
    }
    out.pairs.sort_unstable();
    out
}

/// Stereo variant: detections that are too occluded in their own view's mask
/// are removed, then the rest are matched through the disparity field. Pair
/// indices refer to the unfiltered inputs.
pub fn generate_stereo_pseudo_labels(
    left: &[Detection],
    right: &[Detection],
    disparity_left: &MotionField,
    mask_left: &OcclusionMask,
    mask_right: &OcclusionMask,
    params: &PseudoParams,
) -> PseudoLabelSet {
    let keep = |dets: &[Detection], mask: &OcclusionMask| -> Vec<usize> {
        (0..dets.len())
            .filter(|&i| mask.occluded_fraction(&dets[i].bbox) <= params.occlusion_max_ratio)
            .collect()
    };
    let left_idx = keep(left, mask_left);
    let right_idx = keep(right, mask_right);
    let dropped = (left.len() - left_idx.len()) + (right.len() - right_idx.len());
    let l: Vec<Detection> = left_idx.iter().map(|&i| left[i].clone()).collect();
    let r: Vec<Detection> = right_idx.iter().map(|&i| right[i].clone()).collect();
    let mut labels = generate_pseudo_labels(&l, &r, disparity_left, params.min_match_iou);
    for pair in &mut labels.pairs {
        *pair = (left_idx[pair.0], right_idx[pair.1]);
    }
    labels.dropped_occluded = dropped;
    labels
}

/// Marks pixels where `d_near`, warped into the far view by `d_far`, disagrees
/// with `d_far` by at least `tau_occ`. Pixels whose warp sample leaves the
/// grid are marked occluded.
pub fn occlusion_mask(d_near: &MotionField, d_far: &MotionField, tau_occ: f64) -> Result<OcclusionMask> {
    if !(tau_occ > 0.0) {
        return Err(Error::InvalidArgument(format!("tau_occ {tau_occ} must be positive")));
    }
    let warped = warp_grid(d_near, d_far)?;
    let bits = warped
        .values()
        .iter()
        .zip(d_far.values())
        .map(|(w, d)| !w.is_finite() || (w - d).abs() >= tau_occ)
        .collect();
    OcclusionMask::new(d_far.width(), d_far.height(), bits)
}

fn mirror(f: &MotionField) -> Result<MotionField> {
    let (w, h, c) = (f.width(), f.height(), f.channels());
    let mut values = Vec::with_capacity(f.values().len());
    for y in 0..h {
        for x in (0..w).rev() {
            for ch in 0..c {
                values.push(f.get(x, y, ch));
            }
        }
    }
    MotionField::with_invalid(w, h, c, values)
}

fn mirror_mask(m: &OcclusionMask) -> OcclusionMask {
    let (w, h) = (m.width(), m.height());
    let bits = (0..h).flat_map(|y| (0..w).rev().map(move |x| m.get(x, y))).collect();
    OcclusionMask { width: w, height: h, bits }
}

/// Left- and right-view masks from a rectified stereo pair whose disparities
/// are both non-negative (left pixel `x` sees right pixel `x - d`). The right
/// mask is computed in mirrored coordinates, where the roles of the views swap.
pub fn stereo_occlusion_masks(
    d_left: &MotionField,
    d_right: &MotionField,
    tau_occ: f64,
) -> Result<(OcclusionMask, OcclusionMask)> {
    let left = occlusion_mask(d_right, d_left, tau_occ)?;
    let right = mirror_mask(&occlusion_mask(&mirror(d_left)?, &mirror(d_right)?, tau_occ)?);
    Ok((left, right))
}

/// Removes detections whose occluded-cell fraction exceeds `max_ratio`.
pub fn drop_occluded(dets: &[Detection], mask: &OcclusionMask, max_ratio: f64) -> Vec<Detection> {
    dets.iter()
        .filter(|d| mask.occluded_fraction(&d.bbox) <= max_ratio)
        .cloned()
        .collect()
}
