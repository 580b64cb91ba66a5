//! Box geometry and dense motion fields.

use std::ops::Range;

use crate::error::{Error, Result};

/// Axis-aligned box in pixel coordinates, corner convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from its top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Shifts the box by `(dx, dy)`, keeping its shape.
    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Integer pixel cells `[x, x+1) x [y, y+1)` that the box overlaps, clipped
    /// to a `width x height` grid.
    pub fn covered_cells(&self, width: usize, height: usize) -> (Range<usize>, Range<usize>) {
        let clip = |lo: f64, hi: f64, n: usize| {
            let start = lo.floor().max(0.0).min(n as f64) as usize;
            let end = hi.ceil().max(0.0).min(n as f64) as usize;
            start..end.max(start)
        };
        (clip(self.x1, self.x2, width), clip(self.y1, self.y2, height))
    }
}

/// One observed object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub class_id: i64,
    pub frame: i64,
    /// Row of this detection in the accompanying embedding table.
    pub embedding_row: Option<usize>,
}

impl Detection {
    pub fn new(bbox: BoundingBox, confidence: f64, class_id: i64, frame: i64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            bbox,
            confidence,
            class_id,
            frame,
            embedding_row: None,
        })
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Dense per-pixel motion: 2 channels for optical flow (dx, dy) or 1 channel
/// for disparity. Values are row-major with channels interleaved per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl MotionField {
    /// Builds a field whose values must all be finite.
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let field = Self::with_invalid(width, height, channels, values)?;
        if field.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("motion field contains non-finite values".into()));
        }
        Ok(field)
    }

    /// Builds a field that may carry non-finite values as invalid-pixel markers.
    pub fn with_invalid(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 2 {
            return Err(Error::InvalidArgument(format!(
                "motion field must have 1 or 2 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("motion field must be non-empty".into()));
        }
        if values.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} field needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: &[f64]) -> Result<Self> {
        let values = (0..width * height).flat_map(|_| value.iter().copied()).collect();
        Self::new(width, height, value.len(), values)
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + channel]
    }

    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: f64) {
        let idx = (y * self.width + x) * self.channels + channel;
        self.values[idx] = value;
    }

    /// Whether a continuous position lies inside the sample lattice
    /// `[0, width-1] x [0, height-1]`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinear sample of one channel; `None` outside the lattice.
    pub fn sample(&self, x: f64, y: f64, channel: usize) -> Option<f64> {
        if !self.contains(x, y) {
            return None;
        }
        let (x0, fx) = split_coord(x, self.width);
        let (y0, fy) = split_coord(y, self.height);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = lerp(self.get(x0, y0, channel), self.get(x1, y0, channel), fx);
        let bottom = lerp(self.get(x0, y1, channel), self.get(x1, y1, channel), fx);
        Some(lerp(top, bottom, fy))
    }

    /// Motion vector `(dx, dy)` at a position. Disparity fields map to a
    /// horizontal shift of `-d`.
    pub fn motion_at(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self.channels {
            2 => Some((self.sample(x, y, 0)?, self.sample(x, y, 1)?)),
            _ => Some((-self.sample(x, y, 0)?, 0.0)),
        }
    }
}

fn split_coord(v: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let base = (v.floor() as usize).min(n - 2);
    (base, v - base as f64)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        a + (b - a) * t
    }
}

/// Forward-warps a box by the motion sampled at its center.
pub fn warp_box(b: &BoundingBox, m: &MotionField) -> Result<BoundingBox> {
    let (cx, cy) = b.center();
    let (dx, dy) = m.motion_at(cx, cy).ok_or(Error::CenterOutOfField {
        x: cx,
        y: cy,
        width: m.width,
        height: m.height,
    })?;
    b.translate(dx, dy)
}

/// Greedy non-maximum suppression. Survivors are returned in descending
/// confidence order; equal confidences keep input order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Input indices of the NMS survivors, in survivor order.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));
    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&dets[k].bbox, &dets[idx].bbox) > iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    kept
}

/// Resamples a single-channel grid horizontally:
/// `out(x, y) = src(x - disp(x, y), y)`. Samples falling outside the grid are
/// set to NaN.
pub fn warp_grid(src: &MotionField, disp: &MotionField) -> Result<MotionField> {
    if src.channels != 1 || disp.channels != 1 {
        return Err(Error::DimensionMismatch(
            "warp_grid expects single-channel grids".into(),
        ));
    }
    if src.width != disp.width || src.height != disp.height {
        return Err(Error::DimensionMismatch(format!(
            "source is {}x{}, disparity is {}x{}",
            src.width, src.height, disp.width, disp.height
        )));
    }
    let mut out = Vec::with_capacity(src.values.len());
    for y in 0..src.height {
        for x in 0..src.width {
            let d = disp.get(x, y, 0);
            let sx = x as f64 - d;
            out.push(src.sample(sx, y as f64, 0).unwrap_or(f64::NAN));
        }
    }
    MotionField::with_invalid(src.width, src.height, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(b: BoundingBox, conf: f64) -> Detection {
        Detection::new(b, conf, 0, 0).unwrap()
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 5.0, 4.0, 5.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 5.0).is_err());
        assert!(BoundingBox::new(3.0, 0.0, 1.0, 5.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        // inter = 5*10 = 50, union = 100 + 100 - 50 = 150
        let v = iou(&a, &bx(5.0, 0.0, 15.0, 10.0));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
        // touching edges have zero overlap
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn warp_box_constant_and_zero_fields() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let flow = MotionField::constant(20, 20, &[3.0, -2.0]).unwrap();
        assert_eq!(warp_box(&b, &flow).unwrap(), bx(3.0, -2.0, 13.0, 8.0));
        let zero = MotionField::zeros(20, 20, 2).unwrap();
        assert_eq!(warp_box(&b, &zero).unwrap(), b);
    }

    #[test]
    fn warp_box_disparity_shifts_left() {
        let b = bx(4.0, 0.0, 8.0, 4.0);
        let disp = MotionField::constant(16, 8, &[3.0]).unwrap();
        assert_eq!(warp_box(&b, &disp).unwrap(), bx(1.0, 0.0, 5.0, 4.0));
    }

    #[test]
    fn warp_box_at_flow_discontinuity() {
        // dx = 0 for x <= 5, dx = 4 for x >= 6; dy = 1 for y <= 5, dy = -1 below.
        let (w, h) = (12, 12);
        let mut flow = MotionField::zeros(w, h, 2).unwrap();
        for y in 0..h {
            for x in 0..w {
                flow.set(x, y, 0, if x >= 6 { 4.0 } else { 0.0 });
                flow.set(x, y, 1, if y >= 6 { -1.0 } else { 1.0 });
            }
        }
        // center (5.5, 5.25): dx = 0.5*0 + 0.5*4 = 2, dy = 0.75*1 + 0.25*(-1) = 0.5
        let b = bx(0.0, 0.5, 11.0, 10.0);
        let warped = warp_box(&b, &flow).unwrap();
        assert_eq!(warped, bx(2.0, 1.0, 13.0, 10.5));
    }

    #[test]
    fn warp_box_center_out_of_field() {
        let b = bx(30.0, 0.0, 40.0, 10.0);
        let flow = MotionField::zeros(20, 20, 2).unwrap();
        assert!(matches!(
            warp_box(&b, &flow),
            Err(Error::CenterOutOfField { .. })
        ));
    }

    #[test]
    fn nms_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let out = nms(&[det(a, 0.8), det(a, 0.9)], 0.3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.9);

        let disjoint = [
            det(a, 0.5),
            det(bx(20.0, 0.0, 30.0, 10.0), 0.7),
            det(bx(40.0, 0.0, 50.0, 10.0), 0.6),
        ];
        assert_eq!(nms(&disjoint, 0.3).len(), 3);

        // box 2 overlaps both neighbors with IoU 0.4 (inter 60, union 150), 1 and 3 are disjoint
        let b1 = bx(0.0, 0.0, 10.0, 9.0);
        let b2 = bx(0.0, 3.0, 10.0, 15.0);
        let b3 = bx(0.0, 9.0, 10.0, 18.0);
        assert!((iou(&b1, &b2) - 0.4).abs() < 1e-12);
        assert!((iou(&b2, &b3) - 0.4).abs() < 1e-12);
        assert_eq!(iou(&b1, &b3), 0.0);
        let out = nms(&[det(b1, 0.9), det(b2, 0.8), det(b3, 0.7)], 0.3);
        let boxes: Vec<_> = out.iter().map(|d| d.bbox).collect();
        assert_eq!(boxes, vec![b1, b3]);
    }

    #[test]
    fn nms_tie_prefers_lower_index() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let mut first = det(a, 0.9);
        first.class_id = 1;
        let mut second = det(a, 0.9);
        second.class_id = 2;
        let out = nms(&[first, second], 0.3);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].class_id, 1);
    }

    #[test]
    fn warp_grid_examples() {
        let src = MotionField::constant(8, 3, &[10.0]).unwrap();
        let zero = MotionField::zeros(8, 3, 1).unwrap();
        assert_eq!(warp_grid(&src, &zero).unwrap(), src);

        let two = MotionField::constant(8, 3, &[2.0]).unwrap();
        let out = warp_grid(&src, &two).unwrap();
        for y in 0..3 {
            for x in 0..8 {
                let v = out.get(x, y, 0);
                if x < 2 {
                    assert!(v.is_nan());
                } else {
                    assert_eq!(v, 10.0);
                }
            }
        }

        let ramp: Vec<f64> = (0..3).flat_map(|_| (0..8).map(|x| x as f64)).collect();
        let ramp = MotionField::new(8, 3, 1, ramp).unwrap();
        let one = MotionField::constant(8, 3, &[1.0]).unwrap();
        let out = warp_grid(&ramp, &one).unwrap();
        assert!(out.get(0, 1, 0).is_nan());
        for x in 1..8 {
            assert_eq!(out.get(x, 1, 0), x as f64 - 1.0);
        }
        // fractional disparity interpolates linearly on the ramp
        let half = MotionField::constant(8, 3, &[0.5]).unwrap();
        let out = warp_grid(&ramp, &half).unwrap();
        assert_eq!(out.get(4, 0, 0), 3.5);
    }

    #[test]
    fn warp_grid_dimension_mismatch() {
        let a = MotionField::zeros(4, 4, 1).unwrap();
        let b = MotionField::zeros(5, 4, 1).unwrap();
        assert!(matches!(warp_grid(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn covered_cells_clip() {
        let b = bx(-2.5, 1.2, 3.5, 4.0);
        let (xs, ys) = b.covered_cells(10, 10);
        assert_eq!(xs, 0..4);
        assert_eq!(ys, 1..4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = BoundingBox> {
            (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
                .prop_map(|(x, y, w, h)| BoundingBox::from_xywh(x, y, w, h).unwrap())
        }

        fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
            prop::collection::vec((arb_box(), 0.0..1.0f64), 0..12).prop_map(|v| {
                v.into_iter()
                    .map(|(b, c)| Detection::new(b, c, 0, 0).unwrap())
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
                let v = iou(&a, &b);
                prop_assert_eq!(v, iou(&b, &a));
                prop_assert!((0.0..=1.0).contains(&v));
            }

            #[test]
            fn iou_translation_invariant(a in arb_box(), b in arb_box(),
                                         dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
                let ta = a.translate(dx, dy).unwrap();
                let tb = b.translate(dx, dy).unwrap();
                prop_assert!((iou(&a, &b) - iou(&ta, &tb)).abs() < 1e-12);
            }

            #[test]
            fn nms_subset_and_suppression(dets in arb_dets(), thr in 0.0..1.0f64) {
                let kept = nms(&dets, thr);
                for k in &kept {
                    prop_assert!(dets.contains(k));
                }
                for (i, a) in kept.iter().enumerate() {
                    for b in &kept[i + 1..] {
                        prop_assert!(iou(&a.bbox, &b.bbox) <= thr);
                    }
                }
                for d in &dets {
                    if !kept.contains(d) {
                        prop_assert!(kept.iter().any(|k| k.confidence >= d.confidence
                            && iou(&k.bbox, &d.bbox) > thr));
                    }
                }
            }

            #[test]
            fn zero_field_warp_is_identity(b in arb_box()) {
                let field = MotionField::zeros(200, 200, 2).unwrap();
                let shifted = b.translate(100.0, 100.0).unwrap();
                prop_assert_eq!(warp_box(&shifted, &field).unwrap(), shifted);
            }
        }
    }
}
