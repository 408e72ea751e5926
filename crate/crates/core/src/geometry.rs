//! Overlap measures between axis-aligned boxes.
//!
//! All functions assume valid boxes (finite, strictly positive area). Shared
//! edges contribute zero intersection area.

use crate::model::BBox;

/// Smallest axis-aligned box containing both inputs.
pub fn enclosing(a: &BBox, b: &BBox) -> BBox {
    BBox {
        x1: a.x1.min(b.x1),
        y1: a.y1.min(b.y1),
        x2: a.x2.max(b.x2),
        y2: a.y2.max(b.y2),
    }
}

pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

fn inter_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let inter = intersection_area(a, b);
    (inter, a.area() + b.area() - inter)
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = inter_union(a, b);
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: IoU minus the share of the enclosing box not covered by
/// the union. Ranges over `[-1, 1]` and equals IoU when one box contains the
/// other.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = inter_union(a, b);
    let hull = enclosing(a, b).area();
    let iou = inter / union;
    (iou - (hull - union) / hull).clamp(-1.0, 1.0)
}
