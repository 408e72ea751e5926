#![allow(dead_code)]

use std::collections::BTreeSet;

use fgreward_core::mask2box::BinaryMask;
use fgreward_core::BBox;

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn demo_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo_scenario.json")
}

/// Minimum over all injective assignments of the smaller side, each sum
/// taken in row order like the solver's `total_cost`.
pub fn brute_force_min(cost: &[Vec<f64>], cols: usize) -> f64 {
    let rows = cost.len();
    let mut best = f64::INFINITY;
    let mut pairs = Vec::new();
    if rows <= cols {
        let mut used = vec![false; cols];
        assign_rows(cost, 0, &mut used, &mut pairs, &mut best);
    } else {
        let mut used = vec![false; rows];
        assign_cols(cost, cols, 0, &mut used, &mut pairs, &mut best);
    }
    if rows == 0 || cols == 0 {
        0.0
    } else {
        best
    }
}

fn row_order_sum(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    sorted.iter().map(|&(i, j)| cost[i][j]).sum()
}

fn assign_rows(
    cost: &[Vec<f64>],
    row: usize,
    used: &mut [bool],
    pairs: &mut Vec<(usize, usize)>,
    best: &mut f64,
) {
    if row == cost.len() {
        *best = best.min(row_order_sum(cost, pairs));
        return;
    }
    for j in 0..used.len() {
        if !used[j] {
            used[j] = true;
            pairs.push((row, j));
            assign_rows(cost, row + 1, used, pairs, best);
            pairs.pop();
            used[j] = false;
        }
    }
}

fn assign_cols(
    cost: &[Vec<f64>],
    cols: usize,
    col: usize,
    used: &mut [bool],
    pairs: &mut Vec<(usize, usize)>,
    best: &mut f64,
) {
    if col == cols {
        *best = best.min(row_order_sum(cost, pairs));
        return;
    }
    for i in 0..used.len() {
        if !used[i] {
            used[i] = true;
            pairs.push((i, col));
            assign_cols(cost, cols, col + 1, used, pairs, best);
            pairs.pop();
            used[i] = false;
        }
    }
}

/// GIoU from first principles: areas via explicit overlap lengths.
pub fn giou_oracle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let overlap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| (hi1.min(hi2) - lo1.max(lo2)).max(0.0);
    let inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3]);
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    let hull = (a[2].max(b[2]) - a[0].min(b[0])) * (a[3].max(b[3]) - a[1].min(b[1]));
    inter / union - (hull - union) / hull
}

/// Dilation by checking every pixel's full square window, repeated.
pub fn dilate_oracle(mask: &BinaryMask, kernel: usize, iterations: usize) -> BinaryMask {
    let r = (kernel / 2) as isize;
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let mut cur = mask.clone();
    for _ in 0..iterations {
        let mut next = BinaryMask::empty(mask.width(), mask.height());
        for y in 0..h {
            for x in 0..w {
                let hit = (-r..=r).any(|dy| {
                    (-r..=r).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && cur.get(nx as usize, ny as usize)
                    })
                });
                next.set(x as usize, y as usize, hit);
            }
        }
        cur = next;
    }
    cur
}

/// Recursive 8-connected flood fill over the oracle dilation; boxes sorted
/// by `(y1, x1)`.
pub fn boxes_oracle(
    mask: &BinaryMask,
    kernel: usize,
    iterations: usize,
    min_area: f64,
) -> Vec<BBox> {
    let d = dilate_oracle(mask, kernel, iterations);
    let (w, h) = (d.width(), d.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();

    fn fill(d: &BinaryMask, x: usize, y: usize, seen: &mut [bool], ext: &mut [usize; 4]) {
        let w = d.width();
        if seen[y * w + x] || !d.get(x, y) {
            return;
        }
        seen[y * w + x] = true;
        ext[0] = ext[0].min(x);
        ext[1] = ext[1].min(y);
        ext[2] = ext[2].max(x);
        ext[3] = ext[3].max(y);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < d.height() {
                    fill(d, nx as usize, ny as usize, seen, ext);
                }
            }
        }
    }

    for y in 0..h {
        for x in 0..w {
            if d.get(x, y) && !seen[y * w + x] {
                let mut ext = [x, y, x, y];
                fill(&d, x, y, &mut seen, &mut ext);
                let b = BBox::from([
                    ext[0] as f64,
                    ext[1] as f64,
                    (ext[2] + 1) as f64,
                    (ext[3] + 1) as f64,
                ]);
                if b.area() >= min_area {
                    out.push(b);
                }
            }
        }
    }
    out.sort_by(|a, b| (a.y1, a.x1).partial_cmp(&(b.y1, b.x1)).unwrap());
    out
}

/// Every foreground pixel of `mask` lies inside some box.
pub fn covers(mask: &BinaryMask, boxes: &[BBox]) -> bool {
    (0..mask.height()).all(|y| {
        (0..mask.width()).all(|x| {
            !mask.get(x, y)
                || boxes.iter().any(|b| {
                    (x as f64) >= b.x1
                        && (x as f64) < b.x2
                        && (y as f64) >= b.y1
                        && (y as f64) < b.y2
                })
        })
    })
}

pub fn box_set(boxes: &[BBox]) -> BTreeSet<[u64; 4]> {
    boxes
        .iter()
        .map(|b| b.to_array().map(f64::to_bits))
        .collect()
}

pub fn two_blobs() -> BinaryMask {
    let mut m = BinaryMask::empty(8, 8);
    for (x, y) in [
        (0, 0),
        (1, 0),
        (0, 1),
        (1, 1),
        (5, 5),
        (6, 5),
        (5, 6),
        (6, 6),
    ] {
        m.set(x, y, true);
    }
    m
}

/// Central finite difference of `f` at `x` along coordinate `k`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[k] += h;
    m[k] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}
