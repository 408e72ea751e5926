//! Minimum-cost bipartite matching between predicted and ground-truth boxes.

use serde::{Deserialize, Serialize};

use crate::geometry::giou;
use crate::model::BBox;

/// Dense row-major `rows x cols` cost matrix. Either dimension may be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "cost matrix data length");
        Self { rows, cols, data }
    }

    /// Builds from nested rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Self::new(self.cols, self.rows, data)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }
}

/// Optimal assignment: `(pred_index, gt_index)` pairs sorted by pred index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `C[i][j] = 1 - GIoU(pred_i, gt_j)`, entries in `[0, 2]`.
pub fn cost_matrix(preds: &[BBox], gts: &[BBox]) -> CostMatrix {
    let data = preds
        .iter()
        .flat_map(|p| gts.iter().map(move |g| 1.0 - giou(p, g)))
        .collect();
    CostMatrix::new(preds.len(), gts.len(), data)
}

/// Kuhn-Munkres with row/column potentials, O(k^3) for `k = max(m, n)`.
///
/// Rectangular input is padded to square with a constant; padded pairs are
/// dropped from the result, so the matching has exactly `min(m, n)` pairs.
///
/// # Panics
///
/// If any entry is not finite.
pub fn solve(cost: &CostMatrix) -> Matching {
    assert!(
        cost.data.iter().all(|c| c.is_finite()),
        "cost matrix entries must be finite"
    );
    let (m, n) = (cost.rows, cost.cols);
    if m == 0 || n == 0 {
        return Matching::default();
    }
    let k = m.max(n);
    // Every padded row (or column) is constant, so its contribution to any
    // complete assignment is the same and the optimum over real entries is
    // unaffected. Zero keeps the potentials on the scale of the real costs.
    let at = |i: usize, j: usize| if i < m && j < n { cost.get(i, j) } else { 0.0 };

    // 1-based potentials; index 0 is the virtual source column.
    let mut u = vec![0.0f64; k + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut row_of_col = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];

    for row in 1..=k {
        row_of_col[0] = row;
        let mut col0 = 0usize;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[col0] = true;
            let i0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            for col in 1..=k {
                if used[col] {
                    continue;
                }
                let cur = at(i0 - 1, col - 1) - u[i0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=k {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; k];
    for col in 1..=k {
        col_of_row[row_of_col[col] - 1] = col - 1;
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .map(|i| (i, col_of_row[i]))
        .filter(|&(_, j)| j < n)
        .collect();
    let total_cost = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Matching { pairs, total_cost }
}
