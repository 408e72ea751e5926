//! Reward components and their scheme-dependent composition.
//!
//! For a response `y` on sample `x` with `m` predicted and `n` ground-truth
//! boxes:
//!
//! * `r_cls = 1` iff the decoded label equals the ground truth.
//! * abnormal samples: `r_loc = mean GIoU over Hungarian-matched pairs + alpha * r_count(m, n)`
//! * normal samples: `r_loc = r_focus(m)`
//! * `r_format = 1` iff the three-stage structure is respected.
//!
//! The total is assembled according to [`Scheme`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assignment::{cost_matrix, solve, Matching};
use crate::geometry::giou;
use crate::model::{BBox, Label, RewardConfig, Sample, Scheme};
use crate::parser::ParsedResponse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_cls: f64,
    /// `r_count(m, n)` on abnormal samples, `r_focus(m)` on normal ones.
    pub r_count_or_focus: f64,
    pub r_giou_mean: f64,
    pub r_loc: f64,
    pub r_format: f64,
    pub r_random: f64,
    pub total: f64,
    pub matched_pairs: Matching,
    pub m: usize,
    pub n: usize,
}

pub fn r_cls(pred: Option<Label>, gt: Label) -> f64 {
    if pred == Some(gt) {
        1.0
    } else {
        0.0
    }
}

pub fn r_count(m: usize, n: usize) -> f64 {
    match m.abs_diff(n) {
        0 => 1.0,
        1 => 0.5,
        _ => -0.1,
    }
}

pub fn r_focus(m: usize) -> f64 {
    match m {
        0 => 0.0,
        1 => 0.5,
        _ => -0.1,
    }
}

/// Localization reward and the matching it was computed from.
///
/// An empty matching contributes a GIoU mean of 0; surplus or missing boxes
/// only show up through the count term.
pub fn r_loc(preds: &[BBox], sample: &Sample, alpha: f64) -> (f64, Matching) {
    let (value, _, matching) = loc_parts(preds, sample, alpha);
    (value, matching)
}

fn loc_parts(preds: &[BBox], sample: &Sample, alpha: f64) -> (f64, f64, Matching) {
    match sample.label {
        Label::Normal => (r_focus(preds.len()), 0.0, Matching::default()),
        Label::Abnormal => {
            let matching = solve(&cost_matrix(preds, &sample.gt_boxes));
            let giou_mean = if matching.is_empty() {
                0.0
            } else {
                matching
                    .pairs
                    .iter()
                    .map(|&(i, j)| giou(&preds[i], &sample.gt_boxes[j]))
                    .sum::<f64>()
                    / matching.len() as f64
            };
            let value = giou_mean + alpha * r_count(preds.len(), sample.gt_boxes.len());
            (value, giou_mean, matching)
        }
    }
}

pub fn r_format(parsed: &ParsedResponse) -> f64 {
    if parsed.format_ok {
        1.0
    } else {
        0.0
    }
}

/// One draw from `Normal(0, sigma^2)`; exactly 0 when `sigma == 0`.
pub fn r_random<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma)
        .expect("sigma must be finite and non-negative")
        .sample(rng)
}

fn fnv1a(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for one group: seeded by `seed`, on a stream keyed by the
/// sample id, so groups can be scored in any order or in parallel.
pub fn group_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(sample_id));
    rng
}

/// Scores one parsed response. Only [`Scheme::ClsRandom`] consumes `rng`.
pub fn assemble<R: Rng + ?Sized>(
    parsed: &ParsedResponse,
    sample: &Sample,
    cfg: &RewardConfig,
    rng: &mut R,
) -> RewardBreakdown {
    let m = parsed.pred_boxes.len();
    let n = sample.gt_boxes.len();
    let cls = r_cls(parsed.label, sample.label);
    let count_or_focus = match sample.label {
        Label::Abnormal => r_count(m, n),
        Label::Normal => r_focus(m),
    };
    let (loc, giou_mean, matched_pairs) = loc_parts(&parsed.pred_boxes, sample, cfg.alpha);
    let format = r_format(parsed);
    let random = if cfg.scheme == Scheme::ClsRandom {
        r_random(cfg.random_sigma, rng)
    } else {
        0.0
    };
    let total = match cfg.scheme {
        Scheme::Cls => cls,
        Scheme::ClsCount => cls + count_or_focus,
        Scheme::ClsLoc => cls + loc,
        Scheme::ClsLocFormat => cls + loc + format,
        Scheme::ClsRandom => cls + random,
    };
    RewardBreakdown {
        r_cls: cls,
        r_count_or_focus: count_or_focus,
        r_giou_mean: giou_mean,
        r_loc: loc,
        r_format: format,
        r_random: random,
        total,
        matched_pairs,
        m,
        n,
    }
}
