//! Zero-variance diagnostics over reward groups.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::grpo::{mean_std, GrpoError};
use crate::model::Scheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub scheme: Option<Scheme>,
    pub groups_total: usize,
    pub groups_zero_variance: usize,
    pub zero_variance_pct: f64,
    pub per_group_variance: Vec<f64>,
}

/// Population variance of one group.
pub fn group_variance(rewards: &[f64]) -> Result<f64, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (_, std) = mean_std(rewards);
    Ok(std * std)
}

/// Counts groups whose variance is below `std_eps^2`, the same cut that
/// zeroes their advantages.
pub fn report<G: AsRef<[f64]>>(
    groups: &[G],
    std_eps: f64,
    scheme: Option<Scheme>,
) -> Result<VarianceReport, GrpoError> {
    let per_group_variance = groups
        .iter()
        .map(|g| group_variance(g.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let cut = std_eps * std_eps;
    let zero = per_group_variance.iter().filter(|v| **v < cut).count();
    let total = per_group_variance.len();
    Ok(VarianceReport {
        scheme,
        groups_total: total,
        groups_zero_variance: zero,
        zero_variance_pct: if total == 0 {
            0.0
        } else {
            100.0 * zero as f64 / total as f64
        },
        per_group_variance,
    })
}

impl VarianceReport {
    pub fn zero_variance_fraction(&self) -> f64 {
        self.zero_variance_pct / 100.0
    }

    /// Aligned text table, one row per report.
    pub fn table(reports: &[VarianceReport]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>8} {:>14} {:>9}",
            "scheme", "groups", "zero_variance", "pct"
        );
        for r in reports {
            let name = r.scheme.map_or("-", Scheme::as_str);
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>14} {:>8.2}%",
                name, r.groups_total, r.groups_zero_variance, r.zero_variance_pct
            );
        }
        out
    }

    /// `group,variance` rows for external plotting.
    pub fn variance_csv(&self) -> String {
        let mut out = String::from("group,variance\n");
        for (i, v) in self.per_group_variance.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}
