//! Group-relative advantages, per-token KL and the scalar GRPO losses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ResponseRecord, RewardConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {0} responses; at least 2 are required")]
    GroupTooSmall(usize),
    #[error("response {0} is missing token logprobs")]
    MissingLogprobs(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("chosen index {index} is out of range for {len} categories")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSignal {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub kl_per_response: Vec<f64>,
    pub loss_rew: f64,
    pub loss_reg: f64,
    pub loss_total: f64,
    pub zero_variance: bool,
}

/// Population mean and standard deviation (divide by `G`).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores within the group. A group whose population std is below
/// `std_eps` carries no signal and gets all-zero advantages.
pub fn advantages(rewards: &[f64], std_eps: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let (mean, std) = mean_std(rewards);
    if std < std_eps {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Non-negative per-token KL estimate `rho - ln(rho) - 1` with
/// `rho = pi_ref / pi_theta`.
pub fn kl_per_token(logp_policy: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_policy;
    // expm1 keeps precision when the two logprobs are close
    (d.exp_m1() - d).max(0.0)
}

/// Advantages, per-response KL and losses for one group:
///
/// `L_rew = -(1/G) sum_i mean_t(A_i * logp_i,t)`,
/// `L_reg = (1/G) sum_i mean_t kl_i,t`, `L = L_rew + beta * L_reg`.
pub fn losses(
    group: &[ResponseRecord],
    rewards: &[f64],
    cfg: &RewardConfig,
) -> Result<GroupSignal, GrpoError> {
    if group.len() != rewards.len() {
        return Err(GrpoError::LengthMismatch(format!(
            "{} responses but {} rewards",
            group.len(),
            rewards.len()
        )));
    }
    let adv = advantages(rewards, cfg.std_eps)?;
    let g = group.len() as f64;

    let mut loss_rew = 0.0;
    let mut kl_per_response = Vec::with_capacity(group.len());
    for (i, (rec, a)) in group.iter().zip(&adv).enumerate() {
        let (Some(pol), Some(rf)) = (&rec.token_logprobs_policy, &rec.token_logprobs_ref) else {
            return Err(GrpoError::MissingLogprobs(i));
        };
        if pol.len() != rf.len() || pol.is_empty() {
            return Err(GrpoError::LengthMismatch(format!(
                "response {i}: {} policy vs {} reference tokens",
                pol.len(),
                rf.len()
            )));
        }
        let t = pol.len() as f64;
        loss_rew += pol.iter().map(|lp| a * lp).sum::<f64>() / t;
        let kl = pol
            .iter()
            .zip(rf)
            .map(|(p, r)| kl_per_token(*p, *r))
            .sum::<f64>()
            / t;
        kl_per_response.push(kl);
    }
    let loss_rew = -loss_rew / g;
    let loss_reg = kl_per_response.iter().sum::<f64>() / g;
    let zero_variance = adv.iter().all(|a| *a == 0.0);

    Ok(GroupSignal {
        rewards: rewards.to_vec(),
        advantages: adv,
        kl_per_response,
        loss_rew,
        loss_reg,
        loss_total: loss_rew + cfg.beta * loss_reg,
        zero_variance,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Gradient w.r.t. `logits` of `sum_i A_i * log softmax(logits)[chosen_i]`,
/// i.e. `sum_i A_i * (onehot(chosen_i) - softmax(logits))`.
pub fn policy_gradient_categorical(
    logits: &[f64],
    chosen: &[usize],
    advantages: &[f64],
) -> Result<Vec<f64>, GrpoError> {
    if chosen.len() != advantages.len() {
        return Err(GrpoError::LengthMismatch(format!(
            "{} choices but {} advantages",
            chosen.len(),
            advantages.len()
        )));
    }
    if let Some(&index) = chosen.iter().find(|&&c| c >= logits.len()) {
        return Err(GrpoError::IndexOutOfRange {
            index,
            len: logits.len(),
        });
    }
    let probs = softmax(logits);
    let mut grad = vec![0.0; logits.len()];
    for (&c, &a) in chosen.iter().zip(advantages) {
        if a == 0.0 {
            continue;
        }
        grad[c] += a;
        for (g, p) in grad.iter_mut().zip(&probs) {
            *g -= a * p;
        }
    }
    Ok(grad)
}
