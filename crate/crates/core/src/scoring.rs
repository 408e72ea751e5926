//! Scoring of one response group end to end: parse, reward, advantages and,
//! when every response carries token logprobs, the GRPO losses.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Matching;
use crate::grpo::{self, GrpoError};
use crate::model::{ModelError, ResponseRecord, RewardConfig, Sample, Scheme};
use crate::parser::parse;
use crate::rewards::{assemble, group_rng};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("response {index} belongs to `{got}` but the group is for `{expected}`")]
    SampleMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
}

/// One scored response, the line format of `fgreward score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecordOut {
    pub group_id: usize,
    pub sample_id: String,
    pub index_in_group: usize,
    pub scheme: Scheme,
    pub label: Option<u8>,
    pub format_ok: bool,
    pub r_cls: f64,
    pub r_count_or_focus: f64,
    pub r_giou_mean: f64,
    pub r_loc: f64,
    pub r_format: f64,
    pub r_random: f64,
    pub total: f64,
    pub matched_pairs: Vec<(usize, usize)>,
    pub matching_cost: f64,
    pub m: usize,
    pub n: usize,
    pub advantage: f64,
    pub zero_variance: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_rew: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_reg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_total: Option<f64>,
}

impl ScoreRecordOut {
    pub fn matching(&self) -> Matching {
        Matching {
            pairs: self.matched_pairs.clone(),
            total_cost: self.matching_cost,
        }
    }
}

/// Key for the reward-noise stream of the `repeat`-th group of a sample.
fn noise_key(sample_id: &str, repeat: usize) -> String {
    if repeat == 0 {
        sample_id.to_string()
    } else {
        format!("{sample_id}#{repeat}")
    }
}

/// Scores `responses` (all for `sample`) as one group.
///
/// `repeat` distinguishes successive groups drawn for the same sample so
/// that they get independent reward noise.
pub fn score_group(
    sample: &Sample,
    responses: &[ResponseRecord],
    cfg: &RewardConfig,
    group_id: usize,
    repeat: usize,
) -> Result<Vec<ScoreRecordOut>, ScoreError> {
    cfg.validate()?;
    sample.validate()?;
    if responses.len() < 2 {
        return Err(GrpoError::GroupTooSmall(responses.len()).into());
    }
    for (index, r) in responses.iter().enumerate() {
        if r.sample_id != sample.id {
            return Err(ScoreError::SampleMismatch {
                index,
                expected: sample.id.clone(),
                got: r.sample_id.clone(),
            });
        }
        r.validate()?;
    }

    let mut rng = group_rng(cfg.seed, &noise_key(&sample.id, repeat));
    let scored: Vec<_> = responses
        .iter()
        .map(|r| {
            let parsed = parse(&r.text);
            let breakdown = assemble(&parsed, sample, cfg, &mut rng);
            (parsed, breakdown)
        })
        .collect();
    let rewards: Vec<f64> = scored.iter().map(|(_, b)| b.total).collect();

    let with_logprobs = responses
        .iter()
        .filter(|r| r.token_logprobs_policy.is_some() || r.token_logprobs_ref.is_some())
        .count();
    let signal = if with_logprobs > 0 {
        Some(grpo::losses(responses, &rewards, cfg)?)
    } else {
        None
    };
    let advantages = match &signal {
        Some(s) => s.advantages.clone(),
        None => grpo::advantages(&rewards, cfg.std_eps)?,
    };
    let zero_variance = advantages.iter().all(|a| *a == 0.0);

    Ok(scored
        .into_iter()
        .zip(advantages)
        .enumerate()
        .map(|(i, ((parsed, b), advantage))| ScoreRecordOut {
            group_id,
            sample_id: sample.id.clone(),
            index_in_group: i,
            scheme: cfg.scheme,
            label: parsed.label.map(|l| l.as_u8()),
            format_ok: parsed.format_ok,
            r_cls: b.r_cls,
            r_count_or_focus: b.r_count_or_focus,
            r_giou_mean: b.r_giou_mean,
            r_loc: b.r_loc,
            r_format: b.r_format,
            r_random: b.r_random,
            total: b.total,
            matched_pairs: b.matched_pairs.pairs,
            matching_cost: b.matched_pairs.total_cost,
            m: b.m,
            n: b.n,
            advantage,
            zero_variance,
            kl: signal.as_ref().map(|s| s.kl_per_response[i]),
            loss_rew: signal.as_ref().map(|s| s.loss_rew),
            loss_reg: signal.as_ref().map(|s| s.loss_reg),
            loss_total: signal.as_ref().map(|s| s.loss_total),
        })
        .collect())
}

/// Looks up the group's sample by the first response's id and scores it.
pub fn score_group_in(
    samples: &[Sample],
    responses: &[ResponseRecord],
    cfg: &RewardConfig,
) -> Result<Vec<ScoreRecordOut>, ScoreError> {
    let Some(first) = responses.first() else {
        return Err(GrpoError::GroupTooSmall(0).into());
    };
    let sample = samples
        .iter()
        .find(|s| s.id == first.sample_id)
        .ok_or_else(|| ScoreError::UnknownSample(first.sample_id.clone()))?;
    score_group(sample, responses, cfg, 0, 0)
}
