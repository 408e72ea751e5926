//! Desk-scale GRPO over a softmax-categorical policy.
//!
//! Every sample has its own logit vector over a finite set of response
//! templates: an answer (`normal` / `abnormal`) combined with a subset of at
//! most `max_boxes` shared candidate boxes. Each training step draws a group
//! of templates, renders them to text, scores the text through the real
//! parser and reward code, normalizes the rewards into advantages and takes
//! an exact gradient-ascent step on
//!
//! ```text
//! (1/G) sum_i A_i log pi(y_i)  -  beta * KL(pi || pi_ref)
//! ```
//!
//! The KL term uses the closed form for categorical distributions.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, VarianceReport};
use crate::grpo::{self, log_softmax, softmax, GrpoError};
use crate::model::{BBox, Label, ModelError, RewardConfig, Sample, Scheme};
use crate::parser::{parse, render, ResponseTemplate, TemplateError};
use crate::rewards::{self, assemble, group_rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn default_group_size() -> usize {
    6
}

/// Simulation input, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Largest number of boxes a template may propose.
    pub max_boxes: usize,
    #[serde(default)]
    pub reward: RewardConfig,
    pub candidate_boxes: Vec<BBox>,
    pub samples: Vec<Sample>,
    /// One vector per sample, one entry per template. Frozen during training
    /// and used as the initial policy.
    pub reference_logits: Vec<Vec<f64>>,
}

/// An enumerated response: answer plus indices into the candidate boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub answer: Label,
    pub boxes: Vec<usize>,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Templates in canonical order: answer (normal, abnormal), then subset size,
/// then lexicographic subset.
pub fn enumerate_templates(n_candidates: usize, max_boxes: usize) -> Vec<TemplateSpec> {
    let mut out = Vec::new();
    for answer in [Label::Normal, Label::Abnormal] {
        for k in 0..=max_boxes.min(n_candidates) {
            for boxes in combinations(n_candidates, k) {
                out.push(TemplateSpec { answer, boxes });
            }
        }
    }
    out
}

impl Scenario {
    pub fn templates(&self) -> Vec<TemplateSpec> {
        enumerate_templates(self.candidate_boxes.len(), self.max_boxes)
    }

    pub fn template_boxes(&self, t: &TemplateSpec) -> Vec<BBox> {
        t.boxes.iter().map(|&i| self.candidate_boxes[i]).collect()
    }

    /// Renders every template to response text.
    pub fn render_templates(&self) -> Result<Vec<String>, SimError> {
        self.templates()
            .iter()
            .map(|t| {
                let (think, rethink) = if t.boxes.is_empty() {
                    (
                        "Scanning the whole surface.",
                        "Nothing stands out on closer inspection.",
                    )
                } else {
                    (
                        "Suspicious regions:",
                        "Examined each proposed region in detail.",
                    )
                };
                let answer = match t.answer {
                    Label::Normal => "normal",
                    Label::Abnormal => "abnormal",
                };
                let tpl = ResponseTemplate::new(think, rethink, answer, self.template_boxes(t));
                Ok(render(&tpl)?)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.samples.is_empty() {
            return bad("no samples".into());
        }
        self.reward.validate()?;
        for b in &self.candidate_boxes {
            b.check()?;
        }
        for s in &self.samples {
            s.validate()?;
        }
        let n_templates = self.templates().len();
        if self.reference_logits.len() != self.samples.len() {
            return bad(format!(
                "{} reference logit vectors for {} samples",
                self.reference_logits.len(),
                self.samples.len()
            ));
        }
        for (s, l) in self.samples.iter().zip(&self.reference_logits) {
            if l.len() != n_templates {
                return bad(format!(
                    "sample `{}` has {} reference logits but there are {} templates",
                    s.id,
                    l.len(),
                    n_templates
                ));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return bad(format!("sample `{}` has non-finite reference logits", s.id));
            }
        }
        Ok(())
    }
}

/// `G` i.i.d. draws from `softmax(logits)`, returned as template indices
/// together with the rendered text of each draw.
pub fn rollout<R: Rng + ?Sized>(
    rendered: &[String],
    logits: &[f64],
    group_size: usize,
    rng: &mut R,
) -> (Vec<usize>, Vec<String>) {
    let dist = WeightedIndex::new(softmax(logits)).expect("softmax weights are valid");
    let chosen: Vec<usize> = (0..group_size).map(|_| dist.sample(rng)).collect();
    let texts = chosen.iter().map(|&c| rendered[c].clone()).collect();
    (chosen, texts)
}

/// Exact `KL(softmax(logits) || softmax(reference))`.
pub fn categorical_kl(logits: &[f64], reference: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    let lq = log_softmax(reference);
    lp.iter()
        .zip(&lq)
        .map(|(p, q)| p.exp() * (p - q))
        .sum::<f64>()
        .max(0.0)
}

/// Gradient of [`categorical_kl`] w.r.t. `logits`:
/// `p_j * (log p_j - log q_j - KL)`.
pub fn categorical_kl_grad(logits: &[f64], reference: &[f64]) -> Vec<f64> {
    let lp = log_softmax(logits);
    let lq = log_softmax(reference);
    let kl: f64 = lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum();
    lp.iter()
        .zip(&lq)
        .map(|(p, q)| p.exp() * (p - q - kl))
        .collect()
}

/// Result of scoring one group and forming the ascent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub zero_variance: bool,
    /// `(1/G) * policy gradient - beta * KL gradient`.
    pub update: Vec<f64>,
}

/// Scores an already-drawn group and returns the parameter ascent direction.
#[allow(clippy::too_many_arguments)]
pub fn group_step<R: Rng + ?Sized>(
    logits: &[f64],
    reference: &[f64],
    chosen: &[usize],
    texts: &[String],
    sample: &Sample,
    cfg: &RewardConfig,
    rng: &mut R,
) -> Result<StepResult, SimError> {
    let rewards: Vec<f64> = texts
        .iter()
        .map(|t| assemble(&parse(t), sample, cfg, rng).total)
        .collect();
    let advantages = grpo::advantages(&rewards, cfg.std_eps)?;
    let g = chosen.len() as f64;
    let pg = grpo::policy_gradient_categorical(logits, chosen, &advantages)?;
    let update = if cfg.beta == 0.0 {
        pg.iter().map(|v| v / g).collect()
    } else {
        let kl = categorical_kl_grad(logits, reference);
        pg.iter()
            .zip(&kl)
            .map(|(p, k)| p / g - cfg.beta * k)
            .collect()
    };
    let zero_variance = advantages.iter().all(|a| *a == 0.0);
    Ok(StepResult {
        rewards,
        advantages,
        zero_variance,
        update,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean reward over all responses drawn this epoch.
    pub mean_reward: f64,
    /// Share of this epoch's groups with all-zero advantages.
    pub zero_variance_fraction: f64,
    /// Share of samples whose most likely template has the correct answer,
    /// measured after the epoch's updates.
    pub accuracy: f64,
    /// Mean probability mass on correct-answer templates.
    pub expected_accuracy: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub scheme: Scheme,
    pub epochs: Vec<EpochStats>,
    /// Final per-sample template probabilities.
    pub final_policy: Vec<Vec<f64>>,
    pub modal_templates: Vec<usize>,
    pub final_accuracy: f64,
    /// Mean `r_loc` of each sample's most likely template.
    pub modal_r_loc_mean: f64,
    /// Share of samples whose most likely template proposes the right number
    /// of boxes (one for normal samples, `n` for abnormal ones).
    pub modal_count_correct: f64,
}

impl TrainTrace {
    pub fn mean_zero_variance_fraction(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs
            .iter()
            .map(|e| e.zero_variance_fraction)
            .sum::<f64>()
            / self.epochs.len() as f64
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

struct PolicyView<'a> {
    scenario: &'a Scenario,
    templates: &'a [TemplateSpec],
}

impl PolicyView<'_> {
    fn accuracy(&self, logits: &[Vec<f64>]) -> (f64, f64) {
        let n = self.scenario.samples.len() as f64;
        let (mut greedy, mut expected) = (0.0, 0.0);
        for (s, l) in self.scenario.samples.iter().zip(logits) {
            let p = softmax(l);
            if self.templates[argmax(l)].answer == s.label {
                greedy += 1.0;
            }
            expected += p
                .iter()
                .zip(self.templates)
                .filter(|(_, t)| t.answer == s.label)
                .map(|(p, _)| p)
                .sum::<f64>();
        }
        (greedy / n, expected / n)
    }

    fn mean_kl(&self, logits: &[Vec<f64>]) -> f64 {
        logits
            .iter()
            .zip(&self.scenario.reference_logits)
            .map(|(l, r)| categorical_kl(l, r))
            .sum::<f64>()
            / logits.len() as f64
    }
}

fn reward_key(sample_id: &str, epoch: usize) -> String {
    format!("{sample_id}@{epoch}")
}

/// Trains with the scenario's reward config. Deterministic given the seed.
pub fn train(scenario: &Scenario) -> Result<TrainTrace, SimError> {
    scenario.validate()?;
    let templates = scenario.templates();
    let rendered = scenario.render_templates()?;
    let cfg = &scenario.reward;
    let view = PolicyView {
        scenario,
        templates: &templates,
    };

    let mut logits = scenario.reference_logits.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut epochs = Vec::with_capacity(scenario.epochs);

    for epoch in 0..scenario.epochs {
        let mut reward_sum = 0.0;
        let mut reward_count = 0usize;
        let mut zero_groups = 0usize;
        for (si, sample) in scenario.samples.iter().enumerate() {
            let (chosen, texts) = rollout(&rendered, &logits[si], scenario.group_size, &mut rng);
            let mut noise = group_rng(cfg.seed, &reward_key(&sample.id, epoch));
            let step = group_step(
                &logits[si],
                &scenario.reference_logits[si],
                &chosen,
                &texts,
                sample,
                cfg,
                &mut noise,
            )?;
            reward_sum += step.rewards.iter().sum::<f64>();
            reward_count += step.rewards.len();
            if step.zero_variance {
                zero_groups += 1;
            }
            for (l, u) in logits[si].iter_mut().zip(&step.update) {
                *l += scenario.learning_rate * u;
            }
            if logits[si].iter().any(|v| !v.is_finite()) {
                return Err(SimError::InvalidScenario(format!(
                    "logits diverged for sample `{}` at epoch {epoch}",
                    sample.id
                )));
            }
        }
        let (accuracy, expected_accuracy) = view.accuracy(&logits);
        epochs.push(EpochStats {
            epoch: epoch + 1,
            mean_reward: reward_sum / reward_count as f64,
            zero_variance_fraction: zero_groups as f64 / scenario.samples.len() as f64,
            accuracy,
            expected_accuracy,
            mean_kl: view.mean_kl(&logits),
        });
    }

    let modal_templates: Vec<usize> = logits.iter().map(|l| argmax(l)).collect();
    let (final_accuracy, _) = view.accuracy(&logits);
    let n = scenario.samples.len() as f64;
    let mut r_loc_sum = 0.0;
    let mut count_ok = 0.0;
    for (sample, &t) in scenario.samples.iter().zip(&modal_templates) {
        let boxes = scenario.template_boxes(&templates[t]);
        r_loc_sum += rewards::r_loc(&boxes, sample, cfg.alpha).0;
        let want = match sample.label {
            Label::Normal => 1,
            Label::Abnormal => sample.gt_boxes.len(),
        };
        if boxes.len() == want {
            count_ok += 1.0;
        }
    }

    Ok(TrainTrace {
        scheme: cfg.scheme,
        epochs,
        final_policy: logits.iter().map(|l| softmax(l)).collect(),
        modal_templates,
        final_accuracy,
        modal_r_loc_mean: r_loc_sum / n,
        modal_count_correct: count_ok / n,
    })
}

/// Trains once per scheme from the same seed and initial policy; only the
/// reward assembly differs. Runs are independent and execute in parallel.
pub fn compare_schemes(
    scenario: &Scenario,
    schemes: &[Scheme],
) -> Result<Vec<TrainTrace>, SimError> {
    if schemes.is_empty() {
        return Err(SimError::InvalidScenario("no schemes given".into()));
    }
    schemes
        .par_iter()
        .map(|&scheme| {
            let mut sc = scenario.clone();
            sc.reward.scheme = scheme;
            train(&sc)
        })
        .collect()
}

/// Draws one group per sample from the reference policy and scores the same
/// responses under each scheme, reporting the zero-variance share.
pub fn variance_snapshot(
    scenario: &Scenario,
    schemes: &[Scheme],
) -> Result<Vec<VarianceReport>, SimError> {
    scenario.validate()?;
    let rendered = scenario.render_templates()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let groups: Vec<Vec<String>> = scenario
        .reference_logits
        .iter()
        .map(|l| rollout(&rendered, l, scenario.group_size, &mut rng).1)
        .collect();
    schemes
        .iter()
        .map(|&scheme| {
            let cfg = scenario.reward.clone().with_scheme(scheme);
            let rewards: Vec<Vec<f64>> = scenario
                .samples
                .iter()
                .zip(&groups)
                .map(|(s, texts)| {
                    let mut noise = group_rng(cfg.seed, &s.id);
                    texts
                        .iter()
                        .map(|t| assemble(&parse(t), s, &cfg, &mut noise).total)
                        .collect()
                })
                .collect();
            Ok(analytics::report(&rewards, cfg.std_eps, Some(scheme))?)
        })
        .collect()
}

/// Parameters of the synthetic demo scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoParams {
    pub seed: u64,
    pub n_abnormal: usize,
    pub n_normal: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            seed: 2024,
            n_abnormal: 36,
            n_normal: 24,
            epochs: 15,
            learning_rate: 0.5,
        }
    }
}

const GRID: f64 = 100.0;

/// Six candidate regions tiling a 100x100 frame in a 3x2 layout.
fn demo_candidates() -> Vec<BBox> {
    let mut out = Vec::new();
    for row in 0..2 {
        for col in 0..3 {
            let x1 = 4.0 + 31.0 * f64::from(col);
            let y1 = 4.0 + 48.0 * f64::from(row);
            out.push(BBox::from([x1, y1, x1 + 30.0, y1 + 44.0]));
        }
    }
    out
}

/// Builds the synthetic scenario: abnormal samples carry one or two jittered
/// copies of candidate regions as ground truth, and each sample's reference
/// policy mixes an answer bias, a box-count preference and per-region
/// affinities that favour the true regions.
pub fn demo_scenario(p: &DemoParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let candidates = demo_candidates();
    let k = candidates.len();
    let max_boxes = 2;
    let templates = enumerate_templates(k, max_boxes);
    let unit = Uniform::new(0.0, 1.0).expect("unit interval");
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");

    let mut samples = Vec::new();
    let mut reference_logits = Vec::new();
    for i in 0..p.n_abnormal + p.n_normal {
        let abnormal = i < p.n_abnormal;
        let sample = if abnormal {
            let n = if unit.sample(&mut rng) < 0.7 { 1 } else { 2 };
            let mut idx: Vec<usize> = (0..k).collect();
            for j in 0..n {
                let swap = j + (unit.sample(&mut rng) * (k - j) as f64) as usize;
                idx.swap(j, swap.min(k - 1));
            }
            let gts = idx[..n]
                .iter()
                .map(|&c| {
                    let b = candidates[c];
                    let jitter = |rng: &mut ChaCha8Rng| 6.0 * std_normal.sample(rng);
                    let x1 = (b.x1 + jitter(&mut rng)).clamp(0.0, GRID - 8.0).round();
                    let y1 = (b.y1 + jitter(&mut rng)).clamp(0.0, GRID - 8.0).round();
                    let x2 = (b.x2 + jitter(&mut rng)).clamp(x1 + 8.0, GRID).round();
                    let y2 = (b.y2 + jitter(&mut rng)).clamp(y1 + 8.0, GRID).round();
                    BBox::from([x1, y1, x2, y2])
                })
                .collect();
            Sample::abnormal(format!("abn-{i:03}"), gts)
        } else {
            Sample::normal(format!("nrm-{i:03}"))
        }
        .with_frame(GRID as u32, GRID as u32);

        // answer preference: most samples are easy, some are confidently wrong
        let answer_bias = 1.8 + 1.6 * std_normal.sample(&mut rng);
        // per-answer box-count preferences (0, 1, 2 boxes)
        let abn_counts = [
            -0.5 + 0.8 * std_normal.sample(&mut rng),
            1.2 + 0.8 * std_normal.sample(&mut rng),
            0.3 + 0.8 * std_normal.sample(&mut rng),
        ];
        let nrm_counts = [
            0.6 + 0.8 * std_normal.sample(&mut rng),
            0.4 + 0.8 * std_normal.sample(&mut rng),
            -0.6 + 0.8 * std_normal.sample(&mut rng),
        ];
        let affinity: Vec<f64> = candidates
            .iter()
            .map(|c| {
                let overlap = sample
                    .gt_boxes
                    .iter()
                    .map(|g| crate::geometry::iou(c, g))
                    .fold(0.0, f64::max);
                1.2 * overlap + 0.6 * std_normal.sample(&mut rng)
            })
            .collect();

        let logits = templates
            .iter()
            .map(|t| {
                let correct = t.answer == sample.label;
                let answer_term = if correct { answer_bias } else { 0.0 };
                let counts = match t.answer {
                    Label::Abnormal => &abn_counts,
                    Label::Normal => &nrm_counts,
                };
                let m = t.boxes.len();
                // spread each count's mass over its subsets
                let n_subsets = combinations(k, m).len() as f64;
                let boxes_term: f64 = t.boxes.iter().map(|&b| affinity[b]).sum();
                answer_term + counts[m] - n_subsets.ln() + boxes_term
            })
            .collect();
        samples.push(sample);
        reference_logits.push(logits);
    }

    Scenario {
        seed: p.seed,
        group_size: 6,
        epochs: p.epochs,
        learning_rate: p.learning_rate,
        max_boxes,
        reward: RewardConfig {
            seed: p.seed,
            ..RewardConfig::default()
        },
        candidate_boxes: candidates,
        samples,
        reference_logits,
    }
}
