//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("sample `{id}`: label {label} with {boxes} ground-truth boxes")]
    LabelBoxMismatch { id: String, label: u8, boxes: usize },
    #[error("degenerate box {0}: requires x1 < x2 and y1 < y2")]
    DegenerateBox(BBox),
    #[error("box {0} has a non-finite coordinate")]
    NonFiniteBox(BBox),
    #[error("sample `{id}`: box {bbox} lies outside the {width}x{height} frame")]
    OutOfFrame {
        id: String,
        bbox: BBox,
        width: u32,
        height: u32,
    },
    #[error("sample `{0}`: image dimensions must be positive")]
    EmptyFrame(String),
    #[error("response for `{id}`: {reason}")]
    InvalidLogprobs { id: String, reason: String },
    #[error("invalid reward config: {0}")]
    InvalidConfig(String),
    #[error("unknown reward scheme `{0}`")]
    UnknownScheme(String),
    #[error("label must be 0 or 1, got {0}")]
    InvalidLabel(u8),
}

/// Axis-aligned rectangle in continuous pixel coordinates.
///
/// Serialized as `[x1, y1, x2, y2]`. Construct with [`BBox::new`] to get the
/// positive-area check; the fields stay public so that annotations can be
/// loaded first and validated as a whole by [`validate_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        let b = Self { x1, y1, x2, y2 };
        b.check()?;
        Ok(b)
    }

    /// Checks finiteness and strictly positive area.
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite())
        {
            return Err(ModelError::NonFiniteBox(*self));
        }
        if self.x1 >= self.x2 || self.y1 >= self.y2 {
            return Err(ModelError::DegenerateBox(*self));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
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

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        Self {
            x1: a[0],
            y1: a[1],
            x2: a[2],
            y2: a[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Binary image-level class. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Normal => Label::Abnormal,
            Label::Abnormal => Label::Normal,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = ModelError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Abnormal),
            other => Err(ModelError::InvalidLabel(other)),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> Self {
        l.as_u8()
    }
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    #[serde(default)]
    pub gt_boxes: Vec<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_height: Option<u32>,
}

impl Sample {
    pub fn normal(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: Label::Normal,
            gt_boxes: Vec::new(),
            image_width: None,
            image_height: None,
        }
    }

    pub fn abnormal(id: impl Into<String>, gt_boxes: Vec<BBox>) -> Self {
        Self {
            id: id.into(),
            label: Label::Abnormal,
            gt_boxes,
            image_width: None,
            image_height: None,
        }
    }

    pub fn with_frame(mut self, width: u32, height: u32) -> Self {
        self.image_width = Some(width);
        self.image_height = Some(height);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let has_boxes = !self.gt_boxes.is_empty();
        if (self.label == Label::Abnormal) != has_boxes {
            return Err(ModelError::LabelBoxMismatch {
                id: self.id.clone(),
                label: self.label.as_u8(),
                boxes: self.gt_boxes.len(),
            });
        }
        if self.image_width == Some(0) || self.image_height == Some(0) {
            return Err(ModelError::EmptyFrame(self.id.clone()));
        }
        for b in &self.gt_boxes {
            b.check()?;
            let w = self.image_width.map_or(f64::INFINITY, f64::from);
            let h = self.image_height.map_or(f64::INFINITY, f64::from);
            if b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > w || b.y2 > h {
                return Err(ModelError::OutOfFrame {
                    id: self.id.clone(),
                    bbox: *b,
                    width: self.image_width.unwrap_or(0),
                    height: self.image_height.unwrap_or(0),
                });
            }
        }
        Ok(())
    }
}

/// Returns the sample unchanged iff every invariant holds.
pub fn validate_sample(s: Sample) -> Result<Sample, ModelError> {
    s.validate()?;
    Ok(s)
}

/// One generated response plus optional per-token log-likelihoods under the
/// trained and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub sample_id: String,
    #[serde(rename = "response_text", alias = "text")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs_policy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs_ref: Option<Vec<f64>>,
}

impl ResponseRecord {
    pub fn new(sample_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            text: text.into(),
            token_logprobs_policy: None,
            token_logprobs_ref: None,
        }
    }

    pub fn with_logprobs(mut self, policy: Vec<f64>, reference: Vec<f64>) -> Self {
        self.token_logprobs_policy = Some(policy);
        self.token_logprobs_ref = Some(reference);
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: String| ModelError::InvalidLogprobs {
            id: self.sample_id.clone(),
            reason,
        };
        for (name, lp) in [
            ("policy", &self.token_logprobs_policy),
            ("reference", &self.token_logprobs_ref),
        ] {
            if let Some(lp) = lp {
                if lp.is_empty() {
                    return Err(bad(format!("{name} logprobs are empty")));
                }
                if let Some(v) = lp.iter().find(|v| !(v.is_finite() && **v <= 0.0)) {
                    return Err(bad(format!(
                        "{name} logprob {v} is not a finite value <= 0"
                    )));
                }
            }
        }
        if let (Some(p), Some(r)) = (&self.token_logprobs_policy, &self.token_logprobs_ref) {
            if p.len() != r.len() {
                return Err(bad(format!(
                    "policy has {} tokens but reference has {}",
                    p.len(),
                    r.len()
                )));
            }
        }
        Ok(())
    }
}

/// Which reward components contribute to the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Classification indicator only.
    Cls,
    /// Indicator plus the box-count (abnormal) or focus (normal) term.
    ClsCount,
    /// Indicator plus localization.
    ClsLoc,
    /// Indicator, localization and format compliance.
    ClsLocFormat,
    /// Indicator plus zero-mean Gaussian noise.
    ClsRandom,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Cls,
        Scheme::ClsCount,
        Scheme::ClsLoc,
        Scheme::ClsLocFormat,
        Scheme::ClsRandom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Cls => "cls",
            Scheme::ClsCount => "cls_count",
            Scheme::ClsLoc => "cls_loc",
            Scheme::ClsLocFormat => "cls_loc_format",
            Scheme::ClsRandom => "cls_random",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == norm)
            .ok_or_else(|| ModelError::UnknownScheme(s.to_string()))
    }
}

/// Reward and regularization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight on the count term inside the abnormal-sample localization reward.
    pub alpha: f64,
    /// KL weight.
    pub beta: f64,
    pub scheme: Scheme,
    /// Groups whose population std falls below this are treated as uniform.
    pub std_eps: f64,
    pub random_sigma: f64,
    pub seed: u64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.04,
            scheme: Scheme::ClsLocFormat,
            std_eps: 1e-6,
            random_sigma: 0.3,
            seed: 0,
        }
    }
}

impl RewardConfig {
    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )))
            }
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("random_sigma", self.random_sigma)?;
        if !(self.std_eps.is_finite() && self.std_eps > 0.0) {
            return Err(ModelError::InvalidConfig(format!(
                "std_eps must be finite and > 0, got {}",
                self.std_eps
            )));
        }
        Ok(())
    }
}
