//! Group-level loss re-weighting.
//!
//! Output tokens are split into a boilerplate and a reasoning group. Each
//! group's loss is the mean over its tokens; a [`WeightScheme`] combines the
//! two means into the training objective. Weights are recomputed per batch
//! and held constant during backpropagation.

mod regex;
mod weighted;

use serde::{Deserialize, Serialize};

use crate::corpus::CoarseRole;

pub use self::regex::{regex_classify, RegexRule, Ruleset, REACT_JSON_RULESET};
pub use weighted::{resolve_labels, train_weighted, LabelSource};

#[derive(Debug, thiserror::Error)]
pub enum RftError {
    #[error("{} group is empty", group.as_str())]
    EmptyGroup { group: CoarseRole },
    #[error("weight scheme: {0}")]
    Config(String),
    #[error("{losses} losses but {labels} labels")]
    Length { losses: usize, labels: usize },
    #[error("non-finite loss {0}")]
    NonFinite(f64),
    #[error("ruleset line {line}: {message}")]
    Ruleset { line: usize, message: String },
    #[error("labels: {0}")]
    Labels(String),
    #[error(transparent)]
    Lm(#[from] crate::lm::LmError),
}

pub type Result<T> = std::result::Result<T, RftError>;

/// Mean per-token loss of each group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLoss {
    pub l_b: f64,
    pub l_r: f64,
    pub n_b: usize,
    pub n_r: usize,
}

impl GroupLoss {
    /// Plain token mean over both groups.
    pub fn token_mean(&self) -> f64 {
        let n = (self.n_b + self.n_r) as f64;
        (self.n_b as f64 * self.l_b + self.n_r as f64 * self.l_r) / n
    }
}

pub fn group_losses(losses: &[f64], labels: &[CoarseRole]) -> Result<GroupLoss> {
    if losses.len() != labels.len() {
        return Err(RftError::Length {
            losses: losses.len(),
            labels: labels.len(),
        });
    }
    let (mut sum_b, mut sum_r, mut n_b, mut n_r) = (0.0, 0.0, 0, 0);
    for (&l, &role) in losses.iter().zip(labels) {
        if !l.is_finite() {
            return Err(RftError::NonFinite(l));
        }
        match role {
            CoarseRole::Boilerplate => {
                sum_b += l;
                n_b += 1;
            }
            CoarseRole::Reasoning => {
                sum_r += l;
                n_r += 1;
            }
        }
    }
    if n_r == 0 {
        return Err(RftError::EmptyGroup {
            group: CoarseRole::Reasoning,
        });
    }
    if n_b == 0 {
        return Err(RftError::EmptyGroup {
            group: CoarseRole::Boilerplate,
        });
    }
    Ok(GroupLoss {
        l_b: sum_b / n_b as f64,
        l_r: sum_r / n_r as f64,
        n_b,
        n_r,
    })
}

/// Softmax over the two group losses at temperature `tau`:
/// `w_b = exp(L_b/tau) / (exp(L_b/tau) + exp(L_r/tau))`, `w_r = 1 - w_b`.
///
/// `tau = inf` gives equal weights. The larger weight is a logistic of the
/// scaled gap and the smaller one its exact complement, so the pair sums to
/// one exactly and never overflows.
pub fn rft_weights(l_b: f64, l_r: f64, tau: f64) -> Result<(f64, f64)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(RftError::Config(format!("tau must be > 0, got {tau}")));
    }
    for l in [l_b, l_r] {
        if !l.is_finite() {
            return Err(RftError::NonFinite(l));
        }
    }
    let gap = (l_r - l_b) / tau;
    let larger = 1.0 / (1.0 + (-gap.abs()).exp());
    let smaller = 1.0 - larger;
    Ok(if gap >= 0.0 {
        (smaller, larger)
    } else {
        (larger, smaller)
    })
}

/// How the two group means are combined into one objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Token mean over all output tokens.
    Sft,
    /// Softmax weights at temperature `1 / inv_tau`; `inv_tau = 0` means
    /// equal weights.
    Rft {
        inv_tau: f64,
    },
    /// `alpha * L_b + (1 - alpha) * L_r`.
    AlphaFt {
        alpha: f64,
    },
    Custom {
        w_b: f64,
        w_r: f64,
    },
}

impl WeightScheme {
    pub fn rft(tau: f64) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(RftError::Config(format!("tau must be > 0, got {tau}")));
        }
        Ok(WeightScheme::Rft { inv_tau: 1.0 / tau })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightScheme::Sft => Ok(()),
            WeightScheme::Rft { inv_tau } if inv_tau.is_finite() && inv_tau >= 0.0 => Ok(()),
            WeightScheme::Rft { inv_tau } => Err(RftError::Config(format!(
                "1/tau must be finite and >= 0, got {inv_tau}"
            ))),
            WeightScheme::AlphaFt { alpha } if (0.0..=0.5).contains(&alpha) => Ok(()),
            WeightScheme::AlphaFt { alpha } => Err(RftError::Config(format!(
                "alpha must lie in [0, 0.5], got {alpha}"
            ))),
            WeightScheme::Custom { w_b, w_r }
                if w_b.is_finite() && w_r.is_finite() && w_b >= 0.0 && w_r >= 0.0 =>
            {
                Ok(())
            }
            WeightScheme::Custom { w_b, w_r } => Err(RftError::Config(format!(
                "custom weights must be finite and >= 0, got ({w_b}, {w_r})"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightScheme::Sft => "sft",
            WeightScheme::Rft { .. } => "rft",
            WeightScheme::AlphaFt { .. } => "alpha-ft",
            WeightScheme::Custom { .. } => "custom",
        }
    }

    /// The scheme's scalar parameter as text: tau for RFT, alpha for α-FT.
    pub fn parameter(&self) -> String {
        match *self {
            WeightScheme::Sft => String::new(),
            WeightScheme::Rft { inv_tau } => crate::fmt::sig9(1.0 / inv_tau),
            WeightScheme::AlphaFt { alpha } => crate::fmt::sig9(alpha),
            WeightScheme::Custom { w_b, w_r } => {
                format!("{}/{}", crate::fmt::sig9(w_b), crate::fmt::sig9(w_r))
            }
        }
    }

    pub fn needs_labels(&self) -> bool {
        !matches!(self, WeightScheme::Sft)
    }

    /// Group weights for the given means; `None` for SFT, which weights
    /// tokens rather than groups.
    pub fn weights(&self, gl: &GroupLoss) -> Result<Option<(f64, f64)>> {
        self.validate()?;
        Ok(match *self {
            WeightScheme::Sft => None,
            WeightScheme::Rft { inv_tau } => Some(rft_weights(gl.l_b, gl.l_r, 1.0 / inv_tau)?),
            WeightScheme::AlphaFt { alpha } => Some((alpha, 1.0 - alpha)),
            WeightScheme::Custom { w_b, w_r } => Some((w_b, w_r)),
        })
    }
}

pub fn weighted_loss(gl: &GroupLoss, scheme: &WeightScheme) -> Result<f64> {
    Ok(match scheme.weights(gl)? {
        None => gl.token_mean(),
        Some((w_b, w_r)) => w_b * gl.l_b + w_r * gl.l_r,
    })
}

/// Objective of one batch and the per-token gradient coefficients
/// `d objective / d loss_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchObjective {
    pub value: f64,
    pub coefficients: Vec<f64>,
    pub token_mean: f64,
    /// Group means when labels are available and both groups are present.
    pub groups: Option<GroupLoss>,
    /// Effective group weights; for SFT the token shares `n_b/n`, `n_r/n`.
    pub weights: Option<(f64, f64)>,
    /// True when a weighted scheme fell back to the token mean because a
    /// group was empty.
    pub fallback: bool,
}

/// Builds the batch objective over the flattened output tokens of a batch.
pub fn batch_objective(
    losses: &[f64],
    labels: Option<&[CoarseRole]>,
    scheme: &WeightScheme,
) -> Result<BatchObjective> {
    scheme.validate()?;
    let n = losses.len();
    if n == 0 {
        return Err(RftError::Labels("batch has no output tokens".into()));
    }
    if let Some(&bad) = losses.iter().find(|l| !l.is_finite()) {
        return Err(RftError::NonFinite(bad));
    }
    let token_mean = losses.iter().sum::<f64>() / n as f64;
    let uniform = vec![1.0 / n as f64; n];
    let Some(labels) = labels else {
        if scheme.needs_labels() {
            return Err(RftError::Labels(format!(
                "scheme {} needs token labels",
                scheme.name()
            )));
        }
        return Ok(BatchObjective {
            value: token_mean,
            coefficients: uniform,
            token_mean,
            groups: None,
            weights: None,
            fallback: false,
        });
    };
    let gl = match group_losses(losses, labels) {
        Ok(gl) => gl,
        Err(RftError::EmptyGroup { group }) => {
            if scheme.needs_labels() {
                log::debug!(
                    "{} group empty in batch; using the token mean",
                    group.as_str()
                );
            }
            return Ok(BatchObjective {
                value: token_mean,
                coefficients: uniform,
                token_mean,
                groups: None,
                weights: None,
                fallback: scheme.needs_labels(),
            });
        }
        Err(e) => return Err(e),
    };
    let (w_b, w_r) = scheme
        .weights(&gl)?
        .unwrap_or((gl.n_b as f64 / n as f64, gl.n_r as f64 / n as f64));
    let (c_b, c_r) = match scheme {
        WeightScheme::Sft => (1.0 / n as f64, 1.0 / n as f64),
        _ => (w_b / gl.n_b as f64, w_r / gl.n_r as f64),
    };
    let coefficients = labels
        .iter()
        .map(|r| match r {
            CoarseRole::Boilerplate => c_b,
            CoarseRole::Reasoning => c_r,
        })
        .collect();
    Ok(BatchObjective {
        value: weighted_loss(&gl, scheme)?,
        coefficients,
        token_mean,
        groups: Some(gl),
        weights: Some((w_b, w_r)),
        fallback: false,
    })
}
