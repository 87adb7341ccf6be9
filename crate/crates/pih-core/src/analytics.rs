//! Attention-mass accounting, heatmap aggregation, base-probability
//! profiles, Pearson correlation, and knockout probability impact.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intervention::AblationPlan;
use crate::model::{next_token_distribution, AttentionCapture, ModelError, ModelParams};
use crate::seq::{Role, TokenSeq};
use crate::taskgen::PromptInstance;
use crate::vocab::{TokenClass, Vocabulary};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("capture has no assistant-role query positions")]
    NoAssistantTokens,
    #[error("profiles have different layer counts ({before} vs {after})")]
    ShapeMismatch { before: usize, after: usize },
    #[error("inputs have different lengths ({xs} vs {ys})")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("correlation requires at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("one of the correlated variables has zero variance")]
    ZeroVariance,
    #[error("candidate count {0} exceeds the 99 lexicon bound")]
    CandidateOverflow(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-layer fraction of assistant-query attention landing on image keys.
/// Text mass is the complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMassProfile {
    pub image_mass: Vec<f64>,
}

impl AttentionMassProfile {
    pub fn text_mass(&self, layer: usize) -> f64 {
        1.0 - self.image_mass[layer]
    }
}

/// Mean over heads and assistant query rows of the attention allocated to
/// image-role key positions, one value per layer.
pub fn attention_mass(
    capture: &AttentionCapture,
    roles: &[Role],
) -> Result<AttentionMassProfile, AnalyticsError> {
    let image_keys: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| (r == Role::Image).then_some(i))
        .collect();
    let assistant_rows: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter_map(|(i, &r)| (r == Role::Assistant).then_some(i))
        .collect();
    if assistant_rows.is_empty() {
        return Err(AnalyticsError::NoAssistantTokens);
    }
    let mut image_mass = Vec::with_capacity(capture.layers());
    for l in 0..capture.layers() {
        let mut acc = 0.0;
        for h in 0..capture.heads() {
            let attn = capture.attn(l, h);
            for &q in &assistant_rows {
                let mut mass = 0.0;
                for &k in &image_keys {
                    mass += attn[[q, k]];
                }
                acc += mass;
            }
        }
        image_mass.push(acc / (capture.heads() * assistant_rows.len()) as f64);
    }
    Ok(AttentionMassProfile { image_mass })
}

/// Per-layer image-mass change and the layer with the largest magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMassDelta {
    pub delta: Vec<f64>,
    pub argmax_layer: usize,
    pub argmax_delta: f64,
}

impl AttentionMassDelta {
    /// Text mass is the complement of image mass, so its change is the
    /// exact negation of the image-mass change.
    pub fn text_delta(&self, layer: usize) -> f64 {
        -self.delta[layer]
    }
}

pub fn mass_delta(
    before: &AttentionMassProfile,
    after: &AttentionMassProfile,
) -> Result<AttentionMassDelta, AnalyticsError> {
    if before.image_mass.len() != after.image_mass.len() {
        return Err(AnalyticsError::ShapeMismatch {
            before: before.image_mass.len(),
            after: after.image_mass.len(),
        });
    }
    let delta: Vec<f64> = before
        .image_mass
        .iter()
        .zip(&after.image_mass)
        .map(|(b, a)| a - b)
        .collect();
    let argmax_layer = delta
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).expect("finite mass"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let argmax_delta = delta.get(argmax_layer).copied().unwrap_or(0.0);
    Ok(AttentionMassDelta {
        delta,
        argmax_layer,
        argmax_delta,
    })
}

/// Digit-form probabilities of the true count and its offsets under the
/// baseline prompt, read at the answer position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseProbProfile {
    pub sample_id: String,
    pub n: usize,
    pub p_true: f64,
    /// (k, p(n + k)) pairs in schedule order.
    pub p_offsets: Vec<(usize, f64)>,
}

pub fn base_prob_profile(
    params: &ModelParams,
    vocab: &Vocabulary,
    instance: &PromptInstance,
    ks: &[usize],
) -> Result<BaseProbProfile, AnalyticsError> {
    let n = instance.n;
    for &k in ks {
        if n + k > 99 {
            return Err(AnalyticsError::CandidateOverflow(n + k));
        }
    }
    let dist = next_token_distribution(params, &instance.prompt_tokens, None)?;
    let p_true = dist[vocab.digit_token(n as u8)];
    let p_offsets = ks
        .iter()
        .map(|&k| (k, dist[vocab.digit_token((n + k) as u8)]))
        .collect();
    Ok(BaseProbProfile {
        sample_id: instance.sample_id.clone(),
        n,
        p_true,
        p_offsets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rho: f64,
    pub n: usize,
}

/// Pearson product-moment correlation via the two-pass formula.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(AnalyticsError::TooFewSamples(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::ZeroVariance);
    }
    Ok(CorrelationResult {
        rho: sxy / (sxx.sqrt() * syy.sqrt()),
        n: xs.len(),
    })
}

/// Probability of the true count in digit and word form at the answer
/// position, with and without the plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbImpact {
    pub digit_before: f64,
    pub digit_after: f64,
    pub word_before: f64,
    pub word_after: f64,
}

impl ProbImpact {
    pub fn digit_delta(&self) -> f64 {
        self.digit_after - self.digit_before
    }

    pub fn word_delta(&self) -> f64 {
        self.word_after - self.word_before
    }
}

pub fn knockout_prob_impact(
    params: &ModelParams,
    vocab: &Vocabulary,
    instance: &PromptInstance,
    plan: &AblationPlan,
) -> Result<ProbImpact, AnalyticsError> {
    let n = instance.n as u8;
    let digit = vocab.digit_token(n);
    let word = vocab.word_token(n);
    let before = next_token_distribution(params, &instance.prompt_tokens, None)?;
    let after = next_token_distribution(params, &instance.prompt_tokens, Some(plan))?;
    Ok(ProbImpact {
        digit_before: before[digit],
        digit_after: after[digit],
        word_before: before[word],
        word_after: after[word],
    })
}

/// Attention heatmap with interior image pads merged into one IMAGE_PADS
/// row and column (sums, not averages; `merged_count` supports
/// renormalization). The first and last three pads and the boundary tokens
/// stay individual.
#[derive(Debug, Clone)]
pub struct AggregatedHeatmap {
    pub labels: Vec<String>,
    pub matrix: Array2<f64>,
    pub merged: bool,
    pub merged_count: usize,
}

pub const IMAGE_PADS_LABEL: &str = "IMAGE_PADS";
const KEPT_EDGE_PADS: usize = 3;

pub fn aggregate_heatmap(
    capture: &AttentionCapture,
    layer: usize,
    head: usize,
    seq: &TokenSeq,
    vocab: &Vocabulary,
) -> Result<AggregatedHeatmap, AnalyticsError> {
    let attn = capture.attn(layer, head);
    let t = seq.len();
    let pad_positions: Vec<usize> = seq
        .ids()
        .iter()
        .zip(seq.roles())
        .enumerate()
        .filter_map(|(i, (&id, &role))| {
            (role == Role::Image && vocab.class(id) == TokenClass::ImagePad).then_some(i)
        })
        .collect();

    // merged region: pads minus the first and last three
    let merged: Vec<usize> = if pad_positions.len() >= 2 * KEPT_EDGE_PADS + 1 {
        pad_positions[KEPT_EDGE_PADS..pad_positions.len() - KEPT_EDGE_PADS].to_vec()
    } else {
        Vec::new()
    };

    if merged.is_empty() {
        let labels = seq.ids().iter().map(|&id| vocab.token(id).to_string()).collect();
        return Ok(AggregatedHeatmap {
            labels,
            matrix: attn.clone(),
            merged: false,
            merged_count: 0,
        });
    }

    let merged_start = merged[0];
    let is_merged = |i: usize| merged.binary_search(&i).is_ok();
    let mut labels = Vec::new();
    let mut kept: Vec<Option<usize>> = Vec::new(); // None marks the merged slot
    for i in 0..t {
        if is_merged(i) {
            if i == merged_start {
                labels.push(IMAGE_PADS_LABEL.to_string());
                kept.push(None);
            }
        } else {
            labels.push(vocab.token(seq.ids()[i]).to_string());
            kept.push(Some(i));
        }
    }

    let size = kept.len();
    let mut matrix = Array2::<f64>::zeros((size, size));
    for (ri, row_source) in kept.iter().enumerate() {
        for (ci, col_source) in kept.iter().enumerate() {
            let value = match (row_source, col_source) {
                (Some(q), Some(k)) => attn[[*q, *k]],
                (Some(q), None) => merged.iter().map(|&k| attn[[*q, k]]).sum(),
                (None, Some(k)) => merged.iter().map(|&q| attn[[q, *k]]).sum(),
                (None, None) => merged
                    .iter()
                    .map(|&q| merged.iter().map(|&k| attn[[q, k]]).sum::<f64>())
                    .sum(),
            };
            matrix[[ri, ci]] = value;
        }
    }
    Ok(AggregatedHeatmap {
        labels,
        matrix,
        merged: true,
        merged_count: merged.len(),
    })
}
