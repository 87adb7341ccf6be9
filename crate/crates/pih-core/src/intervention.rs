//! Mean-ablation head knockouts and the two-stage head search: a per-head
//! sweep ranked by knockout success, followed by grouped knockouts of the
//! top-m heads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelParams};
use crate::respan::Value;
use crate::taskgen::{run_instance, EvalOptions, PromptInstance};
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum InterventionError {
    #[error("head output has no rows to average")]
    EmptySequence,
    #[error("empty instance set")]
    EmptyInstanceSet,
    #[error("model has no attention heads to sweep")]
    NoHeads,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Attention head address, ordered layer-major for stable ranking.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    /// Parses the `L<layer>H<head>` naming convention.
    pub fn parse(text: &str) -> Option<Self> {
        let rest = text.strip_prefix('L')?;
        let (layer, head) = rest.split_once('H')?;
        Some(Self {
            layer: layer.parse().ok()?,
            head: head.parse().ok()?,
        })
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

/// A set of heads to mean-ablate during a forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationPlan {
    targets: BTreeSet<HeadId>,
}

impl AblationPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(targets: impl IntoIterator<Item = HeadId>) -> Self {
        Self {
            targets: targets.into_iter().collect(),
        }
    }

    pub fn single(layer: usize, head: usize) -> Self {
        Self::new([HeadId::new(layer, head)])
    }

    pub fn targets(&self) -> impl Iterator<Item = &HeadId> {
        self.targets.iter()
    }

    pub fn contains(&self, layer: usize, head: usize) -> bool {
        self.targets.contains(&HeadId::new(layer, head))
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// The per-pass mean of a head output and the row-constant substitute.
#[derive(Debug, Clone)]
pub struct MeanAblation {
    pub mean: Array1<f64>,
    pub substituted: Array2<f64>,
}

/// Replaces every row of a head output with the per-dimension mean over
/// positions, removing token-specific information while preserving the
/// average activation.
pub fn mean_ablate(head_out: &Array2<f64>) -> Result<MeanAblation, InterventionError> {
    let t = head_out.nrows();
    if t == 0 {
        return Err(InterventionError::EmptySequence);
    }
    let mean = head_out.mean_axis(Axis(0)).expect("non-empty rows");
    let mut substituted = Array2::zeros(head_out.dim());
    for mut row in substituted.rows_mut() {
        row.assign(&mean);
    }
    Ok(MeanAblation { mean, substituted })
}

fn extracted_value(
    params: &ModelParams,
    vocab: &Vocabulary,
    instance: &PromptInstance,
    plan: Option<&AblationPlan>,
    opts: EvalOptions,
) -> Result<Option<Value>, ModelError> {
    let (_, extracted) = run_instance(params, vocab, instance, plan, opts)?;
    Ok(extracted.map(|e| e.value))
}

/// Keeps misaligned instances whose unablated response copies the prompt,
/// which is the population knockout success is defined over.
pub fn pih_prefilter(
    params: &ModelParams,
    vocab: &Vocabulary,
    instances: &[PromptInstance],
    opts: EvalOptions,
) -> Result<Vec<PromptInstance>, InterventionError> {
    let flags: Vec<bool> = instances
        .par_iter()
        .map(|inst| {
            let got = extracted_value(params, vocab, inst, None, opts)?;
            Ok(got.is_some() && got == inst.prompted_value)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(instances
        .iter()
        .zip(flags)
        .filter_map(|(inst, keep)| keep.then(|| inst.clone()))
        .collect())
}

/// Fraction of instances whose extracted value switches to the true value
/// under the plan. Instances must be misaligned and PIH-prefiltered.
pub fn knockout_success(
    params: &ModelParams,
    vocab: &Vocabulary,
    plan: &AblationPlan,
    instances: &[PromptInstance],
    opts: EvalOptions,
) -> Result<f64, InterventionError> {
    if instances.is_empty() {
        return Err(InterventionError::EmptyInstanceSet);
    }
    let flips: usize = instances
        .par_iter()
        .map(|inst| {
            let got = extracted_value(params, vocab, inst, Some(plan), opts)?;
            Ok(usize::from(got == Some(inst.true_value())))
        })
        .collect::<Result<Vec<usize>, ModelError>>()?
        .into_iter()
        .sum();
    Ok(flips as f64 / instances.len() as f64)
}

/// Per-head knockout scores and the deterministic ranking.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub scores: BTreeMap<HeadId, f64>,
    /// Heads sorted by success descending, ties broken layer-major.
    pub ranking: Vec<HeadId>,
}

/// Evaluates single-head knockout success for every head in the model.
pub fn head_sweep(
    params: &ModelParams,
    vocab: &Vocabulary,
    instances: &[PromptInstance],
    opts: EvalOptions,
) -> Result<SweepResult, InterventionError> {
    if params.layers() * params.heads() == 0 {
        return Err(InterventionError::NoHeads);
    }
    if instances.is_empty() {
        return Err(InterventionError::EmptyInstanceSet);
    }
    let heads: Vec<HeadId> = (0..params.layers())
        .flat_map(|l| (0..params.heads()).map(move |h| HeadId::new(l, h)))
        .collect();
    let scored: Vec<(HeadId, f64)> = heads
        .par_iter()
        .map(|&head| {
            let plan = AblationPlan::new([head]);
            let success = knockout_success(params, vocab, &plan, instances, opts)?;
            Ok((head, success))
        })
        .collect::<Result<Vec<_>, InterventionError>>()?;
    let scores: BTreeMap<HeadId, f64> = scored.into_iter().collect();
    let mut ranking: Vec<HeadId> = scores.keys().copied().collect();
    ranking.sort_by(|a, b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("success scores are finite")
            .then(a.cmp(b))
    });
    Ok(SweepResult { scores, ranking })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupedRow {
    pub m: usize,
    /// Group size actually ablated after clamping to the head count.
    pub effective_m: usize,
    pub success: f64,
    pub selected: bool,
    pub clamped: bool,
}

#[derive(Debug, Clone)]
pub struct GroupedKnockout {
    pub rows: Vec<GroupedRow>,
    pub selected_m: usize,
}

impl GroupedKnockout {
    /// The plan for the selected group size.
    pub fn selected_plan(&self, ranking: &[HeadId]) -> AblationPlan {
        let row = self
            .rows
            .iter()
            .find(|r| r.selected)
            .expect("one row is always selected");
        AblationPlan::new(ranking.iter().copied().take(row.effective_m))
    }
}

/// Second-stage grouped knockout over the top-m heads of a ranking.
/// Group sizes beyond the head count are clamped and flagged.
pub fn grouped_knockout(
    params: &ModelParams,
    vocab: &Vocabulary,
    ranking: &[HeadId],
    instances: &[PromptInstance],
    group_sizes: &[usize],
    opts: EvalOptions,
) -> Result<GroupedKnockout, InterventionError> {
    if instances.is_empty() {
        return Err(InterventionError::EmptyInstanceSet);
    }
    if ranking.is_empty() {
        return Err(InterventionError::NoHeads);
    }
    let ms: BTreeSet<usize> = group_sizes.iter().copied().filter(|&m| m > 0).collect();
    let mut rows = Vec::with_capacity(ms.len());
    for &m in &ms {
        let effective_m = m.min(ranking.len());
        let plan = AblationPlan::new(ranking.iter().copied().take(effective_m));
        let success = knockout_success(params, vocab, &plan, instances, opts)?;
        rows.push(GroupedRow {
            m,
            effective_m,
            success,
            selected: false,
            clamped: effective_m != m,
        });
    }
    // argmax success, ties to the smaller m
    let best = rows
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.success
                .partial_cmp(&b.success)
                .expect("success is finite")
                .then(b.m.cmp(&a.m))
        })
        .map(|(i, _)| i)
        .expect("rows is non-empty");
    rows[best].selected = true;
    let selected_m = rows[best].m;
    Ok(GroupedKnockout { rows, selected_m })
}
