//! Desk-scale toolkit for analyzing prompt-copying attention heads in a
//! toy multimodal transformer: planted models with known copy heads,
//! mean-ablation knockouts with a two-stage head search, counting and
//! color prompt harnesses, negation-aware response parsing, and
//! attention-mass analytics.

pub mod analytics;
pub mod intervention;
pub mod model;
pub mod respan;
pub mod scenes;
pub mod seq;
pub mod taskgen;
pub mod vocab;

pub use analytics::{
    aggregate_heatmap, attention_mass, base_prob_profile, knockout_prob_impact, mass_delta,
    pearson, AggregatedHeatmap, AnalyticsError, AttentionMassDelta, AttentionMassProfile,
    BaseProbProfile, CorrelationResult, ProbImpact,
};
pub use intervention::{
    grouped_knockout, head_sweep, knockout_success, mean_ablate, pih_prefilter, AblationPlan,
    GroupedKnockout, GroupedRow, HeadId, InterventionError, MeanAblation, SweepResult,
};
pub use model::{
    build_planted_model, forward, generate, next_token_distribution, AttentionCapture, ModelDims,
    ModelError, ModelParams, PlantedSpec,
};
pub use respan::{
    classify_copy_form, compute_match_metrics, extract_first_color, extract_first_number,
    CopyForm, ExtractedValue, MatchMetrics, RespanError, Surface, Value,
};
pub use scenes::{
    generate_scene, load_manifest, render_scene, DatasetManifest, ManifestRecord, Scene,
    SceneError,
};
pub use seq::{Role, SeqError, TokenSeq};
pub use taskgen::{
    baseline_filter, baseline_prompt, misaligned_color_prompt, misaligned_count_prompt,
    run_instance, synthetic_scenes, ColorWheel, EvalOptions, FilterOutcome, FilterRecord,
    PromptInstance, PromptKind, Task, TaskError,
};
pub use vocab::{build_vocabulary, TokenClass, TokenId, Vocabulary};
