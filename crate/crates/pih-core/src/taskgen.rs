//! Prompt instance construction for the counting and color tasks: baseline
//! templates, misaligned templates with offset schedules, the color wheel,
//! and the baseline correctness filter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{generate, ModelError, ModelParams};
use crate::respan::{
    extract_first_color, extract_first_number, ExtractedValue, Value, DEFAULT_NEGATION_WINDOW,
};
use crate::scenes::{render_scene, Scene};
use crate::seq::{Role, TokenSeq};
use crate::vocab::{TokenId, Vocabulary, HUE_WHEEL_SIZE};

/// Count-task offset schedule.
pub const COUNT_OFFSETS: [usize; 5] = [1, 2, 3, 4, 5];
/// Extended offsets for the large-discrepancy runs.
pub const EXTENDED_OFFSETS: [usize; 3] = [10, 20, 50];
/// Color-task offset schedule.
pub const COLOR_OFFSETS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaskError {
    #[error("offset {k} outside the legal schedule {allowed:?}")]
    OffsetOutOfRange { k: usize, allowed: &'static [usize] },
    #[error("prompted value {n} + {k} exceeds 99")]
    ValueOverflow { n: usize, k: usize },
    #[error("scene color is not on the hue wheel")]
    ColorNotOnWheel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Count,
    Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Baseline,
    Misaligned,
}

/// One evaluation unit: a scene plus a prompt over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub sample_id: String,
    pub task: Task,
    pub kind: PromptKind,
    pub scene: Scene,
    /// Ground-truth object count.
    pub n: usize,
    /// Discrepancy distance; 0 for baseline prompts.
    pub k: usize,
    /// Palette index of the scene color.
    pub true_color: usize,
    /// Value named by a misaligned prompt; baselines name none.
    pub prompted_value: Option<Value>,
    /// Image block, prompt tokens, and the trailing assistant trigger.
    pub prompt_tokens: TokenSeq,
}

impl PromptInstance {
    pub fn is_baseline(&self) -> bool {
        self.kind == PromptKind::Baseline
    }

    /// Ground-truth value for this instance's task.
    pub fn true_value(&self) -> Value {
        match self.task {
            Task::Count => Value::Count(self.n as u8),
            Task::Color => Value::Color(self.true_color),
        }
    }
}

/// Discrete 8-step hue wheel over the leading palette entries.
#[derive(Debug, Clone)]
pub struct ColorWheel {
    cycle: Vec<TokenId>,
}

impl ColorWheel {
    pub fn standard(vocab: &Vocabulary) -> Self {
        let cycle = (0..HUE_WHEEL_SIZE).map(|c| vocab.color_token(c)).collect();
        Self { cycle }
    }

    pub fn len(&self) -> usize {
        self.cycle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycle.is_empty()
    }

    pub fn contains(&self, color: TokenId) -> bool {
        self.cycle.contains(&color)
    }

    /// Minimal cyclic step count between two wheel colors.
    pub fn distance(&self, a: TokenId, b: TokenId) -> Option<usize> {
        let i = self.cycle.iter().position(|&c| c == a)?;
        let j = self.cycle.iter().position(|&c| c == b)?;
        let d = i.abs_diff(j);
        Some(d.min(self.cycle.len() - d))
    }

    /// Color `k` steps forward along the wheel.
    pub fn offset(&self, color: TokenId, k: usize) -> Option<TokenId> {
        let i = self.cycle.iter().position(|&c| c == color)?;
        Some(self.cycle[(i + k) % self.cycle.len()])
    }
}

fn assemble(scene: &Scene, vocab: &Vocabulary, prompt_words: &[TokenId]) -> TokenSeq {
    let mut seq = render_scene(scene, vocab);
    seq.extend(prompt_words, Role::Prompt);
    seq.push(vocab.assistant(), Role::Prompt);
    seq
}

fn template(vocab: &Vocabulary, words: &[&str]) -> Vec<TokenId> {
    words
        .iter()
        .map(|w| vocab.id(w).expect("template word in vocabulary"))
        .collect()
}

/// Baseline prompt for either task: the non-conflicting question.
pub fn baseline_prompt(
    scene: &Scene,
    task: Task,
    sample_id: &str,
    vocab: &Vocabulary,
) -> PromptInstance {
    let words = match task {
        Task::Count => {
            let mut w = template(vocab, &["how", "many"]);
            w.push(scene.object);
            w.extend(template(vocab, &["are", "there", "in", "the", "image", "?"]));
            w
        }
        Task::Color => {
            let mut w = template(vocab, &["what", "color", "is", "the"]);
            w.push(scene.object);
            w.extend(template(vocab, &["in", "the", "image", "?"]));
            w
        }
    };
    PromptInstance {
        sample_id: sample_id.to_string(),
        task,
        kind: PromptKind::Baseline,
        scene: scene.clone(),
        n: scene.true_count,
        k: 0,
        true_color: vocab
            .color_index(scene.object_color)
            .expect("scene color is a palette token"),
        prompted_value: None,
        prompt_tokens: assemble(scene, vocab, &words),
    }
}

/// Misaligned counting prompt naming `n + k` in digit form.
pub fn misaligned_count_prompt(
    scene: &Scene,
    k: usize,
    sample_id: &str,
    vocab: &Vocabulary,
) -> Result<PromptInstance, TaskError> {
    const ALLOWED: [usize; 8] = [1, 2, 3, 4, 5, 10, 20, 50];
    if !ALLOWED.contains(&k) {
        return Err(TaskError::OffsetOutOfRange {
            k,
            allowed: &ALLOWED,
        });
    }
    let prompted = scene.true_count + k;
    if prompted > 99 {
        return Err(TaskError::ValueOverflow {
            n: scene.true_count,
            k,
        });
    }
    let mut words = template(vocab, &["describe", "the"]);
    words.push(vocab.digit_token(prompted as u8));
    words.push(scene.object);
    words.extend(template(vocab, &["in", "the", "image"]));
    Ok(PromptInstance {
        sample_id: sample_id.to_string(),
        task: Task::Count,
        kind: PromptKind::Misaligned,
        scene: scene.clone(),
        n: scene.true_count,
        k,
        true_color: vocab
            .color_index(scene.object_color)
            .expect("scene color is a palette token"),
        prompted_value: Some(Value::Count(prompted as u8)),
        prompt_tokens: assemble(scene, vocab, &words),
    })
}

/// Misaligned color prompt naming the color `k` wheel steps from the truth.
pub fn misaligned_color_prompt(
    scene: &Scene,
    wheel: &ColorWheel,
    k: usize,
    sample_id: &str,
    vocab: &Vocabulary,
) -> Result<PromptInstance, TaskError> {
    if !COLOR_OFFSETS.contains(&k) {
        return Err(TaskError::OffsetOutOfRange {
            k,
            allowed: &COLOR_OFFSETS,
        });
    }
    let prompted_color = wheel
        .offset(scene.object_color, k)
        .ok_or(TaskError::ColorNotOnWheel)?;
    let mut words = template(vocab, &["describe", "the"]);
    words.push(prompted_color);
    words.push(scene.object);
    words.extend(template(vocab, &["in", "the", "image"]));
    Ok(PromptInstance {
        sample_id: sample_id.to_string(),
        task: Task::Color,
        kind: PromptKind::Misaligned,
        scene: scene.clone(),
        n: scene.true_count,
        k,
        true_color: vocab
            .color_index(scene.object_color)
            .expect("scene color is a palette token"),
        prompted_value: Some(Value::Color(
            vocab
                .color_index(prompted_color)
                .expect("wheel colors are palette tokens"),
        )),
        prompt_tokens: assemble(scene, vocab, &words),
    })
}

/// Generation and extraction knobs shared by every harness entry point.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub max_new: usize,
    pub negation_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_new: 75,
            negation_window: DEFAULT_NEGATION_WINDOW,
        }
    }
}

/// Runs one instance through greedy generation and task-appropriate
/// extraction. Returns the full sequence and the extraction result.
pub fn run_instance(
    params: &ModelParams,
    vocab: &Vocabulary,
    instance: &PromptInstance,
    plan: Option<&crate::intervention::AblationPlan>,
    opts: EvalOptions,
) -> Result<(TokenSeq, Option<ExtractedValue>), ModelError> {
    let response = generate(params, vocab, &instance.prompt_tokens, plan, opts.max_new)?;
    let extracted = match instance.task {
        Task::Count => extract_first_number(&response, vocab, opts.negation_window),
        Task::Color => {
            extract_first_color(&response, vocab, instance.scene.object, opts.negation_window)
        }
    };
    Ok((response, extracted))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterRecord {
    pub sample_id: String,
    pub expected: Value,
    pub extracted: Option<Value>,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub retained: Vec<String>,
    pub log: Vec<FilterRecord>,
}

/// Retains baseline instances the model answers correctly.
pub fn baseline_filter(
    params: &ModelParams,
    vocab: &Vocabulary,
    instances: &[PromptInstance],
    opts: EvalOptions,
) -> Result<FilterOutcome, ModelError> {
    let log: Vec<FilterRecord> = instances
        .par_iter()
        .map(|inst| {
            let (_, extracted) = run_instance(params, vocab, inst, None, opts)?;
            let expected = inst.true_value();
            let extracted = extracted.map(|e| e.value);
            Ok(FilterRecord {
                sample_id: inst.sample_id.clone(),
                expected,
                extracted,
                passed: extracted == Some(expected),
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let retained = log
        .iter()
        .filter(|r| r.passed)
        .map(|r| r.sample_id.clone())
        .collect();
    Ok(FilterOutcome { retained, log })
}

/// Deterministic synthetic scene collection: counts, objects, and colors
/// rotate over fixed schedules, placements derive from the root seed.
/// Passing no objects selects the whole object lexicon.
pub fn synthetic_scenes(
    vocab: &Vocabulary,
    objects: &[TokenId],
    n_scenes: usize,
    count_min: usize,
    count_max: usize,
    grid: usize,
    hue_colors_only: bool,
    seed: u64,
) -> Vec<(String, Scene)> {
    let all_objects: Vec<TokenId>;
    let objects = if objects.is_empty() {
        all_objects = (0..vocab.n_objects()).map(|o| vocab.object_token(o)).collect();
        &all_objects
    } else {
        objects
    };
    let n_colors = if hue_colors_only {
        HUE_WHEEL_SIZE
    } else {
        crate::vocab::PALETTE_SIZE
    };
    let counts: Vec<usize> = (count_min..=count_max).collect();
    (0..n_scenes)
        .map(|i| {
            let object = objects[i % objects.len()];
            let color = vocab.color_token((i / objects.len()) % n_colors);
            let count = counts[i % counts.len()];
            let scene = crate::scenes::generate_scene(
                grid,
                object,
                color,
                count,
                seed.wrapping_add(i as u64),
            )
            .expect("count schedule fits the grid");
            (format!("s{i:04}"), scene)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::generate_scene;
    use crate::vocab::build_vocabulary;

    fn scene(vocab: &Vocabulary, n: usize) -> Scene {
        generate_scene(
            4,
            vocab.id("cats").unwrap(),
            vocab.id("red").unwrap(),
            n,
            7,
        )
        .unwrap()
    }

    fn prompt_text(vocab: &Vocabulary, inst: &PromptInstance) -> String {
        let image_len = inst.scene.grid * inst.scene.grid + 2;
        vocab.detokenize(&inst.prompt_tokens.ids()[image_len..])
    }

    #[test]
    fn baseline_templates_match() {
        let v = build_vocabulary();
        let s = scene(&v, 3);
        let count = baseline_prompt(&s, Task::Count, "a", &v);
        assert_eq!(
            prompt_text(&v, &count),
            "how many cats are there in the image ? <assistant>"
        );
        assert_eq!(count.k, 0);
        assert!(count.is_baseline());
        let color = baseline_prompt(&s, Task::Color, "a", &v);
        assert_eq!(
            prompt_text(&v, &color),
            "what color is the cats in the image ? <assistant>"
        );
    }

    #[test]
    fn misaligned_count_template_and_bounds() {
        let v = build_vocabulary();
        let s = generate_scene(4, v.id("waterlilies").unwrap(), v.id("red").unwrap(), 3, 7)
            .unwrap();
        let inst = misaligned_count_prompt(&s, 1, "a", &v).unwrap();
        assert_eq!(
            prompt_text(&v, &inst),
            "describe the 4 waterlilies in the image <assistant>"
        );
        assert_eq!(inst.prompted_value, Some(Value::Count(4)));

        let nine = generate_scene(3, v.id("cats").unwrap(), v.id("red").unwrap(), 9, 7).unwrap();
        let large = misaligned_count_prompt(&nine, 50, "a", &v).unwrap();
        assert_eq!(large.prompted_value, Some(Value::Count(59)));

        assert!(matches!(
            misaligned_count_prompt(&s, 6, "a", &v),
            Err(TaskError::OffsetOutOfRange { k: 6, .. })
        ));
        let fifty = generate_scene(8, v.id("cats").unwrap(), v.id("red").unwrap(), 60, 7).unwrap();
        assert!(matches!(
            misaligned_count_prompt(&fifty, 50, "a", &v),
            Err(TaskError::ValueOverflow { .. })
        ));
    }

    #[test]
    fn wheel_offsets_match_schedule() {
        let v = build_vocabulary();
        let wheel = ColorWheel::standard(&v);
        let red = v.id("red").unwrap();
        assert_eq!(wheel.offset(red, 1), Some(v.id("orange").unwrap()));
        assert_eq!(wheel.offset(red, 2), Some(v.id("yellow").unwrap()));
        assert_eq!(wheel.offset(red, 3), Some(v.id("green").unwrap()));
        assert_eq!(wheel.distance(red, v.id("green").unwrap()), Some(3));
        for k in 1..=3 {
            let c = wheel.offset(red, k).unwrap();
            assert_eq!(wheel.distance(red, c), Some(k.min(wheel.len() - k)));
        }
        // symmetry and identity
        let blue = v.id("blue").unwrap();
        assert_eq!(wheel.distance(red, blue), wheel.distance(blue, red));
        assert_eq!(wheel.distance(red, red), Some(0));
    }

    #[test]
    fn misaligned_color_template_and_bounds() {
        let v = build_vocabulary();
        let wheel = ColorWheel::standard(&v);
        let s = scene(&v, 2);
        let inst = misaligned_color_prompt(&s, &wheel, 1, "a", &v).unwrap();
        assert_eq!(
            prompt_text(&v, &inst),
            "describe the orange cats in the image <assistant>"
        );
        assert!(matches!(
            misaligned_color_prompt(&s, &wheel, 0, "a", &v),
            Err(TaskError::OffsetOutOfRange { k: 0, .. })
        ));
        let off_wheel = generate_scene(4, v.id("cats").unwrap(), v.id("black").unwrap(), 2, 7)
            .unwrap();
        assert!(matches!(
            misaligned_color_prompt(&off_wheel, &wheel, 1, "a", &v),
            Err(TaskError::ColorNotOnWheel)
        ));
    }

    #[test]
    fn prompts_contain_grounding_phrase() {
        let v = build_vocabulary();
        let wheel = ColorWheel::standard(&v);
        let s = scene(&v, 3);
        let grounding: Vec<usize> = ["in", "the", "image"]
            .iter()
            .map(|w| v.id(w).unwrap())
            .collect();
        let instances = [
            baseline_prompt(&s, Task::Count, "a", &v),
            baseline_prompt(&s, Task::Color, "a", &v),
            misaligned_count_prompt(&s, 2, "a", &v).unwrap(),
            misaligned_color_prompt(&s, &wheel, 2, "a", &v).unwrap(),
        ];
        for inst in &instances {
            let ids = inst.prompt_tokens.ids();
            let found = ids.windows(3).any(|w| w == grounding.as_slice());
            assert!(found, "grounding phrase missing in {}", inst.sample_id);
        }
    }

    #[test]
    fn misaligned_prompts_never_name_the_truth() {
        let v = build_vocabulary();
        let wheel = ColorWheel::standard(&v);
        for n in 1..=9 {
            let s = scene(&v, n);
            for k in COUNT_OFFSETS {
                let inst = misaligned_count_prompt(&s, k, "a", &v).unwrap();
                assert_ne!(inst.prompted_value, Some(inst.true_value()));
            }
            for k in COLOR_OFFSETS {
                let inst = misaligned_color_prompt(&s, &wheel, k, "a", &v).unwrap();
                assert_ne!(inst.prompted_value, Some(inst.true_value()));
            }
        }
    }

    #[test]
    fn synthetic_scenes_are_deterministic() {
        let v = build_vocabulary();
        let a = synthetic_scenes(&v, &[], 24, 2, 9, 4, true, 5);
        let b = synthetic_scenes(&v, &[], 24, 2, 9, 4, true, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        assert!(a.iter().all(|(_, s)| (2..=9).contains(&s.true_count)));
    }
}
