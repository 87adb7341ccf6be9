//! Shared plumbing between subcommands: model construction, dataset
//! assembly, artifact paths, and deterministic readers/writers.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pih_core::{
    baseline_prompt, build_planted_model, generate_scene, load_manifest, misaligned_color_prompt,
    misaligned_count_prompt, synthetic_scenes, ColorWheel, EvalOptions, FilterRecord, ModelParams,
    PromptInstance, PromptKind, Scene, Task, Vocabulary,
};

use crate::config::{DatasetSource, ExperimentConfig, ModelKind, TaskKind};
use crate::CliError;

pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }

    pub fn meta(&self) -> PathBuf {
        self.dir.join("meta.json")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }
    pub fn instances(&self) -> PathBuf {
        self.dir.join("instances.jsonl")
    }
    pub fn baseline_log(&self) -> PathBuf {
        self.dir.join("baseline_log.jsonl")
    }
    pub fn retained(&self) -> PathBuf {
        self.dir.join("retained.json")
    }
    pub fn sweep(&self) -> PathBuf {
        self.dir.join("sweep.csv")
    }
    pub fn grouped(&self) -> PathBuf {
        self.dir.join("grouped.csv")
    }
    pub fn knockout_metrics(&self) -> PathBuf {
        self.dir.join("knockout_metrics.csv")
    }
    pub fn digit_word(&self) -> PathBuf {
        self.dir.join("digit_word.csv")
    }
    pub fn color_categories(&self) -> PathBuf {
        self.dir.join("color_categories.csv")
    }
    pub fn records(&self) -> PathBuf {
        self.dir.join("records.jsonl")
    }
    pub fn curves(&self) -> PathBuf {
        self.dir.join("curves.csv")
    }
    pub fn base_probs(&self) -> PathBuf {
        self.dir.join("base_probs.csv")
    }
    pub fn correlation(&self) -> PathBuf {
        self.dir.join("correlation.csv")
    }
    pub fn mass(&self) -> PathBuf {
        self.dir.join("mass.csv")
    }
    pub fn prob_impact(&self) -> PathBuf {
        self.dir.join("prob_impact.csv")
    }
    pub fn heatmap(&self, layer: usize, head: usize) -> PathBuf {
        self.dir.join(format!("heatmap_L{layer}H{head}.csv"))
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.txt")
    }

    pub fn require(&self, paths: &[PathBuf]) -> Result<(), CliError> {
        let missing: Vec<String> = paths
            .iter()
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(CliError::MissingArtifacts(missing))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub tool_version: String,
    pub task: TaskKind,
}

pub fn eval_options(config: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        max_new: config.run.generation_budget,
        negation_window: config.run.negation_window,
    }
}

pub fn build_model(config: &ExperimentConfig, vocab: &Vocabulary) -> Result<ModelParams, CliError> {
    match config.model.kind {
        ModelKind::Planted => {
            let spec = config.planted_spec()?;
            build_planted_model(&spec, vocab)
                .map_err(|e| CliError::Runtime(format!("planted construction: {e}")))
        }
        ModelKind::Weights => {
            let path = config
                .model
                .weights_path
                .as_ref()
                .expect("validated config has a weights path");
            ModelParams::load(path)
                .map_err(|e| CliError::Runtime(format!("loading {}: {e}", path.display())))
        }
    }
}

/// Scene-level manifest row written by `gen` (and re-read for reports).
#[derive(Debug, Serialize, Deserialize)]
pub struct SceneRecord {
    pub sample_id: String,
    pub object: String,
    pub true_count: usize,
    pub true_color: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

pub fn build_scenes(
    config: &ExperimentConfig,
    vocab: &Vocabulary,
) -> Result<Vec<(String, Scene, Option<String>)>, CliError> {
    match config.dataset.source {
        DatasetSource::Synthetic => {
            let objects: Vec<pih_core::TokenId> = match &config.dataset.objects {
                None => Vec::new(),
                Some(names) => names
                    .iter()
                    .map(|name| {
                        vocab.id(name).and_then(|id| {
                            vocab.object_index(id).map(|_| id)
                        })
                        .ok_or_else(|| {
                            CliError::Config(format!(
                                "config field dataset.objects: unknown object word {name:?}"
                            ))
                        })
                    })
                    .collect::<Result<_, _>>()?,
            };
            Ok(synthetic_scenes(
                vocab,
                &objects,
                config.dataset.scenes,
                config.dataset.count_min,
                config.dataset.count_max,
                config.model.grid,
                true,
                config.run.seed,
            )
            .into_iter()
            .map(|(id, scene)| (id, scene, None))
            .collect())
        }
        DatasetSource::Manifest => {
            let path = config
                .dataset
                .manifest_path
                .as_ref()
                .expect("validated config has a manifest path");
            let manifest = load_manifest(path, vocab)
                .map_err(|e| CliError::Runtime(format!("manifest {}: {e}", path.display())))?;
            let wheel = ColorWheel::standard(vocab);
            manifest
                .records
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let object = vocab.id(&r.object).expect("manifest validated the object");
                    // records without a color get a deterministic hue
                    let color = match &r.true_color {
                        Some(c) => vocab.id(c).expect("manifest validated the color"),
                        None => {
                            let hue = i % wheel.len();
                            vocab.color_token(hue)
                        }
                    };
                    if r.true_count > config.model.grid * config.model.grid {
                        return Err(CliError::Runtime(format!(
                            "manifest record {}: count {} exceeds the configured grid",
                            r.sample_id, r.true_count
                        )));
                    }
                    let scene = generate_scene(
                        config.model.grid,
                        object,
                        color,
                        r.true_count,
                        config.run.seed.wrapping_add(i as u64),
                    )
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                    Ok((r.sample_id, scene, r.image_ref))
                })
                .collect()
        }
    }
}

pub fn build_instances(
    config: &ExperimentConfig,
    vocab: &Vocabulary,
    scenes: &[(String, Scene, Option<String>)],
) -> Result<Vec<PromptInstance>, CliError> {
    let task = match config.task.kind {
        TaskKind::Count => Task::Count,
        TaskKind::Color => Task::Color,
    };
    let wheel = ColorWheel::standard(vocab);
    let mut instances = Vec::new();
    for (id, scene, _) in scenes {
        instances.push(baseline_prompt(scene, task, id, vocab));
        match task {
            Task::Count => {
                for &k in config.task.offsets.iter().chain(&config.task.extended_offsets) {
                    let inst = misaligned_count_prompt(scene, k, id, vocab)
                        .map_err(|e| CliError::Runtime(format!("sample {id}, k={k}: {e}")))?;
                    instances.push(inst);
                }
            }
            Task::Color => {
                for &k in &config.task.color_offsets {
                    let inst = misaligned_color_prompt(scene, &wheel, k, id, vocab)
                        .map_err(|e| CliError::Runtime(format!("sample {id}, k={k}: {e}")))?;
                    instances.push(inst);
                }
            }
        }
    }
    Ok(instances)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Runtime(format!("parsing {}: {e}", path.display())))
        })
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", parent.display())))?;
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    file.write_all(bytes)
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

/// CSV writer with full control over the emitted bytes; fields never need
/// quoting in our schemas.
pub struct Csv {
    buffer: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        let mut buffer = String::from(header);
        buffer.push('\n');
        Self { buffer }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buffer.push_str(&fields.join(","));
        self.buffer.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        write_file(path, self.buffer.as_bytes())
    }
}

/// Shortest round-trip decimal rendering; stable across runs and platforms.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn load_instances(art: &Artifacts) -> Result<Vec<PromptInstance>, CliError> {
    art.require(&[art.instances()])?;
    read_jsonl(&art.instances())
}

pub fn load_retained(art: &Artifacts) -> Result<BTreeSet<String>, CliError> {
    art.require(&[art.retained()])?;
    let text = std::fs::read_to_string(art.retained())
        .map_err(|e| CliError::Runtime(format!("reading retained set: {e}")))?;
    let ids: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("parsing retained set: {e}")))?;
    Ok(ids.into_iter().collect())
}

pub fn retained_split(
    instances: &[PromptInstance],
    retained: &BTreeSet<String>,
) -> (Vec<PromptInstance>, Vec<PromptInstance>) {
    let mut baselines = Vec::new();
    let mut misaligned = Vec::new();
    for inst in instances {
        if !retained.contains(&inst.sample_id) {
            continue;
        }
        match inst.kind {
            PromptKind::Baseline => baselines.push(inst.clone()),
            PromptKind::Misaligned => misaligned.push(inst.clone()),
        }
    }
    (baselines, misaligned)
}

pub fn write_baseline_outputs(
    art: &Artifacts,
    log: &[FilterRecord],
    retained: &[String],
) -> Result<(), CliError> {
    write_jsonl(&art.baseline_log(), log)?;
    let mut ids = retained.to_vec();
    ids.sort();
    write_file(
        &art.retained(),
        serde_json::to_string_pretty(&ids)
            .expect("string array serializes")
            .as_bytes(),
    )
}
