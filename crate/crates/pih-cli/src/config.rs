//! Declarative experiment configuration: one TOML document drives model
//! construction, dataset generation, offset schedules, and output layout.
//! All randomness flows from a single seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pih_core::{HeadId, PlantedSpec};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub dataset: DatasetSection,
    pub task: TaskSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub analytics: AnalyticsSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_max_count")]
    pub max_count: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_copy_heads")]
    pub copy_heads: Vec<String>,
    #[serde(default = "default_decoy_seed")]
    pub decoy_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Planted,
    Weights,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default = "default_source")]
    pub source: DatasetSource,
    #[serde(default)]
    pub manifest_path: Option<PathBuf>,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default = "default_count_min")]
    pub count_min: usize,
    #[serde(default = "default_count_max")]
    pub count_max: usize,
    /// Object words to rotate through; omit for the whole lexicon.
    #[serde(default)]
    pub objects: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic,
    Manifest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default = "default_offsets")]
    pub offsets: Vec<usize>,
    #[serde(default = "default_extended_offsets")]
    pub extended_offsets: Vec<usize>,
    #[serde(default = "default_color_offsets")]
    pub color_offsets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Count,
    Color,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub generation_budget: usize,
    pub negation_window: usize,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 7,
            generation_budget: 75,
            negation_window: 4,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub group_sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            group_sizes: vec![1, 3, 5, 10],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsSection {
    pub query_weighting: QueryWeighting,
    pub heatmap_heads: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryWeighting {
    Uniform,
    ByLength,
}

impl Default for AnalyticsSection {
    fn default() -> Self {
        Self {
            query_weighting: QueryWeighting::Uniform,
            heatmap_heads: vec!["L0H6".to_string()],
        }
    }
}

fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    8
}
fn default_d_model() -> usize {
    256
}
fn default_max_count() -> usize {
    9
}
fn default_grid() -> usize {
    4
}
fn default_copy_heads() -> Vec<String> {
    vec!["L0H6".into(), "L1H2".into(), "L2H5".into()]
}
fn default_decoy_seed() -> u64 {
    0xDEC0
}
fn default_source() -> DatasetSource {
    DatasetSource::Synthetic
}
fn default_scenes() -> usize {
    48
}
fn default_count_min() -> usize {
    2
}
fn default_count_max() -> usize {
    9
}
fn default_offsets() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}
fn default_extended_offsets() -> Vec<usize> {
    vec![10, 20, 50]
}
fn default_color_offsets() -> Vec<usize> {
    vec![1, 2, 3]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |field: &str, msg: String| {
            Err(CliError::Config(format!("config field {field}: {msg}")))
        };
        match self.model.kind {
            ModelKind::Weights => match &self.model.weights_path {
                None => return fail("model.weights_path", "required for kind = \"weights\"".into()),
                Some(p) if !p.exists() => {
                    return fail("model.weights_path", format!("{} does not exist", p.display()))
                }
                _ => {}
            },
            ModelKind::Planted => {
                if self.parse_copy_heads()?.is_empty() {
                    return fail("model.copy_heads", "must name at least one head".into());
                }
            }
        }
        if self.dataset.source == DatasetSource::Manifest {
            match &self.dataset.manifest_path {
                None => {
                    return fail(
                        "dataset.manifest_path",
                        "required for source = \"manifest\"".into(),
                    )
                }
                Some(p) if !p.exists() => {
                    return fail(
                        "dataset.manifest_path",
                        format!("{} does not exist", p.display()),
                    )
                }
                _ => {}
            }
        } else {
            if self.dataset.scenes == 0 {
                return fail("dataset.scenes", "must be positive".into());
            }
            if let Some(objects) = &self.dataset.objects {
                if objects.is_empty() {
                    return fail("dataset.objects", "object list is empty".into());
                }
            }
            if self.dataset.count_min < 1 || self.dataset.count_min > self.dataset.count_max {
                return fail(
                    "dataset.count_min",
                    "must satisfy 1 <= count_min <= count_max".into(),
                );
            }
            if self.dataset.count_max > self.model.grid * self.model.grid {
                return fail(
                    "dataset.count_max",
                    format!("exceeds the {} grid cells", self.model.grid * self.model.grid),
                );
            }
            if self.model.kind == ModelKind::Planted
                && self.dataset.count_max > self.model.max_count
            {
                return fail(
                    "dataset.count_max",
                    format!("exceeds model.max_count {}", self.model.max_count),
                );
            }
        }
        let legal_count: BTreeSet<usize> = [1, 2, 3, 4, 5, 10, 20, 50].into_iter().collect();
        for &k in self.task.offsets.iter().chain(&self.task.extended_offsets) {
            if !legal_count.contains(&k) {
                return fail("task.offsets", format!("offset {k} outside the legal schedule"));
            }
        }
        if self.task.offsets.is_empty() && self.task.kind == TaskKind::Count {
            return fail("task.offsets", "must name at least one offset".into());
        }
        for &k in &self.task.color_offsets {
            if !(1..=3).contains(&k) {
                return fail("task.color_offsets", format!("offset {k} outside 1..=3"));
            }
        }
        if self.task.kind == TaskKind::Color && self.task.color_offsets.is_empty() {
            return fail("task.color_offsets", "must name at least one offset".into());
        }
        let max_offset = self
            .task
            .offsets
            .iter()
            .chain(&self.task.extended_offsets)
            .copied()
            .max()
            .unwrap_or(0);
        if self.dataset.count_max + max_offset > 99 {
            return fail(
                "task.offsets",
                format!(
                    "count_max {} + offset {max_offset} exceeds the 99 lexicon bound",
                    self.dataset.count_max
                ),
            );
        }
        if self.sweep.group_sizes.is_empty() {
            return fail("sweep.group_sizes", "must name at least one group size".into());
        }
        for spec in &self.analytics.heatmap_heads {
            if HeadId::parse(spec).is_none() {
                return fail("analytics.heatmap_heads", format!("cannot parse {spec:?}"));
            }
        }
        self.parse_copy_heads()?;
        Ok(())
    }

    pub fn parse_copy_heads(&self) -> Result<BTreeSet<HeadId>, CliError> {
        self.model
            .copy_heads
            .iter()
            .map(|s| {
                HeadId::parse(s).ok_or_else(|| {
                    CliError::Config(format!("config field model.copy_heads: cannot parse {s:?}"))
                })
            })
            .collect()
    }

    pub fn planted_spec(&self) -> Result<PlantedSpec, CliError> {
        Ok(PlantedSpec {
            layers: self.model.layers,
            heads: self.model.heads,
            d_model: self.model.d_model,
            max_count: self.model.max_count,
            copy_heads: self.parse_copy_heads()?,
            grid: self.model.grid,
            decoy_seed: self.model.decoy_seed,
        })
    }

    /// Stable fingerprint of the resolved configuration (FNV-1a over the
    /// canonical TOML serialization), stamped into every record. The
    /// thread count is execution-only and never changes outputs, so it is
    /// excluded from the identity.
    pub fn fingerprint(&self) -> String {
        let mut canonical_form = self.clone();
        canonical_form.run.threads = 0;
        let canonical = toml::to_string(&canonical_form).expect("config serializes");
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in canonical.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}
