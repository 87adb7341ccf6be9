//! `gen`: writes the scene manifest and the prompt instance set.

use pih_core::build_vocabulary;

use crate::config::ExperimentConfig;
use crate::pipeline::{
    build_instances, build_scenes, write_file, write_jsonl, Artifacts, RunMeta, SceneRecord,
};
use crate::CliError;

pub fn run_gen(config: &ExperimentConfig, art: &Artifacts) -> Result<(), CliError> {
    let vocab = build_vocabulary();
    let scenes = build_scenes(config, &vocab)?;
    let records: Vec<SceneRecord> = scenes
        .iter()
        .map(|(id, scene, image_ref)| SceneRecord {
            sample_id: id.clone(),
            object: vocab.token(scene.object).to_string(),
            true_count: scene.true_count,
            true_color: vocab.token(scene.object_color).to_string(),
            image_ref: image_ref.clone(),
        })
        .collect();
    write_jsonl(&art.manifest(), &records)?;

    let instances = build_instances(config, &vocab, &scenes)?;
    write_jsonl(&art.instances(), &instances)?;

    let meta = RunMeta {
        config_hash: config.fingerprint(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        task: config.task.kind,
    };
    write_file(
        &art.meta(),
        serde_json::to_string_pretty(&meta)
            .expect("meta serializes")
            .as_bytes(),
    )?;
    println!(
        "gen: {} scenes, {} instances -> {}",
        records.len(),
        instances.len(),
        art.dir.display()
    );
    Ok(())
}
