//! `baseline`: runs the non-conflicting prompts and retains the samples
//! the model answers correctly.

use pih_core::{baseline_filter, build_vocabulary, PromptKind};

use crate::config::ExperimentConfig;
use crate::pipeline::{
    build_model, eval_options, load_instances, write_baseline_outputs, Artifacts,
};
use crate::CliError;

pub fn run_baseline(config: &ExperimentConfig, art: &Artifacts) -> Result<(), CliError> {
    let vocab = build_vocabulary();
    let params = build_model(config, &vocab)?;
    let instances = load_instances(art)?;
    let baselines: Vec<_> = instances
        .into_iter()
        .filter(|i| i.kind == PromptKind::Baseline)
        .collect();
    let outcome = baseline_filter(&params, &vocab, &baselines, eval_options(config))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if outcome.retained.is_empty() {
        eprintln!("warning: the model answered no baseline prompt correctly");
    }
    write_baseline_outputs(art, &outcome.log, &outcome.retained)?;
    println!(
        "baseline: retained {}/{} samples",
        outcome.retained.len(),
        outcome.log.len()
    );
    Ok(())
}
