//! `sweep`: per-head knockout scores over the copying instances, then the
//! grouped knockout over the top-m heads.

use pih_core::{build_vocabulary, grouped_knockout, head_sweep, pih_prefilter};

use crate::config::ExperimentConfig;
use crate::pipeline::{
    build_model, eval_options, fmt_f64, load_instances, load_retained, retained_split, Artifacts,
    Csv,
};
use crate::CliError;

pub fn run_sweep(config: &ExperimentConfig, art: &Artifacts) -> Result<(), CliError> {
    let vocab = build_vocabulary();
    let params = build_model(config, &vocab)?;
    let instances = load_instances(art)?;
    let retained = load_retained(art)?;
    let (_, misaligned) = retained_split(&instances, &retained);
    if misaligned.is_empty() {
        return Err(CliError::Runtime(
            "no retained misaligned instances; run `baseline` on a capable model first".into(),
        ));
    }
    let opts = eval_options(config);
    let pih = pih_prefilter(&params, &vocab, &misaligned, opts)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if pih.is_empty() {
        return Err(CliError::Runtime(
            "no instance copies the prompt; the sweep has nothing to measure".into(),
        ));
    }
    println!(
        "sweep: {} of {} retained misaligned instances copy the prompt",
        pih.len(),
        misaligned.len()
    );

    let sweep = head_sweep(&params, &vocab, &pih, opts)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = Csv::new("layer,head,success");
    for (head, score) in &sweep.scores {
        csv.row(&[
            head.layer.to_string(),
            head.head.to_string(),
            fmt_f64(*score),
        ]);
    }
    csv.write(&art.sweep())?;

    let grouped = grouped_knockout(
        &params,
        &vocab,
        &sweep.ranking,
        &pih,
        &config.sweep.group_sizes,
        opts,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    for row in &grouped.rows {
        if row.clamped {
            eprintln!(
                "warning: group size {} clamped to the {} available heads",
                row.m, row.effective_m
            );
        }
    }
    let mut csv = Csv::new("m,effective_m,success,selected");
    for row in &grouped.rows {
        csv.row(&[
            row.m.to_string(),
            row.effective_m.to_string(),
            fmt_f64(row.success),
            (row.selected as u8).to_string(),
        ]);
    }
    csv.write(&art.grouped())?;
    println!(
        "sweep: top head {}, selected m = {}",
        sweep.ranking[0], grouped.selected_m
    );
    Ok(())
}
