//! `knockout`: before/after evaluation under an ablation plan: the
//! baseline exact-match panel, the misaligned prompt/true-count panels,
//! the digit/word format breakdown, the color copy-category table, and
//! the per-response records.

use rayon::prelude::*;
use serde::Serialize;

use pih_core::{
    build_vocabulary, classify_copy_form, compute_match_metrics, run_instance, AblationPlan,
    CopyForm, EvalOptions, ModelParams, PromptInstance, PromptKind, Surface, Value, Vocabulary,
};

use crate::config::{ExperimentConfig, TaskKind};
use crate::pipeline::{
    build_model, eval_options, fmt_f64, load_instances, load_retained, retained_split, Artifacts,
    Csv,
};
use crate::{resolve_plan, CliError};

#[derive(Debug, Serialize)]
struct ResponseRecord {
    config: String,
    sample_id: String,
    task: TaskKind,
    kind: PromptKind,
    k: usize,
    ablated: bool,
    response_text: String,
    value: Option<Value>,
    surface: Option<Surface>,
    category: Option<CopyForm>,
    prompt_match: bool,
    true_match: bool,
}

struct Evaluated {
    records: Vec<ResponseRecord>,
    outcomes: Vec<(Option<Value>, Value, Value)>,
}

fn prompt_surface(task: TaskKind) -> Surface {
    match task {
        TaskKind::Count => Surface::Digit,
        TaskKind::Color => Surface::Attributive,
    }
}

fn evaluate(
    params: &ModelParams,
    vocab: &Vocabulary,
    instances: &[PromptInstance],
    plan: Option<&AblationPlan>,
    opts: EvalOptions,
    config_hash: &str,
    task: TaskKind,
) -> Result<Evaluated, CliError> {
    let rows: Vec<(ResponseRecord, (Option<Value>, Value, Value))> = instances
        .par_iter()
        .map(|inst| {
            let (response, extracted) = run_instance(params, vocab, inst, plan, opts)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let value = extracted.map(|e| e.value);
            let truth = inst.true_value();
            let category = match (inst.kind, inst.prompted_value) {
                (PromptKind::Misaligned, Some(prompted)) => Some(
                    classify_copy_form(extracted.as_ref(), prompted, truth, prompt_surface(task))
                        .map_err(|e| CliError::Runtime(e.to_string()))?,
                ),
                _ => None,
            };
            let record = ResponseRecord {
                config: config_hash.to_string(),
                sample_id: inst.sample_id.clone(),
                task,
                kind: inst.kind,
                k: inst.k,
                ablated: plan.is_some(),
                response_text: vocab.detokenize(response.assistant_ids()),
                value,
                surface: extracted.map(|e| e.surface),
                category,
                prompt_match: inst.prompted_value.is_some() && value == inst.prompted_value,
                true_match: value == Some(truth),
            };
            let outcome = (value, inst.prompted_value.unwrap_or(truth), truth);
            Ok((record, outcome))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let (records, outcomes) = rows.into_iter().unzip();
    Ok(Evaluated { records, outcomes })
}

fn exact_match_pct(records: &[ResponseRecord]) -> f64 {
    let hits = records.iter().filter(|r| r.true_match).count();
    100.0 * hits as f64 / records.len().max(1) as f64
}

/// Digit/word shares split by correctness, as percentages of the responses
/// that contain a numeric value.
fn digit_word_rows(records: &[ResponseRecord]) -> [f64; 6] {
    let with_value: Vec<&ResponseRecord> =
        records.iter().filter(|r| r.surface.is_some()).collect();
    let n = with_value.len().max(1) as f64;
    let share = |surface: Surface, correct: bool| -> f64 {
        let count = with_value
            .iter()
            .filter(|r| r.surface == Some(surface) && r.true_match == correct)
            .count();
        100.0 * count as f64 / n
    };
    let digit_incorrect = share(Surface::Digit, false);
    let digit_correct = share(Surface::Digit, true);
    let word_incorrect = share(Surface::Word, false);
    let word_correct = share(Surface::Word, true);
    [
        digit_incorrect,
        digit_correct,
        digit_incorrect + digit_correct,
        word_incorrect,
        word_correct,
        word_incorrect + word_correct,
    ]
}

fn category_pct(records: &[ResponseRecord], category: CopyForm) -> f64 {
    let n = records.len().max(1) as f64;
    let count = records
        .iter()
        .filter(|r| r.category == Some(category))
        .count();
    100.0 * count as f64 / n
}

pub fn run_knockout(
    config: &ExperimentConfig,
    art: &Artifacts,
    heads_flag: Option<&str>,
) -> Result<(), CliError> {
    let vocab = build_vocabulary();
    let params = build_model(config, &vocab)?;
    let plan = resolve_plan(art, heads_flag)?;
    let instances = load_instances(art)?;
    let retained = load_retained(art)?;
    let (baselines, misaligned) = retained_split(&instances, &retained);
    if baselines.is_empty() || misaligned.is_empty() {
        return Err(CliError::Runtime(
            "knockout needs retained baseline and misaligned instances".into(),
        ));
    }
    let opts = eval_options(config);
    let hash = config.fingerprint();
    let task = config.task.kind;

    let base_before = evaluate(&params, &vocab, &baselines, None, opts, &hash, task)?;
    let base_after = evaluate(&params, &vocab, &baselines, Some(&plan), opts, &hash, task)?;
    let mis_before = evaluate(&params, &vocab, &misaligned, None, opts, &hash, task)?;
    let mis_after = evaluate(&params, &vocab, &misaligned, Some(&plan), opts, &hash, task)?;

    let before = compute_match_metrics(&mis_before.outcomes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let after = compute_match_metrics(&mis_after.outcomes)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut csv = Csv::new("panel,metric,direction,before,after");
    csv.row(&[
        "baseline".into(),
        "exact_match".into(),
        "up".into(),
        fmt_f64(exact_match_pct(&base_before.records)),
        fmt_f64(exact_match_pct(&base_after.records)),
    ]);
    csv.row(&[
        "misaligned".into(),
        "prompt_match".into(),
        "down".into(),
        fmt_f64(100.0 * before.prompt_match),
        fmt_f64(100.0 * after.prompt_match),
    ]);
    csv.row(&[
        "misaligned".into(),
        "true_count_match".into(),
        "up".into(),
        fmt_f64(100.0 * before.true_match),
        fmt_f64(100.0 * after.true_match),
    ]);
    csv.write(&art.knockout_metrics())?;

    match task {
        TaskKind::Count => {
            let b = digit_word_rows(&mis_before.records);
            let a = digit_word_rows(&mis_after.records);
            let mut csv = Csv::new("accuracy,digit_before,digit_after,word_before,word_after");
            for (i, label) in ["incorrect", "correct", "total"].iter().enumerate() {
                csv.row(&[
                    label.to_string(),
                    fmt_f64(b[i]),
                    fmt_f64(a[i]),
                    fmt_f64(b[3 + i]),
                    fmt_f64(a[3 + i]),
                ]);
            }
            csv.write(&art.digit_word())?;
        }
        TaskKind::Color => {
            let rows = [
                ("NC (correct)", "no_pih", CopyForm::NoCopy),
                ("FC (correct)", "no_pih", CopyForm::FormatCopy),
                ("NC (no color)", "no_pih", CopyForm::NoValue),
                ("EC (incorrect)", "pih", CopyForm::ExactCopy),
                ("SC (incorrect)", "pih", CopyForm::SoftCopy),
            ];
            let mut csv = Csv::new("category,family,before,after");
            let mut family_sums = [(0.0, 0.0), (0.0, 0.0)]; // (no_pih, pih) x (before, after)
            for (label, family, form) in rows {
                let b = category_pct(&mis_before.records, form);
                let a = category_pct(&mis_after.records, form);
                let idx = usize::from(family == "pih");
                family_sums[idx].0 += b;
                family_sums[idx].1 += a;
                csv.row(&[label.into(), family.into(), fmt_f64(b), fmt_f64(a)]);
            }
            csv.row(&[
                "No PIH".into(),
                "no_pih".into(),
                fmt_f64(family_sums[0].0),
                fmt_f64(family_sums[0].1),
            ]);
            csv.row(&[
                "PIH".into(),
                "pih".into(),
                fmt_f64(family_sums[1].0),
                fmt_f64(family_sums[1].1),
            ]);
            csv.write(&art.color_categories())?;
        }
    }

    let mut records = Vec::new();
    records.extend(base_before.records);
    records.extend(base_after.records);
    records.extend(mis_before.records);
    records.extend(mis_after.records);
    crate::pipeline::write_jsonl(&art.records(), &records)?;

    println!(
        "knockout: plan [{}], prompt match {:.1}% -> {:.1}%",
        plan.targets().map(|h| h.to_string()).collect::<Vec<_>>().join(" "),
        100.0 * before.prompt_match,
        100.0 * after.prompt_match
    );
    Ok(())
}
