//! `analyze`: curve data behind the rate/probability figures, the
//! base-probability correlation, per-layer attention-mass deltas,
//! knockout probability impact, and aggregated attention heatmaps.

use std::collections::BTreeMap;

use rayon::prelude::*;

use pih_core::{
    aggregate_heatmap, attention_mass, build_vocabulary, forward, mass_delta,
    next_token_distribution, pearson, run_instance, AblationPlan, AnalyticsError,
    AttentionMassProfile, EvalOptions, HeadId, ModelParams, PromptInstance, Task, Value,
    Vocabulary,
};

use crate::config::{ExperimentConfig, QueryWeighting, TaskKind};
use crate::pipeline::{
    build_model, eval_options, fmt_f64, load_instances, load_retained, retained_split, Artifacts,
    Csv,
};
use crate::{resolve_plan, CliError};

/// Per-(n, k) prompt/true/no-value rates over the unablated responses.
fn write_curves(
    params: &ModelParams,
    vocab: &Vocabulary,
    misaligned: &[PromptInstance],
    opts: EvalOptions,
    art: &Artifacts,
) -> Result<(), CliError> {
    let values: Vec<Option<Value>> = misaligned
        .par_iter()
        .map(|inst| {
            run_instance(params, vocab, inst, None, opts)
                .map(|(_, e)| e.map(|e| e.value))
                .map_err(|e| CliError::Runtime(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let mut buckets: BTreeMap<(usize, usize), (usize, usize, usize, usize)> = BTreeMap::new();
    for (inst, value) in misaligned.iter().zip(&values) {
        let bucket = buckets.entry((inst.n, inst.k)).or_default();
        bucket.0 += 1;
        if *value == inst.prompted_value {
            bucket.1 += 1;
        } else if *value == Some(inst.true_value()) {
            bucket.2 += 1;
        } else {
            bucket.3 += 1;
        }
    }
    let mut csv = Csv::new("n,k,samples,prompt_match,true_match,no_value");
    for ((n, k), (total, prompt, truth, none)) in buckets {
        let t = total as f64;
        csv.row(&[
            n.to_string(),
            k.to_string(),
            total.to_string(),
            fmt_f64(prompt as f64 / t),
            fmt_f64(truth as f64 / t),
            fmt_f64(none as f64 / t),
        ]);
    }
    csv.write(&art.curves())
}

/// Mean digit-form probability of n + k under the baseline prompt, per
/// (n, k); the k = 0 rows carry the true-count confidence.
fn write_base_probs(
    params: &ModelParams,
    vocab: &Vocabulary,
    baselines: &[PromptInstance],
    ks: &[usize],
    art: &Artifacts,
) -> Result<(), CliError> {
    let mut buckets: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for inst in baselines {
        let profile = pih_core::base_prob_profile(params, vocab, inst, ks)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let entry = buckets.entry((inst.n, 0)).or_default();
        entry.0 += profile.p_true;
        entry.1 += 1;
        for (k, p) in profile.p_offsets {
            let entry = buckets.entry((inst.n, k)).or_default();
            entry.0 += p;
            entry.1 += 1;
        }
    }
    let mut csv = Csv::new("n,k,mean_p,samples");
    for ((n, k), (sum, count)) in buckets {
        csv.row(&[
            n.to_string(),
            k.to_string(),
            fmt_f64(sum / count as f64),
            count.to_string(),
        ]);
    }
    csv.write(&art.base_probs())
}

/// Pearson correlation between the baseline probability of the prompted
/// value and per-sample prompt confirmation.
fn write_correlation(
    params: &ModelParams,
    vocab: &Vocabulary,
    misaligned: &[PromptInstance],
    opts: EvalOptions,
    art: &Artifacts,
) -> Result<(), CliError> {
    let pairs: Vec<(f64, f64)> = misaligned
        .par_iter()
        .map(|inst| {
            let baseline = pih_core::baseline_prompt(
                &inst.scene,
                Task::Count,
                &inst.sample_id,
                vocab,
            );
            let dist = next_token_distribution(params, &baseline.prompt_tokens, None)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let Some(Value::Count(prompted)) = inst.prompted_value else {
                return Err(CliError::Runtime(format!(
                    "instance {} has no prompted count",
                    inst.sample_id
                )));
            };
            let x = dist[vocab.digit_token(prompted)];
            let (_, e) = run_instance(params, vocab, inst, None, opts)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let y = f64::from(e.map(|e| e.value) == inst.prompted_value);
            Ok((x, y))
        })
        .collect::<Result<_, _>>()?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let mut csv = Csv::new("rho,n");
    match pearson(&xs, &ys) {
        Ok(r) => csv.row(&[fmt_f64(r.rho), r.n.to_string()]),
        Err(AnalyticsError::ZeroVariance) => {
            eprintln!("warning: correlation undefined (zero variance)");
            csv.row(&["nan".into(), xs.len().to_string()]);
        }
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    }
    csv.write(&art.correlation())
}

/// Attention-mass profile of one instance's full (prompt + response)
/// sequence under an optional plan.
fn instance_mass(
    params: &ModelParams,
    vocab: &Vocabulary,
    inst: &PromptInstance,
    plan: Option<&AblationPlan>,
    opts: EvalOptions,
) -> Result<(AttentionMassProfile, usize), CliError> {
    let full = pih_core::generate(params, vocab, &inst.prompt_tokens, plan, opts.max_new)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (_, capture) = forward(params, &full, plan).map_err(|e| CliError::Runtime(e.to_string()))?;
    let queries = full
        .roles()
        .iter()
        .filter(|r| **r == pih_core::Role::Assistant)
        .count();
    let profile =
        attention_mass(&capture, full.roles()).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((profile, queries))
}

fn mean_profile(
    profiles: &[(AttentionMassProfile, usize)],
    weighting: QueryWeighting,
) -> AttentionMassProfile {
    let layers = profiles[0].0.image_mass.len();
    let mut acc = vec![0.0; layers];
    let mut total_weight = 0.0;
    for (profile, queries) in profiles {
        let w = match weighting {
            QueryWeighting::Uniform => 1.0,
            QueryWeighting::ByLength => *queries as f64,
        };
        for (l, m) in profile.image_mass.iter().enumerate() {
            acc[l] += w * m;
        }
        total_weight += w;
    }
    AttentionMassProfile {
        image_mass: acc.into_iter().map(|v| v / total_weight).collect(),
    }
}

fn write_mass(
    params: &ModelParams,
    vocab: &Vocabulary,
    misaligned: &[PromptInstance],
    plan: &AblationPlan,
    opts: EvalOptions,
    weighting: QueryWeighting,
    art: &Artifacts,
) -> Result<(), CliError> {
    let before: Vec<(AttentionMassProfile, usize)> = misaligned
        .par_iter()
        .map(|inst| instance_mass(params, vocab, inst, None, opts))
        .collect::<Result<_, _>>()?;
    let after: Vec<(AttentionMassProfile, usize)> = misaligned
        .par_iter()
        .map(|inst| instance_mass(params, vocab, inst, Some(plan), opts))
        .collect::<Result<_, _>>()?;
    let before = mean_profile(&before, weighting);
    let after = mean_profile(&after, weighting);
    let delta = mass_delta(&before, &after).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut csv = Csv::new("layer,image_mass_before,image_mass_after,delta");
    for (l, d) in delta.delta.iter().enumerate() {
        csv.row(&[
            l.to_string(),
            fmt_f64(before.image_mass[l]),
            fmt_f64(after.image_mass[l]),
            fmt_f64(*d),
        ]);
    }
    csv.write(&art.mass())
}

fn write_prob_impact(
    params: &ModelParams,
    vocab: &Vocabulary,
    misaligned: &[PromptInstance],
    plan: &AblationPlan,
    art: &Artifacts,
) -> Result<(), CliError> {
    let impacts: Vec<pih_core::ProbImpact> = misaligned
        .par_iter()
        .map(|inst| {
            pih_core::knockout_prob_impact(params, vocab, inst, plan)
                .map_err(|e| CliError::Runtime(e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let n = impacts.len().max(1) as f64;
    let mean = |f: fn(&pih_core::ProbImpact) -> f64| impacts.iter().map(f).sum::<f64>() / n;
    let digit_before = mean(|i| i.digit_before);
    let digit_after = mean(|i| i.digit_after);
    let word_before = mean(|i| i.word_before);
    let word_after = mean(|i| i.word_after);
    let mut csv = Csv::new("form,before,after,delta");
    csv.row(&[
        "digit".into(),
        fmt_f64(digit_before),
        fmt_f64(digit_after),
        fmt_f64(digit_after - digit_before),
    ]);
    csv.row(&[
        "word".into(),
        fmt_f64(word_before),
        fmt_f64(word_after),
        fmt_f64(word_after - word_before),
    ]);
    csv.write(&art.prob_impact())
}

fn write_heatmaps(
    params: &ModelParams,
    vocab: &Vocabulary,
    inst: &PromptInstance,
    heads: &[HeadId],
    opts: EvalOptions,
    art: &Artifacts,
) -> Result<(), CliError> {
    let full = pih_core::generate(params, vocab, &inst.prompt_tokens, None, opts.max_new)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (_, capture) = forward(params, &full, None).map_err(|e| CliError::Runtime(e.to_string()))?;
    for head in heads {
        if head.layer >= params.layers() || head.head >= params.heads() {
            return Err(CliError::Runtime(format!(
                "heatmap head {head} outside the model's head grid"
            )));
        }
        let agg = aggregate_heatmap(&capture, head.layer, head.head, &full, vocab)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if !agg.merged {
            eprintln!("warning: image block too short to merge for {head}");
        }
        let mut csv = Csv::new(&format!("label,{}", agg.labels.join(",")));
        for (ri, label) in agg.labels.iter().enumerate() {
            let mut fields = vec![label.clone()];
            fields.extend(agg.matrix.row(ri).iter().map(|v| fmt_f64(*v)));
            csv.row(&fields);
        }
        csv.write(&art.heatmap(head.layer, head.head))?;
    }
    Ok(())
}

pub fn run_analyze(
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
            "analyze needs retained baseline and misaligned instances".into(),
        ));
    }
    let opts = eval_options(config);

    write_curves(&params, &vocab, &misaligned, opts, art)?;
    write_mass(
        &params,
        &vocab,
        &misaligned,
        &plan,
        opts,
        config.analytics.query_weighting,
        art,
    )?;
    let heatmap_heads: Vec<HeadId> = config
        .analytics
        .heatmap_heads
        .iter()
        .map(|s| HeadId::parse(s).expect("validated head spec"))
        .collect();
    write_heatmaps(&params, &vocab, &misaligned[0], &heatmap_heads, opts, art)?;

    if config.task.kind == TaskKind::Count {
        let ks: Vec<usize> = config.task.offsets.clone();
        write_base_probs(&params, &vocab, &baselines, &ks, art)?;
        write_correlation(&params, &vocab, &misaligned, opts, art)?;
        write_prob_impact(&params, &vocab, &misaligned, &plan, art)?;
    }
    println!("analyze: wrote curve, mass, and probability artifacts");
    Ok(())
}
