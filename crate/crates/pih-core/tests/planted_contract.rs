//! Behavioral contract of the planted model, checked by direct evaluation
//! on a synthetic evaluation set:
//!
//! (a) baseline counting prompts yield the true-count digit;
//! (b) misaligned prompts in the copy regime yield the prompted digit,
//!     while low-count scenes resist and answer the grounded count;
//! (c) with every copy head mean-ablated, misaligned prompts yield the
//!     true count in digit or word form;
//! (d) ablating any single non-copy head leaves greedy outputs unchanged
//!     on at least 95% of the evaluation set;
//! (e) decoy heads carry pseudo-random attention fixed by the decoy seed.

use std::sync::LazyLock;

use pih_core::*;
use rayon::prelude::*;

struct Fixture {
    vocab: Vocabulary,
    spec: PlantedSpec,
    params: ModelParams,
    baselines: Vec<PromptInstance>,
    misaligned: Vec<PromptInstance>,
}

static FIXTURE: LazyLock<Fixture> = LazyLock::new(|| {
    let vocab = build_vocabulary();
    let spec = PlantedSpec::standard();
    let params = build_planted_model(&spec, &vocab).unwrap();
    let scenes = synthetic_scenes(&vocab, &[], 40, 2, 9, spec.grid, true, 11);
    let mut baselines = Vec::new();
    let mut misaligned = Vec::new();
    for (id, scene) in &scenes {
        baselines.push(baseline_prompt(scene, Task::Count, id, &vocab));
        for k in COUNT_OFFSETS_LOCAL {
            let sid = format!("{id}-k{k}");
            misaligned.push(misaligned_count_prompt(scene, k, &sid, &vocab).unwrap());
        }
    }
    assert_eq!(misaligned.len(), 200);
    Fixture {
        vocab,
        spec,
        params,
        baselines,
        misaligned,
    }
});

const COUNT_OFFSETS_LOCAL: [usize; 5] = [1, 2, 3, 4, 5];

/// The regime in which the planted model copies the prompt; below it the
/// grounded pathway wins, mirroring the resistance of low-count scenes.
fn copy_regime(n: usize, k: usize) -> bool {
    n >= 5 || (n == 4 && k == 1)
}

fn full_plan(f: &Fixture) -> AblationPlan {
    AblationPlan::new(f.spec.copy_heads.iter().copied())
}

fn opts() -> EvalOptions {
    EvalOptions::default()
}

#[test]
fn contract_a_baseline_counts_are_exact() {
    let f = &*FIXTURE;
    for inst in &f.baselines {
        let (_, extracted) = run_instance(&f.params, &f.vocab, inst, None, opts()).unwrap();
        let extracted = extracted.expect("baseline response contains a number");
        assert_eq!(extracted.value, Value::Count(inst.n as u8), "{}", inst.sample_id);
        assert_eq!(extracted.surface, Surface::Digit, "{}", inst.sample_id);
    }
}

#[test]
fn contract_b_copy_regime_follows_the_prompt() {
    let f = &*FIXTURE;
    for inst in &f.misaligned {
        let (_, extracted) = run_instance(&f.params, &f.vocab, inst, None, opts()).unwrap();
        let got = extracted.map(|e| e.value);
        if copy_regime(inst.n, inst.k) {
            assert_eq!(
                got, inst.prompted_value,
                "{} should copy the prompt",
                inst.sample_id
            );
            assert_eq!(extracted.unwrap().surface, Surface::Digit);
        } else {
            assert_eq!(
                got,
                Some(inst.true_value()),
                "{} should resist the prompt",
                inst.sample_id
            );
        }
    }
}

#[test]
fn contract_c_full_ablation_restores_the_truth() {
    let f = &*FIXTURE;
    let plan = full_plan(f);
    let pih: Vec<&PromptInstance> = f
        .misaligned
        .iter()
        .filter(|i| copy_regime(i.n, i.k))
        .collect();
    assert!(pih.len() >= 100);
    for inst in pih {
        let (_, extracted) = run_instance(&f.params, &f.vocab, inst, Some(&plan), opts()).unwrap();
        let extracted = extracted.expect("ablated response still names a count");
        assert_eq!(extracted.value, inst.true_value(), "{}", inst.sample_id);
        assert!(
            matches!(extracted.surface, Surface::Digit | Surface::Word),
            "{}",
            inst.sample_id
        );
    }
}

#[test]
fn contract_d_single_noncopy_knockouts_are_inert() {
    let f = &*FIXTURE;
    let all: Vec<&PromptInstance> = f.baselines.iter().chain(&f.misaligned).collect();
    let reference: Vec<TokenSeq> = all
        .par_iter()
        .map(|inst| {
            run_instance(&f.params, &f.vocab, inst, None, opts())
                .unwrap()
                .0
        })
        .collect();
    for layer in 0..f.params.layers() {
        for head in 0..f.params.heads() {
            let id = HeadId::new(layer, head);
            if f.spec.copy_heads.contains(&id) {
                continue;
            }
            let plan = AblationPlan::new([id]);
            let changed: usize = all
                .par_iter()
                .zip(&reference)
                .map(|(inst, expected)| {
                    let (got, _) =
                        run_instance(&f.params, &f.vocab, inst, Some(&plan), opts()).unwrap();
                    usize::from(&got != expected)
                })
                .sum();
            let rate = changed as f64 / all.len() as f64;
            assert!(rate < 0.05, "{id} changed {changed}/{} outputs", all.len());
        }
    }
}

#[test]
fn contract_e_decoy_attention_is_seeded() {
    let f = &*FIXTURE;
    let vocab = &f.vocab;
    let params_same = build_planted_model(&f.spec, vocab).unwrap();
    let mut reseeded_spec = f.spec.clone();
    reseeded_spec.decoy_seed ^= 0x5eed;
    let params_reseeded = build_planted_model(&reseeded_spec, vocab).unwrap();

    let inst = &f.misaligned[0];
    let (_, cap_a) = forward(&f.params, &inst.prompt_tokens, None).unwrap();
    let (_, cap_b) = forward(&params_same, &inst.prompt_tokens, None).unwrap();
    let (_, cap_c) = forward(&params_reseeded, &inst.prompt_tokens, None).unwrap();

    let reserved = |l: usize, h: usize| {
        (l == 0 && h < 4)
            || (l == f.spec.layers - 1 && h == f.spec.heads - 1)
            || f.spec.copy_heads.contains(&HeadId::new(l, h))
    };
    let mut any_differs = false;
    for l in 0..f.spec.layers {
        for h in 0..f.spec.heads {
            if reserved(l, h) {
                continue;
            }
            // same seed: bitwise identical attention
            for (x, y) in cap_a.attn(l, h).iter().zip(cap_b.attn(l, h).iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            // decoys carry no value signal
            assert!(cap_a.head_out(l, h).iter().all(|&v| v == 0.0));
            if cap_a
                .attn(l, h)
                .iter()
                .zip(cap_c.attn(l, h).iter())
                .any(|(x, y)| x != y)
            {
                any_differs = true;
            }
        }
    }
    assert!(any_differs, "reseeding should move decoy attention");
}

#[test]
fn plan_locality_untargeted_heads_are_bitwise_stable() {
    let f = &*FIXTURE;
    let plan = full_plan(f);
    let inst = &f.misaligned[3];
    let (_, base) = forward(&f.params, &inst.prompt_tokens, None).unwrap();
    let (_, ablated) = forward(&f.params, &inst.prompt_tokens, Some(&plan)).unwrap();
    for l in 0..f.params.layers() {
        for h in 0..f.params.heads() {
            if f.spec.copy_heads.contains(&HeadId::new(l, h)) {
                continue;
            }
            let a = base.head_out(l, h);
            let b = ablated.head_out(l, h);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "L{l}H{h} drifted");
            }
        }
    }
}

#[test]
fn generation_is_deterministic_across_runs() {
    let f = &*FIXTURE;
    let inst = &f.misaligned[7];
    let a = generate(&f.params, &f.vocab, &inst.prompt_tokens, None, 75).unwrap();
    let b = generate(&f.params, &f.vocab, &inst.prompt_tokens, None, 75).unwrap();
    assert_eq!(a, b);
}

#[test]
fn spec_level_examples() {
    let f = &*FIXTURE;
    let vocab = &f.vocab;
    let obj = vocab.id("cats").unwrap();
    let red = vocab.id("red").unwrap();

    // baseline N=2 answers the digit 2, and p(2) > p(3)
    let two = generate_scene(4, obj, red, 2, 3).unwrap();
    let base = baseline_prompt(&two, Task::Count, "x", vocab);
    let (_, e) = run_instance(&f.params, vocab, &base, None, opts()).unwrap();
    assert_eq!(e.unwrap().value, Value::Count(2));
    let dist = next_token_distribution(&f.params, &base.prompt_tokens, None).unwrap();
    assert!(dist[vocab.digit_token(2)] > dist[vocab.digit_token(3)]);
    assert!((dist.sum() - 1.0).abs() < 1e-9);

    // copy regime: N=5 prompted 7 answers "7"; ablated answers five
    let five = generate_scene(4, obj, red, 5, 4).unwrap();
    let mis = misaligned_count_prompt(&five, 2, "y", vocab).unwrap();
    let (resp, e) = run_instance(&f.params, vocab, &mis, None, opts()).unwrap();
    assert_eq!(e.unwrap().value, Value::Count(7));
    assert!(resp
        .assistant_ids()
        .contains(&vocab.digit_token(7)));
    let plan = full_plan(f);
    let (_, e) = run_instance(&f.params, vocab, &mis, Some(&plan), opts()).unwrap();
    assert_eq!(e.unwrap().value, Value::Count(5));
}

#[test]
fn color_task_contracts() {
    let f = &*FIXTURE;
    let vocab = &f.vocab;
    let wheel = ColorWheel::standard(vocab);
    let plan = full_plan(f);
    let scenes = synthetic_scenes(vocab, &[], 16, 2, 9, f.spec.grid, true, 23);
    for (id, scene) in &scenes {
        let base = baseline_prompt(scene, Task::Color, id, vocab);
        let (_, e) = run_instance(&f.params, vocab, &base, None, opts()).unwrap();
        assert_eq!(e.unwrap().value, base.true_value(), "baseline color {id}");

        for k in [1, 2, 3] {
            let mis = misaligned_color_prompt(scene, &wheel, k, id, vocab).unwrap();
            let (_, before) = run_instance(&f.params, vocab, &mis, None, opts()).unwrap();
            assert_eq!(
                before.map(|e| e.value),
                mis.prompted_value,
                "color copy {id} k{k}"
            );
            // prompted color arrives attributively, like the prompt
            assert_eq!(before.unwrap().surface, Surface::Attributive);
            let (_, after) = run_instance(&f.params, vocab, &mis, Some(&plan), opts()).unwrap();
            assert_eq!(
                after.map(|e| e.value),
                Some(mis.true_value()),
                "color correction {id} k{k}"
            );
        }
    }
}

#[test]
fn analytics_probes_on_the_planted_model() {
    let f = &*FIXTURE;
    let vocab = &f.vocab;
    let plan = full_plan(f);
    let opts = opts();

    // a copying instance deep in the copy regime
    let inst = f
        .misaligned
        .iter()
        .find(|i| i.n == 7 && i.k == 2)
        .unwrap();

    // knockout probability impact: empty plan is the identity, the copy
    // plan moves probability onto the word form of the true count
    let empty = AblationPlan::empty();
    let noop = knockout_prob_impact(&f.params, vocab, inst, &empty).unwrap();
    assert_eq!(noop.digit_before.to_bits(), noop.digit_after.to_bits());
    assert_eq!(noop.word_before.to_bits(), noop.word_after.to_bits());
    let impact = knockout_prob_impact(&f.params, vocab, inst, &plan).unwrap();
    assert!(impact.word_delta() > 0.5, "word delta {}", impact.word_delta());
    assert!(
        impact.digit_before + impact.word_before
            < impact.digit_after + impact.word_after,
        "true-count probability should rise under the plan"
    );

    // attention mass rises toward the image at some layer after ablation,
    // with the shift concentrated in the rebalancing layer
    let full_before = generate(&f.params, vocab, &inst.prompt_tokens, None, opts.max_new).unwrap();
    let (_, cap_before) = forward(&f.params, &full_before, None).unwrap();
    let before = attention_mass(&cap_before, full_before.roles()).unwrap();
    let full_after =
        generate(&f.params, vocab, &inst.prompt_tokens, Some(&plan), opts.max_new).unwrap();
    let (_, cap_after) = forward(&f.params, &full_after, Some(&plan)).unwrap();
    let after = attention_mass(&cap_after, full_after.roles()).unwrap();
    let delta = mass_delta(&before, &after).unwrap();
    assert!(delta.argmax_delta > 0.0, "delta {:?}", delta.delta);
    assert_eq!(delta.argmax_layer, f.params.layers() - 1);

    // base probabilities: the true count dominates its offsets and the
    // reported candidates stay within one unit of probability mass
    let baseline = baseline_prompt(&inst.scene, Task::Count, &inst.sample_id, vocab);
    let profile = base_prob_profile(&f.params, vocab, &baseline, &[1, 2, 3, 4, 5]).unwrap();
    let mut candidate_mass = profile.p_true;
    for (k, p) in &profile.p_offsets {
        assert!(profile.p_true > *p, "p(N) should beat p(N+{k})");
        assert!((0.0..=1.0).contains(p));
        candidate_mass += p;
    }
    assert!(candidate_mass <= 1.0 + 1e-9);
    assert!(matches!(
        base_prob_profile(&f.params, vocab, &baseline, &[95]),
        Err(AnalyticsError::CandidateOverflow(_))
    ));

    // a degenerate all-zero model spreads mass uniformly
    let uniform = ModelParams::zeros(ModelDims {
        layers: 1,
        heads: 2,
        d_model: 8,
        vocab: vocab.len(),
        max_seq: 128,
    });
    let profile = base_prob_profile(&uniform, vocab, &baseline, &[1, 2]).unwrap();
    let expected = 1.0 / vocab.len() as f64;
    assert!((profile.p_true - expected).abs() < 1e-12);
    for (_, p) in &profile.p_offsets {
        assert!((p - expected).abs() < 1e-12);
    }
}

#[test]
fn baseline_filter_retains_everything_on_the_planted_model() {
    let f = &*FIXTURE;
    let outcome = baseline_filter(&f.params, &f.vocab, &f.baselines, opts()).unwrap();
    assert_eq!(outcome.retained.len(), f.baselines.len());
    assert!(outcome.log.iter().all(|r| r.passed));
}

#[test]
fn baseline_filter_on_a_constant_model_keeps_matching_counts() {
    use pih_core::model::{HeadWeights, LayerWeights};

    let f = &*FIXTURE;
    let vocab = &f.vocab;
    // a degenerate model whose every next-token distribution peaks at "7"
    let dims = ModelDims {
        layers: 1,
        heads: 2,
        d_model: 8,
        vocab: vocab.len(),
        max_seq: 128,
    };
    let blocks = vec![LayerWeights {
        heads: (0..2)
            .map(|_| HeadWeights {
                w_q: ndarray::Array2::zeros((8, 4)),
                w_k: ndarray::Array2::zeros((8, 4)),
                w_v: ndarray::Array2::zeros((8, 4)),
            })
            .collect(),
        w_o: ndarray::Array2::zeros((8, 8)),
        ff_w1: ndarray::Array2::zeros((8, 4)),
        ff_b1: ndarray::Array1::zeros(4),
        ff_w2: ndarray::Array2::zeros((4, 8)),
        ff_b2: ndarray::Array1::zeros(8),
    }];
    let mut embed = ndarray::Array2::zeros((vocab.len(), 8));
    for id in 0..vocab.len() {
        embed[[id, 0]] = 1.0;
    }
    let mut w_out = ndarray::Array2::zeros((8, vocab.len()));
    w_out[[0, vocab.digit_token(7)]] = 5.0;
    let constant =
        ModelParams::new(dims, embed, ndarray::Array2::zeros((128, 8)), blocks, w_out).unwrap();

    let outcome = baseline_filter(&constant, vocab, &f.baselines, opts()).unwrap();
    for record in &outcome.log {
        assert_eq!(record.passed, record.expected == Value::Count(7));
    }
    // empty input gives empty output
    let empty = baseline_filter(&constant, vocab, &[], opts()).unwrap();
    assert!(empty.retained.is_empty() && empty.log.is_empty());
}
