//! Scratch probe for the planted construction. Prints greedy responses and
//! key probabilities across the (count, offset) grid.

use pih_core::*;

fn main() {
    let vocab = build_vocabulary();
    let spec = PlantedSpec::standard();
    let params = build_planted_model(&spec, &vocab).unwrap();
    let opts = EvalOptions::default();
    let plan = AblationPlan::new(spec.copy_heads.iter().copied());

    let obj = vocab.id("cats").unwrap();
    let red = vocab.id("red").unwrap();

    println!("== baseline count ==");
    for n in 1..=9 {
        let scene = generate_scene(4, obj, red, n, 7).unwrap();
        let inst = baseline_prompt(&scene, Task::Count, "b", &vocab);
        let (resp, ext) = run_instance(&params, &vocab, &inst, None, opts).unwrap();
        let dist = next_token_distribution(&params, &inst.prompt_tokens, None).unwrap();
        println!(
            "N={n}: {:?} ext={:?} p(N)={:.4} p(N+1)={:.5} p(N+2)={:.6}",
            vocab.detokenize(resp.assistant_ids()),
            ext.map(|e| e.value),
            dist[vocab.digit_token(n as u8)],
            dist[vocab.digit_token(n as u8 + 1)],
            dist[vocab.digit_token(n as u8 + 2)],
        );
    }

    println!("== misaligned count (before | after full ablation) ==");
    for n in 2..=9 {
        for k in [1, 2, 5] {
            let scene = generate_scene(4, obj, red, n, 7).unwrap();
            let inst = misaligned_count_prompt(&scene, k, "m", &vocab).unwrap();
            let (r0, e0) = run_instance(&params, &vocab, &inst, None, opts).unwrap();
            let (_, e1) = run_instance(&params, &vocab, &inst, Some(&plan), opts).unwrap();
            println!(
                "N={n} k={k}: {:?} -> before={:?} after={:?}",
                vocab.detokenize(r0.assistant_ids()),
                e0.map(|e| e.value),
                e1.map(|e| e.value),
            );
        }
    }

    println!("== single copy-head ablation flips ==");
    for head in &spec.copy_heads {
        let single = AblationPlan::new([*head]);
        let mut flips = 0;
        let mut pih = 0;
        for n in 2..=9 {
            for k in 1..=5 {
                let scene = generate_scene(4, obj, red, n, 7).unwrap();
                let inst = misaligned_count_prompt(&scene, k, "m", &vocab).unwrap();
                let (_, e0) = run_instance(&params, &vocab, &inst, None, opts).unwrap();
                if e0.map(|e| e.value) != inst.prompted_value {
                    continue;
                }
                pih += 1;
                let (_, e1) = run_instance(&params, &vocab, &inst, Some(&single), opts).unwrap();
                if e1.map(|e| e.value) == Some(inst.true_value()) {
                    flips += 1;
                }
            }
        }
        println!("{head}: {flips}/{pih}");
    }

    println!("== color task ==");
    let wheel = ColorWheel::standard(&vocab);
    for k in [1, 2, 3] {
        let scene = generate_scene(4, obj, red, 3, 7).unwrap();
        let base = baseline_prompt(&scene, Task::Color, "cb", &vocab);
        let (rb, eb) = run_instance(&params, &vocab, &base, None, opts).unwrap();
        let inst = misaligned_color_prompt(&scene, &wheel, k, "c", &vocab).unwrap();
        let (r0, e0) = run_instance(&params, &vocab, &inst, None, opts).unwrap();
        let (_, e1) = run_instance(&params, &vocab, &inst, Some(&plan), opts).unwrap();
        println!(
            "k={k}: baseline {:?} ext={:?} | mis {:?} before={:?} after={:?}",
            vocab.detokenize(rb.assistant_ids()),
            eb.map(|e| e.value),
            vocab.detokenize(r0.assistant_ids()),
            e0.map(|e| e.value),
            e1.map(|e| e.value),
        );
    }
}
