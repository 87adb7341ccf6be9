//! Full-sequence forward pass with per-head attention and output capture,
//! greedy generation, and next-token distributions.
//!
//! There is deliberately no key-value cache: every generation step re-runs
//! the whole forward pass so that the per-pass mean used by head ablation is
//! always taken over the current sequence length.

use ndarray::{Array1, Array2, Axis};

use crate::intervention::{mean_ablate, AblationPlan};
use crate::model::params::{ModelError, ModelParams};
use crate::seq::{Role, TokenSeq};
use crate::vocab::Vocabulary;

/// Per-head attention matrices and head outputs from one forward pass.
///
/// Attention is captured before any intervention; head outputs are captured
/// after (so an ablated head shows its substituted rows).
#[derive(Debug, Clone)]
pub struct AttentionCapture {
    layers: usize,
    heads: usize,
    t: usize,
    attn: Vec<Array2<f64>>,
    head_out: Vec<Array2<f64>>,
}

impl AttentionCapture {
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// T×T row-stochastic attention of head (layer, head).
    pub fn attn(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.attn[layer * self.heads + head]
    }

    /// T×d_head output of head (layer, head).
    pub fn head_out(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.head_out[layer * self.heads + head]
    }

    /// Builds a capture from raw matrices; used by analytics tests.
    pub fn from_parts(
        layers: usize,
        heads: usize,
        attn: Vec<Array2<f64>>,
        head_out: Vec<Array2<f64>>,
    ) -> Self {
        assert_eq!(attn.len(), layers * heads);
        assert_eq!(head_out.len(), layers * heads);
        let t = attn.first().map_or(0, |a| a.nrows());
        Self {
            layers,
            heads,
            t,
            attn,
            head_out,
        }
    }
}

fn validate_inputs(
    params: &ModelParams,
    seq: &TokenSeq,
    plan: Option<&AblationPlan>,
) -> Result<(), ModelError> {
    if seq.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if seq.len() > params.max_seq() {
        return Err(ModelError::SequenceTooLong {
            len: seq.len(),
            max: params.max_seq(),
        });
    }
    if let Some(&id) = seq.ids().iter().find(|&&id| id >= params.vocab_size()) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab: params.vocab_size(),
        });
    }
    if let Some(plan) = plan {
        for target in plan.targets() {
            if target.layer >= params.layers() || target.head >= params.heads() {
                return Err(ModelError::PlanTargetsOutOfRange {
                    layer: target.layer,
                    head: target.head,
                    layers: params.layers(),
                    heads: params.heads(),
                });
            }
        }
    }
    Ok(())
}

/// Row-wise stable softmax under a causal mask: entries with key > query get
/// probability exactly zero.
fn causal_softmax(scores: &mut Array2<f64>) {
    let t = scores.nrows();
    for q in 0..t {
        let mut row = scores.row_mut(q);
        let visible = q + 1;
        let mut max = f64::NEG_INFINITY;
        for k in 0..visible {
            max = max.max(row[k]);
        }
        let mut sum = 0.0;
        for k in 0..visible {
            let e = (row[k] - max).exp();
            row[k] = e;
            sum += e;
        }
        for k in 0..visible {
            row[k] /= sum;
        }
        for k in visible..t {
            row[k] = 0.0;
        }
    }
}

/// Runs the model over the whole sequence. Returns per-position logits
/// (T × vocab) and the attention/head-output capture.
pub fn forward(
    params: &ModelParams,
    seq: &TokenSeq,
    plan: Option<&AblationPlan>,
) -> Result<(Array2<f64>, AttentionCapture), ModelError> {
    validate_inputs(params, seq, plan)?;
    let t = seq.len();
    let d_model = params.d_model();
    let d_head = params.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut x = Array2::<f64>::zeros((t, d_model));
    for (pos, &id) in seq.ids().iter().enumerate() {
        let embed = params.token_embed.row(id);
        let pos_embed = params.pos_embed.row(pos);
        let mut row = x.row_mut(pos);
        for c in 0..d_model {
            row[c] = embed[c] + pos_embed[c];
        }
    }

    let mut attn_capture = Vec::with_capacity(params.layers() * params.heads());
    let mut out_capture = Vec::with_capacity(params.layers() * params.heads());

    for (l, block) in params.blocks.iter().enumerate() {
        let mut concat = Array2::<f64>::zeros((t, d_model));
        for (h, head) in block.heads.iter().enumerate() {
            let q = x.dot(&head.w_q);
            let k = x.dot(&head.w_k);
            let v = x.dot(&head.w_v);
            let mut scores = q.dot(&k.t());
            scores.mapv_inplace(|s| s * scale);
            causal_softmax(&mut scores);
            let mut head_out = scores.dot(&v);
            if plan.is_some_and(|p| p.contains(l, h)) {
                head_out = mean_ablate(&head_out)
                    .expect("forward sequences are non-empty")
                    .substituted;
            }
            concat
                .slice_mut(ndarray::s![.., h * d_head..(h + 1) * d_head])
                .assign(&head_out);
            attn_capture.push(scores);
            out_capture.push(head_out);
        }
        x = x + concat.dot(&block.w_o);
        let mut hidden = x.dot(&block.ff_w1) + &block.ff_b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        x = x + hidden.dot(&block.ff_w2) + &block.ff_b2;
    }

    let logits = x.dot(&params.w_out);
    let capture = AttentionCapture::from_parts(params.layers(), params.heads(), attn_capture, out_capture);
    Ok((logits, capture))
}

/// Softmax of the final-position logits.
pub fn next_token_distribution(
    params: &ModelParams,
    seq: &TokenSeq,
    plan: Option<&AblationPlan>,
) -> Result<Array1<f64>, ModelError> {
    let (logits, _) = forward(params, seq, plan)?;
    let last = logits.index_axis(Axis(0), logits.nrows() - 1);
    let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Array1<f64> = last.mapv(|v| (v - max).exp());
    let sum = probs.sum();
    probs.mapv_inplace(|p| p / sum);
    Ok(probs)
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Greedy decoding: appends assistant-role tokens until `<eos>` or the
/// `max_new` budget, re-running the full forward pass each step.
pub fn generate(
    params: &ModelParams,
    vocab: &Vocabulary,
    seq: &TokenSeq,
    plan: Option<&AblationPlan>,
    max_new: usize,
) -> Result<TokenSeq, ModelError> {
    if seq.len() + max_new > params.max_seq() {
        return Err(ModelError::SequenceTooLong {
            len: seq.len() + max_new,
            max: params.max_seq(),
        });
    }
    let mut seq = seq.clone();
    for _ in 0..max_new {
        let (logits, _) = forward(params, &seq, plan)?;
        let next = argmax(logits.row(logits.nrows() - 1));
        seq.push(next, Role::Assistant);
        if next == vocab.eos() {
            break;
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::HeadId;
    use crate::model::params::ModelDims;
    use crate::vocab::build_vocabulary;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            layers: 2,
            heads: 2,
            d_model: 16,
            vocab,
            max_seq: 24,
        }
    }

    fn toy_seq(len: usize, vocab: usize) -> TokenSeq {
        let ids: Vec<usize> = (0..len).map(|i| i % vocab).collect();
        let roles = vec![Role::Prompt; len];
        TokenSeq::try_new(ids, roles).unwrap()
    }

    #[test]
    fn attention_rows_are_causal_and_stochastic() {
        let params = ModelParams::random(dims(13), 5);
        let seq = toy_seq(9, 13);
        let (_, capture) = forward(&params, &seq, None).unwrap();
        for l in 0..2 {
            for h in 0..2 {
                let a = capture.attn(l, h);
                for q in 0..9 {
                    let sum: f64 = a.row(q).sum();
                    assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
                    for k in q + 1..9 {
                        assert_eq!(a[[q, k]], 0.0);
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        /// Causality and row normalization hold for arbitrary weights.
        #[test]
        fn capture_rows_are_stochastic_for_random_models(
            seed in 0u64..1000,
            layers in 1usize..=3,
            heads in 1usize..=4,
            len in 1usize..=12,
        ) {
            let d_model = heads * 4;
            let params = ModelParams::random(
                ModelDims { layers, heads, d_model, vocab: 17, max_seq: 16 },
                seed,
            );
            let seq = toy_seq(len, 17);
            let (_, capture) = forward(&params, &seq, None).unwrap();
            for l in 0..layers {
                for h in 0..heads {
                    let a = capture.attn(l, h);
                    for q in 0..len {
                        let sum: f64 = a.row(q).sum();
                        proptest::prop_assert!((sum - 1.0).abs() < 1e-6);
                        for k in q + 1..len {
                            proptest::prop_assert_eq!(a[[q, k]], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let params = ModelParams::random(dims(13), 6);
        let seq = toy_seq(7, 13);
        let (a, _) = forward(&params, &seq, None).unwrap();
        let (b, _) = forward(&params, &seq, None).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn empty_plan_matches_no_plan_bitwise() {
        let params = ModelParams::random(dims(13), 7);
        let seq = toy_seq(7, 13);
        let empty = AblationPlan::empty();
        let (a, _) = forward(&params, &seq, None).unwrap();
        let (b, _) = forward(&params, &seq, Some(&empty)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn plan_leaves_same_layer_heads_bitwise_equal() {
        let params = ModelParams::random(dims(13), 8);
        let seq = toy_seq(9, 13);
        let plan = AblationPlan::new([HeadId::new(1, 0)]);
        let (_, base) = forward(&params, &seq, None).unwrap();
        let (_, ablated) = forward(&params, &seq, Some(&plan)).unwrap();
        // heads in earlier layers and untargeted heads of the same layer
        for (l, h) in [(0, 0), (0, 1), (1, 1)] {
            let a = base.head_out(l, h);
            let b = ablated.head_out(l, h);
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "L{l}H{h} changed");
            }
        }
        // the targeted head's rows all equal its per-pass mean
        let target = ablated.head_out(1, 0);
        for q in 0..target.nrows() {
            for c in 0..target.ncols() {
                assert!((target[[q, c]] - target[[0, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors_on_bad_inputs() {
        let params = ModelParams::random(dims(13), 9);
        let long = toy_seq(25, 13);
        assert!(matches!(
            forward(&params, &long, None),
            Err(ModelError::SequenceTooLong { .. })
        ));
        assert!(matches!(
            forward(&params, &TokenSeq::empty(), None),
            Err(ModelError::EmptySequence)
        ));
        let plan = AblationPlan::new([HeadId::new(9, 0)]);
        let seq = toy_seq(4, 13);
        assert!(matches!(
            forward(&params, &seq, Some(&plan)),
            Err(ModelError::PlanTargetsOutOfRange { .. })
        ));
    }

    #[test]
    fn uniform_model_gives_uniform_distribution() {
        let vocab = build_vocabulary();
        let params = ModelParams::zeros(ModelDims {
            layers: 1,
            heads: 2,
            d_model: 8,
            vocab: vocab.len(),
            max_seq: 8,
        });
        let seq = TokenSeq::try_new(vec![0, 1, 2], vec![Role::Prompt; 3]).unwrap();
        let dist = next_token_distribution(&params, &seq, None).unwrap();
        let expected = 1.0 / vocab.len() as f64;
        for &p in dist.iter() {
            assert!((p - expected).abs() < 1e-12);
        }
        assert!((dist.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn generate_budget_and_zero_new() {
        let vocab = build_vocabulary();
        let params = ModelParams::random(
            ModelDims {
                layers: 1,
                heads: 2,
                d_model: 8,
                vocab: vocab.len(),
                max_seq: 16,
            },
            11,
        );
        let seq = TokenSeq::try_new(
            vec![vocab.id("the").unwrap(), vocab.assistant()],
            vec![Role::Prompt; 2],
        )
        .unwrap();
        let unchanged = generate(&params, &vocab, &seq, None, 0).unwrap();
        assert_eq!(unchanged, seq);
        let grown = generate(&params, &vocab, &seq, None, 5).unwrap();
        assert!(grown.len() > seq.len() && grown.len() <= seq.len() + 5);
        assert!(matches!(
            generate(&params, &vocab, &seq, None, 20),
            Err(ModelError::SequenceTooLong { .. })
        ));
    }
}
