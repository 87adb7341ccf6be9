//! Analytic construction of a toy multimodal model with known
//! prompt-copying heads.
//!
//! The construction works entirely through named residual channels:
//!
//! * Two duplicated layer-0 "image reader" heads attend uniformly over the
//!   image pads and write per-color occupancy fractions; the layer-0
//!   feed-forward combines the duplicates with an elementwise max, so a
//!   mean ablation of either single head leaves the count pathway intact.
//! * Two duplicated layer-0 "prompt scan" heads attend uniformly over the
//!   prompt words and expose which template/value classes are present plus
//!   the object identity, max-combined the same way.
//! * The layer-1 feed-forward discretizes the occupancy sum into a
//!   triangle basis over integer counts and thresholds the scan fractions
//!   into presence gates; the layer-2 feed-forward opens task-conditional
//!   answer channels (digit answers for the counting question, word
//!   answers for misaligned counting prompts, color answers for the color
//!   task, object word for the follow-up token).
//! * The configured copy heads attend from the answer position to any
//!   digit or color token in the prompt and transport its identity
//!   (tens/units one-hots for digits, palette one-hot for colors) straight
//!   to the readout with a gain that dominates the grounded answers. A
//!   mean ablation dilutes that signal by the sequence length, letting the
//!   grounded pathway win.
//! * Answer gains fall with the object count, so small-count scenes resist
//!   misaligned prompts while large-count scenes copy them; this makes
//!   base probabilities informative rather than saturated.
//! * All remaining heads are decoys with seeded pseudo-random attention
//!   over class features and zero value projections, except the last-layer
//!   rebalancing head, which shifts attention onto the image pads exactly
//!   when the copied-identity channels are quiet.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::intervention::HeadId;
use crate::model::params::{HeadWeights, LayerWeights, ModelDims, ModelError, ModelParams};
use crate::vocab::{TokenClass, Vocabulary, PALETTE_SIZE};

/// Dimensions and head placement for a planted model.
#[derive(Debug, Clone)]
pub struct PlantedSpec {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Largest count the grounded pathway can discretize (at most 9).
    pub max_count: usize,
    pub copy_heads: BTreeSet<HeadId>,
    pub grid: usize,
    pub decoy_seed: u64,
}

impl PlantedSpec {
    /// The configuration used throughout the test harnesses.
    pub fn standard() -> Self {
        Self {
            layers: 4,
            heads: 8,
            d_model: 256,
            max_count: 9,
            copy_heads: [HeadId::new(0, 6), HeadId::new(1, 2), HeadId::new(2, 5)]
                .into_iter()
                .collect(),
            grid: 4,
            decoy_seed: 0xDEC0,
        }
    }
}

mod gain {
    /// Attention logit on a head's target keys.
    pub const KEY: f64 = 34.0;
    /// Attention logit on the sink position (the image-open boundary).
    pub const SINK: f64 = 14.0;
    /// Presence threshold scale for prompt-scan fractions.
    pub const SCAN_CLAMP: f64 = 24.0;
    /// Readout gain per copied tens/units channel (digit total is twice this).
    pub const COPY_DIGIT: f64 = 8.0;
    /// Readout gain for the copied color channel.
    pub const COPY_COLOR: f64 = 14.0;
    /// Baseline digit answer: BASE - SLOPE * count.
    pub const DIGIT_BASE: f64 = 10.0;
    pub const DIGIT_SLOPE: f64 = 0.8;
    /// Probability spread onto neighboring counts under the baseline prompt.
    pub const NEIGHBOR_BUMP: f64 = 2.0;
    /// Extra pull toward prompts that are one off the true count.
    pub const PROX_BUMP: f64 = 2.0;
    /// Grounded word answer under misaligned prompts: BASE - SLOPE * count.
    pub const WORD_BASE: f64 = 24.0;
    pub const WORD_SLOPE: f64 = 1.9;
    /// Grounded color answer.
    pub const COLOR_ANS: f64 = 8.0;
    /// Object word follow-up.
    pub const OBJECT: f64 = 40.0;
    /// End-of-sequence trigger once the object word is out.
    pub const EOS: f64 = 100.0;
    /// Rebalancing head: pad logit, copied-signal suppression, self anchor.
    pub const REBALANCE_PAD: f64 = 8.0;
    pub const REBALANCE_SUPPRESS: f64 = 8.0;
    pub const REBALANCE_SELF: f64 = 4.0;
}

/// Width of the copied-identity code: digit tens + digit units + palette.
const COPY_WIDTH: usize = 10 + 10 + PALETTE_SIZE;
/// Count range the triangle basis discretizes.
const N_HATS: usize = 10;

/// Named residual channel layout.
struct Channels {
    konst: usize,
    is_img_open: usize,
    is_pad: usize,
    is_digit: usize,
    is_numberword: usize,
    is_colorword: usize,
    is_objectword: usize,
    is_assistant: usize,
    is_many: usize,
    is_color_kw: usize,
    is_textword: usize,
    pad_color: usize,
    digit_tens: usize,
    digit_units: usize,
    color_id: usize,
    object_id: usize,
    img_raw_a: usize,
    img_raw_b: usize,
    scan_raw_a: usize,
    scan_raw_b: usize,
    img_max: usize,
    scan_max: usize,
    has_many: usize,
    has_color_kw: usize,
    has_digit: usize,
    has_colorword: usize,
    hat: usize,
    hat2: usize,
    digit_ans: usize,
    word_ans: usize,
    color_ans: usize,
    obj_ans: usize,
    copied_tens: usize,
    copied_units: usize,
    copied_color: usize,
    total: usize,
    n_objects: usize,
}

impl Channels {
    fn new(n_objects: usize) -> Self {
        let scan_width = 4 + n_objects;
        let mut next = 0usize;
        let mut take = |width: usize| {
            let offset = next;
            next += width;
            offset
        };
        let konst = take(1);
        let is_img_open = take(1);
        let is_pad = take(1);
        let is_digit = take(1);
        let is_numberword = take(1);
        let is_colorword = take(1);
        let is_objectword = take(1);
        let is_assistant = take(1);
        let is_many = take(1);
        let is_color_kw = take(1);
        let is_textword = take(1);
        let pad_color = take(PALETTE_SIZE);
        let digit_tens = take(10);
        let digit_units = take(10);
        let color_id = take(PALETTE_SIZE);
        let object_id = take(n_objects);
        let img_raw_a = take(PALETTE_SIZE);
        let img_raw_b = take(PALETTE_SIZE);
        let scan_raw_a = take(scan_width);
        let scan_raw_b = take(scan_width);
        let img_max = take(PALETTE_SIZE);
        let scan_max = take(scan_width);
        let has_many = take(1);
        let has_color_kw = take(1);
        let has_digit = take(1);
        let has_colorword = take(1);
        let hat = take(N_HATS);
        let hat2 = take(N_HATS);
        let digit_ans = take(N_HATS);
        let word_ans = take(N_HATS);
        let color_ans = take(PALETTE_SIZE);
        let obj_ans = take(n_objects);
        let copied_tens = take(10);
        let copied_units = take(10);
        let copied_color = take(PALETTE_SIZE);
        let total = next;
        Self {
            konst,
            is_img_open,
            is_pad,
            is_digit,
            is_numberword,
            is_colorword,
            is_objectword,
            is_assistant,
            is_many,
            is_color_kw,
            is_textword,
            pad_color,
            digit_tens,
            digit_units,
            color_id,
            object_id,
            img_raw_a,
            img_raw_b,
            scan_raw_a,
            scan_raw_b,
            img_max,
            scan_max,
            has_many,
            has_color_kw,
            has_digit,
            has_colorword,
            hat,
            hat2,
            digit_ans,
            word_ans,
            color_ans,
            obj_ans,
            copied_tens,
            copied_units,
            copied_color,
            total,
            n_objects,
        }
    }

    fn scan_width(&self) -> usize {
        4 + self.n_objects
    }

    fn copied_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (self.copied_tens..self.copied_tens + 10)
            .chain(self.copied_units..self.copied_units + 10)
            .chain(self.copied_color..self.copied_color + PALETTE_SIZE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HeadKind {
    ImageReaderA,
    ImageReaderB,
    PromptScanA,
    PromptScanB,
    Copy,
    Rebalance,
    Decoy,
}

fn assign_heads(spec: &PlantedSpec) -> Result<Vec<Vec<HeadKind>>, ModelError> {
    let infeasible = |msg: String| Err(ModelError::ConstructionInfeasible(msg));
    if spec.layers < 3 {
        return infeasible(format!(
            "needs 3 layers to aggregate, discretize, and gate; got {}",
            spec.layers
        ));
    }
    if spec.heads < 5 {
        return infeasible(format!(
            "needs the 4 reserved layer-0 aggregation heads plus a rebalancing head; got {} heads",
            spec.heads
        ));
    }
    if spec.copy_heads.is_empty() {
        return infeasible("copy head set is empty".to_string());
    }
    if spec.copy_heads.len() >= spec.layers * spec.heads {
        return infeasible("copy head set must be a strict subset of all heads".to_string());
    }
    let mut kinds = vec![vec![HeadKind::Decoy; spec.heads]; spec.layers];
    kinds[0][0] = HeadKind::ImageReaderA;
    kinds[0][1] = HeadKind::ImageReaderB;
    kinds[0][2] = HeadKind::PromptScanA;
    kinds[0][3] = HeadKind::PromptScanB;
    kinds[spec.layers - 1][spec.heads - 1] = HeadKind::Rebalance;
    for id in &spec.copy_heads {
        if id.layer >= spec.layers || id.head >= spec.heads {
            return infeasible(format!(
                "copy head {id} outside the {}x{} head grid",
                spec.layers, spec.heads
            ));
        }
        if id.layer > spec.layers - 2 {
            return infeasible(format!(
                "copy head {id} must sit before the last layer so the rebalancing head sees it"
            ));
        }
        if kinds[id.layer][id.head] != HeadKind::Decoy {
            return infeasible(format!(
                "copy head {id} collides with a reserved aggregation head"
            ));
        }
        kinds[id.layer][id.head] = HeadKind::Copy;
    }
    Ok(kinds)
}

/// One hidden ReLU unit: inputs, bias, and output channel weights.
struct FfUnit {
    inputs: Vec<(usize, f64)>,
    bias: f64,
    outputs: Vec<(usize, f64)>,
}

fn materialize_ff(units: &[FfUnit], d_model: usize, d_ff: usize) -> (Array2<f64>, ndarray::Array1<f64>, Array2<f64>) {
    assert!(
        units.len() <= d_ff,
        "feed-forward stage needs {} units but d_ff is {d_ff}",
        units.len()
    );
    let mut w1 = Array2::zeros((d_model, d_ff));
    let mut b1 = ndarray::Array1::zeros(d_ff);
    let mut w2 = Array2::zeros((d_ff, d_model));
    for (u, unit) in units.iter().enumerate() {
        for &(ch, w) in &unit.inputs {
            w1[[ch, u]] = w;
        }
        b1[u] = unit.bias;
        for &(ch, w) in &unit.outputs {
            w2[[u, ch]] = w;
        }
    }
    (w1, b1, w2)
}

struct HeadBuild {
    weights: HeadWeights,
    /// (value dim, target channel, weight) routes for the layer projection.
    out_routes: Vec<(usize, usize, f64)>,
}

fn empty_head(d_model: usize, d_head: usize) -> HeadBuild {
    HeadBuild {
        weights: HeadWeights {
            w_q: Array2::zeros((d_model, d_head)),
            w_k: Array2::zeros((d_model, d_head)),
            w_v: Array2::zeros((d_model, d_head)),
        },
        out_routes: Vec::new(),
    }
}

fn build_head(
    kind: HeadKind,
    ch: &Channels,
    d_model: usize,
    d_head: usize,
    n_copy: usize,
    decoy_rng: &mut ChaCha8Rng,
) -> HeadBuild {
    let sq = (d_head as f64).sqrt();
    let mut b = empty_head(d_model, d_head);
    let sink = |b: &mut HeadBuild| {
        b.weights.w_q[[ch.konst, 1]] = 1.0;
        b.weights.w_k[[ch.is_img_open, 1]] = gain::SINK * sq;
    };
    match kind {
        HeadKind::ImageReaderA | HeadKind::ImageReaderB => {
            b.weights.w_q[[ch.is_assistant, 0]] = 1.0;
            b.weights.w_k[[ch.is_pad, 0]] = gain::KEY * sq;
            sink(&mut b);
            for c in 0..PALETTE_SIZE {
                b.weights.w_v[[ch.pad_color + c, c]] = 1.0;
            }
            let base = if kind == HeadKind::ImageReaderA {
                ch.img_raw_a
            } else {
                ch.img_raw_b
            };
            for c in 0..PALETTE_SIZE {
                b.out_routes.push((c, base + c, 1.0));
            }
        }
        HeadKind::PromptScanA | HeadKind::PromptScanB => {
            for gate in [ch.is_assistant, ch.is_digit, ch.is_numberword, ch.is_colorword] {
                b.weights.w_q[[gate, 0]] = 1.0;
            }
            for key in [
                ch.is_textword,
                ch.is_digit,
                ch.is_numberword,
                ch.is_colorword,
                ch.is_objectword,
            ] {
                b.weights.w_k[[key, 0]] = gain::KEY * sq;
            }
            sink(&mut b);
            b.weights.w_v[[ch.is_many, 0]] = 1.0;
            b.weights.w_v[[ch.is_color_kw, 1]] = 1.0;
            b.weights.w_v[[ch.is_digit, 2]] = 1.0;
            b.weights.w_v[[ch.is_colorword, 3]] = 1.0;
            for o in 0..ch.n_objects {
                b.weights.w_v[[ch.object_id + o, 4 + o]] = 1.0;
            }
            let base = if kind == HeadKind::PromptScanA {
                ch.scan_raw_a
            } else {
                ch.scan_raw_b
            };
            for i in 0..ch.scan_width() {
                b.out_routes.push((i, base + i, 1.0));
            }
        }
        HeadKind::Copy => {
            for gate in [
                ch.is_assistant,
                ch.is_digit,
                ch.is_numberword,
                ch.is_colorword,
                ch.is_objectword,
            ] {
                b.weights.w_q[[gate, 0]] = 1.0;
            }
            b.weights.w_k[[ch.is_digit, 0]] = gain::KEY * sq;
            b.weights.w_k[[ch.is_colorword, 0]] = gain::KEY * sq;
            sink(&mut b);
            let share = 1.0 / n_copy as f64;
            for i in 0..10 {
                b.weights.w_v[[ch.digit_tens + i, i]] = 1.0;
                b.out_routes.push((i, ch.copied_tens + i, share));
            }
            for i in 0..10 {
                b.weights.w_v[[ch.digit_units + i, 10 + i]] = 1.0;
                b.out_routes.push((10 + i, ch.copied_units + i, share));
            }
            for i in 0..PALETTE_SIZE {
                b.weights.w_v[[ch.color_id + i, 20 + i]] = 1.0;
                b.out_routes.push((20 + i, ch.copied_color + i, share));
            }
        }
        HeadKind::Rebalance => {
            for c in ch.copied_channels() {
                b.weights.w_q[[c, 0]] = 1.0;
            }
            b.weights.w_k[[ch.is_pad, 0]] = -gain::REBALANCE_SUPPRESS * sq;
            for gate in [
                ch.is_assistant,
                ch.is_digit,
                ch.is_numberword,
                ch.is_colorword,
                ch.is_objectword,
            ] {
                b.weights.w_q[[gate, 1]] = 1.0;
            }
            b.weights.w_k[[ch.is_pad, 1]] = gain::REBALANCE_PAD * sq;
            b.weights.w_k[[ch.is_assistant, 1]] = gain::REBALANCE_SELF * sq;
        }
        HeadKind::Decoy => {
            // class-level features only, so the attention pattern does not
            // depend on which digit/word/color a position holds
            let features = [
                ch.konst,
                ch.is_img_open,
                ch.is_pad,
                ch.is_textword,
                ch.is_objectword,
                ch.is_assistant,
            ];
            for dim in 0..4 {
                for &f in &features {
                    b.weights.w_q[[f, dim]] = decoy_rng.random_range(-0.8..0.8);
                    b.weights.w_k[[f, dim]] = decoy_rng.random_range(-0.8..0.8);
                }
            }
        }
    }
    b
}

fn embed_tokens(vocab: &Vocabulary, ch: &Channels, d_model: usize) -> Array2<f64> {
    let mut embed = Array2::zeros((vocab.len(), d_model));
    for id in 0..vocab.len() {
        embed[[id, ch.konst]] = 1.0;
        match vocab.class(id) {
            TokenClass::ImagePad => {
                embed[[id, ch.is_pad]] = 1.0;
                if let Some(c) = vocab.pad_color(id) {
                    embed[[id, ch.pad_color + c]] = 1.0;
                }
            }
            TokenClass::ImageBoundary => {
                if id == vocab.img_open() {
                    embed[[id, ch.is_img_open]] = 1.0;
                }
            }
            TokenClass::DigitNumeral => {
                embed[[id, ch.is_digit]] = 1.0;
                let n = vocab.numeral_value(id).expect("digit value") as usize;
                embed[[id, ch.digit_tens + n / 10]] = 1.0;
                embed[[id, ch.digit_units + n % 10]] = 1.0;
            }
            TokenClass::NumberWord => {
                embed[[id, ch.is_numberword]] = 1.0;
            }
            TokenClass::ColorWord => {
                embed[[id, ch.is_colorword]] = 1.0;
                let c = vocab.color_index(id).expect("palette index");
                embed[[id, ch.color_id + c]] = 1.0;
            }
            TokenClass::ObjectWord => {
                embed[[id, ch.is_objectword]] = 1.0;
                let o = vocab.object_index(id).expect("object index");
                embed[[id, ch.object_id + o]] = 1.0;
            }
            TokenClass::TextWord => {
                embed[[id, ch.is_textword]] = 1.0;
                if vocab.id("many") == Some(id) {
                    embed[[id, ch.is_many]] = 1.0;
                }
                if vocab.id("color") == Some(id) {
                    embed[[id, ch.is_color_kw]] = 1.0;
                }
            }
            TokenClass::Control => {
                if id == vocab.assistant() {
                    embed[[id, ch.is_assistant]] = 1.0;
                }
            }
        }
    }
    embed
}

fn ff_stage_units(stage: usize, ch: &Channels, grid: usize) -> Vec<FfUnit> {
    let g2 = (grid * grid) as f64;
    let mut units = Vec::new();
    match stage {
        // layer 0: elementwise max over the duplicated head outputs
        0 => {
            let mut max_pair = |a: usize, b: usize, out: usize, width: usize| {
                for i in 0..width {
                    units.push(FfUnit {
                        inputs: vec![(b + i, 1.0)],
                        bias: 0.0,
                        outputs: vec![(out + i, 1.0)],
                    });
                    units.push(FfUnit {
                        inputs: vec![(a + i, 1.0), (b + i, -1.0)],
                        bias: 0.0,
                        outputs: vec![(out + i, 1.0)],
                    });
                }
            };
            max_pair(ch.img_raw_a, ch.img_raw_b, ch.img_max, PALETTE_SIZE);
            max_pair(ch.scan_raw_a, ch.scan_raw_b, ch.scan_max, ch.scan_width());
        }
        // layer 1: presence thresholds, object gate, and the count triangle grid
        1 => {
            let has = [
                (0, ch.has_many),
                (1, ch.has_color_kw),
                (2, ch.has_digit),
                (3, ch.has_colorword),
            ];
            for (slot, out) in has {
                units.push(FfUnit {
                    inputs: vec![(ch.scan_max + slot, gain::SCAN_CLAMP)],
                    bias: 0.0,
                    outputs: vec![(out, 1.0)],
                });
                units.push(FfUnit {
                    inputs: vec![(ch.scan_max + slot, gain::SCAN_CLAMP)],
                    bias: -1.0,
                    outputs: vec![(out, -1.0)],
                });
            }
            // object answer: clamp(scan fraction) gated on the current token
            // being a value word, in one fused pair of units
            for o in 0..ch.n_objects {
                let scan = ch.scan_max + 4 + o;
                units.push(FfUnit {
                    inputs: vec![
                        (scan, gain::SCAN_CLAMP),
                        (ch.is_digit, 1.0),
                        (ch.is_numberword, 1.0),
                        (ch.is_colorword, 1.0),
                    ],
                    bias: -1.0,
                    outputs: vec![(ch.obj_ans + o, gain::OBJECT)],
                });
                units.push(FfUnit {
                    inputs: vec![(scan, gain::SCAN_CLAMP)],
                    bias: -1.0,
                    outputs: vec![(ch.obj_ans + o, -gain::OBJECT)],
                });
            }
            // triangle grid over the estimated count: r_j = relu(n_hat - j)
            let count_inputs: Vec<(usize, f64)> =
                (0..PALETTE_SIZE).map(|c| (ch.img_max + c, g2)).collect();
            for j in -2i64..=(N_HATS as i64 + 1) {
                let mut outputs = Vec::new();
                let mut hat_out = |d: i64, w: f64, base: usize| {
                    if (0..N_HATS as i64).contains(&d) {
                        outputs.push((base + d as usize, w));
                    }
                };
                // narrow hats: hat_d = r_{d-1} - 2 r_d + r_{d+1}
                hat_out(j + 1, 1.0, ch.hat);
                hat_out(j, -2.0, ch.hat);
                hat_out(j - 1, 1.0, ch.hat);
                // wide hats: hat2_d = (r_{d-2} - 2 r_d + r_{d+2}) / 2
                hat_out(j + 2, 0.5, ch.hat2);
                hat_out(j, -1.0, ch.hat2);
                hat_out(j - 2, 0.5, ch.hat2);
                units.push(FfUnit {
                    inputs: count_inputs.clone(),
                    bias: -(j as f64),
                    outputs,
                });
            }
        }
        // layer 2: task-conditional answer gates
        2 => {
            for d in 0..N_HATS {
                units.push(FfUnit {
                    inputs: vec![(ch.hat + d, 1.0), (ch.has_many, 1.0)],
                    bias: -1.0,
                    outputs: vec![(
                        ch.digit_ans + d,
                        gain::DIGIT_BASE - gain::DIGIT_SLOPE * d as f64,
                    )],
                });
                units.push(FfUnit {
                    inputs: vec![(ch.hat2 + d, 1.0), (ch.has_many, 1.0)],
                    bias: -1.0,
                    outputs: vec![(ch.digit_ans + d, gain::NEIGHBOR_BUMP)],
                });
                units.push(FfUnit {
                    inputs: vec![(ch.hat2 + d, 1.0), (ch.has_digit, 1.0)],
                    bias: -1.0,
                    outputs: vec![(ch.digit_ans + d, gain::PROX_BUMP)],
                });
                units.push(FfUnit {
                    inputs: vec![(ch.hat + d, 1.0), (ch.has_digit, 1.0)],
                    bias: -1.0,
                    outputs: vec![(
                        ch.word_ans + d,
                        gain::WORD_BASE - gain::WORD_SLOPE * d as f64,
                    )],
                });
            }
            // color answers: clamp(g^2 * occupancy) gated on either the
            // baseline color question or a misaligned color prompt
            for c in 0..PALETTE_SIZE {
                let z = (ch.img_max + c, g2);
                units.push(FfUnit {
                    inputs: vec![z, (ch.has_color_kw, 1.0)],
                    bias: -1.0,
                    outputs: vec![(ch.color_ans + c, gain::COLOR_ANS)],
                });
                units.push(FfUnit {
                    inputs: vec![z, (ch.has_colorword, 1.0)],
                    bias: -1.0,
                    outputs: vec![(ch.color_ans + c, gain::COLOR_ANS)],
                });
                units.push(FfUnit {
                    inputs: vec![z],
                    bias: -1.0,
                    outputs: vec![(ch.color_ans + c, -2.0 * gain::COLOR_ANS)],
                });
            }
        }
        _ => {}
    }
    units
}

fn readout(vocab: &Vocabulary, ch: &Channels, d_model: usize) -> Array2<f64> {
    let mut w_out = Array2::zeros((d_model, vocab.len()));
    for n in 0..=99usize {
        let digit = vocab.digit_token(n as u8);
        if n < N_HATS {
            w_out[[ch.digit_ans + n, digit]] = 1.0;
            w_out[[ch.word_ans + n, vocab.word_token(n as u8)]] = 1.0;
        }
        w_out[[ch.copied_tens + n / 10, digit]] += gain::COPY_DIGIT;
        w_out[[ch.copied_units + n % 10, digit]] += gain::COPY_DIGIT;
    }
    for c in 0..PALETTE_SIZE {
        let color = vocab.color_token(c);
        w_out[[ch.color_ans + c, color]] = 1.0;
        w_out[[ch.copied_color + c, color]] += gain::COPY_COLOR;
    }
    for o in 0..ch.n_objects {
        w_out[[ch.obj_ans + o, vocab.object_token(o)]] = 1.0;
    }
    w_out[[ch.is_objectword, vocab.eos()]] = gain::EOS;
    w_out
}

/// Builds parameters satisfying the planted behavioral contract.
pub fn build_planted_model(
    spec: &PlantedSpec,
    vocab: &Vocabulary,
) -> Result<ModelParams, ModelError> {
    let infeasible = |msg: String| ModelError::ConstructionInfeasible(msg);
    let ch = Channels::new(vocab.n_objects());
    if spec.heads == 0 || spec.d_model % spec.heads != 0 {
        return Err(infeasible(format!(
            "d_model {} is not divisible by {} heads",
            spec.d_model, spec.heads
        )));
    }
    if spec.d_model % 2 != 0 {
        return Err(infeasible(format!("d_model {} must be even", spec.d_model)));
    }
    let d_head = spec.d_model / spec.heads;
    if d_head < COPY_WIDTH {
        return Err(infeasible(format!(
            "head width {d_head} cannot carry the {COPY_WIDTH}-dim copied-identity code"
        )));
    }
    if spec.d_model < ch.total {
        return Err(infeasible(format!(
            "d_model {} below the {} named channels required",
            spec.d_model, ch.total
        )));
    }
    if spec.max_count == 0 || spec.max_count >= N_HATS {
        return Err(infeasible(format!(
            "max_count {} outside the discretizable range 1..={}",
            spec.max_count,
            N_HATS - 1
        )));
    }
    if spec.max_count > spec.grid * spec.grid {
        return Err(infeasible(format!(
            "max_count {} exceeds the {} grid cells",
            spec.max_count,
            spec.grid * spec.grid
        )));
    }
    let kinds = assign_heads(spec)?;

    let dims = ModelDims {
        layers: spec.layers,
        heads: spec.heads,
        d_model: spec.d_model,
        vocab: vocab.len(),
        max_seq: spec.grid * spec.grid + 88,
    };
    let d_ff = dims.d_ff();
    let n_copy = spec.copy_heads.len();

    let token_embed = embed_tokens(vocab, &ch, spec.d_model);
    let pos_embed = Array2::zeros((dims.max_seq, spec.d_model));

    let mut blocks = Vec::with_capacity(spec.layers);
    for (l, layer_kinds) in kinds.iter().enumerate() {
        let mut heads = Vec::with_capacity(spec.heads);
        let mut w_o = Array2::zeros((spec.d_model, spec.d_model));
        for (h, &kind) in layer_kinds.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(spec.decoy_seed ^ ((l as u64) << 32 | h as u64));
            let built = build_head(kind, &ch, spec.d_model, d_head, n_copy, &mut rng);
            for &(dim, channel, weight) in &built.out_routes {
                w_o[[h * d_head + dim, channel]] = weight;
            }
            heads.push(built.weights);
        }
        let units = ff_stage_units(l, &ch, spec.grid);
        if units.len() > d_ff {
            return Err(infeasible(format!(
                "feed-forward width {d_ff} below the {} units stage {l} needs",
                units.len()
            )));
        }
        let (ff_w1, ff_b1, ff_w2) = materialize_ff(&units, spec.d_model, d_ff);
        blocks.push(LayerWeights {
            heads,
            w_o,
            ff_w1,
            ff_b1,
            ff_w2,
            ff_b2: ndarray::Array1::zeros(spec.d_model),
        });
    }

    let w_out = readout(vocab, &ch, spec.d_model);
    ModelParams::new(dims, token_embed, pos_embed, blocks, w_out)
}
