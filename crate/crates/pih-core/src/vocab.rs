//! Fixed token vocabulary: digits 0-99, spelled-out number words, a 12-color
//! palette, object words, prompt template words, image pads, and control tokens.
//!
//! Every number has exactly one digit token and one (possibly hyphenated)
//! word token, so surface-form analysis is a single-token property.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub type TokenId = usize;

/// Number of colors in the palette.
pub const PALETTE_SIZE: usize = 12;
/// Leading slice of the palette that forms the cyclic hue wheel.
pub const HUE_WHEEL_SIZE: usize = 8;

pub const PALETTE: [&str; PALETTE_SIZE] = [
    "red", "orange", "yellow", "green", "cyan", "blue", "purple", "magenta", "pink", "brown",
    "gray", "black",
];

pub const OBJECT_WORDS: [&str; 10] = [
    "cats",
    "dogs",
    "waterlilies",
    "bananas",
    "cars",
    "forks",
    "bottles",
    "planes",
    "banana",
    "cat",
];

const TEMPLATE_WORDS: [&str; 30] = [
    "how", "many", "are", "there", "in", "the", "image", "describe", "what", "color", "is", "not",
    "no", "never", "without", "only", "a", "an", "and", "of", "on", "sits", "see", "i", "just",
    "them", "here", "?", ".", ",",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    ImagePad,
    ImageBoundary,
    TextWord,
    DigitNumeral,
    NumberWord,
    ColorWord,
    ObjectWord,
    Control,
}

/// Dense-id vocabulary with per-token class and numeric value maps.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<String>,
    type_of: Vec<TokenClass>,
    numeral_value: Vec<Option<u8>>,
    word_value: Vec<Option<u8>>,
    lookup: HashMap<String, TokenId>,
    digit_base: TokenId,
    word_base: TokenId,
    color_base: TokenId,
    object_base: TokenId,
    pad_background: TokenId,
    pad_color_base: TokenId,
    img_open: TokenId,
    img_close: TokenId,
    bos: TokenId,
    eos: TokenId,
    assistant: TokenId,
}

fn number_word(n: usize) -> String {
    const ONES: [&str; 20] = [
        "zero",
        "one",
        "two",
        "three",
        "four",
        "five",
        "six",
        "seven",
        "eight",
        "nine",
        "ten",
        "eleven",
        "twelve",
        "thirteen",
        "fourteen",
        "fifteen",
        "sixteen",
        "seventeen",
        "eighteen",
        "nineteen",
    ];
    const TENS: [&str; 8] = [
        "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
    ];
    if n < 20 {
        ONES[n].to_string()
    } else {
        let t = TENS[n / 10 - 2];
        if n % 10 == 0 {
            t.to_string()
        } else {
            format!("{}-{}", t, ONES[n % 10])
        }
    }
}

/// Builds the fixed vocabulary used by every component.
pub fn build_vocabulary() -> Vocabulary {
    let mut entries = Vec::new();
    let mut type_of = Vec::new();
    let mut numeral_value = Vec::new();
    let mut word_value = Vec::new();

    let push = |entries: &mut Vec<String>,
                    type_of: &mut Vec<TokenClass>,
                    numeral_value: &mut Vec<Option<u8>>,
                    word_value: &mut Vec<Option<u8>>,
                    text: String,
                    class: TokenClass,
                    nv: Option<u8>,
                    wv: Option<u8>|
     -> TokenId {
        let id = entries.len();
        entries.push(text);
        type_of.push(class);
        numeral_value.push(nv);
        word_value.push(wv);
        id
    };

    let digit_base = entries.len();
    for n in 0..=99u8 {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            n.to_string(),
            TokenClass::DigitNumeral,
            Some(n),
            None,
        );
    }
    let word_base = entries.len();
    for n in 0..=99u8 {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            number_word(n as usize),
            TokenClass::NumberWord,
            None,
            Some(n),
        );
    }
    let color_base = entries.len();
    for c in PALETTE {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            c.to_string(),
            TokenClass::ColorWord,
            None,
            None,
        );
    }
    let object_base = entries.len();
    for o in OBJECT_WORDS {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            o.to_string(),
            TokenClass::ObjectWord,
            None,
            None,
        );
    }
    for w in TEMPLATE_WORDS {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            w.to_string(),
            TokenClass::TextWord,
            None,
            None,
        );
    }
    let pad_background = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "<pad>".to_string(),
        TokenClass::ImagePad,
        None,
        None,
    );
    let pad_color_base = entries.len();
    for c in PALETTE {
        push(
            &mut entries,
            &mut type_of,
            &mut numeral_value,
            &mut word_value,
            format!("<pad:{}>", c),
            TokenClass::ImagePad,
            None,
            None,
        );
    }
    let img_open = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "<img>".to_string(),
        TokenClass::ImageBoundary,
        None,
        None,
    );
    let img_close = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "</img>".to_string(),
        TokenClass::ImageBoundary,
        None,
        None,
    );
    let bos = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "<bos>".to_string(),
        TokenClass::Control,
        None,
        None,
    );
    let eos = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "<eos>".to_string(),
        TokenClass::Control,
        None,
        None,
    );
    let assistant = push(
        &mut entries,
        &mut type_of,
        &mut numeral_value,
        &mut word_value,
        "<assistant>".to_string(),
        TokenClass::Control,
        None,
        None,
    );

    let lookup = entries
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();

    Vocabulary {
        entries,
        type_of,
        numeral_value,
        word_value,
        lookup,
        digit_base,
        word_base,
        color_base,
        object_base,
        pad_background,
        pad_color_base,
        img_open,
        img_close,
        bos,
        eos,
        assistant,
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.entries[id]
    }

    pub fn id(&self, text: &str) -> Option<TokenId> {
        self.lookup.get(text).copied()
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.type_of[id]
    }

    pub fn numeral_value(&self, id: TokenId) -> Option<u8> {
        self.numeral_value[id]
    }

    pub fn word_value(&self, id: TokenId) -> Option<u8> {
        self.word_value[id]
    }

    /// Numeric value of a token in either surface form.
    pub fn number_value(&self, id: TokenId) -> Option<u8> {
        self.numeral_value[id].or(self.word_value[id])
    }

    pub fn digit_token(&self, n: u8) -> TokenId {
        debug_assert!(n <= 99);
        self.digit_base + n as usize
    }

    pub fn word_token(&self, n: u8) -> TokenId {
        debug_assert!(n <= 99);
        self.word_base + n as usize
    }

    /// Palette index of a `ColorWord` token.
    pub fn color_index(&self, id: TokenId) -> Option<usize> {
        (self.type_of[id] == TokenClass::ColorWord).then(|| id - self.color_base)
    }

    pub fn color_token(&self, palette_index: usize) -> TokenId {
        debug_assert!(palette_index < PALETTE_SIZE);
        self.color_base + palette_index
    }

    pub fn object_index(&self, id: TokenId) -> Option<usize> {
        (self.type_of[id] == TokenClass::ObjectWord).then(|| id - self.object_base)
    }

    pub fn object_token(&self, object_index: usize) -> TokenId {
        debug_assert!(object_index < OBJECT_WORDS.len());
        self.object_base + object_index
    }

    pub fn n_objects(&self) -> usize {
        OBJECT_WORDS.len()
    }

    pub fn background_pad(&self) -> TokenId {
        self.pad_background
    }

    /// Pad token for a grid cell holding an object of the given color.
    pub fn object_pad(&self, palette_index: usize) -> TokenId {
        debug_assert!(palette_index < PALETTE_SIZE);
        self.pad_color_base + palette_index
    }

    /// Palette index encoded by an object-bearing pad token.
    pub fn pad_color(&self, id: TokenId) -> Option<usize> {
        (id >= self.pad_color_base && id < self.pad_color_base + PALETTE_SIZE)
            .then(|| id - self.pad_color_base)
    }

    pub fn img_open(&self) -> TokenId {
        self.img_open
    }

    pub fn img_close(&self) -> TokenId {
        self.img_close
    }

    pub fn bos(&self) -> TokenId {
        self.bos
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn assistant(&self) -> TokenId {
        self.assistant
    }

    /// Whitespace tokenization over known vocabulary entries.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, UnknownToken> {
        text.split_whitespace()
            .map(|w| {
                self.id(w).ok_or_else(|| UnknownToken {
                    token: w.to_string(),
                })
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.entries[id].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown token {token:?}")]
pub struct UnknownToken {
    pub token: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_and_numeral_values() {
        let v = build_vocabulary();
        assert_eq!(v.word_value(v.id("three").unwrap()), Some(3));
        assert_eq!(v.numeral_value(v.id("59").unwrap()), Some(59));
        assert_eq!(v.token(v.word_token(59)), "fifty-nine");
    }

    #[test]
    fn every_number_has_both_forms() {
        let v = build_vocabulary();
        for n in 0..=99u8 {
            let d = v.digit_token(n);
            let w = v.word_token(n);
            assert_eq!(v.class(d), TokenClass::DigitNumeral);
            assert_eq!(v.class(w), TokenClass::NumberWord);
            assert_eq!(v.numeral_value(d), Some(n));
            assert_eq!(v.word_value(w), Some(n));
        }
    }

    #[test]
    fn ids_dense_with_single_class() {
        let v = build_vocabulary();
        for id in 0..v.len() {
            assert!(!v.token(id).is_empty());
            let _ = v.class(id);
        }
        // round trip through the lookup table
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
    }

    #[test]
    fn value_maps_injective() {
        let v = build_vocabulary();
        let mut seen_numeral = std::collections::HashSet::new();
        let mut seen_word = std::collections::HashSet::new();
        for id in 0..v.len() {
            if let Some(n) = v.numeral_value(id) {
                assert!(seen_numeral.insert(n));
            }
            if let Some(n) = v.word_value(id) {
                assert!(seen_word.insert(n));
            }
        }
        assert_eq!(seen_numeral.len(), 100);
        assert_eq!(seen_word.len(), 100);
    }

    #[test]
    fn template_words_present() {
        let v = build_vocabulary();
        for w in [
            "how", "many", "are", "there", "in", "the", "image", "describe", "what", "color",
            "is", "not", "no", "never", "without",
        ] {
            assert!(v.id(w).is_some(), "missing template word {w}");
        }
        assert!(PALETTE.len() >= 12);
        assert!(OBJECT_WORDS.len() >= 8);
    }

    #[test]
    fn pad_tokens_encode_color() {
        let v = build_vocabulary();
        assert_eq!(v.pad_color(v.background_pad()), None);
        for c in 0..PALETTE_SIZE {
            assert_eq!(v.pad_color(v.object_pad(c)), Some(c));
            assert_eq!(v.class(v.object_pad(c)), TokenClass::ImagePad);
        }
    }

    #[test]
    fn tokenize_round_trip() {
        let v = build_vocabulary();
        let ids = v.tokenize("describe the 4 waterlilies in the image").unwrap();
        assert_eq!(v.detokenize(&ids), "describe the 4 waterlilies in the image");
        assert!(v.tokenize("describe xyzzy").is_err());
    }
}
