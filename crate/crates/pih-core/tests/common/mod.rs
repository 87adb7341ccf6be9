//! Shared test support: the brute-force template-grid oracle for response
//! extraction. Every case is built from an annotated template, so the
//! expected answer is known by construction and never computed by the
//! extractor under test.

use pih_core::{Role, Surface, TokenSeq, Value, Vocabulary};

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub text: String,
    pub expected: Option<(Value, Surface)>,
}

pub fn response_seq(vocab: &Vocabulary, text: &str) -> TokenSeq {
    let ids = vocab
        .tokenize(text)
        .unwrap_or_else(|e| panic!("oracle template uses unknown token: {e} in {text:?}"));
    let roles = vec![Role::Assistant; ids.len()];
    TokenSeq::try_new(ids, roles).unwrap()
}

fn render_number(vocab: &Vocabulary, n: u8, digit_form: bool) -> (String, Surface) {
    if digit_form {
        (n.to_string(), Surface::Digit)
    } else {
        (vocab.token(vocab.word_token(n)).to_string(), Surface::Word)
    }
}

/// Number-extraction grid: templates x values 0..=99 x surface forms x a
/// couple of object words. The window rule is pinned at 4 assistant tokens.
pub fn number_grid(vocab: &Vocabulary) -> Vec<OracleCase> {
    let mut cases = Vec::new();
    let objects = ["cats", "waterlilies", "dogs"];
    for n in 0..=99u8 {
        // a deterministic partner value distinct from n
        let m = (n as usize * 7 + 3) as u8 % 100;
        let m = if m == n { (n + 1) % 100 } else { m };
        for digit_form in [true, false] {
            let (v, v_surface) = render_number(vocab, n, digit_form);
            let (w, w_surface) = render_number(vocab, m, !digit_form);
            for obj in objects {
                // plain mention is extracted
                cases.push(OracleCase {
                    text: format!("there are {v} {obj} ."),
                    expected: Some((Value::Count(n), v_surface)),
                });
                cases.push(OracleCase {
                    text: format!("{v} {obj}"),
                    expected: Some((Value::Count(n), v_surface)),
                });
                cases.push(OracleCase {
                    text: format!("i see {v} {obj}"),
                    expected: Some((Value::Count(n), v_surface)),
                });
                // cue directly before the value suppresses it
                cases.push(OracleCase {
                    text: format!("there are not {v} {obj}"),
                    expected: None,
                });
                cases.push(OracleCase {
                    text: format!("the {obj} are not {v}"),
                    expected: None,
                });
                // suppressed first value, surviving second value
                cases.push(OracleCase {
                    text: format!("there are not {v} {obj} , only {w}"),
                    expected: Some((Value::Count(m), w_surface)),
                });
                cases.push(OracleCase {
                    text: format!("without a {v} {obj} there are {w} {obj}"),
                    expected: Some((Value::Count(m), w_surface)),
                });
                // cue exactly at the window edge (4 tokens back) still negates
                cases.push(OracleCase {
                    text: format!("never the the the {v}"),
                    expected: None,
                });
                // cue just outside the window no longer negates
                cases.push(OracleCase {
                    text: format!("never the the the the {v}"),
                    expected: Some((Value::Count(n), v_surface)),
                });
            }
        }
    }
    // responses with no numeric mention at all
    for obj in ["cats", "waterlilies", "dogs"] {
        cases.push(OracleCase {
            text: format!("no {obj} here"),
            expected: None,
        });
        cases.push(OracleCase {
            text: format!("i see the {obj} ."),
            expected: None,
        });
    }
    cases
}

/// Color-extraction grid over the full palette. Expected surfaces follow
/// the template: a color within the two tokens before the object word is
/// attributive, anything else predicative.
pub fn color_grid(vocab: &Vocabulary) -> Vec<(OracleCase, usize)> {
    let mut cases = Vec::new();
    let objects = ["banana", "cats"];
    for c in 0..pih_core::vocab::PALETTE_SIZE {
        let color = vocab.token(vocab.color_token(c)).to_string();
        let other_idx = (c + 5) % pih_core::vocab::PALETTE_SIZE;
        let other = vocab.token(vocab.color_token(other_idx)).to_string();
        for obj in objects {
            let object_token = vocab.id(obj).unwrap();
            cases.push((
                OracleCase {
                    text: format!("the {color} {obj} sits"),
                    expected: Some((Value::Color(c), Surface::Attributive)),
                },
                object_token,
            ));
            cases.push((
                OracleCase {
                    text: format!("the {obj} is {color}"),
                    expected: Some((Value::Color(c), Surface::Predicative)),
                },
                object_token,
            ));
            cases.push((
                OracleCase {
                    text: format!("not {color} , the {obj} is {other}"),
                    expected: Some((Value::Color(other_idx), Surface::Predicative)),
                },
                object_token,
            ));
            cases.push((
                OracleCase {
                    text: format!("the {color} {other} {obj}"),
                    expected: Some((Value::Color(c), Surface::Attributive)),
                },
                object_token,
            ));
            cases.push((
                OracleCase {
                    text: format!("no {color} {obj} here"),
                    expected: None,
                },
                object_token,
            ));
            cases.push((
                OracleCase {
                    text: format!("i see the {obj} , {color} and {other}"),
                    expected: Some((Value::Color(c), Surface::Predicative)),
                },
                object_token,
            ));
        }
    }
    cases
}
