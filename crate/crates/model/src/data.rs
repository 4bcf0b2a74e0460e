//! Turning token records into model examples and model output back into
//! lexemes.

use bugforge_core::dataset::{PretrainRecord, TokenRecord};
use bugforge_core::syntax::split_rendered;
use bugforge_core::{SubwordVocabulary, SyntaxClass};

use crate::transformer::Example;

/// Subword ids of the lexemes joined by single spaces. Each subword takes
/// its lexeme's class; separators are `Other`. Equal to encoding the
/// rendered text as a whole, since pre-tokenization splits at whitespace.
pub fn encode_lexemes(vocab: &SubwordVocabulary, tokens: &[TokenRecord]) -> (Vec<u32>, Vec<SyntaxClass>) {
    let space = vocab.encode(b" ");
    let (mut ids, mut classes) = (Vec::new(), Vec::new());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            ids.extend_from_slice(&space);
            classes.extend(std::iter::repeat_n(SyntaxClass::Other, space.len()));
        }
        let sub = vocab.encode(t.text.as_bytes());
        classes.extend(std::iter::repeat_n(t.class, sub.len()));
        ids.extend(sub);
    }
    (ids, classes)
}

pub fn decode_lexemes(vocab: &SubwordVocabulary, ids: &[u32]) -> Vec<String> {
    split_rendered(&vocab.decode_string(ids))
}

pub fn repair_example(vocab: &SubwordVocabulary, buggy: &[TokenRecord], fixed: &[TokenRecord]) -> Example {
    let (src, src_classes) = encode_lexemes(vocab, buggy);
    let (tgt, tgt_classes) = encode_lexemes(vocab, fixed);
    Example {
        src,
        src_classes,
        tgt,
        tgt_classes,
    }
}

/// Span-masked sequences carry no classes.
pub fn denoise_example(record: &PretrainRecord) -> Example {
    Example::unclassified(record.input_ids.clone(), record.target_ids.clone())
}

/// Whether every id fits the model's vocabulary and positions.
pub fn fits(example: &Example, vocab_size: usize, max_positions: usize) -> bool {
    let in_vocab = |ids: &[u32]| ids.iter().all(|&t| (t as usize) < vocab_size);
    !example.src.is_empty()
        && example.src.len() <= max_positions
        && example.tgt.len() < max_positions
        && in_vocab(&example.src)
        && in_vocab(&example.tgt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, class: SyntaxClass) -> TokenRecord {
        TokenRecord {
            text: text.into(),
            class,
        }
    }

    #[test]
    fn lexeme_encoding_matches_rendered_text() {
        let v = SubwordVocabulary::bytes_only();
        let toks = [
            rec("int", SyntaxClass::Type),
            rec("x", SyntaxClass::Variable),
            rec("=", SyntaxClass::Other),
            rec("\"a b\"", SyntaxClass::StringLit),
        ];
        let (ids, classes) = encode_lexemes(&v, &toks);
        assert_eq!(ids, v.encode_str("int x = \"a b\""));
        assert_eq!(classes.len(), ids.len());
        assert_eq!(classes[0], SyntaxClass::Type);
        assert_eq!(classes[3], SyntaxClass::Other);
        assert_eq!(classes[4], SyntaxClass::Variable);
        let back: Vec<String> = toks.iter().map(|t| t.text.clone()).collect();
        assert_eq!(decode_lexemes(&v, &ids), back);
    }
}
