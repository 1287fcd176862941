//! Word- and span-level perturbation of target sentences.
//!
//! Both perturbations replace exactly one contiguous run of whitespace tokens
//! with [`PLACEHOLDER`]. The withheld tokens are kept so the original sentence
//! can always be reconstructed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const PLACEHOLDER: &str = "_____";

/// Default upper bound on span length as a fraction of sentence length.
pub const DEFAULT_MAX_SPAN_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub tokens: Vec<String>,
    pub original: String,
}

impl TokenizedSentence {
    /// Tokens joined by single spaces.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Word,
    Span,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Word => "word",
            Granularity::Span => "span",
        }
    }

    pub fn min_tokens(self) -> usize {
        match self {
            Granularity::Word => 2,
            Granularity::Span => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perturbed {
    pub masked_text: String,
    pub removed_tokens: Vec<String>,
    pub mask_start: usize,
    pub mask_len: usize,
    pub granularity: Granularity,
}

/// Splits on Unicode whitespace. Punctuation stays attached to its token.
pub fn tokenize(text: &str) -> Result<TokenizedSentence> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(TokenizedSentence {
        tokens,
        original: text.to_string(),
    })
}

/// Replaces `tokens[start..start + len]` with the placeholder.
pub fn mask_span(
    sentence: &TokenizedSentence,
    start: usize,
    len: usize,
    granularity: Granularity,
) -> Result<Perturbed> {
    let n = sentence.len();
    if n < granularity.min_tokens() {
        return Err(Error::TooShort {
            tokens: n,
            required: granularity.min_tokens(),
        });
    }
    let valid_len = match granularity {
        Granularity::Word => len == 1,
        Granularity::Span => len >= 2 && len < n,
    };
    if !valid_len || start + len > n {
        return Err(Error::Invalid(format!(
            "cannot mask {len} tokens at {start} of a {n}-token sentence as {}",
            granularity.as_str()
        )));
    }
    if sentence.tokens.iter().any(|t| t.contains(PLACEHOLDER)) {
        return Err(Error::Invalid(format!(
            "sentence already contains the placeholder {PLACEHOLDER}"
        )));
    }

    let mut out: Vec<&str> = Vec::with_capacity(n - len + 1);
    out.extend(sentence.tokens[..start].iter().map(String::as_str));
    out.push(PLACEHOLDER);
    out.extend(sentence.tokens[start + len..].iter().map(String::as_str));
    Ok(Perturbed {
        masked_text: out.join(" "),
        removed_tokens: sentence.tokens[start..start + len].to_vec(),
        mask_start: start,
        mask_len: len,
        granularity,
    })
}

/// Masks one token chosen uniformly at random.
pub fn g_word(sentence: &TokenizedSentence, seed: u64) -> Result<Perturbed> {
    let n = sentence.len();
    if n < 2 {
        return Err(Error::TooShort { tokens: n, required: 2 });
    }
    let start = seed::rng(seed).gen_range(0..n);
    mask_span(sentence, start, 1, Granularity::Word)
}

/// Masks one contiguous span of at least two tokens.
///
/// The span length is uniform on `[2, max(2, floor(max_span_fraction * n))]`,
/// clipped to `n - 1`; the start is then uniform over the positions where the
/// span fits.
pub fn g_span(sentence: &TokenizedSentence, seed: u64, max_span_fraction: f64) -> Result<Perturbed> {
    if !(max_span_fraction > 0.0 && max_span_fraction <= 1.0) {
        return Err(Error::Invalid(format!(
            "max_span_fraction {max_span_fraction} is outside (0, 1]"
        )));
    }
    let n = sentence.len();
    if n < 3 {
        return Err(Error::TooShort { tokens: n, required: 3 });
    }
    let mut rng = seed::rng(seed);
    let upper = ((max_span_fraction * n as f64).floor() as usize).max(2);
    let len = rng.gen_range(2..=upper).min(n - 1);
    let start = rng.gen_range(0..=n - len);
    mask_span(sentence, start, len, Granularity::Span)
}

/// Substitutes the withheld tokens back into the placeholder.
pub fn reconstruct(p: &Perturbed) -> Result<String> {
    let count = p.masked_text.matches(PLACEHOLDER).count();
    if count != 1 {
        return Err(Error::MalformedPerturbed(count));
    }
    Ok(p.masked_text.replacen(PLACEHOLDER, &p.removed_tokens.join(" "), 1))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use proptest::prelude::*;

    use super::*;

    const MANGO: &str = "Dia memakan dua buah mangga";

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize(MANGO).unwrap().len(), 5);
        assert_eq!(tokenize("a").unwrap().tokens, vec!["a"]);
        assert_eq!(tokenize("  a  b ").unwrap().tokens, vec!["a", "b"]);
        assert!(matches!(tokenize(" \t "), Err(Error::EmptyText)));
    }

    #[test]
    fn word_mask_matches_table_row() {
        let s = tokenize(MANGO).unwrap();
        let p = mask_span(&s, 1, 1, Granularity::Word).unwrap();
        assert_eq!(p.masked_text, "Dia _____ dua buah mangga");
        assert_eq!(p.removed_tokens, vec!["memakan"]);
    }

    #[test]
    fn span_mask_matches_table_row() {
        let s = tokenize(MANGO).unwrap();
        let p = mask_span(&s, 2, 3, Granularity::Span).unwrap();
        assert_eq!(p.masked_text, "Dia memakan _____");
        assert_eq!(p.removed_tokens, vec!["dua", "buah", "mangga"]);
    }

    #[test]
    fn word_on_two_tokens_leaves_one() {
        let s = tokenize("halo dunia").unwrap();
        for seed in 0..20 {
            let p = g_word(&s, seed).unwrap();
            let survivors = p.masked_text.split_whitespace().filter(|t| *t != PLACEHOLDER).count();
            assert_eq!(survivors, 1);
        }
    }

    #[test]
    fn too_short() {
        let one = tokenize("a").unwrap();
        let two = tokenize("a b").unwrap();
        assert!(matches!(
            g_word(&one, 0),
            Err(Error::TooShort { tokens: 1, required: 2 })
        ));
        assert!(matches!(
            g_span(&two, 0, 0.6),
            Err(Error::TooShort { tokens: 2, required: 3 })
        ));
    }

    #[test]
    fn span_on_three_tokens_has_two_outcomes() {
        // Enumerated by hand: floor(0.6 * 3) = 1 < 2, so L = 2 and start is 0 or 1.
        let expected: BTreeSet<(usize, usize, String)> = [(0, 2, "_____ c".to_string()), (1, 2, "a _____".to_string())]
            .into_iter()
            .collect();
        let s = tokenize("a b c").unwrap();
        let seen: BTreeSet<_> = (0..200)
            .map(|seed| {
                let p = g_span(&s, seed, DEFAULT_MAX_SPAN_FRACTION).unwrap();
                (p.mask_start, p.mask_len, p.masked_text)
            })
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn span_outcomes_match_enumeration() {
        // n = 7, fraction 0.6: L in [2, 4], start in [0, 7 - L].
        let s = tokenize("a b c d e f g").unwrap();
        let mut expected = BTreeSet::new();
        for len in 2..=4usize {
            for start in 0..=7 - len {
                expected.insert((start, len));
            }
        }
        let seen: BTreeSet<_> = (0..5000)
            .map(|seed| {
                let p = g_span(&s, seed, 0.6).unwrap();
                (p.mask_start, p.mask_len)
            })
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let s = tokenize(MANGO).unwrap();
        assert_eq!(g_word(&s, 42).unwrap(), g_word(&s, 42).unwrap());
        assert_eq!(g_span(&s, 42, 0.6).unwrap(), g_span(&s, 42, 0.6).unwrap());
    }

    #[test]
    fn reconstruct_rejects_malformed() {
        let p = Perturbed {
            masked_text: "a _____ b _____".into(),
            removed_tokens: vec!["x".into()],
            mask_start: 1,
            mask_len: 1,
            granularity: Granularity::Word,
        };
        assert!(matches!(reconstruct(&p), Err(Error::MalformedPerturbed(2))));
        let none = Perturbed {
            masked_text: "a b".into(),
            ..p
        };
        assert!(matches!(reconstruct(&none), Err(Error::MalformedPerturbed(0))));
    }

    #[test]
    fn refuses_text_that_contains_the_placeholder() {
        let s = tokenize("a _____ b c").unwrap();
        assert!(matches!(g_word(&s, 1), Err(Error::Invalid(_))));
    }

    #[test]
    fn word_mask_is_uniform() {
        let s = tokenize("satu dua tiga empat lima").unwrap();
        let mut counts = [0usize; 5];
        for seed in 0..10_000 {
            counts[g_word(&s, seed).unwrap().mask_start] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.2).abs() <= 0.02, "{counts:?}");
        }
    }

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zA-Z0-9À-ÿ가-힣ꦲ-ꦺ,.!?]{1,8}", 1..40).prop_map(|w| w.join("  "))
    }

    proptest! {
        #[test]
        fn word_round_trip(text in sentence(), seed in any::<u64>()) {
            let s = tokenize(&text).unwrap();
            prop_assume!(s.len() >= 2);
            let p = g_word(&s, seed).unwrap();
            prop_assert_eq!(p.mask_len, 1);
            prop_assert_eq!(p.masked_text.split_whitespace().count(), s.len());
            prop_assert_eq!(reconstruct(&p).unwrap(), s.normalized());
        }

        #[test]
        fn span_round_trip(text in sentence(), seed in any::<u64>(), frac in 0.05f64..=1.0) {
            let s = tokenize(&text).unwrap();
            prop_assume!(s.len() >= 3);
            let p = g_span(&s, seed, frac).unwrap();
            prop_assert!(p.mask_len >= 2 && p.mask_len < s.len());
            prop_assert!(p.mask_start + p.mask_len <= s.len());
            prop_assert_eq!(p.masked_text.matches(PLACEHOLDER).count(), 1);
            prop_assert_eq!(reconstruct(&p).unwrap(), s.normalized());
        }
    }
}
