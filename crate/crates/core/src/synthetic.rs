//! Synthetic corpora and tasks for desk-scale experiments.
//!
//! The synthetic "new language" (tag `qaa`, from the ISO 639 local-use range)
//! is a letter substitution cipher of a small English lexicon.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{LanguageTag, ParallelCorpus};
use crate::error::Result;
use crate::eval::EvalExample;
use crate::instruction::{InstructionDataset, InstructionExample, Manifest, Task, TemplateSet};
use crate::seed::{self, derive_seed};

pub const PIVOT_LANG: &str = "eng";
pub const CIPHER_LANG: &str = "qaa";

const NEUTRAL_WORDS: [&str; 32] = [
    "the", "a", "cat", "dog", "bird", "river", "house", "tree", "man", "woman", "child", "food", "road", "city",
    "boat", "rain", "sees", "finds", "takes", "has", "near", "under", "over", "with", "red", "small", "old", "new",
    "one", "two", "this", "that",
];
const POSITIVE_WORDS: [&str; 6] = ["good", "happy", "love", "great", "nice", "fine"];
const NEGATIVE_WORDS: [&str; 6] = ["bad", "sad", "hate", "awful", "poor", "angry"];

/// Compact prompts, one per generation task and three per prompt language for
/// classification, so that desk runs spend their budget on the sentences.
const COMPACT_TEMPLATES: &str = r#"{
  "display_names": {"eng": "English", "ind": "Indonesian", "qaa": "Cipher"},
  "localized_display_names": {"ind": {"eng": "Inggris", "ind": "Indonesia", "qaa": "Sandi"}},
  "templates": [
    {"template_id": "word-0", "task": "word", "prompt_lang": "eng", "pattern": "{src_text} | {masked_text} ="},
    {"template_id": "span-0", "task": "span", "prompt_lang": "eng", "pattern": "{src_text} | {masked_text} =="},
    {"template_id": "mt-0", "task": "mt", "prompt_lang": "eng", "pattern": "{src_text} =>"},
    {"template_id": "mono-0", "task": "mono", "prompt_lang": "eng", "pattern": "{masked_text} ?"},
    {"template_id": "cls-eng-0", "task": "classify", "prompt_lang": "eng", "pattern": "{text} | mood:"},
    {"template_id": "cls-eng-1", "task": "classify", "prompt_lang": "eng", "pattern": "{lang_name}: {text} ->"},
    {"template_id": "cls-eng-2", "task": "classify", "prompt_lang": "eng", "pattern": "{text}\nfeeling:"},
    {"template_id": "cls-ind-0", "task": "classify", "prompt_lang": "ind", "pattern": "{text} | sentimen:"},
    {"template_id": "cls-ind-1", "task": "classify", "prompt_lang": "ind", "pattern": "{lang_name}: {text} =>"},
    {"template_id": "cls-ind-2", "task": "classify", "prompt_lang": "ind", "pattern": "{text}\nrasa:"}
  ]
}
"#;

pub fn compact_templates_json() -> &'static str {
    COMPACT_TEMPLATES
}

pub fn compact_templates() -> TemplateSet {
    TemplateSet::from_json(COMPACT_TEMPLATES.as_bytes()).expect("compact templates are valid")
}

fn tag(code: &str) -> LanguageTag {
    code.parse().expect("valid constant tag")
}

/// A bijection on a set of characters; other characters pass through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cipher {
    from: Vec<char>,
    to: Vec<char>,
}

impl Cipher {
    /// A random permutation of `alphabet`, drawn from `seed`.
    pub fn new(alphabet: &[char], seed: u64) -> Self {
        let mut to = alphabet.to_vec();
        to.shuffle(&mut seed::rng(derive_seed(seed, 0, "cipher")));
        Cipher {
            from: alphabet.to_vec(),
            to,
        }
    }

    pub fn map_char(&self, c: char) -> char {
        self.from.iter().position(|&f| f == c).map_or(c, |i| self.to[i])
    }

    pub fn apply(&self, text: &str) -> String {
        text.chars().map(|c| self.map_char(c)).collect()
    }
}

pub fn latin() -> Vec<char> {
    ('a'..='z').collect()
}

fn sentence(rng: &mut seed::Rng, extra: Option<&str>) -> String {
    let n = rng.gen_range(3..=6);
    let mut words: Vec<&str> = (0..n).map(|_| *NEUTRAL_WORDS.choose(rng).unwrap()).collect();
    if let Some(w) = extra {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, w);
    }
    words.join(" ")
}

/// `n` English sentences paired with their ciphered counterparts.
pub fn cipher_corpus(n: usize, seed: u64) -> Result<ParallelCorpus> {
    let cipher = Cipher::new(&latin(), seed);
    let mut rng = seed::rng(derive_seed(seed, 0, "corpus"));
    let pairs: Vec<(String, String)> = (0..n)
        .map(|_| {
            let s = sentence(&mut rng, None);
            let t = cipher.apply(&s);
            (s, t)
        })
        .collect();
    ParallelCorpus::from_pairs(tag(PIVOT_LANG), tag(CIPHER_LANG), pairs)
}

/// Past instruction data for the cipher corpus: English sentences with their
/// words reversed, as `input<TAB>target` lines with a header.
pub fn old_task_tsv(n: usize, seed: u64) -> String {
    let mut rng = seed::rng(derive_seed(seed, 0, "old"));
    let mut out = String::from("input\ttarget\n");
    for _ in 0..n {
        let s = sentence(&mut rng, None);
        let rev: Vec<&str> = s.split(' ').rev().collect();
        out.push_str(&format!("reverse: {s}\t{}\n", rev.join(" ")));
    }
    out
}

/// Three-way sentiment examples; half English and half ciphered.
pub fn sentiment_set(n: usize, seed: u64) -> Vec<EvalExample> {
    let cipher = Cipher::new(&latin(), seed);
    let mut rng = seed::rng(derive_seed(seed, 0, "sentiment"));
    (0..n)
        .map(|i| {
            let (label, word) = match i % 3 {
                0 => ("positive", Some(*POSITIVE_WORDS.choose(&mut rng).unwrap())),
                1 => ("negative", Some(*NEGATIVE_WORDS.choose(&mut rng).unwrap())),
                _ => ("neutral", None),
            };
            let s = sentence(&mut rng, word);
            let (text, lang) = if (i / 3) % 2 == 0 {
                (s, PIVOT_LANG)
            } else {
                (cipher.apply(&s), CIPHER_LANG)
            };
            EvalExample {
                text,
                gold_label: label.into(),
                lang: tag(lang),
            }
        })
        .collect()
}

fn random_string(rng: &mut seed::Rng, alphabet: &[char], len: usize) -> String {
    (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

fn distinct_strings(n: usize, alphabet: &[char], len: usize, seed: u64) -> Vec<String> {
    let mut rng = seed::rng(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = random_string(&mut rng, alphabet, len);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Length of the strings in [`copy_task`] and [`cipher_task`].
pub const TASK_STRING_LEN: usize = 6;

pub fn alphabet_a() -> Vec<char> {
    ('a'..='l').collect()
}

pub fn alphabet_b() -> Vec<char> {
    ('m'..='x').collect()
}

fn task_dataset(
    name: &str,
    task: Task,
    inputs: Vec<String>,
    render: impl Fn(&str) -> (String, String),
) -> Result<InstructionDataset> {
    let examples = inputs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (input, target) = render(s);
            InstructionExample {
                example_id: format!("{name}-{i:06}"),
                task,
                src_lang: tag(PIVOT_LANG),
                tgt_lang: tag(PIVOT_LANG),
                input,
                target,
                template_id: name.to_string(),
                pair_id: i,
                seed: 0,
            }
        })
        .collect();
    InstructionDataset::new(examples, Manifest::default())
}

/// Old-task data: copy a string over alphabet A. Returns `(train, held_out)`
/// with disjoint strings.
pub fn copy_task(n_train: usize, n_held_out: usize, seed: u64) -> Result<(InstructionDataset, InstructionDataset)> {
    let all = distinct_strings(
        n_train + n_held_out,
        &alphabet_a(),
        TASK_STRING_LEN,
        derive_seed(seed, 0, "copy"),
    );
    let render = |s: &str| (format!("copy {s}"), s.to_string());
    let train = task_dataset("copy", Task::Replay, all[..n_train].to_vec(), render)?;
    let held = task_dataset("copy-val", Task::Replay, all[n_train..].to_vec(), render)?;
    Ok((train, held))
}

/// New-task data: translate a string over alphabet B through a fixed
/// substitution cipher of B. Returns `(train, held_out)`.
pub fn cipher_task(n_train: usize, n_held_out: usize, seed: u64) -> Result<(InstructionDataset, InstructionDataset)> {
    let cipher = Cipher::new(&alphabet_b(), derive_seed(seed, 0, "cipher-task"));
    let all = distinct_strings(
        n_train + n_held_out,
        &alphabet_b(),
        TASK_STRING_LEN,
        derive_seed(seed, 0, "plain"),
    );
    let render = |s: &str| (format!("code {s}"), cipher.apply(s));
    let train = task_dataset("code", Task::MachineTranslation, all[..n_train].to_vec(), render)?;
    let held = task_dataset("code-val", Task::MachineTranslation, all[n_train..].to_vec(), render)?;
    Ok((train, held))
}
