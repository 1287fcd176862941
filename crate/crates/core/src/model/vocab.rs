use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::instruction::{InstructionDataset, InstructionExample};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const UNK: usize = 4;
pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

/// Character vocabulary: five reserved ids followed by characters sorted by
/// code point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let sorted: BTreeSet<char> = chars.into_iter().collect();
        let symbols: Vec<char> = sorted.into_iter().collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + RESERVED.len()))
            .collect();
        Vocab { symbols, index }
    }

    pub fn len(&self) -> usize {
        RESERVED.len() + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Non-reserved symbols in id order.
    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.id(c)).collect()
    }

    /// Renders ids back to text; reserved ids render as `<bos>`, `<sep>`, ...
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                i if i < RESERVED.len() => out.push_str(RESERVED[i]),
                i => match self.symbols.get(i - RESERVED.len()) {
                    Some(&c) => out.push(c),
                    None => out.push_str(RESERVED[UNK]),
                },
            }
        }
        out
    }
}

pub fn build_vocab(datasets: &[&InstructionDataset]) -> Result<Vocab> {
    if datasets.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyData);
    }
    Ok(Vocab::from_chars(datasets.iter().flat_map(|d| {
        d.examples.iter().flat_map(|e| e.input.chars().chain(e.target.chars()))
    })))
}

/// Token ids and a 0/1 mask of the positions that contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub loss_mask: Vec<u8>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Also supervises the prompt characters and the separator.
    pub fn with_loss_on_prompt(mut self) -> Self {
        for m in self.loss_mask.iter_mut().skip(1) {
            *m = 1;
        }
        self
    }

    /// Drops prompt characters from the left until the sequence fits in
    /// `context`. The target is never truncated.
    pub fn truncate_to(self, context: usize) -> Result<Self> {
        let len = self.ids.len();
        if len <= context {
            return Ok(self);
        }
        let sep = self
            .ids
            .iter()
            .position(|&i| i == SEP)
            .ok_or_else(|| Error::Invalid("encoded example has no separator".into()))?;
        let excess = len - context;
        // prompt characters sit at positions 1..sep
        if excess > sep - 1 {
            return Err(Error::SequenceTooLong { len, context });
        }
        let mut ids = Vec::with_capacity(context);
        let mut mask = Vec::with_capacity(context);
        ids.push(self.ids[0]);
        mask.push(self.loss_mask[0]);
        ids.extend_from_slice(&self.ids[1 + excess..]);
        mask.extend_from_slice(&self.loss_mask[1 + excess..]);
        Ok(Encoded { ids, loss_mask: mask })
    }
}

/// `BOS input SEP target EOS`, with the loss on the target and `EOS`.
pub fn encode_example(ex: &InstructionExample, vocab: &Vocab) -> Encoded {
    encode_pair(&ex.input, &ex.target, vocab)
}

pub fn encode_pair(input: &str, target: &str, vocab: &Vocab) -> Encoded {
    let mut ids = Vec::with_capacity(input.len() + target.len() + 3);
    ids.push(BOS);
    ids.extend(input.chars().map(|c| vocab.id(c)));
    ids.push(SEP);
    let prompt_len = ids.len();
    ids.extend(target.chars().map(|c| vocab.id(c)));
    ids.push(EOS);
    let mut loss_mask = vec![0u8; ids.len()];
    for m in &mut loss_mask[prompt_len..] {
        *m = 1;
    }
    Encoded { ids, loss_mask }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LanguageTag;
    use crate::instruction::{Manifest, Task};

    fn ex(input: &str, target: &str) -> InstructionExample {
        InstructionExample {
            example_id: format!("{input}->{target}"),
            task: Task::MachineTranslation,
            src_lang: LanguageTag::new("eng").unwrap(),
            tgt_lang: LanguageTag::new("ind").unwrap(),
            input: input.into(),
            target: target.into(),
            template_id: "t".into(),
            pair_id: 0,
            seed: 0,
        }
    }

    #[test]
    fn vocab_counts_and_order() {
        let ds = InstructionDataset::new(vec![ex("a b", "ba"), ex("b", "a a")], Manifest::default()).unwrap();
        let v = build_vocab(&[&ds]).unwrap();
        assert_eq!(v.len(), 5 + 2 + 1);
        assert_eq!(v.symbols(), &[' ', 'a', 'b']);
        assert_eq!(v, build_vocab(&[&ds.clone()]).unwrap());
        assert_eq!(v.id('a'), 6);
        assert_eq!(v.id('z'), UNK);
    }

    #[test]
    fn empty_data() {
        let empty = InstructionDataset::new(vec![], Manifest::default()).unwrap();
        assert!(matches!(build_vocab(&[]), Err(Error::EmptyData)));
        assert!(matches!(build_vocab(&[&empty]), Err(Error::EmptyData)));
    }

    #[test]
    fn encode_layout_and_mask() {
        let v = Vocab::from_chars("abc".chars());
        let e = encode_example(&ex("ab", "c"), &v);
        assert_eq!(e.ids.len(), 6);
        assert_eq!(e.loss_mask, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(v.decode(&e.ids), "<bos>ab<sep>c<eos>");
        assert_eq!(e.clone().with_loss_on_prompt().loss_mask, vec![0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn decode_round_trip() {
        let v = Vocab::from_chars("héllo wörld".chars());
        let text = "wörld héllo";
        assert_eq!(v.decode(&v.encode_text(text)), text);
        assert_eq!(v.decode(&v.encode_text("x")), "<unk>");
    }

    #[test]
    fn truncation_keeps_target() {
        let v = Vocab::from_chars("abcdef".chars());
        let e = encode_pair("abcdef", "ab", &v);
        assert_eq!(e.len(), 11);
        let t = e.clone().truncate_to(8).unwrap();
        assert_eq!(v.decode(&t.ids), "<bos>def<sep>ab<eos>");
        assert_eq!(t.loss_mask, vec![0, 0, 0, 0, 0, 1, 1, 1]);
        assert_eq!(e.clone().truncate_to(11).unwrap(), e);
        assert!(matches!(e.truncate_to(4), Err(Error::SequenceTooLong { .. })));
    }
}
