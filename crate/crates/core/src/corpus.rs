//! Parallel corpora: index-aligned sentence files with language tags.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A three-letter lowercase language code such as `eng`, `ind` or `sun`.
///
/// Codes are not checked against any registry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageTag(String);

impl LanguageTag {
    pub fn new(code: &str) -> Result<Self> {
        if code.len() == 3 && code.bytes().all(|b| b.is_ascii_lowercase()) {
            Ok(LanguageTag(code.to_string()))
        } else {
            Err(Error::InvalidLanguageTag(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageTag {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        LanguageTag::new(&value)
    }
}

impl From<LanguageTag> for String {
    fn from(tag: LanguageTag) -> Self {
        tag.0
    }
}

impl std::str::FromStr for LanguageTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LanguageTag::new(s)
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub pair_id: usize,
    pub src_text: String,
    pub tgt_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub pairs: Vec<ParallelPair>,
}

fn check_text(text: &str, index: usize, side: &'static str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::EmptyLine { index, side });
    }
    if text.contains(['\n', '\r']) {
        return Err(Error::Invalid(format!(
            "{side} text at index {index} contains a line break"
        )));
    }
    Ok(())
}

impl ParallelCorpus {
    /// Builds a corpus from aligned `(src, tgt)` texts, assigning pair ids by
    /// position.
    pub fn from_pairs<I, S, T>(src_lang: LanguageTag, tgt_lang: LanguageTag, texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        if src_lang == tgt_lang {
            return Err(Error::SameLanguage(src_lang.to_string()));
        }
        let pairs = texts
            .into_iter()
            .enumerate()
            .map(|(pair_id, (s, t))| {
                let (src_text, tgt_text) = (s.into(), t.into());
                check_text(&src_text, pair_id, "source")?;
                check_text(&tgt_text, pair_id, "target")?;
                Ok(ParallelPair {
                    pair_id,
                    src_text,
                    tgt_text,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParallelCorpus {
            src_lang,
            tgt_lang,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::InvalidEncoding {
        path: path.to_path_buf(),
    })?;
    Ok(text.lines().map(|l| l.trim_end().to_string()).collect())
}

/// Loads two index-aligned sentence files (one sentence per line, LF or CRLF).
pub fn load_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    src_lang: LanguageTag,
    tgt_lang: LanguageTag,
) -> Result<ParallelCorpus> {
    let src = read_lines(src_path.as_ref())?;
    let tgt = read_lines(tgt_path.as_ref())?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch {
            src_lines: src.len(),
            tgt_lines: tgt.len(),
        });
    }
    if src.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    ParallelCorpus::from_pairs(src_lang, tgt_lang, src.into_iter().zip(tgt))
}

/// Splits a corpus into disjoint train and validation parts.
///
/// The train part receives `round(len * train_fraction)` pairs, clamped so
/// that both parts are non-empty. Each part keeps the original relative order
/// and gets fresh pair ids starting at zero.
pub fn split_corpus(
    corpus: &ParallelCorpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidFraction(train_fraction));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let subset = |idx: &[usize]| ParallelCorpus {
        src_lang: corpus.src_lang.clone(),
        tgt_lang: corpus.tgt_lang.clone(),
        pairs: idx
            .iter()
            .enumerate()
            .map(|(pair_id, &i)| ParallelPair {
                pair_id,
                ..corpus.pairs[i].clone()
            })
            .collect(),
    };
    Ok((subset(&train_idx), subset(&val_idx)))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body).unwrap();
        p
    }

    fn numbered(n: usize) -> ParallelCorpus {
        ParallelCorpus::from_pairs(
            tag("eng"),
            tag("sun"),
            (0..n).map(|i| (format!("src {i}"), format!("tgt {i}"))),
        )
        .unwrap()
    }

    #[test]
    fn language_tags() {
        assert!(LanguageTag::new("eng").is_ok());
        for bad in ["en", "engl", "Eng", "e1g", "", "ñen"] {
            assert!(
                matches!(LanguageTag::new(bad), Err(Error::InvalidLanguageTag(_))),
                "{bad}"
            );
        }
        let parsed: LanguageTag = serde_json::from_str("\"jav\"").unwrap();
        assert_eq!(parsed.as_str(), "jav");
        assert!(serde_json::from_str::<LanguageTag>("\"JAV\"").is_err());
    }

    #[test]
    fn loads_aligned_files_with_crlf_and_trailing_space() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(&dir, "a.eng", b"He eats two mangos  \r\nGood morning\r\n");
        let tgt = write(&dir, "a.ind", b"Dia memakan dua buah mangga\nSelamat pagi\t\n");
        let c = load_parallel(&src, &tgt, tag("eng"), tag("ind")).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0].src_text, "He eats two mangos");
        assert_eq!(c.pairs[1].tgt_text, "Selamat pagi");
        assert_eq!(c.pairs[1].pair_id, 1);
    }

    #[test]
    fn round_trips_line_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let lines: Vec<String> = (0..2009).map(|i| format!("kalimat nomor {i}")).collect();
        let body = lines.join("\n") + "\n";
        let src = write(&dir, "s", body.as_bytes());
        let tgt = write(&dir, "t", body.to_uppercase().as_bytes());
        let c = load_parallel(&src, &tgt, tag("ind"), tag("jav")).unwrap();
        assert_eq!(c.len(), 2009);
        for (i, p) in c.pairs.iter().enumerate() {
            assert_eq!(p.pair_id, i);
            assert_eq!(p.src_text, lines[i]);
        }
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty_a = write(&dir, "e1", b"");
        let empty_b = write(&dir, "e2", b"");
        assert!(matches!(
            load_parallel(&empty_a, &empty_b, tag("eng"), tag("ind")),
            Err(Error::EmptyCorpus)
        ));

        let three = write(&dir, "3", b"a\nb\nc\n");
        let four = write(&dir, "4", b"a\nb\nc\nd\n");
        assert!(matches!(
            load_parallel(&three, &four, tag("eng"), tag("ind")),
            Err(Error::LineCountMismatch {
                src_lines: 3,
                tgt_lines: 4
            })
        ));

        let blank = write(&dir, "blank", b"a\n   \nc\n");
        assert!(matches!(
            load_parallel(&three, &blank, tag("eng"), tag("ind")),
            Err(Error::EmptyLine {
                index: 1,
                side: "target"
            })
        ));

        let latin1 = write(&dir, "latin1", b"caf\xe9\nb\nc\n");
        assert!(matches!(
            load_parallel(&latin1, &three, tag("eng"), tag("ind")),
            Err(Error::InvalidEncoding { .. })
        ));

        assert!(matches!(
            load_parallel(&three, &three, tag("eng"), tag("eng")),
            Err(Error::SameLanguage(_))
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let c = numbered(10);
        let (train, val) = split_corpus(&c, 0.8, 7).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert_eq!(split_corpus(&c, 0.8, 7).unwrap(), (train.clone(), val.clone()));
        for (i, p) in train.pairs.iter().enumerate() {
            assert_eq!(p.pair_id, i);
        }
        for (i, p) in val.pairs.iter().enumerate() {
            assert_eq!(p.pair_id, i);
        }
    }

    #[test]
    fn split_is_a_partition() {
        let c = numbered(37);
        for seed in 0..20 {
            let (train, val) = split_corpus(&c, 0.7, seed).unwrap();
            let mut all: Vec<_> = train
                .pairs
                .iter()
                .chain(&val.pairs)
                .map(|p| (p.src_text.clone(), p.tgt_text.clone()))
                .collect();
            all.sort();
            let mut orig: Vec<_> = c
                .pairs
                .iter()
                .map(|p| (p.src_text.clone(), p.tgt_text.clone()))
                .collect();
            orig.sort();
            assert_eq!(all, orig);
        }
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_corpus(&numbered(1), 0.8, 7), Err(Error::TooFewPairs(1))));
        assert!(matches!(
            split_corpus(&numbered(5), 1.0, 7),
            Err(Error::InvalidFraction(_))
        ));
        let (a, b) = split_corpus(&numbered(2), 0.99, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }
}
