use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;
use crate::error::{Error, Result};
use crate::instruction::{Direction, Task, TemplateSet};
use crate::perturbation::PLACEHOLDER;
use crate::seed::sha256_hex;

pub const DATASET_FORMAT: &str = "ia1-dataset/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionExample {
    pub example_id: String,
    pub task: Task,
    pub src_lang: LanguageTag,
    pub tgt_lang: LanguageTag,
    pub input: String,
    pub target: String,
    pub template_id: String,
    pub pair_id: usize,
    pub seed: u64,
}

impl InstructionExample {
    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::Invalid(format!("{}: empty target", self.example_id)));
        }
        if self.example_id.is_empty() {
            return Err(Error::Invalid("empty example id".into()));
        }
        if self.task.is_cond_denoise() && self.input.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::Invalid(format!(
                "{}: conditional denoising input must contain exactly one placeholder",
                self.example_id
            )));
        }
        Ok(())
    }
}

/// Generation settings recorded alongside a dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    #[serde(default)]
    pub src_path: Option<String>,
    #[serde(default)]
    pub tgt_path: Option<String>,
    #[serde(default)]
    pub src_lang: Option<LanguageTag>,
    #[serde(default)]
    pub tgt_lang: Option<LanguageTag>,
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default)]
    pub template_digest: Option<String>,
    #[serde(default)]
    pub pairs: usize,
    /// Examples that would exist if no sentence were too short.
    #[serde(default)]
    pub expected_total: usize,
    /// Skipped examples per task tag.
    #[serde(default)]
    pub skipped: BTreeMap<String, usize>,
    pub example_count: usize,
}

impl Manifest {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionDataset {
    pub examples: Vec<InstructionExample>,
    pub manifest: Manifest,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    manifest: Manifest,
}

impl InstructionDataset {
    pub fn new(examples: Vec<InstructionExample>, mut manifest: Manifest) -> Result<Self> {
        manifest.example_count = examples.len();
        if manifest.format.is_empty() {
            manifest.format = DATASET_FORMAT.to_string();
        }
        let mut ids = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()?;
            if !ids.insert(ex.example_id.as_str()) {
                return Err(Error::Invalid(format!("duplicate example id {}", ex.example_id)));
            }
        }
        Ok(InstructionDataset { examples, manifest })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Checks that the dataset was generated from `templates`.
    pub fn verify_templates(&self, templates: &TemplateSet) -> Result<()> {
        match &self.manifest.template_digest {
            Some(d) if *d == templates.digest => Ok(()),
            Some(d) => Err(Error::DigestMismatch {
                what: "template file".into(),
                expected: d.clone(),
                found: templates.digest.clone(),
            }),
            None => Err(Error::Invalid("dataset manifest has no template digest".into())),
        }
    }

    /// Serialized form: a manifest line followed by one JSON record per line.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut manifest = self.manifest.clone();
        manifest.example_count = self.examples.len();
        serde_json::to_writer(&mut out, &ManifestLine { manifest })?;
        out.push(b'\n');
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let schema = |line: usize, message: String| Error::SchemaViolation { line, message };
        let mut lines = text.split_inclusive('\n').enumerate();
        let (_, first) = lines.next().ok_or_else(|| schema(1, "missing manifest line".into()))?;
        let header: ManifestLine = serde_json::from_str(first.trim_end_matches(['\n', '\r']))
            .map_err(|e| schema(1, format!("bad manifest: {e}")))?;
        let manifest = header.manifest;

        let mut examples = Vec::with_capacity(manifest.example_count);
        let mut ids = HashSet::new();
        for (i, raw) in lines {
            let line_no = i + 1;
            if !raw.ends_with('\n') {
                return Err(schema(line_no, "record is not newline-terminated".into()));
            }
            let ex: InstructionExample =
                serde_json::from_str(raw.trim_end_matches(['\n', '\r'])).map_err(|e| schema(line_no, e.to_string()))?;
            ex.validate().map_err(|e| schema(line_no, e.to_string()))?;
            if !ids.insert(ex.example_id.clone()) {
                return Err(schema(line_no, format!("duplicate example id {}", ex.example_id)));
            }
            examples.push(ex);
        }
        if examples.len() != manifest.example_count {
            return Err(schema(
                examples.len() + 2,
                format!(
                    "manifest announces {} records, file has {}",
                    manifest.example_count,
                    examples.len()
                ),
            ));
        }
        Ok(InstructionDataset { examples, manifest })
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_jsonl()?))
    }
}

pub fn write_dataset(ds: &InstructionDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = ds.to_jsonl()?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<InstructionDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::InvalidEncoding {
        path: path.to_path_buf(),
    })?;
    InstructionDataset::from_jsonl(&text)
}

/// Converts a two-column `input<TAB>target` file of past instruction data
/// into a dataset of `replay` records. A leading `input<TAB>target` header
/// line is skipped. Only the file name is recorded in the manifest.
pub fn import_tsv(path: impl AsRef<Path>, lang: LanguageTag) -> Result<InstructionDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::InvalidEncoding {
        path: path.to_path_buf(),
    })?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.trim_end() == "input\ttarget" {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (input, target) = line.split_once('\t').ok_or_else(|| Error::SchemaViolation {
            line: i + 1,
            message: "expected two tab-separated columns".into(),
        })?;
        if target.contains('\t') || target.trim().is_empty() {
            return Err(Error::SchemaViolation {
                line: i + 1,
                message: "expected a non-empty target in the second of two columns".into(),
            });
        }
        let idx = examples.len();
        examples.push(InstructionExample {
            example_id: format!("old-{idx:06}"),
            task: Task::Replay,
            src_lang: lang.clone(),
            tgt_lang: lang.clone(),
            input: input.to_string(),
            target: target.trim_end().to_string(),
            template_id: "tsv".into(),
            pair_id: idx,
            seed: 0,
        });
    }
    InstructionDataset::new(
        examples,
        Manifest {
            src_path: path.file_name().map(|n| n.to_string_lossy().into_owned()),
            tasks: vec![Task::Replay],
            ..Manifest::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(i: usize) -> InstructionExample {
        InstructionExample {
            example_id: format!("mt-p2n-{i:06}"),
            task: Task::MachineTranslation,
            src_lang: LanguageTag::new("eng").unwrap(),
            tgt_lang: LanguageTag::new("ind").unwrap(),
            input: format!("Translate \"sentence {i}\"\nplease"),
            target: format!("kalimat {i} \"é\""),
            template_id: "mt-eng-1".into(),
            pair_id: i,
            seed: u64::MAX - i as u64,
        }
    }

    fn dataset(n: usize) -> InstructionDataset {
        InstructionDataset::new((0..n).map(example).collect(), Manifest::default()).unwrap()
    }

    #[test]
    fn round_trip() {
        for n in [0, 1, 5] {
            let ds = dataset(n);
            let bytes = ds.to_jsonl().unwrap();
            let back = InstructionDataset::from_jsonl(std::str::from_utf8(&bytes).unwrap()).unwrap();
            assert_eq!(back, ds);
            assert_eq!(back.to_jsonl().unwrap(), bytes);
        }
    }

    #[test]
    fn empty_dataset_is_manifest_only() {
        let bytes = dataset(0).to_jsonl().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("{\"manifest\":"));
    }

    #[test]
    fn record_fields_are_exact() {
        let bytes = dataset(1).to_jsonl().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let rec: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        let mut keys: Vec<_> = rec.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "example_id",
                "input",
                "pair_id",
                "seed",
                "src_lang",
                "target",
                "task",
                "template_id",
                "tgt_lang"
            ]
        );
    }

    #[test]
    fn truncation_is_a_schema_violation() {
        let bytes = dataset(3).to_jsonl().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        // cut inside the last record
        let cut = &text[..text.len() - 10];
        assert!(matches!(
            InstructionDataset::from_jsonl(cut),
            Err(Error::SchemaViolation { line: 4, .. })
        ));
        // cut on a line boundary: the record count no longer matches
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        let cut = lines[..3].concat();
        assert!(matches!(
            InstructionDataset::from_jsonl(&cut),
            Err(Error::SchemaViolation { line: 4, .. })
        ));
        assert!(matches!(
            InstructionDataset::from_jsonl(""),
            Err(Error::SchemaViolation { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_fields_and_bad_records_rejected() {
        let text = String::from_utf8(dataset(1).to_jsonl().unwrap()).unwrap();
        let extra = text.replacen("\"seed\"", "\"extra\":1,\"seed\"", 1);
        assert!(matches!(
            InstructionDataset::from_jsonl(&extra),
            Err(Error::SchemaViolation { line: 2, .. })
        ));
        let empty_target = text.replacen("\"target\":\"kalimat 0 \\\"é\\\"\"", "\"target\":\"\"", 1);
        assert_ne!(empty_target, text);
        assert!(matches!(
            InstructionDataset::from_jsonl(&empty_target),
            Err(Error::SchemaViolation { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut a = example(0);
        a.pair_id = 9;
        assert!(InstructionDataset::new(vec![example(0), a], Manifest::default()).is_err());
    }

    #[test]
    fn imports_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("old.tsv");
        std::fs::write(&p, "input\ttarget\ncopy: ab\tab\n\nsay hi\thi\n").unwrap();
        let ds = import_tsv(&p, LanguageTag::new("eng").unwrap()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples[1].input, "say hi");
        assert!(ds.examples.iter().all(|e| e.task == Task::Replay));

        std::fs::write(&p, "one column\n").unwrap();
        assert!(matches!(
            import_tsv(&p, LanguageTag::new("eng").unwrap()),
            Err(Error::SchemaViolation { line: 1, .. })
        ));
    }
}
