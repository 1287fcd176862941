use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;
use crate::error::{Error, Result};
use crate::perturbation::{Granularity, Perturbed};
use crate::seed::sha256_hex;

const DEFAULT_TEMPLATES: &str = include_str!("../../data/default_templates.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "word")]
    CondDenoiseWord,
    #[serde(rename = "span")]
    CondDenoiseSpan,
    #[serde(rename = "mt")]
    MachineTranslation,
    #[serde(rename = "mono")]
    MonoDenoise,
    /// Past instruction data mixed back in during continual tuning.
    #[serde(rename = "replay")]
    Replay,
    /// Zero-shot classification prompts used by the evaluator.
    #[serde(rename = "classify")]
    Classification,
}

impl Task {
    pub const GENERATION: [Task; 4] = [
        Task::CondDenoiseWord,
        Task::CondDenoiseSpan,
        Task::MachineTranslation,
        Task::MonoDenoise,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Task::CondDenoiseWord => "word",
            Task::CondDenoiseSpan => "span",
            Task::MachineTranslation => "mt",
            Task::MonoDenoise => "mono",
            Task::Replay => "replay",
            Task::Classification => "classify",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        [
            Task::CondDenoiseWord,
            Task::CondDenoiseSpan,
            Task::MachineTranslation,
            Task::MonoDenoise,
            Task::Replay,
            Task::Classification,
        ]
        .into_iter()
        .find(|t| t.tag() == tag)
        .ok_or_else(|| Error::Invalid(format!("unknown task {tag:?}")))
    }

    pub fn is_generation(self) -> bool {
        Task::GENERATION.contains(&self)
    }

    pub fn is_cond_denoise(self) -> bool {
        matches!(self, Task::CondDenoiseWord | Task::CondDenoiseSpan)
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Task::CondDenoiseWord | Task::CondDenoiseSpan => &["src_text", "masked_text"],
            Task::MachineTranslation => &["src_text"],
            Task::MonoDenoise => &["masked_text"],
            Task::Classification => &["text"],
            Task::Replay => &[],
        }
    }

    fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            Task::CondDenoiseWord | Task::CondDenoiseSpan => {
                &["src_lang_name", "tgt_lang_name", "src_text", "masked_text"]
            }
            Task::MachineTranslation => &["src_lang_name", "tgt_lang_name", "src_text"],
            Task::MonoDenoise => &["tgt_lang_name", "masked_text"],
            Task::Classification => &["lang_name", "text"],
            Task::Replay => &[],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub template_id: String,
    pub task: Task,
    pub prompt_lang: LanguageTag,
    pub pattern: String,
    /// Where the phrasing comes from, e.g. `"table-1"` or `"invented"`.
    #[serde(default)]
    pub origin: String,
}

/// Byte ranges and names of `{name}` placeholders, where `name` is
/// `[a-z_]+`. Other braces are literal text.
fn placeholders(pattern: &str) -> Vec<(std::ops::Range<usize>, &str)> {
    let bytes = pattern.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' {
                out.push((i..j + 1, &pattern[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if matches!(self.task, Task::Replay) {
            return Err(Error::Invalid(format!(
                "template {} uses the replay task, which has no prompt",
                self.template_id
            )));
        }
        let found = placeholders(&self.pattern);
        for (_, name) in &found {
            if !self.task.allowed_placeholders().contains(name) {
                return Err(Error::UnknownPlaceholder {
                    template_id: self.template_id.clone(),
                    placeholder: format!("{{{name}}}"),
                });
            }
        }
        for required in self.task.required_placeholders() {
            if !found.iter().any(|(_, n)| n == required) {
                return Err(Error::MissingPlaceholder {
                    template_id: self.template_id.clone(),
                    placeholder: format!("{{{required}}}"),
                });
            }
        }
        Ok(())
    }

    fn fill(&self, value: impl Fn(&str) -> String) -> String {
        let mut out = String::with_capacity(self.pattern.len() + 64);
        let mut last = 0;
        for (range, name) in placeholders(&self.pattern) {
            out.push_str(&self.pattern[last..range.start]);
            out.push_str(&value(name));
            last = range.end;
        }
        out.push_str(&self.pattern[last..]);
        out
    }
}

/// Language display names, optionally localized per prompt language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayNames {
    #[serde(default)]
    pub display_names: BTreeMap<LanguageTag, String>,
    #[serde(default)]
    pub localized_display_names: BTreeMap<LanguageTag, BTreeMap<LanguageTag, String>>,
}

impl DisplayNames {
    pub fn name(&self, prompt_lang: &LanguageTag, lang: &LanguageTag) -> Result<&str> {
        self.localized_display_names
            .get(prompt_lang)
            .and_then(|m| m.get(lang))
            .or_else(|| self.display_names.get(lang))
            .map(String::as_str)
            .ok_or_else(|| Error::MissingDisplayName(lang.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    #[serde(flatten)]
    names: DisplayNames,
    templates: Vec<PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub names: DisplayNames,
    pub templates: Vec<PromptTemplate>,
    /// SHA-256 of the template file the set was parsed from.
    pub digest: String,
}

impl TemplateSet {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: TemplateFile = serde_json::from_slice(bytes)?;
        let mut ids = HashSet::new();
        for t in &file.templates {
            if !ids.insert(t.template_id.as_str()) {
                return Err(Error::DuplicateTemplateId(t.template_id.clone()));
            }
            t.validate()?;
        }
        Ok(TemplateSet {
            names: file.names,
            templates: file.templates,
            digest: sha256_hex(bytes),
        })
    }

    /// The template file shipped with the crate: three English and three
    /// Indonesian phrasings per generation task.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES.as_bytes()).expect("built-in templates are valid")
    }

    pub fn builtin_json() -> &'static str {
        DEFAULT_TEMPLATES
    }

    pub fn for_task(&self, task: Task) -> Vec<&PromptTemplate> {
        self.templates.iter().filter(|t| t.task == task).collect()
    }

    pub fn get(&self, template_id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.template_id == template_id)
    }

    pub fn require_tasks(&self, tasks: &[Task]) -> Result<()> {
        for &task in tasks {
            if self.for_task(task).is_empty() {
                return Err(Error::NoTemplateForTask(task.to_string()));
            }
        }
        Ok(())
    }
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<TemplateSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TemplateSet::from_json(&bytes)
}

/// Renders a conditional-denoising prompt, or a monolingual-denoising prompt
/// when `tpl` is a `mono` template.
pub fn render_cd(
    x: &str,
    perturbed: &Perturbed,
    tpl: &PromptTemplate,
    src_lang: &LanguageTag,
    tgt_lang: &LanguageTag,
    names: &DisplayNames,
) -> Result<String> {
    let expected = match tpl.task {
        Task::CondDenoiseWord => Some(Granularity::Word),
        Task::CondDenoiseSpan => Some(Granularity::Span),
        Task::MonoDenoise => None,
        other => {
            return Err(Error::TaskMismatch {
                template_id: tpl.template_id.clone(),
                expected: "word, span or mono".into(),
                found: other.to_string(),
            })
        }
    };
    if let Some(g) = expected {
        if g != perturbed.granularity {
            return Err(Error::GranularityMismatch {
                template_id: tpl.template_id.clone(),
                expected: g.as_str().into(),
                found: perturbed.granularity.as_str().into(),
            });
        }
    }
    let src_name = names.name(&tpl.prompt_lang, src_lang)?;
    let tgt_name = names.name(&tpl.prompt_lang, tgt_lang)?;
    Ok(tpl.fill(|name| match name {
        "src_lang_name" => src_name.to_string(),
        "tgt_lang_name" => tgt_name.to_string(),
        "src_text" => x.to_string(),
        "masked_text" => perturbed.masked_text.clone(),
        _ => unreachable!("validated placeholder"),
    }))
}

pub fn render_mt(
    x: &str,
    tpl: &PromptTemplate,
    src_lang: &LanguageTag,
    tgt_lang: &LanguageTag,
    names: &DisplayNames,
) -> Result<String> {
    if tpl.task != Task::MachineTranslation {
        return Err(Error::TaskMismatch {
            template_id: tpl.template_id.clone(),
            expected: Task::MachineTranslation.to_string(),
            found: tpl.task.to_string(),
        });
    }
    let src_name = names.name(&tpl.prompt_lang, src_lang)?;
    let tgt_name = names.name(&tpl.prompt_lang, tgt_lang)?;
    Ok(tpl.fill(|name| match name {
        "src_lang_name" => src_name.to_string(),
        "tgt_lang_name" => tgt_name.to_string(),
        "src_text" => x.to_string(),
        _ => unreachable!("validated placeholder"),
    }))
}

/// Renders a zero-shot classification prompt for `text` written in `lang`.
pub fn render_classify(text: &str, tpl: &PromptTemplate, lang: &LanguageTag, names: &DisplayNames) -> Result<String> {
    if tpl.task != Task::Classification {
        return Err(Error::TaskMismatch {
            template_id: tpl.template_id.clone(),
            expected: Task::Classification.to_string(),
            found: tpl.task.to_string(),
        });
    }
    let needs_name = placeholders(&tpl.pattern).iter().any(|(_, n)| *n == "lang_name");
    let lang_name = if needs_name {
        names.name(&tpl.prompt_lang, lang)?.to_string()
    } else {
        String::new()
    };
    Ok(tpl.fill(|name| match name {
        "lang_name" => lang_name.clone(),
        "text" => text.to_string(),
        _ => unreachable!("validated placeholder"),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{mask_span, tokenize};

    fn tag(s: &str) -> LanguageTag {
        LanguageTag::new(s).unwrap()
    }

    fn tpl(task: Task, pattern: &str) -> PromptTemplate {
        PromptTemplate {
            template_id: "t".into(),
            task,
            prompt_lang: tag("eng"),
            pattern: pattern.into(),
            origin: String::new(),
        }
    }

    #[test]
    fn builtin_has_three_per_language_per_task() {
        let set = TemplateSet::builtin();
        for task in Task::GENERATION {
            let ts = set.for_task(task);
            for lang in ["eng", "ind"] {
                let n = ts.iter().filter(|t| t.prompt_lang.as_str() == lang).count();
                assert_eq!(n, 3, "{task} {lang}");
            }
        }
        assert_eq!(set.digest, sha256_hex(TemplateSet::builtin_json().as_bytes()));
    }

    #[test]
    fn placeholder_scanner() {
        let p = placeholders("a {src_text} {x1} {} {masked_text}}");
        let names: Vec<_> = p.iter().map(|(_, n)| *n).collect();
        assert_eq!(names, vec!["src_text", "masked_text"]);
    }

    #[test]
    fn validation_errors() {
        let mt = tpl(Task::MachineTranslation, "translate {tgt_lang_name}");
        assert!(matches!(
            mt.validate(),
            Err(Error::MissingPlaceholder { placeholder, .. }) if placeholder == "{src_text}"
        ));
        assert!(matches!(
            tpl(Task::MachineTranslation, "").validate(),
            Err(Error::MissingPlaceholder { .. })
        ));
        assert!(matches!(
            tpl(Task::MonoDenoise, "{src_text} {masked_text}").validate(),
            Err(Error::UnknownPlaceholder { .. })
        ));
        assert!(tpl(Task::CondDenoiseWord, "{src_text} / {masked_text}")
            .validate()
            .is_ok());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let json = r#"{"display_names": {"eng": "English"}, "templates": [
            {"template_id": "a", "task": "mt", "prompt_lang": "eng", "pattern": "{src_text}"},
            {"template_id": "a", "task": "mono", "prompt_lang": "eng", "pattern": "{masked_text}"}]}"#;
        assert!(matches!(
            TemplateSet::from_json(json.as_bytes()),
            Err(Error::DuplicateTemplateId(id)) if id == "a"
        ));
    }

    #[test]
    fn require_tasks_reports_gap() {
        let json = r#"{"templates": [
            {"template_id": "a", "task": "mt", "prompt_lang": "eng", "pattern": "{src_text}"}]}"#;
        let set = TemplateSet::from_json(json.as_bytes()).unwrap();
        assert!(set.require_tasks(&[Task::MachineTranslation]).is_ok());
        assert!(matches!(
            set.require_tasks(&[Task::MachineTranslation, Task::CondDenoiseSpan]),
            Err(Error::NoTemplateForTask(t)) if t == "span"
        ));
    }

    #[test]
    fn renders_table_one_rows() {
        let set = TemplateSet::builtin();
        let cd = set.get("cd-span-eng-0").unwrap();
        let s = tokenize("Dia memakan dua buah mangga").unwrap();
        let p = mask_span(&s, 2, 3, Granularity::Span).unwrap();
        let out = render_cd("He eats two mangos", &p, cd, &tag("eng"), &tag("ind"), &set.names).unwrap();
        assert_eq!(
            out,
            "Given the English sentence \"He eats two mangos\", complete the following equivalent Indonesian sentence: \"Dia memakan _____\"."
        );

        let mt = set.get("mt-eng-0").unwrap();
        let out = render_mt("He eats two mangos", mt, &tag("eng"), &tag("ind"), &set.names).unwrap();
        assert_eq!(
            out,
            "What is the Indonesian translation of the following English sentence: \"He eats two mangos\""
        );
        assert_eq!(
            out,
            render_mt("He eats two mangos", mt, &tag("eng"), &tag("ind"), &set.names).unwrap()
        );
    }

    #[test]
    fn render_cd_checks_granularity_and_task() {
        let names = TemplateSet::builtin().names;
        let s = tokenize("Dia memakan dua buah mangga").unwrap();
        let word = mask_span(&s, 1, 1, Granularity::Word).unwrap();
        let span_tpl = tpl(Task::CondDenoiseSpan, "{src_text} {masked_text}");
        assert!(matches!(
            render_cd("x", &word, &span_tpl, &tag("eng"), &tag("ind"), &names),
            Err(Error::GranularityMismatch { .. })
        ));
        let mono = tpl(Task::MonoDenoise, "{masked_text}");
        assert_eq!(
            render_cd("x", &word, &mono, &tag("eng"), &tag("ind"), &names).unwrap(),
            word.masked_text
        );
        let mt = tpl(Task::MachineTranslation, "{src_text}");
        assert!(matches!(
            render_cd("x", &word, &mt, &tag("eng"), &tag("ind"), &names),
            Err(Error::TaskMismatch { .. })
        ));
        assert!(matches!(
            render_mt("x", &mono, &tag("eng"), &tag("ind"), &names),
            Err(Error::TaskMismatch { .. })
        ));
    }

    #[test]
    fn localized_names_take_precedence() {
        let set = TemplateSet::builtin();
        assert_eq!(set.names.name(&tag("ind"), &tag("eng")).unwrap(), "Inggris");
        assert_eq!(set.names.name(&tag("eng"), &tag("eng")).unwrap(), "English");
        assert!(matches!(
            set.names.name(&tag("eng"), &tag("zzz")),
            Err(Error::MissingDisplayName(_))
        ));
    }

    #[test]
    fn classification_rendering() {
        let names = TemplateSet::builtin().names;
        let t = tpl(
            Task::Classification,
            "What is the sentiment of this {lang_name} text? {text}",
        );
        assert_eq!(
            render_classify("enak", &t, &tag("sun"), &names).unwrap(),
            "What is the sentiment of this Sundanese text? enak"
        );
    }
}
