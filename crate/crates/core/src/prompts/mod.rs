//! Instruction formats for multiple-choice items, the short-answer rewrite,
//! and mapping free-form output back to an option.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::QAItem;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatKind {
    ZeroShot,
    ShortAnswer,
    FewShot,
}

impl FormatKind {
    pub fn name(&self) -> &'static str {
        match self {
            FormatKind::ZeroShot => "zero_shot",
            FormatKind::ShortAnswer => "short_answer",
            FormatKind::FewShot => "few_shot",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "zero_shot" => Ok(FormatKind::ZeroShot),
            "short_answer" => Ok(FormatKind::ShortAnswer),
            "few_shot" => Ok(FormatKind::FewShot),
            other => Err(Error::Config(format!("unknown instruction format '{other}'"))),
        }
    }
}

fn default_exemplars() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionFormat {
    pub kind: FormatKind,
    /// Solved examples prepended by `few_shot`; ignored otherwise.
    #[serde(default = "default_exemplars")]
    pub exemplar_count: usize,
    /// Overrides the phrase derived from the item's subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_phrase: Option<String>,
}

impl InstructionFormat {
    pub fn new(kind: FormatKind) -> Self {
        Self {
            kind,
            exemplar_count: default_exemplars(),
            subject_phrase: None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Exemplars this format needs from the held-out pool.
    pub fn exemplars_needed(&self) -> usize {
        match self.kind {
            FormatKind::FewShot => self.exemplar_count,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == FormatKind::FewShot && self.exemplar_count == 0 {
            return Err(Error::Config("few_shot needs exemplar_count >= 1".into()));
        }
        Ok(())
    }
}

/// Prompt templates with `{question}`, `{choices}`, `{subject}`,
/// `{exemplars}` and `{number}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub zero_shot: String,
    pub short_answer: String,
    pub few_shot: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            zero_shot: "Q: {question}\nChoices: {choices}\nAnswer:".into(),
            short_answer: "Give a short answer to the following question about {subject}.\n{question}\nChoices: {choices}\nAnswer:".into(),
            few_shot: "The following are multiple-choice questions (with answers) about {subject}.\n{exemplars}Q{number}: {question} {choices}\nAnswer:".into(),
        }
    }
}

impl Templates {
    /// Defaults, overridden by `<kind>.txt` files present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (kind, slot) in [
            (FormatKind::ZeroShot, &mut t.zero_shot),
            (FormatKind::ShortAnswer, &mut t.short_answer),
            (FormatKind::FewShot, &mut t.few_shot),
        ] {
            let path = dir.join(format!("{}.txt", kind.name()));
            if path.exists() {
                *slot = fs::read_to_string(&path)
                    .map_err(|e| Error::io(&path, e))?
                    .trim_end_matches('\n')
                    .to_owned();
            }
        }
        Ok(t)
    }

    fn get(&self, kind: FormatKind) -> &str {
        match kind {
            FormatKind::ZeroShot => &self.zero_shot,
            FormatKind::ShortAnswer => &self.short_answer,
            FormatKind::FewShot => &self.few_shot,
        }
    }
}

/// `high_school_us_history` → `US history`, `world_religions` → `world religions`.
pub fn subject_phrase(subject: &str) -> String {
    let s = subject.strip_prefix("high_school_").unwrap_or(subject);
    s.split('_')
        .filter(|w| !w.is_empty())
        .map(|w| if w == "us" { "US".to_owned() } else { w.to_owned() })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn option_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

fn choices_text(kind: FormatKind, options: &[String]) -> String {
    match kind {
        FormatKind::ZeroShot => {
            let parts: Vec<String> = options
                .iter()
                .enumerate()
                .map(|(i, o)| format!("{}. {o}", option_letter(i)))
                .collect();
            format!("{}.", parts.join("; "))
        }
        FormatKind::ShortAnswer => format!("{}.", options.join(" / ")),
        FormatKind::FewShot => options
            .iter()
            .enumerate()
            .map(|(i, o)| format!("({}) {o}", option_letter(i)))
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Single-pass placeholder substitution; inserted values are never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if let Some((_, v)) = vars.iter().find(|(k, _)| *k == name) {
                    out.push_str(v);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

fn same_item(a: &QAItem, b: &QAItem) -> bool {
    (!a.id.is_empty() && a.id == b.id) || (a.question == b.question && a.options == b.options)
}

pub fn render_prompt(item: &QAItem, format: &InstructionFormat, exemplars: &[QAItem]) -> Result<String> {
    render_with(&Templates::default(), item, format, exemplars)
}

pub fn render_with(
    templates: &Templates,
    item: &QAItem,
    format: &InstructionFormat,
    exemplars: &[QAItem],
) -> Result<String> {
    item.validate()?;
    let subject = format
        .subject_phrase
        .clone()
        .unwrap_or_else(|| subject_phrase(&item.subject));
    let mut exemplar_text = String::new();
    if format.kind == FormatKind::FewShot {
        if exemplars.len() != format.exemplar_count {
            return Err(Error::Argument(format!(
                "few_shot expects {} exemplars, got {}",
                format.exemplar_count,
                exemplars.len()
            )));
        }
        for (i, ex) in exemplars.iter().enumerate() {
            if same_item(ex, item) {
                return Err(Error::Contamination(format!(
                    "item '{}' appears among its own exemplars",
                    item.id
                )));
            }
            ex.validate()?;
            exemplar_text.push_str(&format!(
                "Q{}: {} {}\nAnswer: {}. {}\n",
                i + 1,
                ex.question,
                choices_text(FormatKind::FewShot, &ex.options),
                option_letter(ex.gold_index),
                ex.gold()
            ));
        }
    }
    let choices = choices_text(format.kind, &item.options);
    let number = (exemplars.len() + 1).to_string();
    let exemplar_count = if format.kind == FormatKind::FewShot { exemplars.len() } else { 0 };
    let number = if exemplar_count == 0 { "1".to_owned() } else { number };
    Ok(fill(
        templates.get(format.kind),
        &[
            ("question", &item.question),
            ("choices", &choices),
            ("subject", &subject),
            ("exemplars", &exemplar_text),
            ("number", &number),
        ],
    ))
}

fn letter_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\(([A-Za-z])\)|([A-Za-z])[.):])\s+").unwrap())
}

/// Strip a leading `A.` / `(A)` / `A)` / `A:` marker when its letter matches
/// the option's position.
fn strip_letter(option: &str, position: usize) -> &str {
    if let Some(c) = letter_prefix().captures(option) {
        let letter = c.get(1).or_else(|| c.get(2)).unwrap().as_str();
        if letter.eq_ignore_ascii_case(&option_letter(position).to_string()) {
            return option[c.get(0).unwrap().end()..].trim_end();
        }
    }
    option
}

/// Drop lettered option markers while keeping the answer texts, and remove an
/// inline `(A) .. (B) ..` option list from the question when it repeats the
/// options. Idempotent; `gold_index` is preserved.
pub fn to_short_answer(item: &QAItem) -> QAItem {
    let options: Vec<String> = item
        .options
        .iter()
        .enumerate()
        .map(|(i, o)| strip_letter(o, i).to_owned())
        .collect();
    let mut question = item.question.clone();
    if let Some(pos) = question.find("(A)") {
        static SPLIT: OnceLock<Regex> = OnceLock::new();
        let split = SPLIT.get_or_init(|| Regex::new(r"\s*\([A-Z]\)\s*").unwrap());
        let inline: Vec<String> = split
            .split(&question[pos..])
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_lowercase())
            .collect();
        let expected: Vec<String> = options.iter().map(|o| o.trim().to_lowercase()).collect();
        if inline == expected {
            question = question[..pos].trim_end().to_owned();
        }
    }
    QAItem {
        options,
        question,
        ..item.clone()
    }
}

fn normalize_answer(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn text_match(output: &str, options: &[String]) -> Option<usize> {
    let out = normalize_answer(output);
    if out.is_empty() {
        return None;
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, opt) in options.iter().enumerate() {
        let o = normalize_answer(opt);
        if o.is_empty() {
            continue;
        }
        let hit = out == o || (out.starts_with(&o) && out.as_bytes()[o.len()] == b' ');
        if hit && best.is_none_or(|(_, len)| o.len() > len) {
            best = Some((i, o.len()));
        }
    }
    best.map(|(i, _)| i)
}

/// Map generated text to an option: the longest option whose normalized text
/// starts the normalized output, else a leading letter marker (`B.`, `(B)`,
/// or a bare letter). `None` means the output did not follow the format.
pub fn parse_answer(output_text: &str, options: &[String]) -> Option<usize> {
    if let Some(i) = text_match(output_text, options) {
        return Some(i);
    }
    static BARE: OnceLock<Regex> = OnceLock::new();
    let bare = BARE.get_or_init(|| Regex::new(r"^\s*\(?([A-Za-z])\)?\s*[.]?\s*$").unwrap());
    let (letter, rest) = if let Some(c) = letter_prefix().captures(output_text) {
        let l = c.get(1).or_else(|| c.get(2)).unwrap().as_str();
        (l.to_owned(), &output_text[c.get(0).unwrap().end()..])
    } else {
        let c = bare.captures(output_text)?;
        (c[1].to_owned(), "")
    };
    if let Some(i) = text_match(rest, options) {
        return Some(i);
    }
    let idx = (letter.to_ascii_uppercase().as_bytes()[0] - b'A') as usize;
    (idx < options.len()).then_some(idx)
}
