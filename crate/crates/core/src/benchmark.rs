//! Multiple-choice video QA datasets, duration buckets and prompt rendering.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::policy::Grid;

/// Instruction appended after the options.
pub const ANSWER_INSTRUCTION: &str = "Answer with the option's letter from the given choices directly.\n";

pub const PROMPT_READING_ORDER: &str = "You are given a sequence of images. Each image is a composite grid of video frames arranged in temporal order: panels are ordered from left to right, then top to bottom — like reading a book. Within each composite, the panels represent consecutive frames from the video. Across the sequence, the composites are shown in chronological order. When answering, interpret the full temporal sequence, not individual panels in isolation.";

pub const PROMPT_PANELS_AS_FRAMES: &str = "When answering, treat the panels as frames from one video, in order from left to right, then top to bottom.";

pub const PROMPT_GRID_LAYOUT: &str = "Each image is divided into {r} rows and {c} columns of panels. Read them in left-to-right top-to-bottom order as consecutive video frames. Answer with the option's letter from the given choices directly.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub item_id: String,
    pub video_uri: String,
    pub question: String,
    pub options: Vec<AnswerOption>,
    pub gold: char,
    pub duration_seconds: f64,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl QAItem {
    pub fn letters(&self) -> Vec<char> {
        self.options.iter().map(|o| o.letter).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Dataset(format!("item `{}`: {msg}", self.item_id)));
        if self.item_id.is_empty() {
            return err("empty id".into());
        }
        if !(2..=6).contains(&self.options.len()) {
            return err(format!("{} options, expected 2 to 6", self.options.len()));
        }
        for (i, opt) in self.options.iter().enumerate() {
            let expected = (b'A' + i as u8) as char;
            if opt.letter != expected {
                return err(format!(
                    "option {} has letter `{}`, expected `{expected}`",
                    i + 1,
                    opt.letter
                ));
            }
        }
        if !self.options.iter().any(|o| o.letter == self.gold) {
            return err(format!("gold `{}` is not an option letter", self.gold));
        }
        if !self.duration_seconds.is_finite() || self.duration_seconds < 0.0 {
            return err(format!("bad duration {}", self.duration_seconds));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    VmmeJson,
    TimeScopeJson,
    GenericJsonl,
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vmme" | "vmme_json" | "videomme" => Ok(DatasetFormat::VmmeJson),
            "timescope" | "timescope_json" => Ok(DatasetFormat::TimeScopeJson),
            "generic" | "jsonl" | "generic_jsonl" => Ok(DatasetFormat::GenericJsonl),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// One line of the generic JSONL schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GenericRecord {
    id: String,
    video: String,
    question: String,
    #[serde(default)]
    options: Vec<AnswerOption>,
    answer: Value,
    duration_s: f64,
    #[serde(default)]
    tags: Vec<String>,
}

impl GenericRecord {
    fn into_item(self) -> Result<QAItem> {
        let (options, gold) = match (&self.answer, self.options.is_empty()) {
            // true/false claims become two-option items
            (Value::Bool(b), true) => (
                vec![
                    AnswerOption { letter: 'A', text: "True".into() },
                    AnswerOption { letter: 'B', text: "False".into() },
                ],
                if *b { 'A' } else { 'B' },
            ),
            (Value::String(s), false) => (self.options, single_letter(s).ok_or_else(|| {
                Error::Dataset(format!("item `{}`: answer `{s}` is not a letter", self.id))
            })?),
            _ => {
                return Err(Error::Dataset(format!(
                    "item `{}`: answer must be a letter, or a boolean with no options",
                    self.id
                )))
            }
        };
        Ok(QAItem {
            item_id: self.id,
            video_uri: self.video,
            question: self.question,
            options,
            gold,
            duration_seconds: self.duration_s,
            tags: self.tags,
        })
    }

    fn from_item(item: &QAItem) -> Self {
        GenericRecord {
            id: item.item_id.clone(),
            video: item.video_uri.clone(),
            question: item.question.clone(),
            options: item.options.clone(),
            answer: Value::String(item.gold.to_string()),
            duration_s: item.duration_seconds,
            tags: item.tags.clone(),
        }
    }
}

fn single_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

/// Splits "A. text", "A) text" or "(A) text" into letter and text.
fn split_lettered(s: &str) -> Option<(char, String)> {
    let s = s.trim();
    let rest = s.strip_prefix('(').unwrap_or(s);
    let mut chars = rest.chars();
    let letter = chars.next().filter(|c| c.is_ascii_uppercase())?;
    let tail = chars.as_str();
    let tail = tail
        .strip_prefix('.')
        .or_else(|| tail.strip_prefix(')'))
        .or_else(|| tail.strip_prefix(':'))?;
    Some((letter, tail.trim().to_string()))
}

fn options_from_strings(id: &str, raw: &[Value]) -> Result<Vec<AnswerOption>> {
    raw.iter()
        .enumerate()
        .map(|(i, v)| {
            let s = v
                .as_str()
                .ok_or_else(|| Error::Dataset(format!("item `{id}`: option {i} is not a string")))?;
            let letter = (b'A' + i as u8) as char;
            let text = match split_lettered(s) {
                Some((l, t)) if l == letter => t,
                _ => s.trim().to_string(),
            };
            Ok(AnswerOption { letter, text })
        })
        .collect()
}

fn str_field<'a>(rec: &'a Value, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| rec.get(*n).and_then(Value::as_str))
}

fn id_field(rec: &Value, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| match rec.get(*n)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    })
}

/// Average durations of the VMME categories, used when a record has no
/// explicit `duration_s`.
fn vmme_category_seconds(category: &str) -> Option<f64> {
    match category {
        "short" => Some(80.0),
        "medium" => Some(500.0),
        "long" => Some(2500.0),
        _ => None,
    }
}

fn vmme_item(rec: &Value) -> Result<QAItem> {
    let id = id_field(rec, &["question_id", "id"])
        .ok_or_else(|| Error::Dataset(format!("record without question_id: {rec}")))?;
    let missing = |f: &str| Error::Dataset(format!("item `{id}`: missing `{f}`"));
    let video = str_field(rec, &["videoID", "video_id", "video"]).ok_or_else(|| missing("videoID"))?;
    let question = str_field(rec, &["question"]).ok_or_else(|| missing("question"))?;
    let options = options_from_strings(
        &id,
        rec.get("options").and_then(Value::as_array).ok_or_else(|| missing("options"))?,
    )?;
    let answer = str_field(rec, &["answer"]).ok_or_else(|| missing("answer"))?;
    let gold = single_letter(answer)
        .ok_or_else(|| Error::Dataset(format!("item `{id}`: answer `{answer}` is not a letter")))?;
    let duration = match rec.get("duration_s").and_then(Value::as_f64) {
        Some(d) => d,
        None => {
            let cat = str_field(rec, &["duration"]).ok_or_else(|| missing("duration"))?;
            vmme_category_seconds(cat)
                .ok_or_else(|| Error::Dataset(format!("item `{id}`: unknown duration `{cat}`")))?
        }
    };
    let tags = ["task_type", "domain", "sub_category"]
        .iter()
        .filter_map(|k| rec.get(*k).and_then(Value::as_str).map(str::to_string))
        .collect();
    Ok(QAItem {
        item_id: id,
        video_uri: video.to_string(),
        question: question.to_string(),
        options,
        gold,
        duration_seconds: duration,
        tags,
    })
}

fn timescope_item(rec: &Value) -> Result<QAItem> {
    let id = id_field(rec, &["id", "question_id"])
        .ok_or_else(|| Error::Dataset(format!("record without id: {rec}")))?;
    let missing = |f: &str| Error::Dataset(format!("item `{id}`: missing `{f}`"));
    let video = str_field(rec, &["video_path", "video", "video_id"]).ok_or_else(|| missing("video_path"))?;
    let question = str_field(rec, &["question"]).ok_or_else(|| missing("question"))?;
    let raw = rec
        .get("candidates")
        .or_else(|| rec.get("options"))
        .and_then(Value::as_array)
        .ok_or_else(|| missing("candidates"))?;
    let options = options_from_strings(&id, raw)?;
    let answer = str_field(rec, &["answer"]).ok_or_else(|| missing("answer"))?;
    let gold = single_letter(answer)
        .or_else(|| {
            options
                .iter()
                .find(|o| o.text == answer.trim())
                .map(|o| o.letter)
        })
        .ok_or_else(|| Error::Dataset(format!("item `{id}`: answer `{answer}` matches no candidate")))?;
    let duration = rec
        .get("duration")
        .or_else(|| rec.get("duration_s"))
        .and_then(Value::as_f64)
        .ok_or_else(|| missing("duration"))?;
    let tags = rec
        .get("task_type")
        .or_else(|| rec.get("task"))
        .and_then(Value::as_str)
        .map(|s| vec![s.to_string()])
        .unwrap_or_default();
    Ok(QAItem {
        item_id: id,
        video_uri: video.to_string(),
        question: question.to_string(),
        options,
        gold,
        duration_seconds: duration,
        tags,
    })
}

/// Accepts a JSON array or one JSON object per line.
fn json_records(text: &str) -> Result<Vec<Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| Error::Dataset(format!("invalid JSON array: {e}")));
    }
    jsonl_records(text)
}

fn jsonl_records(text: &str) -> Result<Vec<Value>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Dataset(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<Vec<QAItem>> {
    let items = match format {
        DatasetFormat::GenericJsonl => jsonl_records(text)?
            .into_iter()
            .enumerate()
            .map(|(n, v)| {
                let rec: GenericRecord = serde_json::from_value(v)
                    .map_err(|e| Error::Dataset(format!("line {}: {e}", n + 1)))?;
                rec.into_item()
            })
            .collect::<Result<Vec<_>>>()?,
        DatasetFormat::VmmeJson => json_records(text)?.iter().map(vmme_item).collect::<Result<_>>()?,
        DatasetFormat::TimeScopeJson => {
            json_records(text)?.iter().map(timescope_item).collect::<Result<_>>()?
        }
    };
    let mut seen = HashSet::new();
    for item in &items {
        item.validate()?;
        if !seen.insert(item.item_id.as_str()) {
            return Err(Error::Dataset(format!("duplicate item id `{}`", item.item_id)));
        }
    }
    Ok(items)
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<QAItem>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    parse_dataset(&text, format)
}

/// Canonical generic JSONL form.
pub fn to_generic_jsonl(items: &[QAItem]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&GenericRecord::from_item(item))?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Default,
    ReadingOrder,
    PanelsAsFrames,
    GridLayout,
    Custom(String),
}

impl FromStr for TemplateId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(TemplateId::Default),
            "p1" => Ok(TemplateId::ReadingOrder),
            "p2" => Ok(TemplateId::PanelsAsFrames),
            "p3" => Ok(TemplateId::GridLayout),
            other => Err(Error::Config(format!(
                "unknown template `{other}` (default|p1|p2|p3)"
            ))),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateId::Default => f.write_str("default"),
            TemplateId::ReadingOrder => f.write_str("p1"),
            TemplateId::PanelsAsFrames => f.write_str("p2"),
            TemplateId::GridLayout => f.write_str("p3"),
            TemplateId::Custom(_) => f.write_str("custom"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    BeforeQuestion,
    AfterQuestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub placement: Placement,
}

impl PromptTemplate {
    /// Template with its customary placement.
    pub fn new(id: TemplateId) -> Self {
        let placement = match id {
            TemplateId::GridLayout => Placement::AfterQuestion,
            _ => Placement::BeforeQuestion,
        };
        PromptTemplate { id, placement }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(TemplateId::Default)
    }
}

fn substitute_grid(text: &str, grid: Option<Grid>) -> Result<String> {
    if !text.contains("{r}") && !text.contains("{c}") {
        return Ok(text.to_string());
    }
    let g = grid.ok_or_else(|| Error::Template("template needs the panel grid ({r}, {c})".into()))?;
    Ok(text
        .replace("{r}", &g.rows.to_string())
        .replace("{c}", &g.cols.to_string()))
}

/// Question, lettered options, optional panel description and the answer
/// instruction, joined by newlines.
pub fn render_prompt(item: &QAItem, template: &PromptTemplate, grid: Option<Grid>) -> Result<String> {
    let mut body = item.question.clone();
    for opt in &item.options {
        body.push('\n');
        body.push(opt.letter);
        body.push_str(". ");
        body.push_str(&opt.text);
    }
    let (extra, instruction) = match &template.id {
        TemplateId::Default => (String::new(), Some(ANSWER_INSTRUCTION)),
        TemplateId::ReadingOrder => (PROMPT_READING_ORDER.to_string(), Some(ANSWER_INSTRUCTION)),
        TemplateId::PanelsAsFrames => (PROMPT_PANELS_AS_FRAMES.to_string(), Some(ANSWER_INSTRUCTION)),
        // already ends with the answer instruction
        TemplateId::GridLayout => (substitute_grid(PROMPT_GRID_LAYOUT, grid)? + "\n", None),
        TemplateId::Custom(text) => (substitute_grid(text, grid)?, None),
    };
    let parts: Vec<&str> = match template.placement {
        Placement::BeforeQuestion => vec![&extra, &body],
        Placement::AfterQuestion => vec![&body, &extra],
    };
    let mut out = parts
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    if let Some(instr) = instruction {
        out.push('\n');
        out.push_str(instr);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub name: String,
    /// Inclusive upper bound; `None` for the last, unbounded bucket.
    pub max_seconds: Option<f64>,
}

/// Named duration ranges partitioning `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationBuckets {
    pub buckets: Vec<Bucket>,
}

/// Nominal TimeScope video lengths in seconds.
pub const TIMESCOPE_LENGTHS: [f64; 13] = [
    60.0, 120.0, 180.0, 300.0, 600.0, 1200.0, 1800.0, 3600.0, 7200.0, 10800.0, 18000.0, 28800.0,
    36000.0,
];

impl DurationBuckets {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        let b = DurationBuckets { buckets };
        b.validate()?;
        Ok(b)
    }

    pub fn vmme() -> Self {
        let b = |name: &str, max| Bucket { name: name.into(), max_seconds: max };
        DurationBuckets {
            buckets: vec![b("short", Some(120.0)), b("medium", Some(1000.0)), b("long", None)],
        }
    }

    /// One bucket per nominal length; boundaries at the midpoints between lengths.
    pub fn timescope() -> Self {
        let buckets = TIMESCOPE_LENGTHS
            .iter()
            .enumerate()
            .map(|(i, &len)| Bucket {
                name: format!("{}s", len as u64),
                max_seconds: TIMESCOPE_LENGTHS.get(i + 1).map(|next| (len + next) / 2.0),
            })
            .collect();
        DurationBuckets { buckets }
    }

    pub fn single() -> Self {
        DurationBuckets {
            buckets: vec![Bucket { name: "all".into(), max_seconds: None }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.buckets.len();
        if n == 0 {
            return Err(Error::Config("no duration buckets".into()));
        }
        let mut names = HashSet::new();
        let mut prev = f64::NEG_INFINITY;
        for (i, b) in self.buckets.iter().enumerate() {
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("duplicate bucket `{}`", b.name)));
            }
            match (b.max_seconds, i + 1 == n) {
                (None, true) => {}
                (Some(m), false) if m.is_finite() && m >= 0.0 && m > prev => prev = m,
                _ => {
                    return Err(Error::Config(
                        "bucket bounds must increase and only the last may be unbounded".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn bucket_of(&self, duration_seconds: f64) -> &str {
        self.buckets
            .iter()
            .find(|b| b.max_seconds.is_none_or(|m| duration_seconds <= m))
            .map(|b| b.name.as_str())
            .expect("last bucket is unbounded")
    }
}

/// Parses `vmme`, `timescope`, `all`, or `name:max,name:max,...,name`.
impl FromStr for DurationBuckets {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vmme" => return Ok(DurationBuckets::vmme()),
            "timescope" => return Ok(DurationBuckets::timescope()),
            "all" => return Ok(DurationBuckets::single()),
            _ => {}
        }
        let buckets = s
            .split(',')
            .map(|part| match part.split_once(':') {
                Some((name, max)) => max
                    .trim()
                    .parse::<f64>()
                    .map(|m| Bucket { name: name.trim().into(), max_seconds: Some(m) })
                    .map_err(|_| Error::Config(format!("bad bucket bound `{part}`"))),
                None => Ok(Bucket { name: part.trim().into(), max_seconds: None }),
            })
            .collect::<Result<Vec<_>>>()?;
        DurationBuckets::new(buckets)
    }
}

/// Groups items by bucket, in bucket order; empty buckets are omitted.
pub fn bucket_items<'a>(items: &'a [QAItem], buckets: &DurationBuckets) -> IndexMap<String, Vec<&'a QAItem>> {
    let mut out: IndexMap<String, Vec<&QAItem>> = IndexMap::new();
    for b in &buckets.buckets {
        let members: Vec<&QAItem> = items
            .iter()
            .filter(|it| buckets.bucket_of(it.duration_seconds) == b.name)
            .collect();
        if !members.is_empty() {
            out.insert(b.name.clone(), members);
        }
    }
    out
}
