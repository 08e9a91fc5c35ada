// SPDX-License-Identifier: Apache-2.0

//! The atomic learning-objective taxonomy.
//!
//! A taxonomy is an ordered list of [`LearningObjective`]s loaded from a JSON
//! array. File order is the canonical order everywhere downstream (prompts,
//! reports, exports). Once loaded a [`Taxonomy`] is immutable.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("invalid LO code format: {0:?}")]
    InvalidCodeFormat(String),
    #[error("duplicate LO code {0}")]
    DuplicateCode(LOCode),
    #[error("entry {index}: missing or empty field `{field}`")]
    MissingField { index: usize, field: &'static str },
    #[error("entry {index}: unknown action {value:?}")]
    UnknownAction { index: usize, value: String },
    #[error("entry {index}: unknown category {value:?}")]
    UnknownCategory { index: usize, value: String },
    #[error("entry {index}: invalid code: {source}")]
    BadCode {
        index: usize,
        #[source]
        source: Box<TaxonomyError>,
    },
    #[error("LO name {name:?} is used with different {what} ({first:?} vs {second:?})")]
    InconsistentName {
        name: String,
        what: &'static str,
        first: String,
        second: String,
    },
    #[error("unknown chapter {0:?}")]
    UnknownChapter(String),
    #[error("malformed taxonomy document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifier of one atomic LO, e.g. `ME-KE-2` (topic `ME`, concept `KE`,
/// second objective).
///
/// Grammar: `[A-Z]+-[A-Z0-9]+-[1-9][0-9]*`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LOCode {
    topic: String,
    concept: String,
    index: u32,
}

impl LOCode {
    pub fn new(topic: &str, concept: &str, index: u32) -> Result<Self, TaxonomyError> {
        let bad = || TaxonomyError::InvalidCodeFormat(format!("{topic}-{concept}-{index}"));
        if !is_topic(topic) || !is_concept(concept) || index == 0 {
            return Err(bad());
        }
        Ok(Self {
            topic: topic.to_owned(),
            concept: concept.to_owned(),
            index,
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn concept(&self) -> &str {
        &self.concept
    }

    pub fn index(&self) -> u32 {
        self.index
    }
}

fn is_topic(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase())
}

fn is_concept(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

/// Parses the canonical `topic-concept-index` form.
pub fn parse_lo_code(text: &str) -> Result<LOCode, TaxonomyError> {
    let bad = || TaxonomyError::InvalidCodeFormat(text.to_owned());
    let mut parts = text.split('-');
    let (Some(topic), Some(concept), Some(index), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(bad());
    };
    if !is_topic(topic) || !is_concept(concept) {
        return Err(bad());
    }
    let digits = index.as_bytes();
    if digits.is_empty() || digits[0] == b'0' || !digits.iter().all(u8::is_ascii_digit) {
        return Err(bad());
    }
    let index: u32 = index.parse().map_err(|_| bad())?;
    Ok(LOCode {
        topic: topic.to_owned(),
        concept: concept.to_owned(),
        index,
    })
}

impl FromStr for LOCode {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_lo_code(s)
    }
}

impl fmt::Display for LOCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.topic, self.concept, self.index)
    }
}

impl Serialize for LOCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LOCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_lo_code(&s).map_err(serde::de::Error::custom)
    }
}

/// Lowercased alphanumerics only; used for lenient enum parsing.
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

macro_rules! string_enum_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

/// The cognitive process an LO asks of the student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActionType {
    ConcID,
    ConcProp,
    ProcApp,
    RepMap,
}

impl ActionType {
    pub const ALL: [ActionType; 4] = [Self::ConcID, Self::ConcProp, Self::ProcApp, Self::RepMap];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ConcID => "Conc.ID",
            Self::ConcProp => "Conc.Prop",
            Self::ProcApp => "Proc.App",
            Self::RepMap => "Rep.Map",
        }
    }
}

impl FromStr for ActionType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "concid" | "conceptidentification" => Ok(Self::ConcID),
            "concprop" | "conceptproperty" => Ok(Self::ConcProp),
            "procapp" | "procedureapplication" => Ok(Self::ProcApp),
            "repmap" | "representationmapping" => Ok(Self::RepMap),
            _ => Err(format!("unknown action {s:?}")),
        }
    }
}

string_enum_serde!(ActionType);

/// Category of an LO name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LOCategory {
    PhysicsLaws,
    Representations,
    SpecialCases,
}

impl LOCategory {
    pub const ALL: [LOCategory; 3] = [Self::PhysicsLaws, Self::Representations, Self::SpecialCases];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PhysicsLaws => "Physics Laws",
            Self::Representations => "Representations",
            Self::SpecialCases => "Special Cases",
        }
    }
}

impl FromStr for LOCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "physics" | "physicslaw" | "physicslaws" => Ok(Self::PhysicsLaws),
            "representation" | "representations" => Ok(Self::Representations),
            "specialcase" | "specialcases" => Ok(Self::SpecialCases),
            _ => Err(format!("unknown category {s:?}")),
        }
    }
}

string_enum_serde!(LOCategory);

/// Trims and collapses internal whitespace. LO names are compared in this form.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningObjective {
    pub code: LOCode,
    pub name: String,
    pub item: String,
    pub action: ActionType,
    pub provided: String,
    pub outcome: String,
    pub category: LOCategory,
    pub chapter: String,
}

#[derive(Deserialize)]
struct RawEntry {
    code: Option<String>,
    name: Option<String>,
    item: Option<String>,
    action: Option<String>,
    provided: Option<String>,
    outcome: Option<String>,
    category: Option<String>,
    chapter: Option<String>,
}

impl RawEntry {
    fn into_lo(self, index: usize) -> Result<LearningObjective, TaxonomyError> {
        fn req(v: Option<String>, index: usize, field: &'static str) -> Result<String, TaxonomyError> {
            match v {
                Some(s) if !s.trim().is_empty() => Ok(s),
                _ => Err(TaxonomyError::MissingField { index, field }),
            }
        }
        let code = req(self.code, index, "code")?;
        let name = req(self.name, index, "name")?;
        let item = req(self.item, index, "item")?;
        let action = req(self.action, index, "action")?;
        let provided = req(self.provided, index, "provided")?;
        let outcome = req(self.outcome, index, "outcome")?;
        let category = req(self.category, index, "category")?;
        let chapter = req(self.chapter, index, "chapter")?;

        let code = parse_lo_code(code.trim()).map_err(|e| TaxonomyError::BadCode {
            index,
            source: Box::new(e),
        })?;
        let action = action
            .parse()
            .map_err(|_| TaxonomyError::UnknownAction { index, value: action })?;
        let category = category
            .parse()
            .map_err(|_| TaxonomyError::UnknownCategory { index, value: category })?;
        Ok(LearningObjective {
            code,
            name: normalize_name(&name),
            item,
            action,
            provided,
            outcome,
            category,
            chapter: chapter.trim().to_owned(),
        })
    }
}

/// Per-chapter counts, always recomputed from the LO collection.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterCounts {
    pub codes: usize,
    pub names: usize,
    pub actions: BTreeMap<ActionType, usize>,
    /// Counted over LO names, not codes.
    pub categories: BTreeMap<LOCategory, usize>,
}

#[derive(Clone, Debug)]
pub struct Taxonomy {
    los: Vec<LearningObjective>,
    by_code: HashMap<LOCode, usize>,
    by_name: BTreeMap<String, Vec<usize>>,
    chapters: Vec<String>,
    by_chapter: HashMap<String, Vec<usize>>,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.los == other.los
    }
}

impl Eq for Taxonomy {}

impl Taxonomy {
    /// Builds and validates a taxonomy from an ordered LO list.
    pub fn new(los: Vec<LearningObjective>) -> Result<Self, TaxonomyError> {
        let mut by_code = HashMap::with_capacity(los.len());
        let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut chapters = Vec::new();
        let mut by_chapter: HashMap<String, Vec<usize>> = HashMap::new();

        for (i, lo) in los.iter().enumerate() {
            if by_code.insert(lo.code.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateCode(lo.code.clone()));
            }
            let same_name = by_name.entry(lo.name.clone()).or_default();
            if let Some(&first) = same_name.first() {
                let first = &los[first];
                if first.chapter != lo.chapter {
                    return Err(TaxonomyError::InconsistentName {
                        name: lo.name.clone(),
                        what: "chapters",
                        first: first.chapter.clone(),
                        second: lo.chapter.clone(),
                    });
                }
                if first.category != lo.category {
                    return Err(TaxonomyError::InconsistentName {
                        name: lo.name.clone(),
                        what: "categories",
                        first: first.category.to_string(),
                        second: lo.category.to_string(),
                    });
                }
            }
            same_name.push(i);
            by_chapter
                .entry(lo.chapter.clone())
                .or_insert_with(|| {
                    chapters.push(lo.chapter.clone());
                    Vec::new()
                })
                .push(i);
        }

        Ok(Self {
            los,
            by_code,
            by_name,
            chapters,
            by_chapter,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, TaxonomyError> {
        let raw: Vec<RawEntry> = serde_json::from_str(text)?;
        let los = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.into_lo(i))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(los)
    }

    /// Canonical pretty-printed JSON form.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.los).expect("taxonomy serializes");
        s.push('\n');
        s
    }

    pub fn los(&self) -> &[LearningObjective] {
        &self.los
    }

    pub fn len(&self) -> usize {
        self.los.len()
    }

    pub fn is_empty(&self) -> bool {
        self.los.is_empty()
    }

    pub fn get(&self, code: &LOCode) -> Option<&LearningObjective> {
        self.by_code.get(code).map(|&i| &self.los[i])
    }

    pub fn contains(&self, code: &LOCode) -> bool {
        self.by_code.contains_key(code)
    }

    /// Position of `code` in file order.
    pub fn position(&self, code: &LOCode) -> Option<usize> {
        self.by_code.get(code).copied()
    }

    /// Chapters in order of first appearance.
    pub fn chapters(&self) -> &[String] {
        &self.chapters
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn los_named(&self, name: &str) -> Vec<&LearningObjective> {
        self.by_name
            .get(&normalize_name(name))
            .map(|ix| ix.iter().map(|&i| &self.los[i]).collect())
            .unwrap_or_default()
    }

    /// All LOs of `chapter`, in file order.
    pub fn subset_by_chapter(&self, chapter: &str) -> Result<Vec<&LearningObjective>, TaxonomyError> {
        self.by_chapter
            .get(chapter)
            .map(|ix| ix.iter().map(|&i| &self.los[i]).collect())
            .ok_or_else(|| TaxonomyError::UnknownChapter(chapter.to_owned()))
    }

    pub fn chapter_counts(&self, chapter: &str) -> ChapterCounts {
        let mut counts = ChapterCounts::default();
        let mut names: BTreeMap<&str, LOCategory> = BTreeMap::new();
        for lo in self.los.iter().filter(|lo| lo.chapter == chapter) {
            counts.codes += 1;
            *counts.actions.entry(lo.action).or_default() += 1;
            names.insert(&lo.name, lo.category);
        }
        counts.names = names.len();
        for category in names.values() {
            *counts.categories.entry(*category).or_default() += 1;
        }
        counts
    }

    /// Case-insensitive substring search over code, name and item.
    ///
    /// Results rank exact code matches first, then name matches, then item
    /// matches; ties keep file order. An empty query matches everything.
    pub fn search(&self, query: &SearchQuery) -> Vec<&LearningObjective> {
        let needle = query.text.trim().to_lowercase();
        let mut hits: Vec<((bool, bool, bool), usize)> = self
            .los
            .iter()
            .enumerate()
            .filter(|(_, lo)| {
                query.chapter.as_deref().is_none_or(|c| lo.chapter == c)
                    && query.category.is_none_or(|c| lo.category == c)
                    && query.action.is_none_or(|a| lo.action == a)
            })
            .filter_map(|(i, lo)| {
                let code = lo.code.to_string().to_lowercase();
                let exact = code == needle;
                let name = lo.name.to_lowercase().contains(&needle);
                let item = lo.item.to_lowercase().contains(&needle);
                (exact || name || item || code.contains(&needle)).then_some(((!exact, !name, !item), i))
            })
            .collect();
        hits.sort();
        hits.into_iter().map(|(_, i)| &self.los[i]).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchQuery {
    pub text: String,
    pub chapter: Option<String>,
    pub category: Option<LOCategory>,
    pub action: Option<ActionType>,
}

impl SearchQuery {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    Taxonomy::from_json_str(&text)
}

/// Expected counts for one chapter. Absent fields are not checked.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub actions: BTreeMap<ActionType, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub categories: BTreeMap<LOCategory, usize>,
}

/// Chapter name to expected counts.
pub type Manifest = BTreeMap<String, ChapterManifest>;

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, TaxonomyError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub chapter: String,
    pub quantity: String,
    pub expected: usize,
    pub actual: usize,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} expected {}, got {}",
            self.chapter, self.quantity, self.expected, self.actual
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mismatches: Vec<Mismatch>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares recomputed counts with a manifest. Mismatches are collected, not raised.
pub fn validate_against_manifest(t: &Taxonomy, manifest: &Manifest) -> ValidationReport {
    let mut mismatches = Vec::new();
    for (chapter, expected) in manifest {
        let actual = t.chapter_counts(chapter);
        let mut check = |quantity: String, expected: usize, actual: usize| {
            if expected != actual {
                mismatches.push(Mismatch {
                    chapter: chapter.clone(),
                    quantity,
                    expected,
                    actual,
                });
            }
        };
        if let Some(codes) = expected.codes {
            check("codes".into(), codes, actual.codes);
        }
        if let Some(names) = expected.names {
            check("names".into(), names, actual.names);
        }
        for (action, &n) in &expected.actions {
            let got = actual.actions.get(action).copied().unwrap_or(0);
            check(format!("action {action}"), n, got);
        }
        for (category, &n) in &expected.categories {
            let got = actual.categories.get(category).copied().unwrap_or(0);
            check(format!("category {category}"), n, got);
        }
    }
    ValidationReport { mismatches }
}

/// The fully populated manifest that `t` satisfies.
pub fn manifest_of(t: &Taxonomy) -> Manifest {
    t.chapters()
        .iter()
        .map(|chapter| {
            let c = t.chapter_counts(chapter);
            let actions = ActionType::ALL
                .iter()
                .map(|a| (*a, c.actions.get(a).copied().unwrap_or(0)))
                .collect();
            let categories = LOCategory::ALL
                .iter()
                .map(|k| (*k, c.categories.get(k).copied().unwrap_or(0)))
                .collect();
            (
                chapter.clone(),
                ChapterManifest {
                    codes: Some(c.codes),
                    names: Some(c.names),
                    actions,
                    categories,
                },
            )
        })
        .collect()
}
