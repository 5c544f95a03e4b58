//! Deterministic assembly of evaluation prompts (full protocol plus the
//! three ablation variants) and the candidate-generation prompt.
//!
//! Prompt text lives in `resources/prompts/` as versioned files embedded at
//! compile time; `manifest.json` maps each variant to the files that fill
//! the `{ROLE}`, `{LAYERS}`, `{STATUTE}`, `{RUBRIC}` and `{OUTPUT_FORMAT}`
//! slots of the system frame. The `statute.txt` and `rubric.txt` entries are
//! placeholders resolved from the caller-supplied [`StatutoryConstraints`]
//! and [`RubricSet`]; the defaults parse those same files, so default calls
//! reproduce the resource bytes.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{GeneratedDescription, SourcePaper};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("length budget too small: need at least {needed} chars, have {available}")]
    BudgetTooSmall { needed: usize, available: usize },
    #[error("{what} is empty")]
    EmptyText { what: &'static str },
    #[error("variant `{0}` is not an evaluation variant")]
    NotAnEvaluationVariant(&'static str),
}

/// Judge prompt configuration: the full protocol or one ablation, plus the
/// drafting prompt used for candidate generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    /// Persona, three analysis layers, statutory constraints, four scores.
    Full,
    /// Layers and statutory constraints replaced by a generic
    /// step-by-step instruction.
    NoColt,
    /// Examiner/PHOSITA persona removed; layers kept.
    NoPersona,
    /// One holistic score instead of the four dimensions.
    NoDecomposition,
    /// Drafting prompt for producing a candidate description.
    Generation,
}

impl PromptVariant {
    pub const EVALUATION: [PromptVariant; 4] = [
        PromptVariant::Full,
        PromptVariant::NoColt,
        PromptVariant::NoPersona,
        PromptVariant::NoDecomposition,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PromptVariant::Full => "full",
            PromptVariant::NoColt => "no_colt",
            PromptVariant::NoPersona => "no_persona",
            PromptVariant::NoDecomposition => "no_decomposition",
            PromptVariant::Generation => "generation",
        }
    }

    /// Whether parsed output carries the four dimension scores (true) or a
    /// single holistic score (false).
    pub fn is_dimensional(self) -> bool {
        !matches!(self, PromptVariant::NoDecomposition)
    }

    /// Whether the prompt instructs the three-layer reasoning trace.
    pub fn has_layers(self) -> bool {
        matches!(
            self,
            PromptVariant::Full | PromptVariant::NoPersona | PromptVariant::NoDecomposition
        )
    }
}

/// Verbatim legal-requirement clauses injected into the system prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatutoryConstraints {
    pub clauses: Vec<String>,
}

impl Default for StatutoryConstraints {
    fn default() -> Self {
        Self {
            clauses: resource("statute.txt")
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
        }
    }
}

/// 5-point rubric: score level to verbatim descriptor text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricSet {
    pub levels: BTreeMap<u8, String>,
}

const LEVEL_NAMES: [(u8, &str); 5] = [
    (5, "Professional"),
    (4, "High Quality"),
    (3, "Acceptable"),
    (2, "Mediocre"),
    (1, "Fatal"),
];

impl Default for RubricSet {
    fn default() -> Self {
        let mut levels = BTreeMap::new();
        for line in resource("rubric.txt").lines() {
            if let Some(rest) = line.strip_prefix("Score ") {
                let (level, text) = rest.split_once("): ").expect("rubric line shape");
                let level: u8 = level
                    .split_once(" (")
                    .expect("rubric level shape")
                    .0
                    .parse()
                    .expect("rubric level digit");
                levels.insert(level, text.to_string());
            }
        }
        debug_assert_eq!(levels.len(), 5);
        Self { levels }
    }
}

impl RubricSet {
    fn render(&self) -> String {
        LEVEL_NAMES
            .iter()
            .map(|(level, name)| format!("Score {level} ({name}): {}", self.levels[level]))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Character budget for the user message carrying both documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBudget {
    pub max_user_chars: usize,
}

impl Default for LengthBudget {
    fn default() -> Self {
        Self {
            max_user_chars: 120_000,
        }
    }
}

/// Smallest per-document keep when truncating.
pub const MIN_DOC_KEEP_CHARS: usize = 64;

const TRUNCATION_MARKER: &str = "\n[TRUNCATED]";

/// A fully rendered prompt, hashed for caching and reproducibility checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub variant: PromptVariant,
    /// Hex SHA-256 over length-framed (system_text, user_text).
    pub content_hash: String,
}

impl PromptBundle {
    fn new(system_text: String, user_text: String, variant: PromptVariant) -> Self {
        let content_hash = hash_texts(&system_text, &user_text);
        Self {
            system_text,
            user_text,
            variant,
            content_hash,
        }
    }
}

fn hash_texts(system: &str, user: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((system.len() as u64).to_le_bytes());
    hasher.update(system.as_bytes());
    hasher.update((user.len() as u64).to_le_bytes());
    hasher.update(user.as_bytes());
    hex::encode(hasher.finalize())
}

// --- embedded resources -----------------------------------------------------

macro_rules! prompt_resources {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../resources/prompts/", $name)))),*]
    };
}

static RESOURCES: &[(&str, &str)] = prompt_resources![
    "system_frame.txt",
    "user_frame.txt",
    "role_persona.txt",
    "role_task.txt",
    "layers_colt.txt",
    "layers_generic.txt",
    "statute_header.txt",
    "statute.txt",
    "rubric_header_dimensional.txt",
    "rubric_header_holistic.txt",
    "rubric.txt",
    "output_dimensional.txt",
    "output_holistic.txt",
    "generation_system.txt",
    "format_reminder.txt",
];

fn resource(name: &str) -> &'static str {
    RESOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("unknown prompt resource `{name}`"))
        .1
}

#[derive(Debug, Deserialize)]
struct Manifest {
    variants: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

fn manifest() -> &'static Manifest {
    static MANIFEST: OnceLock<Manifest> = OnceLock::new();
    MANIFEST.get_or_init(|| {
        serde_json::from_str(include_str!("../resources/prompts/manifest.json"))
            .expect("manifest.json parses")
    })
}

// --- prompt assembly ---------------------------------------------------------

/// Render the system and user texts for one evaluation call.
///
/// The user text embeds the full paper (R) and the generated description
/// (D_gen) under labeled delimiters; when the pair exceeds the budget, both
/// documents are truncated from the tail proportionally to their lengths and
/// marked `[TRUNCATED]`.
pub fn build_evaluation_prompt(
    variant: PromptVariant,
    paper: &SourcePaper,
    description: &GeneratedDescription,
    rubric: &RubricSet,
    law: &StatutoryConstraints,
    limits: LengthBudget,
) -> Result<PromptBundle, PromptError> {
    if variant == PromptVariant::Generation {
        return Err(PromptError::NotAnEvaluationVariant(variant.label()));
    }
    let paper_text = paper.full_text();
    let desc_text = description.full_text();
    if paper_text.trim().is_empty() {
        return Err(PromptError::EmptyText {
            what: "source paper text",
        });
    }
    if desc_text.trim().is_empty() {
        return Err(PromptError::EmptyText {
            what: "generated description text",
        });
    }

    let system_text = render_system(variant, rubric, law);
    let user_text = render_user(&paper_text, &desc_text, limits)?;
    Ok(PromptBundle::new(system_text, user_text, variant))
}

fn render_system(variant: PromptVariant, rubric: &RubricSet, law: &StatutoryConstraints) -> String {
    let fills = &manifest().variants[variant.label()];
    let mut text = resource("system_frame.txt").to_string();
    for (slot, pieces) in fills {
        let rendered: Vec<String> = pieces
            .iter()
            .map(|piece| match piece.as_str() {
                "statute.txt" => law
                    .clauses
                    .iter()
                    .map(|c| format!("- {c}"))
                    .collect::<Vec<_>>()
                    .join("\n"),
                "rubric.txt" => rubric.render(),
                name => resource(name).trim_end().to_string(),
            })
            .collect();
        text = text.replace(&format!("{{{slot}}}"), &rendered.join("\n"));
    }
    normalize_blank_runs(&text)
}

fn render_user(paper_text: &str, desc_text: &str, limits: LengthBudget) -> Result<String, PromptError> {
    let frame = resource("user_frame.txt");
    let overhead = frame.replace("{R}", "").replace("{DGEN}", "").chars().count();
    let marker_chars = TRUNCATION_MARKER.chars().count();
    let available = limits.max_user_chars.saturating_sub(overhead);

    let r_len = paper_text.chars().count();
    let d_len = desc_text.chars().count();

    let (r_out, d_out) = if r_len + d_len <= available {
        (paper_text.to_string(), desc_text.to_string())
    } else {
        let usable = available.saturating_sub(2 * marker_chars);
        // documents already shorter than the floor are kept whole
        let floor_r = MIN_DOC_KEEP_CHARS.min(r_len);
        let floor_d = MIN_DOC_KEEP_CHARS.min(d_len);
        if usable < floor_r + floor_d {
            return Err(PromptError::BudgetTooSmall {
                needed: overhead + 2 * marker_chars + floor_r + floor_d,
                available: limits.max_user_chars,
            });
        }
        let mut alloc_r = (usable * r_len / (r_len + d_len)).clamp(floor_r, r_len);
        let alloc_d = (usable.saturating_sub(alloc_r)).clamp(floor_d, d_len);
        if alloc_r + alloc_d > usable {
            alloc_r = usable - alloc_d;
        }
        (
            truncate_tail(paper_text, alloc_r, r_len),
            truncate_tail(desc_text, alloc_d, d_len),
        )
    };

    Ok(frame.replace("{R}", &r_out).replace("{DGEN}", &d_out))
}

fn truncate_tail(text: &str, keep_chars: usize, total_chars: usize) -> String {
    if keep_chars >= total_chars {
        return text.to_string();
    }
    let mut kept: String = text.chars().take(keep_chars).collect();
    kept.push_str(TRUNCATION_MARKER);
    kept
}

fn normalize_blank_runs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut newline_run = 0usize;
    for c in text.chars() {
        if c == '\n' {
            newline_run += 1;
            if newline_run <= 2 {
                out.push(c);
            }
        } else {
            newline_run = 0;
            out.push(c);
        }
    }
    let trimmed = out.trim_end_matches('\n');
    format!("{trimmed}\n")
}

/// Render the drafting prompt that produces a candidate description with the
/// four mandatory sections. The paper travels verbatim; no truncation.
pub fn build_generation_prompt(paper: &SourcePaper) -> Result<PromptBundle, PromptError> {
    let text = paper.full_text();
    if paper.title.trim().is_empty() && paper.abstract_text.trim().is_empty() {
        return Err(PromptError::EmptyText {
            what: "paper title and abstract",
        });
    }
    let system_text = normalize_blank_runs(resource("generation_system.txt"));
    let user_text = format!("=== SOURCE PAPER (R) ===\n{text}");
    Ok(PromptBundle::new(
        system_text,
        user_text,
        PromptVariant::Generation,
    ))
}

/// Rebuild a bundle with a parse-failure reminder appended to the user text.
pub fn with_format_reminder(bundle: &PromptBundle) -> PromptBundle {
    let output = match bundle.variant {
        PromptVariant::NoDecomposition => resource("output_holistic.txt"),
        _ => resource("output_dimensional.txt"),
    };
    let reminder = resource("format_reminder.txt").replace("{OUTPUT_FORMAT}", output.trim_end());
    let user_text = format!("{}\n\n{}", bundle.user_text.trim_end(), reminder.trim_end());
    PromptBundle::new(bundle.system_text.clone(), user_text, bundle.variant)
}
