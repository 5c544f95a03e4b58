//! Parsing judge responses into typed scores and reasoning traces, plus
//! score aggregation and the inverse renderer used as a mock/test fixture
//! generator.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::promptkit::PromptVariant;

/// The four scored dimensions, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Tcf,
    Dp,
    Sc,
    Lpc,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Tcf,
        Dimension::Dp,
        Dimension::Sc,
        Dimension::Lpc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Tcf => "TCF",
            Dimension::Dp => "DP",
            Dimension::Sc => "SC",
            Dimension::Lpc => "LPC",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Dimension::Tcf => 0,
            Dimension::Dp => 1,
            Dimension::Sc => 2,
            Dimension::Lpc => 3,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A score slot in the output template: one of the four dimensions, or the
/// holistic `Overall` slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreLabel {
    Dim(Dimension),
    Overall,
}

impl ScoreLabel {
    fn label(self) -> &'static str {
        match self {
            ScoreLabel::Dim(d) => d.label(),
            ScoreLabel::Overall => "Overall",
        }
    }
}

impl fmt::Display for ScoreLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The three reasoning layers of the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    TechnicalMapping,
    StatutoryCompliance,
    FormalConsistency,
}

impl Layer {
    pub const ALL: [Layer; 3] = [
        Layer::TechnicalMapping,
        Layer::StatutoryCompliance,
        Layer::FormalConsistency,
    ];

    pub fn heading(self) -> &'static str {
        match self {
            Layer::TechnicalMapping => "Technical Mapping",
            Layer::StatutoryCompliance => "Statutory Compliance",
            Layer::FormalConsistency => "Formal Consistency",
        }
    }

    /// Prefix used for tolerant heading recognition.
    fn fuzzy_prefix(self) -> &'static str {
        match self {
            Layer::TechnicalMapping => "technical mapping",
            Layer::StatutoryCompliance => "statutory",
            Layer::FormalConsistency => "formal",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no score found for {0}")]
    MissingScore(ScoreLabel),
    #[error("score for {0} is {1}, outside 1..=5")]
    RangeError(ScoreLabel, i64),
    #[error("score for {0} is `{1}`, not an integer")]
    NonIntegerScore(ScoreLabel, String),
    #[error("reasoning trace is missing the {0} layer")]
    MissingTrace(Layer),
    #[error("response is empty")]
    EmptyResponse,
}

/// The four dimension scores, each in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionScores {
    pub tcf: u8,
    pub dp: u8,
    pub sc: u8,
    pub lpc: u8,
}

impl DimensionScores {
    pub fn new(tcf: u8, dp: u8, sc: u8, lpc: u8) -> Self {
        let scores = Self { tcf, dp, sc, lpc };
        debug_assert!(scores.as_array().iter().all(|s| (1..=5).contains(s)));
        scores
    }

    pub fn get(&self, dim: Dimension) -> u8 {
        match dim {
            Dimension::Tcf => self.tcf,
            Dimension::Dp => self.dp,
            Dimension::Sc => self.sc,
            Dimension::Lpc => self.lpc,
        }
    }

    pub fn as_array(&self) -> [u8; 4] {
        [self.tcf, self.dp, self.sc, self.lpc]
    }
}

/// Text of the three reasoning layers extracted from a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub technical_mapping: String,
    pub statutory_compliance: String,
    pub formal_consistency: String,
}

impl ReasoningTrace {
    pub fn get(&self, layer: Layer) -> &str {
        match layer {
            Layer::TechnicalMapping => &self.technical_mapping,
            Layer::StatutoryCompliance => &self.statutory_compliance,
            Layer::FormalConsistency => &self.formal_consistency,
        }
    }
}

/// One parsed judge verdict: dimension scores or a holistic score, the
/// reasoning trace when the variant mandates layers, the final rationale,
/// and the raw response for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub item_id: String,
    pub variant: PromptVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<DimensionScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holistic: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<ReasoningTrace>,
    pub rationale: String,
    pub overall: f64,
    pub raw_response: String,
}

impl EvaluationRecord {
    /// Overall score per taxonomy: unweighted mean of the four dimensions,
    /// or the holistic score itself.
    pub fn overall_of(scores: Option<&DimensionScores>, holistic: Option<u8>) -> f64 {
        match (scores, holistic) {
            (Some(s), None) => overall_score(s),
            (None, Some(h)) => f64::from(h),
            _ => unreachable!("exactly one of scores/holistic must be present"),
        }
    }
}

/// Arithmetic mean of the four dimension scores.
pub fn overall_score(scores: &DimensionScores) -> f64 {
    let sum: u32 = scores.as_array().iter().map(|&s| u32::from(s)).sum();
    f64::from(sum) / 4.0
}

/// Outcome of tolerant response parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub scores: Option<DimensionScores>,
    pub holistic: Option<u8>,
    pub trace: Option<ReasoningTrace>,
    pub rationale: String,
    /// Some score label appeared more than once; the last occurrence won.
    pub restated_scores: bool,
}

/// Parse a raw judge response for the given variant.
///
/// Score labels are matched case-insensitively with optional brackets and
/// arbitrary spacing; when a label appears several times the last occurrence
/// wins. Layer sections are found by fuzzy heading prefixes. Only the full
/// variant treats a missing layer as an error; ablations that keep layers
/// degrade to `trace: None`.
pub fn parse_response(text: &str, variant: PromptVariant) -> Result<ParsedResponse, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::EmptyResponse);
    }

    let mut restated = false;
    let (scores, holistic) = if variant.is_dimensional() {
        let mut values = [0u8; 4];
        for dim in Dimension::ALL {
            let label = ScoreLabel::Dim(dim);
            let (value, repeated) = extract_score(text, label)?;
            values[dim.index()] = value;
            restated |= repeated;
        }
        (
            Some(DimensionScores::new(values[0], values[1], values[2], values[3])),
            None,
        )
    } else {
        let (value, repeated) = extract_score(text, ScoreLabel::Overall)?;
        restated |= repeated;
        (None, Some(value))
    };

    let trace = extract_trace(text);
    if variant == PromptVariant::Full {
        if let Err(layer) = &trace {
            return Err(ParseError::MissingTrace(*layer));
        }
    }

    Ok(ParsedResponse {
        scores,
        holistic,
        trace: trace.ok(),
        rationale: extract_rationale(text),
        restated_scores: restated,
    })
}

fn score_regex(label: &str) -> Regex {
    // e.g. "TCF: 4", "tcf = [ 4 ]", "** DP **: 3"
    Regex::new(&format!(
        r"(?i)\b{label}\b(?:\s*\*\*)?\s*[:=]\s*\[?\s*([+-]?\d+(?:\.\d+)?)\s*\]?"
    ))
    .expect("score regex compiles")
}

fn extract_score(text: &str, label: ScoreLabel) -> Result<(u8, bool), ParseError> {
    static REGEXES: OnceLock<Vec<(String, Regex)>> = OnceLock::new();
    let regexes = REGEXES.get_or_init(|| {
        ["TCF", "DP", "SC", "LPC", "Overall"]
            .iter()
            .map(|l| (l.to_string(), score_regex(l)))
            .collect()
    });
    let regex = &regexes
        .iter()
        .find(|(l, _)| l == label.label())
        .expect("known label")
        .1;

    let mut last: Option<String> = None;
    let mut count = 0usize;
    for capture in regex.captures_iter(text) {
        last = Some(capture[1].to_string());
        count += 1;
    }
    let raw = last.ok_or(ParseError::MissingScore(label))?;
    if raw.contains('.') {
        return Err(ParseError::NonIntegerScore(label, raw));
    }
    let value: i64 = raw
        .parse()
        .map_err(|_| ParseError::NonIntegerScore(label, raw.clone()))?;
    if !(1..=5).contains(&value) {
        return Err(ParseError::RangeError(label, value));
    }
    Ok((value as u8, count > 1))
}

/// A line that opens a layer section: optional list numbering or bullets,
/// then the fuzzy layer prefix, e.g. `2. Statutory Compliance Layer: ...`.
fn heading_layer(line: &str) -> Option<(Layer, &str)> {
    let trimmed = line
        .trim_start()
        .trim_start_matches(|c: char| c.is_ascii_digit())
        .trim_start_matches(['.', ')', '-', '*', ' '])
        .trim_start();
    let lower = trimmed.to_lowercase();
    for layer in Layer::ALL {
        let prefix = layer.fuzzy_prefix();
        let boundary_ok = lower.starts_with(prefix)
            && !lower[prefix.len()..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric());
        if boundary_ok {
            let rest = match trimmed.split_once(':') {
                Some((_, rest)) => rest.trim(),
                None => "",
            };
            return Some((layer, rest));
        }
    }
    None
}

fn is_scores_line(line: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*[-*]?\s*(?:\*\*)?scores?\b\s*(?:\*\*)?\s*[:=]").unwrap())
        .is_match(line)
}

fn is_rationale_line(line: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*[-*]?\s*(?:\*\*)?final\s+rationale\b").unwrap()
    })
    .is_match(line)
}

fn extract_trace(text: &str) -> Result<ReasoningTrace, Layer> {
    let mut sections: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if is_scores_line(line) || is_rationale_line(line) {
            current = None;
            continue;
        }
        if let Some((layer, rest)) = heading_layer(line) {
            let idx = layer as usize;
            sections[idx] = Some(rest.to_string());
            current = Some(idx);
            continue;
        }
        if let Some(idx) = current {
            let section = sections[idx].as_mut().expect("section opened");
            if !section.is_empty() {
                section.push('\n');
            }
            section.push_str(line);
        }
    }
    for layer in Layer::ALL {
        match &sections[layer as usize] {
            Some(s) if !s.trim().is_empty() => {}
            _ => return Err(layer),
        }
    }
    let take = |i: usize| sections[i].take().unwrap().trim().to_string();
    Ok(ReasoningTrace {
        technical_mapping: take(0),
        statutory_compliance: take(1),
        formal_consistency: take(2),
    })
}

fn extract_rationale(text: &str) -> String {
    let mut collecting = false;
    let mut out = String::new();
    for line in text.lines() {
        if is_rationale_line(line) {
            collecting = true;
            out.clear();
            if let Some((_, rest)) = line.split_once(':') {
                out.push_str(rest.trim_start());
            }
            continue;
        }
        if is_scores_line(line) {
            // a restated scores line ends the rationale block
            collecting = false;
            continue;
        }
        if collecting {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(line);
        }
    }
    out.trim().to_string()
}

/// Render a record back into the output template, such that
/// [`parse_response`] inverts it. Used to script mock judges and to drive
/// the parser round-trip property.
pub fn render_response(record: &EvaluationRecord) -> String {
    let mut out = String::from("- Reasoning Trace:\n");
    match &record.trace {
        Some(trace) => {
            for (i, layer) in Layer::ALL.iter().enumerate() {
                out.push_str(&format!(
                    "{}. {} Layer: {}\n",
                    i + 1,
                    layer.heading(),
                    trace.get(*layer)
                ));
            }
        }
        None => out.push_str("(free-form reasoning)\n"),
    }
    match (&record.scores, record.holistic) {
        (Some(s), None) => out.push_str(&format!(
            "- Scores: TCF: {}, DP: {}, SC: {}, LPC: {}\n",
            s.tcf, s.dp, s.sc, s.lpc
        )),
        (None, Some(h)) => out.push_str(&format!("- Scores: Overall: {h}\n")),
        _ => unreachable!("exactly one of scores/holistic must be present"),
    }
    out.push_str(&format!("- Final Rationale: {}\n", record.rationale));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELL_FORMED: &str = "\
- Reasoning Trace:
1. Technical Mapping Layer: The gating mechanism is renamed to a generic filtering unit; the relaxed-categorical sampler is omitted.
2. Statutory Compliance Layer: The coefficient is described only as \"an appropriate value\", so reproduction needs undue experimentation.
3. Formal Consistency Layer: Figure 3 is listed among the drawings but never described in the body text.
- Scores: TCF: 4, DP: 3, SC: 5, LPC: 4
- Final Rationale: Solid structure; the omitted sampler and vague coefficient cap data precision.";

    #[test]
    fn parses_well_formed_response() {
        let parsed = parse_response(WELL_FORMED, PromptVariant::Full).unwrap();
        let scores = parsed.scores.unwrap();
        assert_eq!(scores.as_array(), [4, 3, 5, 4]);
        assert!(parsed.holistic.is_none());
        let trace = parsed.trace.unwrap();
        assert!(trace.technical_mapping.contains("filtering unit"));
        assert!(trace.statutory_compliance.contains("undue experimentation"));
        assert!(trace.formal_consistency.contains("Figure 3"));
        assert!(parsed.rationale.starts_with("Solid structure"));
        assert!(!parsed.restated_scores);
    }

    #[test]
    fn out_of_range_score() {
        let text = "Scores: TCF: 7, DP: 3, SC: 5, LPC: 4";
        let err = parse_response(text, PromptVariant::NoColt).unwrap_err();
        assert_eq!(err, ParseError::RangeError(ScoreLabel::Dim(Dimension::Tcf), 7));
    }

    #[test]
    fn missing_dimension() {
        let text = "Scores: TCF: 4, DP: 3, SC: 5";
        let err = parse_response(text, PromptVariant::NoColt).unwrap_err();
        assert_eq!(err, ParseError::MissingScore(ScoreLabel::Dim(Dimension::Lpc)));
    }

    #[test]
    fn non_integer_score_rejected() {
        let text = "Scores: TCF: 4.5, DP: 3, SC: 5, LPC: 4";
        let err = parse_response(text, PromptVariant::NoColt).unwrap_err();
        assert_eq!(
            err,
            ParseError::NonIntegerScore(ScoreLabel::Dim(Dimension::Tcf), "4.5".into())
        );
    }

    #[test]
    fn prose_without_scores_line() {
        let text = "The description is generally faithful but lacks the sampler details.";
        let err = parse_response(text, PromptVariant::Full).unwrap_err();
        assert_eq!(err, ParseError::MissingScore(ScoreLabel::Dim(Dimension::Tcf)));
    }

    #[test]
    fn missing_layer_errors_only_for_full() {
        let text = "\
1. Technical Mapping Layer: ok
3. Formal Consistency Layer: ok
Scores: TCF: 4, DP: 3, SC: 5, LPC: 4
Final Rationale: fine";
        let err = parse_response(text, PromptVariant::Full).unwrap_err();
        assert_eq!(err, ParseError::MissingTrace(Layer::StatutoryCompliance));

        let parsed = parse_response(text, PromptVariant::NoPersona).unwrap();
        assert!(parsed.trace.is_none());
        assert_eq!(parsed.scores.unwrap().as_array(), [4, 3, 5, 4]);
    }

    #[test]
    fn holistic_variant() {
        let text = "Reasoning...\n- Scores: Overall: 3\n- Final Rationale: acceptable";
        let parsed = parse_response(text, PromptVariant::NoDecomposition).unwrap();
        assert_eq!(parsed.holistic, Some(3));
        assert!(parsed.scores.is_none());
    }

    #[test]
    fn tolerant_spacing_case_and_brackets() {
        let text = "scores : tcf :[ 4 ] , dp= 3\n SC: [5]\nlpc : 4\nfinal rationale: ok";
        let parsed = parse_response(text, PromptVariant::NoColt).unwrap();
        assert_eq!(parsed.scores.unwrap().as_array(), [4, 3, 5, 4]);
    }

    #[test]
    fn last_scores_line_wins_and_is_flagged() {
        let text = "\
Scores: TCF: 2, DP: 2, SC: 2, LPC: 2
Final Rationale: after review the scores are
Scores: TCF: 4, DP: 3, SC: 5, LPC: 4";
        let parsed = parse_response(text, PromptVariant::NoColt).unwrap();
        assert_eq!(parsed.scores.unwrap().as_array(), [4, 3, 5, 4]);
        assert!(parsed.restated_scores);
    }

    #[test]
    fn render_then_parse_round_trips() {
        let record = EvaluationRecord {
            item_id: "item-1".into(),
            variant: PromptVariant::Full,
            scores: Some(DimensionScores::new(4, 3, 5, 4)),
            holistic: None,
            trace: Some(ReasoningTrace {
                technical_mapping: "mapping notes".into(),
                statutory_compliance: "compliance notes".into(),
                formal_consistency: "consistency notes".into(),
            }),
            rationale: "brief justification".into(),
            overall: 4.0,
            raw_response: String::new(),
        };
        let text = render_response(&record);
        assert!(text.contains("TCF: 4"));
        assert!(text.contains("DP: 3"));
        assert!(text.contains("SC: 5"));
        assert!(text.contains("LPC: 4"));
        let parsed = parse_response(&text, PromptVariant::Full).unwrap();
        assert_eq!(parsed.scores, record.scores);
        assert_eq!(parsed.trace, record.trace);
        assert_eq!(parsed.rationale, record.rationale);
    }

    #[test]
    fn render_holistic() {
        let record = EvaluationRecord {
            item_id: "item-2".into(),
            variant: PromptVariant::NoDecomposition,
            scores: None,
            holistic: Some(3),
            trace: None,
            rationale: "single score".into(),
            overall: 3.0,
            raw_response: String::new(),
        };
        let text = render_response(&record);
        assert!(text.contains("Overall: 3"));
        for dim in Dimension::ALL {
            assert!(!text.contains(&format!("{}: ", dim.label())));
        }
        let parsed = parse_response(&text, PromptVariant::NoDecomposition).unwrap();
        assert_eq!(parsed.holistic, Some(3));
    }

    #[test]
    fn overall_score_examples() {
        assert_eq!(overall_score(&DimensionScores::new(5, 5, 5, 5)), 5.0);
        assert_eq!(overall_score(&DimensionScores::new(4, 3, 5, 2)), 3.5);
        assert_eq!(overall_score(&DimensionScores::new(1, 1, 1, 1)), 1.0);
        assert_eq!(overall_score(&DimensionScores::new(4, 3, 5, 4)), 4.0);
    }

    #[test]
    fn overall_score_permutation_invariant_and_bounded() {
        let perms = [
            [2u8, 3, 4, 5],
            [5, 4, 3, 2],
            [3, 2, 5, 4],
            [4, 5, 2, 3],
        ];
        let base = overall_score(&DimensionScores::new(2, 3, 4, 5));
        for p in perms {
            let s = DimensionScores::new(p[0], p[1], p[2], p[3]);
            let o = overall_score(&s);
            assert_eq!(o, base);
            assert!(o >= f64::from(*p.iter().min().unwrap()));
            assert!(o <= f64::from(*p.iter().max().unwrap()));
        }
    }
}
