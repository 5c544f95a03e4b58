//! Model invocation and orchestration: cached, retrying chat completion,
//! the end-to-end evaluate/generate operations, and order-preserving
//! bounded-concurrency batching.

pub mod cache;
pub mod mock;
pub mod provider;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GeneratedDescription, PaperPatentPair, Section, SourcePaper};
use crate::promptkit::{
    build_evaluation_prompt, build_generation_prompt, with_format_reminder, LengthBudget,
    PromptBundle, PromptError, PromptVariant, RubricSet, StatutoryConstraints,
};
use crate::verdict::{parse_response, EvaluationRecord, ParseError};

use cache::{cache_key, CompletionCache};
use provider::{ChatMessage, ChatProvider, ChatRequest, ProviderError};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: ProviderError },
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("provider refusal: {0}")]
    Refusal(String),
    #[error(transparent)]
    Provider(ProviderError),
    #[error("unparseable response (initial: {initial}; after repair: {after_repair})")]
    ParseFailed {
        initial: ParseError,
        after_repair: ParseError,
    },
    #[error("cache io: {0}")]
    Cache(#[from] std::io::Error),
}

/// Decoding and orchestration parameters for one model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub top_k: Option<u32>,
    pub top_p: Option<f64>,
    pub max_output_tokens: u32,
    pub retry_limit: u32,
    pub concurrency_limit: usize,
    /// Base backoff doubled per retry.
    pub retry_backoff_ms: u64,
    /// Character budget for the evaluation user message.
    pub prompt_budget_chars: usize,
    pub cache_dir: Option<PathBuf>,
}

impl ModelConfig {
    /// Judge preset: deterministic decoding.
    pub fn evaluation(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            top_k: None,
            top_p: None,
            max_output_tokens: 2048,
            retry_limit: 3,
            concurrency_limit: 4,
            retry_backoff_ms: 250,
            prompt_budget_chars: LengthBudget::default().max_user_chars,
            cache_dir: None,
        }
    }

    /// Drafting preset: temperature 0.3, top-k 10.
    pub fn generation(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            temperature: 0.3,
            top_k: Some(10),
            max_output_tokens: 8192,
            ..Self::evaluation(endpoint, model_id)
        }
    }
}

/// Run counters surfaced in the report manifest.
#[derive(Debug, Default)]
pub struct JudgeStats {
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
    parse_repairs: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub parse_repairs: u64,
}

impl JudgeStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            provider_calls: self.provider_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            parse_repairs: self.parse_repairs.load(Ordering::SeqCst),
        }
    }
}

/// The evaluator: a chat provider plus prompt configuration, caching, and
/// counters. All methods are reentrant; `batch_evaluate` owns parallelism.
pub struct Judge {
    provider: Arc<dyn ChatProvider>,
    cache: Option<CompletionCache>,
    rubric: RubricSet,
    law: StatutoryConstraints,
    stats: JudgeStats,
}

impl Judge {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            cache: None,
            rubric: RubricSet::default(),
            law: StatutoryConstraints::default(),
            stats: JudgeStats::default(),
        }
    }

    /// Attach a disk cache rooted at `dir`.
    pub fn with_cache_dir(mut self, dir: &std::path::Path) -> std::io::Result<Self> {
        self.cache = Some(CompletionCache::open(dir)?);
        Ok(self)
    }

    pub fn with_rubric(mut self, rubric: RubricSet) -> Self {
        self.rubric = rubric;
        self
    }

    pub fn with_constraints(mut self, law: StatutoryConstraints) -> Self {
        self.law = law;
        self
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    fn request_for(bundle: &PromptBundle, config: &ModelConfig) -> ChatRequest {
        ChatRequest {
            model: config.model_id.clone(),
            messages: vec![
                ChatMessage::system(bundle.system_text.clone()),
                ChatMessage::user(bundle.user_text.clone()),
            ],
            temperature: config.temperature,
            top_k: config.top_k,
            top_p: config.top_p,
            max_tokens: config.max_output_tokens,
        }
    }

    /// Resolve a prompt to raw response text: cache first, then the provider
    /// with exponential backoff on transient failures, up to
    /// `config.retry_limit` total attempts.
    pub async fn complete(
        &self,
        bundle: &PromptBundle,
        config: &ModelConfig,
    ) -> Result<String, JudgeError> {
        let key = cache_key(&bundle.content_hash, config);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
        }

        let request = Self::request_for(bundle, config);
        let max_attempts = config.retry_limit.max(1);
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.stats.provider_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.chat(&request).await {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.put(key, text.clone())?;
                    }
                    return Ok(text);
                }
                Err(e) if e.is_transient() => {
                    if attempt >= max_attempts {
                        return Err(JudgeError::RetriesExhausted {
                            attempts: attempt,
                            last: e,
                        });
                    }
                    self.stats.retries.fetch_add(1, Ordering::SeqCst);
                    let delay = config.retry_backoff_ms.saturating_mul(1 << (attempt - 1));
                    if delay > 0 {
                        tokio::time::sleep(std::time::Duration::from_millis(delay)).await;
                    }
                }
                Err(ProviderError::Auth(msg)) => return Err(JudgeError::Auth(msg)),
                Err(ProviderError::Refusal(msg)) => return Err(JudgeError::Refusal(msg)),
                Err(other) => return Err(JudgeError::Provider(other)),
            }
        }
    }

    /// Prompt, complete, and parse one pair. A response that fails to parse
    /// is re-asked once with a format reminder appended before surfacing an
    /// error.
    pub async fn evaluate_pair(
        &self,
        pair: &PaperPatentPair,
        variant: PromptVariant,
        config: &ModelConfig,
    ) -> Result<EvaluationRecord, JudgeError> {
        let bundle = build_evaluation_prompt(
            variant,
            &pair.paper,
            &pair.description,
            &self.rubric,
            &self.law,
            LengthBudget {
                max_user_chars: config.prompt_budget_chars,
            },
        )?;
        let raw = self.complete(&bundle, config).await?;
        let (parsed, raw_used) = match parse_response(&raw, variant) {
            Ok(parsed) => (parsed, raw),
            Err(initial) => {
                self.stats.parse_repairs.fetch_add(1, Ordering::SeqCst);
                let repair_bundle = with_format_reminder(&bundle);
                let raw_repair = self.complete(&repair_bundle, config).await?;
                match parse_response(&raw_repair, variant) {
                    Ok(parsed) => (parsed, raw_repair),
                    Err(after_repair) => {
                        return Err(JudgeError::ParseFailed {
                            initial,
                            after_repair,
                        })
                    }
                }
            }
        };
        Ok(EvaluationRecord {
            item_id: pair.item_id().to_string(),
            variant,
            overall: EvaluationRecord::overall_of(parsed.scores.as_ref(), parsed.holistic),
            scores: parsed.scores,
            holistic: parsed.holistic,
            trace: parsed.trace,
            rationale: parsed.rationale,
            raw_response: raw_used,
        })
    }

    /// Draft a candidate description for `paper` and wrap it with generator
    /// metadata. Output is split on the four mandatory headings when they
    /// are present, with a single `body` section as fallback.
    pub async fn generate_description(
        &self,
        paper: &SourcePaper,
        config: &ModelConfig,
    ) -> Result<GeneratedDescription, JudgeError> {
        let bundle = build_generation_prompt(paper)?;
        let raw = self.complete(&bundle, config).await?;
        let mut generator_meta = std::collections::BTreeMap::new();
        generator_meta.insert("model".to_string(), config.model_id.clone());
        generator_meta.insert("temperature".to_string(), config.temperature.to_string());
        if let Some(k) = config.top_k {
            generator_meta.insert("top_k".to_string(), k.to_string());
        }
        if let Some(p) = config.top_p {
            generator_meta.insert("top_p".to_string(), p.to_string());
        }
        generator_meta.insert(
            "source_scope".to_string(),
            if paper.body.is_empty() {
                "title_abstract_only".to_string()
            } else {
                "full_text".to_string()
            },
        );
        Ok(GeneratedDescription {
            id: format!("{}-gen", paper.id),
            paper_id: paper.id.clone(),
            sections: split_mandatory_sections(&raw),
            generator_meta,
        })
    }

    /// Evaluate pairs concurrently with at most `config.concurrency_limit`
    /// requests in flight. Results keep input order; per-item failures do
    /// not abort the batch.
    pub async fn batch_evaluate(
        &self,
        pairs: &[PaperPatentPair],
        variant: PromptVariant,
        config: &ModelConfig,
    ) -> Vec<Result<EvaluationRecord, JudgeError>> {
        stream::iter(
            pairs
                .iter()
                .map(|pair| self.evaluate_pair(pair, variant, config)),
        )
        .buffered(config.concurrency_limit.max(1))
        .collect()
        .await
    }
}

const MANDATORY_HEADINGS: [&str; 4] = [
    "Background",
    "Summary",
    "Brief Description of Drawings",
    "Detailed Description",
];

/// Split drafted text on the mandatory section headings (a heading is a line
/// holding just the heading, tolerant of `#`, `*`, trailing `:` and case).
/// Text before the first heading, or everything when no heading appears,
/// lands in a `body` section.
pub fn split_mandatory_sections(text: &str) -> Vec<Section> {
    fn heading_of(line: &str) -> Option<&'static str> {
        let cleaned = line
            .trim()
            .trim_start_matches(['#', '*', ' '])
            .trim_end_matches(['*', ':', ' '])
            .trim();
        MANDATORY_HEADINGS
            .iter()
            .find(|h| cleaned.eq_ignore_ascii_case(h))
            .copied()
    }

    let mut sections: Vec<Section> = Vec::new();
    let mut current_heading: Option<&str> = None;
    let mut buffer = String::new();
    let mut flush = |heading: Option<&str>, buffer: &mut String, sections: &mut Vec<Section>| {
        let text = buffer.trim().to_string();
        buffer.clear();
        match heading {
            Some(h) => sections.push(Section {
                heading: h.to_string(),
                text,
            }),
            None if !text.is_empty() => sections.push(Section {
                heading: "body".to_string(),
                text,
            }),
            None => {}
        }
    };

    for line in text.lines() {
        if let Some(h) = heading_of(line) {
            flush(current_heading, &mut buffer, &mut sections);
            current_heading = Some(h);
        } else {
            buffer.push_str(line);
            buffer.push('\n');
        }
    }
    flush(current_heading, &mut buffer, &mut sections);

    if sections.is_empty() {
        sections.push(Section {
            heading: "body".to_string(),
            text: String::new(),
        });
    }
    sections
}

#[cfg(test)]
mod tests {
    use super::mock::{MockChatProvider, MockReply};
    use super::*;
    use crate::corpus::Section;
    use crate::verdict::{render_response, DimensionScores, ReasoningTrace};
    use std::collections::BTreeMap;

    fn sample_pair(id: &str) -> PaperPatentPair {
        let paper = SourcePaper {
            id: id.to_string(),
            title: "Adaptive sparse gating".to_string(),
            abstract_text: "We gate activations with a learned mask.".to_string(),
            authors: vec!["A. Author".to_string()],
            body: vec![Section {
                heading: "Method".to_string(),
                text: "The gate samples a relaxed categorical distribution with coefficient 0.01."
                    .to_string(),
            }],
        };
        PaperPatentPair {
            description: GeneratedDescription {
                id: format!("{id}-gen"),
                paper_id: paper.id.clone(),
                sections: vec![Section {
                    heading: "Detailed Description".to_string(),
                    text: "A filtering unit reduces computation.".to_string(),
                }],
                generator_meta: BTreeMap::new(),
            },
            paper,
            similarity: None,
            author_overlap: None,
        }
    }

    fn canned_response(scores: [u8; 4]) -> String {
        render_response(&EvaluationRecord {
            item_id: "x".into(),
            variant: PromptVariant::Full,
            scores: Some(DimensionScores::new(scores[0], scores[1], scores[2], scores[3])),
            holistic: None,
            trace: Some(ReasoningTrace {
                technical_mapping: "mechanism renamed, sampler omitted".into(),
                statutory_compliance: "coefficient left as \"an appropriate value\"".into(),
                formal_consistency: "drawings list references an undescribed figure".into(),
            }),
            rationale: "test".into(),
            overall: 0.0,
            raw_response: String::new(),
        })
    }

    fn fast_config() -> ModelConfig {
        let mut config = ModelConfig::evaluation("http://unused", "mock-model");
        config.retry_backoff_ms = 0;
        config
    }

    #[tokio::test]
    async fn evaluate_pair_parses_scores_and_overall() {
        let mock = Arc::new(MockChatProvider::fixed(canned_response([4, 3, 5, 4])));
        let judge = Judge::new(mock);
        let record = judge
            .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
            .await
            .unwrap();
        assert_eq!(record.scores.unwrap().as_array(), [4, 3, 5, 4]);
        assert_eq!(record.overall, 4.0);
        assert_eq!(record.item_id, "p1-gen");
        assert!(record.trace.is_some());
    }

    #[tokio::test]
    async fn evaluate_pair_fails_after_one_repair() {
        let mock = Arc::new(MockChatProvider::fixed("no scores in this prose"));
        let judge = Judge::new(mock.clone());
        let err = judge
            .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
            .await
            .unwrap_err();
        assert!(matches!(err, JudgeError::ParseFailed { .. }));
        assert_eq!(mock.calls(), 2); // initial + one repair round-trip
        assert_eq!(judge.stats().parse_repairs, 1);
    }

    #[tokio::test]
    async fn evaluate_pair_repair_recovers() {
        let good = canned_response([3, 3, 3, 3]);
        let mock = Arc::new(MockChatProvider::script(vec![
            Ok("rambling without the template".to_string()),
            Ok(good),
        ]));
        let judge = Judge::new(mock.clone());
        let record = judge
            .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
            .await
            .unwrap();
        assert_eq!(record.overall, 3.0);
        assert_eq!(mock.calls(), 2);
        assert_eq!(judge.stats().parse_repairs, 1);
    }

    #[tokio::test]
    async fn holistic_variant_record() {
        let mock = Arc::new(MockChatProvider::fixed(
            "- Scores: Overall: 3\n- Final Rationale: fine",
        ));
        let judge = Judge::new(mock);
        let record = judge
            .evaluate_pair(
                &sample_pair("p1"),
                PromptVariant::NoDecomposition,
                &fast_config(),
            )
            .await
            .unwrap();
        assert_eq!(record.holistic, Some(3));
        assert!(record.scores.is_none());
        assert_eq!(record.overall, 3.0);
    }

    #[tokio::test]
    async fn retry_twice_then_succeed() {
        let mock = Arc::new(MockChatProvider::script(vec![
            Err(ProviderError::Transport("connection reset".into())),
            Err(ProviderError::Status {
                code: 503,
                body: "overloaded".into(),
            }),
            Ok(canned_response([4, 4, 4, 4])),
        ]));
        let judge = Judge::new(mock.clone());
        let record = judge
            .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
            .await
            .unwrap();
        assert_eq!(record.overall, 4.0);
        assert_eq!(mock.calls(), 3);
        assert_eq!(judge.stats().retries, 2);
    }

    #[tokio::test]
    async fn retries_exhausted() {
        let mock = Arc::new(MockChatProvider::new(|_, _| {
            MockReply::fail(ProviderError::Transport("down".into()))
        }));
        let judge = Judge::new(mock.clone());
        let err = judge
            .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
            .await
            .unwrap_err();
        match err {
            JudgeError::RetriesExhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(mock.calls(), 3);
    }

    #[tokio::test]
    async fn auth_and_refusal_surface_distinctly() {
        let mock = Arc::new(MockChatProvider::script(vec![Err(ProviderError::Auth(
            "bad key".into(),
        ))]));
        let judge = Judge::new(mock);
        assert!(matches!(
            judge
                .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
                .await
                .unwrap_err(),
            JudgeError::Auth(_)
        ));

        let mock = Arc::new(MockChatProvider::script(vec![Err(ProviderError::Refusal(
            "declined".into(),
        ))]));
        let judge = Judge::new(mock);
        assert!(matches!(
            judge
                .evaluate_pair(&sample_pair("p1"), PromptVariant::Full, &fast_config())
                .await
                .unwrap_err(),
            JudgeError::Refusal(_)
        ));
    }

    #[tokio::test]
    async fn cache_hit_skips_provider() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockChatProvider::fixed(canned_response([4, 3, 5, 4])));
        let judge = Judge::new(mock.clone())
            .with_cache_dir(dir.path())
            .unwrap();
        let config = fast_config();
        let pair = sample_pair("p1");

        let first = judge
            .evaluate_pair(&pair, PromptVariant::Full, &config)
            .await
            .unwrap();
        let calls_after_first = mock.calls();
        let second = judge
            .evaluate_pair(&pair, PromptVariant::Full, &config)
            .await
            .unwrap();
        assert_eq!(mock.calls(), calls_after_first);
        assert_eq!(first, second);
        assert_eq!(judge.stats().cache_hits, 1);
    }

    #[tokio::test]
    async fn generation_meta_records_decoding_parameters() {
        let draft = "\
Background
Existing systems filter activations statically.
Summary
A dynamic gate is disclosed.
Brief Description of Drawings
Figure 1 shows the gate.
Detailed Description
The gate samples a relaxed categorical distribution.";
        let mock = Arc::new(MockChatProvider::fixed(draft));
        let judge = Judge::new(mock);
        let config = ModelConfig::generation("http://unused", "drafting-model");
        let paper = sample_pair("p7").paper;
        let description = judge.generate_description(&paper, &config).await.unwrap();
        assert_eq!(description.id, "p7-gen");
        assert_eq!(description.paper_id, "p7");
        assert_eq!(description.generator_meta["temperature"], "0.3");
        assert_eq!(description.generator_meta["top_k"], "10");
        assert_eq!(description.generator_meta["source_scope"], "full_text");
        let headings: Vec<&str> = description
            .sections
            .iter()
            .map(|s| s.heading.as_str())
            .collect();
        assert_eq!(
            headings,
            [
                "Background",
                "Summary",
                "Brief Description of Drawings",
                "Detailed Description"
            ]
        );
    }

    #[tokio::test]
    async fn generation_fallback_single_section() {
        let mock = Arc::new(MockChatProvider::fixed("free-form draft with no headings"));
        let judge = Judge::new(mock);
        let config = ModelConfig::generation("http://unused", "m");
        let mut paper = sample_pair("p8").paper;
        paper.body.clear();
        let description = judge.generate_description(&paper, &config).await.unwrap();
        assert_eq!(description.sections.len(), 1);
        assert_eq!(description.sections[0].heading, "body");
        assert_eq!(
            description.generator_meta["source_scope"],
            "title_abstract_only"
        );
    }

    #[tokio::test]
    async fn batch_preserves_order_and_isolates_failures() {
        let mock = Arc::new(MockChatProvider::new(move |request, _| {
            let user = &request.messages[1].content;
            if user.contains("paper three") {
                MockReply::fail(ProviderError::Malformed("broken".into()))
            } else {
                MockReply::text(canned_response([4, 3, 5, 4]))
            }
        }));
        let judge = Judge::new(mock);
        let mut pairs = Vec::new();
        for i in 0..5 {
            let mut pair = sample_pair(&format!("p{i}"));
            if i == 3 {
                pair.paper.body[0].text = "paper three body".to_string();
            }
            pairs.push(pair);
        }
        let results = judge
            .batch_evaluate(&pairs, PromptVariant::Full, &fast_config())
            .await;
        assert_eq!(results.len(), 5);
        for (i, result) in results.iter().enumerate() {
            if i == 3 {
                assert!(result.is_err());
            } else {
                assert_eq!(result.as_ref().unwrap().item_id, format!("p{i}-gen"));
            }
        }
    }

    #[tokio::test]
    async fn empty_batch() {
        let judge = Judge::new(Arc::new(MockChatProvider::fixed("x")));
        let results = judge
            .batch_evaluate(&[], PromptVariant::Full, &fast_config())
            .await;
        assert!(results.is_empty());
    }

    #[tokio::test]
    async fn concurrency_bound_is_respected() {
        for limit in [1usize, 3, 8] {
            let mock = Arc::new(MockChatProvider::new(|_, _| {
                MockReply::text(canned_response([3, 3, 3, 3]))
                    .after(std::time::Duration::from_millis(20))
            }));
            let judge = Judge::new(mock.clone());
            let mut config = fast_config();
            config.concurrency_limit = limit;
            let pairs: Vec<_> = (0..12).map(|i| sample_pair(&format!("p{i}"))).collect();
            let results = judge
                .batch_evaluate(&pairs, PromptVariant::Full, &config)
                .await;
            assert!(results.iter().all(Result::is_ok));
            assert_eq!(mock.max_in_flight(), limit as u64, "limit {limit}");
        }
    }

    #[test]
    fn splitter_tolerates_markup() {
        let sections = split_mandatory_sections(
            "## Background:\ntext a\n**Summary**\ntext b\nDETAILED DESCRIPTION\ntext c",
        );
        let headings: Vec<&str> = sections.iter().map(|s| s.heading.as_str()).collect();
        assert_eq!(headings, ["Background", "Summary", "Detailed Description"]);
        assert_eq!(sections[1].text, "text b");
    }

    #[test]
    fn splitter_keeps_preamble() {
        let sections = split_mandatory_sections("preamble\nBackground\nbody text");
        assert_eq!(sections[0].heading, "body");
        assert_eq!(sections[0].text, "preamble");
        assert_eq!(sections[1].heading, "Background");
    }
}
