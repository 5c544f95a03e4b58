//! Deterministic offline providers for tests, fixtures, and dry runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::provider::{ChatProvider, ChatRequest, EmbeddingProvider, ProviderError};

/// One scripted mock answer.
pub struct MockReply {
    pub delay: Duration,
    pub result: Result<String, ProviderError>,
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            delay: Duration::ZERO,
            result: Ok(text.into()),
        }
    }

    pub fn fail(error: ProviderError) -> Self {
        Self {
            delay: Duration::ZERO,
            result: Err(error),
        }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Handler = Box<dyn Fn(&ChatRequest, u64) -> MockReply + Send + Sync>;

/// Scripted chat provider with in-flight instrumentation. The handler
/// receives the request and the zero-based call index.
pub struct MockChatProvider {
    handler: Handler,
    calls: AtomicU64,
    in_flight: AtomicU64,
    max_in_flight: AtomicU64,
}

impl MockChatProvider {
    pub fn new(handler: impl Fn(&ChatRequest, u64) -> MockReply + Send + Sync + 'static) -> Self {
        Self {
            handler: Box::new(handler),
            calls: AtomicU64::new(0),
            in_flight: AtomicU64::new(0),
            max_in_flight: AtomicU64::new(0),
        }
    }

    /// Same text for every call.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| MockReply::text(text.clone()))
    }

    /// Replies consumed in call order; panics when the script runs out.
    pub fn script(replies: Vec<Result<String, ProviderError>>) -> Self {
        let queue = Mutex::new(VecDeque::from(replies));
        Self::new(move |_, idx| {
            let result = queue
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| panic!("mock script exhausted at call {idx}"));
            MockReply {
                delay: Duration::ZERO,
                result,
            }
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> u64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatProvider for MockChatProvider {
    async fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let idx = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let reply = (self.handler)(request, idx);
        if reply.delay > Duration::ZERO {
            tokio::time::sleep(reply.delay).await;
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply.result
    }
}

enum EmbedMode {
    /// Deterministic pseudo-embedding derived from a text digest.
    Hashing { dim: usize },
    /// Fixed vectors consumed in call order.
    Scripted(Mutex<VecDeque<Vec<f64>>>),
}

/// Offline embedding provider.
pub struct MockEmbedder {
    mode: EmbedMode,
    calls: AtomicU64,
}

impl MockEmbedder {
    pub fn hashing(dim: usize) -> Self {
        Self {
            mode: EmbedMode::Hashing { dim },
            calls: AtomicU64::new(0),
        }
    }

    pub fn scripted(vectors: Vec<Vec<f64>>) -> Self {
        Self {
            mode: EmbedMode::Scripted(Mutex::new(VecDeque::from(vectors))),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl EmbeddingProvider for MockEmbedder {
    async fn embed(&self, input: &str) -> Result<Vec<f64>, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.mode {
            EmbedMode::Hashing { dim } => Ok(hash_embedding(input, *dim)),
            EmbedMode::Scripted(queue) => Ok(queue
                .lock()
                .unwrap()
                .pop_front()
                .expect("mock embedding script exhausted")),
        }
    }
}

/// Unit-free deterministic vector: bytes of repeated SHA-256 mapped to
/// [-1, 1]. Identical text always embeds identically.
fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    let mut counter = 0u64;
    while out.len() < dim {
        let mut hasher = Sha256::new();
        hasher.update(counter.to_le_bytes());
        hasher.update(text.as_bytes());
        for byte in hasher.finalize() {
            if out.len() == dim {
                break;
            }
            out.push(f64::from(byte) / 127.5 - 1.0);
        }
        counter += 1;
    }
    out
}
