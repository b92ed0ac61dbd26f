//! Prompt rendering, answer extraction and chat endpoints for the generation
//! stage.

use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: u32 = 256;

const RAG_GENERATION: &str = include_str!("../assets/prompts/rag_generation.txt");
const QA_VERIFICATION: &str = include_str!("../assets/prompts/qa_verification.txt");
const QA_GENERATION: &str = include_str!("../assets/prompts/qa_generation.txt");
const TASK_DESCRIPTIONS: &str = include_str!("../assets/prompts/task_descriptions.txt");
const OCR_SIMPLE: &str = include_str!("../assets/prompts/ocr_simple.txt");
const OCR_DETAILED: &str = include_str!("../assets/prompts/ocr_detailed.txt");

#[derive(Debug, Error)]
pub enum GenError {
    #[error("prompt slot {{{0}}} has no value")]
    MissingSlot(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("prompt asset {path}: {source}")]
    Asset {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("endpoint timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP {status}: {body}")]
    NonRetryableStatus { status: u16, body: String },
    #[error("unexpected endpoint response: {0}")]
    BadResponse(String),
}

impl From<HttpError> for GenError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Unavailable { .. } => GenError::EndpointUnavailable(e.to_string()),
            HttpError::Timeout { attempts } => GenError::Timeout { attempts },
            HttpError::Rejected { status, body } => GenError::NonRetryableStatus { status, body },
            HttpError::BadResponse(m) => GenError::BadResponse(m),
        }
    }
}

/// Splits `[name]` header lines into named sections. Text before the first
/// header goes into a section named "".
fn sections(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, Vec<&str>)> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        let header = t
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .filter(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '_'));
        match header {
            Some(name) => out.push((name.to_string(), Vec::new())),
            None => {
                if out.is_empty() {
                    out.push((String::new(), Vec::new()));
                }
                out.last_mut().unwrap().1.push(line);
            }
        }
    }
    out.into_iter()
        .map(|(n, lines)| (n, lines.join("\n").trim_end().to_string()))
        .filter(|(n, body)| !(n.is_empty() && body.is_empty()))
        .collect()
}

/// `{name}` slots in order of first appearance.
fn slot_names(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        if len > 0
            && after[len..].starts_with('}')
            && after.starts_with(|c: char| c.is_ascii_lowercase())
        {
            let name = &after[..len];
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
        rest = after;
    }
    out
}

/// Substitutes every `{slot}` in one pass, so values containing braces are
/// never expanded again.
fn fill(template: &str, values: &HashMap<&str, &str>) -> Result<String, GenError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        let is_slot = len > 0
            && after[len..].starts_with('}')
            && after.starts_with(|c: char| c.is_ascii_lowercase());
        if is_slot {
            let name = &after[..len];
            let value = values
                .get(name)
                .ok_or_else(|| GenError::MissingSlot(name.to_string()))?;
            out.push_str(value);
            rest = &after[len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// A system/user template pair with `{slot}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAsset {
    pub name: String,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl PromptAsset {
    /// Reads the `[system]` and `[user]` sections of an asset file. A file
    /// without headers is a user-only template.
    pub fn parse(name: &str, text: &str) -> Self {
        let mut asset = Self {
            name: name.to_string(),
            system: String::new(),
            user: String::new(),
        };
        for (section, body) in sections(text) {
            match section.as_str() {
                "system" => asset.system = body,
                "user" | "" => asset.user = body,
                _ => {}
            }
        }
        asset
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = std::fs::read_to_string(path).map_err(|source| GenError::Asset {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("prompt");
        Ok(Self::parse(name, &text))
    }

    /// The RAG answering prompt used by the generation and end-to-end stages.
    pub fn rag_generation() -> Self {
        Self::parse("rag_generation", RAG_GENERATION)
    }

    pub fn qa_verification() -> Self {
        Self::parse("qa_verification", QA_VERIFICATION)
    }

    pub fn qa_generation() -> Self {
        Self::parse("qa_generation", QA_GENERATION)
    }

    pub fn slots(&self) -> Vec<String> {
        let mut names = slot_names(&self.system);
        for n in slot_names(&self.user) {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        names
    }

    pub fn render_with(&self, values: &HashMap<&str, &str>) -> Result<Prompt, GenError> {
        Ok(Prompt {
            system: fill(&self.system, values)?,
            user: fill(&self.user, values)?,
        })
    }
}

/// Task descriptions keyed by `structure_data`, `reading_order`,
/// `understanding` and `reasoning`.
pub fn task_description(name: &str) -> Option<String> {
    sections(TASK_DESCRIPTIONS)
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, body)| body)
}

/// Instructions for running a vision-language model as the OCR step.
pub fn ocr_prompt(detailed: bool) -> &'static str {
    if detailed {
        OCR_DETAILED.trim_end()
    } else {
        OCR_SIMPLE.trim_end()
    }
}

/// Joins contexts as `Document i: ...` blocks separated by a blank line.
pub fn join_contexts(contexts: &[String]) -> String {
    contexts
        .iter()
        .enumerate()
        .map(|(i, c)| format!("Document {}: {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_prompt(
    asset: &PromptAsset,
    question: &str,
    contexts: &[String],
) -> Result<Prompt, GenError> {
    if question.trim().is_empty() {
        return Err(GenError::EmptyQuestion);
    }
    let docs = join_contexts(contexts);
    let values = HashMap::from([
        ("question", question),
        ("retrieved_documents", docs.as_str()),
    ]);
    asset.render_with(&values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extracted {
    pub text: String,
    /// No `<response>...</response>` pair was found; `text` is the whole reply.
    pub fallback: bool,
}

/// Content of the first complete `<response>...</response>` pair, taking the
/// innermost opening tag before the first closing tag.
pub fn extract_response(raw: &str) -> Extracted {
    const OPEN: &str = "<response>";
    const CLOSE: &str = "</response>";
    if let Some(close) = raw.find(CLOSE) {
        if let Some(open) = raw[..close].rfind(OPEN) {
            return Extracted {
                text: raw[open + OPEN.len()..close].trim().to_string(),
                fallback: false,
            };
        }
    }
    Extracted {
        text: raw.trim().to_string(),
        fallback: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub endpoint_url: String,
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Upper bound on concurrent requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

fn default_in_flight() -> usize {
    4
}

impl GenConfig {
    pub fn new(endpoint_url: &str, model_id: &str) -> Self {
        Self {
            endpoint_url: endpoint_url.to_string(),
            model_id: model_id.to_string(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            retry: RetryPolicy::default(),
            api_key_env: None,
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub usage: Option<Usage>,
}

pub trait ChatEndpoint: Send + Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &Prompt) -> Result<Completion, GenError>;
}

/// Client for an OpenAI-compatible `POST /v1/chat/completions` endpoint.
pub struct HttpChatClient {
    url: String,
    cfg: GenConfig,
    client: JsonClient,
}

impl HttpChatClient {
    pub fn new(cfg: GenConfig) -> Self {
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok());
        let path = if cfg.endpoint_url.trim_end_matches('/').ends_with("/v1") {
            "chat/completions"
        } else {
            "v1/chat/completions"
        };
        Self {
            url: join_url(&cfg.endpoint_url, path),
            client: JsonClient::new(api_key, cfg.retry.clone()),
            cfg,
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatEndpoint for HttpChatClient {
    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn complete(&self, prompt: &Prompt) -> Result<Completion, GenError> {
        let mut messages = Vec::new();
        if !prompt.system.is_empty() {
            messages.push(serde_json::json!({"role": "system", "content": prompt.system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": prompt.user}));
        let body = serde_json::json!({
            "model": self.cfg.model_id,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let start = Instant::now();
        let value = self.client.post(&self.url, &body)?;
        let latency_ms = start.elapsed().as_millis() as u64;
        let resp: ChatResponse =
            serde_json::from_value(value).map_err(|e| GenError::BadResponse(e.to_string()))?;
        let text = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GenError::BadResponse("no choices in response".into()))?;
        Ok(Completion {
            text,
            latency_ms,
            usage: resp.usage,
        })
    }
}

pub fn generate(endpoint: &dyn ChatEndpoint, prompt: &Prompt) -> Result<Completion, GenError> {
    endpoint.complete(prompt)
}

/// Deterministic endpoints for tests and offline runs.
pub mod mock {
    use super::*;
    use crate::docmodel::QaRecord;

    type Script = dyn Fn(&Prompt) -> Result<String, GenError> + Send + Sync;

    pub enum MockChat {
        /// Answers with the first gold answer when the retrieved documents
        /// contain the QA's evidence, and with an empty response otherwise.
        GoldEcho(HashMap<String, Vec<(String, String)>>),
        Fixed(String),
        Script(Box<Script>),
    }

    /// True when every non-blank evidence line occurs verbatim in `context`.
    pub fn evidence_present(evidence: &str, context: &str) -> bool {
        evidence
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .all(|l| context.contains(l))
    }

    /// The question and documents of a prompt rendered from the RAG asset.
    pub fn parse_rag_user(user: &str) -> Option<(&str, &str)> {
        let rest = user.strip_prefix("Question: ")?;
        rest.split_once("\nRetrieved Documents: ")
    }

    impl MockChat {
        pub fn gold_echo(qas: &[QaRecord]) -> Self {
            let mut map: HashMap<String, Vec<(String, String)>> = HashMap::new();
            for qa in qas {
                let gold = qa.answers.first().cloned().unwrap_or_default();
                map.entry(qa.question.clone())
                    .or_default()
                    .push((qa.evidence.clone(), gold));
            }
            Self::GoldEcho(map)
        }

        pub fn script(
            f: impl Fn(&Prompt) -> Result<String, GenError> + Send + Sync + 'static,
        ) -> Self {
            Self::Script(Box::new(f))
        }
    }

    impl ChatEndpoint for MockChat {
        fn model_id(&self) -> &str {
            match self {
                MockChat::GoldEcho(_) => "mock-gold-echo",
                MockChat::Fixed(_) => "mock-fixed",
                MockChat::Script(_) => "mock-script",
            }
        }

        fn complete(&self, prompt: &Prompt) -> Result<Completion, GenError> {
            let text = match self {
                MockChat::Fixed(t) => t.clone(),
                MockChat::Script(f) => f(prompt)?,
                MockChat::GoldEcho(map) => {
                    let answer = parse_rag_user(&prompt.user).and_then(|(q, docs)| {
                        map.get(q)?
                            .iter()
                            .find(|(ev, _)| evidence_present(ev, docs))
                            .map(|(_, a)| a.clone())
                    });
                    format!("<response>{}</response>", answer.unwrap_or_default())
                }
            };
            Ok(Completion {
                text,
                latency_ms: 0,
                usage: None,
            })
        }
    }
}
