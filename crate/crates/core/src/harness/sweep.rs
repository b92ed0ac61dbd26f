use super::{
    build_kb_set, eval_e2e, eval_generation, eval_retrieval, fmt_noisy_pages, EvalReport,
    HarnessError, RunOptions, Stage,
};
use crate::corpus::{page_map, Corpus};
use crate::fmtnoise::FmtPlan;
use crate::generation::mock::MockChat;
use crate::generation::{ChatEndpoint, GenConfig, HttpChatClient, PromptAsset};
use crate::http::RetryPolicy;
use crate::metrics::r_noise;
use crate::retrieval::{
    Bm25Retriever, ChunkParams, DenseRetriever, EmbeddingCache, HttpEmbeddingClient,
    OracleRetriever, Retriever, DEFAULT_TOP_K,
};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverSpec {
    Bm25,
    Oracle,
    Dense {
        endpoint_url: String,
        model: String,
        #[serde(default)]
        cache_dir: Option<PathBuf>,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

impl RetrieverSpec {
    pub fn build(&self) -> Box<dyn Retriever> {
        match self {
            RetrieverSpec::Bm25 => Box::new(Bm25Retriever),
            RetrieverSpec::Oracle => Box::new(OracleRetriever),
            RetrieverSpec::Dense {
                endpoint_url,
                model,
                cache_dir,
                api_key_env,
            } => {
                let key = api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
                let client =
                    HttpEmbeddingClient::new(endpoint_url, model, key, RetryPolicy::default());
                Box::new(DenseRetriever::new(
                    Arc::new(client),
                    cache_dir.clone().map(EmbeddingCache::new),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockSpec {
    /// Gold answer when the evidence is in the prompt, empty otherwise.
    GoldEcho,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorSpec {
    Mock(MockSpec),
    Endpoint(GenConfig),
}

impl GeneratorSpec {
    pub fn build(&self, qas: &[crate::docmodel::QaRecord]) -> Box<dyn ChatEndpoint> {
        match self {
            GeneratorSpec::Mock(MockSpec::GoldEcho) => Box::new(MockChat::gold_echo(qas)),
            GeneratorSpec::Mock(MockSpec::Empty) => {
                Box::new(MockChat::Fixed("<response></response>".into()))
            }
            GeneratorSpec::Endpoint(cfg) => Box::new(HttpChatClient::new(cfg.clone())),
        }
    }
}

fn default_seed() -> u64 {
    42
}

fn default_rates() -> Vec<f64> {
    vec![0.0, 0.1, 0.3, 0.6]
}

fn default_retrievers() -> Vec<RetrieverSpec> {
    vec![RetrieverSpec::Bm25]
}

fn default_k() -> usize {
    DEFAULT_TOP_K
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Retrieval]
}

fn default_threads() -> usize {
    4
}

/// A grid of formatting-noise levels, retrievers and stages, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Corpus directory; the bundled fixture corpus when absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_rates")]
    pub fmt_rates: Vec<f64>,
    #[serde(default = "default_retrievers")]
    pub retrievers: Vec<RetrieverSpec>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub chunk: ChunkParams,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub fmt_aware: bool,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    /// Prompt asset file; the bundled RAG prompt when absent.
    #[serde(default)]
    pub prompt: Option<PathBuf>,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub noise: String,
    pub rate: f64,
    pub retriever: String,
    pub r_noise: f64,
    pub report: EvalReport,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let corpus = match &cfg.corpus {
        Some(dir) => Corpus::load_dir(dir)?,
        None => Corpus::fixture()?,
    };
    let needs_gen = cfg.stages.iter().any(|s| *s != Stage::Retrieval);
    let generator = match (&cfg.generator, needs_gen) {
        (Some(g), _) => Some(g.build(&corpus.qas)),
        (None, true) => {
            return Err(HarnessError::Config(
                "generation stages need a generator".into(),
            ))
        }
        (None, false) => None,
    };
    let asset = match &cfg.prompt {
        Some(path) => PromptAsset::load(path)?,
        None => PromptAsset::rag_generation(),
    };
    let retrievers: Vec<Box<dyn Retriever>> =
        cfg.retrievers.iter().map(RetrieverSpec::build).collect();
    let mut rows = Vec::new();
    for &rate in &cfg.fmt_rates {
        let plan = FmtPlan::new(rate, cfg.seed);
        plan.validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let pages = if rate == 0.0 {
            corpus.pages.clone()
        } else {
            fmt_noisy_pages(&corpus.pages, &plan)?
        };
        let pages_by_key = page_map(&pages);
        let rn = r_noise(&corpus.qas, &pages_by_key)?;
        let kbs = build_kb_set(&pages, cfg.chunk)?;
        let noise = if rate == 0.0 { "gt" } else { "fmt" };
        let opts = RunOptions {
            threads: cfg.threads,
            checkpoint: None,
            label: serde_json::json!({ "noise": noise, "rate": rate, "seed": cfg.seed, "chunk": cfg.chunk }),
        };
        let row = |retriever: &str, report| SweepRow {
            noise: noise.to_string(),
            rate,
            retriever: retriever.to_string(),
            r_noise: rn,
            report,
        };
        for stage in &cfg.stages {
            match stage {
                Stage::Generation => {
                    let g = generator.as_deref().expect("checked above");
                    let report = eval_generation(&pages_by_key, &corpus.qas, g, &asset, &opts)?;
                    rows.push(row("gold_page", report));
                }
                Stage::Retrieval => {
                    for r in &retrievers {
                        let aware = cfg.fmt_aware.then_some(&plan);
                        let report =
                            eval_retrieval(&kbs, &corpus.qas, r.as_ref(), cfg.k, aware, &opts)?;
                        rows.push(row(r.name(), report));
                    }
                }
                Stage::EndToEnd => {
                    let g = generator.as_deref().expect("checked above");
                    for r in &retrievers {
                        let report =
                            eval_e2e(&kbs, &corpus.qas, r.as_ref(), g, &asset, cfg.k, &opts)?;
                        rows.push(row(r.name(), report));
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_parsing() {
        let cfg = SweepConfig::default();
        assert_eq!(cfg.fmt_rates, vec![0.0, 0.1, 0.3, 0.6]);
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.chunk, ChunkParams::default());
        let cfg: SweepConfig = serde_json::from_str(
            r#"{"retrievers": ["bm25", {"dense": {"endpoint_url": "http://x", "model": "m"}}],
                "stages": ["retrieval", "end_to_end"], "generator": {"mock": "gold_echo"}}"#,
        )
        .unwrap();
        assert_eq!(cfg.retrievers.len(), 2);
        assert_eq!(cfg.generator, Some(GeneratorSpec::Mock(MockSpec::GoldEcho)));
        assert!(serde_json::from_str::<SweepConfig>(r#"{"rates": [0.1]}"#).is_err());
    }

    #[test]
    fn generation_stage_needs_generator() {
        let cfg = SweepConfig {
            stages: vec![Stage::Generation],
            ..SweepConfig::default()
        };
        assert!(matches!(run_sweep(&cfg), Err(HarnessError::Config(_))));
    }
}
