use super::{Hit, KnowledgeBase, RetrievalError, RetrievalResult, Retriever};
use crate::docmodel::QaRecord;
use crate::http::{join_url, JsonClient, RetryPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

/// Turns texts into vectors. Implementations must be deterministic for a
/// fixed model.
pub trait EmbeddingClient: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError>;
}

/// Client for an OpenAI-compatible `POST /v1/embeddings` endpoint.
pub struct HttpEmbeddingClient {
    url: String,
    model: String,
    client: JsonClient,
    pub batch_size: usize,
}

impl HttpEmbeddingClient {
    /// `base_url` is the server root (`http://host:port`) or its `/v1` path.
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let path = if base_url.trim_end_matches('/').ends_with("/v1") {
            "embeddings"
        } else {
            "v1/embeddings"
        };
        Self {
            url: join_url(base_url, path),
            model: model.to_string(),
            client: JsonClient::new(api_key, retry),
            batch_size: 32,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

impl EmbeddingClient for HttpEmbeddingClient {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
        let mut out = Vec::with_capacity(inputs.len());
        for batch in inputs.chunks(self.batch_size.max(1)) {
            let body = serde_json::json!({ "model": self.model, "input": batch });
            let value = self
                .client
                .post(&self.url, &body)
                .map_err(|e| RetrievalError::EndpointUnavailable(e.to_string()))?;
            let mut resp: EmbeddingResponse = serde_json::from_value(value)?;
            if resp.data.len() != batch.len() {
                return Err(RetrievalError::EndpointUnavailable(format!(
                    "asked for {} embeddings, got {}",
                    batch.len(),
                    resp.data.len()
                )));
            }
            resp.data.sort_by_key(|d| d.index.unwrap_or(0));
            out.extend(resp.data.into_iter().map(|d| d.embedding));
        }
        Ok(out)
    }
}

/// On-disk embedding cache keyed by model id and text hash.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, model: &str, text: &str) -> PathBuf {
        let model_hash = hex::encode(Sha256::digest(model.as_bytes()));
        let text_hash = hex::encode(Sha256::digest(text.as_bytes()));
        self.dir
            .join(&model_hash[..16])
            .join(format!("{text_hash}.json"))
    }

    pub fn get(&self, model: &str, text: &str) -> Option<Vec<f32>> {
        let bytes = fs::read(self.path(model, text)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, model: &str, text: &str, vector: &[f32]) -> Result<(), RetrievalError> {
        let path = self.path(model, text);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec(vector)?)?;
        Ok(())
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Chunk embeddings of one knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub model: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

impl DenseIndex {
    pub fn build(
        client: &dyn EmbeddingClient,
        kb: &KnowledgeBase,
        cache: Option<&EmbeddingCache>,
    ) -> Result<Self, RetrievalError> {
        if kb.is_empty() {
            return Err(RetrievalError::EmptyKnowledgeBase);
        }
        let model = client.model_id().to_string();
        let mut vectors: Vec<Option<Vec<f32>>> = kb
            .chunks
            .iter()
            .map(|c| cache.and_then(|cache| cache.get(&model, &c.text)))
            .collect();
        let missing: Vec<usize> = (0..vectors.len())
            .filter(|&i| vectors[i].is_none())
            .collect();
        if !missing.is_empty() {
            let texts: Vec<String> = missing.iter().map(|&i| kb.chunks[i].text.clone()).collect();
            let fresh = client.embed(&texts)?;
            if fresh.len() != texts.len() {
                return Err(RetrievalError::EndpointUnavailable(format!(
                    "asked for {} embeddings, got {}",
                    texts.len(),
                    fresh.len()
                )));
            }
            for (&i, v) in missing.iter().zip(fresh) {
                if let Some(cache) = cache {
                    cache.put(&model, &kb.chunks[i].text, &v)?;
                }
                vectors[i] = Some(v);
            }
        }
        let vectors: Vec<Vec<f32>> = vectors.into_iter().flatten().collect();
        let dim = vectors[0].len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(RetrievalError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self {
            model,
            dim,
            vectors,
        })
    }
}

/// Ranks chunks by cosine similarity to the embedded query; ties go to the
/// smaller chunk id.
pub fn dense_query(
    client: &dyn EmbeddingClient,
    kb: &KnowledgeBase,
    index: &DenseIndex,
    query_id: &str,
    query: &str,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if kb.is_empty() {
        return Err(RetrievalError::EmptyKnowledgeBase);
    }
    let q = client
        .embed(&[query.to_string()])?
        .pop()
        .ok_or_else(|| RetrievalError::EndpointUnavailable("empty embedding response".into()))?;
    if q.len() != index.dim {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim,
            got: q.len(),
        });
    }
    let scores: Vec<f64> = index.vectors.iter().map(|v| cosine(&q, v)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| kb.chunks[a].chunk_id.cmp(&kb.chunks[b].chunk_id))
    });
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        hits: order
            .into_iter()
            .take(k)
            .map(|i| Hit {
                chunk_id: kb.chunks[i].chunk_id.clone(),
                score: scores[i],
            })
            .collect(),
    })
}

/// Dense retriever that embeds each knowledge base on first use.
pub struct DenseRetriever {
    client: Arc<dyn EmbeddingClient>,
    cache: Option<EmbeddingCache>,
    indexes: Mutex<HashMap<String, Arc<DenseIndex>>>,
}

impl DenseRetriever {
    pub fn new(client: Arc<dyn EmbeddingClient>, cache: Option<EmbeddingCache>) -> Self {
        Self {
            client,
            cache,
            indexes: Mutex::new(HashMap::new()),
        }
    }

    fn index_for(&self, kb: &KnowledgeBase) -> Result<Arc<DenseIndex>, RetrievalError> {
        let key = kb.fingerprint().to_string();
        if let Some(ix) = self.indexes.lock().unwrap().get(&key) {
            return Ok(Arc::clone(ix));
        }
        let ix = Arc::new(DenseIndex::build(
            self.client.as_ref(),
            kb,
            self.cache.as_ref(),
        )?);
        self.indexes.lock().unwrap().insert(key, Arc::clone(&ix));
        Ok(ix)
    }
}

impl Retriever for DenseRetriever {
    fn name(&self) -> &str {
        "dense"
    }

    fn retrieve(
        &self,
        kb: &KnowledgeBase,
        qa: &QaRecord,
        k: usize,
    ) -> Result<RetrievalResult, RetrievalError> {
        let index = self.index_for(kb)?;
        dense_query(self.client.as_ref(), kb, &index, &qa.qa_id, &qa.question, k)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Chunk, ChunkParams};
    use super::*;
    use crate::docmodel::Domain;

    /// Looks texts up in a fixed table.
    struct TableClient(HashMap<String, Vec<f32>>);

    impl EmbeddingClient for TableClient {
        fn model_id(&self) -> &str {
            "table"
        }
        fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
            Ok(inputs.iter().map(|t| self.0[t].clone()).collect())
        }
    }

    fn kb(texts: &[&str]) -> KnowledgeBase {
        let chunks = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Chunk {
                chunk_id: format!("c{i}"),
                doc_id: "d".into(),
                page_no: 1,
                token_span: (0, 0),
                text: t.to_string(),
            })
            .collect();
        KnowledgeBase::from_chunks(Domain::Academic, ChunkParams::default(), chunks)
    }

    fn client(pairs: &[(&str, Vec<f32>)]) -> TableClient {
        TableClient(
            pairs
                .iter()
                .map(|(t, v)| (t.to_string(), v.clone()))
                .collect(),
        )
    }

    #[test]
    fn cosine_identities() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn identical_vector_ranks_first() {
        let c = client(&[
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("q", vec![0.0, 2.0]),
        ]);
        let kb = kb(&["a", "b"]);
        let ix = DenseIndex::build(&c, &kb, None).unwrap();
        let res = dense_query(&c, &kb, &ix, "q", "q", 2).unwrap();
        assert_eq!(res.hits[0].chunk_id, "c1");
        assert!((res.hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(res.hits[1].score, 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = client(&[("a", vec![1.0, 0.0]), ("q", vec![1.0, 0.0, 0.0])]);
        let kb = kb(&["a"]);
        let ix = DenseIndex::build(&c, &kb, None).unwrap();
        assert!(matches!(
            dense_query(&c, &kb, &ix, "q", "q", 1),
            Err(RetrievalError::DimensionMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn cache_avoids_second_call() {
        struct Counting(Mutex<usize>);
        impl EmbeddingClient for Counting {
            fn model_id(&self) -> &str {
                "m"
            }
            fn embed(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>, RetrievalError> {
                *self.0.lock().unwrap() += inputs.len();
                Ok(inputs.iter().map(|t| vec![t.len() as f32, 1.0]).collect())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let c = Counting(Mutex::new(0));
        let kb = kb(&["one", "three"]);
        let first = DenseIndex::build(&c, &kb, Some(&cache)).unwrap();
        let second = DenseIndex::build(&c, &kb, Some(&cache)).unwrap();
        assert_eq!(first, second);
        assert_eq!(*c.0.lock().unwrap(), 2);
    }
}
