//! Minimal batch client for an external sentence-embedding service.
//!
//! Request body: newline-delimited UTF-8 texts. Response body: one line per
//! text holding comma-separated decimals.

use std::thread;
use std::time::Duration;

use super::EmbedError;

#[derive(Clone, Debug)]
pub struct EmbedClientConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    pub batch_size: usize,
    pub retries: u32,
    pub d_llm: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for EmbedClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/embed".into(),
            timeout_secs: 30.0,
            batch_size: 32,
            retries: 3,
            d_llm: super::DEFAULT_D_LLM,
            backoff_ms: 200,
        }
    }
}

fn parse_response(body: &str, expected_rows: usize, d_llm: usize, batch: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let rows: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != expected_rows {
        return Err(EmbedError::Protocol(format!(
            "batch {batch}: {} vectors for {expected_rows} texts",
            rows.len()
        )));
    }
    rows.iter()
        .map(|line| {
            let v = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbedError::Protocol(format!("batch {batch}: {e}")))?;
            if v.len() != d_llm {
                return Err(EmbedError::WidthMismatch {
                    expected: d_llm,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::Protocol(format!("batch {batch}: non-finite value")));
            }
            Ok(v)
        })
        .collect()
}

/// Embeds `texts` in order, `batch_size` per request.
pub fn fetch_embeddings(cfg: &EmbedClientConfig, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
    if cfg.batch_size == 0 {
        return Err(EmbedError::InvalidInput("batch_size must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(texts.len());
    if texts.is_empty() {
        return Ok(out);
    }
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs_f64(cfg.timeout_secs))
        .build();
    for (batch, chunk) in texts.chunks(cfg.batch_size).enumerate() {
        let body = chunk
            .iter()
            .map(|t| t.replace(['\n', '\r'], " "))
            .collect::<Vec<_>>()
            .join("\n");
        let mut attempt = 0;
        let vectors = loop {
            let result = agent
                .post(&cfg.endpoint)
                .set("Content-Type", "text/plain; charset=utf-8")
                .send_string(&body)
                .map_err(|e| e.to_string())
                .and_then(|resp| resp.into_string().map_err(|e| e.to_string()));
            match result {
                Ok(text) => break parse_response(&text, chunk.len(), cfg.d_llm, batch)?,
                Err(reason) if attempt < cfg.retries => {
                    let delay = cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("embedding batch {batch} failed ({reason}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(reason) => {
                    return Err(EmbedError::Fetch {
                        batch,
                        attempts: attempt + 1,
                        reason,
                    })
                }
            }
        };
        out.extend(vectors);
    }
    Ok(out)
}
