use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{render_link_prompt, PromptBundle};
use crate::codebook::{ClassCodebook, Codebook};
use crate::error::{Result, StagError};
use crate::http::{HttpConfig, JsonClient};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retries: u32,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            temperature: 0.0,
            max_tokens: 16,
            retries: 3,
            timeout_secs: 60,
            max_in_flight: 4,
        }
    }
}

impl LlmConfig {
    /// Reads `LLM_ENDPOINT`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("LLM_ENDPOINT").map_err(|_| StagError::invalid("LLM_ENDPOINT is not set"))?;
        Ok(LlmConfig {
            endpoint,
            model: std::env::var("LLM_MODEL").unwrap_or_default(),
            api_key: std::env::var("LLM_API_KEY").ok(),
            ..LlmConfig::default()
        })
    }
}

/// Outcome of classifying one prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub raw_reply: String,
    pub index: usize,
    pub parsed: String,
}

pub trait NodeClassifier: Sync {
    fn classify(&self, bundle: &PromptBundle) -> Result<Classification>;
}

fn normalize(s: &str) -> String {
    let trimmed = s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn longest_common_substring(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut best = 0;
    let mut prev = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        let mut cur = vec![0usize; b.len() + 1];
        for j in 1..=b.len() {
            if a[i - 1] == b[j - 1] {
                cur[j] = prev[j - 1] + 1;
                best = best.max(cur[j]);
            }
        }
        prev = cur;
    }
    best
}

/// Maps a free-text reply onto one of `candidates`: exact match after
/// trimming whitespace and punctuation and case-folding, otherwise the
/// candidate sharing the longest case-insensitive substring with the reply
/// (ties to the earlier candidate).
pub fn parse_reply(reply: &str, candidates: &[String]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(StagError::invalid("no candidate classes"));
    }
    let norm = normalize(reply);
    if norm.is_empty() {
        return Err(StagError::MalformedResponse("empty reply".into()));
    }
    let normed: Vec<String> = candidates.iter().map(|c| normalize(c)).collect();
    if let Some(i) = normed.iter().position(|c| *c == norm) {
        return Ok(i);
    }
    let mut best = (0, 0);
    for (i, c) in normed.iter().enumerate() {
        let score = longest_common_substring(&norm, c);
        if score > best.1 {
            best = (i, score);
        }
    }
    log::debug!("reply {reply:?} matched {:?} by overlap", candidates[best.0]);
    Ok(best.0)
}

/// `true` for a yes reply, `false` for no.
pub fn parse_yes_no(reply: &str) -> Result<bool> {
    let norm = normalize(reply);
    let first = norm.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("");
    match first {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(StagError::MalformedResponse(format!(
            "expected yes or no, got {reply:?}"
        ))),
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completion client with a cap on concurrent requests.
pub struct ChatClient {
    http: JsonClient,
    config: LlmConfig,
    slots: Semaphore,
}

impl ChatClient {
    pub fn new(config: LlmConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(StagError::invalid("LLM endpoint is empty"));
        }
        let http = JsonClient::new(HttpConfig {
            endpoint: config.endpoint.clone(),
            api_key: config.api_key.clone(),
            timeout: Duration::from_secs(config.timeout_secs),
            retries: config.retries,
            ..HttpConfig::new(config.endpoint.clone())
        });
        Ok(ChatClient {
            http,
            slots: Semaphore::new(config.max_in_flight),
            config,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Sends one system + user exchange and returns the first choice's text.
    pub fn complete(&self, system: &str, user: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let _permit = self.slots.acquire();
        let resp = self.http.post(&body)?;
        let choice = resp
            .get("choices")
            .and_then(Value::as_array)
            .and_then(|c| c.first())
            .ok_or_else(|| StagError::MalformedResponse(format!("no choices in {resp}")))?;
        let text = choice
            .pointer("/message/content")
            .or_else(|| choice.get("text"))
            .and_then(Value::as_str)
            .ok_or_else(|| StagError::MalformedResponse(format!("no text in {choice}")))?;
        if text.trim().is_empty() {
            return Err(StagError::MalformedResponse("empty reply".into()));
        }
        Ok(text.to_string())
    }
}

impl NodeClassifier for ChatClient {
    fn classify(&self, bundle: &PromptBundle) -> Result<Classification> {
        let raw = self.complete(&bundle.system_text, &bundle.user_text())?;
        let index = parse_reply(&raw, &bundle.candidate_classes)?;
        Ok(Classification {
            parsed: bundle.candidate_classes[index].clone(),
            raw_reply: raw,
            index,
        })
    }
}

/// Asks the chat model whether two token lists describe linked nodes.
pub fn llm_link_predict(tokens_u: &[String], tokens_v: &[String], client: &ChatClient) -> Result<bool> {
    let bundle = render_link_prompt(tokens_u, tokens_v)?;
    let raw = client.complete(&bundle.system_text, "Answer:")?;
    parse_yes_no(&raw)
}

/// Offline stand-in for the LLM: averages the embeddings of the test
/// tokens and picks the most cosine-similar candidate class embedding.
/// Support examples are ignored.
pub fn stub_classify(bundle: &PromptBundle, codebook: &Codebook, classes: &ClassCodebook) -> Result<usize> {
    if bundle.test_tokens.is_empty() {
        return Err(StagError::invalid("stub classifier needs test tokens"));
    }
    let mut mean = Array1::<f64>::zeros(codebook.dim());
    for t in &bundle.test_tokens {
        let k = codebook
            .index_of(t)
            .ok_or_else(|| StagError::invalid(format!("token {t:?} is not in the codebook")))?;
        mean += &codebook.embeddings().row(k);
    }
    mean /= bundle.test_tokens.len() as f64;
    let subset = classes.subset(&bundle.candidate_classes)?;
    if subset.dim() != codebook.dim() {
        return Err(StagError::dims("class codebook dim", codebook.dim(), subset.dim()));
    }
    linalg::nearest_by_cosine(mean.view(), subset.unit_embeddings())
}

pub struct StubClassifier<'a> {
    pub codebook: &'a Codebook,
    pub classes: &'a ClassCodebook,
}

impl NodeClassifier for StubClassifier<'_> {
    fn classify(&self, bundle: &PromptBundle) -> Result<Classification> {
        let index = stub_classify(bundle, self.codebook, self.classes)?;
        let parsed = bundle.candidate_classes[index].clone();
        Ok(Classification {
            raw_reply: parsed.clone(),
            parsed,
            index,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub task_id: usize,
    pub prompt: String,
    pub raw_reply: String,
    pub parsed: String,
    pub gold: String,
}

/// Append-only JSONL log of every prompt and reply.
pub struct AuditLog {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| StagError::io(path, e))?;
        Ok(AuditLog {
            path: path.to_path_buf(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &AuditRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| StagError::parse("audit record", e))?;
        let mut out = self.out.lock().expect("audit log poisoned");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| StagError::io(&self.path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infer::render_zeroshot_prompt;
    use ndarray::array;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parser_normalizes_and_falls_back() {
        let c = s(&["Research Paper", "Dataset", "Software"]);
        assert_eq!(parse_reply("Research Paper", &c).unwrap(), 0);
        assert_eq!(parse_reply("  research paper.\n", &c).unwrap(), 0);
        assert_eq!(parse_reply("DATASET!", &c).unwrap(), 1);
        assert_eq!(parse_reply("The answer is software engineering", &c).unwrap(), 2);
        assert!(parse_reply(" \n", &c).is_err());
    }

    #[test]
    fn decorated_candidates_round_trip() {
        let c = s(&["Neural Networks", "Theory", "Case Based", "Rule Learning"]);
        for (i, name) in c.iter().enumerate() {
            for deco in [
                name.to_uppercase(),
                format!("{name}."),
                format!("  {name} \n"),
                name.to_lowercase(),
            ] {
                assert_eq!(parse_reply(&deco, &c).unwrap(), i, "{deco:?}");
            }
        }
    }

    #[test]
    fn yes_no() {
        assert!(parse_yes_no("Yes.").unwrap());
        assert!(!parse_yes_no(" no\n").unwrap());
        assert!(parse_yes_no("maybe").is_err());
    }

    #[test]
    fn stub_uses_token_mean() {
        let cb = Codebook::new(
            s(&["red", "blue", "green"]),
            array![[1.0, 0.0], [0.0, 1.0], [0.9, 0.1]],
            json!({}),
        )
        .unwrap();
        let classes = ClassCodebook::new(s(&["Warm", "Cold"]), s(&["", ""]), array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = render_zeroshot_prompt(&s(&["Cold", "Warm"]), &s(&["red", "green"])).unwrap();
        assert_eq!(stub_classify(&b, &cb, &classes).unwrap(), 1);
        let b = render_zeroshot_prompt(&s(&["Warm", "Cold"]), &s(&["blue"])).unwrap();
        assert_eq!(stub_classify(&b, &cb, &classes).unwrap(), 1);
        let b = render_zeroshot_prompt(&s(&["Warm"]), &s(&["purple"])).unwrap();
        assert!(stub_classify(&b, &cb, &classes).is_err());
    }

    #[test]
    fn semaphore_caps_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let sem = Semaphore::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
