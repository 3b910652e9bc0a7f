//! Co-occurrence validity from a chat-completions LLM.
//!
//! Every (verb, noun) combination is posed as a strict YES/NO question
//! about daily cooking activities. Verdicts stream into an append-only
//! JSON-lines cache keyed by (verb_id, noun_id); a rerun with a complete
//! cache performs no network calls. Requests run on a bounded worker pool;
//! cache writes go through the single coordinating thread.
//!
//! Wire format: POST body `{"model", "messages": [{"role": "user",
//! "content": ...}]}`; the reply text is the first choice's message
//! content. The API key is read from the environment variable named in the
//! config.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use crate::cooccur::{CooccurError, ValidityMask, Vocabulary};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("prompt template must contain {{verb}} and {{noun}}")]
    Template,
    #[error("API key environment variable `{0}` is not set")]
    Auth(String),
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: usize, message: String },
    #[error("cache line {line}: {message}")]
    Cache { line: usize, message: String },
    #[error(transparent)]
    Mask(#[from] CooccurError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".to_string()
}

fn default_model() -> String {
    "gpt-3.5-turbo".to_string()
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

/// Strict one-word answers keep `parse_verdict` trivial.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "In the context of daily cooking activities in a \
kitchen, does the action \"{verb} {noun}\" make sense? Answer with exactly one word: YES or NO.";

fn default_prompt_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

fn default_max_concurrent() -> usize {
    4
}

fn default_retries() -> usize {
    3
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_prompt_template")]
    pub prompt_template: String,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    pub cache_path: PathBuf,
    /// Unknown verdicts default to invalid; set true to flip that.
    #[serde(default)]
    pub unknown_as_valid: bool,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !self.prompt_template.contains("{verb}") || !self.prompt_template.contains("{noun}") {
            return Err(OracleError::Template);
        }
        if self.max_concurrent < 1 {
            return Err(OracleError::Network {
                attempts: 0,
                message: "max_concurrent must be >= 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Unknown,
}

/// One cached or fresh answer for a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub verb_id: usize,
    pub noun_id: usize,
    pub verdict: Verdict,
    pub raw_response: String,
    #[serde(skip, default)]
    pub cached: bool,
}

/// Substitutes {verb} and {noun} into the template.
pub fn build_prompt(verb: &str, noun: &str, template: &str) -> Result<String, OracleError> {
    if !template.contains("{verb}") || !template.contains("{noun}") {
        return Err(OracleError::Template);
    }
    Ok(template.replace("{verb}", verb).replace("{noun}", noun))
}

/// Case-insensitive scan of the first alphabetic token: "yes" is valid,
/// "no" invalid, anything else unknown.
pub fn parse_verdict(response: &str) -> Verdict {
    let mut token = String::new();
    for c in response.chars() {
        if c.is_alphabetic() {
            token.push(c.to_ascii_lowercase());
        } else if !token.is_empty() {
            break;
        }
    }
    match token.as_str() {
        "yes" => Verdict::Valid,
        "no" => Verdict::Invalid,
        _ => Verdict::Unknown,
    }
}

/// A chat-completions backend: takes the user prompt, returns the reply
/// text.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, OracleError>;
}

/// HTTP client for any chat-completions-shaped endpoint.
pub struct HttpChatClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
}

impl HttpChatClient {
    /// Reads the API key from the environment variable named in `cfg`.
    pub fn from_config(cfg: &OracleConfig) -> Result<Self, OracleError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| OracleError::Auth(cfg.api_key_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(HttpChatClient {
            agent,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String, OracleError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| OracleError::Network { attempts: 1, message: e.to_string() })?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| OracleError::Network { attempts: 1, message: e.to_string() })?;
        value
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| OracleError::Network {
                attempts: 1,
                message: "response has no choices[0].message.content".into(),
            })
    }
}

/// Deterministic stand-in for the API, driven by a rule over class ids.
/// Also instruments concurrency so tests can assert the in-flight bound.
pub struct MockChatClient {
    rule: MockRule,
    vocab: Vocabulary,
    calls: AtomicUsize,
    in_flight: AtomicI64,
    max_in_flight: AtomicI64,
    /// Simulated per-call latency, to make overlap observable.
    pub latency: Duration,
}

/// Rules for the mock oracle, loadable from a JSON rule file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum MockRule {
    /// Valid iff verb_id == noun_id.
    Identity,
    /// Valid iff verb_id <= noun_id.
    VerbLeNoun,
    AllValid,
    /// Valid exactly for the listed [verb_id, noun_id] pairs.
    Pairs { valid: Vec<(usize, usize)> },
    /// Like Identity but answers gibberish for the listed pairs.
    IdentityWithGarbage { garbage: Vec<(usize, usize)> },
}

impl MockRule {
    pub fn load_json(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| OracleError::Cache { line: e.line(), message: e.to_string() })
    }
}

impl MockChatClient {
    pub fn new(rule: MockRule, vocab: Vocabulary) -> Self {
        MockChatClient {
            rule,
            vocab,
            calls: AtomicUsize::new(0),
            in_flight: AtomicI64::new(0),
            max_in_flight: AtomicI64::new(0),
            latency: Duration::from_millis(0),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_observed_in_flight(&self) -> i64 {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn ids_from_prompt(&self, prompt: &str) -> Option<(usize, usize)> {
        // the default template quotes the action as "{verb} {noun}"
        let verb = self
            .vocab
            .verbs
            .iter()
            .position(|v| prompt.contains(&format!("\"{v} ")))?;
        let noun = self
            .vocab
            .nouns
            .iter()
            .position(|n| prompt.contains(&format!(" {n}\"")))?;
        Some((verb, noun))
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, prompt: &str) -> Result<String, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let out = match self.ids_from_prompt(prompt) {
            None => "I cannot tell.".to_string(),
            Some((v, n)) => {
                let valid = match &self.rule {
                    MockRule::Identity => v == n,
                    MockRule::VerbLeNoun => v <= n,
                    MockRule::AllValid => true,
                    MockRule::Pairs { valid } => valid.contains(&(v, n)),
                    MockRule::IdentityWithGarbage { garbage } => {
                        if garbage.contains(&(v, n)) {
                            self.in_flight.fetch_sub(1, Ordering::SeqCst);
                            return Ok("It depends on context.".to_string());
                        }
                        v == n
                    }
                };
                if valid { "YES".to_string() } else { "NO".to_string() }
            }
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        Ok(out)
    }
}

/// Reads every JSON-lines record; later records for a pair win.
pub fn load_cache(path: &Path) -> Result<BTreeMap<(usize, usize), OracleVerdict>, OracleError> {
    let mut map = BTreeMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let text = std::fs::read_to_string(path)?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut record: OracleVerdict = serde_json::from_str(line).map_err(|e| {
            OracleError::Cache { line: idx + 1, message: e.to_string() }
        })?;
        record.cached = true;
        map.insert((record.verb_id, record.noun_id), record);
    }
    Ok(map)
}

/// Queries one verdict per (verb, noun) pair.
///
/// The cache is consulted first; missing pairs are fetched over `client`
/// with `retries` attempts each, at most `max_concurrent` in flight, and
/// appended to the cache as they arrive. Unknown verdicts (unparseable
/// answers after retries) are reported and default to invalid in the mask.
pub fn query_matrix(
    vocab: &Vocabulary,
    cfg: &OracleConfig,
    client: &dyn ChatClient,
) -> Result<(ValidityMask, Vec<(usize, usize)>), OracleError> {
    cfg.validate()?;
    let verbs = vocab.verbs.len();
    let nouns = vocab.nouns.len();
    let mut verdicts = load_cache(&cfg.cache_path)?;

    let pending: Vec<(usize, usize)> = (0..verbs)
        .flat_map(|v| (0..nouns).map(move |n| (v, n)))
        .filter(|key| !verdicts.contains_key(key))
        .collect();

    if !pending.is_empty() {
        if let Some(parent) = cfg.cache_path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut cache_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&cfg.cache_path)?;

        let queue = Arc::new(Mutex::new(pending));
        let (tx, rx) = mpsc::channel::<Result<OracleVerdict, OracleError>>();
        let workers = cfg.max_concurrent.min(queue.lock().unwrap().len()).max(1);

        std::thread::scope(|scope| -> Result<(), OracleError> {
            for _ in 0..workers {
                let queue = Arc::clone(&queue);
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap().pop();
                    let Some((v, n)) = next else { break };
                    let result = fetch_one(vocab, cfg, client, v, n);
                    if tx.send(result).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            let mut first_error = None;
            for result in rx {
                match result {
                    Ok(record) => {
                        let line = serde_json::to_string(&record).expect("verdict serializes");
                        writeln!(cache_file, "{line}")?;
                        cache_file.flush()?;
                        verdicts.insert((record.verb_id, record.noun_id), record);
                    }
                    Err(e) => {
                        // stop issuing new work, keep what already finished
                        queue.lock().unwrap().clear();
                        if first_error.is_none() {
                            first_error = Some(e);
                        }
                    }
                }
            }
            match first_error {
                Some(e) => Err(e),
                None => Ok(()),
            }
        })?;
    }

    let mut valid = vec![false; verbs * nouns];
    let mut unknowns = Vec::new();
    for v in 0..verbs {
        for n in 0..nouns {
            let record = verdicts.get(&(v, n)).expect("every pair resolved");
            valid[v * nouns + n] = match record.verdict {
                Verdict::Valid => true,
                Verdict::Invalid => false,
                Verdict::Unknown => {
                    unknowns.push((v, n));
                    cfg.unknown_as_valid
                }
            };
        }
    }
    let mask = ValidityMask::new(valid, verbs, nouns)?;
    Ok((mask, unknowns))
}

fn fetch_one(
    vocab: &Vocabulary,
    cfg: &OracleConfig,
    client: &dyn ChatClient,
    verb_id: usize,
    noun_id: usize,
) -> Result<OracleVerdict, OracleError> {
    let prompt = build_prompt(&vocab.verbs[verb_id], &vocab.nouns[noun_id], &cfg.prompt_template)?;
    let attempts = cfg.retries.max(1);
    let mut last_err = String::new();
    for attempt in 0..attempts {
        match client.complete(&prompt) {
            Ok(raw) => {
                return Ok(OracleVerdict {
                    verb_id,
                    noun_id,
                    verdict: parse_verdict(&raw),
                    raw_response: raw,
                    cached: false,
                });
            }
            Err(OracleError::Network { message, .. }) => {
                last_err = message;
                if attempt + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(100 * (attempt as u64 + 1)));
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(OracleError::Network { attempts, message: last_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(
            (0..n).map(|i| format!("verb{i}")).collect(),
            (0..n).map(|i| format!("noun{i}")).collect(),
        )
        .unwrap()
    }

    fn test_config(dir: &Path) -> OracleConfig {
        OracleConfig {
            endpoint: "http://unused".into(),
            model: "test".into(),
            api_key_env: "UNUSED_KEY".into(),
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            max_concurrent: 3,
            retries: 2,
            timeout_ms: 1000,
            cache_path: dir.join("cache.jsonl"),
            unknown_as_valid: false,
        }
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("actlogic-oracle-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn prompt_substitutes_both_slots_once() {
        let p = build_prompt("open", "fridge", DEFAULT_PROMPT_TEMPLATE).unwrap();
        assert_eq!(p.matches("open").count(), 1);
        assert_eq!(p.matches("fridge").count(), 1);
        assert!(p.contains("\"open fridge\""));
    }

    #[test]
    fn template_without_slots_is_rejected() {
        assert!(matches!(
            build_prompt("a", "b", "does {verb} make sense?"),
            Err(OracleError::Template)
        ));
    }

    #[test]
    fn verdict_parsing_scans_first_token() {
        assert_eq!(parse_verdict("Yes, that is a common action."), Verdict::Valid);
        assert_eq!(parse_verdict("no"), Verdict::Invalid);
        assert_eq!(parse_verdict("  NO."), Verdict::Invalid);
        assert_eq!(parse_verdict("\"YES\""), Verdict::Valid);
        assert_eq!(parse_verdict("It depends on context."), Verdict::Unknown);
        assert_eq!(parse_verdict("Note: unclear."), Verdict::Unknown);
        assert_eq!(parse_verdict(""), Verdict::Unknown);
    }

    #[test]
    fn mock_identity_rule_yields_identity_mask() {
        let dir = temp_dir("identity");
        let cfg = test_config(&dir);
        let vocab = vocab(3);
        let client = MockChatClient::new(MockRule::Identity, vocab.clone());
        let (mask, unknowns) = query_matrix(&vocab, &cfg, &client).unwrap();
        assert!(unknowns.is_empty());
        assert_eq!(client.calls(), 9);
        for v in 0..3 {
            for n in 0..3 {
                assert_eq!(mask.is_valid(v, n), v == n);
            }
        }
    }

    #[test]
    fn warm_cache_performs_zero_calls() {
        let dir = temp_dir("warm");
        let cfg = test_config(&dir);
        let vocab = vocab(3);
        let first = MockChatClient::new(MockRule::VerbLeNoun, vocab.clone());
        let (mask1, _) = query_matrix(&vocab, &cfg, &first).unwrap();
        assert_eq!(first.calls(), 9);

        // offline client: every network attempt fails
        struct Offline;
        impl ChatClient for Offline {
            fn complete(&self, _prompt: &str) -> Result<String, OracleError> {
                Err(OracleError::Network { attempts: 1, message: "offline".into() })
            }
        }
        let (mask2, unknowns) = query_matrix(&vocab, &cfg, &Offline).unwrap();
        assert_eq!(mask1, mask2);
        assert!(unknowns.is_empty());
    }

    #[test]
    fn garbage_answer_becomes_unknown_and_invalid() {
        let dir = temp_dir("garbage");
        let cfg = test_config(&dir);
        let vocab = vocab(3);
        let client = MockChatClient::new(
            MockRule::IdentityWithGarbage { garbage: vec![(1, 1)] },
            vocab.clone(),
        );
        let (mask, unknowns) = query_matrix(&vocab, &cfg, &client).unwrap();
        assert_eq!(unknowns, vec![(1, 1)]);
        assert!(!mask.is_valid(1, 1));
        assert!(mask.is_valid(0, 0));
    }

    #[test]
    fn unknown_as_valid_flag_flips_default() {
        let dir = temp_dir("unknown-valid");
        let mut cfg = test_config(&dir);
        cfg.unknown_as_valid = true;
        let vocab = vocab(3);
        let client = MockChatClient::new(
            MockRule::IdentityWithGarbage { garbage: vec![(1, 1)] },
            vocab.clone(),
        );
        let (mask, unknowns) = query_matrix(&vocab, &cfg, &client).unwrap();
        assert_eq!(unknowns, vec![(1, 1)]);
        assert!(mask.is_valid(1, 1));
    }

    #[test]
    fn concurrency_stays_within_bound() {
        let dir = temp_dir("bound");
        let mut cfg = test_config(&dir);
        cfg.max_concurrent = 2;
        let vocab = vocab(4);
        let client = MockChatClient::new(MockRule::VerbLeNoun, vocab.clone())
            .with_latency(Duration::from_millis(5));
        let (_, _) = query_matrix(&vocab, &cfg, &client).unwrap();
        assert_eq!(client.calls(), 16);
        assert!(client.max_observed_in_flight() <= 2, "bound exceeded");
        assert!(client.max_observed_in_flight() >= 1);
    }

    #[test]
    fn network_failure_preserves_partial_cache() {
        let dir = temp_dir("partial");
        let mut cfg = test_config(&dir);
        cfg.max_concurrent = 1;
        cfg.retries = 1;
        let vocab = vocab(3);

        // answers the diagonal, fails everything else
        struct Flaky {
            vocab: Vocabulary,
        }
        impl ChatClient for Flaky {
            fn complete(&self, prompt: &str) -> Result<String, OracleError> {
                for (i, v) in self.vocab.verbs.iter().enumerate() {
                    if prompt.contains(&format!("\"{v} ")) {
                        if prompt.contains(&format!(" {}\"", self.vocab.nouns[i])) {
                            return Ok("YES".into());
                        }
                        return Err(OracleError::Network { attempts: 1, message: "boom".into() });
                    }
                }
                Err(OracleError::Network { attempts: 1, message: "boom".into() })
            }
        }
        let err = query_matrix(&vocab, &cfg, &Flaky { vocab: vocab.clone() }).unwrap_err();
        assert!(matches!(err, OracleError::Network { .. }));
        let cache = load_cache(&cfg.cache_path).unwrap();
        assert!(!cache.is_empty(), "successful verdicts were not preserved");
        for record in cache.values() {
            assert_eq!(record.verdict, Verdict::Valid);
        }
    }

    #[test]
    fn cache_replay_is_order_independent() {
        let dir = temp_dir("replay");
        let path = dir.join("cache.jsonl");
        let a = OracleVerdict {
            verb_id: 0,
            noun_id: 1,
            verdict: Verdict::Valid,
            raw_response: "YES".into(),
            cached: false,
        };
        let b = OracleVerdict {
            verb_id: 1,
            noun_id: 0,
            verdict: Verdict::Invalid,
            raw_response: "NO".into(),
            cached: false,
        };
        let forward = format!(
            "{}\n{}\n",
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let backward = format!(
            "{}\n{}\n",
            serde_json::to_string(&b).unwrap(),
            serde_json::to_string(&a).unwrap()
        );
        std::fs::write(&path, forward).unwrap();
        let m1 = load_cache(&path).unwrap();
        std::fs::write(&path, backward).unwrap();
        let m2 = load_cache(&path).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn corrupt_cache_line_is_reported() {
        let dir = temp_dir("corrupt");
        let path = dir.join("cache.jsonl");
        std::fs::write(&path, "{\"verb_id\":0}\n").unwrap();
        assert!(matches!(load_cache(&path), Err(OracleError::Cache { line: 1, .. })));
    }

    #[test]
    fn missing_api_key_is_auth_error() {
        let dir = temp_dir("auth");
        let mut cfg = test_config(&dir);
        cfg.api_key_env = "ACTLOGIC_TEST_KEY_THAT_DOES_NOT_EXIST".into();
        assert!(matches!(
            HttpChatClient::from_config(&cfg),
            Err(OracleError::Auth(_))
        ));
    }

    /// Minimal one-shot HTTP stub that checks the request shape and
    /// answers like a chat-completions endpoint.
    fn spawn_stub(expect_model: &'static str, reply: &'static str) -> (String, std::thread::JoinHandle<()>) {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut tmp = [0u8; 4096];
            let (headers_end, content_length) = loop {
                let n = stream.read(&mut tmp).unwrap();
                buf.extend_from_slice(&tmp[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&buf[..pos]).to_string();
                    let len = head
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    assert!(
                        head.lines()
                            .any(|l| l.to_ascii_lowercase().starts_with("authorization: bearer ")),
                        "missing bearer auth in:\n{head}"
                    );
                    break (pos + 4, len);
                }
            };
            while buf.len() < headers_end + content_length {
                let n = stream.read(&mut tmp).unwrap();
                buf.extend_from_slice(&tmp[..n]);
            }
            let body: serde_json::Value =
                serde_json::from_slice(&buf[headers_end..headers_end + content_length]).unwrap();
            assert_eq!(body["model"], expect_model);
            assert_eq!(body["messages"][0]["role"], "user");
            assert!(body["messages"][0]["content"].as_str().unwrap().contains("YES or NO"));

            let payload = serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": reply}}]
            })
            .to_string();
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
                payload.len(),
                payload
            );
            stream.write_all(response.as_bytes()).unwrap();
        });
        (format!("http://{addr}"), handle)
    }

    #[test]
    fn http_client_speaks_the_chat_completions_wire_format() {
        let (endpoint, handle) = spawn_stub("test-model", "YES, definitely.");
        std::env::set_var("ACTLOGIC_STUB_KEY", "sk-test");
        let dir = temp_dir("wire");
        let mut cfg = test_config(&dir);
        cfg.endpoint = endpoint;
        cfg.model = "test-model".into();
        cfg.api_key_env = "ACTLOGIC_STUB_KEY".into();
        let client = HttpChatClient::from_config(&cfg).unwrap();
        let prompt = build_prompt("open", "fridge", &cfg.prompt_template).unwrap();
        let reply = client.complete(&prompt).unwrap();
        assert_eq!(parse_verdict(&reply), Verdict::Valid);
        handle.join().unwrap();
    }
}
