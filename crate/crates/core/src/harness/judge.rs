//! Response scoring on the 1–5 scale.
//!
//! [`MockJudge`] is a deterministic keyword scorer meant only to make
//! pipeline runs reproducible; it says nothing about real persona quality.
//! [`ExternalJudge`] posts `{prompt, response, rubric}` to an HTTP endpoint
//! and reads back `{score}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::metrics::{quantize_score, JudgeKind};
use crate::error::{IrisError, Result};
use crate::types::{Aspect, Domain};

pub const DEFAULT_TOKEN_ENV: &str = "IRIS_JUDGE_TOKEN";

/// What a judge sees for one response.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRequest<'a> {
    pub question: &'a str,
    pub response: &'a str,
    pub domain: Domain,
    pub aspect: Aspect,
}

pub trait Judge: Send + Sync {
    fn kind(&self) -> JudgeKind;

    /// Raw score in `[1, 5]`.
    fn score(&self, request: &JudgeRequest<'_>) -> Result<f64>;
}

/// Keyword weights of one (domain, aspect): JSON
/// `{"domain", "aspect", "keywords": {word: weight}}` with weights ≥ 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub domain: Domain,
    pub aspect: Aspect,
    pub keywords: BTreeMap<String, f64>,
}

impl KeywordTable {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
        let t: KeywordTable =
            serde_json::from_str(&text).map_err(|e| IrisError::json(path.display().to_string(), e))?;
        if let Some((k, w)) = t
            .keywords
            .iter()
            .find(|(k, w)| k.is_empty() || !(w.is_finite() && **w >= 0.0))
        {
            return Err(IrisError::InvalidArgument(format!(
                "{}: keyword `{k}` has invalid weight {w}",
                path.display()
            )));
        }
        Ok(t)
    }

    /// `1 + 4 · coverage`, where coverage is the weight-scaled fraction of
    /// response bytes covered by greedy leftmost-longest keyword matches,
    /// normalized by the largest weight.
    pub fn score(&self, response: &str) -> f64 {
        let max_w = self.keywords.values().copied().fold(0.0, f64::max);
        let bytes = response.as_bytes();
        if bytes.is_empty() || max_w == 0.0 {
            return 1.0;
        }
        let mut covered = 0.0;
        let mut i = 0;
        while i < bytes.len() {
            let best = self
                .keywords
                .iter()
                .filter(|(k, _)| bytes[i..].starts_with(k.as_bytes()))
                .max_by_key(|(k, _)| k.len());
            match best {
                Some((k, w)) => {
                    covered += w * k.len() as f64;
                    i += k.len();
                }
                None => i += 1,
            }
        }
        let raw = 1.0 + 4.0 * covered / (max_w * bytes.len() as f64);
        quantize_score(raw.clamp(1.0, 5.0))
    }
}

/// Keyword tables read from `<dir>/<D>_<aspect>.json`.
#[derive(Debug, Clone)]
pub struct MockJudge {
    dir: PathBuf,
    tables: BTreeMap<(Domain, Aspect), KeywordTable>,
}

impl MockJudge {
    pub fn from_tables(tables: impl IntoIterator<Item = KeywordTable>) -> Self {
        MockJudge {
            dir: PathBuf::new(),
            tables: tables.into_iter().map(|t| ((t.domain, t.aspect), t)).collect(),
        }
    }

    /// Loads every table present in `dir`; absent pairs fail when scored.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(IrisError::MissingFile(dir.to_path_buf()));
        }
        let mut tables = BTreeMap::new();
        for domain in Domain::ALL {
            for aspect in Aspect::BOTH {
                let path = dir.join(format!("{domain}_{aspect}.json"));
                if path.exists() {
                    let t = KeywordTable::load(&path)?;
                    if (t.domain, t.aspect) != (domain, aspect) {
                        return Err(IrisError::InvalidArgument(format!(
                            "{} declares {} {}",
                            path.display(),
                            t.domain,
                            t.aspect
                        )));
                    }
                    tables.insert((domain, aspect), t);
                }
            }
        }
        Ok(MockJudge {
            dir: dir.to_path_buf(),
            tables,
        })
    }
}

impl Judge for MockJudge {
    fn kind(&self) -> JudgeKind {
        JudgeKind::Mock
    }

    fn score(&self, request: &JudgeRequest<'_>) -> Result<f64> {
        let table = self.tables.get(&(request.domain, request.aspect)).ok_or_else(|| {
            IrisError::MissingFile(self.dir.join(format!("{}_{}.json", request.domain, request.aspect)))
        })?;
        Ok(table.score(request.response))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalJudgeConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub attempts: u32,
    /// Delay before the second attempt; doubles afterwards.
    pub backoff: Duration,
    /// Environment variable holding an optional bearer token.
    pub token_env: String,
    /// Directory of `<D>_<aspect>.txt` rubric files.
    pub rubric_dir: Option<PathBuf>,
}

impl ExternalJudgeConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ExternalJudgeConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            attempts: 3,
            backoff: Duration::from_millis(500),
            token_env: DEFAULT_TOKEN_ENV.into(),
            rubric_dir: None,
        }
    }
}

#[derive(Serialize)]
struct JudgePayload<'a> {
    prompt: &'a str,
    response: &'a str,
    rubric: &'a str,
}

pub struct ExternalJudge {
    config: ExternalJudgeConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

enum Attempt {
    Retry(String),
    Fail(IrisError),
}

impl ExternalJudge {
    pub fn new(config: ExternalJudgeConfig) -> Result<Self> {
        if config.attempts == 0 {
            return Err(IrisError::InvalidArgument("judge needs at least one attempt".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(ExternalJudge { config, agent, token })
    }

    fn rubric(&self, domain: Domain, aspect: Aspect) -> Result<String> {
        match &self.config.rubric_dir {
            Some(dir) => {
                let path = dir.join(format!("{domain}_{aspect}.txt"));
                fs::read_to_string(&path).map_err(|e| IrisError::io(&path, e))
            }
            None => Ok(format!(
                "Rate from 1 to 5 how strongly the response expresses the {domain} trait. \
                 The response was written for the {aspect} aspect."
            )),
        }
    }

    fn attempt(&self, payload: &JudgePayload<'_>) -> std::result::Result<f64, Attempt> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send_json(payload).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fail(IrisError::Judge(format!("HTTP {status}"))));
        }
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fail(IrisError::Judge(format!("unreadable reply: {e}"))))?;
        let score = body
            .get("score")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| Attempt::Fail(IrisError::Judge(format!("reply lacks a numeric score: {body}"))))?;
        if !(1.0..=5.0).contains(&score) {
            return Err(Attempt::Fail(IrisError::ScoreOutOfRange(score)));
        }
        Ok(quantize_score(score))
    }
}

impl Judge for ExternalJudge {
    fn kind(&self) -> JudgeKind {
        JudgeKind::External
    }

    fn score(&self, request: &JudgeRequest<'_>) -> Result<f64> {
        let rubric = self.rubric(request.domain, request.aspect)?;
        let payload = JudgePayload {
            prompt: request.question,
            response: request.response,
            rubric: &rubric,
        };
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 1..=self.config.attempts {
            match self.attempt(&payload) {
                Ok(s) => return Ok(s),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("judge attempt {attempt}/{} failed: {msg}", self.config.attempts);
                    last = msg;
                    if attempt < self.config.attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(IrisError::Judge(format!(
            "gave up after {} attempts: {last}",
            self.config.attempts
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    fn table(words: &[(&str, f64)]) -> KeywordTable {
        KeywordTable {
            domain: Domain::E,
            aspect: Aspect::Positive,
            keywords: words.iter().map(|(k, w)| (k.to_string(), *w)).collect(),
        }
    }

    #[test]
    fn mock_scores_clamp_and_repeat() {
        let t = table(&[("party", 1.0), ("quiet", 0.25)]);
        assert_eq!(t.score(""), 1.0);
        assert_eq!(t.score("partyparty"), 5.0);
        assert_eq!(t.score("xxxxx"), 1.0);
        let s = t.score("party quiet");
        assert_eq!(s, t.score("party quiet"));
        // (5 + 0.25 * 5) / 11 coverage
        assert!((s - quantize_score(1.0 + 4.0 * 6.25 / 11.0)).abs() < 1e-12);
    }

    #[test]
    fn longest_match_wins() {
        let t = table(&[("P", 0.5), ("PP", 1.0)]);
        assert_eq!(t.score("PP"), 5.0);
        assert_eq!(t.score("P"), 3.0);
    }

    #[test]
    fn missing_table_is_an_error() {
        let judge = MockJudge::from_tables([table(&[("a", 1.0)])]);
        let req = JudgeRequest {
            question: "q",
            response: "a",
            domain: Domain::O,
            aspect: Aspect::Positive,
        };
        assert!(matches!(judge.score(&req), Err(IrisError::MissingFile(_))));
    }

    /// Serves one canned reply per connection and records request bodies.
    fn stub_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}/judge", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (addr, seen)
    }

    fn judge(endpoint: String) -> ExternalJudge {
        ExternalJudge::new(ExternalJudgeConfig {
            backoff: Duration::from_millis(5),
            timeout: Duration::from_secs(5),
            token_env: "IRIS_TEST_UNSET_TOKEN".into(),
            ..ExternalJudgeConfig::new(endpoint)
        })
        .unwrap()
    }

    fn req() -> JudgeRequest<'static> {
        JudgeRequest {
            question: "Plans tonight?",
            response: "Big party!",
            domain: Domain::E,
            aspect: Aspect::Positive,
        }
    }

    #[test]
    fn external_judge_echoes_score() {
        let (addr, seen) = stub_server(vec![(200, r#"{"score": 4}"#.into())]);
        assert_eq!(judge(addr).score(&req()).unwrap(), 4.0);
        let body: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(body["prompt"], "Plans tonight?");
        assert_eq!(body["response"], "Big party!");
        assert!(body["rubric"].as_str().unwrap().contains('E'));
    }

    #[test]
    fn external_judge_retries_server_errors() {
        let (addr, seen) = stub_server(vec![
            (503, "{}".into()),
            (503, "{}".into()),
            (200, r#"{"score": 2.5}"#.into()),
        ]);
        assert_eq!(judge(addr).score(&req()).unwrap(), 2.5);
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn external_judge_gives_up_after_three_failures() {
        let (addr, _) = stub_server(vec![(503, "{}".into()), (503, "{}".into()), (503, "{}".into())]);
        assert!(matches!(judge(addr).score(&req()), Err(IrisError::Judge(_))));
    }

    #[test]
    fn external_judge_validates_scores() {
        let (addr, _) = stub_server(vec![(200, r#"{"score": 9}"#.into())]);
        assert!(matches!(judge(addr).score(&req()), Err(IrisError::ScoreOutOfRange(s)) if s == 9.0));
        let (addr, _) = stub_server(vec![(200, r#"{"score": "high"}"#.into())]);
        assert!(matches!(judge(addr).score(&req()), Err(IrisError::Judge(_))));
    }
}
