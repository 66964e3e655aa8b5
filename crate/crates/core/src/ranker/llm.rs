use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ComparatorError, Comparator, ComparisonContext, ComparisonOutcome, Contender};
use crate::error::{Error, Result};

pub const LLM_ENDPOINT_ENV: &str = "VF_LLM_ENDPOINT";
pub const LLM_API_KEY_ENV: &str = "VF_LLM_API_KEY";
pub const LLM_MODEL_ENV: &str = "VF_LLM_MODEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Characters kept from each function body.
    pub prompt_budget: usize,
    pub retries: usize,
    pub timeout_secs: u64,
}

impl LlmConfig {
    /// Reads endpoint, key and model from the environment.
    pub fn from_env(prompt_budget: usize) -> Result<Self> {
        let endpoint = std::env::var(LLM_ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{LLM_ENDPOINT_ENV} is not set")))?;
        Ok(LlmConfig {
            endpoint,
            api_key: std::env::var(LLM_API_KEY_ENV).ok().filter(|s| !s.is_empty()),
            model: std::env::var(LLM_MODEL_ENV).unwrap_or_else(|_| "gpt-4.1".into()),
            prompt_budget,
            retries: 3,
            timeout_secs: 120,
        })
    }
}

const SYSTEM: &str = "You are a security analyst. Given a vulnerability description and two Java \
functions labeled A and B, decide which function is more likely to contain the vulnerability \
itself, as opposed to merely calling into it. Answer with exactly one token: A, B, or TIE.";

const DEMOS: [(&str, &str, &str, &str); 2] = [
    (
        "XML external entity injection in the document loader allows reading arbitrary files \
         via a crafted DOCTYPE.",
        "public Document load(InputStream in) throws Exception {\n    \
         DocumentBuilderFactory f = DocumentBuilderFactory.newInstance();\n    \
         return f.newDocumentBuilder().parse(in);\n}",
        "public String title(Document d) {\n    \
         return d.getElementsByTagName(\"title\").item(0).getTextContent();\n}",
        "A",
    ),
    (
        "Path traversal in archive extraction lets entries with '../' write outside the target \
         directory.",
        "public long size(ZipEntry e) {\n    return e.getSize();\n}",
        "public void extract(ZipEntry e, File dir) throws IOException {\n    \
         File out = new File(dir, e.getName());\n    copy(zip.getInputStream(e), out);\n}",
        "B",
    ),
];

fn truncate(body: &str, budget: usize) -> &str {
    match body.char_indices().nth(budget) {
        Some((i, _)) => &body[..i],
        None => body,
    }
}

fn task(description: &str, terms: &[String], a: &str, b: &str) -> String {
    let mut s = format!("Vulnerability description:\n{description}\n");
    if !terms.is_empty() {
        s.push_str(&format!("Related weakness terms: {}\n", terms.join(", ")));
    }
    s.push_str(&format!("\nFunction A:\n```java\n{a}\n```\n\nFunction B:\n```java\n{b}\n```\n\nAnswer (A, B, or TIE):"));
    s
}

/// Chat messages for one comparison.
pub fn prompt(ctx: &ComparisonContext, first: &Contender, second: &Contender, budget: usize) -> serde_json::Value {
    let mut messages = vec![json!({"role": "system", "content": SYSTEM})];
    for (desc, a, b, answer) in DEMOS {
        messages.push(json!({"role": "user", "content": task(desc, &[], a, b)}));
        messages.push(json!({"role": "assistant", "content": answer}));
    }
    let terms: Vec<String> = ctx.expansion_terms.iter().take(20).cloned().collect();
    messages.push(json!({
        "role": "user",
        "content": task(&ctx.description, &terms, truncate(&first.body, budget), truncate(&second.body, budget)),
    }));
    serde_json::Value::Array(messages)
}

/// Reads a verdict out of a model reply. Accepts a bare answer or a reply
/// naming exactly one of the three answers as a standalone word.
pub fn parse_verdict(reply: &str) -> Option<ComparisonOutcome> {
    let verdict = |w: &str| match w {
        "A" => Some(ComparisonOutcome::FirstWins),
        "B" => Some(ComparisonOutcome::SecondWins),
        "TIE" => Some(ComparisonOutcome::Tie),
        _ => None,
    };
    let bare = reply.trim().trim_matches(|c: char| !c.is_alphanumeric()).to_uppercase();
    if let Some(v) = verdict(&bare) {
        return Some(v);
    }
    let mut found = None;
    for w in reply.split(|c: char| !c.is_alphanumeric()).filter_map(verdict) {
        match found {
            None => found = Some(w),
            Some(f) if f == w => {}
            Some(_) => return None,
        }
    }
    found
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

/// Comparator backed by a chat-completion endpoint.
pub struct LlmComparator {
    config: LlmConfig,
    url: reqwest::Url,
    client: reqwest::blocking::Client,
}

impl LlmComparator {
    pub fn new(config: LlmConfig) -> Result<Self> {
        let mut endpoint = config.endpoint.trim_end_matches('/').to_string();
        if !endpoint.ends_with("/chat/completions") {
            endpoint.push_str("/chat/completions");
        }
        let url = reqwest::Url::parse(&endpoint)
            .map_err(|e| Error::Config(format!("invalid comparator endpoint {:?}: {e}", config.endpoint)))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(LlmComparator { config, url, client })
    }

    fn request(&self, body: &serde_json::Value) -> std::result::Result<String, ComparatorError> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * (1 << attempt.min(5))));
                warn!("retrying comparator request (attempt {}): {last}", attempt + 1);
            }
            let mut req = self.client.post(self.url.clone()).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_server_error() || resp.status().as_u16() == 429 => {
                    last = format!("status {}", resp.status());
                }
                Ok(resp) if !resp.status().is_success() => {
                    return Err(ComparatorError::Transport(format!("comparator answered {}", resp.status())));
                }
                Ok(resp) => return resp.text().map_err(|e| ComparatorError::Transport(e.to_string())),
                Err(e) => last = e.to_string(),
            }
        }
        Err(ComparatorError::Transport(format!(
            "comparator unreachable after {} attempts: {last}",
            self.config.retries + 1
        )))
    }
}

impl Comparator for LlmComparator {
    fn compare(
        &self,
        ctx: &ComparisonContext,
        first: &Contender,
        second: &Contender,
    ) -> std::result::Result<ComparisonOutcome, ComparatorError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": prompt(ctx, first, second, self.config.prompt_budget),
        });
        let text = self.request(&body)?;
        let reply = serde_json::from_str::<ChatResponse>(&text)
            .ok()
            .and_then(|r| r.choices.into_iter().next())
            .and_then(|c| c.message.content)
            .ok_or_else(|| ComparatorError::Unparseable(text.clone()))?;
        parse_verdict(&reply).ok_or(ComparatorError::Unparseable(reply))
    }
}
