//! Optional LLM judge for topic coherence and cross-lingual similarity.
//!
//! Every topic is rated several times by a chat-completion provider; replies
//! are reduced to the first integer they contain and averaged.

use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::TopicSet;
use crate::corpus::Lang;
use crate::error::{Error, Result};

pub const URL_VAR: &str = "XTRA_LLM_URL";
pub const KEY_VAR: &str = "XTRA_LLM_KEY";
pub const MODEL_VAR: &str = "XTRA_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    EcNews,
    AmazonReview,
    RakutenAmazon,
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ec-news" => Ok(Dataset::EcNews),
            "amazon-review" => Ok(Dataset::AmazonReview),
            "rakuten-amazon" => Ok(Dataset::RakutenAmazon),
            _ => Err(Error::invalid(
                "dataset",
                format!("`{s}` is not one of ec-news, amazon-review, rakuten-amazon"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingTask {
    IntraCoherence,
    CrossSimilarity,
}

impl FromStr for RatingTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra" | "intra-coherence" => Ok(RatingTask::IntraCoherence),
            "cross" | "cross-similarity" => Ok(RatingTask::CrossSimilarity),
            _ => Err(Error::invalid("task", format!("`{s}` is not one of intra, cross"))),
        }
    }
}

pub fn system_prompt(dataset: Dataset, task: RatingTask) -> &'static str {
    match (task, dataset) {
        (RatingTask::IntraCoherence, Dataset::EcNews) => {
            "You are a helpful assistant evaluating the top words of a topic model output for a given topic. The dataset is EC News, a collection of English and Chinese news with 6 categories: business, education, entertainment, sports, tech, and fashion. Please rate how related the following words are to each other on a scale from 1 to 3 (\"1\"=not very related, \"2\"=moderately related, \"3\"=very related). Reply with a single number, indicating the overall appropriateness of the topic."
        }
        (RatingTask::IntraCoherence, Dataset::AmazonReview) => {
            "You are a helpful assistant evaluating the top words of a topic model output for a given topic. The dataset is Amazon Review, which includes English and Chinese reviews from the Amazon website. Please rate how related the following words are to each other on a scale from 1 to 3 (\"1\"=not very related, \"2\"=moderately related, \"3\"=very related). Reply with a single number, indicating the overall appropriateness of the topic."
        }
        (RatingTask::IntraCoherence, Dataset::RakutenAmazon) => {
            "You are a helpful assistant evaluating the top words of a topic model output for a given topic. The dataset is Rakuten Amazon, which contains Japanese reviews from Rakuten, and English reviews from Amazon. Please rate how related the following words are to each other on a scale from 1 to 3 (\"1\"=not very related, \"2\"=moderately related, \"3\"=very related). Reply with a single number, indicating the overall appropriateness of the topic."
        }
        (RatingTask::CrossSimilarity, Dataset::EcNews) => {
            "You are a helpful assistant evaluating the similarity of topics derived from topic modeling on parallel news corpora. The dataset is EC News, with English and Chinese news. You will be given two sets of top words, one for an English topic (Language 1) and one for a Chinese topic (Language 2). Please rate how similar the underlying topics represented by these two sets of words are, on a scale from 1 to 3 (\"1\"=not very similar, \"2\"=moderately similar, \"3\"=very similar). Reply with a single number."
        }
        (RatingTask::CrossSimilarity, Dataset::AmazonReview) => {
            "You are a helpful assistant evaluating the similarity of topics derived from topic modeling on parallel review corpora. The dataset is Amazon Review, with English and Chinese reviews. You will be given two sets of top words, one for an English topic (Language 1) and one for a Chinese topic (Language 2). Please rate how similar the underlying topics represented by these two sets of words are, on a scale from 1 to 3 (\"1\"=not very similar, \"2\"=moderately similar, \"3\"=very similar). Reply with a single number."
        }
        (RatingTask::CrossSimilarity, Dataset::RakutenAmazon) => {
            "You are a helpful assistant evaluating the similarity of topics derived from topic modeling on parallel review corpora. The dataset is Rakuten Amazon, with Japanese reviews (Rakuten - Language 2) and English reviews (Amazon - Language 1). You will be given two sets of top words, one for an English topic and one for a Japanese topic. Please rate how similar the underlying topics represented by these two sets of words are, on a scale from 1 to 3 (\"1\"=not very similar, \"2\"=moderately similar, \"3\"=very similar). Reply with a single number."
        }
    }
}

pub fn intra_message(words: &[String]) -> String {
    format!("Words: {}", words.join(", "))
}

pub fn cross_message(l1: &[String], l2: &[String]) -> String {
    format!("Language 1: {}\nLanguage 2: {}", l1.join(", "), l2.join(", "))
}

/// The first run of ASCII digits in `reply`, if it is 1, 2 or 3.
pub fn parse_rating(reply: &str) -> Option<u8> {
    let start = reply.find(|c: char| c.is_ascii_digit())?;
    let digits: String = reply[start..].chars().take_while(char::is_ascii_digit).collect();
    match digits.parse::<u32>() {
        Ok(v @ 1..=3) => Some(v as u8),
        _ => None,
    }
}

/// A chat-completion service.
pub trait RatingProvider: Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

/// OpenAI-compatible chat endpoint with bearer authentication.
#[derive(Debug)]
pub struct HttpProvider {
    url: String,
    key: String,
    model: String,
    agent: ureq::Agent,
    rate_limit_retries: u32,
    backoff: Duration,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            key: key.into(),
            model: model.into(),
            agent,
            rate_limit_retries: 5,
            backoff: Duration::from_millis(500),
        }
    }

    /// Reads the endpoint, credential and optional model name from the
    /// environment.
    pub fn from_env() -> Result<Self> {
        let get = |var: &str| std::env::var(var).ok().filter(|v| !v.is_empty());
        let url = get(URL_VAR).ok_or_else(|| Error::Provider(format!("{URL_VAR} is not set")))?;
        let key = get(KEY_VAR).ok_or_else(|| Error::Provider(format!("{KEY_VAR} is not set")))?;
        let model = get(MODEL_VAR).unwrap_or_else(|| "gpt-4o-mini".to_string());
        Ok(Self::new(url, key, model))
    }

    pub fn with_backoff(mut self, initial: Duration, retries: u32) -> Self {
        self.backoff = initial;
        self.rate_limit_retries = retries;
        self
    }
}

impl RatingProvider for HttpProvider {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut wait = self.backoff;
        for attempt in 0..=self.rate_limit_retries {
            let mut resp = self
                .agent
                .post(&self.url)
                .header("Authorization", &format!("Bearer {}", self.key))
                .send_json(&body)
                .map_err(|e| Error::Provider(format!("request to {} failed: {e}", self.url)))?;
            let status = resp.status().as_u16();
            if status == 429 && attempt < self.rate_limit_retries {
                let hinted = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                std::thread::sleep(hinted.unwrap_or(wait).min(Duration::from_secs(60)));
                wait *= 2;
                continue;
            }
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| Error::Provider(format!("reading response: {e}")))?;
            if !(200..300).contains(&status) {
                return Err(Error::Provider(format!("HTTP {status}: {}", text.trim())));
            }
            let v: Value = serde_json::from_str(&text).map_err(|e| Error::Provider(format!("bad JSON reply: {e}")))?;
            return v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::Provider("reply has no choices[0].message.content".into()));
        }
        Err(Error::Provider("rate limited; retries exhausted".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingOptions {
    /// Independent ratings averaged per topic.
    pub assessments: usize,
    /// Extra attempts for a reply that does not parse.
    pub retries: usize,
    pub concurrency: usize,
}

impl Default for RatingOptions {
    fn default() -> Self {
        Self {
            assessments: 3,
            retries: 2,
            concurrency: 4,
        }
    }
}

/// Mean ratings of one series of prompts; `None` where no reply parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSeries {
    pub name: String,
    pub scores: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

fn rate_one(provider: &dyn RatingProvider, system: &str, user: &str, opts: &RatingOptions) -> Result<Option<f64>> {
    let mut got = Vec::with_capacity(opts.assessments);
    for _ in 0..opts.assessments {
        for _ in 0..=opts.retries {
            if let Some(r) = parse_rating(&provider.complete(system, user)?) {
                got.push(r as f64);
                break;
            }
        }
    }
    Ok((!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64))
}

/// Rates every topic. Intra-lingual coherence yields one series per
/// language; cross-lingual similarity yields a single series.
pub fn llm_rate_topics(
    topics: &TopicSet,
    task: RatingTask,
    dataset: Dataset,
    provider: &dyn RatingProvider,
    opts: &RatingOptions,
) -> Result<Vec<RatingSeries>> {
    let system = system_prompt(dataset, task);
    let (names, messages): (Vec<String>, Vec<Vec<String>>) = match task {
        RatingTask::IntraCoherence => Lang::BOTH
            .iter()
            .map(|&l| (l.as_str().to_string(), topics.topics(l).iter().map(|t| intra_message(t)).collect()))
            .unzip(),
        RatingTask::CrossSimilarity => (
            vec!["cross".to_string()],
            vec![topics.l1.iter().zip(&topics.l2).map(|(a, b)| cross_message(a, b)).collect()],
        ),
    };
    let jobs: Vec<(usize, usize)> = messages
        .iter()
        .enumerate()
        .flat_map(|(s, m)| (0..m.len()).map(move |t| (s, t)))
        .collect();
    let results: Mutex<Vec<Option<f64>>> = Mutex::new(vec![None; jobs.len()]);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        for _ in 0..opts.concurrency.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                if j >= jobs.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let (s, t) = jobs[j];
                match rate_one(provider, system, &messages[s][t], opts) {
                    Ok(v) => results.lock().unwrap()[j] = v,
                    Err(e) => {
                        stop.store(true, Ordering::SeqCst);
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let flat = results.into_inner().unwrap();
    let mut out = Vec::new();
    let mut offset = 0;
    for (name, m) in names.into_iter().zip(&messages) {
        let scores = flat[offset..offset + m.len()].to_vec();
        offset += m.len();
        let known: Vec<f64> = scores.iter().flatten().copied().collect();
        let mean = (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64);
        out.push(RatingSeries { name, scores, mean });
    }
    Ok(out)
}
