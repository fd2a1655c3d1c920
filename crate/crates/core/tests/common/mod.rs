//! Shared test scaffolding: an in-process HTTP server that imitates a chat
//! completion endpoint and an embedding endpoint, and paths to the bundled
//! miniature dataset.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn mini(file: &str) -> PathBuf {
    fixture_dir().join("mini").join(file)
}

pub const EMBED_DIM: usize = 32;

#[derive(Default)]
struct State {
    chat_prompts: Vec<String>,
    embed_inputs: Vec<String>,
    /// Status codes to answer with before serving normally.
    scripted_failures: VecDeque<u16>,
    /// Answer every request with 500.
    offline: bool,
    requests: usize,
}

/// Deterministic stand-in for the model provider.
#[derive(Clone)]
pub struct MockServer {
    pub base: String,
    state: Arc<Mutex<State>>,
}

impl MockServer {
    pub fn start() -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock server");
        let base = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(Mutex::new(State::default()));
        let shared = state.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let state = shared.clone();
                thread::spawn(move || handle(stream, &state));
            }
        });
        MockServer { base, state }
    }

    pub fn chat_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base)
    }

    pub fn embed_url(&self) -> String {
        format!("{}/v1/embeddings", self.base)
    }

    pub fn fail_next(&self, statuses: &[u16]) {
        self.state.lock().unwrap().scripted_failures.extend(statuses);
    }

    pub fn set_offline(&self, offline: bool) {
        self.state.lock().unwrap().offline = offline;
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().requests
    }

    pub fn chat_prompts(&self) -> Vec<String> {
        self.state.lock().unwrap().chat_prompts.clone()
    }

    pub fn embed_inputs(&self) -> Vec<String> {
        self.state.lock().unwrap().embed_inputs.clone()
    }

    pub fn clear_log(&self) {
        let mut s = self.state.lock().unwrap();
        s.chat_prompts.clear();
        s.embed_inputs.clear();
    }
}

fn handle(stream: TcpStream, state: &Mutex<State>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let (status, response) = {
        let mut s = state.lock().unwrap();
        s.requests += 1;
        if s.offline {
            (500, json!({"error": "offline"}))
        } else if let Some(code) = s.scripted_failures.pop_front() {
            (code, json!({"error": "scripted failure"}))
        } else if path.ends_with("/chat/completions") {
            let prompt = request["messages"][0]["content"].as_str().unwrap_or("").to_string();
            s.chat_prompts.push(prompt.clone());
            let content = mock_answer(&prompt);
            (200, json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}))
        } else if path.ends_with("/embeddings") {
            let inputs: Vec<String> = request["input"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_default();
            s.embed_inputs.extend(inputs.iter().cloned());
            let data: Vec<Value> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| json!({"index": i, "embedding": mock_embedding(t)}))
                .collect();
            (200, json!({"data": data}))
        } else {
            (404, json!({"error": "not found"}))
        }
    };
    let body = response.to_string();
    let reason = if status == 200 { "OK" } else { "ERR" };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Bag-of-words vector: tokens hashed into buckets, then L2-normalized.
pub fn mock_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; EMBED_DIM];
    for w in words(text) {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in w.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
        v[(h % EMBED_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Utterance words that make a PTKB word relevant.
const ASSOCIATIONS: &[(&str, &[&str])] = &[
    ("dinner", &["vegetarian", "meat"]),
    ("dessert", &["peanuts"]),
    ("buy", &["amsterdam"]),
    ("exercise", &["knee", "running"]),
    ("playlist", &["music", "jazz"]),
    ("garden", &["tomatoes", "balcony"]),
    ("training", &["dog"]),
    ("words", &["dutch"]),
    ("brew", &["coffee"]),
    ("rest", &["sleep"]),
    ("poses", &["yoga"]),
];

struct Parsed {
    kind: &'static str,
    utterance: String,
    ptkb: Vec<(String, String)>,
    hypothetical: String,
}

fn last_line_after<'a>(prompt: &'a str, marker: &str) -> &'a str {
    prompt
        .rfind(marker)
        .map(|i| prompt[i + marker.len()..].lines().next().unwrap_or(""))
        .unwrap_or("")
}

fn parse_prompt(prompt: &str) -> Parsed {
    let kind = if prompt.contains("Select the sentences") {
        "select"
    } else if prompt.contains("In one step") {
        "sar"
    } else if prompt.contains("write a hypothetical response") {
        "str_response"
    } else if prompt.contains("Given the conversation so far and a hypothetical response") {
        "str_rewrite"
    } else {
        "reformulate"
    };
    let mut ptkb = Vec::new();
    if let Some(i) = prompt.rfind("User knowledge base:\n") {
        for line in prompt[i..].lines().skip(1) {
            if line.starts_with("Conversation so far:") {
                break;
            }
            if let Some(rest) = line.strip_prefix('[') {
                if let Some((k, t)) = rest.split_once("] ") {
                    ptkb.push((k.to_string(), t.to_string()));
                }
            }
        }
    }
    Parsed {
        kind,
        utterance: last_line_after(prompt, "Current question: ").to_string(),
        ptkb,
        hypothetical: last_line_after(prompt, "Hypothetical response: ").to_string(),
    }
}

fn relevant(p: &Parsed) -> Vec<&(String, String)> {
    let utterance: BTreeSet<String> = words(&p.utterance).into_iter().collect();
    p.ptkb
        .iter()
        .filter(|(_, text)| {
            let sentence: BTreeSet<String> = words(text).into_iter().collect();
            ASSOCIATIONS
                .iter()
                .any(|(u, ws)| utterance.contains(*u) && ws.iter().any(|w| sentence.contains(*w)))
        })
        .collect()
}

fn keys(sel: &[&(String, String)]) -> String {
    if sel.is_empty() {
        "none".into()
    } else {
        sel.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(",")
    }
}

fn texts<'a>(sel: impl IntoIterator<Item = &'a (String, String)>) -> String {
    sel.into_iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join(" ")
}

fn joined(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

/// Deterministic answer for each prompt template.
pub fn mock_answer(prompt: &str) -> String {
    let p = parse_prompt(prompt);
    let question = p.utterance.trim_end_matches('?');
    match p.kind {
        "select" => json!({"ptkb_selection": keys(&relevant(&p))}).to_string(),
        "sar" => {
            let sel = relevant(&p);
            let rewrite = joined(&[question, &texts(sel.iter().copied())]);
            format!(
                "Here is my answer:\n```json\n{}\n```",
                json!({"ptkb_selection": keys(&sel), "rewrite": rewrite, "response": format!("Answer about {question}")})
            )
        }
        "str_response" => {
            let sel = relevant(&p);
            json!({"ptkb_selection": keys(&sel), "response": joined(&["Consider", &texts(sel.iter().copied())])}).to_string()
        }
        "str_rewrite" => json!({"rewrite": joined(&[question, &p.hypothetical])}).to_string(),
        _ => {
            let rewrite = joined(&[question, &texts(&p.ptkb)]);
            json!({"ptkb_selection": "none", "rewrite": rewrite, "response": format!("Answer about {question}")}).to_string()
        }
    }
}

/// Config text for the miniature dataset wired to `server`.
pub fn mini_config(server: &MockServer, work: &std::path::Path, grid: &str) -> String {
    format!(
        r#"seed = 7

[paths]
topics = "{topics}"
qrels = "{qrels}"
collection = "{collection}"
train_topics = "{train_topics}"
train_qrels = "{train_qrels}"
cache_dir = "{cache}"
output_dir = "{out}"

[retrieval]
depth = 20

[gateway]
endpoint = "{chat}"
parallelism = 4
retry = {{ max_retries = 2, base_delay_ms = 5, max_delay_ms = 20 }}

[embedding]
endpoint = "{embed}"
model = "mock-embed"
batch_size = 16
retry = {{ max_retries = 2, base_delay_ms = 5, max_delay_ms = 20 }}

[grid]
{grid}
"#,
        topics = mini("topics.json").display(),
        qrels = mini("qrels.txt").display(),
        collection = mini("collection.tsv").display(),
        train_topics = mini("train_topics.json").display(),
        train_qrels = mini("train_qrels.txt").display(),
        cache = work.join("cache").display(),
        out = work.join("out").display(),
        chat = server.chat_url(),
        embed = server.embed_url(),
    )
}
