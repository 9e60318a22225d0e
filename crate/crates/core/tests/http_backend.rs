use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use specforge_core::llm::{complete, HttpBackend, HttpConfig, ModelRole, PromptRequest};
use specforge_core::model::content_id;
use specforge_core::Error;

#[derive(Debug, Clone)]
struct Seen {
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Serves the scripted `(status, body)` replies in order, one per
/// connection, and records every request it receives.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, reply) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let trimmed = line.trim_end();
                if trimmed.is_empty() {
                    break;
                }
                let (k, v) = trimmed.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let length: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map_or(0, |(_, v)| v.parse().unwrap());
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                headers,
                body: serde_json::from_slice(&body).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/http").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn backend(url: &str, token_env: &str) -> HttpBackend {
    let mut config = HttpConfig::new(url, "general-model", "code-model");
    config.backoff = Duration::from_millis(10);
    config.timeout = Duration::from_secs(10);
    config.token_env = token_env.to_string();
    HttpBackend::new(config).unwrap()
}

fn coder_request() -> PromptRequest {
    let mut request = PromptRequest::new(ModelRole::Coder, "# In[ ]:\nimport pandas as pd\n");
    request.n_samples = 2;
    request.max_tokens = 512;
    request.stop_sequences = vec!["# In[ ]:".into()];
    request.seed = 7;
    request
}

#[test]
fn request_body_and_headers_match_golden() {
    std::env::set_var("SPECFORGE_TEST_TOKEN_GOLDEN", "sekret");
    let (url, seen) = serve(vec![(200, fixture("response_two_choices.json"))]);
    let backend = backend(&url, "SPECFORGE_TEST_TOKEN_GOLDEN");
    let out = complete(&coder_request(), &backend).unwrap();
    assert_eq!(out, vec!["df.head()".to_string(), "df.describe()\n".to_string()]);

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    let expected: Value = serde_json::from_str(&fixture("request_coder.json")).unwrap();
    assert_eq!(seen[0].body, expected);
    assert_eq!(seen[0].header("authorization"), Some("Bearer sekret"));
    assert_eq!(
        seen[0].header("x-request-id"),
        Some(content_id("req", &[&expected.to_string()]).as_str())
    );
}

#[test]
fn no_token_means_no_authorization_header() {
    let (url, seen) = serve(vec![(200, fixture("response_one_text.json"))]);
    let backend = backend(&url, "SPECFORGE_TEST_TOKEN_UNSET");
    let mut request = PromptRequest::new(ModelRole::Generalist, "hello");
    request.seed = 1;
    assert_eq!(complete(&request, &backend).unwrap(), vec!["df.tail()".to_string()]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].header("authorization"), None);
    assert_eq!(seen[0].body["model"], "general-model");
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![
        (503, "{\"error\":\"busy\"}".into()),
        (500, "{\"error\":\"oops\"}".into()),
        (200, fixture("response_two_choices.json")),
    ]);
    let backend = backend(&url, "SPECFORGE_TEST_TOKEN_UNSET");
    assert_eq!(complete(&coder_request(), &backend).unwrap().len(), 2);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].header("x-request-id"), seen[2].header("x-request-id"));
}

#[test]
fn exhausted_retries_are_a_backend_error() {
    let (url, _) = serve(vec![(502, "{}".into()), (502, "{}".into()), (502, "{}".into())]);
    let err = complete(&coder_request(), &backend(&url, "SPECFORGE_TEST_TOKEN_UNSET")).unwrap_err();
    assert!(matches!(err, Error::Backend(_)), "{err}");
    assert!(err.is_infrastructure());
}

#[test]
fn rate_limit_is_a_quota_error_without_retry() {
    let (url, seen) = serve(vec![(429, "{\"error\":\"slow down\"}".into())]);
    let err = complete(&coder_request(), &backend(&url, "SPECFORGE_TEST_TOKEN_UNSET")).unwrap_err();
    assert!(matches!(err, Error::Quota(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, "{\"error\":\"bad\"}".into())]);
    let err = complete(&coder_request(), &backend(&url, "SPECFORGE_TEST_TOKEN_UNSET")).unwrap_err();
    assert!(matches!(err, Error::Backend(_)));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn short_answers_are_topped_up() {
    let (url, seen) = serve(vec![
        (200, fixture("response_one_text.json")),
        (200, fixture("response_one_text.json")),
    ]);
    let out = complete(&coder_request(), &backend(&url, "SPECFORGE_TEST_TOKEN_UNSET")).unwrap();
    assert_eq!(out, vec!["df.tail()".to_string(), "df.tail()".to_string()]);
    let seen = seen.lock().unwrap();
    assert_eq!((seen[0].body["n"].as_u64(), seen[0].body["seed"].as_u64()), (Some(2), Some(7)));
    assert_eq!((seen[1].body["n"].as_u64(), seen[1].body["seed"].as_u64()), (Some(1), Some(8)));
}
