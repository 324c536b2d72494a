use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use tor_core::backend::{BackendError, ChatBackend, ChatRequest, Message, RemoteBackend, RemoteConfig};

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;

/// Serves one canned status per connection, in order, and returns the request bodies.
fn stub(statuses: Vec<u16>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for status in statuses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            bodies.push(String::from_utf8(body).unwrap());
            let payload = if status == 200 { OK_BODY } else { "{}" };
            let reason = match status {
                200 => "OK",
                429 => "Too Many Requests",
                _ => "Unauthorized",
            };
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn backend(url: String, max_retries: u32) -> RemoteBackend {
    RemoteBackend::new(RemoteConfig {
        base_url: url,
        model: "stub-model".into(),
        api_key: Some("sk-test".into()),
        timeout: Duration::from_secs(5),
        max_retries,
        backoff_base: Duration::from_millis(1),
        backoff_max: Duration::from_millis(4),
        seed: 0,
    })
    .unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        messages: vec![Message::system("persona"), Message::user("Will you speak?")],
        temperature: 0.0,
        max_tokens: 8,
        tag: "outpatient/participate/1.1".into(),
    }
}

#[test]
fn rate_limits_are_retried_until_success() {
    let (url, server) = stub(vec![429, 429, 200]);
    let b = backend(url, 3);
    let response = b.complete(&request()).unwrap();
    assert_eq!(response.content, "Yes");
    assert_eq!(response.usage.completion_tokens, 1);
    assert_eq!(b.attempts(), 3);
    let bodies = server.join().unwrap();
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "stub-model");
    assert_eq!(sent["messages"][1]["content"], "Will you speak?");
    assert_eq!(sent["max_tokens"], 8);
}

#[test]
fn retries_are_bounded() {
    let (url, server) = stub(vec![429, 429]);
    let b = backend(url, 1);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Exhausted { attempts: 2, .. }), "{err:?}");
    assert_eq!(b.attempts(), 2);
    server.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = stub(vec![401]);
    let b = backend(url, 3);
    let err = b.complete(&request()).unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 401, .. }), "{err:?}");
    assert_eq!(b.attempts(), 1);
    server.join().unwrap();
}
