use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

use hagxai::bridge::client::{decode_png_base64, ClientError, ScoreReference, ScorerClient, ScorerConfig};
use hagxai::bundle::Task;

struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn ok(body: Value) -> Reply {
    Reply {
        status: 200,
        body: body.to_string(),
        delay: Duration::ZERO,
    }
}

type Log = Arc<Mutex<Vec<(String, String, Value)>>>;

fn respond<F>(mut stream: TcpStream, seen: &Log, handler: &F)
where
    F: Fn(&str, &str, &Value, usize) -> Reply,
{
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let path = parts.next().unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).unwrap();
        if header.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let nth = {
        let mut log = seen.lock().unwrap();
        log.push((method.clone(), path.clone(), body.clone()));
        log.iter().filter(|(_, p, _)| *p == path).count() - 1
    };
    let reply = handler(&method, &path, &body, nth);
    thread::sleep(reply.delay);
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
}

/// Serves one request per connection with `handler(method, path, body, nth)`.
fn serve<F>(handler: F) -> (String, Log)
where
    F: Fn(&str, &str, &Value, usize) -> Reply + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log: Log = Arc::default();
    let seen = log.clone();
    let handler = Arc::new(handler);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (seen, handler) = (seen.clone(), handler.clone());
            thread::spawn(move || respond(stream, &seen, &*handler));
        }
    });
    (format!("http://{addr}"), log)
}

fn healthy(path: &str) -> Option<Reply> {
    (path == "/health").then(|| ok(json!({"model_id": "m", "task": "detection", "status": "ok"})))
}

/// Scores each image by the red value of its first pixel.
fn tag_scores(body: &Value) -> Value {
    let scores: Vec<f64> = body["images"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| decode_png_base64(s.as_str().unwrap()).unwrap().get_pixel(0, 0)[0] as f64)
        .collect();
    json!({ "scores": scores })
}

fn tagged(n: u8) -> Vec<RgbImage> {
    (0..n).map(|i| RgbImage::from_pixel(3, 2, Rgb([i, 0, 0]))).collect()
}

fn reference() -> ScoreReference {
    ScoreReference::Classification {
        class_label: "cat".into(),
    }
}

fn client(endpoint: &str, f: impl FnOnce(&mut ScorerConfig)) -> ScorerClient {
    let mut config = ScorerConfig::new(endpoint);
    f(&mut config);
    ScorerClient::new(config)
}

fn score_calls(log: &Log) -> Vec<Value> {
    log.lock()
        .unwrap()
        .iter()
        .filter(|(_, p, _)| p == "/score")
        .map(|(_, _, b)| b.clone())
        .collect()
}

#[test]
fn chunks_preserve_order_and_carry_request_fields() {
    let (url, log) = serve(|_, path, body, _| healthy(path).unwrap_or_else(|| ok(tag_scores(body))));
    let c = client(&url, |c| c.max_batch = 3);
    let scores = c.score(Task::Classification, &reference(), &tagged(7), 11, None).unwrap();
    assert_eq!(scores, (0..7).map(f64::from).collect::<Vec<_>>());
    let calls = score_calls(&log);
    assert_eq!(calls.len(), 3);
    let sizes: Vec<usize> = calls.iter().map(|b| b["images"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, [3, 3, 1]);
    for b in &calls {
        assert_eq!(b["seed"], 11);
        assert_eq!(b["task"], "classification");
        assert_eq!(b["reference"]["class_label"], "cat");
        assert!(b["request_id"].is_string());
    }
    // health is checked once per client
    let health = log.lock().unwrap().iter().filter(|(_, p, _)| p == "/health").count();
    assert_eq!(health, 1);
}

#[test]
fn empty_batch_sends_nothing() {
    let (url, log) = serve(|_, _, _, _| ok(json!({})));
    let c = client(&url, |_| {});
    assert!(c.score(Task::Detection, &reference(), &[], 0, None).unwrap().is_empty());
    assert!(log.lock().unwrap().is_empty());
}

#[test]
fn client_errors_are_not_retried_and_keep_the_message() {
    let (url, log) = serve(|_, path, _, _| {
        healthy(path).unwrap_or(Reply {
            status: 422,
            body: json!({"error": "images[0] is not a PNG"}).to_string(),
            delay: Duration::ZERO,
        })
    });
    let c = client(&url, |_| {});
    let err = c.score(Task::Detection, &reference(), &tagged(1), 0, None).unwrap_err();
    match &err {
        ClientError::Rejected { status, message, .. } => {
            assert_eq!(*status, 422);
            assert_eq!(message, "images[0] is not a PNG");
        }
        other => panic!("{other:?}"),
    }
    assert!(!err.is_retriable());
    assert_eq!(score_calls(&log).len(), 1);
}

#[test]
fn server_errors_are_retried_with_the_same_request_id() {
    let (url, log) = serve(|_, path, body, nth| {
        healthy(path).unwrap_or_else(|| {
            if nth < 2 {
                Reply {
                    status: 503,
                    body: "busy".into(),
                    delay: Duration::ZERO,
                }
            } else {
                ok(tag_scores(body))
            }
        })
    });
    let c = client(&url, |c| c.retries = 2);
    let scores = c.score(Task::Classification, &reference(), &tagged(2), 0, None).unwrap();
    assert_eq!(scores, [0.0, 1.0]);
    let ids: Vec<Value> = score_calls(&log).iter().map(|b| b["request_id"].clone()).collect();
    assert_eq!(ids.len(), 3);
    assert!(ids.iter().all(|id| *id == ids[0]));
}

#[test]
fn exhausted_retries_surface_the_server_error() {
    let (url, log) = serve(|_, path, _, _| {
        healthy(path).unwrap_or(Reply {
            status: 500,
            body: "{}".into(),
            delay: Duration::ZERO,
        })
    });
    let c = client(&url, |c| c.retries = 1);
    let err = c.score(Task::Classification, &reference(), &tagged(1), 0, None).unwrap_err();
    assert!(matches!(err, ClientError::Server { status: 500, .. }), "{err:?}");
    assert_eq!(score_calls(&log).len(), 2);
}

#[test]
fn slow_server_times_out_as_retriable() {
    let (url, log) = serve(|_, path, body, _| {
        healthy(path).unwrap_or_else(|| Reply {
            delay: Duration::from_millis(600),
            ..ok(tag_scores(body))
        })
    });
    let c = client(&url, |c| {
        c.timeout_ms = 150;
        c.retries = 1;
    });
    let err = c.score(Task::Classification, &reference(), &tagged(1), 0, None).unwrap_err();
    assert!(matches!(err, ClientError::Timeout { .. }), "{err:?}");
    assert!(err.is_retriable());
    assert_eq!(score_calls(&log).len(), 2);
}

#[test]
fn wrong_score_count_is_a_protocol_error() {
    let (url, _) = serve(|_, path, _, _| healthy(path).unwrap_or_else(|| ok(json!({"scores": [1.0]}))));
    let c = client(&url, |_| {});
    let err = c.score(Task::Classification, &reference(), &tagged(2), 0, None).unwrap_err();
    assert!(matches!(err, ClientError::Protocol { .. }), "{err:?}");
}

#[test]
fn health_checks_model_identity() {
    let (url, _) = serve(|_, path, _, _| healthy(path).unwrap());
    let good = client(&url, |c| c.model_id = Some("m".into()));
    assert_eq!(good.health().unwrap().task, Task::Detection);
    let bad = client(&url, |c| c.model_id = Some("other".into()));
    assert!(matches!(bad.health(), Err(ClientError::Unhealthy(_))));
    assert!(matches!(
        bad.score(Task::Classification, &reference(), &tagged(1), 0, None),
        Err(ClientError::Unhealthy(_))
    ));
}

#[test]
fn detect_returns_objects() {
    let (url, _) = serve(|_, path, _, _| {
        healthy(path).unwrap_or_else(|| {
            ok(json!({"objects": [{"bbox": [1.0, 2.0, 5.0, 6.0], "score": 0.9, "class_label": "car"}]}))
        })
    });
    let objects = client(&url, |_| {}).detect(&tagged(1)[0]).unwrap();
    assert_eq!(objects.len(), 1);
    assert_eq!(objects[0].bbox, [1.0, 2.0, 5.0, 6.0]);
    assert_eq!(objects[0].class_probs, None);
}

#[test]
fn unreachable_host_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(&format!("http://127.0.0.1:{port}"), |c| c.retries = 0);
    let err = c.health().unwrap_err();
    assert!(matches!(err, ClientError::Transport { .. }), "{err:?}");
    assert!(err.is_retriable());
}
