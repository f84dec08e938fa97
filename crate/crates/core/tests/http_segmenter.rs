use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use osu_core::segmenter::{Backend, HttpBackend, Prompt, SegmentError, SegmentRequest};
use osu_core::BoundingBox;

struct Captured {
    path: String,
    body: String,
}

fn read_request(stream: &mut TcpStream) -> Captured {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h == "\r\n" || h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Captured {
        path,
        body: String::from_utf8(body).unwrap(),
    }
}

/// Serves `replies` in order, one connection each, and reports what it saw.
fn mock(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let seen = read_request(&mut stream);
            let _ = tx.send(seen);
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(body.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn request() -> SegmentRequest {
    SegmentRequest {
        image_ref: "riding_1.png".into(),
        width: 4,
        height: 2,
        prompts: vec![
            Prompt {
                role: "Agent".into(),
                bbox: BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            },
            Prompt {
                role: "Vehicle".into(),
                bbox: BoundingBox::new(1.0, 1.0, 4.0, 2.0).unwrap(),
            },
        ],
    }
}

fn backend(url: &str) -> Backend {
    Backend::Http(HttpBackend {
        timeout: Duration::from_secs(5),
        ..HttpBackend::new(url)
    })
}

#[test]
fn canned_reply_is_decoded() {
    let reply = r#"{"width":4,"height":2,"backend_id":"sam-mock","entities":[
        {"role":"Agent","confidence":0.9,"counts":[0,2,2,2,2]},
        {"role":"Vehicle","confidence":0.8,"counts":[5,3]}]}"#;
    let (url, seen) = mock(vec![(200, reply.into())]);
    let resp = backend(&url).segment(&request()).unwrap();
    assert_eq!(resp.backend_id, "sam-mock");
    assert_eq!(resp.entities.len(), 2);
    assert_eq!(resp.entities[0].mask.area(), 4);
    assert_eq!(resp.entities[1].confidence, 0.8);

    let got = seen.recv().unwrap();
    assert_eq!(got.path, "/segment");
    let body: serde_json::Value = serde_json::from_str(&got.body).unwrap();
    assert_eq!(body["image_ref"], "riding_1.png");
    assert_eq!(body["boxes"][1]["role"], "Vehicle");
    assert_eq!(body["boxes"][1]["x2"], 4.0);
}

#[test]
fn short_reply_is_protocol_error() {
    let reply = r#"{"width":4,"height":2,"entities":[{"role":"Agent","confidence":0.9,"counts":[0,8]}]}"#;
    let (url, _seen) = mock(vec![(200, reply.into())]);
    match backend(&url).segment(&request()) {
        Err(SegmentError::Protocol(m)) => assert!(m.contains("1 masks for 2 prompts"), "{m}"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn server_error_is_protocol_error() {
    let (url, _seen) = mock(vec![(500, "\"boom\"".into())]);
    assert!(matches!(backend(&url).segment(&request()), Err(SegmentError::Protocol(_))));
}

#[test]
fn probe_reports_advertised_backend() {
    let (url, seen) = mock(vec![(200, r#"{"backend_id":"sam-vit-h","max_prompts":16}"#.into())]);
    let cap = backend(&url).probe();
    assert!(cap.reachable);
    assert_eq!(cap.backend_id, "sam-vit-h");
    assert_eq!(cap.max_prompts, Some(16));
    assert_eq!(seen.recv().unwrap().path, "/probe");
}

#[test]
fn dead_endpoint_is_unreachable_after_retry() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let b = backend(&format!("http://127.0.0.1:{port}"));
    assert!(!b.probe().reachable);
    match b.segment(&request()) {
        Err(SegmentError::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn slow_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let _ = read_request(&mut stream);
        thread::sleep(Duration::from_millis(800));
    });
    let b = Backend::Http(HttpBackend {
        timeout: Duration::from_millis(200),
        ..HttpBackend::new(url)
    });
    assert!(matches!(b.segment(&request()), Err(SegmentError::Timeout(_))));
}
