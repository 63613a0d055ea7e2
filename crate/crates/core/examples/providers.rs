//! The three ways to reach a suspect model: a precomputed embedding file, a
//! caching wrapper, and an HTTP endpoint (served here by a local thread).

use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::Duration;

use cbw::corpus::{self, SynthConfig};
use cbw::embedding::{CachedProvider, EmbeddingProvider, FileStoreProvider, RemoteProvider, StoredEmbedding};
use cbw::signal;

/// Answers each POST with a vector derived from the body length.
fn serve(listener: TcpListener, requests: usize) {
    for stream in listener.incoming().take(requests) {
        let mut stream = stream.expect("connection");
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        let body_len = loop {
            let n = stream.read(&mut chunk).expect("read");
            buf.extend_from_slice(&chunk[..n]);
            if let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                let head = String::from_utf8_lossy(&buf[..end]).to_lowercase();
                let len: usize = head
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                    .unwrap_or(0);
                while buf.len() < end + 4 + len {
                    let n = stream.read(&mut chunk).expect("read");
                    buf.extend_from_slice(&chunk[..n]);
                }
                break len;
            }
        };
        let body = format!("{{\"vector\": [3.0, 4.0, {}]}}", body_len % 7);
        let reply = format!("HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
        stream.write_all(reply.as_bytes()).expect("write");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig { duration_ms: 300.0, ..SynthConfig::default() };
    let profile = corpus::speaker_profile("spk000", 5, &config);
    let utterance = corpus::synth_utterance(&profile, 1, &config);

    let dir = std::env::temp_dir().join("cbw-providers-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("embeddings.jsonl");
    FileStoreProvider::write(&[StoredEmbedding { utterance_id: "spk000-u00".into(), vector: vec![1.0, 1.0] }], &path)?;
    let store = FileStoreProvider::load(&path)?;
    println!("file store: {:?}", store.embed_utterance("spk000-u00", &utterance)?.vector);
    println!("missing id: {}", store.embed_utterance("nope", &utterance).unwrap_err());

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/embed", listener.local_addr()?);
    let server = std::thread::spawn(move || serve(listener, 1));
    let remote = CachedProvider::new(RemoteProvider::new(url, Duration::from_secs(5)));
    let first = remote.embed_utterance("spk000-u00", &utterance)?;
    let again = remote.embed_utterance("spk000-u00", &utterance)?;
    server.join().expect("server thread");
    println!("remote (normalized client-side): {:?}, cached repeat equal: {}", first.vector, first == again);
    println!("WAV payload: {} bytes", signal::encode_wav(&utterance)?.len());
    Ok(())
}
