//! Minimal local embeddings endpoint for exercising the HTTP provider.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Default)]
struct Shared {
    requests: AtomicUsize,
    inputs: AtomicUsize,
    fail_next: AtomicUsize,
    stop: AtomicBool,
    last_auth: Mutex<Option<String>>,
}

/// Serves `POST /embeddings`. The `r`-th successful request answers with
/// vectors of dimension `dims[min(r, dims.len() - 1)]`.
pub struct StubEmbeddingServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Deserialize)]
struct Request {
    #[allow(dead_code)]
    model: String,
    input: Vec<String>,
}

impl StubEmbeddingServer {
    pub fn start(dims: Vec<usize>) -> std::io::Result<Self> {
        assert!(!dims.is_empty(), "at least one dimension");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let served = Arc::new(AtomicUsize::new(0));
        let sh = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if sh.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let (sh, dims, served) = (Arc::clone(&sh), dims.clone(), Arc::clone(&served));
                std::thread::spawn(move || {
                    let _ = handle_conn(stream, &sh, &dims, &served);
                });
            }
        });
        Ok(Self {
            addr,
            shared,
            handle: Some(handle),
        })
    }

    /// Base URL to configure as the provider endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received, including failed ones.
    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Total input strings across successful requests.
    pub fn inputs_seen(&self) -> usize {
        self.shared.inputs.load(Ordering::SeqCst)
    }

    /// Answer the next `n` requests with HTTP 500.
    pub fn fail_next(&self, n: usize) {
        self.shared.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn last_auth(&self) -> Option<String> {
        self.shared.last_auth.lock().expect("lock").clone()
    }

    /// The vector the server returns for `text`: hash-derived, exactly
    /// representable in f32.
    pub fn vector_for(text: &str, dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(dim);
        let mut block = 0u32;
        while out.len() < dim {
            let digest = Sha256::new().chain_update(text.as_bytes()).chain_update(block.to_le_bytes()).finalize();
            out.extend(digest.iter().map(|&b| (f64::from(b) - 127.5) / 128.0).take(dim - out.len()));
            block += 1;
        }
        out
    }
}

impl Drop for StubEmbeddingServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_conn(stream: TcpStream, sh: &Shared, dims: &[usize], served: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut len = 0usize;
    let mut auth = None;
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if k == "content-length" {
                len = v.parse().unwrap_or(0);
            } else if k == "authorization" {
                auth = Some(v);
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    sh.requests.fetch_add(1, Ordering::SeqCst);
    *sh.last_auth.lock().expect("lock") = auth;

    let failing = sh
        .fail_next
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    let (status, payload) = if failing || !request_line.starts_with("POST") || !request_line.contains("/embeddings") {
        ("500 Internal Server Error", "{\"error\":\"unavailable\"}".to_string())
    } else {
        match serde_json::from_slice::<Request>(&body) {
            Ok(req) => {
                let r = served.fetch_add(1, Ordering::SeqCst);
                let dim = dims[r.min(dims.len() - 1)];
                sh.inputs.fetch_add(req.input.len(), Ordering::SeqCst);
                // reversed so clients must restore order by index
                let data: Vec<serde_json::Value> = req
                    .input
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(i, t)| serde_json::json!({"index": i, "embedding": StubEmbeddingServer::vector_for(t, dim)}))
                    .collect();
                ("200 OK", serde_json::json!({ "data": data }).to_string())
            }
            Err(_) => ("400 Bad Request", "{\"error\":\"bad json\"}".to_string()),
        }
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}
