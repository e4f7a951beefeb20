//! Minimal `GET <path>` endpoint serving the current registry snapshot.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::Result;

use super::{export_text, SharedRegistry};

pub struct MetricsServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MetricsServer {
    pub fn start(addr: impl ToSocketAddrs, path: &str, registry: Arc<SharedRegistry>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let s = Arc::clone(&stop);
        let path = path.to_string();
        let handle = std::thread::spawn(move || {
            while !s.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = answer(stream, &path, &registry);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for MetricsServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn answer(stream: TcpStream, path: &str, registry: &SharedRegistry) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(2)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request = String::new();
    reader.read_line(&mut request)?;
    // drain headers
    let mut line = String::new();
    while reader.read_line(&mut line)? > 2 {
        line.clear();
    }
    let mut parts = request.split_whitespace();
    let (method, target) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    let (status, body) = if method != "GET" {
        ("405 Method Not Allowed", String::new())
    } else if target != path {
        ("404 Not Found", String::new())
    } else {
        let snap = registry.snapshot();
        if snap.is_empty() {
            ("200 OK", String::new())
        } else {
            match export_text(&snap, None) {
                Ok(t) => ("200 OK", t),
                Err(e) => ("500 Internal Server Error", e.to_string()),
            }
        }
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: text/plain; version=0.0.4\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}

/// Fetches `path` from a running endpoint; returns status line and body.
pub fn http_get(addr: SocketAddr, path: &str) -> Result<(String, String)> {
    use std::io::Read;
    let mut s = TcpStream::connect(addr)?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")?;
    let mut text = String::new();
    s.read_to_string(&mut text)?;
    let status = text.lines().next().unwrap_or("").to_string();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    Ok((status, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{parse_text, MetricSample};

    #[test]
    fn serves_snapshot_and_404s_elsewhere() {
        let reg = Arc::new(SharedRegistry::new());
        reg.append(MetricSample::new("conflict_rate", 0.125, 3).label("variant", "ma-ib"))
            .unwrap();
        let server = MetricsServer::start("127.0.0.1:0", "/metrics", Arc::clone(&reg)).unwrap();
        let (status, body) = http_get(server.addr(), "/metrics").unwrap();
        assert!(status.contains("200"), "{status}");
        let (parsed, _) = parse_text(&body).unwrap();
        assert_eq!(parsed, reg.snapshot());
        let (status, _) = http_get(server.addr(), "/other").unwrap();
        assert!(status.contains("404"));
    }
}
