//! TCP transport for the bus.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8. Requests and replies:
//!
//! ```text
//! CREATE <topic>                         -> OK
//! PUB\n<wire record>                     -> OK <seq>
//! FETCH <consumer> <topic> <from> <max>  -> OK <n>\n<n wire records>
//! anything failing                       -> ERR <message>
//! ```
//!
//! Topic and consumer names in `CREATE`/`FETCH` have `%`, space and newline
//! percent-escaped.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{Error, Result};

use super::{decode_stream, decode_wire, encode_wire, Bus, BusClient, Envelope};

const MAX_FRAME: usize = 64 * 1024 * 1024;

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| Error::Bus("frame too large".into()))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(Error::Bus(format!("frame of {n} bytes exceeds limit")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn esc(s: &str) -> String {
    s.replace('%', "%25").replace(' ', "%20").replace('\n', "%0A")
}

fn unesc(s: &str) -> String {
    s.replace("%0A", "\n").replace("%20", " ").replace("%25", "%")
}

fn handle(bus: &Bus, req: &[u8]) -> Vec<u8> {
    match respond(bus, req) {
        Ok(v) => v,
        Err(e) => format!("ERR {e}").into_bytes(),
    }
}

fn respond(bus: &Bus, req: &[u8]) -> Result<Vec<u8>> {
    if let Some(record) = req.strip_prefix(b"PUB\n") {
        let seq = bus.publish(decode_wire(record)?)?;
        return Ok(format!("OK {seq}").into_bytes());
    }
    let text = std::str::from_utf8(req).map_err(|_| Error::Bus("request is not UTF-8".into()))?;
    let parts: Vec<&str> = text.split(' ').collect();
    match parts.as_slice() {
        ["CREATE", topic] => {
            bus.create_topic(&unesc(topic))?;
            Ok(b"OK".to_vec())
        }
        ["FETCH", consumer, topic, from, max] => {
            let from: u64 = from.parse().map_err(|_| Error::Bus("bad offset".into()))?;
            let max: usize = max.parse().map_err(|_| Error::Bus("bad max".into()))?;
            let got = bus.fetch(&unesc(consumer), &unesc(topic), from, max)?;
            let mut out = format!("OK {}\n", got.len()).into_bytes();
            for e in &got {
                out.extend(encode_wire(e));
            }
            Ok(out)
        }
        _ => Err(Error::Bus(format!("unknown request `{}`", text.lines().next().unwrap_or("")))),
    }
}

/// A bus served over TCP from a background thread.
pub struct BusServer {
    pub bus: Arc<Bus>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl BusServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts accepting.
    pub fn start(bus: Arc<Bus>, addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let (b, s) = (Arc::clone(&bus), Arc::clone(&stop));
        let handle = std::thread::spawn(move || {
            let mut workers = Vec::new();
            let mut open = Vec::new();
            while !s.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        if stream.set_nonblocking(false).is_err() {
                            continue;
                        }
                        if let Ok(c) = stream.try_clone() {
                            open.push(c);
                        }
                        let b = Arc::clone(&b);
                        workers.push(std::thread::spawn(move || serve_connection(&b, stream)));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
            // unblock workers still waiting on their clients
            for c in open {
                let _ = c.shutdown(std::net::Shutdown::Both);
            }
            for w in workers {
                let _ = w.join();
            }
        });
        Ok(Self {
            bus,
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn serve_connection(bus: &Bus, mut stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    while let Ok(Some(req)) = read_frame(&mut stream) {
        if write_frame(&mut stream, &handle(bus, &req)).is_err() {
            return;
        }
    }
}

/// Client side of [`BusServer`]; one request in flight per client.
pub struct RemoteBus {
    stream: Mutex<TcpStream>,
}

impl RemoteBus {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream: Mutex::new(stream),
        })
    }

    fn call(&self, req: &[u8]) -> Result<Vec<u8>> {
        let mut s = self.stream.lock().unwrap();
        write_frame(&mut *s, req)?;
        let reply = read_frame(&mut *s)?.ok_or_else(|| Error::Bus("server closed the connection".into()))?;
        if let Some(msg) = reply.strip_prefix(b"ERR ") {
            return Err(Error::Bus(String::from_utf8_lossy(msg).into_owned()));
        }
        if !reply.starts_with(b"OK") {
            return Err(Error::Bus("malformed reply".into()));
        }
        Ok(reply)
    }
}

impl BusClient for RemoteBus {
    fn create_topic(&self, topic: &str) -> Result<()> {
        self.call(format!("CREATE {}", esc(topic)).as_bytes()).map(|_| ())
    }

    fn publish(&self, envelope: Envelope) -> Result<u64> {
        let mut req = b"PUB\n".to_vec();
        req.extend(encode_wire(&envelope));
        let reply = self.call(&req)?;
        std::str::from_utf8(&reply[2..])
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Bus("malformed publish reply".into()))
    }

    fn fetch(&self, consumer: &str, topic: &str, from_seq: u64, max: usize) -> Result<Vec<Envelope>> {
        let reply = self.call(format!("FETCH {} {} {from_seq} {max}", esc(consumer), esc(topic)).as_bytes())?;
        let nl = reply
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Bus("malformed fetch reply".into()))?;
        decode_stream(&reply[nl + 1..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{subscribe, Payload, Tick};

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 5]);
        let mut r = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"hello");
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn remote_publish_and_fetch() {
        let server = BusServer::start(Arc::new(Bus::new(100, 4096)), "127.0.0.1:0").unwrap();
        let a = RemoteBus::connect(server.addr()).unwrap();
        let b = RemoteBus::connect(server.addr()).unwrap();
        a.create_topic("x y").unwrap();
        for i in 0..3 {
            let seq = a
                .publish(Envelope::new("x y", "a", i, Payload::Tick(Tick::Step)))
                .unwrap();
            assert_eq!(seq, i);
        }
        let mut s = subscribe(&b, "b", "x y", 1).unwrap();
        let got = s.poll(&b).unwrap();
        assert_eq!(got.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(subscribe(&b, "b", "missing", 0), Err(Error::Bus(_))));
        assert_eq!(server.bus.high_water("x y"), Some(3));
        server.shutdown();
    }
}
