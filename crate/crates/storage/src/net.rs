//! Request/response delivery of sealed frames between named applications.
//!
//! A call carries every frame of one message and returns every frame of
//! the reply. [`Loopback`] dispatches in process; [`TcpNetwork`] opens one
//! connection per call, writing a frame count and length-prefixed frames.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex, RwLock, Weak};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use qss_transport::frame::{HEADER_LEN, MAX_PAYLOAD};
use qss_transport::wc::TAG_OCTETS;
use thiserror::Error;

const MAX_FRAME: usize = HEADER_LEN + MAX_PAYLOAD + TAG_OCTETS;
const MAX_FRAMES: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{0} is unreachable")]
    Unreachable(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait Handler: Send + Sync {
    fn handle(&self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>>;
}

pub trait Network: Send + Sync {
    fn call(&self, from: &str, to: &str, frames: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, NetError>;
}

/// A message as seen before sealing.
#[derive(Clone, Debug)]
pub struct TappedMessage {
    pub from: String,
    pub to: String,
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

/// Captured traffic for audits: plaintext messages as handed to the
/// sealing layer and the frames that actually crossed the network.
#[derive(Debug, Default)]
pub struct TrafficLog {
    messages: Mutex<Vec<TappedMessage>>,
    frames: Mutex<Vec<(String, String, Vec<u8>)>>,
}

impl TrafficLog {
    pub fn record_message(&self, m: TappedMessage) {
        self.messages.lock().expect("traffic lock").push(m);
    }

    pub fn record_frames(&self, from: &str, to: &str, frames: &[Vec<u8>]) {
        let mut log = self.frames.lock().expect("traffic lock");
        log.extend(frames.iter().map(|f| (from.to_string(), to.to_string(), f.clone())));
    }

    pub fn messages(&self) -> Vec<TappedMessage> {
        self.messages.lock().expect("traffic lock").clone()
    }

    pub fn frames(&self) -> Vec<(String, String, Vec<u8>)> {
        self.frames.lock().expect("traffic lock").clone()
    }

    pub fn clear(&self) {
        self.messages.lock().expect("traffic lock").clear();
        self.frames.lock().expect("traffic lock").clear();
    }
}

/// In-process network. Handlers are held weakly so servers can own a
/// reference to the network without a cycle.
#[derive(Default)]
pub struct Loopback {
    handlers: RwLock<HashMap<String, Weak<dyn Handler>>>,
    down: RwLock<HashSet<String>>,
    log: Option<Arc<TrafficLog>>,
}

impl Loopback {
    pub fn new(log: Option<Arc<TrafficLog>>) -> Self {
        Self {
            log,
            ..Self::default()
        }
    }

    pub fn register(&self, app: &str, handler: Arc<dyn Handler>) {
        self.handlers
            .write()
            .expect("handler lock")
            .insert(app.to_string(), Arc::downgrade(&handler));
    }

    /// Simulates an outage of `app`.
    pub fn set_down(&self, app: &str, down: bool) {
        let mut set = self.down.write().expect("down lock");
        if down {
            set.insert(app.to_string());
        } else {
            set.remove(app);
        }
    }
}

impl Network for Loopback {
    fn call(&self, from: &str, to: &str, frames: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, NetError> {
        if self.down.read().expect("down lock").contains(to) {
            return Err(NetError::Unreachable(to.to_string()));
        }
        let handler = self
            .handlers
            .read()
            .expect("handler lock")
            .get(to)
            .and_then(Weak::upgrade)
            .ok_or_else(|| NetError::Unreachable(to.to_string()))?;
        if let Some(log) = &self.log {
            log.record_frames(from, to, &frames);
        }
        let reply = handler.handle(frames);
        if let Some(log) = &self.log {
            log.record_frames(to, from, &reply);
        }
        Ok(reply)
    }
}

/// Sockets with a static address book.
pub struct TcpNetwork {
    book: RwLock<HashMap<String, SocketAddr>>,
    timeout: Duration,
    log: Option<Arc<TrafficLog>>,
}

impl TcpNetwork {
    pub fn new(book: HashMap<String, SocketAddr>, log: Option<Arc<TrafficLog>>) -> Self {
        Self {
            book: RwLock::new(book),
            timeout: Duration::from_secs(120),
            log,
        }
    }

    pub fn set_address(&self, app: &str, addr: SocketAddr) {
        self.book.write().expect("book lock").insert(app.to_string(), addr);
    }
}

impl Network for TcpNetwork {
    fn call(&self, from: &str, to: &str, frames: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, NetError> {
        let addr = *self
            .book
            .read()
            .expect("book lock")
            .get(to)
            .ok_or_else(|| NetError::Unreachable(to.to_string()))?;
        let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))
            .map_err(|_| NetError::Unreachable(format!("{to} at {addr}")))?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        if let Some(log) = &self.log {
            log.record_frames(from, to, &frames);
        }
        write_frames(&mut BufWriter::new(&stream), &frames)?;
        let reply = read_frames(&mut BufReader::new(&stream))?.ok_or_else(|| NetError::Protocol("connection closed".into()))?;
        if let Some(log) = &self.log {
            log.record_frames(to, from, &reply);
        }
        Ok(reply)
    }
}

pub fn write_frames(w: &mut impl Write, frames: &[Vec<u8>]) -> io::Result<()> {
    w.write_all(&(frames.len() as u32).to_be_bytes())?;
    for f in frames {
        w.write_all(&(f.len() as u32).to_be_bytes())?;
        w.write_all(f)?;
    }
    w.flush()
}

/// Reads one message; `None` on a clean end of stream.
pub fn read_frames(r: &mut impl Read) -> Result<Option<Vec<Vec<u8>>>, NetError> {
    let mut word = [0u8; 4];
    match r.read_exact(&mut word) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let count = u32::from_be_bytes(word) as usize;
    if count > MAX_FRAMES {
        return Err(NetError::Protocol(format!("{count} frames")));
    }
    let mut frames = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        r.read_exact(&mut word)?;
        let len = u32::from_be_bytes(word) as usize;
        if len > MAX_FRAME {
            return Err(NetError::Protocol(format!("frame of {len} octets")));
        }
        let mut f = vec![0u8; len];
        r.read_exact(&mut f)?;
        frames.push(f);
    }
    Ok(Some(frames))
}

/// Accepts connections forever, answering each message with `handler`.
pub fn serve_tcp(listener: TcpListener, handler: Arc<dyn Handler>) -> JoinHandle<()> {
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let handler = handler.clone();
            thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                let mut reader = BufReader::new(&stream);
                loop {
                    match read_frames(&mut reader) {
                        Ok(Some(frames)) => {
                            let reply = handler.handle(frames);
                            if write_frames(&mut BufWriter::new(&stream), &reply).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            log::debug!("connection: {e}");
                            break;
                        }
                    }
                }
            });
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;
    impl Handler for Echo {
        fn handle(&self, frames: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
            frames.into_iter().rev().collect()
        }
    }

    #[test]
    fn loopback_dispatch_and_outage() {
        let log = Arc::new(TrafficLog::default());
        let net = Loopback::new(Some(log.clone()));
        let echo: Arc<dyn Handler> = Arc::new(Echo);
        net.register("echo", echo.clone());
        assert_eq!(net.call("me", "echo", vec![vec![1], vec![2]]).unwrap(), vec![vec![2], vec![1]]);
        assert_eq!(log.frames().len(), 4);
        net.set_down("echo", true);
        assert!(matches!(net.call("me", "echo", vec![]), Err(NetError::Unreachable(_))));
        net.set_down("echo", false);
        drop(echo);
        assert!(net.call("me", "echo", vec![]).is_err());
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        serve_tcp(listener, Arc::new(Echo));
        let net = TcpNetwork::new([("echo".to_string(), addr)].into(), None);
        let frames = vec![vec![7u8; 1582], vec![], vec![1, 2, 3]];
        let reply = net.call("me", "echo", frames.clone()).unwrap();
        assert_eq!(reply, frames.into_iter().rev().collect::<Vec<_>>());
        assert!(matches!(net.call("me", "nobody", vec![]), Err(NetError::Unreachable(_))));
    }

    #[test]
    fn oversized_frames_are_refused() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[vec![0u8; MAX_FRAME + 1]]).unwrap();
        assert!(matches!(read_frames(&mut buf.as_slice()), Err(NetError::Protocol(_))));
        assert!(read_frames(&mut [].as_slice()).unwrap().is_none());
    }
}
