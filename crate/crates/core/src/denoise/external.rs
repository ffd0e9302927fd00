//! Client for external denoisers speaking the wire protocol, either over a
//! local TCP socket or over the stdio of a spawned child process. One
//! outstanding request per connection; the solver calls it sequentially.

use std::collections::VecDeque;
use std::io::Read;
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::protocol;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

/// Where the external denoiser lives.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// Spawn this command and speak the protocol on its stdio.
    Command(Vec<String>),
}

impl Endpoint {
    /// Parse `tcp://addr` or `cmd:prog arg1 arg2`.
    pub fn parse(spec: &str) -> Result<Endpoint> {
        if let Some(addr) = spec.strip_prefix("tcp://") {
            Ok(Endpoint::Tcp(addr.to_string()))
        } else if let Some(cmd) = spec.strip_prefix("cmd:") {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if parts.is_empty() {
                return Err(Error::Config("empty external denoiser command".into()));
            }
            Ok(Endpoint::Command(parts))
        } else {
            Err(Error::Config(format!(
                "endpoint '{spec}' must start with tcp:// or cmd:"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExternalDenoiserConfig {
    pub endpoint: Endpoint,
    pub timeout_secs: u64,
}

impl ExternalDenoiserConfig {
    pub fn new(endpoint: Endpoint) -> Self {
        ExternalDenoiserConfig {
            endpoint,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
        }
    }
}

enum Connection {
    Tcp(TcpStream),
    Child {
        child: Child,
        stdin: std::process::ChildStdin,
        rx: Receiver<Vec<u8>>,
        buf: VecDeque<u8>,
    },
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Child { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Lazily connected protocol client. Reconnects are not attempted: a broken
/// stream surfaces as an error and the connection is dropped.
pub struct ExternalDenoiser {
    config: ExternalDenoiserConfig,
    conn: Mutex<Option<Connection>>,
}

impl std::fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalDenoiser")
            .field("config", &self.config)
            .finish()
    }
}

impl Clone for ExternalDenoiser {
    fn clone(&self) -> Self {
        // Clones share the config but open their own connection.
        ExternalDenoiser::new(self.config.clone())
    }
}

impl ExternalDenoiser {
    pub fn new(config: ExternalDenoiserConfig) -> Self {
        ExternalDenoiser {
            config,
            conn: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &ExternalDenoiserConfig {
        &self.config
    }

    fn connect(&self) -> Result<Connection> {
        match &self.config.endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| {
                    Error::Protocol(format!("cannot reach denoiser at {addr}: {e}"))
                })?;
                stream.set_nodelay(true).ok();
                Ok(Connection::Tcp(stream))
            }
            Endpoint::Command(parts) => {
                let mut child = Command::new(&parts[0])
                    .args(&parts[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| {
                        Error::Protocol(format!("cannot spawn denoiser {:?}: {e}", parts[0]))
                    })?;
                let stdin = child.stdin.take().expect("piped stdin");
                let mut stdout = child.stdout.take().expect("piped stdout");
                let (tx, rx): (SyncSender<Vec<u8>>, Receiver<Vec<u8>>) =
                    std::sync::mpsc::sync_channel(64);
                std::thread::spawn(move || {
                    let mut chunk = [0u8; 64 * 1024];
                    loop {
                        match stdout.read(&mut chunk) {
                            Ok(0) | Err(_) => break,
                            Ok(n) => {
                                if tx.send(chunk[..n].to_vec()).is_err() {
                                    break;
                                }
                            }
                        }
                    }
                });
                Ok(Connection::Child {
                    child,
                    stdin,
                    rx,
                    buf: VecDeque::new(),
                })
            }
        }
    }

    /// Send `(v, t)` and return the response tensor, which must match the
    /// request shape bit for bit in layout.
    pub fn denoise(&self, v: &Tensor, t: f64) -> Result<Tensor> {
        let mut guard = self.conn.lock().expect("client poisoned");
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let conn = guard.as_mut().expect("just connected");
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let result = request_over(conn, v, t, timeout);
        if result.is_err() {
            // Drop the stream; the next call reconnects from scratch.
            *guard = None;
        }
        // Transport failures mid-exchange (resets, truncation, timeouts) are
        // protocol errors from the caller's point of view.
        let out = result.map_err(|e| match e {
            Error::Io(io) => Error::Protocol(format!("transport failure: {io}")),
            other => other,
        })?;
        if out.shape() != v.shape() {
            *guard = None;
            return Err(Error::Protocol(format!(
                "response shape {:?} does not match request shape {:?}",
                out.shape(),
                v.shape()
            )));
        }
        if out.dtype() != v.dtype() {
            *guard = None;
            return Err(Error::Protocol(format!(
                "response dtype {} does not match request dtype {}",
                out.dtype(),
                v.dtype()
            )));
        }
        Ok(out)
    }
}

fn request_over(conn: &mut Connection, v: &Tensor, t: f64, timeout: Duration) -> Result<Tensor> {
    match conn {
        Connection::Tcp(stream) => {
            stream.set_write_timeout(Some(timeout))?;
            stream.set_read_timeout(Some(timeout))?;
            protocol::write_request(stream, v, t)?;
            let mut reader = DeadlineReader {
                stream,
                deadline: Instant::now() + timeout,
            };
            protocol::read_response(&mut reader)
        }
        Connection::Child {
            stdin, rx, buf, ..
        } => {
            protocol::write_request(stdin, v, t)?;
            let mut reader = ChannelReader {
                rx,
                buf,
                deadline: Instant::now() + timeout,
            };
            protocol::read_response(&mut reader)
        }
    }
}

/// Read adapter that turns socket timeouts into hard deadline errors so a
/// stalled server cannot hang the solver.
struct DeadlineReader<'a> {
    stream: &'a mut TcpStream,
    deadline: Instant,
}

impl Read for DeadlineReader<'_> {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        let now = Instant::now();
        if now >= self.deadline {
            return Err(std::io::Error::new(
                std::io::ErrorKind::TimedOut,
                "denoiser response timed out",
            ));
        }
        self.stream.set_read_timeout(Some(self.deadline - now))?;
        self.stream.read(out)
    }
}

struct ChannelReader<'a> {
    rx: &'a Receiver<Vec<u8>>,
    buf: &'a mut VecDeque<u8>,
    deadline: Instant,
}

impl Read for ChannelReader<'_> {
    fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
        while self.buf.is_empty() {
            let now = Instant::now();
            if now >= self.deadline {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::TimedOut,
                    "denoiser response timed out",
                ));
            }
            match self.rx.recv_timeout(self.deadline - now) {
                Ok(chunk) => self.buf.extend(chunk),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::TimedOut,
                        "denoiser response timed out",
                    ));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::UnexpectedEof,
                        "denoiser closed its stdout",
                    ));
                }
            }
        }
        let n = out.len().min(self.buf.len());
        for slot in out.iter_mut().take(n) {
            *slot = self.buf.pop_front().expect("checked non-empty");
        }
        Ok(n)
    }
}
