//! Out-of-process denoisers spoken to over a small binary protocol.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! request : "PPD1" | u32 height | u32 width | f64 tau | re plane | im plane
//! response: "PPR1" | u8 status  | status 0: re plane | im plane
//!                               | status 1: u32 len  | UTF-8 message
//! ```
//!
//! Planes are `height * width` f64 values, row-major. A connection carries
//! one request at a time and responses arrive in request order. The
//! transport is either a child process (stdin/stdout) or a Unix socket.

use std::fmt;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::ComplexImage;

pub const REQUEST_MAGIC: [u8; 4] = *b"PPD1";
pub const RESPONSE_MAGIC: [u8; 4] = *b"PPR1";
pub const STATUS_OK: u8 = 0;
pub const STATUS_ERROR: u8 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

fn write_plane(buf: &mut Vec<u8>, plane: impl Iterator<Item = f64>) {
    for v in plane {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_request(r: &ComplexImage, tau: f64) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 16 * r.len());
    buf.extend_from_slice(&REQUEST_MAGIC);
    buf.extend_from_slice(&(r.height() as u32).to_le_bytes());
    buf.extend_from_slice(&(r.width() as u32).to_le_bytes());
    buf.extend_from_slice(&tau.to_le_bytes());
    write_plane(&mut buf, r.data().iter().map(|c| c.re));
    write_plane(&mut buf, r.data().iter().map(|c| c.im));
    buf
}

pub fn encode_response_ok(x: &ComplexImage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(5 + 16 * x.len());
    buf.extend_from_slice(&RESPONSE_MAGIC);
    buf.push(STATUS_OK);
    write_plane(&mut buf, x.data().iter().map(|c| c.re));
    write_plane(&mut buf, x.data().iter().map(|c| c.im));
    buf
}

pub fn encode_response_error(msg: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(9 + msg.len());
    buf.extend_from_slice(&RESPONSE_MAGIC);
    buf.push(STATUS_ERROR);
    buf.extend_from_slice(&(msg.len() as u32).to_le_bytes());
    buf.extend_from_slice(msg.as_bytes());
    buf
}

fn read_plane<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Protocol("connection closed mid-message".into())
    } else {
        Error::Io(e)
    }
}

/// Reads one response for an image of the given shape.
pub fn read_response<R: Read>(r: &mut R, shape: (usize, usize)) -> Result<ComplexImage> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != RESPONSE_MAGIC {
        return Err(Error::Protocol(format!("bad response magic {magic:02x?}")));
    }
    let mut status = [0u8; 1];
    r.read_exact(&mut status).map_err(truncated)?;
    match status[0] {
        STATUS_OK => {
            let n = shape.0 * shape.1;
            let re = read_plane(r, n).map_err(truncated)?;
            let im = read_plane(r, n).map_err(truncated)?;
            ComplexImage::from_planes(shape.0, shape.1, &re, &im)
        }
        STATUS_ERROR => {
            let mut len = [0u8; 4];
            r.read_exact(&mut len).map_err(truncated)?;
            let mut msg = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut msg).map_err(truncated)?;
            Err(Error::Server(String::from_utf8_lossy(&msg).into_owned()))
        }
        other => Err(Error::Protocol(format!("unknown status byte {other}"))),
    }
}

/// Reads one request; `Ok(None)` on a clean end of stream.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<(ComplexImage, f64)>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if magic != REQUEST_MAGIC {
        return Err(Error::Protocol(format!("bad request magic {magic:02x?}")));
    }
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(truncated)?;
    let h = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let tau = f64::from_le_bytes(head[8..16].try_into().unwrap());
    if h == 0 || w == 0 {
        return Err(Error::Protocol(format!("empty image {h}x{w}")));
    }
    let re = read_plane(r, h * w).map_err(truncated)?;
    let im = read_plane(r, h * w).map_err(truncated)?;
    Ok(Some((ComplexImage::from_planes(h, w, &re, &im)?, tau)))
}

/// Serves requests with a local denoiser until the peer closes the stream.
///
/// Denoiser failures and non-finite inputs are answered with status 1 and
/// the loop continues; a framing error is answered once and ends the session.
pub fn serve<R: Read, W: Write>(reader: R, writer: W, denoiser: &dyn Denoiser, max_pixels: usize) -> Result<()> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    loop {
        let reply = match read_request(&mut reader) {
            Ok(None) => return Ok(()),
            Ok(Some((img, tau))) => {
                if img.len() > max_pixels {
                    encode_response_error(&format!("image of {} pixels exceeds limit of {max_pixels}", img.len()))
                } else if !img.is_finite() || !tau.is_finite() {
                    encode_response_error("request contains non-finite values")
                } else {
                    match denoiser.denoise(&img, tau) {
                        Ok(out) => encode_response_ok(&out),
                        Err(e) => encode_response_error(&e.to_string()),
                    }
                }
            }
            Err(e) => {
                writer.write_all(&encode_response_error(&e.to_string()))?;
                writer.flush()?;
                return Err(e);
            }
        };
        writer.write_all(&reply)?;
        writer.flush()?;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments; spoken to over stdin/stdout.
    Command(Vec<String>),
    /// Path of a listening Unix socket.
    Socket(PathBuf),
}

impl FromStr for Endpoint {
    type Err = Error;

    /// `unix:<path>` selects a socket; anything else is a whitespace-split command line.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("unix:") {
            return Ok(Endpoint::Socket(PathBuf::from(path)));
        }
        let parts: Vec<String> = s.split_whitespace().map(str::to_owned).collect();
        if parts.is_empty() {
            return Err(Error::invalid("empty denoiser endpoint"));
        }
        Ok(Endpoint::Command(parts))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Command(parts) => f.write_str(&parts.join(" ")),
            Endpoint::Socket(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    jobs: Sender<(usize, usize)>,
    results: Receiver<Result<ComplexImage>>,
    child: Option<Child>,
    #[cfg(unix)]
    socket: Option<std::os::unix::net::UnixStream>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self> {
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Command(parts) => {
                let mut child = Command::new(&parts[0])
                    .args(&parts[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::EndpointUnreachable(format!("{endpoint}: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdout), Box::new(stdin), Some(child))
            }
            #[cfg(unix)]
            Endpoint::Socket(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path)
                    .map_err(|e| Error::EndpointUnreachable(format!("{endpoint}: {e}")))?;
                let r = stream.try_clone()?;
                let w = stream.try_clone()?;
                let (jobs, results) = spawn_reader(Box::new(r));
                return Ok(Self {
                    writer: Box::new(w),
                    jobs,
                    results,
                    child: None,
                    socket: Some(stream),
                });
            }
            #[cfg(not(unix))]
            Endpoint::Socket(_) => {
                return Err(Error::EndpointUnreachable(
                    "unix sockets are unavailable on this platform".into(),
                ))
            }
        };
        let (jobs, results) = spawn_reader(reader);
        Ok(Self {
            writer,
            jobs,
            results,
            child,
            #[cfg(unix)]
            socket: None,
        })
    }

    fn round_trip(&mut self, r: &ComplexImage, tau: f64, timeout: Duration) -> Result<ComplexImage> {
        let lost = |e: &dyn fmt::Display| Error::EndpointUnreachable(format!("connection lost: {e}"));
        self.jobs.send(r.shape()).map_err(|e| lost(&e))?;
        self.writer
            .write_all(&encode_request(r, tau))
            .and_then(|_| self.writer.flush())
            .map_err(|e| lost(&e))?;
        match self.results.recv_timeout(timeout) {
            Ok(res) => res,
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(lost(&"reader stopped")),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        #[cfg(unix)]
        if let Some(s) = &self.socket {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn spawn_reader(reader: Box<dyn Read + Send>) -> (Sender<(usize, usize)>, Receiver<Result<ComplexImage>>) {
    let (job_tx, job_rx) = mpsc::channel::<(usize, usize)>();
    let (res_tx, res_rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        for shape in job_rx {
            let res = read_response(&mut reader, shape);
            let fatal = matches!(res, Err(Error::Protocol(_)) | Err(Error::Io(_)));
            if res_tx.send(res).is_err() || fatal {
                break;
            }
        }
    });
    (job_tx, res_rx)
}

/// Client for an external denoiser. The connection is opened lazily and
/// dropped after any transport or protocol failure; cloning yields a client
/// with its own, separate connection.
pub struct ExternalDenoiser {
    endpoint: Endpoint,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
}

impl Clone for ExternalDenoiser {
    fn clone(&self) -> Self {
        Self::new(self.endpoint.clone(), self.timeout)
    }
}

impl fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalDenoiser")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalDenoiser {
    pub fn new(endpoint: Endpoint, timeout: Duration) -> Self {
        Self {
            endpoint,
            timeout,
            conn: Mutex::new(None),
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Sends `(r, tau)` and waits for the denoised image.
    pub fn external_denoise(&self, r: &ComplexImage, tau: f64) -> Result<ComplexImage> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Connection::open(&self.endpoint)?);
        }
        let res = guard
            .as_mut()
            .expect("connection opened above")
            .round_trip(r, tau, self.timeout);
        match &res {
            Ok(_) | Err(Error::Server(_)) => {}
            Err(_) => *guard = None,
        }
        res
    }
}

impl Denoiser for ExternalDenoiser {
    fn denoise(&self, r: &ComplexImage, tau: f64) -> Result<ComplexImage> {
        let out = self.external_denoise(r, tau)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("external denoiser {}", self.endpoint)));
        }
        Ok(out)
    }
}
